//! Training orchestration on top of the dynamics engine: trace recording,
//! latent-sample reservoirs, snapshots, and the sweep experiments.

use ndarray::Array2;
use rand::Rng;

use crate::data::BarsSource;
use crate::dynamics::{
    run_dsc, DataSource, DscSchedule, LearnFlags, SimEngine, SimOptions, SolverKind,
};
use crate::error::{Error, Result};
use crate::metrics;
use crate::model::{Dictionary, LatentState, ModelParams};
use crate::noise::{stream, NoiseSource};

/// Default reservoir cap, in scalars.
pub const RESERVOIR_CAP: usize = 1_000_000;
/// Burn-in before reservoir sampling, per data presentation, in units of tau_s.
pub const RESERVOIR_BURN_IN_TAU: f64 = 5.0;

/// Dictionary initialization.
#[derive(Debug, Clone)]
pub enum DictInit {
    /// i.i.d. N(0, 1/D) entries, columns normalized once.
    Random,
    /// Fixed starting point (e.g. the generating dictionary).
    Fixed(Dictionary),
}

/// Full training configuration.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub solver: SolverKind,
    pub params: ModelParams,
    pub learn: LearnFlags,
    /// Simulation horizon for simultaneous solvers (time units).
    pub t_max: f64,
    /// Outer / inner iteration counts for nested solvers.
    pub n_a: u64,
    pub n_s: u64,
    pub batch_size: usize,
    /// Number of dictionary columns.
    pub dict_k: usize,
    pub seed: u64,
    /// Trace recording period (time units; outer iterations for nested
    /// solvers). Must be a positive multiple of dt.
    pub eval_period: f64,
    /// Snapshot period in the same units; 0 disables snapshots.
    pub snapshot_period: f64,
    pub normalize: Option<bool>,
    pub warm_start: bool,
    pub init_dict: DictInit,
}

impl TrainConfig {
    pub fn new(solver: SolverKind, dict_k: usize, batch_size: usize) -> Self {
        TrainConfig {
            solver,
            params: ModelParams::default(),
            learn: LearnFlags::default(),
            t_max: 1000.0,
            n_a: 300,
            n_s: 100,
            batch_size,
            dict_k,
            seed: 0,
            eval_period: 1.0,
            snapshot_period: 0.0,
            normalize: None,
            warm_start: false,
            init_dict: DictInit::Random,
        }
    }

    fn check_period(&self, name: &str, period: f64, allow_zero: bool) -> Result<()> {
        if period == 0.0 && allow_zero {
            return Ok(());
        }
        if period <= 0.0 {
            return Err(Error::Config(format!("{name} must be positive, got {period}")));
        }
        if !self.solver.is_nested() {
            let ratio = period / self.params.dt;
            if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) || ratio < 0.5 {
                return Err(Error::Config(format!(
                    "{name} ({period}) must be a positive multiple of dt ({})",
                    self.params.dt
                )));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<Vec<String>> {
        let warnings = self.params.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.dict_k == 0 {
            return Err(Error::Config("dictionary must have at least one column".into()));
        }
        self.check_period("eval-period", self.eval_period, false)?;
        self.check_period("snapshot-period", self.snapshot_period, true)?;
        Ok(warnings)
    }
}

/// One row of the metric trace.
#[derive(Debug, Clone, Copy)]
pub struct TraceRecord {
    pub t: f64,
    pub energy_recon: f64,
    pub energy_sparse: f64,
    pub nl_mse: f64,
    pub mean_cosine: Option<f64>,
    pub pi_hat: f64,
    pub u0: f64,
    pub sigma: f64,
    pub lambda: f64,
    pub norm_min: f64,
    pub norm_median: f64,
    pub norm_max: f64,
}

/// Fixed trace CSV column order; external plotting relies on it.
pub const TRACE_HEADER: &str = "t,energy_recon,energy_sparse,nl_mse,mean_cosine,pi_hat,u0,\
                                sigma,lambda,norm_min,norm_median,norm_max";

/// One CSV row in the canonical column order; mean_cosine is empty when no
/// ground-truth dictionary is known.
pub fn trace_csv_row(r: &TraceRecord) -> String {
    let cosine = match r.mean_cosine {
        Some(c) => c.to_string(),
        None => String::new(),
    };
    format!(
        "{},{},{},{},{cosine},{},{},{},{},{},{},{}",
        r.t,
        r.energy_recon,
        r.energy_sparse,
        r.nl_mse,
        r.pi_hat,
        r.u0,
        r.sigma,
        r.lambda,
        r.norm_min,
        r.norm_median,
        r.norm_max
    )
}

/// Full trace CSV including the header line.
pub fn trace_csv(records: &[TraceRecord]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&trace_csv_row(r));
        out.push('\n');
    }
    out
}

/// Everything a finished (or interrupted) run produces.
#[derive(Debug, Clone)]
pub struct RunArtifact {
    pub dictionary: Dictionary,
    pub params: ModelParams,
    pub traces: Vec<TraceRecord>,
    /// Thinned coefficient samples (samplers) or MAP coefficients (nested
    /// solvers), capped at RESERVOIR_CAP scalars.
    pub reservoir: Vec<f64>,
}

fn norm_stats(dict: &Dictionary) -> (f64, f64, f64) {
    let mut norms = dict.column_norms();
    norms.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = norms.len();
    (norms[0], norms[n / 2], norms[n - 1])
}

fn init_dictionary(cfg: &TrainConfig, d: usize) -> Result<Dictionary> {
    match &cfg.init_dict {
        DictInit::Fixed(dict) => {
            if dict.d() != d {
                return Err(Error::Config(format!(
                    "initial dictionary dimension {} does not match data dimension {d}",
                    dict.d()
                )));
            }
            Ok(dict.clone())
        }
        DictInit::Random => {
            let ns = NoiseSource::new(cfg.seed);
            let scale = 1.0 / (d as f64).sqrt();
            let mut m = ns.normal_matrix(stream::DICT_INIT, 0, d, cfg.dict_k);
            m.mapv_inplace(|v| v * scale);
            let mut dict = Dictionary::new(m)?;
            dict.normalize();
            Ok(dict)
        }
    }
}

/// Capped uniform reservoir over scalar coefficients, with replacement draws
/// keyed by absolute step so resumed runs reproduce it exactly.
#[derive(Debug, Clone)]
pub struct Reservoir {
    pub samples: Vec<f64>,
    pub seen: u64,
    cap: usize,
}

impl Reservoir {
    pub fn new(cap: usize) -> Self {
        Reservoir { samples: Vec::new(), seen: 0, cap }
    }

    pub fn restore(samples: Vec<f64>, seen: u64, cap: usize) -> Self {
        Reservoir { samples, seen, cap }
    }

    fn absorb(&mut self, values: &Array2<f64>, noise: &NoiseSource, step: u64) {
        let mut rng = noise.rng(stream::RESERVOIR, step);
        for &v in values.iter() {
            self.seen += 1;
            if self.samples.len() < self.cap {
                self.samples.push(v);
            } else {
                let j = rng.gen_range(0..self.seen);
                if (j as usize) < self.cap {
                    self.samples[j as usize] = v;
                }
            }
        }
    }
}

/// Stepwise trainer driving either the nested loop or the simultaneous
/// engine, so callers can snapshot and resume at tick granularity.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    data: &'a dyn DataSource,
    truth: Option<&'a Dictionary>,
    // nested-solver state
    nested_dict: Option<Dictionary>,
    nested_iter: u64,
    // simultaneous-solver state
    engine: Option<SimEngine<'a>>,
    pub traces: Vec<TraceRecord>,
    pub reservoir: Reservoir,
    noise: NoiseSource,
    eval_every: u64,
}

impl<'a> Trainer<'a> {
    pub fn new(
        cfg: TrainConfig,
        data: &'a dyn DataSource,
        truth: Option<&'a Dictionary>,
    ) -> Result<Self> {
        cfg.validate()?;
        let (d, _) = data.dims();
        let dict = init_dictionary(&cfg, d)?;
        let noise = NoiseSource::new(cfg.seed);
        let eval_every = if cfg.solver.is_nested() {
            cfg.eval_period.round().max(1.0) as u64
        } else {
            (cfg.eval_period / cfg.params.dt).round() as u64
        };
        let mut trainer = Trainer {
            data,
            truth,
            nested_dict: None,
            nested_iter: 0,
            engine: None,
            traces: Vec::new(),
            reservoir: Reservoir::new(RESERVOIR_CAP),
            noise,
            eval_every,
            cfg,
        };
        if trainer.cfg.solver.is_nested() {
            trainer.nested_dict = Some(dict);
        } else {
            trainer.engine = Some(SimEngine::new(
                data,
                dict,
                trainer.cfg.params.clone(),
                trainer.cfg.solver,
                trainer.cfg.learn,
                noise,
                SimOptions {
                    normalize: trainer.cfg.normalize,
                    warm_start: trainer.cfg.warm_start,
                },
            )?);
        }
        Ok(trainer)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Current tick: outer iteration (nested) or dt step (simultaneous).
    pub fn tick_index(&self) -> u64 {
        match &self.engine {
            Some(e) => e.step_index(),
            None => self.nested_iter,
        }
    }

    pub fn total_ticks(&self) -> u64 {
        if self.cfg.solver.is_nested() {
            self.cfg.n_a
        } else {
            (self.cfg.t_max / self.cfg.params.dt).round() as u64
        }
    }

    pub fn t(&self) -> f64 {
        match &self.engine {
            Some(e) => e.t(),
            None => self.nested_iter as f64,
        }
    }

    pub fn dictionary(&self) -> &Dictionary {
        match &self.engine {
            Some(e) => e.dict(),
            None => self.nested_dict.as_ref().expect("nested dict"),
        }
    }

    pub fn params(&self) -> ModelParams {
        match &self.engine {
            Some(e) => e.params().clone(),
            None => self.cfg.params.clone(),
        }
    }

    pub fn latent_state(&self) -> Option<&LatentState> {
        self.engine.as_ref().map(|e| e.state())
    }

    /// Restore simultaneous-engine state from a snapshot.
    pub fn restore(
        &mut self,
        tick: u64,
        dict: Dictionary,
        state: Option<LatentState>,
        params: ModelParams,
        reservoir: Reservoir,
        traces: Vec<TraceRecord>,
    ) -> Result<()> {
        self.reservoir = reservoir;
        self.traces = traces;
        match (&mut self.engine, state) {
            (Some(engine), Some(state)) => {
                engine.restore(tick, dict, state, params);
            }
            (Some(_), None) => {
                return Err(Error::Usage("snapshot is missing latent state".into()));
            }
            (None, _) => {
                self.nested_dict = Some(dict);
                self.nested_iter = tick;
                self.cfg.params = params;
            }
        }
        Ok(())
    }

    fn record_trace(&mut self) -> Result<()> {
        let record = match &self.engine {
            Some(engine) => {
                let report = engine.report()?;
                let dict = engine.dict();
                let p = engine.params();
                let s = &engine.state().s;
                let x = &engine.batch().x;
                let pi_hat = if self.cfg.solver.is_l0() {
                    (-p.lambda * p.u0).exp()
                } else {
                    metrics::activity_estimate(s.as_slice().unwrap_or(&[]))
                };
                let (norm_min, norm_median, norm_max) = norm_stats(dict);
                TraceRecord {
                    t: engine.t(),
                    energy_recon: report.energy.recon,
                    energy_sparse: report.energy.sparsity,
                    nl_mse: metrics::nl_mse(dict, &s.view(), &x.view())?,
                    mean_cosine: match self.truth {
                        Some(truth) => {
                            Some(metrics::dictionary_recovery(dict, truth)?.mean_best_cosine)
                        }
                        None => None,
                    },
                    pi_hat,
                    u0: p.u0,
                    sigma: p.sigma,
                    lambda: p.lambda,
                    norm_min,
                    norm_median,
                    norm_max,
                }
            }
            None => unreachable!("nested trace is recorded inline"),
        };
        self.traces.push(record);
        Ok(())
    }

    /// Advance one tick. Returns false when the run is complete.
    pub fn tick(&mut self) -> Result<bool> {
        if self.tick_index() >= self.total_ticks() {
            return Ok(false);
        }
        let total = self.total_ticks();
        if self.engine.is_some() {
            let (done_step, bad) = {
                let engine = self.engine.as_mut().unwrap();
                let step = engine.step_index();
                engine.step()?;
                // reservoir: thin every tau_s after per-presentation burn-in
                if self.cfg.solver.is_sampler() {
                    let p = engine.params();
                    let steps_per_batch = (p.tau_x / p.dt).round().max(1.0) as u64;
                    let steps_per_tau = (p.tau_s / p.dt).round().max(1.0) as u64;
                    let burn_in = (RESERVOIR_BURN_IN_TAU * p.tau_s / p.dt).round() as u64;
                    let local = step % steps_per_batch;
                    if local >= burn_in && (local - burn_in) % steps_per_tau == 0 {
                        let s = engine.state().s.clone();
                        self.reservoir.absorb(&s, &self.noise, step);
                    }
                }
                (engine.step_index(), engine.first_non_finite())
            };
            if done_step % self.eval_every == 0 || done_step == total {
                if let Some(tensor) = bad {
                    return Err(Error::Numeric(format!(
                        "non-finite values in {tensor} at step {done_step}"
                    )));
                }
                self.record_trace()?;
            }
        } else {
            self.nested_tick()?;
        }
        Ok(true)
    }

    fn nested_tick(&mut self) -> Result<()> {
        let outer = self.nested_iter;
        let dict = self.nested_dict.take().expect("nested dict");
        let schedule = DscSchedule {
            n_a: 1,
            n_s: self.cfg.n_s,
            init: crate::dynamics::LatentInit::Zeros,
            normalize: self.cfg.normalize.unwrap_or(true),
        };
        // run exactly one outer iteration against the batch at this index
        let shifted = ShiftedSource { inner: self.data, offset: outer };
        let (dict, reports) =
            run_dsc(&shifted, dict, &self.cfg.params, self.cfg.solver, &schedule)?;
        let report = reports.into_iter().next().expect("one outer iteration");
        // MAP coefficients feed the reservoir so distribution metrics can
        // compare against samplers
        let batch = self.data.batch(outer);
        let state = self.map_inference(&dict, &batch.x)?;
        self.reservoir.absorb(&state.s, &self.noise, outer);
        self.nested_iter += 1;
        self.nested_dict = Some(dict);

        if self.nested_iter % self.eval_every == 0 || self.nested_iter == self.cfg.n_a {
            let dict = self.nested_dict.as_ref().unwrap();
            if !dict.matrix().iter().all(|v| v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite values in A at step {}",
                    self.nested_iter
                )));
            }
            let p = &self.cfg.params;
            let (norm_min, norm_median, norm_max) = norm_stats(dict);
            let record = TraceRecord {
                t: self.nested_iter as f64,
                energy_recon: report.energy.recon,
                energy_sparse: report.energy.sparsity,
                nl_mse: metrics::nl_mse(dict, &state.s.view(), &batch.x.view())?,
                mean_cosine: match self.truth {
                    Some(truth) => {
                        Some(metrics::dictionary_recovery(dict, truth)?.mean_best_cosine)
                    }
                    None => None,
                },
                pi_hat: metrics::activity_estimate(
                    state.s.as_slice().unwrap_or(&[]),
                ),
                u0: p.u0,
                sigma: p.sigma,
                lambda: p.lambda,
                norm_min,
                norm_median,
                norm_max,
            };
            self.traces.push(record);
        }
        Ok(())
    }

    /// Inner-loop MAP inference with the current solver's dynamics.
    pub fn map_inference(&self, dict: &Dictionary, x: &Array2<f64>) -> Result<LatentState> {
        let mut state = LatentState::from_s(Array2::zeros((dict.k(), x.ncols())));
        for _ in 0..self.cfg.n_s {
            state = crate::dynamics::step_latents_ode(
                &state,
                dict,
                x,
                &self.cfg.params,
                self.cfg.solver,
            )?;
        }
        Ok(state)
    }

    pub fn into_artifact(self) -> RunArtifact {
        let (dictionary, params) = match self.engine {
            Some(engine) => (engine.dict().clone(), engine.params().clone()),
            None => (self.nested_dict.expect("nested dict"), self.cfg.params.clone()),
        };
        RunArtifact { dictionary, params, traces: self.traces, reservoir: self.reservoir.samples }
    }
}

/// Wraps a data source so that batch 0 maps to a given offset.
struct ShiftedSource<'a> {
    inner: &'a dyn DataSource,
    offset: u64,
}

impl DataSource for ShiftedSource<'_> {
    fn dims(&self) -> (usize, usize) {
        self.inner.dims()
    }
    fn batch(&self, index: u64) -> crate::model::Batch {
        self.inner.batch(self.offset + index)
    }
}

/// Run a configuration to completion.
pub fn train(
    cfg: TrainConfig,
    data: &dyn DataSource,
    truth: Option<&Dictionary>,
) -> Result<RunArtifact> {
    let mut trainer = Trainer::new(cfg, data, truth)?;
    while trainer.tick()? {}
    Ok(trainer.into_artifact())
}

/// Which parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParameter {
    Lambda,
    U0,
    Overcompleteness,
}

impl SweepParameter {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(SweepParameter::Lambda),
            "u0" => Ok(SweepParameter::U0),
            "overcompleteness" => Ok(SweepParameter::Overcompleteness),
            other => Err(Error::Usage(format!(
                "unknown sweep parameter '{other}' (expected lambda, u0 or overcompleteness)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SweepParameter::Lambda => "lambda",
            SweepParameter::U0 => "u0",
            SweepParameter::Overcompleteness => "overcompleteness",
        }
    }
}

/// A one-dimensional parameter sweep over a training configuration.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub grid: Vec<f64>,
    pub base: TrainConfig,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Config("sweep grid must be non-empty".into()));
        }
        let increasing = self.grid.windows(2).all(|w| w[1] > w[0]);
        let decreasing = self.grid.windows(2).all(|w| w[1] < w[0]);
        if self.grid.len() > 1 && !increasing && !decreasing {
            return Err(Error::Config("sweep grid must be strictly monotone".into()));
        }
        Ok(())
    }
}

/// One row of the lambda-activity table.
#[derive(Debug, Clone, Copy)]
pub struct LambdaActivityRow {
    pub lambda: f64,
    pub activity: f64,
}

/// Outcome of a lambda sweep: the measured L0 activity per lambda plus a
/// monotonicity report.
#[derive(Debug, Clone)]
pub struct LambdaSweep {
    pub rows: Vec<LambdaActivityRow>,
    /// Grid-adjacent increases beyond estimator noise (+-0.01).
    pub monotonicity_violations: usize,
}

/// Train a MAP solver (DSC or LCA) at each lambda and measure the fraction of
/// strictly nonzero inferred coefficients on held-out batches.
pub fn sweep_lambda_vs_pi(
    spec: &SweepSpec,
    data: &dyn DataSource,
    holdout_batches: u64,
) -> Result<LambdaSweep> {
    spec.validate()?;
    if spec.parameter != SweepParameter::Lambda {
        return Err(Error::Usage("lambda sweep requires parameter = lambda".into()));
    }
    if !spec.base.solver.is_nested() {
        return Err(Error::Usage("lambda sweep requires a MAP solver (dsc or lca)".into()));
    }
    let mut rows = Vec::with_capacity(spec.grid.len());
    for &lambda in &spec.grid {
        let mut cfg = spec.base.clone();
        cfg.params.lambda = lambda;
        let trainer = {
            let mut t = Trainer::new(cfg.clone(), data, None)?;
            while t.tick()? {}
            t
        };
        let dict = trainer.dictionary().clone();
        // measure activity on batches past the training stream
        let mut samples = Vec::new();
        for h in 0..holdout_batches {
            let batch = data.batch(cfg.n_a + h);
            let state = trainer.map_inference(&dict, &batch.x)?;
            samples.extend(state.s.iter().copied());
        }
        rows.push(LambdaActivityRow { lambda, activity: metrics::activity_estimate(&samples) });
    }
    let ordered: Vec<&LambdaActivityRow> = if spec.grid.windows(2).all(|w| w[1] > w[0]) {
        rows.iter().collect()
    } else {
        rows.iter().rev().collect()
    };
    let monotonicity_violations = ordered
        .windows(2)
        .filter(|w| w[1].activity > w[0].activity + 0.01)
        .count();
    Ok(LambdaSweep { rows, monotonicity_violations })
}

/// Mean over the final 10% of a trace series plus its 10-90 percentile spread.
pub fn converged_stat(values: &[f64]) -> (f64, f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let start = values.len() - (values.len() / 10).max(1);
    let mut tail: Vec<f64> = values[start..].to_vec();
    tail.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    let q = |f: f64| tail[((tail.len() - 1) as f64 * f).round() as usize];
    (mean, q(0.1), q(0.9))
}

/// One row of the overcompleteness table.
#[derive(Debug, Clone, Copy)]
pub struct OvercompletenessRow {
    pub omega: f64,
    pub pi_hat: f64,
    pub pi_lo: f64,
    pub pi_hi: f64,
    /// Mean active count pi_hat * Omega * D.
    pub active_count: f64,
}

/// Train L0-LSC with threshold learning at each overcompleteness and report
/// the converged activation probability.
pub fn sweep_overcompleteness(
    spec: &SweepSpec,
    make_source: &dyn Fn() -> Result<BarsSource>,
) -> Result<Vec<OvercompletenessRow>> {
    spec.validate()?;
    if spec.parameter != SweepParameter::Overcompleteness {
        return Err(Error::Usage(
            "overcompleteness sweep requires parameter = overcompleteness".into(),
        ));
    }
    if spec.base.solver != SolverKind::LscL0 || !spec.base.learn.u0 {
        return Err(Error::Usage(
            "overcompleteness sweep requires l0lsc with threshold learning enabled".into(),
        ));
    }
    let mut rows = Vec::with_capacity(spec.grid.len());
    for &omega in &spec.grid {
        let source = make_source()?;
        let (d, _) = source.dims();
        let mut cfg = spec.base.clone();
        cfg.dict_k = (omega * d as f64).round() as usize;
        let artifact = train(cfg.clone(), &source, None)?;
        let pis: Vec<f64> = artifact.traces.iter().map(|r| r.pi_hat).collect();
        let (pi_hat, pi_lo, pi_hi) = converged_stat(&pis);
        rows.push(OvercompletenessRow {
            omega,
            pi_hat,
            pi_lo,
            pi_hi,
            active_count: pi_hat * omega * d as f64,
        });
    }
    Ok(rows)
}
