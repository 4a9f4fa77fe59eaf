//! Time integration of the five solvers: explicit Euler for the deterministic
//! flows and Euler-Maruyama for the Langevin SDEs, under seeded noise.
//!
//! DSC and LCA run a nested loop (inner MAP inference, outer dictionary
//! update). SSC and the two LSC variants advance everything simultaneously by
//! `dt`, with fresh data presented every `tau_x` of simulation time.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::{
    self, Batch, Dictionary, EnergyBreakdown, LatentState, ModelParams,
};
use crate::noise::{stream, NoiseSource};

/// The five solver variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Dsc,
    Lca,
    Ssc,
    LscL1,
    LscL0,
}

impl SolverKind {
    /// DSC/LCA use nested-loop scheduling; the rest step simultaneously.
    pub fn is_nested(&self) -> bool {
        matches!(self, SolverKind::Dsc | SolverKind::Lca)
    }

    /// Solvers that sample the posterior rather than computing a MAP point.
    pub fn is_sampler(&self) -> bool {
        matches!(self, SolverKind::LscL1 | SolverKind::LscL0)
    }

    /// Solvers operating in the auxiliary-variable (L0) parameterization.
    pub fn is_l0(&self) -> bool {
        matches!(self, SolverKind::LscL0)
    }

    pub fn name(&self) -> &'static str {
        match self {
            SolverKind::Dsc => "dsc",
            SolverKind::Lca => "lca",
            SolverKind::Ssc => "ssc",
            SolverKind::LscL1 => "lsc",
            SolverKind::LscL0 => "l0lsc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dsc" => Ok(SolverKind::Dsc),
            "lca" => Ok(SolverKind::Lca),
            "ssc" => Ok(SolverKind::Ssc),
            "lsc" => Ok(SolverKind::LscL1),
            "l0lsc" => Ok(SolverKind::LscL0),
            other => Err(Error::Usage(format!(
                "unknown solver '{other}' (expected dsc, lca, ssc, lsc or l0lsc)"
            ))),
        }
    }
}

/// Which parameters evolve during a simultaneous run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LearnFlags {
    pub a: bool,
    pub u0: bool,
    pub sigma: bool,
    pub lambda: bool,
}

impl Default for LearnFlags {
    fn default() -> Self {
        LearnFlags { a: true, u0: false, sigma: false, lambda: false }
    }
}

impl LearnFlags {
    pub fn none() -> Self {
        LearnFlags { a: false, u0: false, sigma: false, lambda: false }
    }
}

/// Time-stamped snapshot of per-step quantities.
#[derive(Debug, Clone, Copy)]
pub struct StepReport {
    pub t: f64,
    pub energy: EnergyBreakdown,
    pub latent_update_norm: f64,
    pub dictionary_update_norm: f64,
}

/// Source of data batches, addressed by presentation index so that resumed
/// runs see the same stream.
pub trait DataSource {
    /// (data dimension D, batch size N)
    fn dims(&self) -> (usize, usize);
    fn batch(&self, index: u64) -> Batch;
}

/// One deterministic Euler step of the latent flow.
///
/// DSC/SSC: `S <- S - (dt/tau_s) grad_S E`. LCA: `U` integrates the leaky
/// competitive dynamics and `S = g(U)` with threshold lambda.
pub fn step_latents_ode(
    state: &LatentState,
    a: &Dictionary,
    x: &Array2<f64>,
    p: &ModelParams,
    kind: SolverKind,
) -> Result<LatentState> {
    let rate = p.dt / p.tau_s;
    match kind {
        SolverKind::Dsc | SolverKind::Ssc => {
            let g = model::grad_s_l1(a, &state.s.view(), &x.view(), p)?;
            let s = &state.s - &(g * rate);
            Ok(LatentState::from_s(s))
        }
        SolverKind::Lca => {
            // u_dot = -A^T (A s - x) / sigma^2 - (u - s), s = g(u)
            let resid = a.matrix().dot(&state.s) - x;
            let drive = a.matrix().t().dot(&resid) / (p.sigma * p.sigma);
            let leak = &state.u - &state.s;
            let u = &state.u - &((drive + leak) * rate);
            let s = model::threshold_g_lca_matrix(&u.view(), p.lambda);
            Ok(LatentState { u, s })
        }
        other => Err(Error::Usage(format!(
            "step_latents_ode expects dsc, ssc or lca, got {}",
            other.name()
        ))),
    }
}

/// One Euler-Maruyama step of the Langevin latent dynamics:
/// `U <- U - (dt/tau_s) grad E + sqrt(2 T dt / tau_s) Z`.
///
/// `l0` selects the auxiliary-variable energy with `S = f(|U|)`; otherwise the
/// L1 energy with `S = U`. At T = 0 this reduces bit-for-bit to the SSC ODE
/// step.
pub fn step_latents_langevin(
    state: &LatentState,
    a: &Dictionary,
    x: &Array2<f64>,
    p: &ModelParams,
    noise: &NoiseSource,
    step_index: u64,
    l0: bool,
) -> Result<LatentState> {
    let rate = p.dt / p.tau_s;
    let grad = if l0 {
        model::grad_u_l0(a, &state.u.view(), &x.view(), p)?
    } else {
        model::grad_s_l1(a, &state.s.view(), &x.view(), p)?
    };
    let mut u = if l0 { state.u.clone() } else { state.s.clone() };
    u.zip_mut_with(&grad, |ui, &gi| *ui -= rate * gi);
    if p.temperature > 0.0 {
        let amp = (2.0 * p.temperature * rate).sqrt();
        let z = noise.normal_matrix(stream::LATENT, step_index, u.nrows(), u.ncols());
        u.zip_mut_with(&z, |ui, &zi| *ui += amp * zi);
    }
    if l0 {
        Ok(LatentState::from_u(u, p.u0))
    } else {
        Ok(LatentState::from_s(u))
    }
}

/// One Euler step of the dictionary flow with the batch-mean convention:
/// `A <- A - (dt/tau_a) (A S - X) S^T / (N sigma^2)`.
pub fn step_dictionary(
    a: &Dictionary,
    state: &LatentState,
    x: &Array2<f64>,
    p: &ModelParams,
) -> Result<Dictionary> {
    let g = model::grad_a(a, &state.s.view(), &x.view(), p)?;
    let n = x.ncols() as f64;
    let updated = a.matrix() - &(g * (p.dt / (p.tau_a * n)));
    Dictionary::new(updated)
}

/// Latent initialization for the DSC/LCA inner loop.
#[derive(Debug, Clone)]
pub enum LatentInit {
    /// Standard MAP start.
    Zeros,
    /// Fixed coefficients; with `n_s = 0` this freezes the latents.
    Fixed(Array2<f64>),
}

/// Nested-loop schedule: `n_a` outer (dictionary) iterations, `n_s` inner
/// (latent) iterations per batch.
#[derive(Debug, Clone)]
pub struct DscSchedule {
    pub n_a: u64,
    pub n_s: u64,
    pub init: LatentInit,
    pub normalize: bool,
}

impl DscSchedule {
    pub fn new(n_a: u64, n_s: u64) -> Self {
        DscSchedule { n_a, n_s, init: LatentInit::Zeros, normalize: true }
    }
}

/// Nested-loop training (Alg. for DSC; `kind` may also be LCA, which only
/// changes the inner-loop dynamics). Returns the final dictionary and one
/// report per outer iteration.
pub fn run_dsc(
    data: &dyn DataSource,
    dict: Dictionary,
    p: &ModelParams,
    kind: SolverKind,
    schedule: &DscSchedule,
) -> Result<(Dictionary, Vec<StepReport>)> {
    if !kind.is_nested() {
        return Err(Error::Usage(format!(
            "run_dsc expects dsc or lca, got {}",
            kind.name()
        )));
    }
    let mut dict = dict;
    let (_, n) = data.dims();
    let k = dict.k();
    let mut reports = Vec::with_capacity(schedule.n_a as usize);
    for outer in 0..schedule.n_a {
        let batch = data.batch(outer);
        let mut state = match &schedule.init {
            LatentInit::Zeros => LatentState::from_s(Array2::zeros((k, n))),
            LatentInit::Fixed(s) => LatentState::from_s(s.clone()),
        };
        let mut latent_update_norm = 0.0;
        for _ in 0..schedule.n_s {
            let next = step_latents_ode(&state, &dict, &batch.x, p, kind)?;
            latent_update_norm = frob(&(&next.s - &state.s));
            state = next;
        }
        let prev = dict.matrix().clone();
        dict = step_dictionary(&dict, &state, &batch.x, p)?;
        if schedule.normalize {
            dict.normalize();
        }
        let dictionary_update_norm = frob(&(dict.matrix() - &prev));
        let energy = model::energy_l1(&dict, &state.s.view(), &batch.x.view(), p)?;
        reports.push(StepReport {
            t: (outer + 1) as f64,
            energy,
            latent_update_norm,
            dictionary_update_norm,
        });
    }
    Ok((dict, reports))
}

fn frob(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Options for the simultaneous engine.
#[derive(Debug, Clone)]
pub struct SimOptions {
    /// Column normalization after each dictionary step. Defaults to the
    /// solver's convention: on for SSC, off for LSC variants.
    pub normalize: Option<bool>,
    /// Keep latents across data presentations instead of re-initializing.
    pub warm_start: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { normalize: None, warm_start: false }
    }
}

/// Continuous-time engine advancing latents and enabled parameters by `dt`
/// per step, with a fresh batch presented every `tau_x`.
pub struct SimEngine<'a> {
    kind: SolverKind,
    params: ModelParams,
    dict: Dictionary,
    state: LatentState,
    batch: Batch,
    data: &'a dyn DataSource,
    noise: NoiseSource,
    learn: LearnFlags,
    normalize: bool,
    warm_start: bool,
    steps_per_batch: u64,
    step_index: u64,
    last_latent_update: f64,
    last_dict_update: f64,
}

impl<'a> SimEngine<'a> {
    pub fn new(
        data: &'a dyn DataSource,
        dict: Dictionary,
        params: ModelParams,
        kind: SolverKind,
        learn: LearnFlags,
        noise: NoiseSource,
        opts: SimOptions,
    ) -> Result<Self> {
        if kind.is_nested() {
            return Err(Error::Usage(format!(
                "simultaneous engine expects ssc, lsc or l0lsc, got {}",
                kind.name()
            )));
        }
        params.validate()?;
        let normalize = opts.normalize.unwrap_or(kind == SolverKind::Ssc);
        let steps_per_batch = (params.tau_x / params.dt).round().max(1.0) as u64;
        let (_, n) = data.dims();
        let k = dict.k();
        let mut engine = SimEngine {
            kind,
            params,
            dict,
            state: LatentState::from_s(Array2::zeros((k, n))),
            batch: data.batch(0),
            data,
            noise,
            learn,
            normalize,
            warm_start: opts.warm_start,
            steps_per_batch,
            step_index: 0,
            last_latent_update: 0.0,
            last_dict_update: 0.0,
        };
        engine.init_latents(0);
        Ok(engine)
    }

    fn init_latents(&mut self, presentation: u64) {
        let (_, n) = self.data.dims();
        let k = self.dict.k();
        if self.kind.is_sampler() {
            let u = self.noise.normal_matrix(stream::LATENT_INIT, presentation, k, n);
            self.state = if self.kind.is_l0() {
                LatentState::from_u(u, self.params.u0)
            } else {
                LatentState::from_s(u)
            };
        } else {
            self.state = LatentState::from_s(Array2::zeros((k, n)));
        }
    }

    /// Restore internal counters and state from a snapshot.
    pub fn restore(
        &mut self,
        step_index: u64,
        dict: Dictionary,
        state: LatentState,
        params: ModelParams,
    ) {
        self.step_index = step_index;
        self.dict = dict;
        self.state = state;
        self.params = params;
        let presentation = step_index / self.steps_per_batch;
        self.batch = self.data.batch(presentation);
    }

    pub fn step_index(&self) -> u64 {
        self.step_index
    }

    pub fn t(&self) -> f64 {
        self.step_index as f64 * self.params.dt
    }

    pub fn dict(&self) -> &Dictionary {
        &self.dict
    }

    pub fn state(&self) -> &LatentState {
        &self.state
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn batch(&self) -> &Batch {
        &self.batch
    }

    pub fn kind(&self) -> SolverKind {
        self.kind
    }

    /// Advance the whole system by one `dt`.
    pub fn step(&mut self) -> Result<()> {
        if self.step_index % self.steps_per_batch == 0 {
            let presentation = self.step_index / self.steps_per_batch;
            self.batch = self.data.batch(presentation);
            if !(self.warm_start && self.step_index > 0) {
                self.init_latents(presentation);
            }
        }
        let p = &self.params;
        let next = match self.kind {
            SolverKind::Ssc => {
                step_latents_ode(&self.state, &self.dict, &self.batch.x, p, SolverKind::Ssc)?
            }
            SolverKind::LscL1 | SolverKind::LscL0 => step_latents_langevin(
                &self.state,
                &self.dict,
                &self.batch.x,
                p,
                &self.noise,
                self.step_index,
                self.kind.is_l0(),
            )?,
            _ => unreachable!(),
        };
        self.last_latent_update = frob(&(&next.s - &self.state.s));
        self.state = next;

        if self.learn.a {
            let prev = self.dict.matrix().clone();
            self.dict = step_dictionary(&self.dict, &self.state, &self.batch.x, &self.params)?;
            if self.normalize {
                self.dict.normalize();
            }
            self.last_dict_update = frob(&(self.dict.matrix() - &prev));
        } else {
            self.last_dict_update = 0.0;
        }

        if self.learn.u0 && self.kind.is_l0() {
            let g = model::grad_u0(
                &self.dict,
                &self.state.s.view(),
                &self.batch.x.view(),
                &self.params,
            )?;
            let p = &mut self.params;
            p.u0 = (p.u0 + p.dt / p.tau_u0 * g).max(0.0);
        }
        if self.learn.sigma {
            let g = model::grad_sigma(
                &self.dict,
                &self.state.s.view(),
                &self.batch.x.view(),
                &self.params,
            )?;
            let p = &mut self.params;
            p.sigma = (p.sigma + p.dt / p.tau_a * g).max(1e-6);
        }
        if self.learn.lambda {
            let g = model::grad_lambda_l1(&self.state.s.view(), &self.params)?;
            let p = &mut self.params;
            p.lambda = (p.lambda + p.dt / p.tau_a * g).max(1e-6);
        }

        self.step_index += 1;
        Ok(())
    }

    /// Energy and update norms at the current state.
    pub fn report(&self) -> Result<StepReport> {
        let energy = if self.kind.is_l0() {
            model::energy_l0(&self.dict, &self.state.u.view(), &self.batch.x.view(), &self.params)?
        } else {
            model::energy_l1(&self.dict, &self.state.s.view(), &self.batch.x.view(), &self.params)?
        };
        Ok(StepReport {
            t: self.t(),
            energy,
            latent_update_norm: self.last_latent_update,
            dictionary_update_norm: self.last_dict_update,
        })
    }

    /// First non-finite tensor in the live state, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        if !self.state.u.iter().all(|v| v.is_finite()) {
            Some("U")
        } else if !self.state.s.iter().all(|v| v.is_finite()) {
            Some("S")
        } else if !self.dict.matrix().iter().all(|v| v.is_finite()) {
            Some("A")
        } else if !(self.params.u0.is_finite()
            && self.params.sigma.is_finite()
            && self.params.lambda.is_finite())
        {
            Some("params")
        } else {
            None
        }
    }
}

/// Run a simultaneous solver until `t_max`, reporting every `report_every`
/// steps. Returns the final dictionary, (possibly adapted) parameters and the
/// collected reports.
pub fn run_simultaneous(
    data: &dyn DataSource,
    dict: Dictionary,
    params: ModelParams,
    kind: SolverKind,
    t_max: f64,
    learn: LearnFlags,
    noise: NoiseSource,
    opts: SimOptions,
    report_every: u64,
) -> Result<(Dictionary, ModelParams, Vec<StepReport>)> {
    if t_max <= 0.0 {
        return Err(Error::Usage(format!("t_max must be positive, got {t_max}")));
    }
    let dt = params.dt;
    let mut engine = SimEngine::new(data, dict, params, kind, learn, noise, opts)?;
    let total_steps = (t_max / dt).round() as u64;
    let mut reports = Vec::new();
    for i in 0..total_steps {
        engine.step()?;
        if report_every > 0 && (i + 1) % report_every == 0 {
            reports.push(engine.report()?);
        }
    }
    let SimEngine { dict, params, .. } = engine;
    Ok((dict, params, reports))
}
