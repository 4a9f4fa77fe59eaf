//! Training-run orchestration for the CLI: data/source resolution, snapshot
//! persistence, resume, and manifest writing.

use std::path::{Path, PathBuf};

use ndarray::Array2;

use lsc_core::config::{RunManifest, TrainSettings};
use lsc_core::data::{BarsSource, PatchSource};
use lsc_core::dynamics::DataSource;
use lsc_core::error::Error;
use lsc_core::learning::{
    self, converged_stat, DictInit, Reservoir, TraceRecord, TrainConfig, Trainer, RESERVOIR_CAP,
};
use lsc_core::metrics;
use lsc_core::model::{Dictionary, LatentState, ModelParams};
use lsc_core::tensor;

use crate::parse_bars_directive;

/// Canonical file names inside a run directory.
pub struct RunPaths {
    pub trace: PathBuf,
    pub dictionary: PathBuf,
    pub reservoir: PathBuf,
    pub manifest: PathBuf,
}

impl RunPaths {
    pub fn new(out: &Path) -> Self {
        RunPaths {
            trace: out.join("trace.csv"),
            dictionary: out.join("dictionary.lsct"),
            reservoir: out.join("reservoir.lsct"),
            manifest: out.join("manifest.kv"),
        }
    }
}

enum Source {
    Bars(BarsSource),
    Patch(PatchSource),
}

impl Source {
    fn as_dyn(&self) -> &dyn DataSource {
        match self {
            Source::Bars(s) => s,
            Source::Patch(s) => s,
        }
    }
}

fn resolve_source(settings: &TrainSettings) -> Result<(Source, Option<Dictionary>, String), Error> {
    if settings.data.starts_with("bars:") || settings.data == "bars" {
        let directive = if settings.data == "bars" { "bars:" } else { &settings.data };
        let spec = parse_bars_directive(directive)?;
        let source = BarsSource::new(spec, settings.batch_size)?;
        let truth = source.truth().clone();
        let hash = format!("{:08x}", tensor::crc32(settings.data.as_bytes()));
        Ok((Source::Bars(source), Some(truth), hash))
    } else {
        let path = Path::new(&settings.data);
        let bytes = std::fs::read(path)?;
        let hash = format!("{:08x}", tensor::crc32(&bytes));
        let source = PatchSource::from_file(path, settings.batch_size, settings.seed)?;
        Ok((Source::Patch(source), None, hash))
    }
}

fn resolve_init(settings: &TrainSettings, truth: Option<&Dictionary>) -> Result<DictInit, Error> {
    match settings.init_dict.as_str() {
        "random" => Ok(DictInit::Random),
        "truth" => match truth {
            Some(t) => Ok(DictInit::Fixed(t.clone())),
            None => Err(Error::Usage(
                "init_dict=truth is only available for bars data".into(),
            )),
        },
        path => Ok(DictInit::Fixed(Dictionary::new(tensor::read_matrix(
            Path::new(path),
        )?)?)),
    }
}

/// Encode the trace table as a dense f64 matrix (missing cosine -> NaN) so a
/// snapshot round-trip is bit-exact.
fn traces_to_matrix(traces: &[TraceRecord]) -> Array2<f64> {
    let mut m = Array2::zeros((traces.len(), 12));
    for (i, r) in traces.iter().enumerate() {
        for (j, v) in [
            r.t,
            r.energy_recon,
            r.energy_sparse,
            r.nl_mse,
            r.mean_cosine.unwrap_or(f64::NAN),
            r.pi_hat,
            r.u0,
            r.sigma,
            r.lambda,
            r.norm_min,
            r.norm_median,
            r.norm_max,
        ]
        .iter()
        .enumerate()
        {
            m[[i, j]] = *v;
        }
    }
    m
}

fn matrix_to_traces(m: &Array2<f64>) -> Vec<TraceRecord> {
    m.rows()
        .into_iter()
        .map(|r| TraceRecord {
            t: r[0],
            energy_recon: r[1],
            energy_sparse: r[2],
            nl_mse: r[3],
            mean_cosine: if r[4].is_nan() { None } else { Some(r[4]) },
            pi_hat: r[5],
            u0: r[6],
            sigma: r[7],
            lambda: r[8],
            norm_min: r[9],
            norm_median: r[10],
            norm_max: r[11],
        })
        .collect()
}

/// In-memory image of a snapshot directory.
pub struct Snapshot {
    pub tick: u64,
    pub dict: Dictionary,
    pub state: Option<LatentState>,
    pub u0: f64,
    pub sigma: f64,
    pub lambda: f64,
    pub reservoir: Reservoir,
    pub traces: Vec<TraceRecord>,
}

fn write_snapshot(dir: &Path, trainer: &Trainer) -> Result<(), Error> {
    std::fs::create_dir_all(dir)?;
    tensor::write_matrix_f64(&dir.join("dict.lsct"), trainer.dictionary().matrix())?;
    if let Some(state) = trainer.latent_state() {
        tensor::write_matrix_f64(&dir.join("u.lsct"), &state.u)?;
        tensor::write_matrix_f64(&dir.join("s.lsct"), &state.s)?;
    }
    let res = &trainer.reservoir;
    let res_matrix =
        Array2::from_shape_vec((1, res.samples.len()), res.samples.clone()).expect("1 x n");
    tensor::write_matrix_f64(&dir.join("reservoir.lsct"), &res_matrix)?;
    tensor::write_matrix_f64(&dir.join("traces.lsct"), &traces_to_matrix(&trainer.traces))?;
    let p = trainer.params();
    let state_kv = lsc_core::config::serialize_kv(&[
        ("tick".into(), trainer.tick_index().to_string()),
        ("u0".into(), format!("{:?}", p.u0)),
        ("sigma".into(), format!("{:?}", p.sigma)),
        ("lambda".into(), format!("{:?}", p.lambda)),
        ("reservoir_seen".into(), res.seen.to_string()),
    ]);
    std::fs::write(dir.join("state.kv"), state_kv)?;
    Ok(())
}

pub fn load_snapshot(dir: &Path) -> Result<Snapshot, Error> {
    let kv = lsc_core::config::parse_kv(&std::fs::read_to_string(dir.join("state.kv"))?)?;
    let get = |key: &str| -> Result<String, Error> {
        kv.iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| Error::Format(format!("snapshot state.kv is missing '{key}'")))
    };
    let parse_f = |key: &str| -> Result<f64, Error> {
        get(key)?
            .parse()
            .map_err(|_| Error::Format(format!("snapshot state.kv has a bad '{key}'")))
    };
    let tick: u64 = get("tick")?
        .parse()
        .map_err(|_| Error::Format("snapshot state.kv has a bad 'tick'".into()))?;
    let seen: u64 = get("reservoir_seen")?
        .parse()
        .map_err(|_| Error::Format("snapshot state.kv has a bad 'reservoir_seen'".into()))?;
    let dict = Dictionary::new(tensor::read_matrix(&dir.join("dict.lsct"))?)?;
    let state = if dir.join("u.lsct").exists() {
        Some(LatentState {
            u: tensor::read_matrix(&dir.join("u.lsct"))?,
            s: tensor::read_matrix(&dir.join("s.lsct"))?,
        })
    } else {
        None
    };
    let samples = tensor::read_tensor(&dir.join("reservoir.lsct"))?.data;
    let traces_m = tensor::read_matrix(&dir.join("traces.lsct"))?;
    Ok(Snapshot {
        tick,
        dict,
        state,
        u0: parse_f("u0")?,
        sigma: parse_f("sigma")?,
        lambda: parse_f("lambda")?,
        reservoir: Reservoir::restore(samples, seen, RESERVOIR_CAP),
        traces: matrix_to_traces(&traces_m),
    })
}

fn write_outputs(
    paths: &RunPaths,
    settings: &TrainSettings,
    data_hash: &str,
    trainer: &Trainer,
    status: &str,
    failure_step: Option<u64>,
) -> Result<(), Error> {
    std::fs::write(&paths.trace, learning::trace_csv(&trainer.traces))?;
    tensor::write_matrix_f32(&paths.dictionary, trainer.dictionary().matrix())?;
    let mut files = vec![
        ("trace".into(), "trace.csv".into()),
        ("dictionary".into(), "dictionary.lsct".into()),
    ];
    if !trainer.reservoir.samples.is_empty() {
        let m = Array2::from_shape_vec(
            (1, trainer.reservoir.samples.len()),
            trainer.reservoir.samples.clone(),
        )
        .expect("1 x n");
        tensor::write_matrix_f64(&paths.reservoir, &m)?;
        files.push(("reservoir".into(), "reservoir.lsct".into()));
    }
    let p = trainer.params();
    let mut summary = vec![
        ("final_u0".into(), format!("{:?}", p.u0)),
        ("final_sigma".into(), format!("{:?}", p.sigma)),
        ("final_lambda".into(), format!("{:?}", p.lambda)),
    ];
    if !trainer.traces.is_empty() {
        let pis: Vec<f64> = trainer.traces.iter().map(|r| r.pi_hat).collect();
        let (pi, _, _) = converged_stat(&pis);
        summary.push(("converged_pi".into(), format!("{pi}")));
        if let Some(c) = trainer.traces.last().and_then(|r| r.mean_cosine) {
            summary.push(("final_cosine".into(), format!("{c}")));
        }
    }
    if !trainer.reservoir.samples.is_empty() {
        let kl = metrics::kl_to_prior(
            &trainer.reservoir.samples,
            &p,
            metrics::default_bin_width(p.lambda),
        )?;
        summary.push(("final_kl".into(), format!("{kl}")));
    }
    let manifest = RunManifest {
        settings: Some(settings.clone()),
        status: status.into(),
        failure_step,
        input_hashes: vec![("data".into(), data_hash.into())],
        summary,
        files,
    };
    std::fs::write(&paths.manifest, manifest.serialize())?;
    Ok(())
}

pub fn execute_train(
    settings: &TrainSettings,
    out: &Path,
    resume: Option<&Path>,
) -> Result<(), Error> {
    let (source, truth, data_hash) = resolve_source(settings)?;
    let mut cfg: TrainConfig = settings.to_train_config();
    cfg.init_dict = resolve_init(settings, truth.as_ref())?;
    std::fs::create_dir_all(out)?;
    let paths = RunPaths::new(out);

    let mut trainer = Trainer::new(cfg.clone(), source.as_dyn(), truth.as_ref())?;
    if let Some(snap_dir) = resume {
        let snap = load_snapshot(snap_dir)?;
        let mut params: ModelParams = cfg.params.clone();
        params.u0 = snap.u0;
        params.sigma = snap.sigma;
        params.lambda = snap.lambda;
        trainer.restore(
            snap.tick,
            snap.dict,
            snap.state,
            params,
            snap.reservoir,
            snap.traces,
        )?;
    }

    let snapshot_every = if cfg.snapshot_period <= 0.0 {
        0
    } else if cfg.solver.is_nested() {
        cfg.snapshot_period.round().max(1.0) as u64
    } else {
        (cfg.snapshot_period / cfg.params.dt).round() as u64
    };

    loop {
        match trainer.tick() {
            Ok(true) => {
                if snapshot_every > 0 && trainer.tick_index() % snapshot_every == 0 {
                    write_snapshot(
                        &out.join(format!("snap-{}", trainer.tick_index())),
                        &trainer,
                    )?;
                }
            }
            Ok(false) => break,
            Err(e @ Error::Numeric(_)) => {
                let step = trainer.tick_index();
                write_outputs(&paths, settings, &data_hash, &trainer, "failed", Some(step))?;
                return Err(e);
            }
            Err(e) => return Err(e),
        }
    }
    write_outputs(&paths, settings, &data_hash, &trainer, "ok", None)?;
    println!("wrote {}", paths.manifest.display());
    Ok(())
}
