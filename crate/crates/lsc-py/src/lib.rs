//! Python bindings for the sparse coding library.
//!
//! Exposes data generation, whitening, training from the same flat key=value
//! config format the CLI uses, MAP inference, and the evaluation metrics.

use numpy::{IntoPyArray, PyArray1, PyArray2, PyReadonlyArray1, PyReadonlyArray2};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use lsc_core::config::TrainSettings;
use lsc_core::data;
use lsc_core::dynamics::{DscSchedule, LatentInit, SolverKind};
use lsc_core::error::Error;
use lsc_core::learning::{self, DictInit, TrainConfig, Trainer};
use lsc_core::metrics;
use lsc_core::model::{Dictionary, ModelParams};

fn pyerr(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Generate a bars batch. Returns (x, s) with x of shape (d, n) and the
/// ground-truth coefficients s of shape (k, n).
#[pyfunction]
#[pyo3(signature = (n, p=8, pi=0.3, lam=1.0, sigma=0.5, seed=0))]
fn generate_bars<'py>(
    py: Python<'py>,
    n: usize,
    p: usize,
    pi: f64,
    lam: f64,
    sigma: f64,
    seed: u64,
) -> PyResult<(Bound<'py, PyArray2<f64>>, Bound<'py, PyArray2<f64>>)> {
    let spec = data::BarsSpec { p, pi, lambda: lam, sigma, seed };
    let batch = data::generate_bars(&spec, n).map_err(pyerr)?;
    let s = batch.ground_truth_s.expect("bars batches carry ground truth");
    Ok((batch.x.into_pyarray_bound(py), s.into_pyarray_bound(py)))
}

/// The canonical bars dictionary for grid side p, shape (p*p, 2*p).
#[pyfunction]
fn bars_dictionary(py: Python<'_>, p: usize) -> Bound<'_, PyArray2<f64>> {
    data::bars_dictionary(p).into_matrix().into_pyarray_bound(py)
}

/// ZCA-whiten an (n, d) patch matrix. Returns (whitened, transform_w, mean).
#[pyfunction]
#[pyo3(signature = (patches, eps=None))]
fn whiten<'py>(
    py: Python<'py>,
    patches: PyReadonlyArray2<'py, f64>,
    eps: Option<f64>,
) -> PyResult<(
    Bound<'py, PyArray2<f64>>,
    Bound<'py, PyArray2<f64>>,
    Bound<'py, PyArray1<f64>>,
)> {
    let (white, t) = data::whiten_zca(&patches.as_array().to_owned(), eps).map_err(pyerr)?;
    Ok((
        white.into_pyarray_bound(py),
        t.w.into_pyarray_bound(py),
        t.mean.into_pyarray_bound(py),
    ))
}

fn settings_to_config(settings: &TrainSettings, truth: Option<&Dictionary>) -> PyResult<TrainConfig> {
    let mut cfg = settings.to_train_config();
    cfg.init_dict = match settings.init_dict.as_str() {
        "random" => DictInit::Random,
        "truth" => DictInit::Fixed(
            truth
                .cloned()
                .ok_or_else(|| PyValueError::new_err("init_dict=truth requires bars data"))?,
        ),
        path => DictInit::Fixed(
            Dictionary::new(lsc_core::tensor::read_matrix(std::path::Path::new(path)).map_err(pyerr)?)
                .map_err(pyerr)?,
        ),
    };
    Ok(cfg)
}

/// Train from a flat key=value config string (same keys as the CLI).
/// Returns a dict with the learned dictionary, trace rows, final parameters
/// and the coefficient reservoir.
#[pyfunction]
fn train<'py>(py: Python<'py>, config: &str) -> PyResult<Bound<'py, PyDict>> {
    let settings = TrainSettings::parse(config).map_err(pyerr)?;
    if settings.data.is_empty() {
        return Err(PyValueError::new_err("config needs a 'data' key"));
    }
    enum Src {
        Bars(data::BarsSource),
        Patch(data::PatchSource),
    }
    let (src, truth) = if settings.data.starts_with("bars:") || settings.data == "bars" {
        let mut spec = data::BarsSpec::default();
        let rest = settings.data.strip_prefix("bars:").unwrap_or("");
        for part in rest.split(',').filter(|s| !s.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| PyValueError::new_err(format!("bad bars directive '{part}'")))?;
            let bad = || PyValueError::new_err(format!("bad bars value '{v}' for {k}"));
            match k {
                "p" => spec.p = v.parse().map_err(|_| bad())?,
                "pi" => spec.pi = v.parse().map_err(|_| bad())?,
                "lambda" => spec.lambda = v.parse().map_err(|_| bad())?,
                "sigma" => spec.sigma = v.parse().map_err(|_| bad())?,
                "seed" => spec.seed = v.parse().map_err(|_| bad())?,
                other => {
                    return Err(PyValueError::new_err(format!("unknown bars key '{other}'")))
                }
            }
        }
        let source = data::BarsSource::new(spec, settings.batch_size).map_err(pyerr)?;
        let truth = source.truth().clone();
        (Src::Bars(source), Some(truth))
    } else {
        let source = data::PatchSource::from_file(
            std::path::Path::new(&settings.data),
            settings.batch_size,
            settings.seed,
        )
        .map_err(pyerr)?;
        (Src::Patch(source), None)
    };
    let cfg = settings_to_config(&settings, truth.as_ref())?;
    let src_dyn: &dyn lsc_core::dynamics::DataSource = match &src {
        Src::Bars(s) => s,
        Src::Patch(s) => s,
    };
    let mut trainer = Trainer::new(cfg, src_dyn, truth.as_ref()).map_err(pyerr)?;
    while trainer.tick().map_err(pyerr)? {}
    let artifact = trainer.into_artifact();

    let out = PyDict::new_bound(py);
    out.set_item(
        "dictionary",
        artifact.dictionary.into_matrix().into_pyarray_bound(py),
    )?;
    out.set_item("trace_csv", learning::trace_csv(&artifact.traces))?;
    out.set_item(
        "reservoir",
        numpy::ndarray::Array1::from(artifact.reservoir).into_pyarray_bound(py),
    )?;
    let params = PyDict::new_bound(py);
    params.set_item("sigma", artifact.params.sigma)?;
    params.set_item("lambda", artifact.params.lambda)?;
    params.set_item("u0", artifact.params.u0)?;
    params.set_item("pi", artifact.params.pi())?;
    out.set_item("params", params)?;
    Ok(out)
}

/// MAP inference with a nested solver (dsc or lca) on a fixed dictionary.
/// `x` has shape (d, n); returns coefficients of shape (k, n).
#[pyfunction]
#[pyo3(signature = (solver, dictionary, x, sigma=0.5, lam=1.0, n_s=100, dt=0.1))]
fn infer_map<'py>(
    py: Python<'py>,
    solver: &str,
    dictionary: PyReadonlyArray2<'py, f64>,
    x: PyReadonlyArray2<'py, f64>,
    sigma: f64,
    lam: f64,
    n_s: u64,
    dt: f64,
) -> PyResult<Bound<'py, PyArray2<f64>>> {
    let kind = SolverKind::parse(solver).map_err(pyerr)?;
    if !kind.is_nested() {
        return Err(PyValueError::new_err(
            "infer_map supports the MAP solvers dsc and lca",
        ));
    }
    let dict = Dictionary::new(dictionary.as_array().to_owned()).map_err(pyerr)?;
    let x = x.as_array().to_owned();
    let params = ModelParams { sigma, lambda: lam, dt, ..ModelParams::default() };
    let mut state =
        lsc_core::model::LatentState::from_s(numpy::ndarray::Array2::zeros((dict.k(), x.ncols())));
    for _ in 0..n_s {
        state =
            lsc_core::dynamics::step_latents_ode(&state, &dict, &x, &params, kind).map_err(pyerr)?;
    }
    Ok(state.s.into_pyarray_bound(py))
}

/// KL divergence between the empirical coefficient histogram and the
/// spike-and-slab prior implied by (lam, u0).
#[pyfunction]
#[pyo3(signature = (samples, lam, u0))]
fn kl_to_prior(samples: PyReadonlyArray1<'_, f64>, lam: f64, u0: f64) -> PyResult<f64> {
    let params = ModelParams { lambda: lam, u0, ..ModelParams::default() };
    metrics::kl_to_prior(
        samples.as_slice()?,
        &params,
        metrics::default_bin_width(lam),
    )
    .map_err(pyerr)
}

/// Mean best-match |cosine| of learned columns against a truth dictionary.
#[pyfunction]
fn dictionary_recovery(
    learned: PyReadonlyArray2<'_, f64>,
    truth: PyReadonlyArray2<'_, f64>,
) -> PyResult<f64> {
    let learned = Dictionary::new(learned.as_array().to_owned()).map_err(pyerr)?;
    let truth = Dictionary::new(truth.as_array().to_owned()).map_err(pyerr)?;
    Ok(metrics::dictionary_recovery(&learned, &truth)
        .map_err(pyerr)?
        .mean_best_cosine)
}

#[pymodule]
fn lsc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(generate_bars, m)?)?;
    m.add_function(wrap_pyfunction!(bars_dictionary, m)?)?;
    m.add_function(wrap_pyfunction!(whiten, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(infer_map, m)?)?;
    m.add_function(wrap_pyfunction!(kl_to_prior, m)?)?;
    m.add_function(wrap_pyfunction!(dictionary_recovery, m)?)?;
    Ok(())
}
