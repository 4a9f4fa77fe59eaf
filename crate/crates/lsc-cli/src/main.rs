//! `lsc` — command-line harness for the sparse coding library.
//!
//! Exit codes: 0 success, 1 usage/config, 2 I/O, 3 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lsc_core::config::{RunManifest, TrainSettings};
use lsc_core::data::{generate_bars, whiten_zca, BarsSource, BarsSpec};
use lsc_core::dynamics::SolverKind;
use lsc_core::error::Error;
use lsc_core::learning::{
    sweep_lambda_vs_pi, sweep_overcompleteness, SweepParameter, SweepSpec,
};
use lsc_core::metrics;
use lsc_core::model::{Dictionary, ModelParams};
use lsc_core::tensor;

mod run;
use run::execute_train;

#[derive(Parser)]
#[command(name = "lsc", version, about = "Probabilistic sparse coding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic bars batch (X, ground-truth S, manifest).
    GenBars(GenBarsArgs),
    /// Train a solver from a config file.
    Train(TrainArgs),
    /// Evaluate a finished run directory.
    Eval(EvalArgs),
    /// Run a parameter sweep from a spec file.
    Sweep(SweepArgs),
    /// ZCA-whiten a patch tensor.
    Whiten(WhitenArgs),
}

#[derive(Args)]
struct GenBarsArgs {
    /// Grid side length.
    #[arg(long, default_value_t = 8)]
    p: usize,
    /// Activation probability.
    #[arg(long, default_value_t = 0.3)]
    pi: f64,
    /// Slab rate.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Observation noise std.
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    /// Number of data columns.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Config file (flat key=value).
    #[arg(long)]
    config: PathBuf,
    /// Solver override: dsc, lca, ssc, lsc or l0lsc.
    #[arg(long)]
    solver: Option<String>,
    /// Data override: `bars:p=8,pi=0.3,...` or a patch tensor path.
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Resume from a snapshot directory written by a previous run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Run directory produced by `lsc train`.
    #[arg(long)]
    run: PathBuf,
    /// kl, recovery or distr.
    #[arg(long)]
    mode: String,
    /// Truth dictionary for recovery mode: `bars:p=8` or a tensor path.
    #[arg(long)]
    truth: Option<String>,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep spec file (flat key=value).
    #[arg(long)]
    spec: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct WhitenArgs {
    /// Input N x D patch tensor.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output whitened tensor path.
    #[arg(long)]
    out: PathBuf,
    /// Eigenvalue floor; defaults to 1% of the mean eigenvalue.
    #[arg(long)]
    eps: Option<f64>,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Usage(_) | Error::Config(_) | Error::Dim(_) => 1,
        Error::Io(_) | Error::Format(_) => 2,
        Error::Numeric(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's help/version pseudo-errors are success; real parse
            // errors are usage failures (exit 1)
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::GenBars(args) => cmd_gen_bars(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Whiten(args) => cmd_whiten(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

/// Parse a `bars:key=value,...` directive.
fn parse_bars_directive(directive: &str) -> Result<BarsSpec, Error> {
    let mut spec = BarsSpec::default();
    let rest = directive.strip_prefix("bars:").unwrap_or("");
    if !rest.is_empty() {
        for part in rest.split(',') {
            let (key, value) = part.split_once('=').ok_or_else(|| {
                Error::Usage(format!("bars directive: expected key=value, got '{part}'"))
            })?;
            let bad =
                |k: &str, v: &str| Error::Usage(format!("bars directive: bad value '{v}' for {k}"));
            match key {
                "p" => spec.p = value.parse().map_err(|_| bad(key, value))?,
                "pi" => spec.pi = value.parse().map_err(|_| bad(key, value))?,
                "lambda" => spec.lambda = value.parse().map_err(|_| bad(key, value))?,
                "sigma" => spec.sigma = value.parse().map_err(|_| bad(key, value))?,
                "seed" => spec.seed = value.parse().map_err(|_| bad(key, value))?,
                other => {
                    return Err(Error::Usage(format!("bars directive: unknown key '{other}'")))
                }
            }
        }
    }
    spec.validate()?;
    Ok(spec)
}

fn cmd_gen_bars(args: GenBarsArgs) -> Result<(), Error> {
    let spec = BarsSpec {
        p: args.p,
        pi: args.pi,
        lambda: args.lambda,
        sigma: args.sigma,
        seed: args.seed,
    };
    spec.validate()?;
    let batch = generate_bars(&spec, args.n)?;
    std::fs::create_dir_all(&args.out)?;
    let x_path = args.out.join("x.lsct");
    let s_path = args.out.join("s.lsct");
    tensor::write_matrix_f32(&x_path, &batch.x)?;
    tensor::write_matrix_f32(&s_path, batch.ground_truth_s.as_ref().expect("bars have truth"))?;
    let manifest = RunManifest {
        settings: None,
        status: "ok".into(),
        failure_step: None,
        input_hashes: vec![],
        summary: vec![
            ("p".into(), spec.p.to_string()),
            ("pi".into(), spec.pi.to_string()),
            ("lambda".into(), spec.lambda.to_string()),
            ("sigma".into(), spec.sigma.to_string()),
            ("n".into(), args.n.to_string()),
            ("seed".into(), spec.seed.to_string()),
        ],
        files: vec![
            ("x".into(), "x.lsct".into()),
            ("s".into(), "s.lsct".into()),
        ],
    };
    std::fs::write(args.out.join("manifest.kv"), manifest.serialize())?;
    println!("wrote {} and {}", x_path.display(), s_path.display());
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), Error> {
    let text = std::fs::read_to_string(&args.config)?;
    let mut settings = TrainSettings::parse(&text)?;
    if let Some(solver) = &args.solver {
        settings.solver = SolverKind::parse(solver)?;
    }
    if let Some(data) = &args.data {
        settings.data = data.clone();
    }
    if let Some(seed) = args.seed {
        settings.seed = seed;
    }
    if settings.data.is_empty() {
        return Err(Error::Usage(
            "no data source: set the 'data' config key or pass --data".into(),
        ));
    }
    execute_train(&settings, &args.out, args.resume.as_deref())
}

fn read_reservoir(run: &Path) -> Result<Vec<f64>, Error> {
    let path = run.join("reservoir.lsct");
    if !path.exists() {
        return Err(Error::Usage(format!(
            "{} has no coefficient reservoir; for a MAP solver rerun training \
             (MAP coefficients are collected per outer iteration) or use \
             --mode distr on its outputs",
            run.display()
        )));
    }
    Ok(tensor::read_tensor(&path)?.data)
}

fn manifest_params(run: &Path) -> Result<(RunManifest, ModelParams), Error> {
    let text = std::fs::read_to_string(run.join("manifest.kv"))?;
    let manifest = RunManifest::parse(&text)?;
    let settings = manifest
        .settings
        .clone()
        .ok_or_else(|| Error::Format("manifest has no settings block".into()))?;
    let mut params = settings.to_train_config().params;
    // final learned parameter values take precedence over the config
    for (k, v) in &manifest.summary {
        let parse = |v: &str| v.parse::<f64>().map_err(|_| Error::Format(format!("bad {k}")));
        match k.as_str() {
            "final_u0" => params.u0 = parse(v)?,
            "final_sigma" => params.sigma = parse(v)?,
            "final_lambda" => params.lambda = parse(v)?,
            _ => {}
        }
    }
    Ok((manifest, params))
}

fn resolve_truth(directive: &str) -> Result<Dictionary, Error> {
    if directive.starts_with("bars:") || directive == "bars" {
        let spec = parse_bars_directive(if directive == "bars" { "bars:" } else { directive })?;
        Ok(lsc_core::data::bars_dictionary(spec.p))
    } else {
        Dictionary::new(tensor::read_matrix(Path::new(directive))?)
    }
}

fn cmd_eval(args: EvalArgs) -> Result<(), Error> {
    match args.mode.as_str() {
        "kl" => {
            let (_, params) = manifest_params(&args.run)?;
            let samples = read_reservoir(&args.run)?;
            let kl = metrics::kl_to_prior(
                &samples,
                &params,
                metrics::default_bin_width(params.lambda),
            )?;
            println!("kl={kl}");
        }
        "distr" => {
            let (_, params) = manifest_params(&args.run)?;
            let samples = read_reservoir(&args.run)?;
            let width = metrics::default_bin_width(params.lambda);
            let hist = metrics::Histogram::from_samples(
                &samples,
                width,
                metrics::slab_truncation(params.lambda),
            )?;
            println!("zero_atom,{}", hist.zero_atom);
            println!("bin_lo,bin_hi,count");
            for (i, c) in hist.counts.iter().enumerate() {
                println!("{},{},{c}", i as f64 * width, (i + 1) as f64 * width);
            }
        }
        "recovery" => {
            let truth = args.truth.as_deref().ok_or_else(|| {
                Error::Usage("recovery mode needs --truth (bars:p=8 or a tensor path)".into())
            })?;
            let truth = resolve_truth(truth)?;
            let learned = Dictionary::new(tensor::read_matrix(&args.run.join("dictionary.lsct"))?)?;
            let rep = metrics::dictionary_recovery(&learned, &truth)?;
            println!("mean_best_cosine={}", rep.mean_best_cosine);
        }
        other => {
            return Err(Error::Usage(format!(
                "unknown eval mode '{other}' (expected kl, recovery or distr)"
            )))
        }
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Error> {
    let text = std::fs::read_to_string(&args.spec)?;
    let mut grid = Vec::new();
    let mut parameter = None;
    let mut holdout = 10u64;
    let mut settings_pairs = Vec::new();
    for (k, v) in lsc_core::config::parse_kv(&text)? {
        match k.as_str() {
            "parameter" => parameter = Some(SweepParameter::parse(&v)?),
            "grid" => {
                for part in v.split(',') {
                    grid.push(part.trim().parse::<f64>().map_err(|_| {
                        Error::Config(format!("bad grid value '{part}'"))
                    })?);
                }
            }
            "holdout_batches" => {
                holdout = v
                    .parse()
                    .map_err(|_| Error::Config(format!("bad holdout_batches '{v}'")))?
            }
            _ => settings_pairs.push((k, v)),
        }
    }
    let parameter =
        parameter.ok_or_else(|| Error::Config("missing required key 'parameter'".into()))?;
    let settings = TrainSettings::from_pairs(&settings_pairs)?;
    if settings.data.is_empty() {
        return Err(Error::Config("sweep spec needs a 'data' key".into()));
    }
    let base = settings.to_train_config();
    let spec = SweepSpec { parameter, grid, base };
    std::fs::create_dir_all(&args.out)?;

    let mut csv = String::from("value,metric,lo,hi\n");
    let mut warnings = 0usize;
    match parameter {
        SweepParameter::Lambda => {
            let bars = parse_bars_directive(&settings.data)?;
            let source = BarsSource::new(bars, settings.batch_size)?;
            let sweep = sweep_lambda_vs_pi(&spec, &source, holdout)?;
            for row in &sweep.rows {
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    row.lambda, row.activity, row.activity, row.activity
                ));
            }
            if sweep.monotonicity_violations > 0 {
                eprintln!(
                    "warning: {} monotonicity violations beyond estimator noise",
                    sweep.monotonicity_violations
                );
                warnings += 1;
            }
        }
        SweepParameter::Overcompleteness => {
            let bars = parse_bars_directive(&settings.data)?;
            let n = settings.batch_size;
            let rows =
                sweep_overcompleteness(&spec, &|| BarsSource::new(bars.clone(), n))?;
            for row in &rows {
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    row.omega, row.pi_hat, row.pi_lo, row.pi_hi
                ));
            }
        }
        SweepParameter::U0 => {
            // per-point full training runs over a u0 grid
            for &u0 in &spec.grid {
                let mut s = settings.clone();
                s.u0 = u0;
                let dir = args.out.join(format!("point-{u0}"));
                match execute_train(&s, &dir, None) {
                    Ok(()) => {
                        let (manifest, _) = manifest_params(&dir)?;
                        let pi = manifest
                            .summary
                            .iter()
                            .find(|(k, _)| k == "converged_pi")
                            .map(|(_, v)| v.clone())
                            .unwrap_or_default();
                        csv.push_str(&format!("{u0},{pi},{pi},{pi}\n"));
                    }
                    Err(e) => {
                        eprintln!("warning: point u0={u0} failed: {e}");
                        csv.push_str(&format!("{u0},failed,,\n"));
                        warnings += 1;
                    }
                }
            }
        }
    }
    std::fs::write(args.out.join("sweep.csv"), &csv)?;
    if warnings > 0 {
        eprintln!("sweep finished with {warnings} warning(s)");
    }
    println!("wrote {}", args.out.join("sweep.csv").display());
    Ok(())
}

fn cmd_whiten(args: WhitenArgs) -> Result<(), Error> {
    let raw = tensor::read_tensor(&args.input)?.into_matrix()?;
    let (white, transform) = whiten_zca(&raw, args.eps)?;
    tensor::write_matrix_f32(&args.out, &white)?;
    let stem = args.out.display().to_string();
    tensor::write_matrix_f32(Path::new(&format!("{stem}.w")), &transform.w)?;
    let mean = transform.mean.clone().insert_axis(ndarray::Axis(0));
    tensor::write_matrix_f32(Path::new(&format!("{stem}.mean")), &mean)?;
    println!("wrote {} (+ .w, .mean; eps={})", args.out.display(), transform.eps);
    Ok(())
}
