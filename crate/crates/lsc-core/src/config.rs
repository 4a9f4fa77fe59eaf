//! Flat key=value configuration and run manifests.
//!
//! The on-disk format is one `key=value` pair per line, `#` comments, no
//! nesting. Serialization is canonical (fixed key order, shortest round-trip
//! float formatting) so that parse -> serialize is idempotent and manifests
//! diff cleanly.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::dynamics::{LearnFlags, SolverKind};
use crate::error::{Error, Result};
use crate::learning::{DictInit, TrainConfig};
use crate::model::ModelParams;

/// Parse a key=value document. Order is preserved; duplicate keys are an
/// error so manifests stay unambiguous.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    let mut seen = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key=value, got '{line}'", lineno + 1))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
        }
        if seen.insert(key.clone(), ()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key '{key}'", lineno + 1)));
        }
        pairs.push((key, value));
    }
    Ok(pairs)
}

pub fn serialize_kv(pairs: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        writeln!(out, "{k}={v}").unwrap();
    }
    out
}

fn get<'a>(map: &'a BTreeMap<String, String>, key: &str) -> Option<&'a str> {
    map.get(key).map(|s| s.as_str())
}

fn parse_typed<T: std::str::FromStr>(key: &str, value: &str, ty: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("key '{key}': expected {ty}, got '{value}'")))
}

fn get_f64(map: &BTreeMap<String, String>, key: &str, default: f64) -> Result<f64> {
    match get(map, key) {
        Some(v) => parse_typed(key, v, "a number"),
        None => Ok(default),
    }
}

fn get_u64(map: &BTreeMap<String, String>, key: &str, default: u64) -> Result<u64> {
    match get(map, key) {
        Some(v) => parse_typed(key, v, "an integer"),
        None => Ok(default),
    }
}

fn get_bool(map: &BTreeMap<String, String>, key: &str, default: bool) -> Result<bool> {
    match get(map, key) {
        Some("true") => Ok(true),
        Some("false") => Ok(false),
        Some(v) => Err(Error::Config(format!("key '{key}': expected true/false, got '{v}'"))),
        None => Ok(default),
    }
}

/// Serializable training settings: everything in TrainConfig plus the data
/// source and dictionary-init directives that the CLI resolves to objects.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub solver: SolverKind,
    pub seed: u64,
    /// Data directive: `bars:KEY=V,...` or a tensor file path.
    pub data: String,
    pub batch_size: usize,
    pub dict_k: usize,
    pub t_max: f64,
    pub n_a: u64,
    pub n_s: u64,
    pub eval_period: f64,
    pub snapshot_period: f64,
    pub sigma: f64,
    pub lambda: f64,
    pub u0: f64,
    pub temperature: f64,
    pub tau_s: f64,
    pub tau_a: f64,
    pub tau_u0: f64,
    pub tau_x: f64,
    pub dt: f64,
    pub learn_a: bool,
    pub learn_u0: bool,
    pub learn_sigma: bool,
    pub learn_lambda: bool,
    /// "auto" resolves per solver (on for SSC, off for samplers).
    pub normalize: Option<bool>,
    pub warm_start: bool,
    /// "random", "truth" (bars only) or a tensor file path.
    pub init_dict: String,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let p = ModelParams::default();
        TrainSettings {
            solver: SolverKind::LscL0,
            seed: 0,
            data: String::new(),
            batch_size: 100,
            dict_k: 16,
            t_max: 1000.0,
            n_a: 300,
            n_s: 100,
            eval_period: 1.0,
            snapshot_period: 0.0,
            sigma: p.sigma,
            lambda: p.lambda,
            u0: p.u0,
            temperature: p.temperature,
            tau_s: p.tau_s,
            tau_a: p.tau_a,
            tau_u0: p.tau_u0,
            tau_x: p.tau_x,
            dt: p.dt,
            learn_a: true,
            learn_u0: false,
            learn_sigma: false,
            learn_lambda: false,
            normalize: None,
            warm_start: false,
            init_dict: "random".into(),
        }
    }
}

const SETTINGS_KEYS: &[&str] = &[
    "solver",
    "seed",
    "data",
    "batch_size",
    "dict_k",
    "t_max",
    "n_a",
    "n_s",
    "eval_period",
    "snapshot_period",
    "sigma",
    "lambda",
    "u0",
    "temperature",
    "tau_s",
    "tau_a",
    "tau_u0",
    "tau_x",
    "dt",
    "learn_a",
    "learn_u0",
    "learn_sigma",
    "learn_lambda",
    "normalize",
    "warm_start",
    "init_dict",
];

impl TrainSettings {
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let map: BTreeMap<String, String> = pairs.iter().cloned().collect();
        for key in map.keys() {
            if !SETTINGS_KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!("unknown config key '{key}'")));
            }
        }
        let solver_name = get(&map, "solver")
            .ok_or_else(|| Error::Config("missing required key 'solver'".into()))?;
        let d = TrainSettings::default();
        Ok(TrainSettings {
            solver: SolverKind::parse(solver_name)?,
            seed: get_u64(&map, "seed", d.seed)?,
            data: get(&map, "data").unwrap_or(&d.data).to_string(),
            batch_size: get_u64(&map, "batch_size", d.batch_size as u64)? as usize,
            dict_k: get_u64(&map, "dict_k", d.dict_k as u64)? as usize,
            t_max: get_f64(&map, "t_max", d.t_max)?,
            n_a: get_u64(&map, "n_a", d.n_a)?,
            n_s: get_u64(&map, "n_s", d.n_s)?,
            eval_period: get_f64(&map, "eval_period", d.eval_period)?,
            snapshot_period: get_f64(&map, "snapshot_period", d.snapshot_period)?,
            sigma: get_f64(&map, "sigma", d.sigma)?,
            lambda: get_f64(&map, "lambda", d.lambda)?,
            u0: get_f64(&map, "u0", d.u0)?,
            temperature: get_f64(&map, "temperature", d.temperature)?,
            tau_s: get_f64(&map, "tau_s", d.tau_s)?,
            tau_a: get_f64(&map, "tau_a", d.tau_a)?,
            tau_u0: get_f64(&map, "tau_u0", d.tau_u0)?,
            tau_x: get_f64(&map, "tau_x", d.tau_x)?,
            dt: get_f64(&map, "dt", d.dt)?,
            learn_a: get_bool(&map, "learn_a", d.learn_a)?,
            learn_u0: get_bool(&map, "learn_u0", d.learn_u0)?,
            learn_sigma: get_bool(&map, "learn_sigma", d.learn_sigma)?,
            learn_lambda: get_bool(&map, "learn_lambda", d.learn_lambda)?,
            normalize: match get(&map, "normalize") {
                None | Some("auto") => None,
                Some("true") => Some(true),
                Some("false") => Some(false),
                Some(v) => {
                    return Err(Error::Config(format!(
                        "key 'normalize': expected true/false/auto, got '{v}'"
                    )))
                }
            },
            warm_start: get_bool(&map, "warm_start", d.warm_start)?,
            init_dict: get(&map, "init_dict").unwrap_or(&d.init_dict).to_string(),
        })
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let b = |v: bool| if v { "true" } else { "false" }.to_string();
        vec![
            ("solver".into(), self.solver.name().into()),
            ("seed".into(), self.seed.to_string()),
            ("data".into(), self.data.clone()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("dict_k".into(), self.dict_k.to_string()),
            ("t_max".into(), self.t_max.to_string()),
            ("n_a".into(), self.n_a.to_string()),
            ("n_s".into(), self.n_s.to_string()),
            ("eval_period".into(), self.eval_period.to_string()),
            ("snapshot_period".into(), self.snapshot_period.to_string()),
            ("sigma".into(), self.sigma.to_string()),
            ("lambda".into(), self.lambda.to_string()),
            ("u0".into(), self.u0.to_string()),
            ("temperature".into(), self.temperature.to_string()),
            ("tau_s".into(), self.tau_s.to_string()),
            ("tau_a".into(), self.tau_a.to_string()),
            ("tau_u0".into(), self.tau_u0.to_string()),
            ("tau_x".into(), self.tau_x.to_string()),
            ("dt".into(), self.dt.to_string()),
            ("learn_a".into(), b(self.learn_a)),
            ("learn_u0".into(), b(self.learn_u0)),
            ("learn_sigma".into(), b(self.learn_sigma)),
            ("learn_lambda".into(), b(self.learn_lambda)),
            (
                "normalize".into(),
                match self.normalize {
                    None => "auto".into(),
                    Some(v) => b(v),
                },
            ),
            ("warm_start".into(), b(self.warm_start)),
            ("init_dict".into(), self.init_dict.clone()),
        ]
    }

    pub fn parse(text: &str) -> Result<Self> {
        TrainSettings::from_pairs(&parse_kv(text)?)
    }

    pub fn serialize(&self) -> String {
        serialize_kv(&self.to_pairs())
    }

    /// Build the runtime config; the CLI substitutes a resolved init later
    /// when `init_dict` is not "random".
    pub fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            solver: self.solver,
            params: ModelParams {
                sigma: self.sigma,
                lambda: self.lambda,
                u0: self.u0,
                temperature: self.temperature,
                tau_s: self.tau_s,
                tau_a: self.tau_a,
                tau_u0: self.tau_u0,
                tau_x: self.tau_x,
                dt: self.dt,
            },
            learn: LearnFlags {
                a: self.learn_a,
                u0: self.learn_u0,
                sigma: self.learn_sigma,
                lambda: self.learn_lambda,
            },
            t_max: self.t_max,
            n_a: self.n_a,
            n_s: self.n_s,
            batch_size: self.batch_size,
            dict_k: self.dict_k,
            seed: self.seed,
            eval_period: self.eval_period,
            snapshot_period: self.snapshot_period,
            normalize: self.normalize,
            warm_start: self.warm_start,
            init_dict: DictInit::Random,
        }
    }
}

/// Manifest written next to every run: the full effective settings, input
/// hash, outcome, metric summary, and output file paths.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunManifest {
    pub settings: Option<TrainSettings>,
    pub status: String,
    pub failure_step: Option<u64>,
    /// CRC32 of external input files, hex, keyed by role.
    pub input_hashes: Vec<(String, String)>,
    pub summary: Vec<(String, String)>,
    pub files: Vec<(String, String)>,
}

impl RunManifest {
    pub fn serialize(&self) -> String {
        let mut pairs = Vec::new();
        if let Some(s) = &self.settings {
            pairs.extend(s.to_pairs());
        }
        pairs.push(("status".into(), self.status.clone()));
        if let Some(step) = self.failure_step {
            pairs.push(("failure_step".into(), step.to_string()));
        }
        for (k, v) in &self.input_hashes {
            pairs.push((format!("hash.{k}"), v.clone()));
        }
        for (k, v) in &self.summary {
            pairs.push((format!("metric.{k}"), v.clone()));
        }
        for (k, v) in &self.files {
            pairs.push((format!("file.{k}"), v.clone()));
        }
        serialize_kv(&pairs)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let pairs = parse_kv(text)?;
        let mut settings_pairs = Vec::new();
        let mut m = RunManifest::default();
        for (k, v) in pairs {
            if let Some(rest) = k.strip_prefix("hash.") {
                m.input_hashes.push((rest.to_string(), v));
            } else if let Some(rest) = k.strip_prefix("metric.") {
                m.summary.push((rest.to_string(), v));
            } else if let Some(rest) = k.strip_prefix("file.") {
                m.files.push((rest.to_string(), v));
            } else if k == "status" {
                m.status = v;
            } else if k == "failure_step" {
                m.failure_step = Some(parse_typed(&k, &v, "an integer")?);
            } else {
                settings_pairs.push((k, v));
            }
        }
        if !settings_pairs.is_empty() {
            m.settings = Some(TrainSettings::from_pairs(&settings_pairs)?);
        }
        Ok(m)
    }
}
