//! Synthetic bars data, spike-and-slab coefficient sampling, patch ingestion
//! and ZCA whitening.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::dynamics::DataSource;
use crate::error::{Error, Result};
use crate::model::{Batch, Dictionary};
use crate::noise::{stream, NoiseSource};
use crate::tensor;

/// Configuration of the synthetic bars generator.
#[derive(Debug, Clone, PartialEq)]
pub struct BarsSpec {
    /// Grid side length; the dictionary has 2p bars on a p x p grid.
    pub p: usize,
    /// Activation probability of the spike-and-slab prior.
    pub pi: f64,
    /// Slab rate.
    pub lambda: f64,
    /// Additive noise std.
    pub sigma: f64,
    pub seed: u64,
}

impl BarsSpec {
    pub fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(Error::Config(format!("bars grid side must be >= 2, got {}", self.p)));
        }
        if !(self.pi > 0.0 && self.pi <= 1.0) {
            return Err(Error::Config(format!("pi must be in (0, 1], got {}", self.pi)));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::Config(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::Config(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.p * self.p
    }

    pub fn k(&self) -> usize {
        2 * self.p
    }
}

impl Default for BarsSpec {
    fn default() -> Self {
        // Parameters of the reference bars experiments.
        BarsSpec { p: 8, pi: 0.3, lambda: 1.0, sigma: 0.5, seed: 0 }
    }
}

/// The 2p vertical and horizontal bars on a p x p grid, each column
/// unit-normalized (pixel value 1/sqrt(p)). Columns 0..p are horizontal rows,
/// p..2p vertical columns.
pub fn bars_dictionary(p: usize) -> Dictionary {
    let d = p * p;
    let val = 1.0 / (p as f64).sqrt();
    let mut a = Array2::zeros((d, 2 * p));
    for i in 0..p {
        for j in 0..p {
            a[[i * p + j, i]] = val; // horizontal bar i: row i of the grid
            a[[j * p + i, p + i]] = val; // vertical bar i: column i
        }
    }
    Dictionary::new(a).expect("bars dictionary is finite")
}

fn spike_slab_into(
    out: &mut Array2<f64>,
    pi: f64,
    lambda: f64,
    rng: &mut ChaCha8Rng,
) {
    for v in out.iter_mut() {
        *v = if rng.gen::<f64>() < pi {
            // inverse-CDF exponential draw
            let x: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            -x.ln() / lambda
        } else {
            0.0
        };
    }
}

/// K x N matrix of spike-and-slab draws: 0 with probability 1 - pi, otherwise
/// Exponential(lambda). All entries non-negative.
pub fn sample_spike_slab(k: usize, n: usize, pi: f64, lambda: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array2::zeros((k, n));
    spike_slab_into(&mut out, pi, lambda, &mut rng);
    out
}

fn generate_bars_indexed(spec: &BarsSpec, n: usize, index: u64) -> Result<Batch> {
    spec.validate()?;
    let dict = bars_dictionary(spec.p);
    let ns = NoiseSource::new(spec.seed);
    let mut s = Array2::zeros((spec.k(), n));
    spike_slab_into(&mut s, spec.pi, spec.lambda, &mut ns.rng(stream::DATA_COEFF, index));
    let mut x = dict.matrix().dot(&s);
    if spec.sigma > 0.0 {
        let z = ns.normal_matrix(stream::DATA_NOISE, index, spec.d(), n);
        x.zip_mut_with(&z, |xi, &zi| *xi += spec.sigma * zi);
    }
    let mut batch = Batch::new(x)?;
    batch.ground_truth_s = Some(s);
    batch.generator = Some(format!(
        "bars p={} pi={} lambda={} sigma={} seed={} index={index}",
        spec.p, spec.pi, spec.lambda, spec.sigma, spec.seed
    ));
    Ok(batch)
}

/// X = A_bars S + sigma Z with S from the spike-and-slab prior. Ground truth
/// coefficients are recorded in the batch.
pub fn generate_bars(spec: &BarsSpec, n: usize) -> Result<Batch> {
    if n == 0 {
        // empty batch: valid tensor payload, no columns
        let mut batch = Batch {
            x: Array2::zeros((spec.d(), 0)),
            ground_truth_s: Some(Array2::zeros((spec.k(), 0))),
            generator: None,
        };
        spec.validate()?;
        batch.generator = Some(format!(
            "bars p={} pi={} lambda={} sigma={} seed={}",
            spec.p, spec.pi, spec.lambda, spec.sigma, spec.seed
        ));
        return Ok(batch);
    }
    generate_bars_indexed(spec, n, 0)
}

/// Streaming bars source: batch `i` is a fresh draw addressed by index, so
/// resumed runs replay the same stream.
pub struct BarsSource {
    pub spec: BarsSpec,
    pub n: usize,
    /// Optional overcomplete padding: duplicates are NOT added; the model
    /// dictionary may simply be larger than the generating one.
    truth: Dictionary,
}

impl BarsSource {
    pub fn new(spec: BarsSpec, n: usize) -> Result<Self> {
        spec.validate()?;
        if n == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        let truth = bars_dictionary(spec.p);
        Ok(BarsSource { spec, n, truth })
    }

    pub fn truth(&self) -> &Dictionary {
        &self.truth
    }
}

impl DataSource for BarsSource {
    fn dims(&self) -> (usize, usize) {
        (self.spec.d(), self.n)
    }

    fn batch(&self, index: u64) -> Batch {
        generate_bars_indexed(&self.spec, self.n, index).expect("validated spec")
    }
}

/// Fixed-matrix source: every presentation is the same batch.
pub struct FixedSource {
    batch: Batch,
}

impl FixedSource {
    pub fn new(batch: Batch) -> Self {
        FixedSource { batch }
    }
}

impl DataSource for FixedSource {
    fn dims(&self) -> (usize, usize) {
        (self.batch.d(), self.batch.n())
    }

    fn batch(&self, _index: u64) -> Batch {
        self.batch.clone()
    }
}

/// Patch file source: draws N columns per presentation from an N_total x D
/// patch matrix, with the subset addressed by (seed, index).
pub struct PatchSource {
    /// D x N_total, already transposed into column-major data layout.
    patches: Array2<f64>,
    n: usize,
    seed: u64,
}

impl PatchSource {
    pub fn from_file(path: &Path, n: usize, seed: u64) -> Result<Self> {
        let batch = load_patches(path)?;
        if n == 0 || n > batch.n() {
            return Err(Error::Config(format!(
                "batch size {n} out of range for {} patches",
                batch.n()
            )));
        }
        Ok(PatchSource { patches: batch.x, n, seed })
    }

    /// Build from an in-memory N_total x D patch matrix (row per patch).
    pub fn from_matrix(patches: Array2<f64>, n: usize, seed: u64) -> Result<Self> {
        if n == 0 || n > patches.nrows() {
            return Err(Error::Config(format!(
                "batch size {n} out of range for {} patches",
                patches.nrows()
            )));
        }
        Ok(PatchSource { patches: patches.t().to_owned(), n, seed })
    }
}

impl DataSource for PatchSource {
    fn dims(&self) -> (usize, usize) {
        (self.patches.nrows(), self.n)
    }

    fn batch(&self, index: u64) -> Batch {
        let ns = NoiseSource::new(self.seed);
        let mut rng = ns.rng(stream::DATA_COEFF, index);
        let total = self.patches.ncols();
        let mut x = Array2::zeros((self.patches.nrows(), self.n));
        for j in 0..self.n {
            let pick = rng.gen_range(0..total);
            x.column_mut(j).assign(&self.patches.column(pick));
        }
        Batch::new(x).expect("patches validated on load")
    }
}

/// Load an N x D patch tensor and return it as a D x N batch.
pub fn load_patches(path: &Path) -> Result<Batch> {
    let t = tensor::read_tensor(path)?;
    if t.dims.len() != 2 {
        return Err(Error::Format(format!(
            "patch file must be a 2-d tensor (N x D), got {} dims",
            t.dims.len()
        )));
    }
    let m = t.into_matrix()?;
    Batch::new(m.t().to_owned())
}

/// Persisted ZCA transform: out = (x - mean) W with W = V (L + eps)^{-1/2} V^T.
#[derive(Debug, Clone, PartialEq)]
pub struct ZcaTransform {
    pub mean: Array1<f64>,
    pub w: Array2<f64>,
    pub eps: f64,
}

/// Symmetric eigendecomposition via cyclic Jacobi rotations. Returns
/// (eigenvalues, eigenvector columns).
pub fn symmetric_eig(m: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Dim("eigendecomposition needs a square matrix".into()));
    }
    let mut a = m.clone();
    let mut v = Array2::eye(n);
    let scale = m.iter().map(|x| x.abs()).fold(0.0f64, f64::max).max(1.0);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[[i, j]] * a[[i, j]];
            }
        }
        if off.sqrt() < 1e-14 * scale * n as f64 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[[p, p]];
                let aqq = a[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eig = Array1::from_iter((0..n).map(|i| a[[i, i]]));
    Ok((eig, v))
}

/// ZCA-whiten an N x D patch matrix. `eps` regularizes small eigenvalues;
/// `None` uses 1e-2 times the mean eigenvalue.
pub fn whiten_zca(
    patches: &Array2<f64>,
    eps: Option<f64>,
) -> Result<(Array2<f64>, ZcaTransform)> {
    let n = patches.nrows();
    let d = patches.ncols();
    if n < d {
        return Err(Error::Config(format!(
            "insufficient patches for covariance estimate: {n} patches of dimension {d}"
        )));
    }
    if !patches.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("patches contain non-finite entries".into()));
    }
    let mean = patches.mean_axis(ndarray::Axis(0)).expect("n >= 1");
    let centered = patches - &mean.view().insert_axis(ndarray::Axis(0));
    let cov = centered.t().dot(&centered) / n as f64;
    let (eig, vecs) = symmetric_eig(&cov)?;
    let mean_eig = eig.sum() / d as f64;
    let eps = eps.unwrap_or(1e-2 * mean_eig.max(0.0));
    // W = V diag((l + eps)^(-1/2)) V^T
    let mut scaled = vecs.clone();
    for (mut col, &l) in scaled.columns_mut().into_iter().zip(eig.iter()) {
        let f = 1.0 / (l.max(0.0) + eps).sqrt();
        col.mapv_inplace(|v| v * f);
    }
    let w = scaled.dot(&vecs.t());
    let out = centered.dot(&w);
    Ok((out, ZcaTransform { mean, w, eps }))
}
