//! Generative model, energy functions, priors, threshold nonlinearities and
//! their analytic gradients.
//!
//! The model assumes data `x = A s + n` with Gaussian noise of std `sigma`.
//! Two parameterizations are supported: a signed coefficient matrix `S` under
//! a Laplacian (L1) prior, and auxiliary variables `U` under the L0
//! spike-and-slab prior, where coefficients are `s = f(|u|)` with a biased
//! ReLU `f`.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// All scalar model and dynamics parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Noise standard deviation (data units).
    pub sigma: f64,
    /// Sparsity rate of the prior (1 / coefficient units).
    pub lambda: f64,
    /// Threshold of the biased ReLU (coefficient units).
    pub u0: f64,
    /// Unitless temperature of the Langevin bath.
    pub temperature: f64,
    /// Latent time constant.
    pub tau_s: f64,
    /// Dictionary time constant.
    pub tau_a: f64,
    /// Threshold time constant.
    pub tau_u0: f64,
    /// Data-presentation interval.
    pub tau_x: f64,
    /// Integration step.
    pub dt: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        // tau_a >> tau_s so the dictionary sees posterior averages.
        ModelParams {
            sigma: 0.5,
            lambda: 1.0,
            u0: 0.0,
            temperature: 1.0,
            tau_s: 1.0,
            tau_a: 100.0,
            tau_u0: 100.0,
            tau_x: 10.0,
            dt: 0.01,
        }
    }
}

impl ModelParams {
    /// Check hard invariants. Returns soft warnings (two-timescale assumption)
    /// without rejecting them.
    pub fn validate(&self) -> Result<Vec<String>> {
        if !(self.sigma > 0.0) {
            return Err(Error::Config(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::Config(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.u0 >= 0.0) {
            return Err(Error::Config(format!("u0 must be >= 0, got {}", self.u0)));
        }
        if !(self.temperature >= 0.0) {
            return Err(Error::Config(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if !(self.dt > 0.0 && self.dt < self.tau_s) {
            return Err(Error::Config(format!(
                "dt must satisfy 0 < dt < tau_s, got dt={} tau_s={}",
                self.dt, self.tau_s
            )));
        }
        let mut warnings = Vec::new();
        if self.tau_a < self.tau_s {
            warnings.push(format!(
                "tau_a ({}) < tau_s ({}): two-timescale assumption violated",
                self.tau_a, self.tau_s
            ));
        }
        Ok(warnings)
    }

    /// Activation probability implied by (lambda, u0): pi = exp(-lambda * u0).
    pub fn pi(&self) -> f64 {
        (-self.lambda * self.u0).exp()
    }

    /// Set u0 from a target activation probability via u0 = -ln(pi)/lambda.
    pub fn set_pi(&mut self, pi: f64) -> Result<()> {
        if !(pi > 0.0 && pi <= 1.0) {
            return Err(Error::Config(format!("pi must be in (0, 1], got {pi}")));
        }
        self.u0 = -pi.ln() / self.lambda;
        Ok(())
    }
}

/// The D x K dictionary matrix with per-column norm bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    a: Array2<f64>,
}

impl Dictionary {
    pub fn new(a: Array2<f64>) -> Result<Self> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(Error::Dim(format!(
                "dictionary must be at least 1x1, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if !a.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("dictionary contains non-finite entries".into()));
        }
        Ok(Dictionary { a })
    }

    pub fn d(&self) -> usize {
        self.a.nrows()
    }

    pub fn k(&self) -> usize {
        self.a.ncols()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.a
    }

    pub fn matrix_mut(&mut self) -> &mut Array2<f64> {
        &mut self.a
    }

    pub fn into_matrix(self) -> Array2<f64> {
        self.a
    }

    /// Rescale every column to unit Euclidean norm. Zero columns are left as is.
    pub fn normalize(&mut self) {
        for mut col in self.a.columns_mut() {
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                col.mapv_inplace(|v| v / norm);
            }
        }
    }

    /// Per-column Euclidean norms.
    pub fn column_norms(&self) -> Vec<f64> {
        self.a
            .columns()
            .into_iter()
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }
}

/// Latent state of a batch: auxiliary matrix U (K x N) and derived
/// coefficients S (K x N).
///
/// For L0 solvers `s = f(|u|)` holds at all times; for L1 solvers `s` is the
/// free variable and `u` is either unused (DSC/SSC) or the LCA internal state.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub u: Array2<f64>,
    pub s: Array2<f64>,
}

impl LatentState {
    /// L0 state: derive s from u through the biased ReLU.
    pub fn from_u(u: Array2<f64>, u0: f64) -> Self {
        let s = threshold_f_matrix(&u.view(), u0);
        LatentState { u, s }
    }

    /// L1 state: s is free, u mirrors it.
    pub fn from_s(s: Array2<f64>) -> Self {
        LatentState { u: s.clone(), s }
    }

    pub fn k(&self) -> usize {
        self.s.nrows()
    }

    pub fn n(&self) -> usize {
        self.s.ncols()
    }
}

/// A data batch X (D x N) plus generation metadata when synthetic.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Array2<f64>,
    pub ground_truth_s: Option<Array2<f64>>,
    /// Identifier of the generating configuration, when known.
    pub generator: Option<String>,
}

impl Batch {
    pub fn new(x: Array2<f64>) -> Result<Self> {
        if x.ncols() == 0 {
            return Err(Error::Dim("batch must contain at least one column".into()));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("batch contains non-finite entries".into()));
        }
        Ok(Batch { x, ground_truth_s: None, generator: None })
    }

    pub fn d(&self) -> usize {
        self.x.nrows()
    }

    pub fn n(&self) -> usize {
        self.x.ncols()
    }
}

/// Reconstruction / sparsity split of the batch energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBreakdown {
    pub recon: f64,
    pub sparsity: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    fn new(recon: f64, sparsity: f64) -> Self {
        EnergyBreakdown { recon, sparsity, total: recon + sparsity }
    }
}

/// sign with the kink convention sign(0) = 0.
#[inline]
pub fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Heaviside with the kink convention theta(0) = 1, keeping f continuous from
/// the active side.
#[inline]
pub fn heaviside(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Biased ReLU on magnitudes: 0 for |u| < u0, |u| - u0 otherwise.
#[inline]
pub fn threshold_f(u: f64, u0: f64) -> f64 {
    let m = u.abs();
    if m < u0 {
        0.0
    } else {
        m - u0
    }
}

/// Elementwise `threshold_f`.
pub fn threshold_f_matrix(u: &ArrayView2<f64>, u0: f64) -> Array2<f64> {
    u.mapv(|v| threshold_f(v, u0))
}

/// Signed soft threshold used by LCA: 0 for |u| < lambda, sign(u)(|u| - lambda)
/// otherwise.
#[inline]
pub fn threshold_g_lca(u: f64, lambda: f64) -> f64 {
    let m = u.abs();
    if m < lambda {
        0.0
    } else {
        sign(u) * (m - lambda)
    }
}

/// Elementwise `threshold_g_lca`.
pub fn threshold_g_lca_matrix(u: &ArrayView2<f64>, lambda: f64) -> Array2<f64> {
    u.mapv(|v| threshold_g_lca(v, lambda))
}

fn check_shapes(a: &Dictionary, s: &ArrayView2<f64>, x: &ArrayView2<f64>) -> Result<()> {
    if s.nrows() != a.k() || x.nrows() != a.d() || s.ncols() != x.ncols() {
        return Err(Error::Dim(format!(
            "incompatible shapes: A {}x{}, S {}x{}, X {}x{}",
            a.d(),
            a.k(),
            s.nrows(),
            s.ncols(),
            x.nrows(),
            x.ncols()
        )));
    }
    Ok(())
}

fn check_finite(name: &str, m: &ArrayView2<f64>) -> Result<()> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric(format!("{name} contains non-finite entries")));
    }
    Ok(())
}

/// Batch energy under the L1 (Laplacian) prior:
/// recon = ||X - A S||_F^2 / (2 sigma^2), sparsity = lambda * sum |s_ij|.
pub fn energy_l1(
    a: &Dictionary,
    s: &ArrayView2<f64>,
    x: &ArrayView2<f64>,
    p: &ModelParams,
) -> Result<EnergyBreakdown> {
    check_shapes(a, s, x)?;
    check_finite("S", s)?;
    check_finite("X", x)?;
    let resid = a.matrix().dot(s) - x;
    let recon = resid.iter().map(|v| v * v).sum::<f64>() / (2.0 * p.sigma * p.sigma);
    let sparsity = p.lambda * s.iter().map(|v| v.abs()).sum::<f64>();
    Ok(EnergyBreakdown::new(recon, sparsity))
}

/// Batch energy under the L0 prior, written in the auxiliary variables:
/// recon = ||X - A f(|U|)||_F^2 / (2 sigma^2), sparsity = lambda * ||U||_1.
pub fn energy_l0(
    a: &Dictionary,
    u: &ArrayView2<f64>,
    x: &ArrayView2<f64>,
    p: &ModelParams,
) -> Result<EnergyBreakdown> {
    check_shapes(a, u, x)?;
    check_finite("U", u)?;
    check_finite("X", x)?;
    let s = threshold_f_matrix(u, p.u0);
    let resid = a.matrix().dot(&s) - x;
    let recon = resid.iter().map(|v| v * v).sum::<f64>() / (2.0 * p.sigma * p.sigma);
    let sparsity = p.lambda * u.iter().map(|v| v.abs()).sum::<f64>();
    Ok(EnergyBreakdown::new(recon, sparsity))
}

/// Gradient of the L1 batch energy with respect to S:
/// A^T (A S - X) / sigma^2 + lambda * sign(S). Descent steps use the negation.
pub fn grad_s_l1(
    a: &Dictionary,
    s: &ArrayView2<f64>,
    x: &ArrayView2<f64>,
    p: &ModelParams,
) -> Result<Array2<f64>> {
    check_shapes(a, s, x)?;
    let resid = a.matrix().dot(s) - x;
    let mut g = a.matrix().t().dot(&resid) / (p.sigma * p.sigma);
    g.zip_mut_with(s, |gi, &si| *gi += p.lambda * sign(si));
    Ok(g)
}

/// Exact gradient of the L0 batch energy with respect to U:
/// sign(u) .* theta(|u| - u0) .* [A^T (A f(|u|) - X)] / sigma^2 + lambda * sign(u).
pub fn grad_u_l0(
    a: &Dictionary,
    u: &ArrayView2<f64>,
    x: &ArrayView2<f64>,
    p: &ModelParams,
) -> Result<Array2<f64>> {
    check_shapes(a, u, x)?;
    let s = threshold_f_matrix(u, p.u0);
    let resid = a.matrix().dot(&s) - x;
    let mut g = a.matrix().t().dot(&resid) / (p.sigma * p.sigma);
    g.zip_mut_with(u, |gi, &ui| {
        let sg = sign(ui);
        *gi = sg * heaviside(ui.abs() - p.u0) * *gi + p.lambda * sg;
    });
    Ok(g)
}

/// Gradient of the batch energy with respect to A: (A S - X) S^T / sigma^2,
/// summed over the batch. Learning steps negate and divide by N.
pub fn grad_a(
    a: &Dictionary,
    s: &ArrayView2<f64>,
    x: &ArrayView2<f64>,
    p: &ModelParams,
) -> Result<Array2<f64>> {
    check_shapes(a, s, x)?;
    let resid = a.matrix().dot(s) - x;
    Ok(resid.dot(&s.t()) / (p.sigma * p.sigma))
}

/// Batch-mean of -dE/du0: sum over active units of A^T (A s - x) / sigma^2.
/// The threshold update is u0 <- u0 + (dt/tau_u0) * grad_u0.
pub fn grad_u0(
    a: &Dictionary,
    s: &ArrayView2<f64>,
    x: &ArrayView2<f64>,
    p: &ModelParams,
) -> Result<f64> {
    check_shapes(a, s, x)?;
    let resid = a.matrix().dot(s) - x;
    let corr = a.matrix().t().dot(&resid) / (p.sigma * p.sigma);
    let mut total = 0.0;
    for (c, &si) in corr.iter().zip(s.iter()) {
        if si > 0.0 {
            total += c;
        }
    }
    Ok(total / s.ncols() as f64)
}

/// Likelihood-ascent direction for sigma: (1/D) mean ||x - A s||^2 - sigma^2.
pub fn grad_sigma(
    a: &Dictionary,
    s: &ArrayView2<f64>,
    x: &ArrayView2<f64>,
    p: &ModelParams,
) -> Result<f64> {
    check_shapes(a, s, x)?;
    let resid = a.matrix().dot(s) - x;
    let mean_sq = resid.iter().map(|v| v * v).sum::<f64>() / x.ncols() as f64;
    Ok(mean_sq / a.d() as f64 - p.sigma * p.sigma)
}

/// Likelihood-ascent direction for lambda with C(s) = |s|:
/// <|s|>_prior - (1/K) mean sum |s_i|, with <|s|> = 1/lambda for the Laplacian
/// slab. Zero at stationarity, positive when coefficients are smaller than the
/// prior expects.
pub fn grad_lambda_l1(s: &ArrayView2<f64>, p: &ModelParams) -> Result<f64> {
    if p.lambda <= 0.0 {
        return Err(Error::Config("lambda must be positive".into()));
    }
    let mean_abs =
        s.iter().map(|v| v.abs()).sum::<f64>() / (s.nrows() as f64 * s.ncols() as f64);
    Ok(1.0 / p.lambda - mean_abs)
}

/// Spike-and-slab prior components implied by (lambda, u0):
/// activation probability pi = exp(-lambda u0) and slab rate lambda.
pub fn prior_l0_pdf_components(p: &ModelParams) -> (f64, f64) {
    ((-p.lambda * p.u0).exp(), p.lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array2};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn(d: usize, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((d, k), |_| rng.sample(StandardNormal))
    }

    fn params() -> ModelParams {
        ModelParams { sigma: 0.5, lambda: 1.0, u0: 0.7, ..ModelParams::default() }
    }

    #[test]
    fn threshold_f_cases() {
        assert_eq!(threshold_f(0.5, 1.0), 0.0);
        assert_eq!(threshold_f(-2.0, 1.0), 1.0);
        assert_eq!(threshold_f(-0.3, 0.0), 0.3);
        assert_eq!(threshold_f(1.0, 1.0), 0.0); // boundary: |u| - u0 = 0
    }

    #[test]
    fn threshold_g_cases() {
        assert_eq!(threshold_g_lca(0.5, 1.0), 0.0);
        assert_eq!(threshold_g_lca(-3.0, 1.0), -2.0);
        assert_eq!(threshold_g_lca(0.7, 0.0), 0.7);
        assert_eq!(threshold_g_lca(-0.7, 0.0), -0.7);
    }

    #[test]
    fn energy_l1_zero_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Dictionary::new(randn(4, 3, &mut rng)).unwrap();
        let x = randn(4, 2, &mut rng);
        let s = Array2::zeros((3, 2));
        let p = params();
        let e = energy_l1(&a, &s.view(), &x.view(), &p).unwrap();
        let expect = x.iter().map(|v| v * v).sum::<f64>() / (2.0 * p.sigma * p.sigma);
        assert!((e.recon - expect).abs() < 1e-12);
        assert_eq!(e.sparsity, 0.0);
        assert_eq!(e.total, e.recon + e.sparsity);
    }

    #[test]
    fn energy_l1_perfect_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Dictionary::new(randn(4, 3, &mut rng)).unwrap();
        let s = randn(3, 2, &mut rng).mapv(f64::abs);
        let x = a.matrix().dot(&s);
        let p = params();
        let e = energy_l1(&a, &s.view(), &x.view(), &p).unwrap();
        assert!(e.recon < 1e-20);
        let expect = p.lambda * s.sum();
        assert!((e.sparsity - expect).abs() < 1e-12);
    }

    /// Independent scalar-loop oracle for the L1 batch energy.
    fn energy_l1_loop(a: &Array2<f64>, s: &Array2<f64>, x: &Array2<f64>, p: &ModelParams) -> f64 {
        let (d, k) = (a.nrows(), a.ncols());
        let n = x.ncols();
        let mut recon = 0.0;
        for nn in 0..n {
            for dd in 0..d {
                let mut acc = 0.0;
                for kk in 0..k {
                    acc += a[[dd, kk]] * s[[kk, nn]];
                }
                let r = x[[dd, nn]] - acc;
                recon += r * r;
            }
        }
        let mut sparsity = 0.0;
        for nn in 0..n {
            for kk in 0..k {
                sparsity += s[[kk, nn]].abs();
            }
        }
        recon / (2.0 * p.sigma * p.sigma) + p.lambda * sparsity
    }

    #[test]
    fn energy_l1_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Dictionary::new(randn(4, 3, &mut rng)).unwrap();
        let s = randn(3, 2, &mut rng);
        let x = randn(4, 2, &mut rng);
        let p = params();
        let e = energy_l1(&a, &s.view(), &x.view(), &p).unwrap();
        let oracle = energy_l1_loop(a.matrix(), &s, &x, &p);
        assert!((e.total - oracle).abs() < 1e-12 * oracle.abs().max(1.0));
    }

    #[test]
    fn energy_l0_all_subthreshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Dictionary::new(randn(4, 3, &mut rng)).unwrap();
        let x = randn(4, 2, &mut rng);
        let p = ModelParams { u0: 10.0, ..params() };
        let u = randn(3, 2, &mut rng); // |u| < 10 with overwhelming margin
        let e = energy_l0(&a, &u.view(), &x.view(), &p).unwrap();
        let expect = x.iter().map(|v| v * v).sum::<f64>() / (2.0 * p.sigma * p.sigma);
        assert!((e.recon - expect).abs() < 1e-12);
    }

    #[test]
    fn energy_l0_degenerates_to_l1_at_zero_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Dictionary::new(randn(4, 3, &mut rng)).unwrap();
        let x = randn(4, 2, &mut rng);
        let u = randn(3, 2, &mut rng).mapv(f64::abs);
        let p = ModelParams { u0: 0.0, ..params() };
        let e0 = energy_l0(&a, &u.view(), &x.view(), &p).unwrap();
        let e1 = energy_l1(&a, &u.view(), &x.view(), &p).unwrap();
        assert!((e0.total - e1.total).abs() < 1e-12);
    }

    #[test]
    fn energy_l0_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = Dictionary::new(randn(4, 3, &mut rng)).unwrap();
        let u = randn(3, 2, &mut rng);
        let x = randn(4, 2, &mut rng);
        let p = params();
        let e = energy_l0(&a, &u.view(), &x.view(), &p).unwrap();
        // scalar oracle: recon through f(|u|), sparsity on |u|
        let s = u.mapv(|v| threshold_f(v, p.u0));
        let recon_oracle = {
            let mut acc = 0.0;
            for nn in 0..2 {
                for dd in 0..4 {
                    let mut pred = 0.0;
                    for kk in 0..3 {
                        pred += a.matrix()[[dd, kk]] * s[[kk, nn]];
                    }
                    let r = x[[dd, nn]] - pred;
                    acc += r * r;
                }
            }
            acc / (2.0 * p.sigma * p.sigma)
        };
        let spars_oracle = p.lambda * u.iter().map(|v| v.abs()).sum::<f64>();
        assert!((e.recon - recon_oracle).abs() < 1e-12 * recon_oracle.max(1.0));
        assert!((e.sparsity - spars_oracle).abs() < 1e-12 * spars_oracle.max(1.0));
    }

    #[test]
    fn grad_s_l1_zero_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = Dictionary::new(randn(4, 3, &mut rng)).unwrap();
        let s = randn(3, 2, &mut rng).mapv(f64::abs) + 0.1;
        let x = a.matrix().dot(&s);
        let p = params();
        let g = grad_s_l1(&a, &s.view(), &x.view(), &p).unwrap();
        for v in g.iter() {
            assert!((v - p.lambda).abs() < 1e-10);
        }
    }

    #[test]
    fn grad_s_l1_large_sigma_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = Dictionary::new(randn(4, 3, &mut rng)).unwrap();
        let s = randn(3, 2, &mut rng);
        let x = randn(4, 2, &mut rng);
        let p = ModelParams { sigma: 1e9, ..params() };
        let g = grad_s_l1(&a, &s.view(), &x.view(), &p).unwrap();
        for (gi, &si) in g.iter().zip(s.iter()) {
            assert!((gi - p.lambda * sign(si)).abs() < 1e-8);
        }
    }

    #[test]
    fn grad_u_l0_subthreshold_plateau() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = Dictionary::new(randn(4, 3, &mut rng)).unwrap();
        let x = randn(4, 2, &mut rng);
        let p = ModelParams { u0: 5.0, ..params() };
        let u = randn(3, 2, &mut rng).mapv(|v| v.abs() * 0.1 + 0.01);
        let g = grad_u_l0(&a, &u.view(), &x.view(), &p).unwrap();
        for v in g.iter() {
            assert!((v - p.lambda).abs() < 1e-12);
        }
    }

    #[test]
    fn grad_u_l0_reduces_to_l1() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = Dictionary::new(randn(4, 3, &mut rng)).unwrap();
        let x = randn(4, 2, &mut rng);
        let u = randn(3, 2, &mut rng).mapv(f64::abs) + 0.1;
        let p = ModelParams { u0: 0.0, ..params() };
        let g0 = grad_u_l0(&a, &u.view(), &x.view(), &p).unwrap();
        let g1 = grad_s_l1(&a, &u.view(), &x.view(), &p).unwrap();
        for (a, b) in g0.iter().zip(g1.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn grad_a_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = Dictionary::new(randn(4, 3, &mut rng)).unwrap();
        let p = params();
        let s0 = Array2::zeros((3, 2));
        let x = randn(4, 2, &mut rng);
        let g = grad_a(&a, &s0.view(), &x.view(), &p).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));

        let s = randn(3, 2, &mut rng);
        let x_eq = a.matrix().dot(&s);
        let g = grad_a(&a, &s.view(), &x_eq.view(), &p).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn grad_u0_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = Dictionary::new(randn(4, 3, &mut rng)).unwrap();
        let p = params();
        let s0 = Array2::zeros((3, 2));
        let x = randn(4, 2, &mut rng);
        assert_eq!(grad_u0(&a, &s0.view(), &x.view(), &p).unwrap(), 0.0);

        let u = randn(3, 2, &mut rng).mapv(|v| v.abs() + p.u0 + 0.1);
        let s = threshold_f_matrix(&u.view(), p.u0);
        let x_eq = a.matrix().dot(&s);
        let g = grad_u0(&a, &s.view(), &x_eq.view(), &p).unwrap();
        assert!(g.abs() < 1e-12);
    }

    #[test]
    fn grad_sigma_trivial_cases() {
        let a = Dictionary::new(arr2(&[[1.0], [0.0]])).unwrap();
        let s = arr2(&[[1.0]]);
        // residual exactly sigma per component
        let p = ModelParams { sigma: 0.5, ..params() };
        let x = arr2(&[[1.0 + p.sigma], [p.sigma]]);
        let g = grad_sigma(&a, &s.view(), &x.view(), &p).unwrap();
        assert!(g.abs() < 1e-12);

        // zero residual, sigma = 1 -> gradient = -1
        let p1 = ModelParams { sigma: 1.0, ..params() };
        let x0 = arr2(&[[1.0], [0.0]]);
        let g = grad_sigma(&a, &s.view(), &x0.view(), &p1).unwrap();
        assert!((g + 1.0).abs() < 1e-12);
    }

    #[test]
    fn grad_lambda_laplacian_draws_vanish() {
        // s ~ Laplacian(lambda): mean |s| = 1/lambda, so the gradient should
        // vanish within Monte Carlo error at 1e6 draws.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let lambda = 1.7;
        let n = 1_000_000usize;
        let s = Array2::from_shape_fn((1, n), |_| {
            let u: f64 = rng.gen_range(1e-300..1.0);
            let mag = -u.ln() / lambda;
            if rng.gen::<bool>() {
                mag
            } else {
                -mag
            }
        });
        let p = ModelParams { lambda, ..params() };
        let g = grad_lambda_l1(&s.view(), &p).unwrap();
        // SE of mean |s| is (1/lambda)/sqrt(n)
        let se = (1.0 / lambda) / (n as f64).sqrt();
        assert!(g.abs() < 3.0 * se, "grad_lambda = {g}, 3 SE = {}", 3.0 * se);
    }

    #[test]
    fn prior_components() {
        let p = ModelParams { lambda: 1.0, u0: 0.0, ..params() };
        assert_eq!(prior_l0_pdf_components(&p), (1.0, 1.0));

        let mut p = ModelParams { lambda: 1.0, ..params() };
        p.set_pi(0.5).unwrap();
        assert!((p.u0 - std::f64::consts::LN_2).abs() < 1e-12);
        let (pi, _) = prior_l0_pdf_components(&p);
        assert!((pi - 0.5).abs() < 1e-12);

        p.set_pi(0.3).unwrap();
        assert!((p.u0 - 1.2039728043259361).abs() < 1e-10);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let a = Dictionary::new(arr2(&[[1.0, 0.0], [0.0, 1.0]])).unwrap();
        let s = Array2::<f64>::zeros((3, 2));
        let x = Array2::<f64>::zeros((2, 2));
        assert!(matches!(
            energy_l1(&a, &s.view(), &x.view(), &params()),
            Err(Error::Dim(_))
        ));
        assert!(matches!(
            grad_s_l1(&a, &s.view(), &x.view(), &params()),
            Err(Error::Dim(_))
        ));
    }

    #[test]
    fn non_finite_input_is_reported() {
        let a = Dictionary::new(arr2(&[[1.0], [0.0]])).unwrap();
        let s = arr2(&[[f64::NAN]]);
        let x = Array2::<f64>::zeros((2, 1));
        assert!(matches!(
            energy_l1(&a, &s.view(), &x.view(), &params()),
            Err(Error::Numeric(_))
        ));
    }
}
