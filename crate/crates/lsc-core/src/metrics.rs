//! Evaluation quantities: histogram KL divergence to the prior, NL-MSE,
//! dictionary cosine recovery, activity estimation and norm tracking.

use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::model::{Dictionary, ModelParams};

/// Coefficients below this magnitude count as exactly zero; MAP solutions are
/// sparse only up to solver tolerance.
pub const ZERO_TOL: f64 = 1e-8;

/// Histogram of non-negative coefficients with a separate atom at zero; the
/// spike-and-slab prior has a point mass there that bins cannot see.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// Bin width; bin n covers [n*bin_width, (n+1)*bin_width), origin 0.
    pub bin_width: f64,
    pub counts: Vec<u64>,
    pub zero_atom: u64,
}

impl Histogram {
    /// Bin samples with slab support truncated at `s_max`; tail mass pools
    /// into the final bin.
    pub fn from_samples(samples: &[f64], bin_width: f64, s_max: f64) -> Result<Self> {
        if bin_width <= 0.0 {
            return Err(Error::Usage("bin width must be positive".into()));
        }
        let n_bins = (s_max / bin_width).ceil().max(1.0) as usize;
        let mut counts = vec![0u64; n_bins];
        let mut zero_atom = 0u64;
        for &s in samples {
            let m = s.abs();
            if m <= ZERO_TOL {
                zero_atom += 1;
            } else {
                let bin = ((m / bin_width) as usize).min(n_bins - 1);
                counts[bin] += 1;
            }
        }
        Ok(Histogram { bin_width, counts, zero_atom })
    }

    pub fn total(&self) -> u64 {
        self.zero_atom + self.counts.iter().sum::<u64>()
    }

    /// KL divergence from this histogram (as p) to another (as q), both read
    /// as empirical distributions over the same cells. Equal histograms give
    /// exactly zero.
    pub fn kl_to(&self, q: &Histogram) -> Result<f64> {
        if self.counts.len() != q.counts.len() || self.bin_width != q.bin_width {
            return Err(Error::Usage("histograms have different binning".into()));
        }
        let np = self.total() as f64;
        let nq = q.total() as f64;
        if np == 0.0 || nq == 0.0 {
            return Err(Error::Usage("empty histogram".into()));
        }
        let mut kl = 0.0;
        let cells = self
            .counts
            .iter()
            .zip(q.counts.iter())
            .chain(std::iter::once((&self.zero_atom, &q.zero_atom)));
        for (&cp, &cq) in cells {
            if cp == 0 {
                continue;
            }
            if cp == cq && np == nq {
                continue; // p log(p/p) = 0 exactly
            }
            let p = cp as f64 / np;
            let q = (cq as f64).max(0.5) / nq; // half-count floor keeps KL finite
            kl += p * (p / q).ln();
        }
        Ok(kl)
    }
}

/// Default bin width: about 30 slab bins over the bulk of Exponential(lambda).
pub fn default_bin_width(lambda: f64) -> f64 {
    0.1 / lambda
}

/// Slab support truncation: 99.9th percentile of Exponential(lambda).
pub fn slab_truncation(lambda: f64) -> f64 {
    (1000.0f64).ln() / lambda
}

/// KL divergence in nats from the spike-and-slab prior implied by
/// (lambda, u0) to the empirical distribution of a coefficient reservoir.
///
/// The prior side uses the closed-form exponential CDF scaled by pi plus the
/// zero atom (1 - pi); the empirical side uses additive smoothing
/// alpha = 1/total to stay finite.
pub fn kl_to_prior(samples: &[f64], p: &ModelParams, bin_width: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Usage("empty coefficient reservoir".into()));
    }
    if bin_width <= 0.0 {
        return Err(Error::Usage("bin width must be positive".into()));
    }
    let pi = (-p.lambda * p.u0).exp();
    let s_max = slab_truncation(p.lambda);
    let hist = Histogram::from_samples(samples, bin_width, s_max)?;
    let total = hist.total() as f64;
    let alpha = 1.0 / total;
    let cells = hist.counts.len() + 1;
    let norm = 1.0 + alpha * cells as f64;
    let q_of = |count: u64| (count as f64 / total + alpha) / norm;

    let mut kl = 0.0;
    // zero atom
    let p_zero = 1.0 - pi;
    if p_zero > 0.0 {
        kl += p_zero * (p_zero / q_of(hist.zero_atom)).ln();
    }
    // slab bins; final bin pools the tail
    let n_bins = hist.counts.len();
    for (n, &count) in hist.counts.iter().enumerate() {
        let lo = n as f64 * bin_width;
        let hi = (n + 1) as f64 * bin_width;
        let p_bin = if n + 1 == n_bins {
            pi * (-p.lambda * lo).exp()
        } else {
            pi * ((-p.lambda * lo).exp() - (-p.lambda * hi).exp())
        };
        if p_bin > 0.0 {
            kl += p_bin * (p_bin / q_of(count)).ln();
        }
    }
    Ok(kl)
}

/// Negative log of the mean squared per-dimension residual.
pub fn nl_mse(a: &Dictionary, s: &ArrayView2<f64>, x: &ArrayView2<f64>) -> Result<f64> {
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
    let resid = a.matrix().dot(s) - x;
    let n = x.ncols() as f64;
    let eps = (resid.iter().map(|v| v * v).sum::<f64>() / n / a.d() as f64).max(1e-300);
    Ok(-eps.ln())
}

/// Result of matching learned columns to ground-truth columns.
#[derive(Debug, Clone)]
pub struct RecoveryReport {
    pub mean_best_cosine: f64,
    /// (truth column, learned column, |cosine|) per matched pair.
    pub assignment: Vec<(usize, usize, f64)>,
}

/// Greedy maximum-|cosine| matching without replacement from truth columns to
/// learned columns. Sign- and scale-invariant.
pub fn dictionary_recovery(learned: &Dictionary, truth: &Dictionary) -> Result<RecoveryReport> {
    if truth.d() != learned.d() {
        return Err(Error::Dim(format!(
            "data dimensions differ: truth {}, learned {}",
            truth.d(),
            learned.d()
        )));
    }
    if truth.k() > learned.k() {
        return Err(Error::Dim(format!(
            "truth has more columns ({}) than learned ({})",
            truth.k(),
            learned.k()
        )));
    }
    let kt = truth.k();
    let kl = learned.k();
    let mut cos = vec![vec![0.0f64; kl]; kt];
    for (i, ti) in truth.matrix().columns().into_iter().enumerate() {
        let tn = ti.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (j, lj) in learned.matrix().columns().into_iter().enumerate() {
            let ln = lj.iter().map(|v| v * v).sum::<f64>().sqrt();
            let dot: f64 = ti.iter().zip(lj.iter()).map(|(a, b)| a * b).sum();
            cos[i][j] = if tn > 0.0 && ln > 0.0 { (dot / (tn * ln)).abs() } else { 0.0 };
        }
    }
    let mut used_t = vec![false; kt];
    let mut used_l = vec![false; kl];
    let mut assignment = Vec::with_capacity(kt);
    for _ in 0..kt {
        let mut best = (0usize, 0usize, -1.0f64);
        for i in 0..kt {
            if used_t[i] {
                continue;
            }
            for j in 0..kl {
                if used_l[j] {
                    continue;
                }
                if cos[i][j] > best.2 {
                    best = (i, j, cos[i][j]);
                }
            }
        }
        used_t[best.0] = true;
        used_l[best.1] = true;
        assignment.push(best);
    }
    let mean = assignment.iter().map(|(_, _, c)| c).sum::<f64>() / kt as f64;
    Ok(RecoveryReport { mean_best_cosine: mean, assignment })
}

/// Fraction of strictly nonzero coefficients (|s| > ZERO_TOL).
pub fn activity_estimate(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().filter(|s| s.abs() > ZERO_TOL).count() as f64 / samples.len() as f64
}

/// Per-column Euclidean norms of a dictionary.
pub fn column_norms(a: &Dictionary) -> Vec<f64> {
    a.column_norms()
}

/// One-sample Kolmogorov-Smirnov statistic against Exponential(lambda).
pub fn ks_statistic_exponential(samples: &mut [f64], lambda: f64) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &s) in samples.iter().enumerate() {
        let cdf = 1.0 - (-lambda * s).exp();
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((cdf - lo).abs()).max((hi - cdf).abs());
    }
    d
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic_two_sample(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut d: f64 = 0.0;
    let (mut i, mut j) = (0usize, 0usize);
    while i < a.len() && j < b.len() {
        // step both CDFs past all copies of the next value so ties (e.g. an
        // atom at zero) are compared after, not during, the jump
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Critical KS value at significance 0.01 for the one-sample test.
pub fn ks_critical_one_sample(n: usize, significance: f64) -> f64 {
    let c = if significance <= 0.01 { 1.628 } else { 1.358 };
    c / (n as f64).sqrt()
}

/// Critical KS value at significance 0.01 for the two-sample test.
pub fn ks_critical_two_sample(n: usize, m: usize, significance: f64) -> f64 {
    let c = if significance <= 0.01 { 1.628 } else { 1.358 };
    c * (((n + m) as f64) / (n as f64 * m as f64)).sqrt()
}
