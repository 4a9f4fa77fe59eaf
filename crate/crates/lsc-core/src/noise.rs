//! Counter-based seeded noise.
//!
//! Every Gaussian draw is addressed by the triple (seed, stream, step): the
//! generator for a step is re-keyed from scratch, so identical triples yield
//! identical draws regardless of history. This is what makes snapshot-resume
//! bit-exact — the noise consumed after a resume is indexed by absolute step,
//! not by how many draws happened before.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Logical stream identifiers, one per state tensor / purpose.
pub mod stream {
    pub const LATENT: u32 = 0;
    pub const LATENT_INIT: u32 = 1;
    pub const DICT_INIT: u32 = 2;
    pub const DATA_COEFF: u32 = 3;
    pub const DATA_NOISE: u32 = 4;
    pub const RESERVOIR: u32 = 5;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Deterministic noise source keyed by a single 64-bit seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseSource {
    seed: u64,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        NoiseSource { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fresh generator for (stream, step).
    pub fn rng(&self, stream: u32, step: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let a = splitmix64(self.seed ^ 0x6c73_635f_6e6f_6973);
        let b = splitmix64(a ^ u64::from(stream));
        let c = splitmix64(b ^ step);
        let d = splitmix64(c);
        key[0..8].copy_from_slice(&a.to_le_bytes());
        key[8..16].copy_from_slice(&b.to_le_bytes());
        key[16..24].copy_from_slice(&c.to_le_bytes());
        key[24..32].copy_from_slice(&d.to_le_bytes());
        ChaCha8Rng::from_seed(key)
    }

    /// Matrix of i.i.d. standard normals addressed by (stream, step).
    pub fn normal_matrix(&self, stream: u32, step: u64, rows: usize, cols: usize) -> Array2<f64> {
        let mut rng = self.rng(stream, step);
        Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
    }
}
