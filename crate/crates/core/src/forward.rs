//! Seeded randomness and forward-process sampling.
//!
//! All Gaussian noise in the crate comes from the `chacha8-boxmuller-v1`
//! generator: a ChaCha8 keystream (via `rand_chacha`) read as little-endian
//! `u64` words, two words per Box–Muller pair
//!
//! ```text
//! u1 = ((w0 >> 11) + 1) · 2⁻⁵³        ∈ (0, 1]
//! u2 =  (w1 >> 11)      · 2⁻⁵³        ∈ [0, 1)
//! z0 = √(-2 ln u1) · cos(2π u2)
//! z1 = √(-2 ln u1) · sin(2π u2)
//! ```
//!
//! Two flavours exist. [`RandomSource`] is a sequential stream for training,
//! data generation and projections. [`NoiseField`] is counter-addressed: the
//! normals for `(stream, index)` are located at a fixed keystream offset, so
//! samplers can pull the noise for "plan step k, sample row i" in any order
//! and from any worker and get the same numbers.

use ndarray::{ArrayView2, Zip};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::schedule::{skip_coefficients, NoiseSchedule};
use crate::{Batch, Error, Result};

/// Name of the Gaussian generation algorithm.
pub const GAUSSIAN_ALGORITHM: &str = "chacha8-boxmuller-v1";

const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

/// SplitMix64 finalizer, used to derive child seeds.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn box_muller(w0: u64, w1: u64) -> (f64, f64) {
    let u1 = ((w0 >> 11) + 1) as f64 * TWO_POW_M53;
    let u2 = (w1 >> 11) as f64 * TWO_POW_M53;
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    (r * c, r * s)
}

/// Sequential seeded random source.
#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self { seed, rng: ChaCha8Rng::seed_from_u64(seed), spare: None }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child source. The child seed is
    /// `mix64(seed ^ mix64(label))` with `mix64` the SplitMix64 finalizer;
    /// it depends only on the parent seed, never on how much the parent has
    /// been consumed.
    pub fn derive(&self, label: u64) -> RandomSource {
        RandomSource::new(mix64(self.seed ^ mix64(label)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_M53
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn range_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.below(hi - lo + 1)
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let (w0, w1) = (self.next_u64(), self.next_u64());
        let (z0, z1) = box_muller(w0, w1);
        self.spare = Some(z1);
        z0
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.normal();
        }
    }

    /// `(rows, cols)` batch of standard normals, filled row-major.
    pub fn normal_batch(&mut self, rows: usize, cols: usize) -> Batch {
        let mut b = Batch::zeros((rows, cols));
        self.fill_normal(b.as_slice_mut().expect("fresh array is contiguous"));
        b
    }

    /// Counter-addressed noise keyed by the next word of this source.
    pub fn noise_field(&mut self) -> NoiseField {
        NoiseField { key: self.next_u64() }
    }
}

/// Counter-addressed Gaussian noise.
///
/// Index `i` of stream `s` owns `2·⌈d/2⌉` keystream words (`u64`) starting
/// at word `i · 2⌈d/2⌉` of ChaCha stream `s`, where `d` is the number of
/// normals per index. Odd `d` discards the final sine output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseField {
    key: u64,
}

impl NoiseField {
    pub fn new(key: u64) -> Self {
        Self { key }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    /// Fills `out` (length a multiple of `per_index`) with the normals of
    /// indices `first_index, first_index + 1, ...` of `stream`.
    pub fn fill(&self, stream: u64, first_index: u64, per_index: usize, out: &mut [f64]) {
        assert!(per_index > 0 && out.len().is_multiple_of(per_index), "bad noise block shape");
        let pairs = per_index.div_ceil(2);
        let mut rng = ChaCha8Rng::seed_from_u64(self.key);
        rng.set_stream(stream);
        // word_pos counts 32-bit words.
        rng.set_word_pos(first_index as u128 * pairs as u128 * 4);
        for row in out.chunks_exact_mut(per_index) {
            for chunk in row.chunks_mut(2) {
                let (z0, z1) = box_muller(rng.next_u64(), rng.next_u64());
                chunk[0] = z0;
                if let Some(c) = chunk.get_mut(1) {
                    *c = z1;
                }
            }
        }
    }
}

fn check_batch(x: &ArrayView2<'_, f64>, other: &ArrayView2<'_, f64>) -> Result<()> {
    if x.shape() != other.shape() {
        return Err(Error::config(format!(
            "batch shape mismatch: {:?} vs {:?}",
            x.shape(),
            other.shape()
        )));
    }
    Ok(())
}

/// Samples `x_t = √ᾱ_t x_0 + √(1-ᾱ_t) ε` and returns `(x_t, ε)`.
///
/// `t = 0` is accepted and returns `x_0` unchanged (the noise is still drawn).
pub fn diffuse_from_x0(
    x0: ArrayView2<'_, f64>,
    t: usize,
    s: &NoiseSchedule,
    rng: &mut RandomSource,
) -> Result<(Batch, Batch)> {
    let ab = s.alpha_bar(t)?;
    let eps = rng.normal_batch(x0.nrows(), x0.ncols());
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let xt = Zip::from(&x0).and(&eps).map_collect(|&x, &e| a * x + b * e);
    Ok((xt, eps))
}

/// Samples `q(x_t | x_{t-m})` given a batch at timestep `t - m`.
pub fn diffuse_skip(
    x_prev: ArrayView2<'_, f64>,
    t: usize,
    m: usize,
    s: &NoiseSchedule,
    rng: &mut RandomSource,
) -> Result<Batch> {
    let c = skip_coefficients(s, t, m)?;
    let eps = rng.normal_batch(x_prev.nrows(), x_prev.ncols());
    let sd = c.fwd_var.sqrt();
    Ok(Zip::from(&x_prev).and(&eps).map_collect(|&x, &e| c.fwd_mean_scale * x + sd * e))
}

/// Samples the posterior `q(x_{t-m} | x_t, x_0)`.
pub fn posterior_sample(
    x_t: ArrayView2<'_, f64>,
    x0: ArrayView2<'_, f64>,
    t: usize,
    m: usize,
    s: &NoiseSchedule,
    rng: &mut RandomSource,
) -> Result<Batch> {
    check_batch(&x_t, &x0)?;
    let c = skip_coefficients(s, t, m)?;
    let eps = rng.normal_batch(x_t.nrows(), x_t.ncols());
    let sd = c.post_var.sqrt();
    Ok(Zip::from(&x_t)
        .and(&x0)
        .and(&eps)
        .map_collect(|&xt, &x0, &e| c.post_coef_xt * xt + c.post_coef_x0 * x0 + sd * e))
}
