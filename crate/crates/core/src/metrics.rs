//! Distances between generated samples and reference data.
//!
//! FID and IS need a pretrained image network and have no meaning on toy
//! data. Here the quality axis is the exact Gaussian 2-Wasserstein distance
//! (when an output distribution is known in closed form) and three
//! sample-based distances: sliced Wasserstein, energy distance and an RBF
//! MMD.

use std::collections::BTreeMap;

use ndarray::{Array1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::forward::RandomSource;
use crate::samplers::{GaussianState, SamplerKind};
use crate::{Error, Result};

pub const DEFAULT_PROJECTIONS: usize = 128;

/// Metric names used in reports and CSV headers.
pub mod names {
    pub const SLICED_W: &str = "sliced_w";
    pub const ENERGY: &str = "energy";
    pub const MMD: &str = "mmd";
    pub const GAUSSIAN_W2: &str = "gaussian_w2";
    pub const ALL: [&str; 4] = [SLICED_W, ENERGY, MMD, GAUSSIAN_W2];
}

/// Metrics for one `(sampler, steps, seed)` run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub sampler: SamplerKind,
    pub steps: usize,
    pub cutoff: Option<usize>,
    pub cutoff_time: Option<usize>,
    pub seed: u64,
    /// Denoiser evaluations actually spent.
    pub nfe: usize,
    pub metrics: BTreeMap<String, f64>,
    pub wall_clock_ms: f64,
    /// Set when a metric came out non-finite.
    pub failed: bool,
}

impl MetricReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }
}

/// `W2(N(m1, diag v1), N(m2, diag v2)) = √(‖m1 - m2‖² + Σ (√v1 - √v2)²)`.
pub fn gaussian_w2(a: &GaussianState, b: &GaussianState) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::config(format!("dimension mismatch: {} vs {}", a.dim(), b.dim())));
    }
    let mean: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum();
    let cov: f64 = a
        .cov_diag
        .iter()
        .zip(&b.cov_diag)
        .map(|(x, y)| (x.max(0.0).sqrt() - y.max(0.0).sqrt()).powi(2))
        .sum();
    Ok((mean + cov).sqrt())
}

fn check_pair(a: &ArrayView2<'_, f64>, b: &ArrayView2<'_, f64>) -> Result<()> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::config("metric needs non-empty batches"));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::config(format!("dimension mismatch: {} vs {}", a.ncols(), b.ncols())));
    }
    Ok(())
}

/// Mean over `n_proj` random unit directions of the 1-D Wasserstein-1
/// distance between the projected samples.
///
/// Directions are drawn from `rng` first; if the batch sizes differ, the
/// larger batch is then subsampled without replacement to the smaller size.
pub fn sliced_wasserstein(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    n_proj: usize,
    rng: &mut RandomSource,
) -> Result<f64> {
    check_pair(&a, &b)?;
    if n_proj == 0 {
        return Err(Error::config("sliced_wasserstein needs at least one projection"));
    }
    let dim = a.ncols();
    let dirs: Vec<Array1<f64>> = (0..n_proj)
        .map(|_| loop {
            let v = Array1::from_shape_fn(dim, |_| rng.normal());
            let norm = v.dot(&v).sqrt();
            if norm > 1e-12 {
                break v / norm;
            }
        })
        .collect();

    let n = a.nrows().min(b.nrows());
    let subsample = |x: ArrayView2<'_, f64>, rng: &mut RandomSource| {
        if x.nrows() == n {
            return x.to_owned();
        }
        // partial Fisher–Yates
        let mut idx: Vec<usize> = (0..x.nrows()).collect();
        for i in 0..n {
            let j = i + rng.below(idx.len() - i);
            idx.swap(i, j);
        }
        let mut keep = idx[..n].to_vec();
        keep.sort_unstable();
        x.select(Axis(0), &keep)
    };
    let a = subsample(a, rng);
    let b = subsample(b, rng);

    let total: f64 = dirs
        .par_iter()
        .map(|d| {
            let mut pa = a.dot(d).to_vec();
            let mut pb = b.dot(d).to_vec();
            pa.sort_unstable_by(f64::total_cmp);
            pb.sort_unstable_by(f64::total_cmp);
            pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).sum::<f64>() / n as f64
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok(total / n_proj as f64)
}

fn row_dist(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Sum over all `(i, j)` of `f(a_i, b_j)`, skipping the diagonal when asked.
fn pair_sum(a: &ArrayView2<'_, f64>, b: &ArrayView2<'_, f64>, skip_diag: bool, f: impl Fn(f64) -> f64 + Sync) -> f64 {
    let per_row: Vec<f64> = (0..a.nrows())
        .into_par_iter()
        .map(|i| {
            let ai = a.row(i);
            let mut acc = 0.0;
            for (j, bj) in b.rows().into_iter().enumerate() {
                if !(skip_diag && i == j) {
                    acc += f(row_dist(ai, bj));
                }
            }
            acc
        })
        .collect();
    per_row.iter().sum()
}

/// `2 E‖a - b‖ - E‖a - a'‖ - E‖b - b'‖`, the within-sample terms as
/// U-statistics. Small negative values from rounding are clamped to zero.
pub fn energy_distance(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<f64> {
    check_pair(&a, &b)?;
    let (n, m) = (a.nrows() as f64, b.nrows() as f64);
    let cross = pair_sum(&a, &b, false, |d| d) / (n * m);
    let within = |x: &ArrayView2<'_, f64>, k: f64| {
        if x.nrows() < 2 {
            0.0
        } else {
            pair_sum(x, x, true, |d| d) / (k * (k - 1.0))
        }
    };
    let e = 2.0 * cross - within(&a, n) - within(&b, m);
    Ok(e.max(0.0))
}

/// Biased (V-statistic) squared MMD with kernel `exp(-‖x - y‖² / (2h²))`.
pub fn mmd_rbf(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, bandwidth: f64) -> Result<f64> {
    check_pair(&a, &b)?;
    if bandwidth.is_nan() || bandwidth <= 0.0 {
        return Err(Error::config("MMD bandwidth must be positive"));
    }
    let k = |d: f64| (-(d * d) / (2.0 * bandwidth * bandwidth)).exp();
    let (n, m) = (a.nrows() as f64, b.nrows() as f64);
    let v = pair_sum(&a, &a, false, k) / (n * n) + pair_sum(&b, &b, false, k) / (m * m)
        - 2.0 * pair_sum(&a, &b, false, k) / (n * m);
    Ok(v.max(0.0))
}

/// Sample mean and unbiased per-dimension variance.
pub fn batch_moments(a: ArrayView2<'_, f64>) -> Result<GaussianState> {
    if a.nrows() < 2 {
        return Err(Error::config("batch_moments needs at least two rows"));
    }
    let mean = a.mean_axis(Axis(0)).expect("non-empty");
    let var = a.var_axis(Axis(0), 1.0);
    Ok(GaussianState::new(mean, var))
}
