//! Toy datasets used as `x_0` distributions.
//!
//! Every kind is deterministic in its seed and roughly unit-scale:
//!
//! - `gaussian`: `x ~ N(mean, diag(var))`.
//! - `gaussian_mixture`: component `k` with probability `weights[k]`, then
//!   `N(means[k], diag(vars[k]))`.
//! - `two_moons`: with probability ½ the upper arc `(cos θ, sin θ)`,
//!   otherwise the lower arc `(1 - cos θ, 0.5 - sin θ)`, `θ ~ U[0, π]`; the
//!   point is shifted by `(-0.5, -0.25)` to centre the pair and isotropic
//!   `N(0, noise²)` is added.
//! - `swiss_roll_2d`: `θ = 1.5π (1 + 2u)`, `u ~ U[0, 1)`, point
//!   `θ (cos θ, sin θ) / 7` plus `N(0, noise²)`; the roll spans about `[-2, 2]`.
//! - `checkerboard`: uniform over the 8 dark cells of a 4×4 board on
//!   `[-1, 1]²` (cell `(i, j)` is dark when `i + j` is even), plus
//!   `N(0, noise²)`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::forward::RandomSource;
use crate::{Batch, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataKind {
    Gaussian {
        mean: Vec<f64>,
        var: Vec<f64>,
    },
    GaussianMixture {
        means: Vec<Vec<f64>>,
        vars: Vec<Vec<f64>>,
        weights: Vec<f64>,
    },
    TwoMoons {
        #[serde(default = "default_noise")]
        noise: f64,
    },
    #[serde(rename = "swiss_roll_2d")]
    SwissRoll2d {
        #[serde(default = "default_noise")]
        noise: f64,
    },
    Checkerboard {
        #[serde(default)]
        noise: f64,
    },
}

fn default_noise() -> f64 {
    0.05
}

/// A dataset: distribution, size and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    #[serde(flatten)]
    pub kind: DataKind,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

impl DataKind {
    pub fn dim(&self) -> usize {
        match self {
            DataKind::Gaussian { mean, .. } => mean.len(),
            DataKind::GaussianMixture { means, .. } => means.first().map_or(0, Vec::len),
            _ => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: &[f64]| v.iter().all(|&x| x > 0.0 && x.is_finite());
        match self {
            DataKind::Gaussian { mean, var } => {
                if mean.is_empty() || mean.len() != var.len() {
                    return Err(Error::config("data.mean and data.var must be non-empty and equally long"));
                }
                if !positive(var) {
                    return Err(Error::config("data.var entries must be positive"));
                }
            }
            DataKind::GaussianMixture { means, vars, weights } => {
                let dim = self.dim();
                if means.is_empty() || means.len() != vars.len() || means.len() != weights.len() {
                    return Err(Error::config("mixture means, vars and weights must have equal, non-zero length"));
                }
                if dim == 0 || means.iter().chain(vars).any(|v| v.len() != dim) {
                    return Err(Error::config("mixture components must share one positive dimension"));
                }
                if !vars.iter().all(|v| positive(v)) {
                    return Err(Error::config("mixture variances must be positive"));
                }
                if weights.iter().any(|&w| w.is_nan() || w < 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return Err(Error::config("mixture weights must be non-negative and sum to 1"));
                }
            }
            DataKind::TwoMoons { noise } | DataKind::SwissRoll2d { noise } | DataKind::Checkerboard { noise } => {
                if !(*noise >= 0.0 && noise.is_finite()) {
                    return Err(Error::config("data.noise must be >= 0"));
                }
            }
        }
        Ok(())
    }

    /// Draws `n` rows from the distribution using `rng`.
    pub fn sample(&self, n: usize, rng: &mut RandomSource) -> Result<Batch> {
        self.validate()?;
        let dim = self.dim();
        let mut out = Array2::zeros((n, dim));
        for mut row in out.rows_mut() {
            match self {
                DataKind::Gaussian { mean, var } => {
                    for j in 0..dim {
                        row[j] = mean[j] + var[j].sqrt() * rng.normal();
                    }
                }
                DataKind::GaussianMixture { means, vars, weights } => {
                    let k = pick(weights, rng.uniform());
                    for j in 0..dim {
                        row[j] = means[k][j] + vars[k][j].sqrt() * rng.normal();
                    }
                }
                DataKind::TwoMoons { noise } => {
                    let upper = rng.uniform() < 0.5;
                    let theta = std::f64::consts::PI * rng.uniform();
                    let (s, c) = theta.sin_cos();
                    let (x, y) = if upper { (c, s) } else { (1.0 - c, 0.5 - s) };
                    row[0] = x - 0.5 + noise * rng.normal();
                    row[1] = y - 0.25 + noise * rng.normal();
                }
                DataKind::SwissRoll2d { noise } => {
                    let theta = 1.5 * std::f64::consts::PI * (1.0 + 2.0 * rng.uniform());
                    let (s, c) = theta.sin_cos();
                    row[0] = theta * c / 7.0 + noise * rng.normal();
                    row[1] = theta * s / 7.0 + noise * rng.normal();
                }
                DataKind::Checkerboard { noise } => {
                    // dark cells: i + j even on a 4×4 grid
                    let cell = rng.below(8);
                    let i = cell / 2;
                    let j = 2 * (cell % 2) + (i % 2);
                    row[0] = -1.0 + 0.5 * (i as f64 + rng.uniform()) + noise * rng.normal();
                    row[1] = -1.0 + 0.5 * (j as f64 + rng.uniform()) + noise * rng.normal();
                }
            }
        }
        Ok(out)
    }
}

fn pick(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    weights.len() - 1
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("data.n must be >= 1"));
        }
        self.kind.validate()
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }
}

/// Generates the dataset described by `spec`, seeded by `spec.seed`.
pub fn generate(spec: &DatasetSpec) -> Result<Batch> {
    spec.validate()?;
    spec.kind.sample(spec.n, &mut RandomSource::new(spec.seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::batch_moments;

    fn spec(kind: DataKind, n: usize, seed: u64) -> DatasetSpec {
        DatasetSpec { kind, n, seed }
    }

    fn all_kinds() -> Vec<DataKind> {
        vec![
            DataKind::Gaussian { mean: vec![0.5, -1.0, 2.0], var: vec![0.2, 1.0, 3.0] },
            DataKind::GaussianMixture {
                means: vec![vec![-1.0, 0.0], vec![1.0, 0.5]],
                vars: vec![vec![0.1, 0.1], vec![0.2, 0.05]],
                weights: vec![0.3, 0.7],
            },
            DataKind::TwoMoons { noise: 0.05 },
            DataKind::SwissRoll2d { noise: 0.05 },
            DataKind::Checkerboard { noise: 0.0 },
        ]
    }

    #[test]
    fn deterministic_and_shaped() {
        for kind in all_kinds() {
            let a = generate(&spec(kind.clone(), 100, 3)).unwrap();
            let b = generate(&spec(kind.clone(), 100, 3)).unwrap();
            assert_eq!(a, b);
            assert_ne!(a, generate(&spec(kind.clone(), 100, 4)).unwrap());
            let one = generate(&spec(kind.clone(), 1, 0)).unwrap();
            assert_eq!(one.dim(), (1, kind.dim()));
            assert!(a.iter().all(|v| v.is_finite() && v.abs() < 10.0));
        }
    }

    #[test]
    fn gaussian_moments() {
        let mean = vec![0.5, -1.0, 2.0];
        let var = vec![0.2, 1.0, 3.0];
        let n = 100_000;
        let x = generate(&spec(DataKind::Gaussian { mean: mean.clone(), var: var.clone() }, n, 7)).unwrap();
        let m = batch_moments(x.view()).unwrap();
        for j in 0..3 {
            assert!((m.mean[j] - mean[j]).abs() < 4.0 * (var[j] / n as f64).sqrt());
            assert!((m.cov_diag[j] - var[j]).abs() < 4.0 * var[j] * (2.0 / n as f64).sqrt());
        }
    }

    #[test]
    fn mixture_proportions() {
        let w = [0.2, 0.5, 0.3];
        let kind = DataKind::GaussianMixture {
            means: vec![vec![-10.0], vec![0.0], vec![10.0]],
            vars: vec![vec![0.01], vec![0.01], vec![0.01]],
            weights: w.to_vec(),
        };
        let n = 50_000;
        let x = generate(&spec(kind, n, 1)).unwrap();
        let mut counts = [0usize; 3];
        for v in x.column(0) {
            counts[((v + 15.0) / 10.0) as usize] += 1;
        }
        for k in 0..3 {
            let p = counts[k] as f64 / n as f64;
            assert!((p - w[k]).abs() <= 4.0 * (w[k] * (1.0 - w[k]) / n as f64).sqrt(), "{k}: {p}");
        }
    }

    #[test]
    fn checkerboard_only_dark_cells() {
        let x = generate(&spec(DataKind::Checkerboard { noise: 0.0 }, 5000, 2)).unwrap();
        for r in x.rows() {
            let i = ((r[0] + 1.0) / 0.5).floor() as i64;
            let j = ((r[1] + 1.0) / 0.5).floor() as i64;
            assert!((0..4).contains(&i) && (0..4).contains(&j));
            assert_eq!((i + j) % 2, 0);
        }
    }

    #[test]
    fn validation() {
        assert!(generate(&spec(DataKind::Gaussian { mean: vec![0.0], var: vec![0.0] }, 5, 0)).is_err());
        assert!(generate(&spec(DataKind::TwoMoons { noise: 0.1 }, 0, 0)).is_err());
        let bad = DataKind::GaussianMixture {
            means: vec![vec![0.0], vec![1.0]],
            vars: vec![vec![1.0], vec![1.0]],
            weights: vec![0.5, 0.6],
        };
        assert!(generate(&spec(bad, 5, 0)).is_err());
    }
}
