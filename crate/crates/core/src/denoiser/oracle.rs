use ndarray::{Array1, ArrayView2, Zip};

use super::{check_input, AffineEps, Denoiser};
use crate::samplers::GaussianState;
use crate::schedule::NoiseSchedule;
use crate::{Batch, Error, Result};

/// Optimal noise predictor for data `x_0 ~ N(mu0, diag(var0))`.
///
/// Under `x_t = √ᾱ x_0 + √(1-ᾱ) ε` the pair `(ε, x_t)` is jointly Gaussian
/// with `Cov(ε, x_t) = √(1-ᾱ)` and `Var(x_t) = ᾱ var0 + 1 - ᾱ` per
/// coordinate, so
///
/// ```text
/// E[ε | x_t = x] = √(1-ᾱ) (x - √ᾱ mu0) / (ᾱ var0 + 1 - ᾱ)
/// ```
#[derive(Debug, Clone)]
pub struct GaussianOracle {
    mu0: Array1<f64>,
    var0: Array1<f64>,
    schedule: NoiseSchedule,
}

impl GaussianOracle {
    pub fn new(mu0: Vec<f64>, var0: Vec<f64>, schedule: NoiseSchedule) -> Result<Self> {
        if mu0.is_empty() || mu0.len() != var0.len() {
            return Err(Error::config(format!(
                "oracle mean/variance lengths differ or are empty ({} vs {})",
                mu0.len(),
                var0.len()
            )));
        }
        if var0.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::config("oracle variances must be positive and finite"));
        }
        Ok(Self { mu0: Array1::from(mu0), var0: Array1::from(var0), schedule })
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mu0
    }

    pub fn variance(&self) -> &Array1<f64> {
        &self.var0
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    /// The data distribution as a Gaussian state.
    pub fn data_state(&self) -> GaussianState {
        GaussianState::new(self.mu0.clone(), self.var0.clone())
    }
}

impl Denoiser for GaussianOracle {
    fn dim(&self) -> usize {
        self.mu0.len()
    }

    fn steps(&self) -> usize {
        self.schedule.steps()
    }

    fn predict_eps(&self, x: ArrayView2<'_, f64>, t: usize) -> Result<Batch> {
        check_input(&x, self.dim(), t, self.steps())?;
        let ab = self.schedule.alpha_bar(t)?;
        let (ra, rn) = (ab.sqrt(), (1.0 - ab).sqrt());
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            Zip::from(&mut row).and(&self.mu0).and(&self.var0).for_each(|v, &m, &s| {
                *v = rn * (*v - ra * m) / (ab * s + 1.0 - ab);
            });
        }
        Ok(out)
    }

    fn affine_form(&self, t: usize) -> Result<AffineEps> {
        if t == 0 || t > self.steps() {
            return Err(Error::index(format!("timestep {t} outside [1, {}]", self.steps())));
        }
        let ab = self.schedule.alpha_bar(t)?;
        let scale = self.var0.mapv(|v| (1.0 - ab).sqrt() / (ab * v + 1.0 - ab));
        let offset = Zip::from(&scale).and(&self.mu0).map_collect(|&a, &m| -a * ab.sqrt() * m);
        Ok(AffineEps { scale, offset })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::make_linear_schedule;
    use ndarray::{array, Array2};

    fn oracle() -> GaussianOracle {
        let s = make_linear_schedule(100, 1e-4, 0.02).unwrap();
        GaussianOracle::new(vec![0.5, -1.0], vec![0.3, 2.0], s).unwrap()
    }

    #[test]
    fn zero_at_marginal_mean() {
        let o = oracle();
        for t in [1, 37, 100] {
            let ab = o.schedule().alpha_bar(t).unwrap();
            let x = array![[0.5 * ab.sqrt(), -ab.sqrt()]];
            let e = o.predict_eps(x.view(), t).unwrap();
            assert!(e.iter().all(|v| v.abs() < 1e-15));
        }
    }

    #[test]
    fn tiny_variance_recovers_noise() {
        let s = make_linear_schedule(100, 1e-4, 0.02).unwrap();
        let o = GaussianOracle::new(vec![1.0], vec![1e-14], s.clone()).unwrap();
        let ab = s.alpha_bar(40).unwrap();
        let x = array![[0.3]];
        let got = o.predict_eps(x.view(), 40).unwrap()[[0, 0]];
        let want = (0.3 - ab.sqrt()) / (1.0 - ab).sqrt();
        assert!((got - want).abs() < 1e-10);
    }

    #[test]
    fn affine_form_agrees_and_collinear() {
        let o = oracle();
        let t = 63;
        let a = o.affine_form(t).unwrap();
        let x = Array2::from_shape_fn((5, 2), |(i, j)| i as f64 * 0.7 - j as f64);
        let e = o.predict_eps(x.view(), t).unwrap();
        for (row, erow) in x.rows().into_iter().zip(e.rows()) {
            for j in 0..2 {
                assert!((a.scale[j] * row[j] + a.offset[j] - erow[j]).abs() < 1e-14);
            }
        }
        // collinear inputs map to collinear outputs
        let p = array![[1.0, -2.0]];
        let q = array![[0.25, 3.5]];
        let e0 = o.predict_eps(p.view(), t).unwrap();
        let e1 = o.predict_eps(q.view(), t).unwrap();
        for l in [-0.5, 0.3, 1.7] {
            let x = &p * (1.0 - l) + &q * l;
            let el = o.predict_eps(x.view(), t).unwrap();
            let want = &e0 * (1.0 - l) + &e1 * l;
            assert!(el.iter().zip(want.iter()).all(|(a, b)| (a - b).abs() <= 1e-12));
        }
    }

    #[test]
    fn rejects_bad_input() {
        let o = oracle();
        let x = Array2::zeros((3, 3));
        assert!(matches!(o.predict_eps(x.view(), 5), Err(Error::Config(_))));
        let x = Array2::zeros((3, 2));
        assert!(matches!(o.predict_eps(x.view(), 0), Err(Error::Index(_))));
        assert!(matches!(o.predict_eps(x.view(), 101), Err(Error::Index(_))));
        let s = make_linear_schedule(10, 1e-4, 0.02).unwrap();
        assert!(GaussianOracle::new(vec![0.0], vec![0.0], s.clone()).is_err());
        assert!(GaussianOracle::new(vec![0.0, 1.0], vec![1.0], s).is_err());
    }
}
