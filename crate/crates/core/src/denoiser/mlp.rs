use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::{check_input, Denoiser};
use crate::forward::RandomSource;
use crate::{Batch, Error, Result};

/// Highest angular frequency of the time embedding, in units of `t/T`.
const MAX_FREQUENCY: f64 = 1000.0;

/// Sinusoidal features of `τ = t/T`: for `k < E/2`,
/// `ω_k = 1000^{k/(E/2 - 1)}` and the features are `sin(ω_k τ)` followed by
/// `cos(ω_k τ)` (all sines first, then all cosines).
pub fn time_embedding(t: usize, steps: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let tau = t as f64 / steps as f64;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let w = if half > 1 { MAX_FREQUENCY.powf(k as f64 / (half - 1) as f64) } else { 1.0 };
        let (s, c) = (w * tau).sin_cos();
        out[k] = s;
        out[half + k] = c;
    }
    out
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[inline]
fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

#[inline]
fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

#[derive(Debug, Clone, PartialEq)]
pub(super) struct Dense {
    /// `(out, in)`
    pub(super) weight: Array2<f64>,
    pub(super) bias: Array1<f64>,
}

/// Fully connected ε-predictor with SiLU hidden activations.
///
/// `widths = [d, h_1, ..., h_k, d]`. The input layer sees the `d` data
/// coordinates concatenated with `time_dim` sinusoidal time features, so its
/// fan-in is `d + time_dim`. The output layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpDenoiser {
    widths: Vec<usize>,
    time_dim: usize,
    steps: usize,
    pub(super) layers: Vec<Dense>,
}

/// Parameter gradients, laid out like the model.
#[derive(Debug, Clone)]
pub struct MlpGradients {
    pub(super) weight: Vec<Array2<f64>>,
    pub(super) bias: Vec<Array1<f64>>,
}

impl MlpGradients {
    /// Gradients in the same order as [`MlpDenoiser::flat_parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weight.iter().zip(&self.bias) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

impl MlpDenoiser {
    /// Random initialization: weights `N(0, 1/fan_in)`, biases zero.
    pub fn new(widths: &[usize], time_dim: usize, steps: usize, rng: &mut RandomSource) -> Result<Self> {
        Self::validate_shape(widths, time_dim, steps)?;
        let layers = (0..widths.len() - 1)
            .map(|l| {
                let fan_in = widths[l] + if l == 0 { time_dim } else { 0 };
                let fan_out = widths[l + 1];
                let std = (1.0 / fan_in as f64).sqrt();
                let mut weight = Array2::zeros((fan_out, fan_in));
                weight.mapv_inplace(|_: f64| rng.normal() * std);
                Dense { weight, bias: Array1::zeros(fan_out) }
            })
            .collect();
        Ok(Self { widths: widths.to_vec(), time_dim, steps, layers })
    }

    pub(super) fn from_layers(widths: Vec<usize>, time_dim: usize, steps: usize, layers: Vec<Dense>) -> Result<Self> {
        Self::validate_shape(&widths, time_dim, steps)?;
        Ok(Self { widths, time_dim, steps, layers })
    }

    fn validate_shape(widths: &[usize], time_dim: usize, steps: usize) -> Result<()> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::config(format!("invalid layer widths {widths:?}")));
        }
        if widths[0] != widths[widths.len() - 1] {
            return Err(Error::config(format!(
                "first and last widths must both equal the data dimension, got {widths:?}"
            )));
        }
        if time_dim == 0 || !time_dim.is_multiple_of(2) {
            return Err(Error::config(format!("time embedding dimension must be even and positive, got {time_dim}")));
        }
        if steps == 0 {
            return Err(Error::config("model steps must be >= 1"));
        }
        Ok(())
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn time_dim(&self) -> usize {
        self.time_dim
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// All parameters, layer by layer, weights (row-major) before biases.
    pub fn flat_parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(Error::config(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                params.len()
            )));
        }
        let mut it = params.iter();
        for l in &mut self.layers {
            l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|p| *p = *it.next().unwrap());
        }
        Ok(())
    }

    fn input(&self, x: ArrayView2<'_, f64>, ts: &[usize]) -> Array2<f64> {
        let d = self.widths[0];
        let mut h = Array2::zeros((x.nrows(), d + self.time_dim));
        h.slice_mut(s![.., ..d]).assign(&x);
        let mut cached: Option<(usize, Vec<f64>)> = None;
        for (mut row, &t) in h.rows_mut().into_iter().zip(ts) {
            if cached.as_ref().map(|c| c.0) != Some(t) {
                cached = Some((t, time_embedding(t, self.steps, self.time_dim)));
            }
            let emb = &cached.as_ref().unwrap().1;
            row.slice_mut(s![d..]).iter_mut().zip(emb).for_each(|(v, e)| *v = *e);
        }
        h
    }

    /// Forward pass keeping pre-activations for backprop. Returns the layer
    /// inputs `h_0..h_{L-1}`, pre-activations `z_1..z_L` and the output.
    fn forward_cached(&self, x: ArrayView2<'_, f64>, ts: &[usize]) -> (Vec<Array2<f64>>, Vec<Array2<f64>>, Array2<f64>) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = self.input(x, ts);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = h.dot(&layer.weight.t()) + &layer.bias;
            inputs.push(h);
            h = if i == last { z.clone() } else { z.mapv(silu) };
            pre.push(z);
        }
        (inputs, pre, h)
    }

    /// Prediction with a per-row timestep.
    pub fn predict_rows(&self, x: ArrayView2<'_, f64>, ts: &[usize]) -> Result<Batch> {
        if ts.len() != x.nrows() {
            return Err(Error::config("one timestep per row required"));
        }
        for &t in ts {
            check_input(&x, self.widths[0], t, self.steps)?;
        }
        let mut h = self.input(x, ts);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = h.dot(&layer.weight.t()) + &layer.bias;
            h = if i == last { z } else { z.mapv(silu) };
        }
        Ok(h)
    }

    /// Loss `(1/n) Σ_i w_i ‖target_i - ε_θ(x_i, t_i)‖²` and its gradient.
    pub fn loss_and_gradient(
        &self,
        x: ArrayView2<'_, f64>,
        ts: &[usize],
        target: ArrayView2<'_, f64>,
        weights: &[f64],
    ) -> Result<(f64, MlpGradients)> {
        let n = x.nrows();
        if ts.len() != n || weights.len() != n || target.shape() != x.shape() || n == 0 {
            return Err(Error::config("loss inputs disagree in length"));
        }
        for &t in ts {
            check_input(&x, self.widths[0], t, self.steps)?;
        }
        let (inputs, pre, out) = self.forward_cached(x, ts);
        let resid = &out - &target;
        let mut loss = 0.0;
        for (r, &w) in resid.rows().into_iter().zip(weights) {
            loss += w * r.dot(&r);
        }
        loss /= n as f64;

        let mut delta = resid;
        for (mut row, &w) in delta.rows_mut().into_iter().zip(weights) {
            row *= 2.0 * w / n as f64;
        }
        let mut gw = vec![Array2::zeros((0, 0)); self.layers.len()];
        let mut gb = vec![Array1::zeros(0); self.layers.len()];
        for l in (0..self.layers.len()).rev() {
            gw[l] = delta.t().dot(&inputs[l]);
            gb[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut back = delta.dot(&self.layers[l].weight);
                back.zip_mut_with(&pre[l - 1], |d, &z| *d *= silu_grad(z));
                delta = back;
            }
        }
        Ok((loss, MlpGradients { weight: gw, bias: gb }))
    }

    /// In-place `θ += step · direction`.
    pub(super) fn apply(&mut self, direction: &MlpGradients, step: f64) {
        for (l, (w, b)) in self.layers.iter_mut().zip(direction.weight.iter().zip(&direction.bias)) {
            l.weight.scaled_add(step, w);
            l.bias.scaled_add(step, b);
        }
    }

    pub(super) fn zero_gradients(&self) -> MlpGradients {
        MlpGradients {
            weight: self.layers.iter().map(|l| Array2::zeros(l.weight.raw_dim())).collect(),
            bias: self.layers.iter().map(|l| Array1::zeros(l.bias.raw_dim())).collect(),
        }
    }
}

impl Denoiser for MlpDenoiser {
    fn dim(&self) -> usize {
        self.widths[0]
    }

    fn steps(&self) -> usize {
        self.steps
    }

    fn predict_eps(&self, x: ArrayView2<'_, f64>, t: usize) -> Result<Batch> {
        check_input(&x, self.dim(), t, self.steps)?;
        self.predict_rows(x, &vec![t; x.nrows()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(seed: u64) -> MlpDenoiser {
        MlpDenoiser::new(&[2, 8, 2], 4, 10, &mut RandomSource::new(seed)).unwrap()
    }

    #[test]
    fn parameter_count_and_flat_roundtrip() {
        let mut m = tiny(0);
        assert_eq!(m.parameter_count(), (8 * 6 + 8) + (2 * 8 + 2));
        let mut p = m.flat_parameters();
        p[3] += 1.0;
        m.set_flat_parameters(&p).unwrap();
        assert_eq!(m.flat_parameters(), p);
        assert!(m.set_flat_parameters(&p[1..]).is_err());
    }

    #[test]
    fn output_shape_and_determinism() {
        let m = tiny(1);
        let x = Array2::from_shape_fn((7, 2), |(i, j)| i as f64 - j as f64 * 0.5);
        let a = m.predict_eps(x.view(), 3).unwrap();
        let b = m.predict_eps(x.view(), 3).unwrap();
        assert_eq!(a.dim(), (7, 2));
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn embedding_layout() {
        let e = time_embedding(0, 100, 6);
        assert_eq!(e, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let e = time_embedding(50, 100, 2);
        assert!((e[0] - 0.5f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut r = RandomSource::new(0);
        assert!(MlpDenoiser::new(&[2], 4, 10, &mut r).is_err());
        assert!(MlpDenoiser::new(&[2, 4, 3], 4, 10, &mut r).is_err());
        assert!(MlpDenoiser::new(&[2, 4, 2], 3, 10, &mut r).is_err());
        let m = tiny(0);
        assert!(m.predict_eps(Array2::zeros((1, 3)).view(), 1).is_err());
        assert!(matches!(m.predict_eps(Array2::zeros((1, 2)).view(), 11), Err(Error::Index(_))));
    }

    fn fd_check(m: &MlpDenoiser, x: &Array2<f64>, ts: &[usize], target: &Array2<f64>, w: &[f64]) {
        let (_, g) = m.loss_and_gradient(x.view(), ts, target.view(), w).unwrap();
        let g = g.flatten();
        let p0 = m.flat_parameters();
        let h = 1e-5;
        let mut probe = m.clone();
        for i in 0..p0.len() {
            let mut p = p0.clone();
            p[i] = p0[i] + h;
            probe.set_flat_parameters(&p).unwrap();
            let lp = probe.loss_and_gradient(x.view(), ts, target.view(), w).unwrap().0;
            p[i] = p0[i] - h;
            probe.set_flat_parameters(&p).unwrap();
            let lm = probe.loss_and_gradient(x.view(), ts, target.view(), w).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
            assert!(rel <= 1e-4, "param {i}: analytic {} vs fd {fd} (rel {rel})", g[i]);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let m = tiny(3);
        let mut r = RandomSource::new(4);
        let x = r.normal_batch(6, 2);
        let target = r.normal_batch(6, 2);
        let ts = [1, 3, 3, 7, 10, 5];
        fd_check(&m, &x, &ts, &target, &[1.0; 6]);
        fd_check(&m, &x, &ts, &target, &[0.5, 2.0, 1.0, 0.1, 3.0, 1.0]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(12))]
            #[test]
            fn gradient_check_random_models(seed in 0u64..1000, hidden in 1usize..6, dim in 1usize..3, n in 1usize..5) {
                let mut r = RandomSource::new(seed);
                let m = MlpDenoiser::new(&[dim, hidden, hidden, dim], 2, 20, &mut r).unwrap();
                let x = r.normal_batch(n, dim);
                let target = r.normal_batch(n, dim);
                let ts: Vec<usize> = (0..n).map(|_| r.range_inclusive(1, 20)).collect();
                let w: Vec<f64> = (0..n).map(|_| 0.1 + r.uniform()).collect();
                fd_check(&m, &x, &ts, &target, &w);
            }
        }
    }
}
