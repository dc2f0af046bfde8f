//! Noise schedules and the closed-form coefficients of the single-step and
//! skipped-step processes.
//!
//! Timesteps are 1-indexed: `t ∈ [1, T]` indexes a noising step and state
//! index `0` is clean data, with the convention `ᾱ_0 = 1`. With that
//! convention a jump of `m = t` lands exactly on `q(x_t | x_0)`.

use ndarray::{Array, ArrayView, Dimension, Zip};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Below this gap `ᾱ_{t-m} - ᾱ_t` the posterior variance is treated as zero.
const DEGENERATE_GAP: f64 = 1e-300;

/// Per-step retention factors `α_1..α_T` and their running products
/// `ᾱ_0..ᾱ_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds a schedule from explicit per-step retention factors.
    pub fn from_alphas(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::config("schedule needs at least one step"));
        }
        if let Some((i, a)) = alpha.iter().enumerate().find(|(_, &a)| !(a > 0.0 && a < 1.0)) {
            return Err(Error::config(format!(
                "alpha_{} = {a} is outside (0, 1)",
                i + 1
            )));
        }
        let mut alpha_bar = Vec::with_capacity(alpha.len() + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for &a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        if alpha_bar.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::config(
                "cumulative alpha is not strictly decreasing (underflow)",
            ));
        }
        Ok(Self { alpha, alpha_bar })
    }

    /// Total number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.alpha.len()
    }

    /// `α_t` for `t ∈ [1, T]`.
    pub fn alpha(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        Ok(self.alpha[t - 1])
    }

    /// `ᾱ_t` for `t ∈ [0, T]`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bar
            .get(t)
            .copied()
            .ok_or_else(|| Error::index(format!("state index {t} outside [0, {}]", self.steps())))
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    /// `ᾱ_0..ᾱ_T`, length `T + 1`.
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::index(format!("timestep {t} outside [1, {}]", self.steps())));
        }
        Ok(())
    }
}

/// Linear β schedule: `β_t` evenly spaced from `beta_start` to `beta_end`
/// inclusive, `α_t = 1 - β_t`.
pub fn make_linear_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::config("schedule steps must be >= 1"));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::config(format!(
            "linear schedule needs 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
        )));
    }
    let alphas = (0..steps)
        .map(|i| {
            let beta = if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            };
            1.0 - beta
        })
        .collect();
    NoiseSchedule::from_alphas(alphas)
}

/// Smallest per-step retention allowed by the cosine schedule.
pub const COSINE_MIN_ALPHA: f64 = 0.001;

/// Cosine schedule: `ᾱ_t = f(t)/f(0)` with
/// `f(t) = cos²(((t/T + offset)/(1 + offset)) · π/2)`, each `α_t = ᾱ_t/ᾱ_{t-1}`
/// clipped from below at [`COSINE_MIN_ALPHA`].
pub fn make_cosine_schedule(steps: usize, offset: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::config("schedule steps must be >= 1"));
    }
    if !(offset >= 0.0 && offset.is_finite()) {
        return Err(Error::config(format!("cosine offset must be >= 0, got {offset}")));
    }
    let f = |t: usize| {
        let x = (t as f64 / steps as f64 + offset) / (1.0 + offset) * std::f64::consts::FRAC_PI_2;
        x.cos().powi(2)
    };
    let alphas = (1..=steps)
        .map(|t| (f(t) / f(t - 1)).max(COSINE_MIN_ALPHA))
        .collect();
    NoiseSchedule::from_alphas(alphas)
}

/// Schedule selection as read from configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    Linear {
        steps: usize,
        #[serde(default = "default_beta_start")]
        beta_start: f64,
        #[serde(default = "default_beta_end")]
        beta_end: f64,
    },
    Cosine {
        steps: usize,
        #[serde(default = "default_cosine_offset")]
        offset: f64,
    },
}

fn default_beta_start() -> f64 {
    1e-4
}

fn default_beta_end() -> f64 {
    0.02
}

fn default_cosine_offset() -> f64 {
    0.008
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec::Linear { steps: 1000, beta_start: 1e-4, beta_end: 0.02 }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        match *self {
            ScheduleSpec::Linear { steps, beta_start, beta_end } => {
                make_linear_schedule(steps, beta_start, beta_end)
            }
            ScheduleSpec::Cosine { steps, offset } => make_cosine_schedule(steps, offset),
        }
    }

    pub fn steps(&self) -> usize {
        match *self {
            ScheduleSpec::Linear { steps, .. } | ScheduleSpec::Cosine { steps, .. } => steps,
        }
    }
}

/// Coefficients of the forward kernel `q(x_t | x_{t-m})`, the posterior
/// `q(x_{t-m} | x_t, x_0)` and the ε-parameterized reverse mean for one
/// `(t, t - m)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkipCoefficients {
    pub t: usize,
    pub t_prev: usize,
    /// `√(ᾱ_t / ᾱ_{t-m})`
    pub fwd_mean_scale: f64,
    /// `1 - ᾱ_t / ᾱ_{t-m}`
    pub fwd_var: f64,
    pub post_coef_xt: f64,
    pub post_coef_x0: f64,
    pub post_var: f64,
    /// `ᾱ_{t-m} / √(ᾱ_t ᾱ_{t-m})`
    pub rev_coef_xt: f64,
    /// `(ᾱ_{t-m} - ᾱ_t) / √(ᾱ_t ᾱ_{t-m} (1 - ᾱ_t))`
    pub rev_coef_eps: f64,
}

impl SkipCoefficients {
    /// Posterior mean from `(x_t, x_0)`.
    pub fn posterior_mean(&self, x_t: f64, x0: f64) -> f64 {
        self.post_coef_xt * x_t + self.post_coef_x0 * x0
    }

    /// Reverse mean from `(x_t, ε)`.
    pub fn reverse_mean(&self, x_t: f64, eps: f64) -> f64 {
        self.rev_coef_xt * x_t - self.rev_coef_eps * eps
    }
}

/// Coefficients for jumping from `t` to `t - m`.
pub fn skip_coefficients(s: &NoiseSchedule, t: usize, m: usize) -> Result<SkipCoefficients> {
    s.check_step(t)?;
    if m == 0 || m > t {
        return Err(Error::index(format!("skip width {m} outside [1, {t}] at t = {t}")));
    }
    let t_prev = t - m;
    let ab_t = s.alpha_bar[t];
    let ab_p = s.alpha_bar[t_prev];
    let gap = ab_p - ab_t;

    let post_var = if gap < DEGENERATE_GAP {
        0.0
    } else {
        (gap * (1.0 - ab_p) / (ab_p * (1.0 - ab_t))).max(0.0)
    };

    Ok(SkipCoefficients {
        t,
        t_prev,
        fwd_mean_scale: (ab_t / ab_p).sqrt(),
        fwd_var: 1.0 - ab_t / ab_p,
        post_coef_xt: ab_t.sqrt() * (1.0 - ab_p) / (ab_p.sqrt() * (1.0 - ab_t)),
        post_coef_x0: gap / (ab_p.sqrt() * (1.0 - ab_t)),
        post_var,
        rev_coef_xt: ab_p / (ab_t * ab_p).sqrt(),
        rev_coef_eps: gap / (ab_t * ab_p * (1.0 - ab_t)).sqrt(),
    })
}

/// The single-step update of ancestral DDPM sampling at `t`:
/// `x_{t-1} = x_scale · (x_t - eps_scale · ε_θ) + sigma · z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdpmStep {
    /// `1 / √α_t`
    pub x_scale: f64,
    /// `(1 - α_t) / √(1 - ᾱ_t)`
    pub eps_scale: f64,
    /// Posterior standard deviation at `m = 1`.
    pub sigma: f64,
}

pub fn ddpm_step(s: &NoiseSchedule, t: usize) -> Result<DdpmStep> {
    s.check_step(t)?;
    let a = s.alpha[t - 1];
    let ab_t = s.alpha_bar[t];
    let ab_p = s.alpha_bar[t - 1];
    Ok(DdpmStep {
        x_scale: 1.0 / a.sqrt(),
        eps_scale: (1.0 - a) / (1.0 - ab_t).sqrt(),
        sigma: ((1.0 - a) * (1.0 - ab_p) / (1.0 - ab_t)).max(0.0).sqrt(),
    })
}

/// Recovers `x_0 = x_t/√ᾱ_t - √(1-ᾱ_t)/√ᾱ_t · ε`.
pub fn predict_x0<D: Dimension>(
    x_t: ArrayView<'_, f64, D>,
    eps: ArrayView<'_, f64, D>,
    s: &NoiseSchedule,
    t: usize,
) -> Result<Array<f64, D>> {
    s.check_step(t)?;
    if x_t.shape() != eps.shape() {
        return Err(Error::config(format!(
            "shape mismatch: x_t {:?} vs eps {:?}",
            x_t.shape(),
            eps.shape()
        )));
    }
    let ab = s.alpha_bar[t];
    let inv = 1.0 / ab.sqrt();
    let noise = (1.0 - ab).sqrt() / ab.sqrt();
    Ok(Zip::from(&x_t).and(&eps).map_collect(|&x, &e| x * inv - noise * e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
    }

    fn toy3() -> NoiseSchedule {
        make_linear_schedule(3, 0.1, 0.3).unwrap()
    }

    #[test]
    fn linear_three_steps() {
        let s = toy3();
        let want_a = [0.9, 0.8, 0.7];
        let want_ab = [1.0, 0.9, 0.72, 0.504];
        for (a, w) in s.alphas().iter().zip(want_a) {
            assert!(close(*a, w, 1e-15));
        }
        for (a, w) in s.alpha_bars().iter().zip(want_ab) {
            assert!(close(*a, w, 1e-15), "{a} vs {w}");
        }
        assert_eq!(s.alpha_bar(0).unwrap(), 1.0);
    }

    #[test]
    fn linear_single_step() {
        let s = make_linear_schedule(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alphas(), &[0.5]);
        assert_eq!(s.alpha_bars(), &[1.0, 0.5]);
    }

    #[test]
    fn linear_thousand_steps_matches_exact_product() {
        // Exact rational running product of the same β grid, rounded once.
        let want = 4.0358297653756835e-05;
        let s = make_linear_schedule(1000, 1e-4, 0.02).unwrap();
        let got = s.alpha_bar(1000).unwrap();
        assert!(((got - want) / want).abs() <= 1e-12, "{got} vs {want}");
    }

    #[test]
    fn linear_rejects_bad_ranges() {
        assert!(matches!(make_linear_schedule(10, 0.0, 0.1), Err(Error::Config(_))));
        assert!(matches!(make_linear_schedule(10, 0.2, 0.1), Err(Error::Config(_))));
        assert!(matches!(make_linear_schedule(10, 0.1, 1.0), Err(Error::Config(_))));
        assert!(matches!(make_linear_schedule(0, 0.1, 0.2), Err(Error::Config(_))));
    }

    #[test]
    fn cosine_boundary_and_monotone() {
        let s = make_cosine_schedule(10, 0.008).unwrap();
        assert_eq!(s.alpha_bar(0).unwrap(), 1.0);
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        assert!(s.alphas().iter().all(|&a| (COSINE_MIN_ALPHA..1.0).contains(&a)));
    }

    #[test]
    fn cosine_midpoint_matches_formula() {
        let s = make_cosine_schedule(100, 0.008).unwrap();
        let f = |t: f64| (((t / 100.0 + 0.008) / 1.008) * std::f64::consts::FRAC_PI_2).cos().powi(2);
        let want = f(50.0) / f(0.0);
        assert!(((s.alpha_bar(50).unwrap() - want) / want).abs() <= 1e-12);
        assert!((want - 0.49384359044063775).abs() < 1e-15);
    }

    #[test]
    fn three_step_skip_coefficients() {
        // Values from a symbol-by-symbol transcription of the posterior formulas.
        let c = skip_coefficients(&toy3(), 3, 2).unwrap();
        assert_eq!((c.t, c.t_prev), (3, 1));
        assert!(close(c.fwd_mean_scale, 0.7483314773547882, 1e-12));
        assert!(close(c.fwd_var, 0.44000000000000006, 1e-12));
        assert!(close(c.post_coef_xt, 0.15087328172475567, 1e-12));
        assert!(close(c.post_coef_x0, 0.8415738934319075, 1e-12));
        assert!(close(c.post_var, 0.08870967741935483, 1e-12));
        assert!(close(c.rev_coef_xt, 1.3363062095621219, 1e-12));
        assert!(close(c.rev_coef_eps, 0.8348680184885099, 1e-12));
    }

    #[test]
    fn single_step_is_ddpm_posterior() {
        let s = make_linear_schedule(200, 1e-4, 0.05).unwrap();
        for t in 1..=200 {
            let c = skip_coefficients(&s, t, 1).unwrap();
            let a = s.alpha(t).unwrap();
            let ab = s.alpha_bar(t).unwrap();
            let abp = s.alpha_bar(t - 1).unwrap();
            assert!(close(c.post_coef_xt, a.sqrt() * (1.0 - abp) / (1.0 - ab), 1e-12));
            assert!(close(c.post_coef_x0, abp.sqrt() * (1.0 - a) / (1.0 - ab), 1e-12));
            assert!(close(c.post_var, (1.0 - a) * (1.0 - abp) / (1.0 - ab), 1e-12));
        }
    }

    #[test]
    fn jump_to_zero_is_marginal() {
        let s = make_cosine_schedule(50, 0.008).unwrap();
        for t in 1..=50 {
            let c = skip_coefficients(&s, t, t).unwrap();
            let ab = s.alpha_bar(t).unwrap();
            assert!(close(c.fwd_mean_scale, ab.sqrt(), 1e-14));
            assert!(close(c.fwd_var, 1.0 - ab, 1e-14));
            assert_eq!(c.post_var, 0.0);
            assert!(close(c.post_coef_x0, 1.0, 1e-14));
            assert!(c.post_coef_xt.abs() < 1e-15);
        }
    }

    #[test]
    fn skip_coefficients_range_errors() {
        let s = toy3();
        assert!(matches!(skip_coefficients(&s, 0, 1), Err(Error::Index(_))));
        assert!(matches!(skip_coefficients(&s, 4, 1), Err(Error::Index(_))));
        assert!(matches!(skip_coefficients(&s, 2, 0), Err(Error::Index(_))));
        assert!(matches!(skip_coefficients(&s, 2, 3), Err(Error::Index(_))));
    }

    #[test]
    fn predict_x0_cases() {
        let s = NoiseSchedule::from_alphas(vec![0.64]).unwrap();
        let x = arr1(&[1.0]);
        let got = predict_x0(x.view(), arr1(&[0.5]).view(), &s, 1).unwrap();
        assert!((got[0] - 0.875).abs() < 1e-15);

        let got = predict_x0(x.view(), arr1(&[0.0]).view(), &s, 1).unwrap();
        assert!((got[0] - 1.25).abs() < 1e-15);

        let s = toy3();
        let ab = s.alpha_bar(2).unwrap();
        let x0 = arr1(&[0.3, -1.7, 2.2]);
        let eps = arr1(&[-0.4, 1.1, 0.05]);
        let xt = &x0 * ab.sqrt() + &eps * (1.0 - ab).sqrt();
        let rec = predict_x0(xt.view(), eps.view(), &s, 2).unwrap();
        for (r, w) in rec.iter().zip(x0.iter()) {
            assert!((r - w).abs() <= 1e-10);
        }
        assert!(matches!(predict_x0(xt.view(), eps.view(), &s, 0), Err(Error::Index(_))));
    }

    #[test]
    fn degenerate_gap_clamps_variance() {
        let s = NoiseSchedule::from_alphas(vec![1e-160, 1e-160, 0.5]).unwrap();
        let c = skip_coefficients(&s, 3, 1).unwrap();
        assert_eq!(c.post_var, 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn schedule() -> impl Strategy<Value = NoiseSchedule> {
            (2usize..60, 1e-4f64..0.05, 0.0f64..0.3, any::<bool>()).prop_map(|(n, b0, db, cos)| {
                if cos {
                    make_cosine_schedule(n, 0.008).unwrap()
                } else {
                    make_linear_schedule(n, b0, (b0 + db).min(0.9)).unwrap()
                }
            })
        }

        proptest! {
            #[test]
            fn forward_kernels_compose(s in schedule(), picks in prop::array::uniform3(0.0f64..1.0)) {
                let n = s.steps();
                let mut v: Vec<usize> = picks.iter().map(|p| (p * (n + 1) as f64) as usize).map(|i| i.min(n)).collect();
                v.sort_unstable();
                v.dedup();
                prop_assume!(v.len() == 3);
                let (a, b, c) = (v[0], v[1], v[2]);
                let ca = skip_coefficients(&s, c, c - a).unwrap();
                let ba = skip_coefficients(&s, b, b - a).unwrap();
                let cb = skip_coefficients(&s, c, c - b).unwrap();
                let scale = ba.fwd_mean_scale * cb.fwd_mean_scale;
                prop_assert!(((ca.fwd_mean_scale - scale) / scale).abs() <= 1e-10);
                let var = cb.fwd_mean_scale.powi(2) * ba.fwd_var + cb.fwd_var;
                prop_assert!(((ca.fwd_var - var) / var).abs() <= 1e-10);
            }

            #[test]
            fn eps_substitution_matches_posterior(s in schedule(), tf in 0.0f64..1.0, mf in 0.0f64..1.0,
                                                  x_t in -5.0f64..5.0, eps in -4.0f64..4.0) {
                let t = 1 + ((s.steps() - 1) as f64 * tf) as usize;
                let m = 1 + ((t - 1) as f64 * mf) as usize;
                let c = skip_coefficients(&s, t, m).unwrap();
                let ab = s.alpha_bar(t).unwrap();
                let x0 = x_t / ab.sqrt() - (1.0 - ab).sqrt() / ab.sqrt() * eps;
                let lhs = c.reverse_mean(x_t, eps);
                let rhs = c.posterior_mean(x_t, x0);
                prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1.0));
            }

            #[test]
            fn coefficient_ranges(s in schedule(), tf in 0.0f64..1.0, mf in 0.0f64..1.0) {
                let t = 1 + ((s.steps() - 1) as f64 * tf) as usize;
                let m = 1 + ((t - 1) as f64 * mf) as usize;
                let c = skip_coefficients(&s, t, m).unwrap();
                prop_assert!(c.fwd_var > 0.0 && c.fwd_var < 1.0);
                prop_assert!(c.post_var >= 0.0);
                prop_assert!(c.post_var <= c.fwd_var);
            }
        }
    }
}
