//! Small-scale numerical self-checks of the skip-step math and samplers.
//!
//! Each check recomputes a quantity by an independent route (grid Bayes,
//! single-step products, Monte Carlo, cross-sampler identities) and
//! compares. [`Fault`] perturbs a coefficient to confirm the checks bite.

use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::denoiser::GaussianOracle;
use crate::forward::{diffuse_skip, RandomSource};
use crate::metrics::{batch_moments, gaussian_w2};
use crate::samplers::{self, make_plan, PlanScheme, SamplerConfig, SamplerKind, StepPlan};
use crate::schedule::{ddpm_step, make_linear_schedule, predict_x0, skip_coefficients, NoiseSchedule, SkipCoefficients};
use crate::{Batch, Result};

/// Deliberate coefficient corruptions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Scales `post_coef_x0` by `1 + 1e-3`.
    PostCoefX0,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default)]
    pub seed: u64,
    /// Rows per Monte-Carlo comparison.
    #[serde(default = "default_mc")]
    pub mc_samples: usize,
    #[serde(default)]
    pub fault: Option<Fault>,
}

fn default_mc() -> usize {
    20_000
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { seed: 0, mc_samples: default_mc(), fault: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        let failed = self.failures().count();
        write!(f, "{} checks, {} failed", self.checks.len(), failed)
    }
}

struct Ctx {
    cfg: VerifyConfig,
}

impl Ctx {
    fn coefficients(&self, s: &NoiseSchedule, t: usize, m: usize) -> Result<SkipCoefficients> {
        let mut c = skip_coefficients(s, t, m)?;
        if self.cfg.fault == Some(Fault::PostCoefX0) {
            c.post_coef_x0 *= 1.0 + 1e-3;
        }
        Ok(c)
    }

    fn rng(&self, label: u64) -> RandomSource {
        RandomSource::new(self.cfg.seed).derive(label)
    }
}

/// Runs every check.
pub fn run_verification(cfg: &VerifyConfig) -> Result<VerifyReport> {
    let ctx = Ctx { cfg: cfg.clone() };
    type Check = fn(&Ctx) -> Result<(bool, String)>;
    let checks: [(&'static str, Check); 10] = [
        ("posterior_bruteforce_t5", posterior_bruteforce),
        ("composition_identity_t50", composition_identity),
        ("composition_monte_carlo", composition_monte_carlo),
        ("m1_reduction_coefficients", m1_coefficients),
        ("m1_reduction_sampler", m1_sampler),
        ("eps_substitution", eps_substitution),
        ("affine_vs_monte_carlo", affine_vs_monte_carlo),
        ("degenerate_cutoffs", degenerate_cutoffs),
        ("skipped_beats_naive_subset", skipped_beats_naive),
        ("skipped_monotone_in_budget", monotone_in_budget),
    ];
    let mut report = VerifyReport::default();
    for (name, f) in checks {
        let (passed, detail) = f(&ctx)?;
        report.checks.push(CheckResult { name, passed, detail });
    }
    Ok(report)
}

/// Mean scale and variance of `q(x_b | x_a)` from single-step products.
fn chained_kernel(s: &NoiseSchedule, a: usize, b: usize) -> (f64, f64) {
    let (mut scale, mut var) = (1.0, 0.0);
    for &alpha in &s.alphas()[a..b] {
        scale *= alpha.sqrt();
        var = alpha * var + (1.0 - alpha);
    }
    (scale, var)
}

/// Mean and variance of `q(x_{t-m} | x_t, x_0)` by trapezoid quadrature of
/// `q(x_{t-m} | x_0) q(x_t | x_{t-m})` on a fine grid.
pub fn grid_posterior(s: &NoiseSchedule, t: usize, m: usize, x_t: f64, x0: f64) -> (f64, f64) {
    let tp = t - m;
    let (pa, pv) = chained_kernel(s, 0, tp);
    let (ka, kv) = chained_kernel(s, tp, t);
    let lo = pa * x0 - 12.0;
    let n = 240_001;
    let h = 24.0 / (n - 1) as f64;
    let log_w = |x: f64| -(x - pa * x0).powi(2) / (2.0 * pv) - (x_t - ka * x).powi(2) / (2.0 * kv);
    let xs: Vec<f64> = (0..n).map(|i| lo + h * i as f64).collect();
    let peak = xs.iter().map(|&x| log_w(x)).fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (i, &x) in xs.iter().enumerate() {
        let w = (log_w(x) - peak).exp() * if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        z += w;
        m1 += w * x;
    }
    let mean = m1 / z;
    for (i, &x) in xs.iter().enumerate() {
        let w = (log_w(x) - peak).exp() * if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        m2 += w * (x - mean).powi(2);
    }
    (mean, m2 / z)
}

/// The `T = 5` schedule used by the brute-force check.
pub fn micro_schedule() -> Result<NoiseSchedule> {
    make_linear_schedule(5, 0.05, 0.3)
}

fn posterior_bruteforce(ctx: &Ctx) -> Result<(bool, String)> {
    let s = micro_schedule()?;
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    for t in 2..=5 {
        for m in 1..t {
            let c = ctx.coefficients(&s, t, m)?;
            for &(x_t, x0) in &[(0.3, -0.7), (-1.5, 1.1), (2.0, 0.0)] {
                let (gm, gv) = grid_posterior(&s, t, m, x_t, x0);
                worst = worst.max((gm - c.posterior_mean(x_t, x0)).abs()).max((gv - c.post_var).abs());
            }
            pairs += 1;
        }
    }
    Ok((worst <= 1e-6, format!("T = 5, {pairs} (t, m) pairs with t - m >= 1, max abs error {worst:.2e} (tol 1e-6)")))
}

fn composition_identity(ctx: &Ctx) -> Result<(bool, String)> {
    let s = make_linear_schedule(50, 1e-3, 0.2)?;
    let mut worst: f64 = 0.0;
    for a in 2..=50 {
        for b in 1..a {
            for c in 0..b {
                let ac = ctx.coefficients(&s, a, a - c)?;
                let ab = ctx.coefficients(&s, a, a - b)?;
                let bc = ctx.coefficients(&s, b, b - c)?;
                worst = worst
                    .max((ac.fwd_mean_scale - ab.fwd_mean_scale * bc.fwd_mean_scale).abs())
                    .max((ac.fwd_var - (ab.fwd_mean_scale.powi(2) * bc.fwd_var + ab.fwd_var)).abs());
            }
        }
    }
    Ok((worst <= 1e-10, format!("all c < b < a <= 50, max abs error {worst:.2e} (tol 1e-10)")))
}

/// `|a - b| <= 4 SE` for means and variances of scalar columns.
fn moments_agree(x: &Batch, mean: f64, var: f64) -> Result<(bool, f64)> {
    let n = x.nrows() as f64;
    let m = batch_moments(x.view())?;
    let mut worst: f64 = 0.0;
    for j in 0..x.ncols() {
        worst = worst
            .max((m.mean[j] - mean).abs() / (var / n).sqrt())
            .max((m.cov_diag[j] - var).abs() / (var * (2.0 / (n - 1.0)).sqrt()));
    }
    Ok((worst <= 4.0, worst))
}

fn composition_monte_carlo(ctx: &Ctx) -> Result<(bool, String)> {
    let s = make_linear_schedule(50, 1e-3, 0.2)?;
    let n = ctx.cfg.mc_samples;
    let x0 = Array2::from_elem((n, 1), 0.8);
    let mut rng = ctx.rng(1);
    let mid = diffuse_skip(x0.view(), 10, 10, &s, &mut rng)?;
    let chained = diffuse_skip(mid.view(), 35, 25, &s, &mut rng)?;
    let (a, v) = chained_kernel(&s, 0, 35);
    let (ok, z) = moments_agree(&chained, a * 0.8, v)?;
    Ok((ok, format!("0 -> 10 -> 35 vs single-step products, N = {n}, max |z| = {z:.2} (tol 4)")))
}

fn m1_coefficients(ctx: &Ctx) -> Result<(bool, String)> {
    let s = make_linear_schedule(100, 1e-4, 0.2)?;
    let mut worst: f64 = 0.0;
    for t in 1..=100 {
        let c = ctx.coefficients(&s, t, 1)?;
        let d = ddpm_step(&s, t)?;
        let alpha = s.alpha(t)?;
        let ab = s.alpha_bar(t)?;
        let abp = s.alpha_bar(t - 1)?;
        let beta_tilde = (1.0 - alpha) * (1.0 - abp) / (1.0 - ab);
        let mean_xt = alpha.sqrt() * (1.0 - abp) / (1.0 - ab);
        let mean_x0 = abp.sqrt() * (1.0 - alpha) / (1.0 - ab);
        for (x, y) in [
            (c.rev_coef_xt, d.x_scale),
            (c.rev_coef_eps, d.x_scale * d.eps_scale),
            (c.post_var, beta_tilde),
            (c.post_coef_xt, mean_xt),
            (c.post_coef_x0, mean_x0),
        ] {
            worst = worst.max((x - y).abs() / y.abs().max(1.0));
        }
    }
    Ok((worst <= 1e-12, format!("T = 100, all t, max rel error {worst:.2e} (tol 1e-12)")))
}

/// `T = 100` chain whose `ᾱ_T` is close to 0.
fn oracle(mean: Vec<f64>, var: Vec<f64>) -> Result<(NoiseSchedule, GaussianOracle)> {
    let s = make_linear_schedule(100, 1e-3, 0.2)?;
    let o = GaussianOracle::new(mean, var, s.clone())?;
    Ok((s, o))
}

fn max_abs_diff(a: &Batch, b: &Batch) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn m1_sampler(ctx: &Ctx) -> Result<(bool, String)> {
    let (s, o) = oracle(vec![0.4, -1.0], vec![0.3, 2.0])?;
    let a = samplers::ddpm_sample(&o, &s, 500, &mut ctx.rng(2))?;
    let b = samplers::skipped_sample(&o, &s, &StepPlan::full(100)?, 500, &mut ctx.rng(2))?;
    let d = max_abs_diff(&a, &b);
    Ok((d <= 1e-12, format!("full-plan skipped vs ddpm, T = 100, n = 500, max diff {d:.2e} (tol 1e-12)")))
}

fn eps_substitution(ctx: &Ctx) -> Result<(bool, String)> {
    let s = make_linear_schedule(200, 1e-4, 0.05)?;
    let mut rng = ctx.rng(3);
    let mut worst: f64 = 0.0;
    for _ in 0..2000 {
        let t = rng.range_inclusive(1, 200);
        let m = rng.range_inclusive(1, t);
        let x_t = 2.0 * rng.normal();
        let eps = rng.normal();
        let c = ctx.coefficients(&s, t, m)?;
        let x0 = predict_x0(ndarray::arr1(&[x_t]).view(), ndarray::arr1(&[eps]).view(), &s, t)?[0];
        let scale = c.rev_coef_xt.abs().max(1.0) * (x_t.abs() + eps.abs() + 1.0);
        worst = worst.max((c.posterior_mean(x_t, x0) - c.reverse_mean(x_t, eps)).abs() / scale);
    }
    Ok((worst <= 1e-10, format!("2000 random (t, m, x_t, eps), max scaled error {worst:.2e} (tol 1e-10)")))
}

fn affine_vs_monte_carlo(ctx: &Ctx) -> Result<(bool, String)> {
    let (s, o) = oracle(vec![0.5], vec![0.3])?;
    let plan = make_plan(100, 10, PlanScheme::Uniform)?;
    let n = ctx.cfg.mc_samples;
    let mut worst: f64 = 0.0;
    for (i, kind) in SamplerKind::ALL.into_iter().enumerate() {
        let mut sc = SamplerConfig::new(kind, plan.clone());
        if kind == SamplerKind::Mixed {
            sc.cutoff = Some(5);
        }
        let exact = samplers::propagate_affine(&o, &s, &sc)?;
        let x = samplers::sample(&o, &s, &sc, n, &mut ctx.rng(10 + i as u64))?;
        let (_, z) = moments_agree(&x, exact.mean[0], exact.cov_diag[0])?;
        worst = worst.max(z);
    }
    Ok((worst <= 4.0, format!("all samplers, T = 100, K = 10, N = {n}, max |z| = {worst:.2} (tol 4)")))
}

fn degenerate_cutoffs(ctx: &Ctx) -> Result<(bool, String)> {
    let (s, o) = oracle(vec![0.4, -1.0], vec![0.3, 2.0])?;
    let plan = make_plan(100, 10, PlanScheme::Uniform)?;
    let run = |sc: SamplerConfig| samplers::sample(&o, &s, &sc, 300, &mut ctx.rng(4));
    let ddim = run(SamplerConfig::new(SamplerKind::Ddim, plan.clone()))?;
    let skipped = run(SamplerConfig::new(SamplerKind::Skipped, plan.clone()))?;
    let lo = run(SamplerConfig::mixed(plan.clone(), 0))?;
    let hi = run(SamplerConfig::mixed(plan.clone(), plan.len()))?;
    let ok = lo == ddim && hi == skipped;
    Ok((ok, format!("mixed(k_c = 0) == ddim: {}, mixed(k_c = K) == skipped: {}", lo == ddim, hi == skipped)))
}

fn exact_w2(o: &GaussianOracle, s: &NoiseSchedule, kind: SamplerKind, k: usize) -> Result<f64> {
    let sc = SamplerConfig::new(kind, make_plan(s.steps(), k, PlanScheme::Uniform)?);
    gaussian_w2(&samplers::propagate_affine(o, s, &sc)?, &o.data_state())
}

fn skipped_beats_naive(_: &Ctx) -> Result<(bool, String)> {
    let s = make_linear_schedule(1000, 1e-4, 0.02)?;
    let o = GaussianOracle::new(vec![0.5, -0.3], vec![0.4, 1.5], s.clone())?;
    let mut ok = true;
    let mut parts = Vec::new();
    for k in [25, 50] {
        let a = exact_w2(&o, &s, SamplerKind::Skipped, k)?;
        let b = exact_w2(&o, &s, SamplerKind::NaiveSubset, k)?;
        ok &= a < b;
        parts.push(format!("K = {k}: {a:.4e} vs {b:.4e}"));
    }
    Ok((ok, format!("exact W2 to data, skipped vs naive_subset, {}", parts.join("; "))))
}

fn monotone_in_budget(_: &Ctx) -> Result<(bool, String)> {
    let s = make_linear_schedule(1000, 1e-4, 0.02)?;
    let o = GaussianOracle::new(vec![0.5, -0.3], vec![0.4, 1.5], s.clone())?;
    let ks = [1, 2, 5, 10, 25, 50, 100];
    let w: Vec<f64> = ks.iter().map(|&k| exact_w2(&o, &s, SamplerKind::Skipped, k)).collect::<Result<_>>()?;
    let ok = w.windows(2).all(|p| p[1] <= p[0]);
    let shown: Vec<String> = ks.iter().zip(&w).map(|(k, v)| format!("{k}:{v:.3e}")).collect();
    Ok((ok, format!("exact W2 over K = {}", shown.join(" "))))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(fault: Option<Fault>) -> VerifyReport {
        run_verification(&VerifyConfig { seed: 0, mc_samples: 4000, fault }).unwrap()
    }

    #[test]
    fn all_checks_pass() {
        let r = quick(None);
        assert!(r.passed(), "{r}");
        assert!(r.to_string().contains("PASS posterior_bruteforce_t5"));
    }

    #[test]
    fn injected_fault_is_caught() {
        let r = quick(Some(Fault::PostCoefX0));
        assert!(!r.passed());
        let failed: Vec<_> = r.failures().map(|c| c.name).collect();
        assert!(failed.contains(&"posterior_bruteforce_t5"), "{failed:?}");
        assert!(failed.contains(&"eps_substitution"));
    }

    #[test]
    fn grid_matches_m_equals_one_closed_form() {
        let s = micro_schedule().unwrap();
        let (m, v) = grid_posterior(&s, 3, 1, 0.5, -0.25);
        let c = skip_coefficients(&s, 3, 1).unwrap();
        assert!((m - c.posterior_mean(0.5, -0.25)).abs() < 1e-9);
        assert!((v - c.post_var).abs() < 1e-9);
    }
}
