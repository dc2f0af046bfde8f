//! Reverse samplers and exact marginal propagation.
//!
//! Every sampler here is a sequence of updates over the pairs `(t, t')` of a
//! [`StepPlan`], each of the form
//!
//! ```text
//! x' = c_x · x - c_ε · ε_θ(x, t) + σ · z
//! ```
//!
//! with rule-specific coefficients:
//!
//! | rule      | source                                            |
//! |-----------|---------------------------------------------------|
//! | ddpm      | ancestral single-step update at `t` (plan is full) |
//! | skipped   | posterior-matched jump `t → t'`                    |
//! | ddim      | deterministic `x̂_0` re-noising to `t'`             |
//! | naive     | the single-step update at `t`, applied across the gap |
//!
//! # Shared-seed protocol
//!
//! A sampler consumes exactly one word from the caller's [`RandomSource`]
//! to key a [`NoiseField`]. The initial `x_T` of row `i` is index `i` of
//! stream [`INIT_STREAM`]; the noise `z` of update `k` (0-based position in
//! the plan) for row `i` is index `i` of stream `k`. Updates into `t' = 0`
//! draw no noise. Two samplers run from equal seeds therefore see the same
//! `x_T` and the same `z` at every shared update position, regardless of
//! batch partitioning or which other updates they skip.

mod plan;

pub use plan::{make_plan, PlanScheme, StepPlan};

use ndarray::{Array1, ArrayViewMut2, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::forward::{NoiseField, RandomSource};
use crate::schedule::{ddpm_step, predict_x0, skip_coefficients, NoiseSchedule};
use crate::{Batch, Error, Result};

/// Noise stream holding the initial `x_T`.
pub const INIT_STREAM: u64 = u64::MAX;

/// Rows per work unit.
const CHUNK_ROWS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Ddpm,
    Skipped,
    Ddim,
    Mixed,
    NaiveSubset,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 5] =
        [SamplerKind::Ddpm, SamplerKind::Skipped, SamplerKind::Ddim, SamplerKind::Mixed, SamplerKind::NaiveSubset];

    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Ddpm => "ddpm",
            SamplerKind::Skipped => "skipped",
            SamplerKind::Ddim => "ddim",
            SamplerKind::Mixed => "mixed",
            SamplerKind::NaiveSubset => "naive_subset",
        }
    }
}

impl std::fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Whether the stochastic samplers add their noise term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    /// The posterior standard deviation of the update.
    #[default]
    Posterior,
    /// No noise; the update reduces to its mean. DDIM always behaves this way.
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub plan: StepPlan,
    /// `k_c`: number of leading skipped-step updates (mixed only).
    pub cutoff: Option<usize>,
    pub variance: VarianceMode,
}

impl SamplerConfig {
    pub fn new(kind: SamplerKind, plan: StepPlan) -> Self {
        Self { kind, plan, cutoff: None, variance: VarianceMode::Posterior }
    }

    pub fn mixed(plan: StepPlan, cutoff: usize) -> Self {
        Self { kind: SamplerKind::Mixed, plan, cutoff: Some(cutoff), variance: VarianceMode::Posterior }
    }

    /// `t_c`, the plan timestep reached after `k_c` skipped-step updates.
    pub fn cutoff_time(&self) -> Option<usize> {
        self.cutoff.and_then(|k| self.plan.timesteps().get(k).copied())
    }

    pub fn validate(&self, s: &NoiseSchedule) -> Result<()> {
        if self.plan.start() != s.steps() {
            return Err(Error::config(format!(
                "plan starts at {} but the schedule has T = {}",
                self.plan.start(),
                s.steps()
            )));
        }
        match (self.kind, self.cutoff) {
            (SamplerKind::Mixed, None) => Err(Error::config("mixed sampler needs a cutoff index k_c")),
            (SamplerKind::Mixed, Some(k)) if k > self.plan.len() => Err(Error::config(format!(
                "cutoff k_c = {k} outside [0, K = {}]",
                self.plan.len()
            ))),
            _ => Ok(()),
        }
    }

    /// The per-update rules this configuration executes.
    pub fn updates(&self, s: &NoiseSchedule) -> Result<Vec<StepUpdate>> {
        self.validate(s)?;
        let stochastic = self.variance == VarianceMode::Posterior;
        let mk = |(t, t_prev), rule| StepUpdate { t, t_prev, rule, stochastic };
        let ups = match self.kind {
            SamplerKind::Ddpm => StepPlan::full(s.steps())?.pairs().map(|p| mk(p, UpdateRule::Ddpm)).collect(),
            SamplerKind::Skipped => self.plan.pairs().map(|p| mk(p, UpdateRule::Skipped)).collect(),
            SamplerKind::Ddim => self.plan.pairs().map(|p| mk(p, UpdateRule::Ddim)).collect(),
            SamplerKind::NaiveSubset => self.plan.pairs().map(|p| mk(p, UpdateRule::Naive)).collect(),
            SamplerKind::Mixed => {
                let k_c = self.cutoff.expect("validated");
                self.plan
                    .pairs()
                    .enumerate()
                    .map(|(k, p)| mk(p, if k < k_c { UpdateRule::Skipped } else { UpdateRule::Ddim }))
                    .collect()
            }
        };
        Ok(ups)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateRule {
    Ddpm,
    Skipped,
    Ddim,
    Naive,
}

/// One reverse update `t → t_prev`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepUpdate {
    pub t: usize,
    pub t_prev: usize,
    pub rule: UpdateRule,
    pub stochastic: bool,
}

impl StepUpdate {
    /// Whether this update adds noise: never into `t' = 0`, never for DDIM.
    pub fn draws_noise(&self) -> bool {
        self.stochastic && self.t_prev > 0 && self.rule != UpdateRule::Ddim
    }

    /// `(c_x, c_ε, σ)` with `x' = c_x x - c_ε ε_θ + σ z`.
    pub fn coefficients(&self, s: &NoiseSchedule) -> Result<(f64, f64, f64)> {
        let (t, tp) = (self.t, self.t_prev);
        let (cx, ce, sd) = match self.rule {
            UpdateRule::Ddpm | UpdateRule::Naive => {
                let c = ddpm_step(s, t)?;
                (c.x_scale, c.x_scale * c.eps_scale, c.sigma)
            }
            UpdateRule::Skipped => {
                let c = skip_coefficients(s, t, t - tp)?;
                (c.rev_coef_xt, c.rev_coef_eps, c.post_var.sqrt())
            }
            UpdateRule::Ddim => {
                let ab = s.alpha_bar(t)?;
                let abp = s.alpha_bar(tp)?;
                let x0_scale = 1.0 / ab.sqrt();
                let x0_eps = (1.0 - ab).sqrt() / ab.sqrt();
                if tp == 0 {
                    (x0_scale, x0_eps, 0.0)
                } else {
                    (abp.sqrt() * x0_scale, abp.sqrt() * x0_eps - (1.0 - abp).sqrt(), 0.0)
                }
            }
        };
        Ok((cx, ce, if self.draws_noise() { sd } else { 0.0 }))
    }
}

/// A diagonal Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    pub mean: Array1<f64>,
    pub cov_diag: Array1<f64>,
}

impl GaussianState {
    pub fn new(mean: Array1<f64>, cov_diag: Array1<f64>) -> Self {
        debug_assert_eq!(mean.len(), cov_diag.len());
        Self { mean, cov_diag }
    }

    /// `N(0, I)` in `dim` dimensions.
    pub fn standard(dim: usize) -> Self {
        Self::new(Array1::zeros(dim), Array1::ones(dim))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn check_pairing(d: &dyn Denoiser, s: &NoiseSchedule) -> Result<()> {
    if d.steps() != s.steps() {
        return Err(Error::config(format!(
            "denoiser expects T = {} but the schedule has T = {}",
            d.steps(),
            s.steps()
        )));
    }
    Ok(())
}

/// Draws the initial `x_T ~ N(0, I)` for `n` rows from `field`.
pub fn initial_noise(field: &NoiseField, n: usize, dim: usize) -> Batch {
    let mut x = Batch::zeros((n, dim));
    if dim > 0 {
        let slice = x.as_slice_mut().expect("contiguous");
        slice.par_chunks_mut(CHUNK_ROWS * dim).enumerate().for_each(|(c, chunk)| {
            field.fill(INIT_STREAM, (c * CHUNK_ROWS) as u64, dim, chunk);
        });
    }
    x
}

fn apply_update(
    d: &dyn Denoiser,
    s: &NoiseSchedule,
    up: &StepUpdate,
    k: usize,
    field: &NoiseField,
    first_row: usize,
    mut x: ArrayViewMut2<'_, f64>,
) -> Result<()> {
    let dim = x.ncols();
    let eps = d.predict_eps(x.view(), up.t)?;
    let mut z = Batch::zeros(x.raw_dim());
    if up.draws_noise() {
        field.fill(k as u64, first_row as u64, dim, z.as_slice_mut().expect("contiguous"));
    }
    match up.rule {
        UpdateRule::Ddpm | UpdateRule::Naive => {
            // x' = (1/√α_t)(x - (1-α_t)/√(1-ᾱ_t) ε_θ) + σ_t z
            let c = ddpm_step(s, up.t)?;
            let sigma = if up.draws_noise() { c.sigma } else { 0.0 };
            Zip::from(&mut x).and(&eps).and(&z).for_each(|x, &e, &z| {
                *x = c.x_scale * (*x - c.eps_scale * e) + sigma * z;
            });
        }
        UpdateRule::Skipped => {
            let c = skip_coefficients(s, up.t, up.t - up.t_prev)?;
            let sd = if up.draws_noise() { c.post_var.sqrt() } else { 0.0 };
            Zip::from(&mut x).and(&eps).and(&z).for_each(|x, &e, &z| {
                *x = c.rev_coef_xt * *x - c.rev_coef_eps * e + sd * z;
            });
        }
        UpdateRule::Ddim => {
            let x0 = predict_x0(x.view(), eps.view(), s, up.t)?;
            if up.t_prev == 0 {
                x.assign(&x0);
            } else {
                let abp = s.alpha_bar(up.t_prev)?;
                let (a, b) = (abp.sqrt(), (1.0 - abp).sqrt());
                Zip::from(&mut x).and(&x0).and(&eps).for_each(|x, &x0, &e| *x = a * x0 + b * e);
            }
        }
    }
    Ok(())
}

/// Runs `updates` starting from `x` (taken as the state at `updates[0].t`).
pub fn run_updates(
    d: &dyn Denoiser,
    s: &NoiseSchedule,
    updates: &[StepUpdate],
    mut x: Batch,
    field: &NoiseField,
) -> Result<Batch> {
    check_pairing(d, s)?;
    let dim = x.ncols();
    if dim != d.dim() {
        return Err(Error::config(format!("state dimension {dim} but denoiser dimension {}", d.dim())));
    }
    if x.nrows() == 0 {
        return Ok(x);
    }
    if !x.is_standard_layout() {
        x = x.as_standard_layout().into_owned();
    }
    for (k, up) in updates.iter().enumerate() {
        let slice = x.as_slice_mut().expect("standard layout");
        slice.par_chunks_mut(CHUNK_ROWS * dim).enumerate().try_for_each(|(c, chunk)| {
            let rows = chunk.len() / dim;
            let view = ArrayViewMut2::from_shape((rows, dim), chunk).expect("chunk shape");
            apply_update(d, s, up, k, field, c * CHUNK_ROWS, view)
        })?;
    }
    Ok(x)
}

/// Runs a configured sampler from a caller-supplied `x_T`.
pub fn sample_from(
    d: &dyn Denoiser,
    s: &NoiseSchedule,
    cfg: &SamplerConfig,
    x_init: Batch,
    rng: &mut RandomSource,
) -> Result<Batch> {
    let updates = cfg.updates(s)?;
    let field = rng.noise_field();
    run_updates(d, s, &updates, x_init, &field)
}

/// Runs a configured sampler for `n` rows.
pub fn sample(
    d: &dyn Denoiser,
    s: &NoiseSchedule,
    cfg: &SamplerConfig,
    n: usize,
    rng: &mut RandomSource,
) -> Result<Batch> {
    let updates = cfg.updates(s)?;
    check_pairing(d, s)?;
    let field = rng.noise_field();
    let x = initial_noise(&field, n, d.dim());
    run_updates(d, s, &updates, x, &field)
}

/// Ancestral sampling over all `T` steps.
pub fn ddpm_sample(d: &dyn Denoiser, s: &NoiseSchedule, n: usize, rng: &mut RandomSource) -> Result<Batch> {
    sample(d, s, &SamplerConfig::new(SamplerKind::Ddpm, StepPlan::full(s.steps())?), n, rng)
}

/// Skipped-step sampling along `plan`.
pub fn skipped_sample(
    d: &dyn Denoiser,
    s: &NoiseSchedule,
    plan: &StepPlan,
    n: usize,
    rng: &mut RandomSource,
) -> Result<Batch> {
    sample(d, s, &SamplerConfig::new(SamplerKind::Skipped, plan.clone()), n, rng)
}

/// Deterministic DDIM (η = 0) along `plan`.
pub fn ddim_sample(
    d: &dyn Denoiser,
    s: &NoiseSchedule,
    plan: &StepPlan,
    n: usize,
    rng: &mut RandomSource,
) -> Result<Batch> {
    sample(d, s, &SamplerConfig::new(SamplerKind::Ddim, plan.clone()), n, rng)
}

/// `k_c` skipped-step updates followed by DDIM for the rest of `plan`.
pub fn mixed_sample(
    d: &dyn Denoiser,
    s: &NoiseSchedule,
    plan: &StepPlan,
    k_c: usize,
    n: usize,
    rng: &mut RandomSource,
) -> Result<Batch> {
    sample(d, s, &SamplerConfig::mixed(plan.clone(), k_c), n, rng)
}

/// Single-step DDPM coefficients applied on the subsampled plan.
pub fn naive_subset_sample(
    d: &dyn Denoiser,
    s: &NoiseSchedule,
    plan: &StepPlan,
    n: usize,
    rng: &mut RandomSource,
) -> Result<Batch> {
    sample(d, s, &SamplerConfig::new(SamplerKind::NaiveSubset, plan.clone()), n, rng)
}

/// Pushes a Gaussian through `updates` under an affine denoiser.
///
/// With `ε_θ(x, t) = A_t x + b_t` each update is
/// `x' = (c_x - c_ε A_t) x - c_ε b_t + σ z`, so the mean maps affinely and
/// the variance as `C² v + σ²`.
pub fn propagate_affine_updates(
    d: &dyn Denoiser,
    s: &NoiseSchedule,
    updates: &[StepUpdate],
    start: GaussianState,
) -> Result<GaussianState> {
    check_pairing(d, s)?;
    if start.dim() != d.dim() {
        return Err(Error::config("start state dimension does not match the denoiser"));
    }
    let mut st = start;
    for up in updates {
        let a = d.affine_form(up.t)?;
        let (cx, ce, sd) = up.coefficients(s)?;
        let c = a.scale.mapv(|a| cx - ce * a);
        st.mean = &c * &st.mean - &(a.offset * ce);
        st.cov_diag = &c * &c * &st.cov_diag + sd * sd;
    }
    Ok(st)
}

/// Exact output distribution of a sampler under an affine denoiser,
/// starting from `x_T ~ N(0, I)`.
pub fn propagate_affine(d: &dyn Denoiser, s: &NoiseSchedule, cfg: &SamplerConfig) -> Result<GaussianState> {
    let updates = cfg.updates(s)?;
    propagate_affine_updates(d, s, &updates, GaussianState::standard(d.dim()))
}
