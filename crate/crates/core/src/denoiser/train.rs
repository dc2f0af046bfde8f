use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::MlpDenoiser;
use crate::forward::RandomSource;
use crate::schedule::{skip_coefficients, NoiseSchedule};
use crate::{Error, Result};

/// Per-sample weighting of the ε-matching loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Unit weight for every `(t, m)` draw.
    Simple,
    /// `(ᾱ_{t-m} - ᾱ_t)² / (2σ² ᾱ_t ᾱ_{t-m} (1 - ᾱ_t))`.
    Weighted,
}

/// Choice of `σ²` inside the weighted loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    /// Skipped-step posterior variance of the drawn `(t, m)`; falls back to
    /// the forward variance when the posterior variance is zero (`t = m`).
    Posterior,
    /// Forward kernel variance `1 - ᾱ_t/ᾱ_{t-m}`.
    Forward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_loss")]
    pub loss: LossMode,
    #[serde(default = "default_sigma")]
    pub sigma: SigmaMode,
    #[serde(default)]
    pub seed: u64,
}

fn default_batch() -> usize {
    256
}
fn default_lr() -> f64 {
    0.01
}
fn default_momentum() -> f64 {
    0.9
}
fn default_loss() -> LossMode {
    LossMode::Simple
}
fn default_sigma() -> SigmaMode {
    SigmaMode::Posterior
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch_size: default_batch(),
            learning_rate: default_lr(),
            momentum: default_momentum(),
            loss: default_loss(),
            sigma: default_sigma(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("train.momentum must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Weight of one `(t, m)` draw in the weighted loss.
pub fn loss_weight(s: &NoiseSchedule, t: usize, m: usize, sigma: SigmaMode) -> Result<f64> {
    let c = skip_coefficients(s, t, m)?;
    let ab_t = s.alpha_bar(t)?;
    let ab_p = s.alpha_bar(t - m)?;
    let var = match sigma {
        SigmaMode::Posterior if c.post_var > 0.0 => c.post_var,
        SigmaMode::Posterior | SigmaMode::Forward => c.fwd_var,
    };
    let gap = ab_p - ab_t;
    Ok(gap * gap / (2.0 * var * ab_t * ab_p * (1.0 - ab_t)))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpDenoiser,
    /// Mean batch loss per iteration.
    pub losses: Vec<f64>,
}

/// Fits `model` to `data` by minimizing the ε-matching loss.
///
/// Each iteration draws a batch of data rows and, per row, `t ~ U[1, T]`,
/// `m ~ U[1, max(1, t-1)]` and `ε ~ N(0, I)`, forms
/// `x_t = √ᾱ_t x_0 + √(1-ᾱ_t) ε`, and takes one momentum-SGD step on the
/// batch mean of `w · ‖ε - ε_θ(x_t, t)‖²`. `m` only enters through `w`.
pub fn train(
    model: MlpDenoiser,
    data: ArrayView2<'_, f64>,
    cfg: &TrainConfig,
    s: &NoiseSchedule,
    rng: &mut RandomSource,
) -> Result<TrainOutcome> {
    use super::Denoiser;

    cfg.validate()?;
    if data.nrows() == 0 {
        return Err(Error::config("training dataset is empty"));
    }
    if data.ncols() != model.dim() {
        return Err(Error::config(format!(
            "dataset dimension {} does not match model dimension {}",
            data.ncols(),
            model.dim()
        )));
    }
    if model.steps() != s.steps() {
        return Err(Error::config(format!(
            "model built for T = {} but schedule has T = {}",
            model.steps(),
            s.steps()
        )));
    }

    let mut model = model;
    let dim = data.ncols();
    let big_t = s.steps();
    let b = cfg.batch_size;
    let mut velocity = model.zero_gradients();
    let mut losses = Vec::with_capacity(cfg.steps);

    let mut xt = Array2::zeros((b, dim));
    let mut eps = Array2::zeros((b, dim));
    let mut ts = vec![0usize; b];
    let mut weights = vec![1.0; b];

    for step in 0..cfg.steps {
        for i in 0..b {
            let row = data.row(rng.below(data.nrows()));
            let t = rng.range_inclusive(1, big_t);
            let m = rng.range_inclusive(1, (t - 1).max(1));
            ts[i] = t;
            weights[i] = match cfg.loss {
                LossMode::Simple => 1.0,
                LossMode::Weighted => loss_weight(s, t, m, cfg.sigma)?,
            };
            let ab = s.alpha_bar(t)?;
            let (a, n) = (ab.sqrt(), (1.0 - ab).sqrt());
            for j in 0..dim {
                let e = rng.normal();
                eps[[i, j]] = e;
                xt[[i, j]] = a * row[j] + n * e;
            }
        }
        let (loss, grad) = model.loss_and_gradient(xt.view(), &ts, eps.view(), &weights)?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("loss became {loss} at training step {step}")));
        }
        losses.push(loss);
        // v ← μ v − lr g ; θ ← θ + v
        for (v, g) in velocity.weight.iter_mut().zip(&grad.weight) {
            v.zip_mut_with(g, |v, &g| *v = cfg.momentum * *v - cfg.learning_rate * g);
        }
        for (v, g) in velocity.bias.iter_mut().zip(&grad.bias) {
            v.zip_mut_with(g, |v, &g| *v = cfg.momentum * *v - cfg.learning_rate * g);
        }
        model.apply(&velocity, 1.0);
    }
    Ok(TrainOutcome { model, losses })
}
