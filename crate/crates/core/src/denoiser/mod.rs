//! The ε-prediction interface and its two realizations.
//!
//! [`GaussianOracle`] is the exact posterior-mean noise predictor for
//! diagonal Gaussian data and is affine in `x`, which makes every sampler's
//! output distribution computable in closed form. [`MlpDenoiser`] is a small
//! trainable network for toy datasets.

mod checkpoint;
mod mlp;
mod oracle;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use mlp::{time_embedding, MlpDenoiser, MlpGradients};
pub use oracle::GaussianOracle;
pub use train::{loss_weight, train, LossMode, SigmaMode, TrainConfig, TrainOutcome};

use ndarray::{Array1, ArrayView2};

use crate::{Batch, Error, Result};

/// A noise predictor `ε_θ(x, t)` over batches of shape `(n, dim)`.
pub trait Denoiser: Send + Sync {
    /// Data dimension.
    fn dim(&self) -> usize;

    /// Number of diffusion steps `T` the predictor is defined for.
    fn steps(&self) -> usize;

    /// Predicted noise, same shape as `x`, for every row at timestep `t`.
    fn predict_eps(&self, x: ArrayView2<'_, f64>, t: usize) -> Result<Batch>;

    /// The affine form `ε_θ(x, t) = scale ⊙ x + offset` when the predictor
    /// has one.
    fn affine_form(&self, _t: usize) -> Result<AffineEps> {
        Err(Error::Unsupported("denoiser has no affine form".into()))
    }
}

/// Diagonal affine noise predictor at a fixed timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineEps {
    pub scale: Array1<f64>,
    pub offset: Array1<f64>,
}

pub(crate) fn check_input(x: &ArrayView2<'_, f64>, dim: usize, t: usize, steps: usize) -> Result<()> {
    if x.ncols() != dim {
        return Err(Error::config(format!(
            "denoiser expects dimension {dim}, got {}",
            x.ncols()
        )));
    }
    if t == 0 || t > steps {
        return Err(Error::index(format!("timestep {t} outside [1, {steps}]")));
    }
    Ok(())
}
