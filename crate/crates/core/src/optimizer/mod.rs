//! Optimizers sharing a single gradient-step interface.

mod checkpoint;
mod shampoo;

pub use checkpoint::{deserialize, serialize, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use shampoo::{
    exponent_for, ModeChoice, ModeStats, ModeVariant, MomentumPlacement, ShampooConfig,
    ShampooState, StepReport,
};

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::DenseTensor;

/// Online learner that consumes one gradient per round.
pub trait Optimizer<T: Scalar> {
    fn name(&self) -> &str;

    /// Current iterate.
    fn params(&self) -> &DenseTensor<T>;

    /// Replaces the iterate without touching accumulated statistics.
    fn set_params(&mut self, params: DenseTensor<T>) -> Result<()>;

    /// Consumes the gradient at the current iterate and moves to the next one.
    /// On error the optimizer state is unchanged.
    fn apply_gradient(&mut self, grad: &DenseTensor<T>) -> Result<()>;
}

pub(crate) fn check_gradient<T: Scalar>(
    params: &DenseTensor<T>,
    grad: &DenseTensor<T>,
) -> Result<()> {
    if params.shape() != grad.shape() {
        return Err(crate::Error::ShapeMismatch {
            expected: params.shape().to_vec(),
            actual: grad.shape().to_vec(),
        });
    }
    if let Some(index) = grad.first_non_finite() {
        return Err(crate::Error::NonFinite { index });
    }
    Ok(())
}
