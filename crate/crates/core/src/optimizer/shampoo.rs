//! Shampoo: one preconditioner per tensor mode.
//!
//! For an order-k parameter tensor the optimizer keeps, for every mode `i`, a
//! statistic `H_i = eps*I + sum_t contract(G_t, i)` (or just its diagonal)
//! and updates
//!
//! ```text
//! W <- W - lr * (G x_1 H_1^{-1/2k} x_2 ... x_k H_k^{-1/2k})
//! ```
//!
//! Roots are refreshed every `root_update_interval` steps and on the first
//! step. A momentum average of gradients can replace `G` in the update.

use serde::{Deserialize, Serialize};

use super::{check_gradient, Optimizer};
use crate::error::{Error, Result};
use crate::psd::{diagonal_power, matrix_power, SymMatrix};
use crate::scalar::Scalar;
use crate::tensor::DenseTensor;

/// Exponent applied to each mode statistic of an order-`k` tensor: `-1/(2k)`.
pub fn exponent_for(order: usize) -> f64 {
    assert!(order >= 1, "tensor order must be at least 1");
    -1.0 / (2.0 * order as f64)
}

/// Representation of one mode's preconditioner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeVariant {
    Full,
    Diagonal,
}

/// Per-mode override; `Auto` defers to `diag_threshold`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeChoice {
    #[default]
    Auto,
    Full,
    Diagonal,
}

/// Where the momentum average enters the step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentumPlacement {
    /// Statistics accumulate raw gradients; the averaged gradient is preconditioned.
    #[default]
    Gradient,
    /// Statistics accumulate the averaged gradient, which is also preconditioned.
    Statistics,
    /// Raw gradients are preconditioned and the average is taken afterwards.
    Update,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShampooConfig {
    pub learning_rate: f64,
    /// Ridge added to every mode statistic at initialization.
    pub epsilon: f64,
    /// Averaging weight `alpha` in `G_bar = alpha*G_bar + (1-alpha)*G`.
    pub momentum: f64,
    pub root_update_interval: u64,
    /// Modes with more entries than this use the diagonal variant.
    pub diag_threshold: usize,
    /// Either empty or one entry per mode.
    pub mode_overrides: Vec<ModeChoice>,
    pub momentum_placement: MomentumPlacement,
}

impl Default for ShampooConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            epsilon: 1e-4,
            momentum: 0.0,
            root_update_interval: 20,
            diag_threshold: 1200,
            mode_overrides: Vec::new(),
            momentum_placement: MomentumPlacement::Gradient,
        }
    }
}

impl ShampooConfig {
    /// Exact algorithm: roots every step, no momentum.
    pub fn exact(learning_rate: f64, epsilon: f64) -> Self {
        Self {
            learning_rate,
            epsilon,
            momentum: 0.0,
            root_update_interval: 1,
            ..Self::default()
        }
    }

    /// Forces every mode of an order-`order` tensor to the diagonal variant.
    pub fn all_diagonal(mut self, order: usize) -> Self {
        self.mode_overrides = vec![ModeChoice::Diagonal; order];
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive and finite");
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be nonnegative and finite");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.root_update_interval == 0 {
            return bad("root_update_interval must be at least 1");
        }
        if self.diag_threshold == 0 {
            return bad("diag_threshold must be positive");
        }
        Ok(())
    }

    fn variant_for(&self, mode: usize, extent: usize) -> ModeVariant {
        match self.mode_overrides.get(mode).copied().unwrap_or_default() {
            ModeChoice::Full => ModeVariant::Full,
            ModeChoice::Diagonal => ModeVariant::Diagonal,
            ModeChoice::Auto if extent > self.diag_threshold => ModeVariant::Diagonal,
            ModeChoice::Auto => ModeVariant::Full,
        }
    }
}

/// Accumulated statistic of one mode and its cached inverse root.
#[derive(Clone, Debug, PartialEq)]
pub enum ModeStats<T> {
    Full {
        stats: SymMatrix<T>,
        root: SymMatrix<T>,
    },
    Diagonal {
        stats: Vec<T>,
        root: Vec<T>,
    },
}

impl<T: Scalar> ModeStats<T> {
    pub fn variant(&self) -> ModeVariant {
        match self {
            ModeStats::Full { .. } => ModeVariant::Full,
            ModeStats::Diagonal { .. } => ModeVariant::Diagonal,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ModeStats::Full { stats, .. } => stats.dim(),
            ModeStats::Diagonal { stats, .. } => stats.len(),
        }
    }

    /// The statistic as a symmetric matrix (diagonal variants expanded).
    pub fn stats_matrix(&self) -> SymMatrix<T> {
        match self {
            ModeStats::Full { stats, .. } => stats.clone(),
            ModeStats::Diagonal { stats, .. } => SymMatrix::from_diagonal(stats),
        }
    }

    /// The cached root as a symmetric matrix (diagonal variants expanded).
    pub fn root_matrix(&self) -> SymMatrix<T> {
        match self {
            ModeStats::Full { root, .. } => root.clone(),
            ModeStats::Diagonal { root, .. } => SymMatrix::from_diagonal(root),
        }
    }

    /// `trace(stats^alpha)` under the clamping rule of [`crate::psd`].
    pub fn trace_power(&self, alpha: T) -> Result<T> {
        match self {
            ModeStats::Full { stats, .. } => crate::psd::trace_power(stats, alpha),
            ModeStats::Diagonal { stats, .. } => {
                Ok(diagonal_power(stats, alpha)?.into_iter().sum())
            }
        }
    }

    fn apply(&self, t: &DenseTensor<T>, mode: usize) -> Result<DenseTensor<T>> {
        match self {
            ModeStats::Full { root, .. } => t.mode_product(mode, &root.to_dense()),
            ModeStats::Diagonal { root, .. } => t.scale_mode(mode, root),
        }
    }

    fn accumulate(&self, g: &DenseTensor<T>, mode: usize) -> Result<Self> {
        Ok(match self {
            ModeStats::Full { stats, root } => ModeStats::Full {
                stats: stats.add(&g.contract(mode)?)?,
                root: root.clone(),
            },
            ModeStats::Diagonal { stats, root } => ModeStats::Diagonal {
                stats: stats
                    .iter()
                    .zip(g.contract_diagonal(mode)?)
                    .map(|(&a, b)| a + b)
                    .collect(),
                root: root.clone(),
            },
        })
    }

    fn refresh_root(&mut self, exponent: T) -> Result<()> {
        match self {
            ModeStats::Full { stats, root } => *root = matrix_power(stats, exponent)?,
            ModeStats::Diagonal { stats, root } => *root = diagonal_power(stats, exponent)?,
        }
        Ok(())
    }
}

/// Outcome of one optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport<T> {
    /// Frobenius norm of the preconditioned direction (before the learning rate).
    pub update_norm: T,
    pub roots_recomputed: bool,
    pub variants: Vec<ModeVariant>,
}

/// Optimizer state for a single parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ShampooState<T> {
    pub(crate) params: DenseTensor<T>,
    pub(crate) modes: Vec<ModeStats<T>>,
    pub(crate) momentum: DenseTensor<T>,
    pub(crate) step: u64,
    /// Step at which the cached roots were last computed; 0 means never.
    pub(crate) roots_step: u64,
    pub(crate) config: ShampooConfig,
}

impl<T: Scalar> ShampooState<T> {
    /// Zero parameters and `eps*I` statistics on every mode.
    pub fn new(shape: &[usize], config: ShampooConfig) -> Result<Self> {
        Self::with_params(DenseTensor::zeros(shape)?, config)
    }

    pub fn with_params(params: DenseTensor<T>, config: ShampooConfig) -> Result<Self> {
        config.validate()?;
        let shape = params.shape().to_vec();
        if !config.mode_overrides.is_empty() && config.mode_overrides.len() != shape.len() {
            return Err(Error::InvalidConfig(format!(
                "mode_overrides has {} entries for an order-{} tensor",
                config.mode_overrides.len(),
                shape.len()
            )));
        }
        let eps = T::lit(config.epsilon);
        let modes = shape
            .iter()
            .enumerate()
            .map(|(mode, &n)| match config.variant_for(mode, n) {
                ModeVariant::Full => ModeStats::Full {
                    stats: SymMatrix::scaled_identity(n, eps),
                    root: SymMatrix::identity(n),
                },
                ModeVariant::Diagonal => ModeStats::Diagonal {
                    stats: vec![eps; n],
                    root: vec![T::one(); n],
                },
            })
            .collect();
        Ok(Self {
            momentum: DenseTensor::zeros(&shape)?,
            params,
            modes,
            step: 0,
            roots_step: 0,
            config,
        })
    }

    pub fn params(&self) -> &DenseTensor<T> {
        &self.params
    }

    pub fn config(&self) -> &ShampooConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Step at which roots were last refreshed, `None` before the first step.
    pub fn roots_step(&self) -> Option<u64> {
        (self.roots_step > 0).then_some(self.roots_step)
    }

    pub fn modes(&self) -> &[ModeStats<T>] {
        &self.modes
    }

    pub fn momentum_buffer(&self) -> &DenseTensor<T> {
        &self.momentum
    }

    pub fn order(&self) -> usize {
        self.params.order()
    }

    pub fn variants(&self) -> Vec<ModeVariant> {
        self.modes.iter().map(ModeStats::variant).collect()
    }

    /// `-1/(2k)` for this tensor's order.
    pub fn exponent(&self) -> f64 {
        exponent_for(self.order())
    }

    /// Applies the cached roots to `g`, visiting modes in `order`.
    pub fn precondition_in_order(
        &self,
        g: &DenseTensor<T>,
        order: &[usize],
    ) -> Result<DenseTensor<T>> {
        let mut out = g.clone();
        for &mode in order {
            out = self.modes[mode].apply(&out, mode)?;
        }
        Ok(out)
    }

    /// Applies the cached roots to `g` in mode order.
    pub fn precondition(&self, g: &DenseTensor<T>) -> Result<DenseTensor<T>> {
        let order: Vec<usize> = (0..self.order()).collect();
        self.precondition_in_order(g, &order)
    }

    /// One step with each mode's configured variant. On error the state is unchanged.
    pub fn step(&mut self, grad: &DenseTensor<T>) -> Result<StepReport<T>> {
        check_gradient(&self.params, grad)?;
        let t = self.step + 1;
        let alpha = T::lit(self.config.momentum);
        let one_minus = T::one() - alpha;
        let placement = self.config.momentum_placement;

        let averaged = self.momentum.scale(alpha).add(&grad.scale(one_minus))?;
        let stats_source = match placement {
            MomentumPlacement::Statistics => &averaged,
            _ => grad,
        };

        let mut modes = self
            .modes
            .iter()
            .enumerate()
            .map(|(mode, m)| m.accumulate(stats_source, mode))
            .collect::<Result<Vec<_>>>()?;

        let recompute = t == 1 || t.is_multiple_of(self.config.root_update_interval);
        if recompute {
            let exponent = T::lit(self.exponent());
            for m in &mut modes {
                m.refresh_root(exponent)?;
            }
        }

        let mut staged = Self {
            params: self.params.clone(),
            modes,
            momentum: self.momentum.clone(),
            step: t,
            roots_step: if recompute { t } else { self.roots_step },
            config: self.config.clone(),
        };

        let direction = match placement {
            MomentumPlacement::Update => {
                let pre = staged.precondition(grad)?;
                staged.momentum = self.momentum.scale(alpha).add(&pre.scale(one_minus))?;
                staged.momentum.clone()
            }
            _ => {
                staged.momentum = averaged;
                staged.precondition(&staged.momentum)?
            }
        };
        if let Some(index) = direction.first_non_finite() {
            return Err(Error::NonFinite { index });
        }
        staged
            .params
            .axpy(-T::lit(self.config.learning_rate), &direction)?;

        let report = StepReport {
            update_norm: direction.frobenius_norm(),
            roots_recomputed: recompute,
            variants: staged.variants(),
        };
        *self = staged;
        Ok(report)
    }

    /// Step for a state whose modes are all diagonal.
    pub fn step_diagonal(&mut self, grad: &DenseTensor<T>) -> Result<StepReport<T>> {
        if let Some(mode) = self
            .modes
            .iter()
            .position(|m| m.variant() != ModeVariant::Diagonal)
        {
            return Err(Error::VariantMismatch(format!(
                "mode {mode} uses a full preconditioner"
            )));
        }
        self.step(grad)
    }
}

impl<T: Scalar> Optimizer<T> for ShampooState<T> {
    fn name(&self) -> &str {
        "shampoo"
    }

    fn params(&self) -> &DenseTensor<T> {
        &self.params
    }

    fn set_params(&mut self, params: DenseTensor<T>) -> Result<()> {
        if params.shape() != self.params.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.params.shape().to_vec(),
                actual: params.shape().to_vec(),
            });
        }
        self.params = params;
        Ok(())
    }

    fn apply_gradient(&mut self, grad: &DenseTensor<T>) -> Result<()> {
        self.step(grad).map(|_| ())
    }
}
