//! Structure-oblivious reference optimizers: SGD, diagonal AdaGrad, Adam and
//! full-matrix AdaGrad over the flattened parameter vector.
//!
//! SGD and both AdaGrads use the same momentum convention as Shampoo: the
//! update direction is `G_bar = alpha*G_bar + (1-alpha)*G` while second-moment
//! statistics see the raw gradient. Adam has its own first moment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::{check_gradient, Optimizer};
use crate::psd::{matrix_power, SymMatrix};
use crate::scalar::Scalar;
use crate::tensor::DenseTensor;

/// Largest flattened dimension full-matrix AdaGrad accepts.
pub const FULL_ADAGRAD_MAX_DIM: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Sgd,
    AdagradDiag,
    Adam,
    AdagradFull,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [
        BaselineKind::Sgd,
        BaselineKind::AdagradDiag,
        BaselineKind::Adam,
        BaselineKind::AdagradFull,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Sgd => "sgd",
            BaselineKind::AdagradDiag => "adagrad_diag",
            BaselineKind::Adam => "adam",
            BaselineKind::AdagradFull => "adagrad_full",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    /// AdaGrad ridge inside the root, or Adam's denominator offset.
    pub epsilon: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            momentum: 0.0,
            epsilon: 1e-8,
            beta1: 0.9,
            beta2: 0.999,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive and finite");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be nonnegative and finite");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Accumulators<T> {
    Sgd,
    AdagradDiag { sum_sq: Vec<T> },
    Adam { first: Vec<T>, second: Vec<T> },
    AdagradFull { sum_outer: SymMatrix<T> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineState<T> {
    kind: BaselineKind,
    params: DenseTensor<T>,
    momentum: Vec<T>,
    acc: Accumulators<T>,
    /// Adam bias-correction timestep.
    step: u64,
    config: BaselineConfig,
}

impl<T: Scalar> BaselineState<T> {
    pub fn new(kind: BaselineKind, shape: &[usize], config: BaselineConfig) -> Result<Self> {
        Self::with_params(kind, DenseTensor::zeros(shape)?, config)
    }

    pub fn with_params(
        kind: BaselineKind,
        params: DenseTensor<T>,
        config: BaselineConfig,
    ) -> Result<Self> {
        config.validate()?;
        let n = params.len();
        let acc = match kind {
            BaselineKind::Sgd => Accumulators::Sgd,
            BaselineKind::AdagradDiag => Accumulators::AdagradDiag {
                sum_sq: vec![T::zero(); n],
            },
            BaselineKind::Adam => Accumulators::Adam {
                first: vec![T::zero(); n],
                second: vec![T::zero(); n],
            },
            BaselineKind::AdagradFull => {
                if n > FULL_ADAGRAD_MAX_DIM {
                    return Err(Error::InvalidConfig(format!(
                        "full-matrix AdaGrad over {n} parameters exceeds the limit of {FULL_ADAGRAD_MAX_DIM}"
                    )));
                }
                Accumulators::AdagradFull {
                    sum_outer: SymMatrix::scaled_identity(n, T::zero()),
                }
            }
        };
        Ok(Self {
            kind,
            momentum: vec![T::zero(); n],
            params,
            acc,
            step: 0,
            config,
        })
    }

    pub fn kind(&self) -> BaselineKind {
        self.kind
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// `sum_t g_t g_t^T` for full-matrix AdaGrad.
    pub fn full_statistic(&self) -> Option<&SymMatrix<T>> {
        match &self.acc {
            Accumulators::AdagradFull { sum_outer } => Some(sum_outer),
            _ => None,
        }
    }

    /// One update. On error the state is unchanged.
    pub fn step(&mut self, grad: &DenseTensor<T>) -> Result<()> {
        check_gradient(&self.params, grad)?;
        let g = grad.data();
        let lr = T::lit(self.config.learning_rate);
        let alpha = T::lit(self.config.momentum);
        let eps = T::lit(self.config.epsilon);
        let averaged: Vec<T> = self
            .momentum
            .iter()
            .zip(g)
            .map(|(&m, &x)| alpha * m + (T::one() - alpha) * x)
            .collect();

        let mut acc = self.acc.clone();
        let step = self.step + 1;
        let direction: Vec<T> = match &mut acc {
            Accumulators::Sgd => averaged.clone(),
            Accumulators::AdagradDiag { sum_sq } => {
                for (s, &x) in sum_sq.iter_mut().zip(g) {
                    *s += x * x;
                }
                sum_sq
                    .iter()
                    .zip(&averaged)
                    .map(|(&s, &m)| {
                        let denom = (s + eps).sqrt();
                        if denom > T::zero() {
                            m / denom
                        } else {
                            T::zero()
                        }
                    })
                    .collect()
            }
            Accumulators::Adam { first, second } => {
                let b1 = T::lit(self.config.beta1);
                let b2 = T::lit(self.config.beta2);
                let c1 = T::one() - b1.powi(step as i32);
                let c2 = T::one() - b2.powi(step as i32);
                first
                    .iter_mut()
                    .zip(second.iter_mut())
                    .zip(g)
                    .map(|((m, v), &x)| {
                        *m = b1 * *m + (T::one() - b1) * x;
                        *v = b2 * *v + (T::one() - b2) * x * x;
                        (*m / c1) / ((*v / c2).sqrt() + eps)
                    })
                    .collect()
            }
            Accumulators::AdagradFull { sum_outer } => {
                *sum_outer = sum_outer.add(&SymMatrix::outer(g))?;
                let mut reg = sum_outer.clone();
                reg.add_identity(eps);
                let root = matrix_power(&reg, T::lit(-0.5))?;
                root.matvec(&averaged)
            }
        };
        if let Some(index) = direction.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        let mut params = self.params.clone();
        for (w, &d) in params.data_mut().iter_mut().zip(&direction) {
            *w -= lr * d;
        }
        self.params = params;
        self.acc = acc;
        self.momentum = averaged;
        self.step = step;
        Ok(())
    }
}

impl<T: Scalar> Optimizer<T> for BaselineState<T> {
    fn name(&self) -> &str {
        self.kind.name()
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
        self.step(grad)
    }
}
