use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineConfig, BaselineKind, FULL_ADAGRAD_MAX_DIM};
use crate::error::{Error, Result};
use crate::optimizer::{ModeVariant, ShampooConfig};
use crate::problems::ProblemSpec;

/// Top-level experiment file. See the README for the schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub horizon: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    pub problem: ProblemSpec,
    pub optimizer: OptimizerSpec,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

fn default_batch() -> usize {
    16
}

/// Optimizer name plus its hyperparameters, flattened into one table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum OptimizerSpec {
    Shampoo(ShampooConfig),
    Sgd(BaselineConfig),
    AdagradDiag(BaselineConfig),
    Adam(BaselineConfig),
    AdagradFull(BaselineConfig),
}

impl OptimizerSpec {
    pub fn baseline(kind: BaselineKind, config: BaselineConfig) -> Self {
        match kind {
            BaselineKind::Sgd => OptimizerSpec::Sgd(config),
            BaselineKind::AdagradDiag => OptimizerSpec::AdagradDiag(config),
            BaselineKind::Adam => OptimizerSpec::Adam(config),
            BaselineKind::AdagradFull => OptimizerSpec::AdagradFull(config),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerSpec::Shampoo(_) => "shampoo",
            OptimizerSpec::Sgd(_) => "sgd",
            OptimizerSpec::AdagradDiag(_) => "adagrad_diag",
            OptimizerSpec::Adam(_) => "adam",
            OptimizerSpec::AdagradFull(_) => "adagrad_full",
        }
    }

    pub fn learning_rate(&self) -> f64 {
        match self {
            OptimizerSpec::Shampoo(c) => c.learning_rate,
            OptimizerSpec::Sgd(c)
            | OptimizerSpec::AdagradDiag(c)
            | OptimizerSpec::Adam(c)
            | OptimizerSpec::AdagradFull(c) => c.learning_rate,
        }
    }

    pub fn with_learning_rate(&self, learning_rate: f64) -> Self {
        let mut out = self.clone();
        match &mut out {
            OptimizerSpec::Shampoo(c) => c.learning_rate = learning_rate,
            OptimizerSpec::Sgd(c)
            | OptimizerSpec::AdagradDiag(c)
            | OptimizerSpec::Adam(c)
            | OptimizerSpec::AdagradFull(c) => c.learning_rate = learning_rate,
        }
        out
    }

    pub fn baseline_kind(&self) -> Option<BaselineKind> {
        match self {
            OptimizerSpec::Shampoo(_) => None,
            OptimizerSpec::Sgd(_) => Some(BaselineKind::Sgd),
            OptimizerSpec::AdagradDiag(_) => Some(BaselineKind::AdagradDiag),
            OptimizerSpec::Adam(_) => Some(BaselineKind::Adam),
            OptimizerSpec::AdagradFull(_) => Some(BaselineKind::AdagradFull),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            OptimizerSpec::Shampoo(c) => c.validate(),
            OptimizerSpec::Sgd(c)
            | OptimizerSpec::AdagradDiag(c)
            | OptimizerSpec::Adam(c)
            | OptimizerSpec::AdagradFull(c) => c.validate(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Directory for all artifacts; `--out` overrides it.
    pub dir: PathBuf,
    /// File stem: `<name>.csv`, `<name>.json`, `<name>.ckpt`.
    pub name: String,
    pub json: bool,
    /// Write the final Shampoo state as a binary checkpoint.
    pub checkpoint: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("results"),
            name: "run".to_string(),
            json: true,
            checkpoint: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    /// Evaluate the regret bound with the theory step size.
    pub bound_check: bool,
    /// Check the Kronecker preconditioner against the full-matrix one every step.
    pub dominance_check: bool,
    /// Mirror the run with an explicit flattened Kronecker preconditioner.
    pub equivalence_check: bool,
    /// Fill `wall_ns`; off by default so output is reproducible byte for byte.
    pub record_wall_time: bool,
}

/// Largest flattened dimension for the dense per-step checks.
pub(crate) const DENSE_CHECK_MAX_DIM: usize = 256;

impl ExperimentConfig {
    /// Default Shampoo on `problem` with seed 0, batch 16 and no checks.
    pub fn new(problem: ProblemSpec, horizon: usize) -> Self {
        Self {
            seed: 0,
            horizon,
            batch: default_batch(),
            problem,
            optimizer: OptimizerSpec::Shampoo(ShampooConfig::default()),
            output: OutputConfig::default(),
            verify: VerifyConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<()> {
        self.problem
            .validate()
            .map_err(|e| Error::InvalidConfig(format!("problem: {e}")))?;
        self.optimizer.validate()?;
        if self.batch == 0 {
            return Err(Error::InvalidConfig("batch must be at least 1".into()));
        }
        let n: usize = self.problem.shape.iter().product();
        if matches!(self.optimizer, OptimizerSpec::AdagradFull(_)) && n > FULL_ADAGRAD_MAX_DIM {
            return Err(Error::InvalidConfig(format!(
                "adagrad_full over {n} parameters exceeds {FULL_ADAGRAD_MAX_DIM}"
            )));
        }
        let v = &self.verify;
        if v.bound_check || v.dominance_check || v.equivalence_check {
            let OptimizerSpec::Shampoo(sc) = &self.optimizer else {
                return Err(Error::InvalidConfig(
                    "bound, dominance and equivalence checks need optimizer shampoo".into(),
                ));
            };
            let variants = shampoo_variants(sc, &self.problem.shape)?;
            let all_full = variants.iter().all(|&v| v == ModeVariant::Full);
            let all_diag = variants.iter().all(|&v| v == ModeVariant::Diagonal);
            if v.bound_check && !(all_full || (all_diag && variants.len() == 2)) {
                return Err(Error::InvalidConfig(
                    "bound check needs every mode full, or every mode diagonal on a matrix".into(),
                ));
            }
            if (v.dominance_check || v.equivalence_check) && !all_full {
                return Err(Error::InvalidConfig(
                    "dominance and equivalence checks need full modes".into(),
                ));
            }
            if (v.dominance_check || v.equivalence_check) && n > DENSE_CHECK_MAX_DIM {
                return Err(Error::InvalidConfig(format!(
                    "dense checks limited to {DENSE_CHECK_MAX_DIM} parameters, problem has {n}"
                )));
            }
            if v.equivalence_check && (sc.momentum != 0.0 || sc.root_update_interval != 1) {
                return Err(Error::InvalidConfig(
                    "equivalence check needs momentum 0 and root_update_interval 1".into(),
                ));
            }
        }
        Ok(())
    }
}

pub(crate) fn shampoo_variants(cfg: &ShampooConfig, shape: &[usize]) -> Result<Vec<ModeVariant>> {
    Ok(crate::optimizer::ShampooState::<f64>::new(shape, cfg.clone())?.variants())
}
