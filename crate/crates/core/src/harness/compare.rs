use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, OptimizerSpec};
use super::run::{run, RunRecord};
use crate::baselines::{BaselineConfig, BaselineKind, FULL_ADAGRAD_MAX_DIM};
use crate::error::Result;
use crate::optimizer::{Optimizer, ShampooConfig};
use crate::problems::{make_problem, OnlineProblem};

/// The shared step-size grid: `10^(-3 + 4j/7)` for `j = 0..8`, i.e. 1e-3 to 10.
pub fn learning_rate_grid() -> Vec<f64> {
    (0..8)
        .map(|j| 10f64.powf(-3.0 + 4.0 * j as f64 / 7.0))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareEntry {
    pub optimizer: String,
    /// `(learning_rate, final training loss)`; divergence scores `+inf`.
    pub grid: Vec<(f64, f64)>,
    pub best_learning_rate: f64,
    pub best_final_loss: f64,
    #[serde(skip)]
    pub best_records: Vec<RunRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub entries: Vec<CompareEntry>,
}

impl CompareReport {
    pub fn entry(&self, optimizer: &str) -> Option<&CompareEntry> {
        self.entries.iter().find(|e| e.optimizer == optimizer)
    }
}

/// `(1/T) sum_t f_t(w)`.
fn training_loss(problem: &OnlineProblem, w: &crate::tensor::DenseTensor<f64>) -> Result<f64> {
    Ok(problem.total_loss(w)? / problem.horizon().max(1) as f64)
}

/// Tunes each listed optimizer over the grid and keeps its best run.
pub fn compare_with(
    config: &ExperimentConfig,
    optimizers: &[OptimizerSpec],
) -> Result<CompareReport> {
    config.validate()?;
    let problem = make_problem(&config.problem, config.horizon, config.batch, config.seed)?;
    let mut entries = Vec::new();
    for spec in optimizers {
        let mut grid = Vec::new();
        let mut best: Option<(f64, f64, Vec<RunRecord>)> = None;
        for eta in learning_rate_grid() {
            let mut cfg = config.clone();
            cfg.optimizer = spec.with_learning_rate(eta);
            cfg.verify = Default::default();
            let out = run(&cfg)?;
            let score = if out.aborted.is_some() {
                f64::INFINITY
            } else {
                let l = training_loss(&problem, out.learner.params())?;
                if l.is_finite() {
                    l
                } else {
                    f64::INFINITY
                }
            };
            grid.push((eta, score));
            if best.as_ref().is_none_or(|b| score < b.1) {
                best = Some((eta, score, out.records));
            }
        }
        let (best_learning_rate, best_final_loss, best_records) = best.expect("grid is non-empty");
        entries.push(CompareEntry {
            optimizer: spec.name().to_string(),
            grid,
            best_learning_rate,
            best_final_loss,
            best_records,
        });
    }
    Ok(CompareReport { entries })
}

/// Shampoo plus every baseline. The configured optimizer's hyperparameters are
/// reused for its own kind; the others run on defaults. Full-matrix AdaGrad is
/// left out above its size guard.
pub fn default_lineup(config: &ExperimentConfig) -> Vec<OptimizerSpec> {
    let n: usize = config.problem.shape.iter().product();
    let mut specs = vec![match &config.optimizer {
        s @ OptimizerSpec::Shampoo(_) => s.clone(),
        _ => OptimizerSpec::Shampoo(ShampooConfig::default()),
    }];
    for kind in BaselineKind::ALL {
        if kind == BaselineKind::AdagradFull && n > FULL_ADAGRAD_MAX_DIM {
            continue;
        }
        specs.push(match config.optimizer.baseline_kind() {
            Some(k) if k == kind => config.optimizer.clone(),
            _ => OptimizerSpec::baseline(kind, BaselineConfig::default()),
        });
    }
    specs
}

/// [`compare_with`] over [`default_lineup`].
pub fn compare(config: &ExperimentConfig) -> Result<CompareReport> {
    compare_with(config, &default_lineup(config))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_spans_four_decades() {
        let g = learning_rate_grid();
        assert_eq!(g.len(), 8);
        assert!((g[0] - 1e-3).abs() < 1e-18);
        assert!((g[7] - 10.0).abs() < 1e-12);
        assert!(g
            .windows(2)
            .all(|w| (w[1] / w[0] - 10f64.powf(4.0 / 7.0)).abs() < 1e-12));
    }
}
