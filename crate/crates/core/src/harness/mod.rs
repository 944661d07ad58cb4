//! Experiment runner and verifier.
//!
//! The harness drives an optimizer through an [`OnlineProblem`], streams the
//! regret, evaluates the applicable regret bound, runs the randomized
//! matrix-inequality suites and writes plot-ready CSV/JSON.
//!
//! [`OnlineProblem`]: crate::problems::OnlineProblem

mod compare;
mod config;
mod emit;
mod run;
pub mod verify;

pub use compare::{
    compare, compare_with, default_lineup, learning_rate_grid, CompareEntry, CompareReport,
};
pub use config::{ExperimentConfig, OptimizerSpec, OutputConfig, VerifyConfig};
pub use emit::{csv_string, parse_json, write_atomic, write_csv, write_json, RunDocument};
pub use run::{
    regret_curve, run, shampoo_bound, BoundReport, CheckReport, Learner, RunOutcome, RunRecord,
    TheoremId,
};
