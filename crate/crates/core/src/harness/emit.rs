use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::{BoundReport, CheckReport, RunOutcome, RunRecord};
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "step,loss,cum_loss,regret,bound,wall_ns";

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Floats use 17 significant digits; a missing bound prints `NaN`.
pub fn csv_string(records: &[RunRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        let bound = r.bound.unwrap_or(f64::NAN);
        writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            r.step, r.loss, r.cum_loss, r.regret, bound, r.wall_ns
        )
        .expect("writing to a String");
    }
    out
}

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(dir, e))?;
    tmp.write_all(bytes).map_err(|e| io_err(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

pub fn write_csv(records: &[RunRecord], path: &Path) -> Result<()> {
    write_atomic(path, csv_string(records).as_bytes())
}

/// JSON mirror of a run with the config embedded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunDocument {
    pub config: ExperimentConfig,
    pub optimizer: String,
    pub learning_rate: f64,
    pub records: Vec<RunRecord>,
    pub bound: Option<BoundReport>,
    pub dominance: Option<CheckReport>,
    pub equivalence: Option<CheckReport>,
    pub aborted: Option<String>,
}

impl RunDocument {
    pub fn new(config: &ExperimentConfig, outcome: &RunOutcome) -> Self {
        Self {
            config: config.clone(),
            optimizer: config.optimizer.name().to_string(),
            learning_rate: outcome.learning_rate,
            records: outcome.records.clone(),
            bound: outcome.bound.clone(),
            dominance: outcome.dominance.clone(),
            equivalence: outcome.equivalence.clone(),
            aborted: outcome.aborted.clone(),
        }
    }
}

pub fn write_json(doc: &RunDocument, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(doc).map_err(|e| io_err(path, e))?;
    write_atomic(path, text.as_bytes())
}

pub fn parse_json(text: &str) -> Result<RunDocument> {
    serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
}
