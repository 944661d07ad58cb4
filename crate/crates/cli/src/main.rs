use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use shampoo::harness::{
    compare_with, csv_string, default_lineup, run, verify, write_atomic, write_csv, write_json,
    ExperimentConfig, RunDocument,
};
use shampoo::optimizer::serialize;
use shampoo::Error;

const EXIT_VERIFY: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Shampoo experiment runner and matrix-inequality verifier.
///
/// Exit codes: 0 success, 1 verification failure, 2 configuration error,
/// 3 runtime or numerical error.
#[derive(Parser, Debug)]
#[command(name = "shampoo-bench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one optimizer on one problem and write `<name>.csv` and `<name>.json`.
    Run {
        /// Experiment config file (TOML).
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        /// Output directory; overrides `output.dir` from the config.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Seed; overrides `seed` from the config.
        #[arg(long, value_name = "N")]
        seed: Option<u64>,
    },
    /// Run randomized matrix-inequality suites or the regret-bound suite.
    Verify {
        /// Which suite to run.
        #[arg(long, value_enum, default_value_t = Suite::All)]
        suite: Suite,
        /// Seed for every randomized trial.
        #[arg(long, value_name = "N", default_value_t = 0)]
        seed: u64,
        /// Trials per check [default: 1000 for kron, 500 for loewner]. Ignored by bounds.
        #[arg(long, value_name = "N", value_parser = clap::value_parser!(u64).range(1..))]
        trials: Option<u64>,
        /// Also write the reports as JSON to this file.
        #[arg(long, value_name = "PATH")]
        json: Option<PathBuf>,
    },
    /// Tune Shampoo and every baseline over a shared step-size grid on one problem.
    Compare {
        /// Experiment config file (TOML); its optimizer table seeds that optimizer's hyperparameters.
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        /// Output directory; overrides `output.dir` from the config.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Comma-separated subset to tune (shampoo, sgd, adagrad_diag, adam, adagrad_full) [default: all].
        #[arg(long, value_name = "NAMES", value_delimiter = ',')]
        optimizers: Vec<String>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Suite {
    Kron,
    Loewner,
    Bounds,
    All,
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) | Error::InvalidShape { .. } | Error::InvalidMode { .. } => {
            EXIT_CONFIG
        }
        _ => EXIT_RUNTIME,
    }
}

fn to_json<T: serde::Serialize>(value: &T, path: &Path) -> shampoo::Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn load(path: &Path, out: Option<PathBuf>) -> shampoo::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(dir) = out {
        cfg.output.dir = dir;
    }
    Ok(cfg)
}

fn cmd_run(config: &Path, out: Option<PathBuf>, seed: Option<u64>) -> shampoo::Result<u8> {
    let mut cfg = load(config, out)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let outcome = run(&cfg)?;
    let path = |ext: &str| cfg.output.dir.join(format!("{}.{ext}", cfg.output.name));
    let csv = path("csv");
    write_csv(&outcome.records, &csv)?;
    println!("wrote {}", csv.display());
    if cfg.output.json {
        let json = path("json");
        write_json(&RunDocument::new(&cfg, &outcome), &json)?;
        println!("wrote {}", json.display());
    }
    if cfg.output.checkpoint {
        if let Some(state) = outcome.learner.shampoo() {
            let ckpt = path("ckpt");
            write_atomic(&ckpt, &serialize(state))?;
            println!("wrote {}", ckpt.display());
        }
    }

    if let Some(last) = outcome.records.last() {
        println!(
            "{} steps, learning rate {:.6e}, final loss {:.6e}, regret {:.6e}",
            last.step, outcome.learning_rate, last.loss, last.regret
        );
    }
    if let Some(b) = &outcome.bound {
        println!(
            "{} {}: regret {:.6e} bound {:.6e} slack {:+.6e} (r={:.4}, radius={:.6e}, passes={})",
            if b.pass { "PASS" } else { "FAIL" },
            b.theorem.label(),
            b.regret,
            b.bound,
            b.slack,
            b.r,
            b.radius,
            b.passes
        );
    }
    for c in [&outcome.dominance, &outcome.equivalence]
        .into_iter()
        .flatten()
    {
        println!(
            "{} {}: worst {:+.3e} threshold {:+.1e}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.worst,
            c.threshold
        );
    }
    if let Some(reason) = &outcome.aborted {
        eprintln!("run aborted: {reason}");
        return Ok(EXIT_RUNTIME);
    }
    Ok(if outcome.checks_pass() {
        0
    } else {
        EXIT_VERIFY
    })
}

fn cmd_verify(
    suite: Suite,
    seed: u64,
    trials: Option<u64>,
    json: Option<PathBuf>,
) -> shampoo::Result<u8> {
    let trials = trials.map(|t| t as usize);
    let mut reports = Vec::new();
    if matches!(suite, Suite::Kron | Suite::All) {
        reports.push(verify::kron_suite(seed, trials.unwrap_or(1000)));
    }
    if matches!(suite, Suite::Loewner | Suite::All) {
        reports.push(verify::loewner_suite(seed, trials.unwrap_or(500), None));
    }
    if matches!(suite, Suite::Bounds | Suite::All) {
        reports.push(verify::bounds_suite(seed)?);
    }
    for report in &reports {
        println!("suite {} (seed {})", report.suite, report.seed);
        for e in &report.entries {
            println!("  {}", e.line());
        }
        for b in &report.bounds {
            println!(
                "  {}: regret {:.6e} <= bound {:.6e} at eta {:.4e}",
                b.theorem.label(),
                b.regret,
                b.bound,
                b.learning_rate
            );
        }
    }
    if let Some(path) = json {
        let text = to_json(&reports, &path)?;
        write_atomic(&path, text.as_bytes())?;
    }
    let pass = reports.iter().all(|r| r.pass());
    println!(
        "{}",
        if pass {
            "all checks passed"
        } else {
            "verification failed"
        }
    );
    Ok(if pass { 0 } else { EXIT_VERIFY })
}

fn cmd_compare(config: &Path, out: Option<PathBuf>, only: &[String]) -> shampoo::Result<u8> {
    let cfg = load(config, out)?;
    let mut lineup = default_lineup(&cfg);
    if !only.is_empty() {
        if let Some(unknown) = only
            .iter()
            .find(|n| !lineup.iter().any(|s| s.name() == n.as_str()))
        {
            return Err(Error::InvalidConfig(format!(
                "unknown or unavailable optimizer {unknown:?}"
            )));
        }
        lineup.retain(|s| only.iter().any(|n| n == s.name()));
    }
    let report = compare_with(&cfg, &lineup)?;
    let dir = &cfg.output.dir;
    for entry in &report.entries {
        let path = dir.join(format!("{}-{}.csv", cfg.output.name, entry.optimizer));
        write_atomic(&path, csv_string(&entry.best_records).as_bytes())?;
        println!(
            "{:<12} best eta {:.4e} final training loss {:.6e} -> {}",
            entry.optimizer,
            entry.best_learning_rate,
            entry.best_final_loss,
            path.display()
        );
    }
    let summary = dir.join(format!("{}-compare.json", cfg.output.name));
    write_atomic(&summary, to_json(&report, &summary)?.as_bytes())?;
    println!("wrote {}", summary.display());
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, seed } => cmd_run(&config, out, seed),
        Command::Verify {
            suite,
            seed,
            trials,
            json,
        } => cmd_verify(suite, seed, trials, json),
        Command::Compare {
            config,
            out,
            optimizers,
        } => cmd_compare(&config, out, &optimizers),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
