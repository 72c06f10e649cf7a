//! `slsim`: scenario loading, validation, execution, and result emission.
//!
//! Exit codes: 0 on success, 1 on configuration errors, 2 on runtime
//! errors. Outputs are byte-deterministic for identical inputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use rayon::prelude::*;

use slsim_core::config::{self, ConfigError, Overrides};
use slsim_core::engine::{self, SimError};
use slsim_core::metrics::{write_summary_csv, Metrics};
use slsim_core::scenario::Scenario;

#[derive(Parser)]
#[command(name = "slsim", version, about = "Slot-level NR sidelink (PC5) V2X simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write metrics CSVs.
    Run(RunConfig),
    /// Load and validate a scenario file without running it.
    Validate {
        /// Scenario file (TOML).
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the scenario configuration schema with all defaults.
    Schema,
}

/// Parameters of one `run` invocation.
#[derive(Args, Debug)]
struct RunConfig {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Override the scenario duration.
    #[arg(long = "duration-ms")]
    duration_ms: Option<u64>,
    /// Independent replications; replication r runs with seed + r.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    replications: u32,
    /// Log level (error, warn, info, debug, trace).
    #[arg(long, default_value = "warn")]
    log: String,
}

enum RunError {
    Config(ConfigError),
    Runtime(String),
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

impl From<SimError> for RunError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(inner) => RunError::Config(ConfigError::Validation(inner)),
            other => RunError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Runtime(format!("io error: {e}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Schema => {
            print!("{}", config::schema_text());
            ExitCode::SUCCESS
        }
        Command::Validate { config: path } => match config::load_scenario(&path) {
            Ok(scenario) => {
                println!(
                    "ok: {} UEs, {} pools, {} slots",
                    scenario.ues.len(),
                    scenario.pools.len(),
                    scenario.total_slots()
                );
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
        Command::Run(run) => {
            env_logger::Builder::new()
                .parse_filters(&run.log)
                .format_timestamp(None)
                .init();
            match execute(&run) {
                Ok(()) => ExitCode::SUCCESS,
                Err(RunError::Config(e)) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
                Err(RunError::Runtime(msg)) => {
                    eprintln!("error: {msg}");
                    ExitCode::from(2)
                }
            }
        }
    }
}

/// Runs all replications, then writes outputs. Replications are computed
/// before anything is written, and files created by a failing write are
/// removed again, so a failed run leaves no partial outputs behind.
fn execute(run: &RunConfig) -> Result<(), RunError> {
    let loaded = config::load_scenario_with(
        &run.config,
        Overrides {
            seed: run.seed,
            duration_ms: run.duration_ms,
        },
    )?;
    let scenario = loaded.scenario;
    let base_seed = scenario.seed;

    let replication_results: Vec<Result<Metrics, SimError>> = (0..run.replications)
        .into_par_iter()
        .map(|r| {
            let mut rep = scenario.clone();
            rep.seed = base_seed + r as u64;
            let metrics = engine::run(&rep)?;
            info!(
                "replication {r}: {} TBs, {} delivered",
                metrics.generated_tbs,
                metrics.outcome_count(slsim_core::metrics::TbOutcome::Delivered)
            );
            Ok(metrics)
        })
        .collect();
    let mut replications = Vec::with_capacity(replication_results.len());
    for result in replication_results {
        replications.push(result?);
    }

    let mut written = WrittenPaths::default();
    let write_result = write_outputs(run, &scenario, &loaded.resolved_toml, &replications, &mut written);
    if write_result.is_err() {
        written.remove_all();
    }
    write_result
}

#[derive(Default)]
struct WrittenPaths {
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
}

impl WrittenPaths {
    fn remove_all(&self) {
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        for d in self.dirs.iter().rev() {
            let _ = fs::remove_dir(d);
        }
    }
}

fn write_outputs(
    run: &RunConfig,
    scenario: &Scenario,
    resolved_toml: &str,
    replications: &[Metrics],
    written: &mut WrittenPaths,
) -> Result<(), RunError> {
    let out = &run.out;
    let created_root = !out.exists();
    fs::create_dir_all(out)?;
    if created_root {
        written.dirs.push(out.clone());
    }

    let resolved_path = out.join("resolved_config.toml");
    fs::write(&resolved_path, resolved_toml)?;
    written.files.push(resolved_path);

    if replications.len() == 1 {
        write_replication(out, &replications[0], written)?;
    } else {
        for (r, metrics) in replications.iter().enumerate() {
            let dir = out.join(format!("rep_{r:03}"));
            let created = !dir.exists();
            fs::create_dir_all(&dir)?;
            if created {
                written.dirs.push(dir.clone());
            }
            write_replication(&dir, metrics, written)?;
        }
    }

    let summary_path = out.join("summary.csv");
    write_summary_csv(replications, scenario.metrics.prr_bin_m, &summary_path)?;
    written.files.push(summary_path);
    Ok(())
}

fn write_replication(
    dir: &Path,
    metrics: &Metrics,
    written: &mut WrittenPaths,
) -> Result<(), RunError> {
    metrics.write_csvs(dir)?;
    for name in ["prr.csv", "latency.csv", "load.csv", "events.csv"] {
        written.files.push(dir.join(name));
    }
    Ok(())
}
