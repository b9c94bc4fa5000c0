//! `mpts`: run active-learning experiments, verify gradients, aggregate
//! accuracy curves.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |---|---|
//! | 0 | success |
//! | 1 | any other error |
//! | 2 | invalid configuration or command line |
//! | 3 | malformed input data |
//! | 4 | training diverged |
//! | 5 | a gradient check exceeded its tolerance |
//! | 6 | file system error |

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mpts_core::alcore::{run_experiment, RoundLog, RunOptions};
use mpts_core::config::{DatasetConfig, ExperimentConfig};
use mpts_core::dataio::load_csv;
use mpts_core::gradcheck::{self, GradcheckOptions, THRESHOLD};
use mpts_core::results::{curves, curves_csv, load_results, results_csv, results_json, write_file};
use mpts_core::{Error, ErrorKind};

const EXIT_OTHER: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_FORMAT: u8 = 3;
const EXIT_DIVERGED: u8 = 4;
const EXIT_GRADCHECK: u8 = 5;
const EXIT_IO: u8 = 6;

#[derive(Parser)]
#[command(name = "mpts", version, about = "Active learning with manifold-preserving trajectory sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    ///
    /// Writes results.csv, results.json and config.resolved.json to the
    /// output directory, plus labels.json for CSV datasets and a
    /// diagnostics/ folder when the config enables diagnostics.
    Run {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Override the config's master_seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; falls back to the config's output_dir, then ./mpts-out.
        #[arg(long, env = "MPTS_OUT_DIR")]
        out: Option<PathBuf>,
        /// Worker threads for (method, repeat) cells. Results do not depend on it.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Suppress per-round progress lines.
        #[arg(long)]
        quiet: bool,
    },
    /// Check every analytic gradient against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random instances per suite.
        #[arg(long, default_value_t = 20)]
        instances: usize,
        /// Perturb the analytic gradients by this relative amount (negative control).
        #[arg(long)]
        inject_error: Option<f64>,
    },
    /// Aggregate a results CSV into mean and std accuracy per (method, round).
    Curves {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => EXIT_CONFIG,
        ErrorKind::Format => EXIT_FORMAT,
        ErrorKind::Diverged => EXIT_DIVERGED,
        ErrorKind::Io => EXIT_IO,
        ErrorKind::Other => EXIT_OTHER,
    }
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn cmd_run(
    config: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    jobs: usize,
    quiet: bool,
) -> Result<(), Error> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    let out = out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("mpts-out"));
    cfg.output_dir = Some(out.clone());
    let cfg = cfg.resolved();
    create_dir(&out)?;
    write_file(&out.join("config.resolved.json"), &(cfg.to_json_pretty() + "\n"))?;

    if let DatasetConfig::Csv { path, label_column, .. } = &cfg.dataset {
        let (_, map) = load_csv(path, label_column)?;
        let text = serde_json::to_string_pretty(&map).expect("label map serialises");
        write_file(&out.join("labels.json"), &(text + "\n"))?;
    }

    let opts = RunOptions {
        jobs,
        diagnostics_dir: cfg.diagnostics.then(|| out.join("diagnostics")),
    };
    let progress = |log: &RoundLog, secs: f64| {
        if !quiet {
            eprintln!(
                "{} repeat {} round {}: labeled {} accuracy {:.4} ({secs:.2}s)",
                log.method, log.repeat, log.round, log.labeled_count, log.test_accuracy
            );
        }
    };
    let logs = run_experiment(&cfg, &opts, &progress)?;
    write_file(&out.join("results.csv"), &results_csv(&logs))?;
    write_file(&out.join("results.json"), &results_json(&cfg, &logs))?;
    if !quiet {
        eprintln!("wrote {} rows to {}", logs.len(), out.join("results.csv").display());
    }
    Ok(())
}

fn cmd_gradcheck(seed: u64, instances: usize, inject_error: Option<f64>) -> Result<bool, Error> {
    let reports = gradcheck::run_all(&GradcheckOptions {
        seed,
        instances,
        inject_error,
    })?;
    let mut ok = true;
    for r in &reports {
        let verdict = if r.passed() { "pass" } else { "FAIL" };
        println!(
            "{:<18} instances {:>3}  max rel err {:.3e}  {verdict}",
            r.name, r.instances, r.max_rel_err
        );
        ok &= r.passed();
    }
    if !ok {
        let failing: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.name).collect();
        eprintln!("gradient check failed (tolerance {THRESHOLD:e}): {}", failing.join(", "));
    }
    Ok(ok)
}

fn cmd_curves(results: &Path, out: &Path) -> Result<(), Error> {
    let rows = load_results(results)?;
    write_file(out, &curves_csv(&curves(&rows)?))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            config,
            seed,
            out,
            jobs,
            quiet,
        } => cmd_run(&config, seed, out, jobs, quiet).map(|()| true),
        Command::Gradcheck {
            seed,
            instances,
            inject_error,
        } => cmd_gradcheck(seed, instances, inject_error),
        Command::Curves { results, out } => cmd_curves(&results, &out).map(|()| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_GRADCHECK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
