use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use pintoc::experiment::{parse_config, run_experiment, ExperimentConfig};
use pintoc::{Error, Result};

/// Time-parallel optimal control of the heat equation: runs a sweep over
/// sub-interval and inner-step counts and writes plot-ready CSVs.
///
/// Exit status: 0 when every run converged, 2 when some run hit the
/// iteration cap, 1 on invalid input or I/O failure.
#[derive(Debug, Parser)]
#[command(name = "pintoc", version)]
struct Cli {
    /// `key = value` experiment config; unset keys keep their defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// serial, sitpoc or pitpoc.
    #[arg(long)]
    algorithm: Option<String>,
    /// Number of sub-intervals N (comma-separated list to sweep).
    #[arg(long, value_name = "N")]
    intervals: Option<String>,
    /// Inner gradient steps l_max (comma-separated list to sweep).
    #[arg(long, value_name = "L")]
    inner_steps: Option<String>,
    /// Outer iteration cap.
    #[arg(long, value_name = "K")]
    max_iter: Option<String>,
    /// Stopping tolerance, or `auto`.
    #[arg(long, value_name = "E")]
    tol: Option<String>,
    /// Worker threads.
    #[arg(long, value_name = "W", env = "PINTOC_WORKERS")]
    workers: Option<String>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    output: Option<PathBuf>,
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
            parse_config(&text).map_err(|e| match e {
                Error::Parse { line, message } => Error::Config(format!("{}:{line}: {message}", path.display())),
                other => other,
            })?
        }
        None => ExperimentConfig::default(),
    };
    let overrides = [
        ("algorithm", cli.algorithm.clone()),
        ("N", cli.intervals.clone()),
        ("l_max", cli.inner_steps.clone()),
        ("max_outer", cli.max_iter.clone()),
        ("tol", cli.tol.clone()),
        ("workers", cli.workers.clone()),
        ("output", cli.output.as_ref().map(|p| p.display().to_string())),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            cfg.set(key, v.trim())?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = load(&cli).and_then(|cfg| run_experiment(&cfg).map(|report| (cfg, report)));
    match result {
        Ok((cfg, report)) => {
            println!("{:>4} {:>6} {:>6} {:>10} {:>16} {:>10}", "N", "l_max", "iters", "converged", "final J", "parallel");
            for r in &report.runs {
                println!(
                    "{:>4} {:>6} {:>6} {:>10} {:>16.9e} {:>10}",
                    r.intervals,
                    r.inner_steps,
                    r.outcome.history.last().map_or(0, |h| h.k),
                    r.outcome.converged,
                    r.outcome.final_true_cost,
                    r.outcome.counter.parallel()
                );
            }
            println!("wrote {}", cfg.output.display());
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("pintoc: {e}");
            ExitCode::from(1)
        }
    }
}
