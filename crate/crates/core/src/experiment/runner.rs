use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use super::config::ExperimentConfig;
use crate::algorithms::{run, IterationRecord, RunOutcome};
use crate::diagnostics::{check_hypotheses, estimate_beta, write_report, BetaEstimate};
use crate::error::{Error, Result};
use crate::heat_core::{dump, OpCounter};
use crate::oracle::{solve_kkt_dense, KktSolution};

pub const RUN_CSV_HEADER: &str = "iter,J,grad_norm,theta,solves_serial,solves_parallel,wall_ms";
pub const SUMMARY_CSV_HEADER: &str = "algorithm,N,l_max,iterations,converged,final_J,final_true_J,final_grad_norm,solves_serial,solves_parallel,wall_ms,J_star,rel_err_oracle";

/// Outcome of one `(N, ℓ_max)` run of a sweep.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub intervals: usize,
    pub inner_steps: usize,
    pub outcome: RunOutcome,
    /// `‖v - v*‖_v / ‖v*‖_v` when the oracle ran.
    pub rel_err_oracle: Option<f64>,
    pub csv: PathBuf,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub runs: Vec<RunSummary>,
    /// `J(v*)` when the problem is small enough for the dense oracle.
    pub j_star: Option<f64>,
    pub beta: BetaEstimate,
}

impl ExperimentReport {
    pub fn all_converged(&self) -> bool {
        self.runs.iter().all(|r| r.outcome.converged)
    }

    /// 0 when every run converged, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.all_converged() {
            0
        } else {
            2
        }
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:e}")).unwrap_or_default()
}

pub fn write_run_csv<W: Write>(out: &mut W, history: &[IterationRecord]) -> Result<()> {
    writeln!(out, "{RUN_CSV_HEADER}")?;
    for r in history {
        writeln!(
            out,
            "{},{:e},{:e},{},{},{},{:.3}",
            r.k,
            r.cost,
            r.grad_norm,
            opt(r.theta),
            r.solves_serial,
            r.solves_parallel,
            r.wall_ms
        )?;
    }
    Ok(())
}

fn write_summary<W: Write>(out: &mut W, runs: &[RunSummary], j_star: Option<f64>) -> Result<()> {
    writeln!(out, "{SUMMARY_CSV_HEADER}")?;
    for s in runs {
        let o = &s.outcome;
        let last = o.history.last().expect("runs record at least one iteration");
        writeln!(
            out,
            "{},{},{},{},{},{:e},{:e},{:e},{},{},{:.3},{},{}",
            o.algorithm,
            s.intervals,
            s.inner_steps,
            last.k,
            o.converged,
            last.cost,
            o.final_true_cost,
            last.grad_norm,
            o.counter.serial(),
            o.counter.parallel(),
            last.wall_ms,
            opt(j_star),
            opt(s.rel_err_oracle)
        )?;
    }
    Ok(())
}

fn create(path: &PathBuf) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Runs every `(N, ℓ_max)` pair of the sweep and writes
/// `run_N<N>_l<l>.csv`, `summary.csv` and `diagnostics.csv` (plus
/// `final_state_N<N>_l<l>.dat` with `dump_state`) under `cfg.output`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let pb = cfg.problem()?;
    let oracle: Option<KktSolution> = match solve_kkt_dense(&pb) {
        Ok(sol) => Some(sol),
        Err(Error::OracleTooLarge { .. }) => None,
        Err(e) => return Err(e),
    };
    let j_star = oracle.as_ref().map(|o| o.cost);
    let beta = estimate_beta(&pb, cfg.beta_probes, cfg.seed)?;

    let mut runs = Vec::new();
    for (n, l) in cfg.sweep() {
        let outcome = run(&pb, &cfg.run_config(n, l))?;
        let rel_err_oracle = oracle
            .as_ref()
            .map(|o| pb.norm_v(&outcome.control.sub(&o.control)) / pb.norm_v(&o.control).max(f64::MIN_POSITIVE));
        runs.push(RunSummary {
            intervals: n,
            inner_steps: l,
            outcome,
            rel_err_oracle,
            csv: cfg.output.join(format!("run_N{n}_l{l}.csv")),
        });
    }

    fs::create_dir_all(&cfg.output)?;
    for s in &runs {
        let mut f = create(&s.csv)?;
        write_run_csv(&mut f, &s.outcome.history)?;
        f.flush()?;
        if cfg.dump_state {
            let y = pb.forward_solve(pb.y0(), &s.outcome.control, &mut OpCounter::new())?;
            let path = cfg.output.join(format!("final_state_N{}_l{}.dat", s.intervals, s.inner_steps));
            let mut f = create(&path)?;
            dump::write_field(&mut f, pb.grid(), y.last(), pb.time().horizon())?;
            f.flush()?;
        }
    }
    let mut f = create(&cfg.output.join("summary.csv"))?;
    write_summary(&mut f, &runs, j_star)?;
    f.flush()?;

    let mut f = create(&cfg.output.join("diagnostics.csv"))?;
    for s in &runs {
        let label = format!("N{}_l{}", s.intervals, s.inner_steps);
        match check_hypotheses(&s.outcome.history, pb.alpha(), beta.beta_emp, j_star) {
            Ok(report) => write_report(&mut f, &label, &report)?,
            Err(Error::Config(why)) => writeln!(f, "# run={label} skipped: {why}")?,
            Err(e) => return Err(e),
        }
    }
    f.flush()?;
    Ok(ExperimentReport { runs, j_star, beta })
}
