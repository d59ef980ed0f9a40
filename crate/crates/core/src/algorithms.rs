//! Outer iterations: the serial-sweep intermediate-targets method (SITPOC),
//! the optimal-step gradient baseline, and the shared run bookkeeping.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::heat_core::{ControlTrajectory, OpCounter};
use crate::optimal_control::{evaluate, hessian_apply, optimal_rho, theta_along, ControlProblem};
use crate::parareal::{run_pitpoc, CorrectionControl, StepRule};
use crate::time_decomposition::{build_targets, solve_subproblem, subdivide, Subdivision};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    /// Optimal-step gradient on the global cost.
    Serial,
    Sitpoc,
    Pitpoc,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Serial => "serial",
            Algorithm::Sitpoc => "sitpoc",
            Algorithm::Pitpoc => "pitpoc",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "serial" => Ok(Algorithm::Serial),
            "sitpoc" => Ok(Algorithm::Sitpoc),
            "pitpoc" => Ok(Algorithm::Pitpoc),
            other => Err(Error::Config(format!("unknown algorithm '{other}' (serial, sitpoc, pitpoc)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub intervals: usize,
    /// Inner gradient steps per sub-problem (`ℓ_max`).
    pub inner_steps: usize,
    pub max_outer: usize,
    /// Stopping threshold; `None` selects `1e-8 * max(1, ‖∇J(v⁰)‖)`.
    pub tol: Option<f64>,
    pub workers: usize,
    pub coarse_steps_per_interval: usize,
    pub correction: CorrectionControl,
    pub step_rule: StepRule,
    /// Record elapsed wall-clock time; when off every `wall_ms` is zero.
    pub wall_clock: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Sitpoc,
            intervals: 4,
            inner_steps: 1,
            max_outer: 100,
            tol: None,
            workers: 1,
            coarse_steps_per_interval: 1,
            correction: CorrectionControl::default(),
            step_rule: StepRule::default(),
            wall_clock: true,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.intervals == 0 || self.inner_steps == 0 || self.workers == 0 || self.coarse_steps_per_interval == 0 {
            return Err(Error::Config(
                "intervals, inner steps, workers and coarse steps must all be positive".into(),
            ));
        }
        if let Some(tol) = self.tol {
            if !(tol > 0.0 && tol.is_finite()) {
                return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
            }
        }
        Ok(())
    }
}

/// One outer iteration as seen by the convergence plots and the diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    /// Cost driving the iteration: `J(v^k)`, or the interface surrogate for PITPOC.
    pub cost: f64,
    /// `J(v^k)` from a full fine evaluation.
    pub true_cost: f64,
    /// `‖∇J(v^k)‖_v`.
    pub grad_norm: f64,
    /// Relaxation `θ^k` of the step leaving `v^k`, if one was taken.
    pub theta: Option<f64>,
    /// `‖v^{k+1} - v^k‖_v`.
    pub step_norm: Option<f64>,
    /// `⟨∇J(v^k), v^{k+1} - v^k⟩_v`.
    pub descent_inner: Option<f64>,
    /// Every inner step `ρ` taken while leaving `v^k`.
    pub rhos: Vec<f64>,
    pub solves_serial: u64,
    pub solves_parallel: u64,
    pub wall_ms: f64,
}

impl IterationRecord {
    pub(crate) fn new(k: usize, cost: f64, true_cost: f64, grad_norm: f64, counter: &OpCounter, wall_ms: f64) -> Self {
        Self {
            k,
            cost,
            true_cost,
            grad_norm,
            theta: None,
            step_norm: None,
            descent_inner: None,
            rhos: Vec::new(),
            solves_serial: counter.serial(),
            solves_parallel: counter.parallel(),
            wall_ms,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub algorithm: Algorithm,
    pub history: Vec<IterationRecord>,
    pub control: ControlTrajectory,
    pub converged: bool,
    pub counter: OpCounter,
    /// `J` of the final control from a full fine evaluation.
    pub final_true_cost: f64,
    pub tol: f64,
}

pub(crate) fn default_tol(grad_norm0: f64) -> f64 {
    1e-8 * grad_norm0.max(1.0)
}

/// Wall clock that can leave out reporting work.
pub(crate) struct Clock {
    start: Instant,
    excluded: Duration,
    enabled: bool,
}

impl Clock {
    pub fn start(enabled: bool) -> Self {
        Self { start: Instant::now(), excluded: Duration::ZERO, enabled }
    }

    pub fn exclude(&mut self, d: Duration) {
        self.excluded += d;
    }

    pub fn ms(&self) -> f64 {
        if self.enabled {
            self.start.elapsed().saturating_sub(self.excluded).as_secs_f64() * 1e3
        } else {
            0.0
        }
    }
}

/// Result of one outer iteration.
#[derive(Clone, Debug)]
pub struct Iterate {
    pub record: IterationRecord,
    /// `v^{k+1}`; `None` when converged or when no step was requested.
    pub next: Option<ControlTrajectory>,
    pub converged: bool,
}

/// Context shared by the SITPOC iterations of one run.
pub struct Sitpoc<'a> {
    pub pb: &'a ControlProblem,
    pub sub: Subdivision,
    pub inner_steps: usize,
    pub exec: &'a Executor,
}

impl<'a> Sitpoc<'a> {
    pub fn new(pb: &'a ControlProblem, intervals: usize, inner_steps: usize, exec: &'a Executor) -> Result<Self> {
        if inner_steps == 0 {
            return Err(Error::Config("inner step count must be at least 1".into()));
        }
        Ok(Self { pb, sub: subdivide(pb.time(), intervals)?, inner_steps, exec })
    }

    /// Step I (serial fine sweeps and targets), Step II (parallel interval
    /// solves from `v|I_n`) and Step III (optimal relaxation).
    ///
    /// Stops after Step I when `‖∇J(v)‖ <= tol` or when `take_step` is false.
    pub fn iterate(&self, k: usize, v: &ControlTrajectory, tol: f64, take_step: bool, counter: &mut OpCounter) -> Result<Iterate> {
        let pb = self.pb;
        let eval = evaluate(pb, v, counter)?;
        let grad_norm = pb.norm_v(&eval.gradient);
        let mut record = IterationRecord::new(k, eval.cost, eval.cost, grad_norm, counter, 0.0);
        if grad_norm <= tol {
            return Ok(Iterate { record, next: None, converged: true });
        }
        if !take_step {
            return Ok(Iterate { record, next: None, converged: false });
        }

        let targets = build_targets(pb, &eval.state, &eval.adjoint, &self.sub)?;
        let solved = self.exec.try_map(self.sub.intervals(), |n| {
            let mut local = OpCounter::new();
            let sp = targets.subproblem(&self.sub, n);
            let v_n = v.restrict_to(self.sub.interval(n))?;
            solve_subproblem(pb, &sp, &v_n, self.inner_steps, &mut local).map(|s| (s, local))
        })?;
        counter.absorb_concurrent(solved.iter().map(|(_, c)| c));
        let pieces: Vec<ControlTrajectory> = solved.iter().map(|(s, _)| s.control.clone()).collect();
        record.rhos = solved.iter().flat_map(|(s, _)| s.rhos.iter().copied()).collect();
        let v_tilde = ControlTrajectory::concat(&pieces)?;

        let direction = v_tilde.sub(v);
        if direction.max_abs() == 0.0 {
            return Ok(Iterate { record, next: None, converged: true });
        }
        let h_direction = hessian_apply(pb, &direction, counter)?;
        let theta = match theta_along(pb, &eval.gradient, &direction, &h_direction) {
            Ok(t) => t,
            Err(Error::DegenerateDirection) => return Ok(Iterate { record, next: None, converged: true }),
            Err(e) => return Err(e),
        };
        let mut next = v.clone();
        next.axpy(theta, &direction);
        record.theta = Some(theta);
        record.step_norm = Some(theta.abs() * pb.norm_v(&direction));
        record.descent_inner = Some(theta * pb.dot_v(&eval.gradient, &direction));
        Ok(Iterate { record, next: Some(next), converged: false })
    }
}

/// One locally optimal step gradient iteration on the global cost.
pub fn serial_iterate(
    pb: &ControlProblem,
    k: usize,
    v: &ControlTrajectory,
    tol: f64,
    take_step: bool,
    counter: &mut OpCounter,
) -> Result<Iterate> {
    let eval = evaluate(pb, v, counter)?;
    let g = eval.gradient;
    let grad_norm = pb.norm_v(&g);
    let mut record = IterationRecord::new(k, eval.cost, eval.cost, grad_norm, counter, 0.0);
    if grad_norm <= tol {
        return Ok(Iterate { record, next: None, converged: true });
    }
    if !take_step {
        return Ok(Iterate { record, next: None, converged: false });
    }
    let hg = hessian_apply(pb, &g, counter)?;
    let rho = match optimal_rho(&g, &hg) {
        Ok(r) => r,
        Err(Error::DegenerateDirection) => return Ok(Iterate { record, next: None, converged: true }),
        Err(e) => return Err(e),
    };
    let mut next = v.clone();
    next.axpy(-rho, &g);
    // The full step to the inner solution, as SITPOC with one interval.
    record.theta = Some(1.0);
    record.rhos = vec![rho];
    record.step_norm = Some(rho * grad_norm);
    record.descent_inner = Some(-rho * grad_norm * grad_norm);
    Ok(Iterate { record, next: Some(next), converged: false })
}

fn drive(
    cfg: &RunConfig,
    v0: ControlTrajectory,
    mut step: impl FnMut(usize, &ControlTrajectory, f64, bool, &mut OpCounter) -> Result<Iterate>,
) -> Result<RunOutcome> {
    let clock = Clock::start(cfg.wall_clock);
    let mut counter = OpCounter::new();
    let mut history = Vec::new();
    let mut v = v0;
    let mut tol = cfg.tol.unwrap_or(f64::NAN);
    let mut converged = false;
    for k in 0..=cfg.max_outer {
        let it = if tol.is_nan() {
            // Probe the initial gradient first to fix the default tolerance.
            let probe = step(k, &v, 0.0, false, &mut OpCounter::new())?;
            tol = default_tol(probe.record.grad_norm);
            step(k, &v, tol, k < cfg.max_outer, &mut counter)?
        } else {
            step(k, &v, tol, k < cfg.max_outer, &mut counter)?
        };
        let mut record = it.record;
        record.wall_ms = clock.ms();
        history.push(record);
        if it.converged {
            converged = true;
            break;
        }
        match it.next {
            Some(next) => v = next,
            None => break,
        }
    }
    let final_true_cost = history.last().map(|r| r.true_cost).unwrap_or(f64::NAN);
    Ok(RunOutcome { algorithm: cfg.algorithm, history, control: v, converged, counter, final_true_cost, tol })
}

pub fn run_sitpoc(pb: &ControlProblem, cfg: &RunConfig) -> Result<RunOutcome> {
    run_sitpoc_from(pb, cfg, pb.zero_control())
}

pub fn run_sitpoc_from(pb: &ControlProblem, cfg: &RunConfig, v0: ControlTrajectory) -> Result<RunOutcome> {
    cfg.validate()?;
    let exec = Executor::new(cfg.workers)?;
    let sitpoc = Sitpoc::new(pb, cfg.intervals, cfg.inner_steps, &exec)?;
    let mut out = drive(cfg, v0, |k, v, tol, take, c| sitpoc.iterate(k, v, tol, take, c))?;
    out.algorithm = Algorithm::Sitpoc;
    Ok(out)
}

pub fn run_serial_baseline(pb: &ControlProblem, cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut out = drive(cfg, pb.zero_control(), |k, v, tol, take, c| serial_iterate(pb, k, v, tol, take, c))?;
    out.algorithm = Algorithm::Serial;
    Ok(out)
}

/// Dispatches on `cfg.algorithm`.
pub fn run(pb: &ControlProblem, cfg: &RunConfig) -> Result<RunOutcome> {
    match cfg.algorithm {
        Algorithm::Serial => run_serial_baseline(pb, cfg),
        Algorithm::Sitpoc => run_sitpoc(pb, cfg),
        Algorithm::Pitpoc => run_pitpoc(pb, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heat_core::{Field, Grid, TimeGrid};
    use crate::oracle::solve_kkt_dense;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem(n: usize, steps: usize, seed: u64) -> ControlProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = Grid::square(n).unwrap();
        let len = grid.len();
        let y0 = Field::from_vec((0..len).map(|_| rng.random_range(-1.0..1.0)).collect());
        let yt = Field::from_vec((0..len).map(|_| rng.random_range(-1.0..1.0)).collect());
        ControlProblem::new(grid, TimeGrid::from_steps(1.0, steps).unwrap(), 0.05, 0.1, y0, yt).unwrap()
    }

    fn quiet(cfg: RunConfig) -> RunConfig {
        RunConfig { wall_clock: false, ..cfg }
    }

    #[test]
    fn names_round_trip_and_config_validates() {
        for a in [Algorithm::Serial, Algorithm::Sitpoc, Algorithm::Pitpoc] {
            assert_eq!(a.to_string().parse::<Algorithm>().unwrap(), a);
        }
        assert!("parareal".parse::<Algorithm>().is_err());
        assert!(RunConfig::default().validate().is_ok());
        assert!(RunConfig { intervals: 0, ..RunConfig::default() }.validate().is_err());
        assert!(RunConfig { tol: Some(0.0), ..RunConfig::default() }.validate().is_err());
        assert!(RunConfig { workers: 0, ..RunConfig::default() }.validate().is_err());
    }

    #[test]
    fn single_interval_single_step_is_one_gradient_iteration() {
        let pb = problem(2, 8, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = ControlTrajectory::from_fn(pb.full_window(), pb.grid().control_len(), |_, _| rng.random_range(-1.0..1.0));
        let exec = Executor::sequential();
        let sitpoc = Sitpoc::new(&pb, 1, 1, &exec).unwrap();
        let a = sitpoc.iterate(0, &v, 0.0, true, &mut OpCounter::new()).unwrap();
        let b = serial_iterate(&pb, 0, &v, 0.0, true, &mut OpCounter::new()).unwrap();
        let (a, b) = (a.next.unwrap(), b.next.unwrap());
        assert!(a.max_abs_diff(&b) <= 1e-12, "{}", a.max_abs_diff(&b));
    }

    #[test]
    fn optimum_gives_converged_signal() {
        let pb = problem(3, 8, 3);
        let kkt = solve_kkt_dense(&pb).unwrap();
        let exec = Executor::sequential();
        for n in [1, 2, 4] {
            let sitpoc = Sitpoc::new(&pb, n, 3, &exec).unwrap();
            let it = sitpoc.iterate(0, &kkt.control, 1e-9, true, &mut OpCounter::new()).unwrap();
            assert!(it.converged && it.next.is_none());
        }
    }

    #[test]
    fn attained_target_converges_at_once() {
        let pb = problem(3, 8, 4);
        let free = pb.forward_solve(pb.y0(), &pb.zero_control(), &mut OpCounter::new()).unwrap();
        let pb = pb.with_target(free.last().clone()).unwrap();
        for algorithm in [Algorithm::Serial, Algorithm::Sitpoc] {
            let out = run(&pb, &quiet(RunConfig { algorithm, ..RunConfig::default() })).unwrap();
            assert!(out.converged);
            assert_eq!(out.history.len(), 1);
            assert_eq!(out.control, pb.zero_control());
        }
    }

    #[test]
    fn cost_decreases_strictly_from_random_start() {
        let pb = problem(3, 8, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let v0 = ControlTrajectory::from_fn(pb.full_window(), pb.grid().control_len(), |_, _| rng.random_range(-3.0..3.0));
        let cfg = quiet(RunConfig { intervals: 4, inner_steps: 2, max_outer: 50, ..RunConfig::default() });
        let out = run_sitpoc_from(&pb, &cfg, v0).unwrap();
        for w in out.history.windows(2) {
            assert!(w[1].cost < w[0].cost, "k={}: {} -> {}", w[1].k, w[0].cost, w[1].cost);
        }
        assert!(out.converged || out.history.len() == 51);
    }

    #[test]
    fn sitpoc_and_baseline_reach_the_oracle() {
        let pb = problem(3, 8, 7);
        let kkt = solve_kkt_dense(&pb).unwrap();
        let scale = pb.norm_v(&kkt.control).max(1.0);
        for n in [2, 4] {
            let out = run_sitpoc(&pb, &quiet(RunConfig { intervals: n, inner_steps: 2, max_outer: 500, ..RunConfig::default() })).unwrap();
            assert!(out.converged);
            assert!(pb.norm_v(&out.control.sub(&kkt.control)) <= 1e-5 * scale);
        }
        let out = run_serial_baseline(&pb, &quiet(RunConfig { max_outer: 500, ..RunConfig::default() })).unwrap();
        assert!(out.converged);
        assert!(pb.norm_v(&out.control.sub(&kkt.control)) <= 1e-5 * scale);
        for w in out.history.windows(2) {
            assert!(w[1].cost <= w[0].cost);
        }
    }

    #[test]
    fn baseline_matches_single_interval_sitpoc() {
        let pb = problem(2, 8, 8);
        let base = quiet(RunConfig { intervals: 1, inner_steps: 1, max_outer: 20, ..RunConfig::default() });
        let a = run_serial_baseline(&pb, &base).unwrap();
        let b = run_sitpoc(&pb, &base).unwrap();
        assert_eq!(a.history.len(), b.history.len());
        for (x, y) in a.history.iter().zip(&b.history) {
            assert!((x.cost - y.cost).abs() <= 1e-12 * x.cost.max(1.0));
        }
    }

    #[test]
    fn max_outer_zero_records_the_start() {
        let pb = problem(3, 8, 9);
        for algorithm in [Algorithm::Serial, Algorithm::Sitpoc, Algorithm::Pitpoc] {
            let out = run(&pb, &quiet(RunConfig { algorithm, max_outer: 0, ..RunConfig::default() })).unwrap();
            assert_eq!(out.history.len(), 1);
            assert!(!out.converged);
            let j0 = crate::optimal_control::evaluate_cost(&pb, &pb.zero_control(), &mut OpCounter::new()).unwrap();
            assert_eq!(out.history[0].true_cost, j0);
        }
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let pb = problem(3, 16, 10);
        for algorithm in [Algorithm::Sitpoc, Algorithm::Pitpoc] {
            let cfg = quiet(RunConfig { algorithm, intervals: 4, inner_steps: 2, max_outer: 30, ..RunConfig::default() });
            let a = run(&pb, &cfg).unwrap();
            let b = run(&pb, &RunConfig { workers: 4, ..cfg }).unwrap();
            assert_eq!(a.history, b.history);
            assert_eq!(a.control, b.control);
        }
    }

    #[test]
    fn parallel_count_reflects_concurrency() {
        let pb = problem(3, 16, 11);
        let one = run_sitpoc(&pb, &quiet(RunConfig { intervals: 1, max_outer: 3, tol: Some(1e-300), ..RunConfig::default() })).unwrap();
        let four = run_sitpoc(&pb, &quiet(RunConfig { intervals: 4, max_outer: 3, tol: Some(1e-300), ..RunConfig::default() })).unwrap();
        assert_eq!(one.counter.serial(), one.counter.parallel());
        assert_eq!(one.counter.serial(), four.counter.serial());
        assert!(four.counter.parallel() < four.counter.serial());
    }
}
