//! Coarse/fine interval propagators, the parareal correction sweeps for the
//! forward interface states `λ_n` and the backward interface adjoints `μ_n`,
//! and the parareal intermediate-targets outer loop (PITPOC).

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::algorithms::{default_tol, Algorithm, Clock, IterationRecord, RunConfig, RunOutcome};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::heat_core::{ControlTrajectory, Field, OpCounter, Propagator};
use crate::optimal_control::{evaluate, ControlProblem};
use crate::time_decomposition::{solve_subproblem, subdivide, InterfaceStates, Subdivision};

/// Control fed to the coarse corrector term of the forward sweep,
/// `λ̃_{n+1} = G(λ̃_n, ṽ_n) + F(λ_n, ṽ_n) - G(λ_n, ·)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CorrectionControl {
    /// `G(λ_n, ṽ_n)`: predictor and corrector see the same control, so the
    /// sweep reduces to classic parareal for `ṽ`.
    #[default]
    Updated,
    /// `G(λ_n, v_n)` with the previous control.
    Previous,
}

impl CorrectionControl {
    pub fn name(self) -> &'static str {
        match self {
            CorrectionControl::Updated => "updated",
            CorrectionControl::Previous => "previous",
        }
    }
}

impl fmt::Display for CorrectionControl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorrectionControl {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "updated" => Ok(CorrectionControl::Updated),
            "previous" => Ok(CorrectionControl::Previous),
            other => Err(Error::Config(format!("unknown parareal correction '{other}' (updated, previous)"))),
        }
    }
}

/// Slope used by the relaxation step. Both rules share the curvature
/// `‖λ̃_N - λ_N‖² + α‖ṽ - v‖²` of the interface surrogate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum StepRule {
    /// `⟨g, ṽ - v⟩_v` with `g` the interval gradients at `v^k|I_n`, which
    /// equal `∇J(v^k)` once the interface values are consistent.
    #[default]
    LocalGradient,
    /// Slope of the surrogate itself, built from the coarse-corrected `λ̃_N`.
    /// The surrogate then decreases monotonically, but the iteration can
    /// stall at `θ = 0` away from the optimum.
    Surrogate,
}

impl StepRule {
    pub fn name(self) -> &'static str {
        match self {
            StepRule::LocalGradient => "local-gradient",
            StepRule::Surrogate => "surrogate",
        }
    }
}

impl fmt::Display for StepRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StepRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "local-gradient" => Ok(StepRule::LocalGradient),
            "surrogate" => Ok(StepRule::Surrogate),
            other => Err(Error::Config(format!("unknown step rule '{other}' (local-gradient, surrogate)"))),
        }
    }
}

/// Fine (`dt`) and coarse (`coarse_steps` steps per interval) implicit-Euler
/// propagators over one sub-interval.
#[derive(Clone, Debug)]
pub struct PropagatorPair {
    sub: Subdivision,
    fine: Propagator,
    coarse: Propagator,
    coarse_steps: usize,
}

impl PropagatorPair {
    pub fn new(pb: &ControlProblem, sub: Subdivision, coarse_steps: usize) -> Result<Self> {
        let len = sub.steps_per_interval();
        if coarse_steps == 0 || !len.is_multiple_of(coarse_steps) {
            return Err(Error::Config(format!(
                "{coarse_steps} coarse steps do not divide an interval of {len} fine steps"
            )));
        }
        let chunk = len / coarse_steps;
        let coarse = if chunk == 1 {
            pb.fine().clone()
        } else {
            Propagator::new(pb.operator(), pb.time().dt() * chunk as f64)?
        };
        Ok(Self { sub, fine: pb.fine().clone(), coarse, coarse_steps })
    }

    pub fn subdivision(&self) -> &Subdivision {
        &self.sub
    }

    pub fn coarse_steps(&self) -> usize {
        self.coarse_steps
    }

    fn check_interval(&self, v_n: &ControlTrajectory, n: usize) -> Result<()> {
        if n >= self.sub.intervals() || v_n.window() != self.sub.interval(n) {
            return Err(Error::Shape(format!(
                "control on {:?} is not sub-interval {n} ({:?})",
                v_n.window(),
                self.sub.interval(n.min(self.sub.intervals() - 1))
            )));
        }
        Ok(())
    }

    /// `G_n(λ_n, v_n)`: coarse implicit Euler, control averaged over each coarse step.
    pub fn coarse_forward(&self, pb: &ControlProblem, lambda: &Field, v_n: &ControlTrajectory, n: usize, counter: &mut OpCounter) -> Result<Field> {
        self.check_interval(v_n, n)?;
        lambda.check_on(pb.grid(), "interface state")?;
        let chunk = self.sub.steps_per_interval() / self.coarse_steps;
        let mut y = lambda.clone();
        let mut avg = vec![0.0; v_n.width()];
        for c in 0..self.coarse_steps {
            avg.iter_mut().for_each(|a| *a = 0.0);
            for j in c * chunk..(c + 1) * chunk {
                for (a, x) in avg.iter_mut().zip(v_n.snapshot(j)) {
                    *a += x;
                }
            }
            avg.iter_mut().for_each(|a| *a /= chunk as f64);
            self.coarse.step(pb.grid(), &mut y, Some(&avg), counter)?;
        }
        Ok(y)
    }

    /// `F_n(λ_n, v_n)`: fine propagation over the interval.
    pub fn fine_forward(&self, pb: &ControlProblem, lambda: &Field, v_n: &ControlTrajectory, n: usize, counter: &mut OpCounter) -> Result<Field> {
        self.check_interval(v_n, n)?;
        self.fine.forward_final(pb.grid(), lambda, v_n, v_n.window(), counter)
    }

    /// `G̃(μ_{n+1})`: coarse homogeneous backward propagation to `t_n`.
    pub fn coarse_backward(&self, pb: &ControlProblem, mu_next: &Field, counter: &mut OpCounter) -> Result<Field> {
        self.coarse.backward_initial(pb.grid(), mu_next, self.coarse_steps, counter)
    }

    /// `F̃(μ_{n+1})`: fine homogeneous backward propagation to `t_n`.
    pub fn fine_backward(&self, pb: &ControlProblem, mu_next: &Field, counter: &mut OpCounter) -> Result<Field> {
        self.fine.backward_initial(pb.grid(), mu_next, self.sub.steps_per_interval(), counter)
    }
}

fn pieces(v: &ControlTrajectory, sub: &Subdivision) -> Result<Vec<ControlTrajectory>> {
    (0..sub.intervals()).map(|n| v.restrict_to(sub.interval(n))).collect()
}

/// `λ_0 = y0`, `λ_{n+1} = G_n(λ_n, v_n)`.
pub fn coarse_forward_recursion(pb: &ControlProblem, pair: &PropagatorPair, v: &ControlTrajectory, counter: &mut OpCounter) -> Result<Vec<Field>> {
    let sub = pair.subdivision();
    let parts = pieces(v, sub)?;
    let mut lambdas = vec![pb.y0().clone()];
    for (n, v_n) in parts.iter().enumerate() {
        let next = pair.coarse_forward(pb, &lambdas[n], v_n, n, counter)?;
        lambdas.push(next);
    }
    Ok(lambdas)
}

/// `μ_N = terminal`, `μ_n = G̃(μ_{n+1})` for `n = N-1..1`; returns `μ_1..μ_N`.
pub fn coarse_backward_recursion(pb: &ControlProblem, pair: &PropagatorPair, terminal: Field, counter: &mut OpCounter) -> Result<Vec<Field>> {
    let n_int = pair.subdivision().intervals();
    let mut mus = vec![Field::zeros(0); n_int];
    mus[n_int - 1] = terminal;
    for n in (1..n_int).rev() {
        mus[n - 1] = pair.coarse_backward(pb, &mus[n], counter)?;
    }
    Ok(mus)
}

/// Forward correction sweep
/// `λ̃_{n+1} = G(λ̃_n, ṽ_n) + F(λ_n, ṽ_n) - G(λ_n, w_n)`, `λ̃_0 = y0`,
/// where `w = ṽ` or `w = v` per `correction`. The fine and corrector terms
/// run concurrently (one logical worker per interval); the predictor
/// recursion runs serially afterwards.
#[allow(clippy::too_many_arguments)]
pub fn parareal_forward_sweep(
    pb: &ControlProblem,
    pair: &PropagatorPair,
    exec: &Executor,
    lambdas: &[Field],
    v_old: &ControlTrajectory,
    v_new: &ControlTrajectory,
    correction: CorrectionControl,
    counter: &mut OpCounter,
) -> Result<Vec<Field>> {
    let sub = pair.subdivision();
    let n_int = sub.intervals();
    if lambdas.len() != n_int + 1 {
        return Err(Error::Shape(format!("expected {} forward interface values, got {}", n_int + 1, lambdas.len())));
    }
    let old = pieces(v_old, sub)?;
    let new = pieces(v_new, sub)?;
    let jumps = exec.try_map(n_int, |n| {
        let mut local = OpCounter::new();
        let fine = pair.fine_forward(pb, &lambdas[n], &new[n], n, &mut local)?;
        let w = match correction {
            CorrectionControl::Updated => &new[n],
            CorrectionControl::Previous => &old[n],
        };
        let coarse = pair.coarse_forward(pb, &lambdas[n], w, n, &mut local)?;
        Ok((fine.sub(&coarse), local))
    })?;
    counter.absorb_concurrent(jumps.iter().map(|(_, c)| c));
    let mut out = Vec::with_capacity(n_int + 1);
    out.push(pb.y0().clone());
    for (n, (jump, _)) in jumps.iter().enumerate() {
        let predicted = pair.coarse_forward(pb, &out[n], &new[n], n, counter)?;
        out.push(predicted.add(jump));
    }
    Ok(out)
}

/// Backward correction sweep
/// `μ_n^{new} = G̃(μ_{n+1}^{new}) + F̃(μ_{n+1}) - G̃(μ_{n+1})` for
/// `n = N-1..1`, with `μ_N^{new} = terminal`. Takes and returns `μ_1..μ_N`.
pub fn parareal_backward_sweep(
    pb: &ControlProblem,
    pair: &PropagatorPair,
    exec: &Executor,
    mus: &[Field],
    terminal: Field,
    counter: &mut OpCounter,
) -> Result<Vec<Field>> {
    let n_int = pair.subdivision().intervals();
    if mus.len() != n_int {
        return Err(Error::Shape(format!("expected {n_int} backward interface values, got {}", mus.len())));
    }
    // jumps[n - 1] acts on interval n, mapping μ_{n+1} (mus[n]) to t_n.
    let jumps = exec.try_map(n_int - 1, |i| {
        let mut local = OpCounter::new();
        let mu_next = &mus[i + 1];
        let fine = pair.fine_backward(pb, mu_next, &mut local)?;
        let coarse = pair.coarse_backward(pb, mu_next, &mut local)?;
        Ok((fine.sub(&coarse), local))
    })?;
    counter.absorb_concurrent(jumps.iter().map(|(_, c)| c));
    let mut out = vec![Field::zeros(0); n_int];
    out[n_int - 1] = terminal;
    for n in (1..n_int).rev() {
        let predicted = pair.coarse_backward(pb, &out[n], counter)?;
        out[n - 1] = predicted.add(&jumps[n - 1].0);
    }
    Ok(out)
}

/// `½‖λ_N - y_target‖² + (α/2)‖v‖²`.
pub fn surrogate_cost(pb: &ControlProblem, lambda_final: &Field, v: &ControlTrajectory) -> f64 {
    let miss = lambda_final.sub(pb.y_target());
    0.5 * pb.grid().dot(&miss, &miss) + 0.5 * pb.alpha() * pb.dot_v(v, v)
}

/// Minimizer of `θ ↦ surrogate_cost((1-θ)λ_N + θ λ̃_N, (1-θ)v + θṽ)`.
pub fn surrogate_theta(
    pb: &ControlProblem,
    lambda_final: &Field,
    lambda_final_tilde: &Field,
    v: &ControlTrajectory,
    v_tilde: &ControlTrajectory,
) -> Result<f64> {
    v.check_same_shape(v_tilde)?;
    let a = lambda_final.sub(pb.y_target());
    let b = lambda_final_tilde.sub(lambda_final);
    let d = v_tilde.sub(v);
    let den = pb.grid().dot(&b, &b) + pb.alpha() * pb.dot_v(&d, &d);
    if d.max_abs() == 0.0 || !(den > 0.0) || !den.is_finite() {
        return Err(Error::DegenerateDirection);
    }
    let num = pb.grid().dot(&a, &b) + pb.alpha() * pb.dot_v(v, &d);
    Ok(-num / den)
}

/// Control and interface values carried between PITPOC iterations.
#[derive(Clone, Debug, PartialEq)]
pub struct PitpocState {
    pub v: ControlTrajectory,
    /// `λ_0..λ_N`
    pub lambdas: Vec<Field>,
    /// `μ_1..μ_N`
    pub mus: Vec<Field>,
}

/// What one PITPOC iteration produced.
#[derive(Clone, Debug)]
pub struct PitpocStep {
    pub next: PitpocState,
    pub v_tilde: ControlTrajectory,
    pub lambdas_tilde: Vec<Field>,
    pub theta: f64,
    pub rhos: Vec<f64>,
}

pub struct Pitpoc<'a> {
    pub pb: &'a ControlProblem,
    pub pair: PropagatorPair,
    pub inner_steps: usize,
    pub correction: CorrectionControl,
    pub step_rule: StepRule,
    pub exec: &'a Executor,
}

impl<'a> Pitpoc<'a> {
    pub fn new(pb: &'a ControlProblem, cfg: &RunConfig, exec: &'a Executor) -> Result<Self> {
        let sub = subdivide(pb.time(), cfg.intervals)?;
        let pair = PropagatorPair::new(pb, sub, cfg.coarse_steps_per_interval)?;
        if cfg.inner_steps == 0 {
            return Err(Error::Config("inner step count must be at least 1".into()));
        }
        Ok(Self { pb, pair, inner_steps: cfg.inner_steps, correction: cfg.correction, step_rule: cfg.step_rule, exec })
    }

    pub fn subdivision(&self) -> &Subdivision {
        self.pair.subdivision()
    }

    /// Coarse forward and backward recursions from `v0`.
    pub fn initial_state(&self, v0: ControlTrajectory, counter: &mut OpCounter) -> Result<PitpocState> {
        let lambdas = coarse_forward_recursion(self.pb, &self.pair, &v0, counter)?;
        let terminal = lambdas.last().expect("N >= 1").sub(self.pb.y_target());
        let mus = coarse_backward_recursion(self.pb, &self.pair, terminal, counter)?;
        Ok(PitpocState { v: v0, lambdas, mus })
    }

    /// Steps I-V: targets `χ = λ - μ`, parallel interval solves started
    /// from `λ_n`, forward sweep, surrogate relaxation, then the backward
    /// sweep from the relaxed `λ_N`.
    pub fn iterate(&self, state: &PitpocState, counter: &mut OpCounter) -> Result<PitpocStep> {
        let pb = self.pb;
        let sub = *self.subdivision();
        let targets = InterfaceStates::from_interfaces(pb, state.lambdas.clone(), state.mus.clone())?;
        let solved = self.exec.try_map(sub.intervals(), |n| {
            let mut local = OpCounter::new();
            let sp = targets.subproblem(&sub, n);
            let v_n = state.v.restrict_to(sub.interval(n))?;
            solve_subproblem(pb, &sp, &v_n, self.inner_steps, &mut local).map(|s| (s, local))
        })?;
        counter.absorb_concurrent(solved.iter().map(|(_, c)| c));
        let parts: Vec<ControlTrajectory> = solved.iter().map(|(s, _)| s.control.clone()).collect();
        let rhos = solved.iter().flat_map(|(s, _)| s.rhos.iter().copied()).collect();
        let grads: Vec<ControlTrajectory> = solved.iter().map(|(s, _)| s.initial_gradient.clone()).collect();
        let v_tilde = ControlTrajectory::concat(&parts)?;
        if v_tilde.sub(&state.v).max_abs() == 0.0 {
            return Err(Error::DegenerateDirection);
        }

        let lambdas_tilde =
            parareal_forward_sweep(pb, &self.pair, self.exec, &state.lambdas, &state.v, &v_tilde, self.correction, counter)?;
        let n_int = sub.intervals();
        let theta = match self.step_rule {
            StepRule::Surrogate => surrogate_theta(pb, &state.lambdas[n_int], &lambdas_tilde[n_int], &state.v, &v_tilde)?,
            StepRule::LocalGradient => {
                let g = ControlTrajectory::concat(&grads)?;
                let d = v_tilde.sub(&state.v);
                let b = lambdas_tilde[n_int].sub(&state.lambdas[n_int]);
                let den = pb.grid().dot(&b, &b) + pb.alpha() * pb.dot_v(&d, &d);
                if !(den > 0.0) || !den.is_finite() {
                    return Err(Error::DegenerateDirection);
                }
                -pb.dot_v(&g, &d) / den
            }
        };
        let v = state.v.lerp(&v_tilde, theta);
        let lambdas: Vec<Field> = state.lambdas.iter().zip(&lambdas_tilde).map(|(a, b)| a.lerp(b, theta)).collect();
        let terminal = lambdas[n_int].sub(pb.y_target());
        let mus = parareal_backward_sweep(pb, &self.pair, self.exec, &state.mus, terminal, counter)?;
        Ok(PitpocStep { next: PitpocState { v, lambdas, mus }, v_tilde, lambdas_tilde, theta, rhos })
    }
}

/// PITPOC from `v⁰ = 0`, stopping on `‖v^{k+1} - v^k‖_v <= tol`.
///
/// The true cost and gradient of every iterate are evaluated for the
/// record only; that work is charged to neither counter nor clock.
pub fn run_pitpoc(pb: &ControlProblem, cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let exec = Executor::new(cfg.workers)?;
    let pitpoc = Pitpoc::new(pb, cfg, &exec)?;
    let mut clock = Clock::start(cfg.wall_clock);
    let mut counter = OpCounter::new();
    let mut state = pitpoc.initial_state(pb.zero_control(), &mut counter)?;
    let n_int = pitpoc.subdivision().intervals();
    let mut history = Vec::new();
    let mut tol = cfg.tol;
    let mut converged = false;
    let mut stop_next = false;
    for k in 0..=cfg.max_outer {
        let t_report = Instant::now();
        let report = evaluate(pb, &state.v, &mut OpCounter::new())?;
        let grad_norm = pb.norm_v(&report.gradient);
        clock.exclude(t_report.elapsed());
        let tol = *tol.get_or_insert_with(|| default_tol(grad_norm));

        let surrogate = surrogate_cost(pb, &state.lambdas[n_int], &state.v);
        let mut record = IterationRecord::new(k, surrogate, report.cost, grad_norm, &counter, 0.0);
        if stop_next {
            record.wall_ms = clock.ms();
            history.push(record);
            converged = true;
            break;
        }
        if k == cfg.max_outer {
            record.wall_ms = clock.ms();
            history.push(record);
            break;
        }
        match pitpoc.iterate(&state, &mut counter) {
            Ok(step) => {
                let d = step.v_tilde.sub(&state.v);
                let step_norm = step.theta.abs() * pb.norm_v(&d);
                record.theta = Some(step.theta);
                record.step_norm = Some(step_norm);
                record.descent_inner = Some(step.theta * pb.dot_v(&report.gradient, &d));
                record.rhos = step.rhos;
                record.wall_ms = clock.ms();
                history.push(record);
                state = step.next;
                stop_next = step_norm <= tol;
            }
            Err(Error::DegenerateDirection) => {
                record.wall_ms = clock.ms();
                history.push(record);
                converged = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let final_true_cost = history.last().map(|r| r.true_cost).unwrap_or(f64::NAN);
    Ok(RunOutcome {
        algorithm: Algorithm::Pitpoc,
        history,
        control: state.v,
        converged,
        counter,
        final_true_cost,
        tol: tol.unwrap_or(f64::NAN),
    })
}
