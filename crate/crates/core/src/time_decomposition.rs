//! Uniform subdivision of `[0, T]`, intermediate targets `χ = y - p` at the
//! interfaces, and the independent interval sub-problems
//!
//! ```text
//! J_n(v_n) = ½‖y_n(t_{n+1}) - χ(t_{n+1})‖² + (α/2)‖v_n‖²,   y_n(t_n) = y(t_n)
//! ```
//!
//! together with the locally optimal step gradient solver for them.

use crate::error::{Error, Result};
use crate::heat_core::{AdjointTrajectory, ControlTrajectory, Field, OpCounter, StateTrajectory, TimeGrid, Window};
use crate::optimal_control::{optimal_rho, ControlProblem, Evaluation, Tracking};

/// `N` equal sub-intervals aligned with the fine time grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Subdivision {
    intervals: usize,
    steps_per_interval: usize,
}

pub fn subdivide(time: &TimeGrid, intervals: usize) -> Result<Subdivision> {
    if intervals == 0 {
        return Err(Error::Config("number of sub-intervals must be at least 1".into()));
    }
    let m = time.steps();
    if !m.is_multiple_of(intervals) {
        return Err(Error::Config(format!(
            "{m} fine steps cannot be split into {intervals} equal sub-intervals"
        )));
    }
    Ok(Subdivision { intervals, steps_per_interval: m / intervals })
}

impl Subdivision {
    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn steps_per_interval(&self) -> usize {
        self.steps_per_interval
    }

    pub fn total_steps(&self) -> usize {
        self.intervals * self.steps_per_interval
    }

    /// Fine index of `t_n`, `0 <= n <= N`.
    pub fn boundary(&self, n: usize) -> usize {
        assert!(n <= self.intervals);
        n * self.steps_per_interval
    }

    pub fn boundaries(&self) -> Vec<usize> {
        (0..=self.intervals).map(|n| self.boundary(n)).collect()
    }

    /// Fine steps of `I_n = [t_n, t_{n+1}]`.
    pub fn interval(&self, n: usize) -> Window {
        Window::new(self.boundary(n), self.boundary(n + 1))
    }

    pub fn interval_length(&self, time: &TimeGrid) -> f64 {
        time.dt() * self.steps_per_interval as f64
    }
}

/// Interface values: `λ_n` at `t_0..t_N`, `μ_n` and `χ_n` at `t_1..t_N`.
#[derive(Clone, Debug, PartialEq)]
pub struct InterfaceStates {
    lambdas: Vec<Field>,
    mus: Vec<Field>,
    chis: Vec<Field>,
}

impl InterfaceStates {
    /// Forms `χ_n = λ_n - μ_n` for `n = 1..N`; the last target is always the
    /// final target `y_target`.
    pub fn from_interfaces(pb: &ControlProblem, lambdas: Vec<Field>, mus: Vec<Field>) -> Result<Self> {
        if lambdas.len() != mus.len() + 1 || mus.is_empty() {
            return Err(Error::Shape(format!(
                "need N+1 forward and N backward interface values, got {} and {}",
                lambdas.len(),
                mus.len()
            )));
        }
        for f in lambdas.iter().chain(&mus) {
            f.check_on(pb.grid(), "interface value")?;
        }
        let n = mus.len();
        let mut chis: Vec<Field> = (1..=n).map(|k| lambdas[k].sub(&mus[k - 1])).collect();
        chis[n - 1] = pb.y_target().clone();
        Ok(Self { lambdas, mus, chis })
    }

    pub fn intervals(&self) -> usize {
        self.mus.len()
    }

    pub fn lambda(&self, n: usize) -> &Field {
        &self.lambdas[n]
    }

    /// `μ_n`, `1 <= n <= N`.
    pub fn mu(&self, n: usize) -> &Field {
        &self.mus[n - 1]
    }

    /// `χ_n`, `1 <= n <= N`.
    pub fn chi(&self, n: usize) -> &Field {
        &self.chis[n - 1]
    }

    pub fn lambdas(&self) -> &[Field] {
        &self.lambdas
    }

    pub fn mus(&self) -> &[Field] {
        &self.mus
    }

    pub fn chis(&self) -> &[Field] {
        &self.chis
    }

    /// Sub-problem on `I_n` started from `λ_n` and aimed at `χ_{n+1}`.
    pub fn subproblem(&self, sub: &Subdivision, n: usize) -> SubProblem {
        SubProblem {
            index: n,
            window: sub.interval(n),
            y_start: self.lambdas[n].clone(),
            chi_end: self.chis[n].clone(),
        }
    }
}

/// Samples the fine state and adjoint at the interfaces and builds the
/// target trajectory there.
pub fn build_targets(
    pb: &ControlProblem,
    y: &StateTrajectory,
    p: &AdjointTrajectory,
    sub: &Subdivision,
) -> Result<InterfaceStates> {
    let full = pb.full_window();
    if y.window() != full || p.window() != full || sub.total_steps() != full.len() {
        return Err(Error::Shape(format!(
            "trajectories on {:?}/{:?} and subdivision of {} steps do not span {:?}",
            y.window(),
            p.window(),
            sub.total_steps(),
            full
        )));
    }
    let lambdas = (0..=sub.intervals()).map(|n| y.at(sub.boundary(n)).clone()).collect();
    let mus = (1..=sub.intervals()).map(|n| p.at(sub.boundary(n)).clone()).collect();
    InterfaceStates::from_interfaces(pb, lambdas, mus)
}

/// Interval sub-problem data.
#[derive(Clone, Debug, PartialEq)]
pub struct SubProblem {
    pub index: usize,
    pub window: Window,
    pub y_start: Field,
    pub chi_end: Field,
}

impl SubProblem {
    fn tracking<'a>(&'a self, pb: &'a ControlProblem) -> Tracking<'a> {
        Tracking { pb, window: self.window, start: &self.y_start, target: &self.chi_end }
    }
}

pub fn local_cost(pb: &ControlProblem, sp: &SubProblem, v_n: &ControlTrajectory, counter: &mut OpCounter) -> Result<f64> {
    sp.tracking(pb).cost(v_n, counter)
}

pub fn local_evaluate(pb: &ControlProblem, sp: &SubProblem, v_n: &ControlTrajectory, counter: &mut OpCounter) -> Result<Evaluation> {
    sp.tracking(pb).evaluate(v_n, counter)
}

/// `α v_n + B* p_n` with `p_n(t_{n+1}) = y_n(t_{n+1}) - χ_{n+1}`.
pub fn local_gradient(
    pb: &ControlProblem,
    sp: &SubProblem,
    v_n: &ControlTrajectory,
    counter: &mut OpCounter,
) -> Result<ControlTrajectory> {
    Ok(local_evaluate(pb, sp, v_n, counter)?.gradient)
}

pub fn local_hessian_apply(
    pb: &ControlProblem,
    sp: &SubProblem,
    dv: &ControlTrajectory,
    counter: &mut OpCounter,
) -> Result<ControlTrajectory> {
    sp.tracking(pb).hessian_apply(dv, counter)
}

/// Result of the inner gradient iterations on one interval.
#[derive(Clone, Debug)]
pub struct LocalSolve {
    pub control: ControlTrajectory,
    /// Step `ρ` of every inner iteration taken.
    pub rhos: Vec<f64>,
    /// `J_n` at the start of every inner iteration.
    pub costs: Vec<f64>,
    /// `∇J_n(v_init)`.
    pub initial_gradient: ControlTrajectory,
}

/// `l_max` locally optimal step gradient iterations `v ← v - ρ ∇J_n(v)`.
/// Stops early when the gradient vanishes.
pub fn solve_subproblem(
    pb: &ControlProblem,
    sp: &SubProblem,
    v_init: &ControlTrajectory,
    l_max: usize,
    counter: &mut OpCounter,
) -> Result<LocalSolve> {
    if l_max == 0 {
        return Err(Error::Config("inner step count must be at least 1".into()));
    }
    let tracking = sp.tracking(pb);
    let mut v = v_init.clone();
    let mut rhos = Vec::with_capacity(l_max);
    let mut costs = Vec::with_capacity(l_max);
    let mut initial_gradient = None;
    for _ in 0..l_max {
        let eval = tracking.evaluate(&v, counter)?;
        costs.push(eval.cost);
        let g = eval.gradient;
        if initial_gradient.is_none() {
            initial_gradient = Some(g.clone());
        }
        if g.max_abs() == 0.0 {
            break;
        }
        let hg = tracking.hessian_apply(&g, counter)?;
        let rho = match optimal_rho(&g, &hg) {
            Ok(rho) => rho,
            Err(Error::DegenerateDirection) => break,
            Err(e) => return Err(e),
        };
        v.axpy(-rho, &g);
        rhos.push(rho);
    }
    let initial_gradient = initial_gradient.expect("at least one inner iteration");
    Ok(LocalSolve { control: v, rhos, costs, initial_gradient })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heat_core::Grid;
    use crate::optimal_control::{evaluate, evaluate_cost, hessian_apply};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem(seed: u64) -> ControlProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = Grid::square(3).unwrap();
        let y0 = Field::from_vec((0..9).map(|_| rng.random_range(-1.0..1.0)).collect());
        let yt = Field::from_vec((0..9).map(|_| rng.random_range(-1.0..1.0)).collect());
        ControlProblem::new(grid, TimeGrid::from_steps(1.0, 8).unwrap(), 0.1, 0.1, y0, yt).unwrap()
    }

    fn random_on(pb: &ControlProblem, w: Window, rng: &mut ChaCha8Rng) -> ControlTrajectory {
        ControlTrajectory::from_fn(w, pb.grid().control_len(), |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn subdivide_cases() {
        let t = TimeGrid::new(6.4, 1e-2).unwrap();
        let s = subdivide(&t, 16).unwrap();
        assert_eq!(s.steps_per_interval(), 40);
        assert_eq!(s.interval(3), Window::new(120, 160));
        let one = subdivide(&t, 1).unwrap();
        assert_eq!(one.interval(0), Window::new(0, 640));
        let t10 = TimeGrid::from_steps(1.0, 10).unwrap();
        assert!(matches!(subdivide(&t10, 3), Err(Error::Config(_))));
        assert!(subdivide(&t10, 0).is_err());
    }

    #[test]
    fn targets_are_interface_differences() {
        let pb = problem(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = random_on(&pb, pb.full_window(), &mut rng);
        let ev = evaluate(&pb, &v, &mut OpCounter::new()).unwrap();
        let sub = subdivide(pb.time(), 4).unwrap();
        let ifs = build_targets(&pb, &ev.state, &ev.adjoint, &sub).unwrap();
        for n in 1..=4 {
            let m = sub.boundary(n);
            let expected = ev.state.at(m).sub(ev.adjoint.at(m));
            assert!(ifs.chi(n).max_abs_diff(&expected) < 1e-15);
        }
        assert_eq!(ifs.chi(4), pb.y_target());

        // p ≡ 0 gives χ_n = y(t_n) away from the final time.
        let zero_p = pb.backward_solve(&Field::zeros(9), pb.full_window(), &mut OpCounter::new()).unwrap();
        let ifs = build_targets(&pb, &ev.state, &zero_p, &sub).unwrap();
        assert_eq!(ifs.chi(2), ev.state.at(sub.boundary(2)));
    }

    #[test]
    fn single_interval_is_the_global_problem() {
        let pb = problem(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = random_on(&pb, pb.full_window(), &mut rng);
        let sp = SubProblem { index: 0, window: pb.full_window(), y_start: pb.y0().clone(), chi_end: pb.y_target().clone() };
        let a = local_cost(&pb, &sp, &v, &mut OpCounter::new()).unwrap();
        let b = evaluate_cost(&pb, &v, &mut OpCounter::new()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn local_gradient_matches_central_differences() {
        let pb = problem(5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let sub = subdivide(pb.time(), 2).unwrap();
        let w = sub.interval(1);
        let sp = SubProblem {
            index: 1,
            window: w,
            y_start: Field::from_vec((0..9).map(|_| rng.random_range(-1.0..1.0)).collect()),
            chi_end: Field::from_vec((0..9).map(|_| rng.random_range(-1.0..1.0)).collect()),
        };
        let eps = 1e-5;
        for _ in 0..10 {
            let v = random_on(&pb, w, &mut rng);
            let dv = random_on(&pb, w, &mut rng);
            let g = local_gradient(&pb, &sp, &v, &mut OpCounter::new()).unwrap();
            let mut vp = v.clone();
            vp.axpy(eps, &dv);
            let mut vm = v.clone();
            vm.axpy(-eps, &dv);
            let fd = (local_cost(&pb, &sp, &vp, &mut OpCounter::new()).unwrap()
                - local_cost(&pb, &sp, &vm, &mut OpCounter::new()).unwrap())
                / (2.0 * eps);
            let exact = pb.dot_v(&g, &dv);
            assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1e-12));
        }
    }

    #[test]
    fn zero_subproblem_is_stationary() {
        let pb = problem(7);
        let sub = subdivide(pb.time(), 2).unwrap();
        let w = sub.interval(0);
        let sp = SubProblem { index: 0, window: w, y_start: Field::zeros(9), chi_end: Field::zeros(9) };
        let v = pb.zero_control_on(w);
        assert_eq!(local_cost(&pb, &sp, &v, &mut OpCounter::new()).unwrap(), 0.0);
        assert_eq!(local_gradient(&pb, &sp, &v, &mut OpCounter::new()).unwrap().max_abs(), 0.0);
        let solved = solve_subproblem(&pb, &sp, &v, 5, &mut OpCounter::new()).unwrap();
        assert_eq!(solved.control, v);
        assert!(solved.rhos.is_empty());
        assert_eq!(local_hessian_apply(&pb, &sp, &v, &mut OpCounter::new()).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn one_inner_step_is_a_plain_gradient_step() {
        let pb = problem(8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sub = subdivide(pb.time(), 4).unwrap();
        let w = sub.interval(2);
        let sp = SubProblem {
            index: 2,
            window: w,
            y_start: Field::from_vec((0..9).map(|_| rng.random_range(-1.0..1.0)).collect()),
            chi_end: Field::from_vec((0..9).map(|_| rng.random_range(-1.0..1.0)).collect()),
        };
        let v0 = random_on(&pb, w, &mut rng);
        let g = local_gradient(&pb, &sp, &v0, &mut OpCounter::new()).unwrap();
        let hg = local_hessian_apply(&pb, &sp, &g, &mut OpCounter::new()).unwrap();
        let rho = optimal_rho(&g, &hg).unwrap();
        let mut expected = v0.clone();
        expected.axpy(-rho, &g);
        let solved = solve_subproblem(&pb, &sp, &v0, 1, &mut OpCounter::new()).unwrap();
        assert_eq!(solved.control, expected);

        // Strict decrease until the cost reaches rounding level.
        let many = solve_subproblem(&pb, &sp, &v0, 20, &mut OpCounter::new()).unwrap();
        for pair in many.costs.windows(2) {
            let tiny = 1e-14 * pair[0];
            assert!(pair[1] < pair[0] || (pair[0] - pair[1]).abs() <= tiny, "{:?}", many.costs);
        }
        for pair in many.costs[..6].windows(2) {
            assert!(pair[1] < pair[0]);
        }
    }

    #[test]
    fn last_interval_hessian_is_restriction_of_global() {
        let pb = problem(10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sub = subdivide(pb.time(), 4).unwrap();
        let last = sub.interval(3);
        let sp = SubProblem { index: 3, window: last, y_start: pb.y0().clone(), chi_end: pb.y_target().clone() };
        for _ in 0..5 {
            let local_dv = random_on(&pb, last, &mut rng);
            let mut global_dv = pb.zero_control();
            let off = last.start * global_dv.width();
            global_dv.as_mut_slice()[off..].copy_from_slice(local_dv.as_slice());
            let h_global = hessian_apply(&pb, &global_dv, &mut OpCounter::new()).unwrap();
            let h_local = local_hessian_apply(&pb, &sp, &local_dv, &mut OpCounter::new()).unwrap();
            assert!(h_global.restrict_to(last).unwrap().max_abs_diff(&h_local) <= 1e-12);
        }
    }
}
