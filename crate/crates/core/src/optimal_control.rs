//! The global tracking cost `J`, its exact discrete gradient, Hessian
//! products, and the exact line-search steps used by the outer and inner
//! iterations.

use crate::error::{Error, Result};
use crate::heat_core::{
    restrict_adjoint, AdjointTrajectory, ControlTrajectory, DiscreteOperator, Field, Grid, OpCounter,
    Propagator, StateTrajectory, TimeGrid, Window,
};

/// Linear-quadratic control problem for the heat equation on the unit square.
#[derive(Clone, Debug)]
pub struct ControlProblem {
    grid: Grid,
    time: TimeGrid,
    alpha: f64,
    nu: f64,
    y0: Field,
    y_target: Field,
    op: DiscreteOperator,
    fine: Propagator,
}

impl ControlProblem {
    pub fn new(grid: Grid, time: TimeGrid, alpha: f64, nu: f64, y0: Field, y_target: Field) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
        }
        y0.check_on(&grid, "initial state")?;
        y_target.check_on(&grid, "target state")?;
        if !(y0.is_finite() && y_target.is_finite()) {
            return Err(Error::Config("initial and target states must be finite".into()));
        }
        let op = DiscreteOperator::assemble(&grid, nu)?;
        let fine = Propagator::new(&op, time.dt())?;
        Ok(Self { grid, time, alpha, nu, y0, y_target, op, fine })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn y0(&self) -> &Field {
        &self.y0
    }

    pub fn y_target(&self) -> &Field {
        &self.y_target
    }

    pub fn operator(&self) -> &DiscreteOperator {
        &self.op
    }

    pub fn fine(&self) -> &Propagator {
        &self.fine
    }

    pub fn full_window(&self) -> Window {
        self.time.full_window()
    }

    pub fn zero_control(&self) -> ControlTrajectory {
        self.zero_control_on(self.full_window())
    }

    pub fn zero_control_on(&self, window: Window) -> ControlTrajectory {
        ControlTrajectory::zeros(window, self.grid.control_len())
    }

    /// Discrete `L²(I; Ω_c)` inner product (any window).
    pub fn dot_v(&self, a: &ControlTrajectory, b: &ControlTrajectory) -> f64 {
        self.time.dt() * self.grid.cell_area() * a.raw_dot(b)
    }

    pub fn norm_v(&self, a: &ControlTrajectory) -> f64 {
        self.dot_v(a, a).sqrt()
    }

    pub fn forward_solve(&self, y_init: &Field, v: &ControlTrajectory, counter: &mut OpCounter) -> Result<StateTrajectory> {
        self.fine.forward_solve(&self.grid, y_init, v, v.window(), counter)
    }

    pub fn backward_solve(&self, p_final: &Field, window: Window, counter: &mut OpCounter) -> Result<AdjointTrajectory> {
        self.fine.backward_solve(&self.grid, p_final, window, counter)
    }

    /// Same problem data with another target.
    pub fn with_target(&self, y_target: Field) -> Result<Self> {
        y_target.check_on(&self.grid, "target state")?;
        Ok(Self { y_target, ..self.clone() })
    }

    /// Same problem data with another initial state.
    pub fn with_initial(&self, y0: Field) -> Result<Self> {
        y0.check_on(&self.grid, "initial state")?;
        Ok(Self { y0, ..self.clone() })
    }

    pub(crate) fn global(&self) -> Tracking<'_> {
        Tracking { pb: self, window: self.full_window(), start: &self.y0, target: &self.y_target }
    }

    fn check_full(&self, v: &ControlTrajectory) -> Result<()> {
        if v.window() != self.full_window() || v.width() != self.grid.control_len() {
            return Err(Error::Shape(format!(
                "control must span {:?} with {} nodes, got {:?} with {}",
                self.full_window(),
                self.grid.control_len(),
                v.window(),
                v.width()
            )));
        }
        Ok(())
    }
}

/// State, adjoint, cost and gradient at one control.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub cost: f64,
    pub state: StateTrajectory,
    pub adjoint: AdjointTrajectory,
    pub gradient: ControlTrajectory,
}

/// Terminal-tracking cost over a window:
/// `½‖y(t_end) - target‖² + (α/2)‖v‖²` with `y(t_start) = start`.
/// The global `J` and every interval cost `J_n` are instances.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Tracking<'a> {
    pub pb: &'a ControlProblem,
    pub window: Window,
    pub start: &'a Field,
    pub target: &'a Field,
}

impl Tracking<'_> {
    fn check(&self, v: &ControlTrajectory) -> Result<()> {
        if v.window() != self.window || v.width() != self.pb.grid.control_len() {
            return Err(Error::Shape(format!(
                "control on {:?} does not match the cost window {:?}",
                v.window(),
                self.window
            )));
        }
        Ok(())
    }

    pub fn cost(&self, v: &ControlTrajectory, counter: &mut OpCounter) -> Result<f64> {
        self.check(v)?;
        let pb = self.pb;
        let y_end = pb.fine.forward_final(&pb.grid, self.start, v, self.window, counter)?;
        let miss = y_end.sub(self.target);
        Ok(0.5 * pb.grid.dot(&miss, &miss) + 0.5 * pb.alpha * pb.dot_v(v, v))
    }

    pub fn evaluate(&self, v: &ControlTrajectory, counter: &mut OpCounter) -> Result<Evaluation> {
        self.check(v)?;
        let pb = self.pb;
        let state = pb.fine.forward_solve(&pb.grid, self.start, v, self.window, counter)?;
        let miss = state.last().sub(self.target);
        let cost = 0.5 * pb.grid.dot(&miss, &miss) + 0.5 * pb.alpha * pb.dot_v(v, v);
        let adjoint = pb.fine.backward_solve(&pb.grid, &miss, self.window, counter)?;
        let mut gradient = restrict_adjoint(&pb.grid, &adjoint)?;
        gradient.axpy(pb.alpha, v);
        Ok(Evaluation { cost, state, adjoint, gradient })
    }

    /// `α δv + B* δp` with `δy(t_start) = 0` and `δp(t_end) = δy(t_end)`.
    pub fn hessian_apply(&self, dv: &ControlTrajectory, counter: &mut OpCounter) -> Result<ControlTrajectory> {
        self.check(dv)?;
        let pb = self.pb;
        let zero = Field::zeros(pb.grid.len());
        let dy_end = pb.fine.forward_final(&pb.grid, &zero, dv, self.window, counter)?;
        let dp = pb.fine.backward_solve(&pb.grid, &dy_end, self.window, counter)?;
        let mut out = restrict_adjoint(&pb.grid, &dp)?;
        out.axpy(pb.alpha, dv);
        Ok(out)
    }
}

pub fn evaluate_cost(pb: &ControlProblem, v: &ControlTrajectory, counter: &mut OpCounter) -> Result<f64> {
    pb.check_full(v)?;
    pb.global().cost(v, counter)
}

/// State, adjoint, `J` and `∇J` in one forward and one backward sweep.
pub fn evaluate(pb: &ControlProblem, v: &ControlTrajectory, counter: &mut OpCounter) -> Result<Evaluation> {
    pb.check_full(v)?;
    pb.global().evaluate(v, counter)
}

/// `∇J(v) = α v + B* p` with `p(T) = y(T) - y_target`.
pub fn gradient(pb: &ControlProblem, v: &ControlTrajectory, counter: &mut OpCounter) -> Result<ControlTrajectory> {
    Ok(evaluate(pb, v, counter)?.gradient)
}

/// Product with the (constant) Hessian of `J`.
pub fn hessian_apply(pb: &ControlProblem, dv: &ControlTrajectory, counter: &mut OpCounter) -> Result<ControlTrajectory> {
    pb.check_full(dv)?;
    pb.global().hessian_apply(dv, counter)
}

/// Exact minimizer of `θ ↦ J(v + θ d)` given `∇J(v)`, `d` and `HJ d`.
pub fn theta_along(
    pb: &ControlProblem,
    grad: &ControlTrajectory,
    direction: &ControlTrajectory,
    h_direction: &ControlTrajectory,
) -> Result<f64> {
    grad.check_same_shape(direction)?;
    direction.check_same_shape(h_direction)?;
    let curvature = pb.dot_v(h_direction, direction);
    if direction.max_abs() == 0.0 || !(curvature > 0.0) || !curvature.is_finite() {
        return Err(Error::DegenerateDirection);
    }
    Ok(-pb.dot_v(grad, direction) / curvature)
}

/// The `θ` minimizing `J((1-θ) v + θ ṽ)`.
pub fn optimal_theta(
    pb: &ControlProblem,
    v: &ControlTrajectory,
    v_tilde: &ControlTrajectory,
    counter: &mut OpCounter,
) -> Result<f64> {
    pb.check_full(v)?;
    pb.check_full(v_tilde)?;
    let d = v_tilde.sub(v);
    if d.max_abs() == 0.0 {
        return Err(Error::DegenerateDirection);
    }
    let g = gradient(pb, v, counter)?;
    let hd = hessian_apply(pb, &d, counter)?;
    theta_along(pb, &g, &d, &hd)
}

/// Locally optimal gradient step `ρ = ‖g‖² / ⟨H g, g⟩`. The quadrature
/// weight cancels, so plain sums are used.
pub fn optimal_rho(g: &ControlTrajectory, h_of_g: &ControlTrajectory) -> Result<f64> {
    g.check_same_shape(h_of_g)?;
    let gg = g.raw_dot(g);
    let hgg = h_of_g.raw_dot(g);
    if gg == 0.0 || !(hgg > 0.0) || !hgg.is_finite() {
        return Err(Error::DegenerateDirection);
    }
    Ok(gg / hgg)
}

/// Two-sided bounds on the Rayleigh quotient of `HJ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HessianBounds {
    pub alpha_lower: f64,
    /// `α + C²/(2ν)`, from the energy estimate with `ε = 2ν/C²`.
    pub beta_upper: f64,
    /// `α + C/√2`, the closed form quoted alongside the estimate; reported
    /// for comparison only, it is not a valid bound in general.
    pub beta_as_stated: f64,
    /// Discrete Poincaré constant `C`.
    pub poincare: f64,
}

pub fn hessian_bounds(pb: &ControlProblem) -> Result<HessianBounds> {
    let c = pb.op.poincare_constant()?;
    Ok(HessianBounds {
        alpha_lower: pb.alpha,
        beta_upper: pb.alpha + c * c / (2.0 * pb.nu),
        beta_as_stated: pb.alpha + c / std::f64::consts::SQRT_2,
        poincare: c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(n: usize, steps: usize, seed: u64) -> ControlProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = Grid::square(n).unwrap();
        let len = grid.len();
        let y0 = Field::from_vec((0..len).map(|_| rng.random_range(-1.0..1.0)).collect());
        let yt = Field::from_vec((0..len).map(|_| rng.random_range(-1.0..1.0)).collect());
        ControlProblem::new(grid, TimeGrid::from_steps(0.8, steps).unwrap(), 0.05, 0.1, y0, yt).unwrap()
    }

    fn random_control(pb: &ControlProblem, rng: &mut ChaCha8Rng) -> ControlTrajectory {
        ControlTrajectory::from_fn(pb.full_window(), pb.grid().control_len(), |_, _| rng.random_range(-1.0..1.0))
    }

    /// Dense space-time re-implementation: builds (I + dt A)⁻¹ with a dense
    /// LU and propagates with plain matrix products.
    fn dense_cost(pb: &ControlProblem, v: &ControlTrajectory) -> f64 {
        let g = pb.grid();
        let n = g.len();
        let dt = pb.time().dt();
        let m = DMatrix::from_fn(n, n, |r, c| (if r == c { 1.0 } else { 0.0 }) + dt * pb.operator().entry(r, c));
        let k = m.lu().try_inverse().unwrap();
        let b = DMatrix::from_fn(n, g.control_len(), |r, c| if g.control_nodes()[c] == r { 1.0 } else { 0.0 });
        let mut y = DVector::from_column_slice(pb.y0().as_slice());
        let mut reg = 0.0;
        for j in 0..v.steps() {
            let c = DVector::from_column_slice(v.snapshot(j));
            y = &k * (y + dt * (&b * &c));
            reg += c.norm_squared();
        }
        let miss = y - DVector::from_column_slice(pb.y_target().as_slice());
        0.5 * g.cell_area() * miss.norm_squared() + 0.5 * pb.alpha() * dt * g.cell_area() * reg
    }

    #[test]
    fn cost_trivial_cases() {
        let pb = random_problem(3, 5, 1);
        let zero = Field::zeros(pb.grid().len());
        let pb0 = pb.with_initial(zero.clone()).unwrap();
        let j = evaluate_cost(&pb0, &pb0.zero_control(), &mut OpCounter::new()).unwrap();
        let expected = 0.5 * pb0.grid().dot(pb0.y_target(), pb0.y_target());
        assert!((j - expected).abs() < 1e-15);
        let pb00 = pb0.with_target(zero).unwrap();
        assert_eq!(evaluate_cost(&pb00, &pb00.zero_control(), &mut OpCounter::new()).unwrap(), 0.0);
        let g = gradient(&pb00, &pb00.zero_control(), &mut OpCounter::new()).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn cost_matches_dense_space_time_oracle() {
        let pb = random_problem(2, 4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let v = random_control(&pb, &mut rng);
            let j = evaluate_cost(&pb, &v, &mut OpCounter::new()).unwrap();
            let dense = dense_cost(&pb, &v);
            assert!((j - dense).abs() < 1e-13 * dense.max(1.0), "{j} vs {dense}");
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let pb = random_problem(3, 8, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let eps = 1e-5;
        for _ in 0..20 {
            let v = random_control(&pb, &mut rng);
            let dv = random_control(&pb, &mut rng);
            let g = gradient(&pb, &v, &mut OpCounter::new()).unwrap();
            let mut vp = v.clone();
            vp.axpy(eps, &dv);
            let mut vm = v.clone();
            vm.axpy(-eps, &dv);
            let jp = evaluate_cost(&pb, &vp, &mut OpCounter::new()).unwrap();
            let jm = evaluate_cost(&pb, &vm, &mut OpCounter::new()).unwrap();
            let fd = (jp - jm) / (2.0 * eps);
            let exact = pb.dot_v(&g, &dv);
            assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1e-12), "{fd} vs {exact}");
        }
    }

    #[test]
    fn hessian_quadratic_form_and_symmetry() {
        let pb = random_problem(3, 6, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let zero = Field::zeros(pb.grid().len());
        for _ in 0..5 {
            let u = random_control(&pb, &mut rng);
            let w = random_control(&pb, &mut rng);
            let hu = hessian_apply(&pb, &u, &mut OpCounter::new()).unwrap();
            let hw = hessian_apply(&pb, &w, &mut OpCounter::new()).unwrap();
            let a = pb.dot_v(&hu, &w);
            let b = pb.dot_v(&u, &hw);
            assert!((a - b).abs() < 1e-13 * a.abs().max(1.0));

            let dy = pb.forward_solve(&zero, &u, &mut OpCounter::new()).unwrap();
            let direct = pb.grid().dot(dy.last(), dy.last()) + pb.alpha() * pb.dot_v(&u, &u);
            assert!((pb.dot_v(&hu, &u) - direct).abs() < 1e-13 * direct);

            // ∇J(v) - ∇J(w) = HJ (v - w)
            let gu = gradient(&pb, &u, &mut OpCounter::new()).unwrap();
            let gw = gradient(&pb, &w, &mut OpCounter::new()).unwrap();
            let h_diff = hessian_apply(&pb, &u.sub(&w), &mut OpCounter::new()).unwrap();
            assert!(gu.sub(&gw).max_abs_diff(&h_diff) < 1e-12 * h_diff.max_abs().max(1.0));
        }
        let z = hessian_apply(&pb, &pb.zero_control(), &mut OpCounter::new()).unwrap();
        assert_eq!(z.max_abs(), 0.0);
    }

    #[test]
    fn theta_matches_golden_section() {
        let pb = random_problem(2, 4, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..4 {
            let v = random_control(&pb, &mut rng);
            let vt = random_control(&pb, &mut rng);
            let theta = optimal_theta(&pb, &v, &vt, &mut OpCounter::new()).unwrap();
            let f = |t: f64| evaluate_cost(&pb, &v.lerp(&vt, t), &mut OpCounter::new()).unwrap();
            // Bracket the minimum before the golden-section search.
            let (mut a, mut b) = (-1.0, 1.0);
            while f(a) < f(a + 1e-3) {
                a *= 2.0;
            }
            while f(b) < f(b - 1e-3) {
                b *= 2.0;
            }
            let phi = (5f64.sqrt() - 1.0) / 2.0;
            for _ in 0..200 {
                let c = b - phi * (b - a);
                let d = a + phi * (b - a);
                if f(c) < f(d) {
                    b = d;
                } else {
                    a = c;
                }
            }
            let golden = 0.5 * (a + b);
            assert!((theta - golden).abs() < 1e-6, "{theta} vs {golden}");
        }
    }

    #[test]
    fn degenerate_directions() {
        let pb = random_problem(2, 3, 10);
        let v = pb.zero_control();
        assert!(matches!(optimal_theta(&pb, &v, &v, &mut OpCounter::new()), Err(Error::DegenerateDirection)));
        assert!(matches!(optimal_rho(&v, &v), Err(Error::DegenerateDirection)));
    }

    #[test]
    fn rho_scale_invariant_and_pure_regularization_limit() {
        let pb = random_problem(3, 5, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let g = random_control(&pb, &mut rng);
        let hg = hessian_apply(&pb, &g, &mut OpCounter::new()).unwrap();
        let rho = optimal_rho(&g, &hg).unwrap();
        let g3 = g.scaled(3.7);
        let hg3 = hessian_apply(&pb, &g3, &mut OpCounter::new()).unwrap();
        assert!((optimal_rho(&g3, &hg3).unwrap() - rho).abs() < 1e-12 * rho);
        assert!(rho <= 1.0 / pb.alpha() * (1.0 + 1e-12));
        // H = α I
        assert!((optimal_rho(&g, &g.scaled(pb.alpha())).unwrap() - 1.0 / pb.alpha()).abs() < 1e-12);
    }

    #[test]
    fn bounds_contain_rayleigh_quotients() {
        let pb = random_problem(3, 8, 13);
        let b = hessian_bounds(&pb).unwrap();
        assert!(b.alpha_lower <= b.beta_upper);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for k in 0..100 {
            let mut dv = random_control(&pb, &mut rng);
            if k % 10 == 0 {
                // support on a single step
                let keep = k / 10 % dv.steps();
                for j in 0..dv.steps() {
                    if j != keep {
                        dv.snapshot_mut(j).iter_mut().for_each(|x| *x = 0.0);
                    }
                }
            }
            let hdv = hessian_apply(&pb, &dv, &mut OpCounter::new()).unwrap();
            let q = pb.dot_v(&hdv, &dv) / pb.dot_v(&dv, &dv);
            assert!(q >= b.alpha_lower * (1.0 - 1e-12) && q <= b.beta_upper, "q = {q}");
        }
    }
}
