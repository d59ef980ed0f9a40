//! Implicit-Euler propagation of the state (forward, controlled) and the
//! adjoint (backward, homogeneous) equations.
//!
//! The backward stepper applies the transpose of the forward step, so the
//! pair is an exact discrete adjoint: with `K = (I + τA)⁻¹` the forward step
//! is `y ← K (y + τ B v)` and the backward step is `p ← K p`.

use std::sync::Arc;

use super::counter::OpCounter;
use super::field::{ControlTrajectory, Field};
use super::grid::{Grid, Window};
use super::operator::{BandedCholesky, DiscreteOperator};
use crate::error::{Error, Result};

/// Values at the fine times `t_start ..= t_end` of a window.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    window: Window,
    states: Vec<Field>,
}

pub type StateTrajectory = Trajectory;
pub type AdjointTrajectory = Trajectory;

impl Trajectory {
    pub fn window(&self) -> Window {
        self.window
    }

    /// Value at absolute fine time index `m`, `window.start <= m <= window.end`.
    pub fn at(&self, m: usize) -> &Field {
        &self.states[m - self.window.start]
    }

    pub fn first(&self) -> &Field {
        &self.states[0]
    }

    pub fn last(&self) -> &Field {
        self.states.last().expect("trajectory holds at least one state")
    }

    pub fn states(&self) -> &[Field] {
        &self.states
    }

    pub fn into_last(mut self) -> Field {
        self.states.pop().expect("trajectory holds at least one state")
    }
}

/// Implicit-Euler stepper `(I + τA)⁻¹` for one step size.
#[derive(Clone, Debug)]
pub struct Propagator {
    tau: f64,
    factor: Arc<BandedCholesky>,
}

impl Propagator {
    pub fn new(op: &DiscreteOperator, tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::Config(format!("time step must be positive, got {tau}")));
        }
        Ok(Self { tau, factor: Arc::new(op.shifted_factor(tau)?) })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// One controlled step `y ← (I + τA)⁻¹ (y + τ B c)`.
    pub fn step(&self, grid: &Grid, y: &mut Field, control: Option<&[f64]>, counter: &mut OpCounter) -> Result<()> {
        if let Some(c) = control {
            grid.inject_scaled_into(c, self.tau, y)?;
        }
        self.factor.solve_in_place(y.as_mut_slice());
        counter.record_solves(1);
        if !y.is_finite() {
            return Err(Error::Numerical("non-finite value after implicit-Euler step".into()));
        }
        Ok(())
    }

    fn check_forward(&self, grid: &Grid, y_init: &Field, v: &ControlTrajectory, window: Window) -> Result<()> {
        y_init.check_on(grid, "initial state")?;
        if v.window() != window {
            return Err(Error::Shape(format!(
                "control spans {:?}, propagation requested on {:?}",
                v.window(),
                window
            )));
        }
        if v.width() != grid.control_len() {
            return Err(Error::Shape(format!(
                "control snapshots have {} values, grid has {} control nodes",
                v.width(),
                grid.control_len()
            )));
        }
        Ok(())
    }

    /// State equation over `window` from `y_init`, keeping every fine state.
    pub fn forward_solve(
        &self,
        grid: &Grid,
        y_init: &Field,
        v: &ControlTrajectory,
        window: Window,
        counter: &mut OpCounter,
    ) -> Result<StateTrajectory> {
        self.check_forward(grid, y_init, v, window)?;
        let mut states = Vec::with_capacity(window.len() + 1);
        let mut y = y_init.clone();
        states.push(y.clone());
        for j in 0..window.len() {
            self.step(grid, &mut y, Some(v.snapshot(j)), counter)?;
            states.push(y.clone());
        }
        Ok(Trajectory { window, states })
    }

    /// Same as [`Propagator::forward_solve`] but returns only the final state.
    pub fn forward_final(
        &self,
        grid: &Grid,
        y_init: &Field,
        v: &ControlTrajectory,
        window: Window,
        counter: &mut OpCounter,
    ) -> Result<Field> {
        self.check_forward(grid, y_init, v, window)?;
        let mut y = y_init.clone();
        for j in 0..window.len() {
            self.step(grid, &mut y, Some(v.snapshot(j)), counter)?;
        }
        Ok(y)
    }

    /// Adjoint equation backwards over `window` from its value at `t_end`.
    pub fn backward_solve(
        &self,
        grid: &Grid,
        p_final: &Field,
        window: Window,
        counter: &mut OpCounter,
    ) -> Result<AdjointTrajectory> {
        p_final.check_on(grid, "terminal adjoint")?;
        let mut states = vec![Field::zeros(0); window.len() + 1];
        let mut p = p_final.clone();
        states[window.len()] = p.clone();
        for j in (0..window.len()).rev() {
            self.step(grid, &mut p, None, counter)?;
            states[j] = p.clone();
        }
        Ok(Trajectory { window, states })
    }

    /// Same as [`Propagator::backward_solve`] but returns only the value at `t_start`.
    pub fn backward_initial(&self, grid: &Grid, p_final: &Field, steps: usize, counter: &mut OpCounter) -> Result<Field> {
        p_final.check_on(grid, "terminal adjoint")?;
        let mut p = p_final.clone();
        for _ in 0..steps {
            self.step(grid, &mut p, None, counter)?;
        }
        Ok(p)
    }
}

/// `B* p(t_m)` paired with control step `m` for every step of the window,
/// i.e. the state-dependent part of the discrete gradient.
pub fn restrict_adjoint(grid: &Grid, p: &AdjointTrajectory) -> Result<ControlTrajectory> {
    let window = p.window();
    let width = grid.control_len();
    let mut out = ControlTrajectory::zeros(window, width);
    for j in 0..window.len() {
        let r = grid.restrict(&p.states[j])?;
        out.snapshot_mut(j).copy_from_slice(&r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(rng: &mut ChaCha8Rng, n: usize) -> Field {
        Field::from_vec((0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    fn random_control(rng: &mut ChaCha8Rng, window: Window, width: usize) -> ControlTrajectory {
        ControlTrajectory::from_fn(window, width, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_dynamics_stay_zero() {
        let g = Grid::square(4).unwrap();
        let op = DiscreteOperator::assemble(&g, 0.1).unwrap();
        let prop = Propagator::new(&op, 0.05).unwrap();
        let w = Window::new(0, 6);
        let v = ControlTrajectory::zeros(w, g.control_len());
        let mut c = OpCounter::new();
        let y = prop.forward_solve(&g, &Field::zeros(g.len()), &v, w, &mut c).unwrap();
        assert!(y.states().iter().all(|s| s.as_slice().iter().all(|&x| x == 0.0)));
        assert_eq!(c.serial(), 6);
        let p = prop.backward_solve(&g, &Field::zeros(g.len()), w, &mut c).unwrap();
        assert!(p.states().iter().all(|s| s.as_slice().iter().all(|&x| x == 0.0)));
        assert_eq!(c.serial(), 12);
    }

    #[test]
    fn scalar_closed_form() {
        let g = Grid::square(1).unwrap();
        let (nu, dt) = (0.3, 0.25);
        let op = DiscreteOperator::assemble(&g, nu).unwrap();
        let prop = Propagator::new(&op, dt).unwrap();
        let w = Window::new(0, 1);
        let v = ControlTrajectory::zeros(w, 1);
        let mut c = OpCounter::new();
        let y0 = Field::from_vec(vec![2.0]);
        let y = prop.forward_final(&g, &y0, &v, w, &mut c).unwrap();
        let expected = 2.0 / (1.0 + dt * 16.0 * nu);
        assert!((y.as_slice()[0] - expected).abs() < 1e-15);
        let p = prop.backward_solve(&g, &y0, w, &mut c).unwrap();
        assert!((p.first().as_slice()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn symmetric_initial_data_stays_symmetric() {
        let g = Grid::square(6).unwrap();
        let op = DiscreteOperator::assemble(&g, 0.2).unwrap();
        let prop = Propagator::new(&op, 0.1).unwrap();
        let y0 = g.sample(|x, y| x * y * (1.0 - x) * (1.0 - y) + (x + y).sin());
        let w = Window::new(0, 10);
        let v = ControlTrajectory::zeros(w, g.control_len());
        let yt = prop.forward_final(&g, &y0, &v, w, &mut OpCounter::new()).unwrap();
        let n = g.nx();
        for j in 0..n {
            for i in 0..n {
                let a = yt.as_slice()[j * n + i];
                let b = yt.as_slice()[i * n + j];
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn window_mismatch_is_shape_error() {
        let g = Grid::square(3).unwrap();
        let op = DiscreteOperator::assemble(&g, 0.1).unwrap();
        let prop = Propagator::new(&op, 0.1).unwrap();
        let v = ControlTrajectory::zeros(Window::new(0, 3), g.control_len());
        let err = prop
            .forward_solve(&g, &Field::zeros(g.len()), &v, Window::new(0, 4), &mut OpCounter::new())
            .unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    /// Summation by parts on a 2x2 grid over 3 steps.
    #[test]
    fn discrete_adjoint_identity_small() {
        let g = Grid::square(2).unwrap();
        let op = DiscreteOperator::assemble(&g, 0.4).unwrap();
        let dt = 0.2;
        let prop = Propagator::new(&op, dt).unwrap();
        let w = Window::new(0, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let v = random_control(&mut rng, w, g.control_len());
            let phi = random_field(&mut rng, g.len());
            let mut c = OpCounter::new();
            let yt = prop.forward_final(&g, &Field::zeros(g.len()), &v, w, &mut c).unwrap();
            let p = prop.backward_solve(&g, &phi, w, &mut c).unwrap();
            let bp = restrict_adjoint(&g, &p).unwrap();
            let lhs = g.dot(&yt, &phi);
            let rhs = dt * g.cell_area() * v.raw_dot(&bp);
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn stability_estimate() {
        let g = Grid::square(5).unwrap();
        let op = DiscreteOperator::assemble(&g, 0.05).unwrap();
        let dt = 0.3;
        let prop = Propagator::new(&op, dt).unwrap();
        let w = Window::new(0, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let v = random_control(&mut rng, w, g.control_len());
            let y0 = random_field(&mut rng, g.len());
            let y = prop.forward_solve(&g, &y0, &v, w, &mut OpCounter::new()).unwrap();
            for j in 0..w.len() {
                let c = v.snapshot(j);
                let bound = g.norm(&y.states()[j]) + dt * g.control_dot(c, c).sqrt();
                assert!(g.norm(&y.states()[j + 1]) <= bound * (1.0 + 1e-14));
            }
        }
    }
}
