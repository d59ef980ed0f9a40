//! Brute-force reference solution of the discrete optimality system on
//! small instances: the control-to-final-state map is assembled column by
//! column from unit impulses and the dense normal equations are solved by
//! Cholesky.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::heat_core::{AdjointTrajectory, ControlTrajectory, Field, OpCounter, StateTrajectory, Window};
use crate::optimal_control::{ControlProblem, Tracking};
use crate::time_decomposition::SubProblem;

/// Largest number of control unknowns (snapshots × control nodes) the
/// oracle accepts.
pub const MAX_UNKNOWNS: usize = 5000;

/// How the columns of the control-to-final-state map are produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Assembly {
    /// One backward-in-index sweep per control node, reusing time invariance.
    #[default]
    ShiftSweep,
    /// One full forward solve per unit impulse.
    DirectImpulse,
}

/// Dense normal equations `(α I + S*S) v = -S*(y_free(t_end) - target)`.
#[derive(Clone, Debug)]
pub struct DenseKkt {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub window: Window,
    pub width: usize,
}

/// Discrete optimum with its state and adjoint.
#[derive(Clone, Debug)]
pub struct KktSolution {
    pub control: ControlTrajectory,
    pub state: StateTrajectory,
    pub adjoint: AdjointTrajectory,
    pub cost: f64,
    /// `‖α v + B* p‖ / ‖rhs‖` at the solution.
    pub residual: f64,
}

fn assemble(tr: &Tracking<'_>, assembly: Assembly) -> Result<DenseKkt> {
    let pb = tr.pb;
    let grid = pb.grid();
    let width = grid.control_len();
    let steps = tr.window.len();
    let unknowns = width * steps;
    if unknowns > MAX_UNKNOWNS {
        return Err(Error::OracleTooLarge { unknowns, limit: MAX_UNKNOWNS });
    }
    let n = grid.len();
    let dt = pb.time().dt();
    let fine = pb.fine();
    let mut counter = OpCounter::new();
    // Columns of S in Euclidean coordinates: y(t_end) for a unit impulse.
    let mut s = DMatrix::<f64>::zeros(n, unknowns);
    let zero = Field::zeros(n);
    match assembly {
        Assembly::ShiftSweep => {
            for c in 0..width {
                let mut unit = vec![0.0; width];
                unit[c] = 1.0;
                let mut y = zero.clone();
                fine.step(grid, &mut y, Some(&unit), &mut counter)?;
                for j in (0..steps).rev() {
                    s.column_mut(j * width + c).copy_from_slice(y.as_slice());
                    if j > 0 {
                        fine.step(grid, &mut y, None, &mut counter)?;
                    }
                }
            }
        }
        Assembly::DirectImpulse => {
            for u in (0..unknowns).rev() {
                let mut impulse = ControlTrajectory::zeros(tr.window, width);
                impulse.as_mut_slice()[u] = 1.0;
                let y = fine.forward_final(grid, &zero, &impulse, tr.window, &mut counter)?;
                s.column_mut(u).copy_from_slice(y.as_slice());
            }
        }
    }
    let free_end = fine.forward_final(grid, tr.start, &ControlTrajectory::zeros(tr.window, width), tr.window, &mut counter)?;
    let r = DVector::from_column_slice(free_end.sub(tr.target).as_slice());
    // Adjoint of S under the weighted products is Sᵀ / dt.
    let st = s.transpose();
    let mut matrix = &st * &s / dt;
    for k in 0..unknowns {
        matrix[(k, k)] += pb.alpha();
    }
    let rhs = -(&st * r) / dt;
    Ok(DenseKkt { matrix, rhs, window: tr.window, width })
}

fn solve(tr: &Tracking<'_>, assembly: Assembly) -> Result<KktSolution> {
    let kkt = assemble(tr, assembly)?;
    let chol = kkt
        .matrix
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("dense KKT matrix is not positive definite".into()))?;
    let u = chol.solve(&kkt.rhs);
    let control = ControlTrajectory::from_vec(kkt.window, kkt.width, u.as_slice().to_vec())?;
    let mut counter = OpCounter::new();
    let eval = tr.evaluate(&control, &mut counter)?;
    let pb = tr.pb;
    let scale = kkt.rhs.norm().max(pb.alpha() * u.norm());
    let residual = if scale == 0.0 { 0.0 } else { eval.gradient.raw_dot(&eval.gradient).sqrt() / scale };
    if !(residual <= 1e-10) {
        return Err(Error::Numerical(format!("dense KKT residual {residual:e} above 1e-10")));
    }
    Ok(KktSolution { control, state: eval.state, adjoint: eval.adjoint, cost: eval.cost, residual })
}

pub fn assemble_kkt(pb: &ControlProblem) -> Result<DenseKkt> {
    assemble(&pb.global(), Assembly::default())
}

/// Global discrete optimum `v*` with `y*`, `p*`.
pub fn solve_kkt_dense(pb: &ControlProblem) -> Result<KktSolution> {
    solve(&pb.global(), Assembly::default())
}

pub fn solve_kkt_dense_with(pb: &ControlProblem, assembly: Assembly) -> Result<KktSolution> {
    solve(&pb.global(), assembly)
}

/// Optimum of one interval sub-problem.
pub fn solve_local_kkt(pb: &ControlProblem, sp: &SubProblem) -> Result<KktSolution> {
    let tr = Tracking { pb, window: sp.window, start: &sp.y_start, target: &sp.chi_end };
    solve(&tr, Assembly::default())
}
