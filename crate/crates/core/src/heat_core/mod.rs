//! Spatial discretization of the unit square, the control injection and
//! the implicit-Euler state/adjoint propagators.

mod counter;
pub mod dump;
mod field;
mod grid;
mod operator;
mod propagate;

pub use counter::{CountMode, OpCounter};
pub use field::{ControlTrajectory, Field};
pub use grid::{Grid, TimeGrid, Window};
pub use operator::{BandedCholesky, DiscreteOperator};
pub use propagate::{restrict_adjoint, AdjointTrajectory, Propagator, StateTrajectory, Trajectory};
