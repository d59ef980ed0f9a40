//! Time-parallel solution of the linear-quadratic optimal control problem
//! for the heat equation on the unit square.
//!
//! The time horizon is split into sub-intervals. Intermediate targets built
//! from the current state and adjoint decouple the problem into independent
//! interval sub-problems ([`algorithms`], SITPOC), and the serial state and
//! adjoint sweeps can in turn be replaced by parareal corrections
//! ([`parareal`], PITPOC). A dense reference solver ([`oracle`]) and
//! instance-wise checks of the convergence theory ([`diagnostics`]) back the
//! test suite.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algorithms;
pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod heat_core;
pub mod optimal_control;
pub mod oracle;
pub mod parareal;
pub mod time_decomposition;

pub use error::{Error, Result};
