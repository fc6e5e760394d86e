//! Adaptive noninvasive control of nonlinear plants that are linear in their
//! unknown parameters, with the periodic-orbit tools needed to use it for
//! control-based continuation.
//!
//! - [`plant`]: plant models `x^(n) = F(xi) theta + u` and benchmark systems.
//! - [`reference`]: Fourier reference trajectories.
//! - [`controller`]: the adaptive control law.
//! - [`simulator`] and [`scenario`]: closed/open-loop simulation and configs.
//! - [`continuation`]: harmonic balance, Floquet stability, branches and the
//!   control-based continuation zero-problem.
//! - [`diagnostics`]: metrics computed from simulation traces.

// Negated comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod continuation;
pub mod controller;
pub mod diagnostics;
pub mod error;
pub mod integrate;
pub mod plant;
pub mod reference;
pub mod scenario;
pub mod simulator;

pub use error::{Error, Result};
