//! Periodic orbits of the uncontrolled plant and their continuation, plus the
//! control-based continuation zero-problem on the controlled plant.

pub mod branch;
pub mod cbc;
pub mod hb;
pub mod shooting;

pub use branch::{continue_branch, Branch, BranchEvent, BranchOptions, EventKind};
pub use cbc::{cbc_measure, cbc_solve, CbcMeasurement, CbcOptions, CbcResult};
pub use hb::{floquet_multipliers, hb_residual, hb_solve, monodromy, quadrature_points, NewtonOptions, PeriodicOrbit};
pub use shooting::{shooting_solve, ShootingOrbit};
