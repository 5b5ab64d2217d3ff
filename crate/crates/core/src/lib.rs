//! Nonsmooth speed-gradient control.
//!
//! A goal function `Q` is driven to zero by moving the control against the
//! gradient, in `u`, of an upper bound `ω(x, u) = g(x)ᵀu` on the directional
//! derivative of `Q` along the flow. Two plants are provided: the Brockett
//! integrator ([`brockett`]) and a single-mode nonlinear string
//! ([`string`]). [`sim`] closes the loop and records trajectories.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod brockett;
pub mod error;
pub mod nonsmooth;
mod radau;
pub mod sg;
pub mod sim;
pub mod string;

pub use brockett::{
    BranchTag, BrockettCartesian, BrockettControllerParams, BrockettCylindrical, BrockettState,
    VSelector,
};
pub use error::{Error, Result};
pub use nonsmooth::{fd_directional_derivative, support_min, Direction, FdSchedule, SuperdiffVertexSet};
pub use sg::{
    acute_angle_residual, control_from_gradient, control_from_psi, monitor_decrease,
    scan_assumption4, AssumptionScanSpec, DecreaseReport, DescentMode, GoalEvaluation,
    PseudogradientLaw, ScanOutcome, ScanReport, ScanStatus,
};
pub use sim::{
    locate_event, simulate, step_rk4, ClosedLoopSystem, EventAction, EventRecord, EventSpec,
    GuardTrip, Integrator, Sample, SimConfig, Termination, Trajectory,
};
pub use string::{GoalKind, StringClosedLoop, StringParams, StringState};
