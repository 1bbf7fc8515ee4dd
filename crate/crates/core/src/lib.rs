//! Predictive control barrier functions for a kinematic bicycle.
//!
//! The barrier `H_T(x)` is the best worst-case obstacle clearance reachable
//! over a horizon `T` while ending (or passing) inside a controlled-invariant
//! set `F`. It is sampled offline on a grid, interpolated online, and used
//! by a pointwise safety filter or inside an MPC loop.

pub mod builder;
pub mod cli;
pub mod constraints;
pub mod dynamics;
pub mod error;
pub mod field;
pub mod filter;
pub mod mpc;
pub mod plot;
pub mod scenario;
pub mod simulator;
pub mod validate;

pub use builder::{
    solve_maxmin, sweep_grid, GridSpec, HorizonSpec, MaxMinProblem, MaxMinResult,
    MembershipMode, SolverConfig, SweepStats,
};
pub use constraints::{in_f, tau_bound, Circle, ClassK, FSetKind, FSetSpec, ObstacleField};
pub use dynamics::{
    integrate_rk4, min_turn_radius, BicycleParams, ControlSchedule, Input, InputBounds,
    KinematicBicycle, State,
};
pub use error::{CbfError, Result};
pub use field::{BarrierField, FieldMeta, FieldQuery, NodeFlag};
pub use filter::{filter, Barrier, ConstraintBarrier, FilterConfig, FilterOutcome, FilterStatus};
pub use scenario::ScenarioConfig;
pub use simulator::{
    cbf_condition_probe, nominal_line_controller, run_baseline_h, run_filtered, ProbeConfig,
    ProbeReport, RunLog,
};
pub use mpc::{run_mpc, MpcConfig, MpcMode, MpcRun};
