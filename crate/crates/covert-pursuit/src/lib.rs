//! Covert pursuit planning for a solar-powered monitoring UAV.
//!
//! This crate plans energy-minimal, disguise-maximal 3D trajectories for a
//! rotary-wing monitor that tails a moving target UAV while staying inside
//! its feasible flight region. The non-convex propulsion and solar power
//! models are convexified (variable substitution plus successive convex
//! approximation), and the resulting difference-of-convex program is solved
//! by a proximal DC method with Nesterov-style extrapolation. A
//! receding-horizon variant replans online from predicted target waypoints.
//!
//! Entry points:
//! - [`pdcae::solve_offline`] for a full-mission plan,
//! - [`mpc::run_online`] for the receding-horizon loop,
//! - [`harness`] for scheme comparisons, Pareto sweeps and report export.
//!
//! See the `examples/` directory for one runnable example per capability.

pub mod dc;
pub mod error;
pub mod harness;
pub mod inner;
pub mod mpc;
pub mod oracle;
pub mod pdcae;
pub mod power;
pub mod report;
pub mod scenario;

pub use error::{Error, Result};
pub use scenario::{ScenarioConfig, TargetTrack, TrajectoryPlan};
