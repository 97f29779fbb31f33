//! Motion planning for a quadcopter carrying a Delta arm in pick-and-place
//! missions.
//!
//! The planner is partially decoupled: the base trajectory is planned first
//! inside a safe flight corridor, then the end-effector trajectory is solved
//! as a QP whose linear constraints keep it inside the arm's reachable box
//! relative to the base. Collisions of the arm with nearby obstacles are
//! resolved iteratively by attracting the trajectory to mirrored points.
//!
//! Frames follow the aerospace convention: z points down, toward gravity.

pub mod bezier;
pub mod collision;
pub mod corridor;
pub mod delta;
pub mod ee_trajectory;
pub mod feasibility;
pub mod geometry;
pub mod grid_planner;
pub mod pipeline;
pub mod qp;
pub mod quad_trajectory;

pub use geometry::{RotMat3, Vec3};

/// Standard gravity in m/s².
pub const GRAVITY: f64 = 9.81;
