//! Geometric-constraint manipulation planning.
//!
//! The pipeline: a textual constraint plan ([`dsl`]) is compiled into
//! point-cloud cost functions ([`cost`]) over a time-indexed component store
//! ([`registry`]), solved into SE(3) gripper poses and interpolated
//! trajectories ([`solver`]), and stepped through stages with loop/branch
//! flow control ([`flow`]). A synthetic scene simulator ([`sim`]) provides
//! part-labelled point clouds and success predicates for end-to-end runs,
//! and [`vision`] turns segmentation masks plus depth into part clouds.

pub mod cost;
pub mod dsl;
pub mod fixtures;
pub mod flow;
pub mod geometry;
pub mod planner;
pub mod registry;
pub mod sim;
pub mod solver;
pub mod vision;

mod optim;

pub use geometry::{EulerAngles, GeometryError, PointCloud, RigidTransform, RotationMatrix, UnitVector};
pub use registry::{CloudSource, ComponentKey, ComponentRegistry, Timestamp};
pub use solver::{SolverConfig, Trajectory};
