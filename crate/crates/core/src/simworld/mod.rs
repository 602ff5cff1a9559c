//! Deterministic kinematic simulator: 6-DoF arm, parallel gripper with a
//! compliant-closure contact model, tabletop objects and two synthetic
//! top-down cameras.

pub mod config;
pub mod kinematics;
pub mod render;
pub mod scatter;
pub mod world;

pub use config::{
    ArmModel, CameraConfig, GraspParams, GripperModel, JointAxis, ObjectConfig, ObjectKind, Rect,
    SimConfig,
};
pub use kinematics::{forward_kinematics, solve_top_down, TcpPose};
pub use render::{render, CameraId, Projection};
pub use scatter::scatter_objects;
pub use world::{
    GraspOutcome, GripperState, JointState, MissReason, ObjectStatus, SimObject, World, WorldState,
};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulator config: {0}")]
    Config(String),
    #[error("joint angles {q:?} violate the configured limits")]
    LimitViolation { q: [f64; 6] },
    #[error("non-finite joint target")]
    NonFinite,
    #[error("time step must be positive and finite, got {0}")]
    BadTimeStep(f64),
    #[error("placed {placed} of {requested} objects before running out of attempts")]
    PlacementInfeasible { placed: usize, requested: usize },
    #[error("unreachable: {0}")]
    Unreachable(String),
}
