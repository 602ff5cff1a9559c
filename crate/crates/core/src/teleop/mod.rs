//! Leader→follower forwarding at a fixed 12 ms tick (83.3 Hz).
//!
//! Each tick reads the freshest leader sample, maps it through the
//! per-joint calibration (`sign * leader + offset`), clamps it and sends one
//! `arm.command` and one `grip.command`. The commanded vector is published
//! on an action tap for the recorder. A leader that has been silent for more
//! than 500 ms pauses commanding until it comes back.

pub mod bridge;
pub mod calibration;
pub mod forward;
pub mod source;

pub use bridge::{serve_bridge, BridgeHub, RecControl, RecorderStatus};
pub use calibration::{calibrate, LeaderCalibration, DEFAULT_MAX_STD, MIN_CALIBRATION_SAMPLES};
pub use forward::{ActionTap, TeleopConfig, TeleopLoop, TeleopStats, TELEOP_RATE_HZ};
pub use source::{CellSource, LeaderSample, LeaderSource, ReplaySource, ScriptedSource, Waypoint};

#[derive(Debug, thiserror::Error)]
pub enum TeleopError {
    #[error("calibration: {0}")]
    Calibration(String),
    #[error("calibration unstable: joint {joint} sample std {std:.4} exceeds the threshold")]
    CalibrationUnstable { joint: usize, std: f64 },
    #[error("leader source: {0}")]
    Source(String),
    #[error(transparent)]
    Transport(#[from] crate::transport::TransportError),
}
