//! Mock policy servers. Each server speaks both inference protocols (binary
//! WebSocket and framed TCP) with the same JSON documents, delays every
//! reply by a sample from a seeded latency profile and answers with
//! `horizon × 7` action chunks from one of four policies:
//!
//! * `zeros` — all-zero chunks;
//! * `random` — bounded random walk around the observed state;
//! * `replay` — recorded episode actions resampled to the control rate;
//! * `oracle` — scripted grasper that **reads privileged simulator state**
//!   (`world.debug`) instead of looking at the images. It validates the
//!   plumbing and the evaluation harness; it is not a model.

pub mod latency;
pub mod oracle;
pub mod policies;
pub mod server;

pub use latency::{LatencyProfile, LatencySampler};
pub use oracle::{OracleConfig, OraclePlanner, OracleSession};
pub use policies::{
    check_horizon, resample_zoh, Policy, PolicyKind, RandomPolicy, ReplayPolicy, ZerosPolicy, RANDOM_STEP,
    SUPPORTED_HORIZONS,
};
pub use server::{PolicyServer, PolicyServerConfig};

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("policy config: {0}")]
    Config(String),
    #[error("world state unavailable: {0}")]
    World(String),
    #[error(transparent)]
    Transport(crate::transport::TransportError),
}
