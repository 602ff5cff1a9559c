//! Deployment broker: observation → policy server → action chunk → one
//! action per 50 ms tick.
//!
//! Both policy protocols carry the same JSON documents: a `policy.infer`
//! request holding the observation (id = inference sequence number) and a
//! `policy.chunk` reply with `horizon` and `actions` (`horizon × 7`). `ws`
//! sends each as one binary WebSocket message, `mq` as one length-prefixed
//! frame.

pub mod adapter;
pub mod chunk;
pub mod deploy;

pub use adapter::{PolicyAdapter, Protocol};
pub use chunk::{msg, observation_envelope, ActionChunk};
pub use deploy::{
    latencies_from_log, read_run_log, BrokerConfig, DeployLoop, DeploySummary, RunEvent, TickInfo, CONTROL_RATE_HZ,
    INFERENCE_TIMEOUT, MAX_RETRIES,
};

use crate::transport::TransportError;

#[derive(Debug, thiserror::Error)]
pub enum BrokerError {
    #[error("config: {0}")]
    Config(String),
    #[error("observation unavailable: {0}")]
    ObservationUnavailable(String),
    #[error("inference timed out")]
    InferenceTimeout,
    #[error("chunk shape: {0}")]
    ChunkShape(String),
    #[error("policy adapter: {0}")]
    Adapter(TransportError),
    #[error("policy unavailable after {attempts} attempts: {last}")]
    PolicyUnavailable { attempts: u32, last: String },
    #[error("device: {0}")]
    Device(#[from] TransportError),
    #[error("io: {0}")]
    Io(String),
}
