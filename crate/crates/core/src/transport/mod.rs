//! Length-prefixed JSON request/reply layer shared by the device services
//! and the framed-TCP policy protocol, plus a WebSocket variant carrying the
//! same payloads.

pub mod client;
pub mod envelope;
pub mod frame;
pub mod server;
pub mod ws;

pub use client::{Connection, DEFAULT_CONNECT_TIMEOUT};
pub use envelope::{Envelope, ErrorReply, ERROR_TYPE};
pub use frame::{decode_all, encode, frame_payload, FrameDecoder, MAX_FRAME};
pub use server::{serve, shared, stateless, Handler, ServerHandle, Service, Session};
pub use ws::{serve_ws, WsConnection};

/// Default service ports.
pub mod ports {
    pub const ARM: u16 = 5601;
    pub const GRIPPER: u16 = 5602;
    pub const POLICY_MQ: u16 = 5603;
    pub const BRIDGE: u16 = 5604;
    pub const CAMERA: u16 = 5605;
    pub const POLICY_WS: u16 = 5606;
}

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("frame payload of {len} bytes exceeds the 16 MiB limit")]
    Oversize { len: usize },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(std::io::Error),
    #[error("connect failed: {0}")]
    Connect(String),
    #[error("request timed out")]
    Timeout,
    #[error("connection closed by peer")]
    Closed,
    #[error("reply id {got:?} does not match request id {expected}")]
    IdMismatch { expected: u64, got: Option<u64> },
    #[error("remote error {code}: {message}")]
    Remote { code: String, message: String },
    #[error("websocket: {0}")]
    WebSocket(String),
}

impl TransportError {
    pub fn remote_code(&self) -> Option<&str> {
        match self {
            TransportError::Remote { code, .. } => Some(code),
            _ => None,
        }
    }
}
