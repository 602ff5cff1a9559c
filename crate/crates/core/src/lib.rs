//! Hardware-free manipulation stack: a simulated arm, gripper and cameras
//! behind length-prefixed JSON device services, a leader/follower teleop
//! loop with episode recording, an action-chunk deployment broker that talks
//! to policy servers over WebSocket or framed TCP, mock policy servers with
//! latency injection, and an evaluation harness.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with the rest.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cell;
pub mod clock;
pub mod sched;
pub mod simworld;
pub mod transport;
pub mod devices;
pub mod recorder;
pub mod teleop;
pub mod broker;
pub mod policyd;
pub mod eval;
