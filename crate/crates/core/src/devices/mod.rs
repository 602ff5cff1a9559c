//! Arm, gripper and camera services that put the simulator behind the
//! framed request/reply transport.
//!
//! Message types: `arm.command`, `arm.state`, `grip.command`, `grip.state`,
//! `cam.get`, `state.get` (the unified observation), `sys.reset` (re-scatter and home) and the privileged
//! `world.debug`. The world steps on its own 250 Hz grid; requests never
//! advance simulated time.

pub mod client;
pub mod imaging;
pub mod services;
pub mod shared;

pub use client::{DeviceClient, DeviceEndpoints, Endpoint};
pub use services::{msg, ArmService, CameraFrame, Observation, CameraService, DeviceAddrs, DeviceStack, GripperService};
pub use shared::{ArmReading, GripReading, SharedWorld, SimDriver};
