use std::time::Duration;

use serde_json::json;

use super::services::{msg, CameraFrame, GripCommand, Observation};
use super::shared::{ArmReading, GripReading};
use crate::simworld::WorldState;
use crate::transport::{Connection, Envelope, TransportError, DEFAULT_CONNECT_TIMEOUT};

/// Addresses of the three device services.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceEndpoints {
    pub arm: String,
    pub gripper: String,
    pub camera: String,
}

impl DeviceEndpoints {
    /// Default loopback ports, overridable through `VILAS_ARM_ADDR`,
    /// `VILAS_GRIPPER_ADDR` and `VILAS_CAMERA_ADDR`.
    pub fn from_env() -> Self {
        use crate::transport::ports;
        let get = |var: &str, port: u16| std::env::var(var).unwrap_or_else(|_| format!("127.0.0.1:{port}"));
        Self {
            arm: get("VILAS_ARM_ADDR", ports::ARM),
            gripper: get("VILAS_GRIPPER_ADDR", ports::GRIPPER),
            camera: get("VILAS_CAMERA_ADDR", ports::CAMERA),
        }
    }
}

/// One lazily (re)connected request/reply endpoint. A failed transport drops
/// the connection; the next call reconnects.
#[derive(Debug)]
pub struct Endpoint {
    addr: String,
    conn: Option<Connection>,
    pub timeout: Duration,
    pub connect_timeout: Duration,
}

impl Endpoint {
    pub fn new(addr: impl Into<String>, timeout: Duration) -> Self {
        Self {
            addr: addr.into(),
            conn: None,
            timeout,
            connect_timeout: DEFAULT_CONNECT_TIMEOUT,
        }
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    pub fn call(&mut self, req: Envelope) -> Result<Envelope, TransportError> {
        if self.conn.as_ref().is_none_or(|c| c.is_broken()) {
            self.conn = Some(Connection::connect(&self.addr, self.connect_timeout)?);
        }
        let conn = self.conn.as_mut().expect("connected above");
        let result = conn.request(req, self.timeout);
        if conn.is_broken() {
            self.conn = None;
        }
        result
    }

    /// Privileged full world snapshot (arm service only).
    pub fn world_debug(&mut self) -> Result<WorldState, TransportError> {
        let reply = self.call(Envelope::new(msg::WORLD_DEBUG))?;
        Ok(serde_json::from_value(
            reply
                .get("world")
                .cloned()
                .ok_or_else(|| TransportError::Protocol("world.debug reply without world".into()))?,
        )?)
    }
}

/// Client-side handles for arm, gripper and camera.
#[derive(Debug)]
pub struct DeviceClient {
    pub arm: Endpoint,
    pub gripper: Endpoint,
    pub camera: Endpoint,
}

pub const DEVICE_TIMEOUT: Duration = Duration::from_secs(2);

impl DeviceClient {
    pub fn new(endpoints: &DeviceEndpoints) -> Self {
        Self::with_timeout(endpoints, DEVICE_TIMEOUT)
    }

    pub fn with_timeout(endpoints: &DeviceEndpoints, timeout: Duration) -> Self {
        Self {
            arm: Endpoint::new(&endpoints.arm, timeout),
            gripper: Endpoint::new(&endpoints.gripper, timeout),
            camera: Endpoint::new(&endpoints.camera, timeout),
        }
    }

    pub fn arm_command(&mut self, q: &[f64; 6]) -> Result<[f64; 6], TransportError> {
        let reply = self
            .arm
            .call(Envelope::new(msg::ARM_COMMAND).with("q_target", json!(q)))?;
        let v: Vec<f64> = serde_json::from_value(reply.get("q_target").cloned().unwrap_or_default())?;
        v.try_into()
            .map_err(|_| TransportError::Protocol("arm.ack without a 6-vector".into()))
    }

    pub fn arm_state(&mut self) -> Result<ArmReading, TransportError> {
        self.arm.call(Envelope::new(msg::ARM_STATE))?.parse_body()
    }

    /// Returns the force limit the gripper applied after clamping.
    pub fn grip_command(&mut self, g: f64, force: Option<f64>, speed: Option<f64>) -> Result<f64, TransportError> {
        let req = Envelope::with_body(msg::GRIP_COMMAND, &GripCommand { g, force, speed })?;
        let reply = self.gripper.call(req)?;
        reply
            .get("force")
            .and_then(|v| v.as_f64())
            .ok_or_else(|| TransportError::Protocol("grip.ack without force".into()))
    }

    pub fn grip_state(&mut self) -> Result<GripReading, TransportError> {
        self.gripper.call(Envelope::new(msg::GRIP_STATE))?.parse_body()
    }

    pub fn cam_get(&mut self) -> Result<CameraFrame, TransportError> {
        self.camera.call(Envelope::new(msg::CAM_GET))?.parse_body()
    }

    pub fn state_get(&mut self, prompt: &str) -> Result<Observation, TransportError> {
        self.camera
            .call(Envelope::new(msg::STATE_GET).with("prompt", prompt))?
            .parse_body()
    }

    pub fn reset(&mut self, seed: u64, n_objects: usize) -> Result<(), TransportError> {
        self.arm.call(
            Envelope::new(msg::SYS_RESET)
                .with("seed", seed)
                .with("n_objects", n_objects),
        )?;
        Ok(())
    }

    /// Privileged full world snapshot.
    pub fn world_debug(&mut self) -> Result<WorldState, TransportError> {
        self.arm.world_debug()
    }
}
