//! Arm, gripper and camera services over the framed transport.

use std::collections::BTreeMap;
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::imaging::{encode_png, resize_bilinear, to_base64};
use super::shared::{SharedWorld, SimDriver};
use crate::clock::period_from_rate;
use crate::simworld::{render, CameraId, TcpPose};
use crate::transport::{serve, shared, Envelope, ErrorReply, Handler, ServerHandle, TransportError};

pub mod msg {
    pub const PING: &str = "ping";
    pub const PONG: &str = "pong";
    pub const ARM_COMMAND: &str = "arm.command";
    pub const ARM_STATE: &str = "arm.state";
    pub const GRIP_COMMAND: &str = "grip.command";
    pub const GRIP_STATE: &str = "grip.state";
    pub const CAM_GET: &str = "cam.get";
    pub const SYS_RESET: &str = "sys.reset";
    pub const WORLD_DEBUG: &str = "world.debug";
    pub const STATE_GET: &str = "state.get";
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmCommand {
    pub q_target: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GripCommand {
    pub g: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub force: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SysReset {
    pub seed: u64,
    #[serde(default)]
    pub n_objects: Option<usize>,
}

/// Both camera images from one capture tick, as base64 PNG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraFrame {
    pub timestamp_ms: f64,
    pub images: BTreeMap<String, String>,
}

fn parse<T: serde::de::DeserializeOwned>(req: &Envelope) -> Result<T, ErrorReply> {
    req.parse_body()
        .map_err(|e: TransportError| ErrorReply::bad_request(format!("{}: {e}", req.t)))
}

fn body(t: &str, value: serde_json::Value) -> Envelope {
    match value {
        serde_json::Value::Object(map) => Envelope {
            t: t.to_owned(),
            id: None,
            body: map,
        },
        _ => Envelope::new(t),
    }
}

/// `arm.command`, `arm.state`, plus `sys.reset` and the privileged
/// `world.debug` snapshot.
pub struct ArmService {
    world: Arc<SharedWorld>,
}

impl ArmService {
    pub fn new(world: Arc<SharedWorld>) -> Arc<Self> {
        Arc::new(Self { world })
    }
}

impl Handler for ArmService {
    fn handle(&self, req: &Envelope) -> Result<Envelope, ErrorReply> {
        match req.t.as_str() {
            msg::PING => Ok(Envelope::new(msg::PONG)),
            msg::ARM_COMMAND => {
                let cmd: ArmCommand = parse(req)?;
                let q: [f64; 6] = cmd.q_target.as_slice().try_into().map_err(|_| {
                    ErrorReply::new(
                        "bad-arity",
                        format!("q_target needs 6 entries, got {}", cmd.q_target.len()),
                    )
                })?;
                let clamped = self
                    .world
                    .command_arm(&q)
                    .map_err(|e| ErrorReply::new("non-finite", e.to_string()))?;
                Ok(body("arm.ack", json!({ "q_target": clamped })))
            }
            msg::ARM_STATE => Ok(Envelope::with_body(msg::ARM_STATE, &self.world.arm_reading())?),
            msg::SYS_RESET => {
                let r: SysReset = parse(req)?;
                let n = r.n_objects.unwrap_or(self.world.config().objects.count);
                self.world
                    .reset(r.seed, n)
                    .map_err(|e| ErrorReply::new("reset-failed", e.to_string()))?;
                Ok(body("sys.ack", json!({ "seed": r.seed, "n_objects": n })))
            }
            msg::WORLD_DEBUG => Ok(body(msg::WORLD_DEBUG, json!({ "world": self.world.snapshot() }))),
            other => Err(ErrorReply::unknown_type(other)),
        }
    }
}

/// `grip.command` and `grip.state`.
pub struct GripperService {
    world: Arc<SharedWorld>,
}

impl GripperService {
    pub fn new(world: Arc<SharedWorld>) -> Arc<Self> {
        Arc::new(Self { world })
    }
}

impl Handler for GripperService {
    fn handle(&self, req: &Envelope) -> Result<Envelope, ErrorReply> {
        match req.t.as_str() {
            msg::PING => Ok(Envelope::new(msg::PONG)),
            msg::GRIP_COMMAND => {
                let cmd: GripCommand = parse(req)?;
                let force = self
                    .world
                    .command_gripper(cmd.g, cmd.force, cmd.speed)
                    .map_err(|e| ErrorReply::new("bad-range", e.to_string()))?;
                let clamped = cmd.force.is_some_and(|f| f != force);
                Ok(body(
                    "grip.ack",
                    json!({ "g": cmd.g, "force": force, "force_clamped": clamped }),
                ))
            }
            msg::GRIP_STATE => Ok(Envelope::with_body(msg::GRIP_STATE, &self.world.grip_reading())?),
            other => Err(ErrorReply::unknown_type(other)),
        }
    }
}

/// Unified observation served by `state.get`: follower joints and gripper,
/// tool pose, both camera images from one capture tick, the prompt echoed
/// from the request and the all-zero compatibility pad.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Observation {
    pub joints: [f64; 7],
    pub tcp: TcpPose,
    pub images: BTreeMap<String, String>,
    pub prompt: String,
    pub pad: [f64; 7],
    /// Capture timestamp of the images, clock milliseconds.
    pub timestamp: f64,
}

#[derive(Debug, Default, Deserialize)]
struct StateGet {
    #[serde(default)]
    prompt: String,
}

/// `cam.get` and `state.get`: both cameras rendered at most once per 30 Hz tick, resized to
/// the output size and PNG encoded. Calls within one tick share bytes and
/// timestamp.
pub struct CameraService {
    world: Arc<SharedWorld>,
    cache: Mutex<Option<(u64, Arc<CameraFrame>)>>,
}

#[derive(Debug, Default, Deserialize)]
struct CamGet {
    #[serde(default)]
    cameras: Option<Vec<String>>,
}

impl CameraService {
    pub fn new(world: Arc<SharedWorld>) -> Arc<Self> {
        Arc::new(Self {
            world,
            cache: Mutex::new(None),
        })
    }

    /// Frame for the current capture tick, rendering it if needed.
    pub fn capture(&self) -> Result<Arc<CameraFrame>, ErrorReply> {
        let period = period_from_rate(self.world.config().camera.rate_hz);
        let now = self.world.clock().now();
        let tick = (now.as_nanos() / period.as_nanos()) as u64;
        let mut cache = self.cache.lock();
        if let Some((t, frame)) = cache.as_ref() {
            if *t == tick {
                return Ok(frame.clone());
            }
        }
        let cfg = self.world.config();
        let state = self.world.snapshot();
        let size = cfg.camera.output_size;
        let mut images = BTreeMap::new();
        for cam in [CameraId::Base, CameraId::Wrist] {
            let native = render(cfg, &state, cam);
            let small = resize_bilinear(&native, size, size);
            let png = encode_png(&small).map_err(|e| ErrorReply::new("render-failed", e.to_string()))?;
            images.insert(cam.name().to_owned(), to_base64(&png));
        }
        let frame = Arc::new(CameraFrame {
            timestamp_ms: std::time::Duration::from_nanos((u128::from(tick) * period.as_nanos()) as u64).as_secs_f64() * 1e3,
            images,
        });
        *cache = Some((tick, frame.clone()));
        Ok(frame)
    }
}

impl Handler for CameraService {
    fn handle(&self, req: &Envelope) -> Result<Envelope, ErrorReply> {
        match req.t.as_str() {
            msg::PING => Ok(Envelope::new(msg::PONG)),
            msg::CAM_GET => {
                let q: CamGet = parse(req)?;
                let frame = self.capture()?;
                let mut out = (*frame).clone();
                if let Some(names) = q.cameras {
                    let mut picked = BTreeMap::new();
                    for n in names {
                        let cam = CameraId::parse(&n)
                            .ok_or_else(|| ErrorReply::new("unknown-camera", format!("no camera named {n:?}")))?;
                        picked.insert(n, frame.images[cam.name()].clone());
                    }
                    out.images = picked;
                }
                Ok(Envelope::with_body(msg::CAM_GET, &out)?)
            }
            msg::STATE_GET => {
                let q: StateGet = parse(req)?;
                let frame = self.capture()?;
                let arm = self.world.arm_reading();
                let grip = self.world.grip_reading();
                let mut joints = [0.0; 7];
                joints[..6].copy_from_slice(&arm.q);
                joints[6] = grip.g;
                let obs = Observation {
                    joints,
                    tcp: arm.tcp,
                    images: frame.images.clone(),
                    prompt: q.prompt,
                    pad: [0.0; 7],
                    timestamp: frame.timestamp_ms,
                };
                Ok(Envelope::with_body(msg::STATE_GET, &obs)?)
            }
            other => Err(ErrorReply::unknown_type(other)),
        }
    }
}

/// Bind addresses for the three device services.
#[derive(Debug, Clone)]
pub struct DeviceAddrs {
    pub arm: String,
    pub gripper: String,
    pub camera: String,
}

impl DeviceAddrs {
    /// Ephemeral loopback ports.
    pub fn ephemeral() -> Self {
        Self {
            arm: "127.0.0.1:0".into(),
            gripper: "127.0.0.1:0".into(),
            camera: "127.0.0.1:0".into(),
        }
    }
}

/// Arm, gripper and camera services running over one shared world.
pub struct DeviceStack {
    pub world: Arc<SharedWorld>,
    pub arm: ServerHandle,
    pub gripper: ServerHandle,
    pub camera: ServerHandle,
    _driver: SimDriver,
}

impl std::fmt::Debug for DeviceStack {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DeviceStack")
            .field("arm", &self.arm.local_addr())
            .field("gripper", &self.gripper.local_addr())
            .field("camera", &self.camera.local_addr())
            .finish()
    }
}

impl DeviceStack {
    pub fn launch(world: Arc<SharedWorld>, addrs: &DeviceAddrs) -> Result<Self, TransportError> {
        let driver = world.start_driver();
        let arm = serve(&addrs.arm, "arm", shared(ArmService::new(world.clone())))?;
        let gripper = serve(&addrs.gripper, "gripper", shared(GripperService::new(world.clone())))?;
        let camera = serve(&addrs.camera, "camera", shared(CameraService::new(world.clone())))?;
        Ok(Self {
            world,
            arm,
            gripper,
            camera,
            _driver: driver,
        })
    }

    pub fn endpoints(&self) -> super::client::DeviceEndpoints {
        super::client::DeviceEndpoints {
            arm: self.arm.addr_string(),
            gripper: self.gripper.addr_string(),
            camera: self.camera.addr_string(),
        }
    }
}
