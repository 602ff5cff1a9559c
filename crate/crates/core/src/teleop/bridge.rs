//! WebSocket bridge between a browser console and the teleop loop.
//!
//! One client at a time is the controller: its `lead.set` / `lead.grip`
//! messages update a held leader vector that the teleop loop samples, and
//! `rec.start` / `rec.stop` drive the recorder. Further clients are told
//! `busy` and stay connected as read-only observers. Every client receives
//! `view.state` at 10 Hz and `view.frame` at 5 Hz. Any controller message,
//! including `ping`, counts as a heartbeat for stall detection.
//!
//! Message bodies are documented in `schema/bridge.schema.json`.

use std::net::TcpStream;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::Sender;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tracing::{debug, info};
use tungstenite::handshake::server::{Request, Response};
use tungstenite::{Message, WebSocket};

use crate::cell::Latest;
use crate::clock::SharedClock;
use crate::devices::{DeviceClient, DeviceEndpoints};
use crate::simworld::ObjectStatus;
use crate::transport::{Envelope, ErrorReply, ServerHandle, TransportError};

pub mod msg {
    pub const LEAD_SET: &str = "lead.set";
    pub const LEAD_GRIP: &str = "lead.grip";
    pub const REC_START: &str = "rec.start";
    pub const REC_STOP: &str = "rec.stop";
    pub const VIEW_STATE: &str = "view.state";
    pub const VIEW_FRAME: &str = "view.frame";
    pub const HELLO: &str = "bridge.hello";
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RecControl {
    Start { prompt: String },
    Stop,
}

/// Recorder status mirrored into `view.state`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecorderStatus {
    pub recording: bool,
    pub frames: u64,
    pub episode_id: Option<String>,
    pub prompt: Option<String>,
    pub last_episode: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
struct ObjectView {
    id: u32,
    status: ObjectStatus,
    center: [f64; 3],
}

/// State shared by all bridge connections.
pub struct BridgeHub {
    clock: SharedClock,
    devices: DeviceEndpoints,
    leader: Arc<Latest<[f64; 7]>>,
    held: Mutex<[f64; 7]>,
    controller: Mutex<Option<u64>>,
    recorder: Mutex<Option<Sender<RecControl>>>,
    rec_status: Mutex<Arc<Latest<RecorderStatus>>>,
    stalled: Mutex<Option<Arc<AtomicBool>>>,
    next_conn: AtomicU64,
    pub state_period: Duration,
    pub frame_period: Duration,
}

impl std::fmt::Debug for BridgeHub {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BridgeHub")
            .field("controller", &*self.controller.lock())
            .finish_non_exhaustive()
    }
}

impl BridgeHub {
    /// `initial` seeds the held leader vector (usually the follower pose) so
    /// a lone `lead.grip` does not snap the arm to zero.
    pub fn new(clock: SharedClock, devices: DeviceEndpoints, initial: [f64; 7]) -> Arc<Self> {
        Arc::new(Self {
            clock,
            devices,
            leader: Latest::shared(),
            held: Mutex::new(initial),
            controller: Mutex::new(None),
            recorder: Mutex::new(None),
            rec_status: Mutex::new(Latest::shared()),
            stalled: Mutex::new(None),
            next_conn: AtomicU64::new(1),
            state_period: Duration::from_millis(100),
            frame_period: Duration::from_millis(200),
        })
    }

    /// The cell the teleop loop reads (wrap it in a `CellSource`).
    pub fn leader_cell(&self) -> Arc<Latest<[f64; 7]>> {
        self.leader.clone()
    }

    /// Route `rec.start` / `rec.stop` to a recorder and mirror its status
    /// cell into `view.state`.
    pub fn attach_recorder(&self, tx: Sender<RecControl>, status: &Arc<Latest<RecorderStatus>>) {
        *self.recorder.lock() = Some(tx);
        *self.rec_status.lock() = status.clone();
    }

    pub fn recorder_status_cell(&self) -> Arc<Latest<RecorderStatus>> {
        self.rec_status.lock().clone()
    }

    pub fn attach_stall_flag(&self, flag: Arc<AtomicBool>) {
        *self.stalled.lock() = Some(flag);
    }

    pub fn has_controller(&self) -> bool {
        self.controller.lock().is_some()
    }

    fn now_ms(&self) -> f64 {
        self.clock.now_ms()
    }

    fn heartbeat(&self) {
        let held = *self.held.lock();
        self.leader.publish(held, self.now_ms());
    }

    fn handle(&self, is_controller: bool, req: &Envelope) -> Result<Option<Envelope>, ErrorReply> {
        let ack = |t: &str| Envelope::new(format!("{t}.ack"));
        let controller_only = || {
            if is_controller {
                Ok(())
            } else {
                Err(ErrorReply::new("busy", "another client is the controller; this session is read-only"))
            }
        };
        match req.t.as_str() {
            "ping" => {
                if is_controller {
                    self.heartbeat();
                }
                Ok(Some(Envelope::new("pong")))
            }
            msg::LEAD_SET => {
                controller_only()?;
                #[derive(Deserialize)]
                struct LeadSet {
                    q: Vec<f64>,
                }
                let body: LeadSet = req
                    .parse_body()
                    .map_err(|e| ErrorReply::bad_request(format!("lead.set: {e}")))?;
                if body.q.len() != 6 {
                    return Err(ErrorReply::new(
                        "bad-arity",
                        format!("lead.set needs 6 joints, got {}", body.q.len()),
                    ));
                }
                if body.q.iter().any(|v| !v.is_finite()) {
                    return Err(ErrorReply::new("non-finite", "lead.set joint values must be finite"));
                }
                self.held.lock()[..6].copy_from_slice(&body.q);
                self.heartbeat();
                Ok(req.id.map(|_| ack(msg::LEAD_SET)))
            }
            msg::LEAD_GRIP => {
                controller_only()?;
                let g = req
                    .get("g")
                    .and_then(|v| v.as_f64())
                    .ok_or_else(|| ErrorReply::bad_request("lead.grip needs a numeric g"))?;
                if !(0.0..=1.0).contains(&g) {
                    return Err(ErrorReply::new("bad-range", format!("g = {g} outside [0, 1]")));
                }
                self.held.lock()[6] = g;
                self.heartbeat();
                Ok(req.id.map(|_| ack(msg::LEAD_GRIP)))
            }
            msg::REC_START | msg::REC_STOP => {
                controller_only()?;
                let ctl = if req.t == msg::REC_START {
                    let prompt = req.get("prompt").and_then(|v| v.as_str()).unwrap_or("").to_owned();
                    RecControl::Start { prompt }
                } else {
                    RecControl::Stop
                };
                let sent = self.recorder.lock().as_ref().map(|tx| tx.send(ctl).is_ok());
                match sent {
                    Some(true) => Ok(Some(ack(&req.t))),
                    _ => Err(ErrorReply::new("no-recorder", "this bridge has no recorder attached")),
                }
            }
            other => Err(ErrorReply::unknown_type(other)),
        }
    }

    fn view_state(&self, devices: &mut DeviceClient, is_controller: bool) -> Envelope {
        let mut env = Envelope::new(msg::VIEW_STATE)
            .with("t_ms", self.now_ms())
            .with("controller", is_controller)
            .with(
                "stalled",
                self.stalled.lock().as_ref().is_some_and(|f| f.load(Ordering::SeqCst)),
            )
            .with("leader", json!(*self.held.lock()))
            .with(
                "recorder",
                json!(self.rec_status.lock().get().map(|s| s.value).unwrap_or_default()),
            );
        match devices.world_debug() {
            Ok(w) => {
                let objects: Vec<ObjectView> = w
                    .objects
                    .iter()
                    .map(|o| ObjectView {
                        id: o.id,
                        status: o.status,
                        center: o.center,
                    })
                    .collect();
                env = env
                    .with("joints", json!(w.joints.to_array()))
                    .with("tcp", json!(w.tcp))
                    .with("objects", json!(objects))
                    .with("deposits", w.deposits);
            }
            Err(e) => env = env.with("device_error", e.to_string()),
        }
        env
    }

    fn view_frame(&self, devices: &mut DeviceClient) -> Option<Envelope> {
        let frame = devices.cam_get().ok()?;
        Some(
            Envelope::new(msg::VIEW_FRAME)
                .with("timestamp_ms", frame.timestamp_ms)
                .with("images", json!(frame.images)),
        )
    }
}

/// Serve the bridge on `bind` (the console expects port 5604).
pub fn serve_bridge(bind: &str, hub: Arc<BridgeHub>) -> Result<ServerHandle, TransportError> {
    ServerHandle::spawn_with(bind, "bridge", move |stream, stop| {
        if let Err(e) = serve_client(stream, &hub, &stop) {
            debug!("bridge client closed: {e}");
        }
    })
}

fn send(ws: &mut WebSocket<TcpStream>, env: &Envelope) -> Result<(), TransportError> {
    let text = String::from_utf8(env.to_payload()?).expect("JSON is UTF-8");
    ws.send(Message::Text(text)).map_err(|e| TransportError::WebSocket(e.to_string()))
}

fn serve_client(stream: TcpStream, hub: &BridgeHub, stop: &AtomicBool) -> Result<(), TransportError> {
    stream
        .set_read_timeout(Some(Duration::from_secs(1)))
        .map_err(TransportError::Io)?;
    let mut wants_observer = false;
    // the handshake callback's error type is tungstenite's, not ours
    #[allow(clippy::result_large_err)]
    let mut ws = tungstenite::accept_hdr(stream, |req: &Request, resp: Response| {
        wants_observer = req.uri().query().is_some_and(|q| q.contains("role=observer"));
        Ok(resp)
    })
    .map_err(|e| TransportError::WebSocket(e.to_string()))?;
    ws.get_mut()
        .set_read_timeout(Some(Duration::from_millis(10)))
        .map_err(TransportError::Io)?;

    let conn = hub.next_conn.fetch_add(1, Ordering::SeqCst);
    let is_controller = !wants_observer && {
        let mut c = hub.controller.lock();
        if c.is_none() {
            *c = Some(conn);
            true
        } else {
            false
        }
    };
    info!(conn, is_controller, "bridge client connected");
    let result = client_loop(&mut ws, hub, stop, is_controller);
    if is_controller {
        let mut c = hub.controller.lock();
        if *c == Some(conn) {
            *c = None;
        }
    }
    let _ = ws.close(None);
    result
}

fn client_loop(
    ws: &mut WebSocket<TcpStream>,
    hub: &BridgeHub,
    stop: &AtomicBool,
    is_controller: bool,
) -> Result<(), TransportError> {
    let role = if is_controller { "controller" } else { "observer" };
    send(ws, &Envelope::new(msg::HELLO).with("role", role))?;
    if !is_controller {
        send(
            ws,
            &ErrorReply::new("busy", "another client is the controller; this session is read-only").to_envelope(),
        )
        .ok();
    }
    let mut devices = DeviceClient::with_timeout(&hub.devices, Duration::from_millis(500));
    let mut next_state = hub.clock.now();
    let mut next_frame = hub.clock.now();
    while !stop.load(Ordering::SeqCst) {
        match ws.read() {
            Ok(Message::Text(text)) => reply_to(ws, hub, is_controller, text.as_bytes())?,
            Ok(Message::Binary(bytes)) => reply_to(ws, hub, is_controller, &bytes)?,
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
            Err(tungstenite::Error::ConnectionClosed) | Err(tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(TransportError::WebSocket(e.to_string())),
        }
        let now = hub.clock.now();
        if now >= next_state {
            send(ws, &hub.view_state(&mut devices, is_controller))?;
            next_state = now + hub.state_period;
        }
        if now >= next_frame {
            if let Some(f) = hub.view_frame(&mut devices) {
                send(ws, &f)?;
            }
            next_frame = now + hub.frame_period;
        }
    }
    Ok(())
}

fn reply_to(ws: &mut WebSocket<TcpStream>, hub: &BridgeHub, is_controller: bool, payload: &[u8]) -> Result<(), TransportError> {
    let reply = match Envelope::from_payload(payload) {
        Ok(req) => match hub.handle(is_controller, &req) {
            Ok(Some(mut r)) => {
                r.id = req.id;
                Some(r)
            }
            Ok(None) => None,
            Err(e) => {
                let mut r = e.to_envelope();
                r.id = req.id;
                Some(r)
            }
        },
        Err(e) => Some(ErrorReply::bad_request(e.to_string()).to_envelope()),
    };
    match reply {
        Some(r) => send(ws, &r),
        None => Ok(()),
    }
}
