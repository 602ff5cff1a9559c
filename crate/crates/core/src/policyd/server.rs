use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use tracing::{debug, info};

use super::latency::{LatencyProfile, LatencySampler};
use super::oracle::{OracleConfig, OraclePlanner};
use super::policies::{check_horizon, instantiate, Policy, PolicyKind};
use super::PolicyError;
use crate::broker::chunk::{msg as chunk_msg, ActionChunk};
use crate::broker::{Protocol, CONTROL_RATE_HZ};
use crate::clock::SharedClock;
use crate::devices::{msg, Observation};
use crate::simworld::SimConfig;
use crate::transport::{ports, serve, serve_ws, Envelope, ErrorReply, ServerHandle, Service, Session, TransportError};

#[derive(Debug, Clone)]
pub struct PolicyServerConfig {
    pub kind: PolicyKind,
    pub horizon: usize,
    pub latency: LatencyProfile,
    /// Seeds the random policy. Session `k` of a listener (counting from 0)
    /// uses `seed + k`; the latency stream is offset the same way.
    pub seed: u64,
    /// Rate the replay policy resamples to.
    pub control_rate_hz: f64,
    /// Arm service that answers `world.debug` (oracle only).
    pub world_addr: Option<String>,
    pub sim: SimConfig,
    pub oracle: OracleConfig,
    pub ws_bind: Option<String>,
    pub mq_bind: Option<String>,
}

impl PolicyServerConfig {
    /// Both protocols on their default ports.
    pub fn new(kind: PolicyKind, horizon: usize) -> Self {
        Self {
            kind,
            horizon,
            latency: LatencyProfile::zero(),
            seed: 0,
            control_rate_hz: CONTROL_RATE_HZ,
            world_addr: None,
            sim: SimConfig::default(),
            oracle: OracleConfig::default(),
            ws_bind: Some(format!("127.0.0.1:{}", ports::POLICY_WS)),
            mq_bind: Some(format!("127.0.0.1:{}", ports::POLICY_MQ)),
        }
    }

    /// Both protocols on OS-assigned loopback ports.
    pub fn ephemeral(mut self) -> Self {
        self.ws_bind = Some("127.0.0.1:0".into());
        self.mq_bind = Some("127.0.0.1:0".into());
        self
    }

    pub fn only(mut self, protocol: Protocol) -> Self {
        match protocol {
            Protocol::Ws => self.mq_bind = None,
            Protocol::Mq => self.ws_bind = None,
        }
        self
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        check_horizon(self.horizon)?;
        self.latency.validate()?;
        if self.kind == PolicyKind::Oracle && self.world_addr.is_none() {
            return Err(PolicyError::Config("oracle needs a world endpoint".into()));
        }
        if self.ws_bind.is_none() && self.mq_bind.is_none() {
            return Err(PolicyError::Config("no protocol enabled".into()));
        }
        Ok(())
    }
}

struct PolicyService {
    config: PolicyServerConfig,
    oracle: Option<OraclePlanner>,
    clock: SharedClock,
    injected: Arc<Mutex<Vec<f64>>>,
    sessions: AtomicU64,
}

impl PolicyService {
    fn new_policy(&self, k: u64) -> Result<Box<dyn Policy>, PolicyError> {
        instantiate(
            &self.config.kind,
            self.config.seed.wrapping_add(k),
            self.config.control_rate_hz,
            self.oracle.as_ref(),
        )
    }
}

impl Service for PolicyService {
    fn open_session(&self) -> Box<dyn Session> {
        let k = self.sessions.fetch_add(1, Ordering::SeqCst);
        let latency = LatencyProfile {
            seed: self.config.latency.seed.wrapping_add(k),
            ..self.config.latency
        };
        Box::new(PolicySession {
            policy: self.new_policy(k).map_err(|e| e.to_string()),
            horizon: self.config.horizon,
            sampler: latency.sampler(),
            clock: self.clock.clone(),
            injected: self.injected.clone(),
        })
    }
}

/// Per-connection policy state: policy instance, latency stream. Replies
/// leave in request order because a session handles one request at a time.
struct PolicySession {
    policy: Result<Box<dyn Policy>, String>,
    horizon: usize,
    sampler: LatencySampler,
    clock: SharedClock,
    injected: Arc<Mutex<Vec<f64>>>,
}

impl Session for PolicySession {
    fn handle(&mut self, req: &Envelope) -> Result<Envelope, ErrorReply> {
        match req.t.as_str() {
            msg::PING => Ok(Envelope::new(msg::PONG)),
            chunk_msg::INFER => {
                let obs: Observation = req
                    .parse_body()
                    .map_err(|e| ErrorReply::new("bad-observation", e.to_string()))?;
                if obs.joints.iter().any(|v| !v.is_finite()) {
                    return Err(ErrorReply::new("bad-observation", "joints must be finite"));
                }
                let policy = self
                    .policy
                    .as_mut()
                    .map_err(|e| ErrorReply::new("policy-failed", e.clone()))?;
                let rows = policy
                    .infer(&obs, self.horizon)
                    .map_err(|e| ErrorReply::new("policy-failed", e.to_string()))?;
                debug_assert_eq!(rows.len(), self.horizon);
                let delay = self.sampler.next_ms();
                self.injected.lock().push(delay);
                self.clock.sleep(Duration::from_secs_f64(delay / 1e3));
                Ok(ActionChunk::new(rows).to_envelope(None))
            }
            other => Err(ErrorReply::unknown_type(other)),
        }
    }
}

/// Running policy server (one listener per enabled protocol).
#[derive(Debug)]
pub struct PolicyServer {
    ws: Option<ServerHandle>,
    mq: Option<ServerHandle>,
    injected: Arc<Mutex<Vec<f64>>>,
}

impl PolicyServer {
    pub fn launch(config: PolicyServerConfig, clock: SharedClock) -> Result<Self, PolicyError> {
        config.validate()?;
        let oracle = (config.kind == PolicyKind::Oracle).then(|| {
            let p = OraclePlanner::new(config.sim.clone(), config.oracle.clone());
            match &config.world_addr {
                Some(a) => p.with_world(a.clone()),
                None => p,
            }
        });
        let injected = Arc::new(Mutex::new(Vec::new()));
        // One service per listener so session numbering is per protocol.
        let service = || {
            Arc::new(PolicyService {
                config: config.clone(),
                oracle: oracle.clone(),
                clock: clock.clone(),
                injected: injected.clone(),
                sessions: AtomicU64::new(0),
            })
        };
        // Surface configuration problems (missing episode...) at launch.
        service().new_policy(0)?;
        let ws = config
            .ws_bind
            .as_deref()
            .map(|b| serve_ws(b, "policy-ws", service()))
            .transpose()?;
        let mq = config
            .mq_bind
            .as_deref()
            .map(|b| serve(b, "policy-mq", service()))
            .transpose()?;
        info!(
            kind = %config.kind,
            horizon = config.horizon,
            ws = ?ws.as_ref().map(ServerHandle::local_addr),
            mq = ?mq.as_ref().map(ServerHandle::local_addr),
            "policy server up"
        );
        Ok(Self { ws, mq, injected })
    }

    pub fn addr(&self, protocol: Protocol) -> Option<String> {
        match protocol {
            Protocol::Ws => self.ws.as_ref().map(ServerHandle::addr_string),
            Protocol::Mq => self.mq.as_ref().map(ServerHandle::addr_string),
        }
    }

    /// Every delay injected so far, ms, in service order.
    pub fn injected_ms(&self) -> Vec<f64> {
        self.injected.lock().clone()
    }

    pub fn shutdown(&mut self) {
        for h in [self.ws.as_mut(), self.mq.as_mut()].into_iter().flatten() {
            h.shutdown();
        }
        debug!("policy server stopped");
    }
}

impl From<TransportError> for PolicyError {
    fn from(e: TransportError) -> Self {
        PolicyError::Transport(e)
    }
}
