use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::ControlFlow;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tracing::{debug, info, warn};

use super::adapter::{PolicyAdapter, Protocol};
use super::chunk::{observation_envelope, ActionChunk};
use super::BrokerError;
use crate::clock::{period_from_rate, Clock, SharedClock, Ticker};
use crate::devices::{DeviceClient, Observation};

pub const CONTROL_RATE_HZ: f64 = 20.0;
pub const INFERENCE_TIMEOUT: Duration = Duration::from_secs(5);
pub const MAX_RETRIES: u32 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct BrokerConfig {
    pub control_rate_hz: f64,
    pub horizon: usize,
    pub protocol: Protocol,
    pub policy_addr: String,
    pub prompt: String,
    pub inference_timeout: Duration,
    /// Extra inference attempts after a timeout or bad chunk.
    pub max_retries: u32,
    pub connect_timeout: Duration,
}

impl BrokerConfig {
    pub fn new(protocol: Protocol, policy_addr: impl Into<String>, horizon: usize) -> Self {
        Self {
            control_rate_hz: CONTROL_RATE_HZ,
            horizon,
            protocol,
            policy_addr: policy_addr.into(),
            prompt: String::new(),
            inference_timeout: INFERENCE_TIMEOUT,
            max_retries: MAX_RETRIES,
            connect_timeout: Duration::from_secs(1),
        }
    }

    pub fn validate(&self) -> Result<(), BrokerError> {
        if !(self.control_rate_hz > 0.0) || !self.control_rate_hz.is_finite() {
            return Err(BrokerError::Config(format!("control rate {} must be positive", self.control_rate_hz)));
        }
        if self.horizon == 0 {
            return Err(BrokerError::Config("horizon must be at least 1".into()));
        }
        Ok(())
    }
}

/// One line of the JSON-lines run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum RunEvent {
    /// An action was dispatched.
    Tick { tick: u64, t_ms: f64, seq: u64, k: usize },
    /// An inference call finished (successfully or not). `t_ms` is the send
    /// time; latency runs from send to parsed chunk.
    Inference {
        seq: u64,
        t_ms: f64,
        latency_ms: f64,
        ok: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    /// No action this tick (observation or device trouble).
    Hold { t_ms: f64, reason: String },
    /// Gripper values pulled back into [0, 1].
    Clamp { seq: u64, count: usize },
}

/// Per-tick information handed to a deploy monitor.
#[derive(Debug, Clone, PartialEq)]
pub struct TickInfo {
    pub tick: u64,
    pub t: Duration,
    pub seq: u64,
    pub k: usize,
    pub action: [f64; 7],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeploySummary {
    pub ticks: u64,
    pub inference_calls: u64,
    pub failed_calls: u64,
    /// Latencies of successful calls, ms.
    pub latencies_ms: Vec<f64>,
    /// Send times of successful calls, ms.
    pub call_times_ms: Vec<f64>,
    pub duration_s: f64,
}

/// Action-chunk deployment loop: one action per control tick from the
/// cached chunk, and a blocking inference call when the chunk runs out.
/// While the call is outstanding no device command is sent, so the arm
/// holds its last target. After the call returns the tick grid restarts at
/// the return time, making call spacing `horizon / rate + latency`.
pub struct DeployLoop {
    config: BrokerConfig,
    devices: DeviceClient,
    adapter: PolicyAdapter,
    clock: SharedClock,
    events: Vec<RunEvent>,
    sink: Option<BufWriter<File>>,
    seq: u64,
    tick: u64,
}

impl std::fmt::Debug for DeployLoop {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DeployLoop")
            .field("config", &self.config)
            .field("seq", &self.seq)
            .field("tick", &self.tick)
            .finish_non_exhaustive()
    }
}

impl DeployLoop {
    pub fn new(config: BrokerConfig, devices: DeviceClient, clock: SharedClock) -> Result<Self, BrokerError> {
        config.validate()?;
        let adapter = PolicyAdapter::connect(config.protocol, &config.policy_addr, config.connect_timeout)
            .map_err(BrokerError::Adapter)?;
        Ok(Self {
            config,
            devices,
            adapter,
            clock,
            events: Vec::new(),
            sink: None,
            seq: 0,
            tick: 0,
        })
    }

    /// Also stream the run log to `path` as JSON lines.
    pub fn log_to(&mut self, path: &Path) -> Result<(), BrokerError> {
        let f = File::create(path).map_err(|e| BrokerError::Io(format!("{}: {e}", path.display())))?;
        self.sink = Some(BufWriter::new(f));
        Ok(())
    }

    pub fn events(&self) -> &[RunEvent] {
        &self.events
    }

    pub fn config(&self) -> &BrokerConfig {
        &self.config
    }

    pub fn devices(&mut self) -> &mut DeviceClient {
        &mut self.devices
    }

    fn log(&mut self, ev: RunEvent) {
        if let Some(sink) = &mut self.sink {
            if serde_json::to_writer(&mut *sink, &ev).is_err() || sink.write_all(b"\n").is_err() {
                warn!("run log write failed; continuing without file log");
                self.sink = None;
            }
        }
        self.events.push(ev);
    }

    pub fn build_observation(&mut self) -> Result<Observation, BrokerError> {
        self.devices
            .state_get(&self.config.prompt)
            .map_err(|e| BrokerError::ObservationUnavailable(e.to_string()))
    }

    /// One inference call. Returns the validated chunk and its latency.
    pub fn policy_call(&mut self, obs: &Observation) -> Result<(ActionChunk, f64), BrokerError> {
        self.seq += 1;
        let seq = self.seq;
        let req = observation_envelope(obs, seq)?;
        let clock = self.clock.clone();
        let t0 = clock.now();
        let result = self.adapter.call(req, self.config.inference_timeout);
        let elapsed = clock.now().saturating_sub(t0);
        let latency_ms = elapsed.as_secs_f64() * 1e3;
        let outcome = match result {
            // A virtual clock can overshoot the deadline without the socket
            // noticing.
            Ok(_) if elapsed > self.config.inference_timeout => Err(BrokerError::InferenceTimeout),
            Ok(reply) => ActionChunk::from_envelope(&reply, self.config.horizon).map(|mut c| {
                c.seq = seq;
                c.issued_at = clock.now_ms();
                c
            }),
            Err(crate::transport::TransportError::Timeout) => Err(BrokerError::InferenceTimeout),
            Err(e) => Err(BrokerError::Adapter(e)),
        };
        self.log(RunEvent::Inference {
            seq,
            t_ms: t0.as_secs_f64() * 1e3,
            latency_ms,
            ok: outcome.is_ok(),
            error: outcome.as_ref().err().map(|e| e.to_string()),
        });
        outcome.map(|c| (c, latency_ms))
    }

    fn refill(&mut self, summary: &mut DeploySummary) -> Result<Option<ActionChunk>, BrokerError> {
        let obs = match self.build_observation() {
            Ok(o) => o,
            Err(e) => {
                let t_ms = self.clock.now_ms();
                self.log(RunEvent::Hold {
                    t_ms,
                    reason: e.to_string(),
                });
                return Ok(None);
            }
        };
        let mut last = None;
        for attempt in 0..=self.config.max_retries {
            summary.inference_calls += 1;
            let t_send = self.clock.now_ms();
            match self.policy_call(&obs) {
                Ok((mut chunk, latency)) => {
                    summary.latencies_ms.push(latency);
                    summary.call_times_ms.push(t_send);
                    let clamped = chunk.clamp_gripper();
                    if clamped > 0 {
                        debug!(seq = chunk.seq, clamped, "gripper actions clamped");
                        self.log(RunEvent::Clamp {
                            seq: chunk.seq,
                            count: clamped,
                        });
                    }
                    return Ok(Some(chunk));
                }
                Err(e) => {
                    summary.failed_calls += 1;
                    warn!(attempt, "inference failed: {e}");
                    if matches!(e, BrokerError::Adapter(_)) {
                        // Give a restarting server a moment.
                        self.clock.sleep(Duration::from_millis(100 << attempt));
                    }
                    last = Some(e);
                }
            }
        }
        Err(BrokerError::PolicyUnavailable {
            attempts: self.config.max_retries + 1,
            last: last.map(|e| e.to_string()).unwrap_or_default(),
        })
    }

    fn dispatch(&mut self, action: &[f64; 7]) -> Result<(), BrokerError> {
        let q: [f64; 6] = action[..6].try_into().expect("6 arm joints");
        self.devices.arm_command(&q)?;
        self.devices.grip_command(action[6].clamp(0.0, 1.0), None, None)?;
        Ok(())
    }

    /// Run for `duration` (or until `monitor` breaks). A policy that stays
    /// unavailable through every retry aborts the run with
    /// [`BrokerError::PolicyUnavailable`].
    pub fn run(
        &mut self,
        duration: Option<Duration>,
        monitor: &mut dyn FnMut(&TickInfo) -> ControlFlow<()>,
    ) -> Result<DeploySummary, BrokerError> {
        let clock = self.clock.clone();
        let period = period_from_rate(self.config.control_rate_hz);
        let start = clock.now();
        let end = duration.map(|d| start + d);
        let mut ticker = Ticker::new(start, period);
        let mut summary = DeploySummary::default();
        let mut chunk: Option<ActionChunk> = None;
        let mut k = self.config.horizon;
        info!(protocol = %self.config.protocol, horizon = self.config.horizon, "deploy loop started");
        loop {
            ticker.wait(clock.as_ref() as &dyn Clock);
            let now = clock.now();
            if end.is_some_and(|e| now >= e) {
                break;
            }
            if k >= self.config.horizon {
                match self.refill(&mut summary)? {
                    Some(c) => {
                        chunk = Some(c);
                        k = 0;
                        ticker.reanchor(clock.now());
                    }
                    None => continue,
                }
                continue;
            }
            let c = chunk.as_ref().expect("chunk cached while k < horizon");
            let action = c.actions[k];
            let seq = c.seq;
            let t = clock.now();
            if let Err(e) = self.dispatch(&action) {
                self.log(RunEvent::Hold {
                    t_ms: t.as_secs_f64() * 1e3,
                    reason: e.to_string(),
                });
            }
            let tick = self.tick;
            self.tick += 1;
            summary.ticks += 1;
            self.log(RunEvent::Tick {
                tick,
                t_ms: t.as_secs_f64() * 1e3,
                seq,
                k,
            });
            k += 1;
            let info = TickInfo { tick, t, seq, k: k - 1, action };
            if monitor(&info).is_break() {
                break;
            }
        }
        summary.duration_s = clock.now().saturating_sub(start).as_secs_f64();
        if let Some(sink) = &mut self.sink {
            let _ = sink.flush();
        }
        Ok(summary)
    }
}

/// Inference latencies (ms) of the successful calls in a run log.
pub fn latencies_from_log(events: &[RunEvent]) -> Vec<f64> {
    events
        .iter()
        .filter_map(|e| match e {
            RunEvent::Inference { ok: true, latency_ms, .. } => Some(*latency_ms),
            _ => None,
        })
        .collect()
}

/// Parse a JSON-lines run log.
pub fn read_run_log(path: &Path) -> Result<Vec<RunEvent>, BrokerError> {
    let text = std::fs::read_to_string(path).map_err(|e| BrokerError::Io(format!("{}: {e}", path.display())))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| BrokerError::Io(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}
