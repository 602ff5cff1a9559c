use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{Receiver, TryRecvError};
use std::sync::Arc;
use std::time::Duration;

use tracing::{info, warn};

use super::episode::{EpisodeMeta, EpisodeWriter, FrameRecord, Truncation};
use super::RecorderError;
use crate::cell::Latest;
use crate::clock::{period_from_rate, SharedClock};
use crate::devices::imaging::from_base64;
use crate::devices::DeviceClient;
use crate::sched::Periodic;
use crate::teleop::{ActionTap, RecControl, RecorderStatus};
use crate::transport::TransportError;

pub const RECORD_RATE_HZ: f64 = 30.0;
pub const DEFAULT_MAX_FRAMES: u64 = 1200;

#[derive(Debug, Clone)]
pub struct RecorderConfig {
    pub out_dir: PathBuf,
    pub rate_hz: f64,
    pub max_frames: u64,
    pub prompt: String,
    /// Start recording on the first tick instead of waiting for `rec.start`.
    pub auto_start: bool,
    /// End the whole session after the first episode is finalized.
    pub single_episode: bool,
    pub episode_id: Option<String>,
    pub seed: Option<u64>,
    pub config_snapshot: serde_json::Value,
}

impl RecorderConfig {
    pub fn new(out_dir: impl Into<PathBuf>, prompt: impl Into<String>) -> Self {
        Self {
            out_dir: out_dir.into(),
            rate_hz: RECORD_RATE_HZ,
            max_frames: DEFAULT_MAX_FRAMES,
            prompt: prompt.into(),
            auto_start: true,
            single_episode: true,
            episode_id: None,
            seed: None,
            config_snapshot: serde_json::Value::Null,
        }
    }
}

/// How an episode ended.
#[derive(Debug, Clone, PartialEq)]
pub enum EpisodeOutcome {
    Complete { path: PathBuf, frames: u64 },
    Truncated { path: PathBuf, frames: u64, reason: String },
    /// Write failure; the partial directory was removed.
    Aborted { reason: String },
}

impl EpisodeOutcome {
    pub fn is_complete(&self) -> bool {
        matches!(self, EpisodeOutcome::Complete { .. })
    }

    pub fn path(&self) -> Option<&Path> {
        match self {
            EpisodeOutcome::Complete { path, .. } | EpisodeOutcome::Truncated { path, .. } => Some(path),
            EpisodeOutcome::Aborted { .. } => None,
        }
    }
}

struct Active {
    writer: EpisodeWriter,
    prompt: String,
}

/// Samples cameras, follower state and the teleop action tap at the record
/// rate and writes episodes. Each frame pairs the current follower state
/// with the newest camera capture and the newest command (sample-and-hold).
pub struct RecorderTask {
    config: RecorderConfig,
    devices: DeviceClient,
    tap: ActionTap,
    clock: SharedClock,
    control: Option<Receiver<RecControl>>,
    status: Arc<Latest<RecorderStatus>>,
    active: Option<Active>,
    outcomes: Vec<EpisodeOutcome>,
    episodes_started: u64,
    fail_at: Option<u64>,
    started: bool,
}

impl std::fmt::Debug for RecorderTask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RecorderTask")
            .field("recording", &self.active.is_some())
            .field("outcomes", &self.outcomes)
            .finish_non_exhaustive()
    }
}

impl RecorderTask {
    pub fn new(config: RecorderConfig, devices: DeviceClient, tap: ActionTap, clock: SharedClock) -> Self {
        Self {
            config,
            devices,
            tap,
            clock,
            control: None,
            status: Latest::shared(),
            active: None,
            outcomes: Vec::new(),
            episodes_started: 0,
            fail_at: None,
            started: false,
        }
    }

    /// Accept `rec.start` / `rec.stop` from the bridge.
    pub fn with_control(mut self, rx: Receiver<RecControl>) -> Self {
        self.control = Some(rx);
        self
    }

    pub fn status_cell(&self) -> Arc<Latest<RecorderStatus>> {
        self.status.clone()
    }

    pub fn outcomes(&self) -> &[EpisodeOutcome] {
        &self.outcomes
    }

    /// Fail the write of frame `index` in the next episode (tests).
    pub fn inject_write_failure(&mut self, index: u64) {
        self.fail_at = Some(index);
    }

    fn publish_status(&self) {
        let last = self.outcomes.last().and_then(|o| o.path()).map(|p| p.display().to_string());
        let error = match self.outcomes.last() {
            Some(EpisodeOutcome::Truncated { reason, .. }) | Some(EpisodeOutcome::Aborted { reason }) => {
                Some(reason.clone())
            }
            _ => None,
        };
        let status = RecorderStatus {
            recording: self.active.is_some(),
            frames: self.active.as_ref().map_or(0, |a| a.writer.frame_count()),
            episode_id: self.active.as_ref().map(|a| a.writer.id().to_owned()),
            prompt: self.active.as_ref().map(|a| a.prompt.clone()),
            last_episode: last,
            error,
        };
        self.status.publish(status, self.clock.now_ms());
    }

    fn begin(&mut self, prompt: String) -> Result<(), RecorderError> {
        self.episodes_started += 1;
        let id = match &self.config.episode_id {
            Some(id) if self.episodes_started == 1 => id.clone(),
            Some(id) => format!("{id}-{}", self.episodes_started),
            None => format!(
                "ep-{}-{:03}",
                chrono::Utc::now().format("%Y%m%dT%H%M%S"),
                self.episodes_started
            ),
        };
        std::fs::create_dir_all(&self.config.out_dir).map_err(|e| RecorderError::Io {
            path: self.config.out_dir.clone(),
            source: e,
        })?;
        let mut writer = EpisodeWriter::create(&self.config.out_dir, &id)?;
        if let Some(i) = self.fail_at.take() {
            writer.inject_write_failure(i);
        }
        info!(episode = %id, %prompt, "recording started");
        self.active = Some(Active { writer, prompt });
        Ok(())
    }

    fn end(&mut self, truncation: Option<String>) {
        let Some(active) = self.active.take() else { return };
        let frames = active.writer.frame_count();
        let mut meta = EpisodeMeta::new(active.writer.id(), active.prompt, self.config.rate_hz);
        meta.seed = self.config.seed;
        meta.config = self.config.config_snapshot.clone();
        if let Some(reason) = &truncation {
            meta.truncated = true;
            meta.truncation = Some(Truncation {
                reason: reason.clone(),
                at_frame: frames,
            });
        }
        let outcome = match (active.writer.finish(meta), truncation) {
            (Ok(path), None) => EpisodeOutcome::Complete { path, frames },
            (Ok(path), Some(reason)) => EpisodeOutcome::Truncated { path, frames, reason },
            (Err(e), _) => EpisodeOutcome::Aborted { reason: e.to_string() },
        };
        info!(?outcome, "recording finished");
        self.outcomes.push(outcome);
    }

    fn capture(&mut self, now: Duration) -> Result<(), CaptureError> {
        let active = self.active.as_mut().expect("recording");
        let index = active.writer.frame_count();
        let frame = self.devices.cam_get().map_err(CaptureError::Device)?;
        let arm = self.devices.arm_state().map_err(CaptureError::Device)?;
        let grip = self.devices.grip_state().map_err(CaptureError::Device)?;
        let mut state = [0.0; 7];
        state[..6].copy_from_slice(&arm.q);
        state[6] = grip.g;
        // Before the first command the follower state is the best estimate
        // of what is being commanded.
        let action = self.tap.get().map_or(state, |s| s.value);
        let png = |name: &str| {
            frame
                .images
                .get(name)
                .ok_or_else(|| CaptureError::Device(TransportError::Protocol(format!("cam.get without {name} image"))))
                .and_then(|b64| from_base64(b64).map_err(|e| CaptureError::Device(TransportError::Protocol(e.to_string()))))
        };
        let base = png("base")?;
        let wrist = png("wrist")?;
        // Stamped once every reading is in, so no input postdates its frame
        // (on a virtual clock this is the tick time itself).
        let t = now.max(self.clock.now());
        let record = FrameRecord {
            index,
            t_ms: t.as_secs_f64() * 1e3,
            image_t_ms: frame.timestamp_ms,
            state,
            action,
            prompt: active.prompt.clone(),
        };
        active.writer.append(&record, &base, &wrist).map_err(CaptureError::Write)
    }
}

enum CaptureError {
    Device(TransportError),
    Write(RecorderError),
}

impl Periodic for RecorderTask {
    fn period(&self) -> Duration {
        period_from_rate(self.config.rate_hz)
    }

    fn tick(&mut self, _index: u64, now: Duration) -> ControlFlow<()> {
        if !self.started {
            self.started = true;
            if self.config.auto_start {
                if let Err(e) = self.begin(self.config.prompt.clone()) {
                    warn!("cannot start episode: {e}");
                    self.outcomes.push(EpisodeOutcome::Aborted { reason: e.to_string() });
                    return ControlFlow::Break(());
                }
            }
        }
        loop {
            let msg = match &self.control {
                Some(rx) => rx.try_recv(),
                None => Err(TryRecvError::Empty),
            };
            match msg {
                Ok(RecControl::Start { prompt }) if self.active.is_none() => {
                    let prompt = if prompt.is_empty() { self.config.prompt.clone() } else { prompt };
                    if let Err(e) = self.begin(prompt) {
                        warn!("cannot start episode: {e}");
                        self.outcomes.push(EpisodeOutcome::Aborted { reason: e.to_string() });
                    }
                }
                Ok(RecControl::Start { .. }) => warn!("rec.start ignored: already recording"),
                Ok(RecControl::Stop) => self.end(None),
                Err(_) => break,
            }
        }

        let mut done = false;
        if self.active.is_some() {
            match self.capture(now) {
                Ok(()) => {
                    let n = self.active.as_ref().map_or(0, |a| a.writer.frame_count());
                    if n >= self.config.max_frames {
                        self.end(None);
                        done = true;
                    }
                }
                Err(CaptureError::Device(e)) => {
                    warn!("device lost mid-episode: {e}");
                    self.end(Some(format!("device endpoint lost: {e}")));
                    done = true;
                }
                Err(CaptureError::Write(e)) => {
                    warn!("episode write failed: {e}");
                    if let Some(a) = self.active.take() {
                        a.writer.abort();
                    }
                    self.outcomes.push(EpisodeOutcome::Aborted { reason: e.to_string() });
                    done = true;
                }
            }
        }
        self.publish_status();
        if done && self.config.single_episode {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    }

    fn finish(&mut self, _missed: u64) {
        // The session ended while recording: a normal stop.
        self.end(None);
        self.publish_status();
    }
}
