use std::ops::ControlFlow;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use super::calibration::LeaderCalibration;
use super::source::LeaderSource;
use crate::cell::Latest;
use crate::clock::{period_from_rate, SharedClock};
use crate::devices::DeviceClient;
use crate::sched::Periodic;
use crate::simworld::ArmModel;

pub const TELEOP_RATE_HZ: f64 = 83.3;

/// Latest commanded 7-vector (after calibration and clamping); the recorder
/// samples it as the frame action.
pub type ActionTap = Arc<Latest<[f64; 7]>>;

#[derive(Debug, Clone)]
pub struct TeleopConfig {
    pub rate_hz: f64,
    pub calibration: LeaderCalibration,
    pub joint_limits: [[f64; 2]; 6],
    /// Leader silence after which commanding pauses.
    pub stall_timeout: Duration,
    pub grip_force: Option<f64>,
    /// Extra attempts per command after a transport failure.
    pub max_retries: u32,
    pub retry_backoff: Duration,
    /// Abort once commands have failed continuously for this long.
    pub give_up_after: Duration,
}

impl Default for TeleopConfig {
    fn default() -> Self {
        Self {
            rate_hz: TELEOP_RATE_HZ,
            calibration: LeaderCalibration::identity(),
            joint_limits: ArmModel::default().joint_limits,
            stall_timeout: Duration::from_millis(500),
            grip_force: None,
            max_retries: 2,
            retry_backoff: Duration::from_millis(2),
            give_up_after: Duration::from_secs(1),
        }
    }
}

impl TeleopConfig {
    /// Forwarding map followed by clamping to joint limits and `g ∈ [0, 1]`.
    pub fn map(&self, leader: &[f64; 7]) -> [f64; 7] {
        let mut out = self.calibration.apply(leader);
        for (v, [lo, hi]) in out.iter_mut().zip(self.joint_limits) {
            *v = v.clamp(lo, hi);
        }
        out[6] = out[6].clamp(0.0, 1.0);
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TeleopStats {
    pub ticks: u64,
    /// Ticks whose arm and gripper commands both went through.
    pub commands: u64,
    pub missed_ticks: u64,
    pub stall_events: u64,
    pub stalled_ticks: u64,
    pub retries: u64,
    pub failed_ticks: u64,
    pub duration_s: f64,
    pub achieved_rate_hz: f64,
    pub aborted: Option<String>,
}

/// The leader→follower forwarding loop; drive it with
/// [`run_periodic`](crate::sched::run_periodic).
pub struct TeleopLoop {
    config: TeleopConfig,
    source: Box<dyn LeaderSource>,
    devices: DeviceClient,
    clock: SharedClock,
    tap: ActionTap,
    stalled: Arc<AtomicBool>,
    stats: TeleopStats,
    start: Option<Duration>,
    last: Duration,
    failing_since: Option<Duration>,
}

impl std::fmt::Debug for TeleopLoop {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TeleopLoop")
            .field("source", &self.source.kind())
            .field("stats", &self.stats)
            .finish_non_exhaustive()
    }
}

impl TeleopLoop {
    pub fn new(config: TeleopConfig, source: Box<dyn LeaderSource>, devices: DeviceClient, clock: SharedClock) -> Self {
        Self {
            config,
            source,
            devices,
            clock,
            tap: Latest::shared(),
            stalled: Arc::new(AtomicBool::new(false)),
            stats: TeleopStats::default(),
            start: None,
            last: Duration::ZERO,
            failing_since: None,
        }
    }

    pub fn tap(&self) -> ActionTap {
        self.tap.clone()
    }

    /// Raised while commanding is paused for a silent leader.
    pub fn stall_flag(&self) -> Arc<AtomicBool> {
        self.stalled.clone()
    }

    pub fn stats(&self) -> &TeleopStats {
        &self.stats
    }

    fn with_retry<T>(
        &mut self,
        mut f: impl FnMut(&mut DeviceClient) -> Result<T, crate::transport::TransportError>,
    ) -> Option<T> {
        let mut backoff = self.config.retry_backoff;
        for attempt in 0..=self.config.max_retries {
            match f(&mut self.devices) {
                Ok(v) => return Some(v),
                Err(e) if e.remote_code().is_some() => {
                    warn!("device rejected command: {e}");
                    return None;
                }
                Err(e) => {
                    debug!("command attempt {attempt} failed: {e}");
                    if attempt < self.config.max_retries {
                        self.stats.retries += 1;
                        self.clock.sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        None
    }

    fn command(&mut self, cmd: &[f64; 7]) -> bool {
        let q: [f64; 6] = cmd[..6].try_into().expect("6 arm joints");
        if self.with_retry(|d| d.arm_command(&q)).is_none() {
            return false;
        }
        let (g, force) = (cmd[6], self.config.grip_force);
        self.with_retry(|d| d.grip_command(g, force, None)).is_some()
    }
}

impl Periodic for TeleopLoop {
    fn period(&self) -> Duration {
        period_from_rate(self.config.rate_hz)
    }

    fn tick(&mut self, _index: u64, now: Duration) -> ControlFlow<()> {
        self.start.get_or_insert(now);
        self.last = now;
        self.stats.ticks += 1;
        if self.source.exhausted(now) {
            return ControlFlow::Break(());
        }
        let fresh = self
            .source
            .sample(now)
            .filter(|s| now.saturating_sub(s.t) <= self.config.stall_timeout);
        let Some(sample) = fresh else {
            if !self.stalled.swap(true, Ordering::SeqCst) {
                warn!("leader source stalled; holding follower");
                self.stats.stall_events += 1;
            }
            self.stats.stalled_ticks += 1;
            return ControlFlow::Continue(());
        };
        self.stalled.store(false, Ordering::SeqCst);

        let cmd = self.config.map(&sample.q);
        if self.command(&cmd) {
            self.stats.commands += 1;
            self.failing_since = None;
            self.tap.publish(cmd, now.as_secs_f64() * 1e3);
        } else {
            self.stats.failed_ticks += 1;
            let since = *self.failing_since.get_or_insert(now);
            if now.saturating_sub(since) >= self.config.give_up_after {
                self.stats.aborted = Some(format!(
                    "device endpoints unreachable for {:.1} s",
                    now.saturating_sub(since).as_secs_f64()
                ));
                return ControlFlow::Break(());
            }
        }
        ControlFlow::Continue(())
    }

    fn finish(&mut self, missed: u64) {
        self.stats.missed_ticks = missed;
        // Span covered by the ticks that ran, each owning one period.
        let Some(start) = self.start else { return };
        self.stats.duration_s = (self.last - start + self.period()).as_secs_f64();
        if self.stats.duration_s > 0.0 {
            self.stats.achieved_rate_hz = self.stats.commands as f64 / self.stats.duration_s;
        }
    }
}
