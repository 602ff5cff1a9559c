use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::TeleopError;
use crate::cell::Latest;

/// One leader reading: 6 joint angles plus the normalized gripper channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderSample {
    pub q: [f64; 7],
    /// Clock time the sample was produced.
    pub t: Duration,
}

pub trait LeaderSource: Send {
    /// Freshest sample available at clock time `now`, if any.
    fn sample(&mut self, now: Duration) -> Option<LeaderSample>;

    /// True once the source will never produce new motion (end of replay).
    fn exhausted(&self, _now: Duration) -> bool {
        false
    }

    fn kind(&self) -> &'static str;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t_s: f64,
    pub q: [f64; 7],
}

/// Time-parameterized trajectory, linearly interpolated between waypoints
/// and held at both ends. Time starts at the first `sample` call.
#[derive(Debug, Clone)]
pub struct ScriptedSource {
    waypoints: Vec<Waypoint>,
    start: Option<Duration>,
}

impl ScriptedSource {
    pub fn new(mut waypoints: Vec<Waypoint>) -> Result<Self, TeleopError> {
        if waypoints.is_empty() {
            return Err(TeleopError::Source("scripted trajectory has no waypoints".into()));
        }
        if waypoints.iter().any(|w| !w.t_s.is_finite() || w.q.iter().any(|v| !v.is_finite())) {
            return Err(TeleopError::Source("scripted trajectory has non-finite values".into()));
        }
        waypoints.sort_by(|a, b| a.t_s.total_cmp(&b.t_s));
        Ok(Self { waypoints, start: None })
    }

    pub fn from_file(path: &Path) -> Result<Self, TeleopError> {
        let text = std::fs::read_to_string(path).map_err(|e| TeleopError::Source(format!("{}: {e}", path.display())))?;
        let wps: Vec<Waypoint> =
            serde_json::from_str(&text).map_err(|e| TeleopError::Source(format!("{}: {e}", path.display())))?;
        Self::new(wps)
    }

    /// Constant pose.
    pub fn constant(q: [f64; 7]) -> Self {
        Self {
            waypoints: vec![Waypoint { t_s: 0.0, q }],
            start: None,
        }
    }

    /// Per-joint sinusoids around `center`, sampled every `step_s` for
    /// `duration_s`. Amplitudes apply to the six arm joints; the gripper
    /// channel oscillates over [0, 1].
    pub fn sines(center: [f64; 7], amplitude: f64, period_s: f64, duration_s: f64, step_s: f64) -> Self {
        let n = (duration_s / step_s).ceil() as usize;
        let waypoints = (0..=n)
            .map(|k| {
                let t = k as f64 * step_s;
                let phase = 2.0 * std::f64::consts::PI * t / period_s;
                let mut q = center;
                for (j, v) in q.iter_mut().enumerate().take(6) {
                    *v += amplitude * (phase + j as f64 * 0.7).sin();
                }
                q[6] = 0.5 - 0.5 * phase.cos();
                Waypoint { t_s: t, q }
            })
            .collect();
        Self { waypoints, start: None }
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    /// Position at `t_s` seconds into the trajectory.
    pub fn at(&self, t_s: f64) -> [f64; 7] {
        let w = &self.waypoints;
        let i = w.partition_point(|p| p.t_s <= t_s);
        if i == 0 {
            return w[0].q;
        }
        if i == w.len() {
            return w[w.len() - 1].q;
        }
        let (a, b) = (&w[i - 1], &w[i]);
        let span = b.t_s - a.t_s;
        let u = if span > 0.0 { (t_s - a.t_s) / span } else { 1.0 };
        std::array::from_fn(|j| a.q[j] + u * (b.q[j] - a.q[j]))
    }
}

impl LeaderSource for ScriptedSource {
    fn sample(&mut self, now: Duration) -> Option<LeaderSample> {
        let start = *self.start.get_or_insert(now);
        Some(LeaderSample {
            q: self.at((now - start).as_secs_f64()),
            t: now,
        })
    }

    fn kind(&self) -> &'static str {
        "scripted"
    }
}

/// Replays a recorded action stream at its original timing with zero-order
/// hold. Recorded actions are already calibrated, so pair this source with
/// the identity calibration.
#[derive(Debug, Clone)]
pub struct ReplaySource {
    /// (offset from first frame, action)
    actions: Vec<(Duration, [f64; 7])>,
    frame_period: Duration,
    start: Option<Duration>,
}

impl ReplaySource {
    pub fn new(actions: Vec<(Duration, [f64; 7])>, frame_period: Duration) -> Result<Self, TeleopError> {
        if actions.is_empty() {
            return Err(TeleopError::Source("episode has no frames to replay".into()));
        }
        Ok(Self {
            actions,
            frame_period,
            start: None,
        })
    }

    pub fn from_episode(path: &Path) -> Result<Self, TeleopError> {
        let ep = crate::recorder::load_episode(path).map_err(|e| TeleopError::Source(e.to_string()))?;
        let t0 = ep.frames.first().map_or(0.0, |f| f.t_ms);
        let actions = ep
            .frames
            .iter()
            .map(|f| (Duration::from_secs_f64((f.t_ms - t0).max(0.0) / 1e3), f.action))
            .collect();
        Self::new(actions, crate::clock::period_from_rate(ep.meta.record_rate_hz))
    }

    fn elapsed(&self, now: Duration) -> Duration {
        self.start.map_or(Duration::ZERO, |s| now.saturating_sub(s))
    }
}

impl LeaderSource for ReplaySource {
    fn sample(&mut self, now: Duration) -> Option<LeaderSample> {
        self.start.get_or_insert(now);
        let dt = self.elapsed(now);
        let i = self.actions.partition_point(|(t, _)| *t <= dt).max(1) - 1;
        Some(LeaderSample {
            q: self.actions[i].1,
            t: now,
        })
    }

    fn exhausted(&self, now: Duration) -> bool {
        let last = self.actions.last().map_or(Duration::ZERO, |a| a.0);
        self.start.is_some() && self.elapsed(now) >= last + self.frame_period
    }

    fn kind(&self) -> &'static str {
        "replay"
    }
}

/// Sample-and-hold over a latest-value cell fed by another thread (the
/// WebSocket bridge). The cell's timestamp marks the last time the producer
/// was heard from, so a silent producer shows up as a stall.
#[derive(Debug, Clone)]
pub struct CellSource {
    cell: Arc<Latest<[f64; 7]>>,
}

impl CellSource {
    pub fn new(cell: Arc<Latest<[f64; 7]>>) -> Self {
        Self { cell }
    }
}

impl LeaderSource for CellSource {
    fn sample(&mut self, _now: Duration) -> Option<LeaderSample> {
        self.cell.get().map(|s| LeaderSample {
            q: s.value,
            t: Duration::from_secs_f64(s.t_ms.max(0.0) / 1e3),
        })
    }

    fn kind(&self) -> &'static str {
        "bridge"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_interpolates_and_holds() {
        let s = ScriptedSource::new(vec![
            Waypoint { t_s: 1.0, q: [1.0; 7] },
            Waypoint { t_s: 0.0, q: [0.0; 7] },
        ])
        .unwrap();
        assert_eq!(s.at(-1.0), [0.0; 7]);
        assert_eq!(s.at(0.25), [0.25; 7]);
        assert_eq!(s.at(5.0), [1.0; 7]);
    }

    #[test]
    fn replay_is_zero_order_hold_and_ends() {
        let p = Duration::from_millis(100);
        let mut r = ReplaySource::new(vec![(Duration::ZERO, [0.0; 7]), (p, [1.0; 7])], p).unwrap();
        let t0 = Duration::from_secs(3);
        assert_eq!(r.sample(t0).unwrap().q, [0.0; 7]);
        assert_eq!(r.sample(t0 + Duration::from_millis(99)).unwrap().q, [0.0; 7]);
        assert_eq!(r.sample(t0 + p).unwrap().q, [1.0; 7]);
        assert!(!r.exhausted(t0 + Duration::from_millis(150)));
        assert!(r.exhausted(t0 + 2 * p));
    }
}
