use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracle::OraclePlanner;
use super::PolicyError;
use crate::devices::Observation;
use crate::recorder::load_episode;

/// Chunk sizes the deployment stack is built around.
pub const SUPPORTED_HORIZONS: [usize; 2] = [16, 50];

/// Half-width of the random policy's per-step joint delta, rad.
pub const RANDOM_STEP: f64 = 0.05;

/// Which mock policy a server runs.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyKind {
    Zeros,
    Random,
    /// Replays the recorded actions of one episode.
    Replay(PathBuf),
    /// Scripted grasper reading privileged world state.
    Oracle,
}

impl PolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Zeros => "zeros",
            PolicyKind::Random => "random",
            PolicyKind::Replay(_) => "replay",
            PolicyKind::Oracle => "oracle",
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PolicyKind::Replay(p) => write!(f, "replay:{}", p.display()),
            other => f.write_str(other.name()),
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = PolicyError;

    /// `zeros`, `random`, `oracle` or `replay:<episode dir>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zeros" => Ok(PolicyKind::Zeros),
            "random" => Ok(PolicyKind::Random),
            "oracle" => Ok(PolicyKind::Oracle),
            _ => match s.strip_prefix("replay:") {
                Some(p) if !p.is_empty() => Ok(PolicyKind::Replay(PathBuf::from(p))),
                _ => Err(PolicyError::Config(format!(
                    "unknown policy kind {s:?} (zeros, random, oracle, replay:<episode>)"
                ))),
            },
        }
    }
}

pub fn check_horizon(h: usize) -> Result<(), PolicyError> {
    if SUPPORTED_HORIZONS.contains(&h) {
        Ok(())
    } else {
        Err(PolicyError::Config(format!("horizon {h} not supported (16 or 50)")))
    }
}

/// One policy instance; owned by a single session.
pub trait Policy: Send {
    /// Exactly `horizon` rows of `[q0..q5, g]`.
    fn infer(&mut self, obs: &Observation, horizon: usize) -> Result<Vec<[f64; 7]>, PolicyError>;
}

pub struct ZerosPolicy;

impl Policy for ZerosPolicy {
    fn infer(&mut self, _obs: &Observation, horizon: usize) -> Result<Vec<[f64; 7]>, PolicyError> {
        Ok(vec![[0.0; 7]; horizon])
    }
}

/// Random walk starting at the observed state: each row moves every joint by
/// at most [`RANDOM_STEP`]; the gripper walks too, kept in `[0, 1]`.
pub struct RandomPolicy {
    rng: ChaCha8Rng,
    limits: [[f64; 2]; 6],
}

impl RandomPolicy {
    pub fn new(seed: u64, limits: [[f64; 2]; 6]) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            limits,
        }
    }
}

impl Policy for RandomPolicy {
    fn infer(&mut self, obs: &Observation, horizon: usize) -> Result<Vec<[f64; 7]>, PolicyError> {
        let mut cur = obs.joints;
        let mut rows = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            for (j, v) in cur.iter_mut().enumerate() {
                *v += self.rng.gen_range(-RANDOM_STEP..=RANDOM_STEP);
                *v = match self.limits.get(j) {
                    Some([lo, hi]) => v.clamp(*lo, *hi),
                    None => v.clamp(0.0, 1.0),
                };
            }
            rows.push(cur);
        }
        Ok(rows)
    }
}

/// Serves successive slices of a recorded action sequence resampled to the
/// control rate by zero-order hold; once exhausted the last row repeats.
pub struct ReplayPolicy {
    actions: Vec<[f64; 7]>,
    cursor: usize,
}

impl ReplayPolicy {
    pub fn from_actions(recorded: &[[f64; 7]], record_rate_hz: f64, control_rate_hz: f64) -> Result<Self, PolicyError> {
        if recorded.is_empty() {
            return Err(PolicyError::Config("episode has no actions".into()));
        }
        if !(record_rate_hz > 0.0 && control_rate_hz > 0.0) {
            return Err(PolicyError::Config("rates must be positive".into()));
        }
        Ok(Self {
            actions: resample_zoh(recorded, record_rate_hz, control_rate_hz),
            cursor: 0,
        })
    }

    pub fn from_episode(dir: &Path, control_rate_hz: f64) -> Result<Self, PolicyError> {
        let ep = load_episode(dir).map_err(|e| PolicyError::Config(format!("replay episode: {e}")))?;
        Self::from_actions(&ep.actions(), ep.meta.record_rate_hz, control_rate_hz)
    }

    /// Resampled sequence length.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Zero-order-hold resampling: control step `j` takes recorded frame
/// `floor(j · rec / ctrl)`, for every step that starts before the recording
/// ends.
pub fn resample_zoh(recorded: &[[f64; 7]], record_rate_hz: f64, control_rate_hz: f64) -> Vec<[f64; 7]> {
    let duration = recorded.len() as f64 / record_rate_hz;
    // Guard against 40.0 * 20.0 landing a hair above 800.
    let n = ((duration * control_rate_hz) - 1e-9).ceil().max(1.0) as usize;
    (0..n)
        .map(|j| {
            let i = ((j as f64 * record_rate_hz / control_rate_hz) + 1e-9).floor() as usize;
            recorded[i.min(recorded.len() - 1)]
        })
        .collect()
}

impl Policy for ReplayPolicy {
    fn infer(&mut self, _obs: &Observation, horizon: usize) -> Result<Vec<[f64; 7]>, PolicyError> {
        let last = *self.actions.last().expect("non-empty");
        let rows = (0..horizon)
            .map(|i| self.actions.get(self.cursor + i).copied().unwrap_or(last))
            .collect();
        self.cursor += horizon;
        Ok(rows)
    }
}

/// Build a fresh policy instance for one session.
pub fn instantiate(
    kind: &PolicyKind,
    seed: u64,
    control_rate_hz: f64,
    oracle: Option<&OraclePlanner>,
) -> Result<Box<dyn Policy>, PolicyError> {
    Ok(match kind {
        PolicyKind::Zeros => Box::new(ZerosPolicy),
        PolicyKind::Random => Box::new(RandomPolicy::new(
            seed,
            crate::simworld::ArmModel::default().joint_limits,
        )),
        PolicyKind::Replay(p) => Box::new(ReplayPolicy::from_episode(p, control_rate_hz)?),
        PolicyKind::Oracle => Box::new(
            oracle
                .ok_or_else(|| PolicyError::Config("oracle needs a world endpoint".into()))?
                .session()?,
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs() -> Observation {
        Observation {
            joints: [0.1, -0.2, 0.3, 0.0, 0.0, 0.0, 0.5],
            ..Default::default()
        }
    }

    #[test]
    fn zoh_counts() {
        let rec: Vec<[f64; 7]> = (0..1200).map(|i| [i as f64; 7]).collect();
        let out = resample_zoh(&rec, 30.0, 20.0);
        assert_eq!(out.len(), 800);
        assert_eq!(out[0], rec[0]);
        assert_eq!(out[1][0], 1.0);
        assert_eq!(out[2][0], 3.0);
        assert_eq!(out[799][0], 1198.0);

        let mut p = ReplayPolicy::from_actions(&rec, 30.0, 20.0).unwrap();
        for i in 0..16 {
            assert_eq!(p.infer(&obs(), 50).unwrap(), out[i * 50..(i + 1) * 50]);
        }
        let tail = p.infer(&obs(), 16).unwrap();
        assert!(tail.iter().all(|r| *r == out[799]));
    }

    #[test]
    fn random_walk_stays_bounded() {
        let mut p = RandomPolicy::new(3, crate::simworld::ArmModel::default().joint_limits);
        let o = obs();
        let c = p.infer(&o, 50).unwrap();
        let mut prev = o.joints;
        for row in &c {
            for j in 0..7 {
                assert!((row[j] - prev[j]).abs() <= RANDOM_STEP + 1e-12);
            }
            assert!((0.0..=1.0).contains(&row[6]));
            prev = *row;
        }
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("zeros".parse::<PolicyKind>().unwrap(), PolicyKind::Zeros);
        assert_eq!(
            "replay:/tmp/ep".parse::<PolicyKind>().unwrap(),
            PolicyKind::Replay("/tmp/ep".into())
        );
        assert!("replay:".parse::<PolicyKind>().is_err());
        assert!(check_horizon(16).is_ok() && check_horizon(50).is_ok() && check_horizon(10).is_err());
    }
}
