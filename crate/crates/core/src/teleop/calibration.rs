use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TeleopError;

/// Per-joint leader→follower map: `follower = sign * leader + offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderCalibration {
    pub offset: [f64; 7],
    pub sign: [f64; 7],
}

impl Default for LeaderCalibration {
    fn default() -> Self {
        Self::identity()
    }
}

impl LeaderCalibration {
    pub fn identity() -> Self {
        Self {
            offset: [0.0; 7],
            sign: [1.0; 7],
        }
    }

    pub fn new(offset: [f64; 7], sign: [f64; 7]) -> Result<Self, TeleopError> {
        let c = Self { offset, sign };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), TeleopError> {
        if let Some(i) = self.sign.iter().position(|&s| s != 1.0 && s != -1.0) {
            return Err(TeleopError::Calibration(format!(
                "sign[{i}] = {} is not +1 or -1",
                self.sign[i]
            )));
        }
        if self.offset.iter().any(|o| !o.is_finite()) {
            return Err(TeleopError::Calibration("non-finite offset".into()));
        }
        Ok(())
    }

    /// Apply the map. No clamping happens here.
    pub fn apply(&self, leader: &[f64; 7]) -> [f64; 7] {
        std::array::from_fn(|i| self.sign[i] * leader[i] + self.offset[i])
    }

    pub fn load(path: &Path) -> Result<Self, TeleopError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TeleopError::Calibration(format!("{}: {e}", path.display())))?;
        let c: Self = serde_json::from_str(&text)
            .map_err(|e| TeleopError::Calibration(format!("{}: {e}", path.display())))?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<(), TeleopError> {
        let text = serde_json::to_string_pretty(self).expect("calibration serializes");
        std::fs::write(path, text).map_err(|e| TeleopError::Calibration(format!("{}: {e}", path.display())))
    }
}

pub const MIN_CALIBRATION_SAMPLES: usize = 10;

/// Leader samples whose per-joint standard deviation exceeds this (rad)
/// are rejected as unstable.
pub const DEFAULT_MAX_STD: f64 = 0.01;

/// Offsets that map the mean leader reading onto `reference`, the known
/// follower pose the leader was held at while sampling.
pub fn calibrate(
    samples: &[[f64; 7]],
    reference: &[f64; 7],
    sign: [f64; 7],
    max_std: f64,
) -> Result<LeaderCalibration, TeleopError> {
    if samples.len() < MIN_CALIBRATION_SAMPLES {
        return Err(TeleopError::Calibration(format!(
            "need at least {MIN_CALIBRATION_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let mut offset = [0.0; 7];
    for j in 0..7 {
        // Shifted by the first reading: exact for a perfectly still leader.
        let base = samples[0][j];
        let mean = base + samples.iter().map(|s| s[j] - base).sum::<f64>() / n;
        let var = samples.iter().map(|s| (s[j] - mean).powi(2)).sum::<f64>() / n;
        if var.sqrt() > max_std {
            return Err(TeleopError::CalibrationUnstable {
                joint: j,
                std: var.sqrt(),
            });
        }
        offset[j] = reference[j] - sign[j] * mean;
    }
    LeaderCalibration::new(offset, sign)
}
