use serde::{Deserialize, Serialize};

use super::EvalError;

/// Attempts per trial.
pub const ATTEMPTS_PER_TRIAL: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: u32,
    pub seed: u64,
    /// Grasp-and-deposit success per attempt, in order.
    pub attempt_outcomes: Vec<bool>,
    pub grasp_count: u32,
    /// Simulated seconds from reset to the last attempt boundary.
    pub wall_time_s: f64,
    #[serde(default)]
    pub aborted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort_reason: Option<String>,
}

impl TrialRecord {
    pub fn new(trial_id: u32, seed: u64, attempt_outcomes: Vec<bool>, wall_time_s: f64) -> Self {
        let grasp_count = attempt_outcomes.iter().filter(|o| **o).count() as u32;
        Self {
            trial_id,
            seed,
            attempt_outcomes,
            grasp_count,
            wall_time_s,
            aborted: false,
            abort_reason: None,
        }
    }

    pub fn aborted(trial_id: u32, seed: u64, wall_time_s: f64, reason: impl Into<String>) -> Self {
        Self {
            aborted: true,
            abort_reason: Some(reason.into()),
            ..Self::new(trial_id, seed, vec![false; ATTEMPTS_PER_TRIAL], wall_time_s)
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.attempt_outcomes.len() != ATTEMPTS_PER_TRIAL {
            return Err(EvalError::Invalid(format!(
                "trial {} has {} attempts",
                self.trial_id,
                self.attempt_outcomes.len()
            )));
        }
        let n = self.attempt_outcomes.iter().filter(|o| **o).count() as u32;
        if n != self.grasp_count {
            return Err(EvalError::Invalid(format!(
                "trial {}: grasp_count {} but {n} successful attempts",
                self.trial_id, self.grasp_count
            )));
        }
        Ok(())
    }

    /// At least two successes in a row.
    pub fn consecutive_pair(&self) -> bool {
        self.attempt_outcomes.windows(2).any(|w| w[0] && w[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessRates {
    /// Fraction of usable trials with at least one success.
    pub single: f64,
    /// Fraction with two consecutive successes.
    pub multi: f64,
    /// Fraction with any two successes.
    pub multi_any2: f64,
    pub usable: usize,
    pub aborted: usize,
}

/// Single and multi success rates over the non-aborted trials.
pub fn success_rates(records: &[TrialRecord]) -> Result<SuccessRates, EvalError> {
    let usable: Vec<&TrialRecord> = records.iter().filter(|r| !r.aborted).collect();
    if usable.is_empty() {
        return Err(EvalError::NoUsableTrials);
    }
    let n = usable.len() as f64;
    let frac = |f: &dyn Fn(&TrialRecord) -> bool| usable.iter().filter(|r| f(r)).count() as f64 / n;
    Ok(SuccessRates {
        single: frac(&|r| r.grasp_count >= 1),
        multi: frac(&|r| r.consecutive_pair()),
        multi_any2: frac(&|r| r.grasp_count >= 2),
        usable: usable.len(),
        aborted: records.len() - usable.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub median_ms: f64,
    /// Population standard deviation.
    pub std_ms: f64,
    /// Nearest-rank 95th percentile.
    pub p95_ms: f64,
    pub horizon: usize,
    /// Mean latency divided by the horizon.
    pub per_step_ms: f64,
    pub samples: usize,
}

/// The `ceil(p · n)`-th smallest sample (1-based), `p` in (0, 1].
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

pub fn latency_stats(samples: &[f64], horizon: usize) -> Result<LatencyStats, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::EmptySamples);
    }
    if horizon == 0 {
        return Err(EvalError::Invalid("horizon must be positive".into()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::Invalid("latency samples must be finite".into()));
    }
    let n = samples.len();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    Ok(LatencyStats {
        mean_ms: mean,
        median_ms: median,
        std_ms: var.sqrt(),
        p95_ms: nearest_rank(&sorted, 0.95),
        horizon,
        per_step_ms: mean / horizon as f64,
        samples: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(o: [bool; 3]) -> TrialRecord {
        TrialRecord::new(0, 0, o.to_vec(), 0.0)
    }

    #[test]
    fn definitional_cases() {
        let t = true;
        let f = false;
        assert!(rec([t, t, f]).consecutive_pair());
        assert!(!rec([t, f, t]).consecutive_pair());
        assert_eq!(rec([t, f, t]).grasp_count, 2);
        assert!(!rec([f, f, f]).consecutive_pair());
        let r = success_rates(&[rec([t, f, t])]).unwrap();
        assert_eq!((r.single, r.multi, r.multi_any2), (1.0, 0.0, 1.0));
    }

    #[test]
    fn aborted_trials_are_excluded() {
        let mut recs = vec![rec([true; 3]), TrialRecord::aborted(1, 1, 0.0, "gone")];
        let r = success_rates(&recs).unwrap();
        assert_eq!((r.single, r.usable, r.aborted), (1.0, 1, 1));
        recs.remove(0);
        assert!(matches!(success_rates(&recs), Err(EvalError::NoUsableTrials)));
    }

    #[test]
    fn order_statistics() {
        let s: Vec<f64> = (1..=100).map(f64::from).collect();
        let st = latency_stats(&s, 50).unwrap();
        assert_eq!(st.p95_ms, 95.0);
        assert_eq!(st.median_ms, 50.5);
        let c = latency_stats(&[4.25; 7], 16).unwrap();
        assert_eq!((c.mean_ms, c.median_ms, c.std_ms, c.p95_ms), (4.25, 4.25, 0.0, 4.25));
        assert!(latency_stats(&[], 16).is_err());
    }
}
