use serde::{Deserialize, Serialize};

use super::BrokerError;
use crate::devices::Observation;
use crate::transport::{Envelope, TransportError};

pub mod msg {
    pub const INFER: &str = "policy.infer";
    pub const CHUNK: &str = "policy.chunk";
}

/// `horizon × 7` future actions returned by one inference call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionChunk {
    pub horizon: usize,
    pub actions: Vec<[f64; 7]>,
    /// Inference call counter the chunk answers.
    #[serde(default)]
    pub seq: u64,
    /// Clock time the chunk was parsed, ms.
    #[serde(default)]
    pub issued_at: f64,
}

impl ActionChunk {
    pub fn new(actions: Vec<[f64; 7]>) -> Self {
        Self {
            horizon: actions.len(),
            actions,
            seq: 0,
            issued_at: 0.0,
        }
    }

    /// Clamp the gripper column into `[0, 1]`; returns how many entries moved.
    pub fn clamp_gripper(&mut self) -> usize {
        let mut n = 0;
        for a in &mut self.actions {
            let c = a[6].clamp(0.0, 1.0);
            if c != a[6] {
                a[6] = c;
                n += 1;
            }
        }
        n
    }

    pub fn to_envelope(&self, id: Option<u64>) -> Envelope {
        let mut env = Envelope::new(msg::CHUNK)
            .with("horizon", self.horizon)
            .with("actions", serde_json::to_value(&self.actions).expect("finite actions serialize"));
        env.id = id;
        env
    }

    /// Parse a `policy.chunk` reply and check it is exactly
    /// `expected_horizon × 7` with finite entries.
    pub fn from_envelope(env: &Envelope, expected_horizon: usize) -> Result<Self, BrokerError> {
        if env.t != msg::CHUNK {
            return Err(BrokerError::ChunkShape(format!("expected {}, got {}", msg::CHUNK, env.t)));
        }
        let rows: Vec<Vec<f64>> = env
            .get("actions")
            .cloned()
            .map(serde_json::from_value)
            .transpose()
            .map_err(|e| BrokerError::ChunkShape(format!("actions: {e}")))?
            .ok_or_else(|| BrokerError::ChunkShape("reply has no actions".into()))?;
        if rows.len() != expected_horizon {
            return Err(BrokerError::ChunkShape(format!(
                "{} rows, expected horizon {expected_horizon}",
                rows.len()
            )));
        }
        let mut actions = Vec::with_capacity(rows.len());
        for (i, r) in rows.iter().enumerate() {
            let row: [f64; 7] = r
                .as_slice()
                .try_into()
                .map_err(|_| BrokerError::ChunkShape(format!("row {i} has {} entries, expected 7", r.len())))?;
            if row.iter().any(|v| !v.is_finite()) {
                return Err(BrokerError::ChunkShape(format!("row {i} is not finite")));
            }
            actions.push(row);
        }
        if let Some(h) = env.get("horizon").and_then(|v| v.as_u64()) {
            if h as usize != expected_horizon {
                return Err(BrokerError::ChunkShape(format!("declared horizon {h}, expected {expected_horizon}")));
            }
        }
        Ok(Self {
            horizon: expected_horizon,
            actions,
            seq: env.id.unwrap_or(0),
            issued_at: 0.0,
        })
    }
}

/// The inference request both protocols carry: the observation document
/// under `policy.infer`, id = inference sequence number.
pub fn observation_envelope(obs: &Observation, seq: u64) -> Result<Envelope, TransportError> {
    Ok(Envelope::with_body(msg::INFER, obs)?.with_id(seq))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_checks() {
        let c = ActionChunk::new(vec![[0.0; 7]; 16]);
        let env = c.to_envelope(Some(3));
        let back = ActionChunk::from_envelope(&env, 16).unwrap();
        assert_eq!(back.actions, c.actions);
        assert_eq!(back.seq, 3);
        assert!(matches!(ActionChunk::from_envelope(&env, 50), Err(BrokerError::ChunkShape(_))));

        let bad = Envelope::new(msg::CHUNK).with("actions", serde_json::json!([[0.0, 1.0]]));
        assert!(matches!(ActionChunk::from_envelope(&bad, 1), Err(BrokerError::ChunkShape(_))));
    }

    #[test]
    fn gripper_clamp_counts() {
        let mut c = ActionChunk::new(vec![[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.2], [0.0; 7], [-0.1; 7]]);
        assert_eq!(c.clamp_gripper(), 2);
        assert_eq!(c.actions[0][6], 1.0);
        assert_eq!(c.actions[2][6], 0.0);
    }
}
