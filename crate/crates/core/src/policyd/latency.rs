use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::PolicyError;

/// Gaussian reply delay clipped at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyProfile {
    pub mean_ms: f64,
    pub std_ms: f64,
    pub seed: u64,
}

impl LatencyProfile {
    pub fn new(mean_ms: f64, std_ms: f64, seed: u64) -> Result<Self, PolicyError> {
        let p = Self { mean_ms, std_ms, seed };
        p.validate()?;
        Ok(p)
    }

    pub fn zero() -> Self {
        Self {
            mean_ms: 0.0,
            std_ms: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.mean_ms >= 0.0 && self.std_ms >= 0.0) || !self.mean_ms.is_finite() || !self.std_ms.is_finite() {
            return Err(PolicyError::Config(format!(
                "latency mean {} / std {} must be finite and non-negative",
                self.mean_ms, self.std_ms
            )));
        }
        Ok(())
    }

    pub fn sampler(&self) -> LatencySampler {
        LatencySampler {
            rng: ChaCha8Rng::seed_from_u64(self.seed),
            normal: (self.std_ms > 0.0).then(|| Normal::new(self.mean_ms, self.std_ms).expect("validated std")),
            mean: self.mean_ms,
        }
    }
}

/// Seeded stream of delays in milliseconds.
#[derive(Debug, Clone)]
pub struct LatencySampler {
    rng: ChaCha8Rng,
    normal: Option<Normal<f64>>,
    mean: f64,
}

impl LatencySampler {
    pub fn next_ms(&mut self) -> f64 {
        match &self.normal {
            Some(n) => n.sample(&mut self.rng).max(0.0),
            None => self.mean,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_clipped() {
        let p = LatencyProfile::new(1.0, 5.0, 9).unwrap();
        let a: Vec<f64> = {
            let mut s = p.sampler();
            (0..500).map(|_| s.next_ms()).collect()
        };
        let mut s = p.sampler();
        assert!(a.iter().all(|&v| v >= 0.0));
        assert!(a.contains(&0.0));
        assert!(a.iter().all(|&v| v == s.next_ms()));
        assert!(LatencyProfile::new(-1.0, 0.0, 0).is_err());
        assert_eq!(LatencyProfile::zero().sampler().next_ms(), 0.0);
    }
}
