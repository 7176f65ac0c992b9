use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxSteps,
}

/// State of the optimiser at one iterate `z^(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteerStep {
    pub step: usize,
    /// Squared distance to every prototype.
    pub distances: Vec<f64>,
    pub probabilities: Vec<f64>,
    /// Squared norm of the ascent direction evaluated at this iterate.
    pub grad_norm_sq: f64,
    /// Objective value (target log-probability, minus the anchor penalty when anchored).
    pub objective: f64,
}

/// Trajectory of one steering run. `steps[0]` describes the starting point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteerTrace {
    pub target: usize,
    pub steps: Vec<SteerStep>,
    pub termination: Option<Termination>,
}

impl SteerTrace {
    pub fn new(target: usize) -> Self {
        SteerTrace {
            target,
            steps: Vec::new(),
            termination: None,
        }
    }

    /// Number of updates applied.
    pub fn updates(&self) -> usize {
        self.steps.len().saturating_sub(1)
    }

    pub fn first(&self) -> Option<&SteerStep> {
        self.steps.first()
    }

    pub fn last(&self) -> Option<&SteerStep> {
        self.steps.last()
    }

    /// Target log-probability at every recorded iterate.
    pub fn target_log_probs(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.probabilities[self.target].ln()).collect()
    }

    /// One JSON object per step: `{step, d: [...], p: [...], grad_norm_sq}`.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for s in &self.steps {
            let line = serde_json::json!({
                "step": s.step,
                "d": s.distances,
                "p": s.probabilities,
                "grad_norm_sq": s.grad_norm_sq,
            });
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use crate::steering::{steer_latent, SteerConfig};
    use crate::testutil::Fixture;

    #[test]
    fn jsonl_has_one_record_per_step() {
        let f = Fixture::new();
        let z0 = vec![0.1; f.protos.dim()];
        let (_, trace) = steer_latent(
            &z0,
            &f.protos,
            &SteerConfig {
                max_steps: 7,
                ..Default::default()
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        trace.write_jsonl(&mut buf).unwrap();
        let lines: Vec<serde_json::Value> = std::str::from_utf8(&buf)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), trace.steps.len());
        assert_eq!(trace.updates(), trace.steps.len() - 1);
        for (i, l) in lines.iter().enumerate() {
            assert_eq!(l["step"], i);
            assert_eq!(l["d"].as_array().unwrap().len(), 3);
            assert_eq!(l["p"].as_array().unwrap().len(), 3);
            assert!(l["grad_norm_sq"].as_f64().unwrap() >= 0.0);
        }
        assert_eq!(trace.target_log_probs().len(), trace.steps.len());
    }
}
