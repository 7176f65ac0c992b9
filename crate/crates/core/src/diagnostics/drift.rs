use serde::{Deserialize, Serialize};

use crate::sae::Regularizer;
use crate::steering::SteerTrace;
use crate::{Error, Result};

/// Movement of the non-target distances over one steering run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    /// Mean over non-target classes of `|d_j(final) / d_j(0) - 1|`.
    pub drift: f64,
    pub per_class: Vec<(usize, f64)>,
    pub steps: usize,
    pub target: usize,
    pub kind: Option<Regularizer>,
    pub coefficient: Option<f64>,
}

pub fn non_target_drift(trace: &SteerTrace) -> Result<DriftReport> {
    if trace.steps.len() < 2 {
        return Err(Error::contract("drift needs a trace with at least two iterates"));
    }
    let first = &trace.steps[0].distances;
    let last = &trace.steps[trace.steps.len() - 1].distances;
    let mut per_class = Vec::new();
    for j in (0..first.len()).filter(|&j| j != trace.target) {
        if first[j] == 0.0 {
            return Err(Error::contract(format!("degenerate start: zero initial distance to class {j}")));
        }
        per_class.push((j, (last[j] / first[j] - 1.0).abs()));
    }
    if per_class.is_empty() {
        return Err(Error::contract("no non-target classes"));
    }
    let drift = per_class.iter().map(|(_, d)| d).sum::<f64>() / per_class.len() as f64;
    Ok(DriftReport {
        drift,
        per_class,
        steps: trace.updates(),
        target: trace.target,
        kind: None,
        coefficient: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::steering::SteerStep;

    fn trace(dists: &[[f64; 3]]) -> SteerTrace {
        SteerTrace {
            target: 0,
            steps: dists
                .iter()
                .enumerate()
                .map(|(i, d)| SteerStep {
                    step: i,
                    distances: d.to_vec(),
                    probabilities: vec![1.0 / 3.0; 3],
                    grad_norm_sq: 0.0,
                    objective: 0.0,
                })
                .collect(),
            termination: None,
        }
    }

    #[test]
    fn constant_trace_has_no_drift() {
        assert_eq!(non_target_drift(&trace(&[[1.0, 2.0, 3.0]; 4])).unwrap().drift, 0.0);
    }

    #[test]
    fn doubled_distance_is_unit_drift() {
        let r = non_target_drift(&trace(&[[1.0, 2.0, 3.0], [0.5, 4.0, 6.0]])).unwrap();
        assert_eq!(r.per_class, vec![(1, 1.0), (2, 1.0)]);
        assert_eq!(r.drift, 1.0);
        assert_eq!(r.steps, 1);
    }

    #[test]
    fn degenerate_start_and_short_trace() {
        assert!(non_target_drift(&trace(&[[1.0, 0.0, 3.0], [1.0, 1.0, 1.0]])).is_err());
        assert!(non_target_drift(&trace(&[[1.0, 2.0, 3.0]])).is_err());
    }
}
