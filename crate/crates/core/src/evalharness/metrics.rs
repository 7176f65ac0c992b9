use serde::{Deserialize, Serialize};

use super::score::{Bucket, Outcome};
use crate::gridworld::Target;
use crate::steering::Method;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// One scored generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: String,
    pub method: Method,
    pub target: Target,
    pub outcome: Outcome,
    pub jsd: f64,
    /// Optimiser updates, 0 for methods without an ascent.
    pub steps: usize,
    pub text: String,
}

/// Aggregates for one target. Rates use all instances as the denominator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetMetrics {
    pub target: Target,
    pub n: usize,
    pub success_rate: f64,
    pub logic_violation_rate: f64,
    pub parse_failure_rate: f64,
    pub valid_rate: f64,
    /// Mean length (short/long) or adjacency (safe) over valid outputs.
    pub mean_attribute_score: Option<f64>,
    pub mean_length: Option<f64>,
    pub mean_adjacency: Option<f64>,
    pub mean_jsd: f64,
    pub mean_steps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub schema_version: u32,
    pub method: Method,
    pub layer: usize,
    pub instances: usize,
    pub per_target: Vec<TargetMetrics>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in v {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

/// Folds instance records into per-target metrics. Records are sorted by (target, id)
/// first, so the result does not depend on their order.
pub fn aggregate(method: Method, layer: usize, records: &[InstanceRecord]) -> RunMetrics {
    let mut sorted: Vec<&InstanceRecord> = records.iter().collect();
    sorted.sort_by(|a, b| (a.target, &a.id).cmp(&(b.target, &b.id)));
    let mut per_target = Vec::new();
    for target in Target::ALL {
        let rs: Vec<&InstanceRecord> = sorted.iter().copied().filter(|r| r.target == target).collect();
        if rs.is_empty() {
            continue;
        }
        let n = rs.len() as f64;
        let frac = |b: Bucket| rs.iter().filter(|r| r.outcome.bucket == b).count() as f64 / n;
        let valid: Vec<&&InstanceRecord> = rs.iter().filter(|r| r.outcome.is_valid()).collect();
        per_target.push(TargetMetrics {
            target,
            n: rs.len(),
            success_rate: frac(Bucket::Success),
            logic_violation_rate: frac(Bucket::Violation),
            parse_failure_rate: frac(Bucket::ParseFailure),
            valid_rate: valid.len() as f64 / n,
            mean_attribute_score: mean(valid.iter().filter_map(|r| r.outcome.attribute(target))),
            mean_length: mean(valid.iter().filter_map(|r| r.outcome.length.map(|l| l as f64))),
            mean_adjacency: mean(valid.iter().filter_map(|r| r.outcome.adjacency.map(|a| a as f64))),
            mean_jsd: rs.iter().map(|r| r.jsd).sum::<f64>() / n,
            mean_steps: rs.iter().map(|r| r.steps as f64).sum::<f64>() / n,
        });
    }
    RunMetrics {
        schema_version: REPORT_SCHEMA_VERSION,
        method,
        layer,
        instances: sorted.iter().map(|r| &r.id).collect::<std::collections::BTreeSet<_>>().len(),
        per_target,
    }
}
