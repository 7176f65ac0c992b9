use serde::{Deserialize, Serialize};

use super::prototype::{PrototypeSet, Space};
use super::trace::{SteerStep, SteerTrace, Termination};
use crate::gridworld::Target;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SteerConfig {
    pub eta: f64,
    /// Stop once the squared gradient norm drops to this value.
    pub epsilon: f64,
    pub max_steps: usize,
    /// Weight of the `|z - z0|^2` anchor penalty; `None` disables it.
    pub anchor: Option<f64>,
    pub target: Target,
}

impl Default for SteerConfig {
    fn default() -> Self {
        SteerConfig {
            eta: 0.5,
            epsilon: 1e-3,
            max_steps: 500,
            anchor: None,
            target: Target::Safe,
        }
    }
}

impl SteerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) || self.epsilon.is_nan() || self.epsilon <= 0.0 || self.max_steps == 0 {
            return Err(Error::Config("steering needs eta >= 0, epsilon > 0 and max_steps >= 1".into()));
        }
        if let Some(a) = self.anchor {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::Config(format!("anchor weight {a} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

fn check_dim(z: &[f64], protos: &PrototypeSet) -> Result<()> {
    if z.len() != protos.dim() {
        return Err(Error::shape(format!("vector of width {}, prototypes of width {}", z.len(), protos.dim())));
    }
    Ok(())
}

/// Squared distances to every center and the softmax over their negatives.
pub fn prototype_distribution(z: &[f64], protos: &PrototypeSet) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dim(z, protos)?;
    let d: Vec<f64> = protos
        .centers
        .iter()
        .map(|c| z.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum())
        .collect();
    let min = d.iter().copied().fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = d.iter().map(|v| (min - v).exp()).collect();
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= sum);
    Ok((d, p))
}

/// `log P_target` straight from the distances, shifted by the smallest one.
fn log_prob(d: &[f64], target: usize) -> f64 {
    let min = d.iter().copied().fold(f64::INFINITY, f64::min);
    let lse = -min + d.iter().map(|v| (min - v).exp()).sum::<f64>().ln();
    -d[target] - lse
}

/// `grad_z log P_target = 2 (c_target - sum_j P_j c_j)`.
pub fn steering_gradient(z: &[f64], protos: &PrototypeSet, target: usize) -> Result<Vec<f64>> {
    let (_, p) = prototype_distribution(z, protos)?;
    gradient_from(&p, protos, target)
}

fn gradient_from(p: &[f64], protos: &PrototypeSet, target: usize) -> Result<Vec<f64>> {
    if target >= protos.k() {
        return Err(Error::contract(format!("target class {target} outside {} classes", protos.k())));
    }
    let mut g: Vec<f64> = protos.centers[target].iter().map(|c| 2.0 * c).collect();
    for (pj, c) in p.iter().zip(&protos.centers) {
        g.iter_mut().zip(c).for_each(|(gi, ci)| *gi -= 2.0 * pj * ci);
    }
    Ok(g)
}

fn record(trace: &mut SteerTrace, step: usize, z: &[f64], z0: &[f64], protos: &PrototypeSet, target: usize, anchor: f64) -> Result<Vec<f64>> {
    let (d, p) = prototype_distribution(z, protos)?;
    let mut g = gradient_from(&p, protos, target)?;
    let mut objective = log_prob(&d, target);
    if anchor > 0.0 {
        let mut pen = 0.0;
        for ((gi, a), b) in g.iter_mut().zip(z).zip(z0) {
            *gi -= 2.0 * anchor * (a - b);
            pen += (a - b) * (a - b);
        }
        objective -= anchor * pen;
    }
    trace.steps.push(SteerStep {
        step,
        distances: d,
        probabilities: p,
        grad_norm_sq: g.iter().map(|v| v * v).sum(),
        objective,
    });
    Ok(g)
}

fn ascend(z0: &[f64], protos: &PrototypeSet, cfg: &SteerConfig, anchor: f64) -> Result<(Vec<f64>, SteerTrace)> {
    cfg.validate()?;
    check_dim(z0, protos)?;
    if z0.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("non-finite starting point"));
    }
    let target = cfg.target.index();
    let mut trace = SteerTrace::new(target);
    let mut z = z0.to_vec();
    let mut g = record(&mut trace, 0, &z, z0, protos, target, anchor)?;
    for step in 1..=cfg.max_steps {
        if trace.last().expect("recorded").grad_norm_sq <= cfg.epsilon {
            trace.termination = Some(Termination::Converged);
            return Ok((z, trace));
        }
        z.iter_mut().zip(&g).for_each(|(zi, gi)| *zi += cfg.eta * gi);
        let diverged = z.iter().any(|v| !v.is_finite()) || {
            g = record(&mut trace, step, &z, z0, protos, target, anchor)?;
            let last = trace.last().expect("recorded");
            let bad = !last.grad_norm_sq.is_finite() || last.probabilities.iter().any(|p| !p.is_finite());
            if bad {
                trace.steps.pop();
            }
            bad
        };
        if diverged {
            return Err(Error::SteerDivergence {
                step,
                trace: Box::new(trace),
            });
        }
    }
    trace.termination = Some(if trace.last().expect("recorded").grad_norm_sq <= cfg.epsilon {
        Termination::Converged
    } else {
        Termination::MaxSteps
    });
    Ok((z, trace))
}

/// Gradient ascent on the target log-probability in latent space.
/// The anchor weight in `cfg`, if any, is honoured.
pub fn steer_latent(z0: &[f64], protos: &PrototypeSet, cfg: &SteerConfig) -> Result<(Vec<f64>, SteerTrace)> {
    ascend(z0, protos, cfg, cfg.anchor.unwrap_or(0.0))
}

/// [`steer_latent`] with an explicit anchor weight, overriding the config.
pub fn steer_latent_anchored(z0: &[f64], protos: &PrototypeSet, cfg: &SteerConfig, anchor: f64) -> Result<(Vec<f64>, SteerTrace)> {
    if !(anchor >= 0.0 && anchor.is_finite()) {
        return Err(Error::Config(format!("anchor weight {anchor} must be finite and non-negative")));
    }
    ascend(z0, protos, cfg, anchor)
}

/// The same ascent on raw queries against dense prototypes.
pub fn steer_dense(s0: &[f64], protos: &PrototypeSet, cfg: &SteerConfig) -> Result<(Vec<f64>, SteerTrace)> {
    if protos.space != Space::Dense {
        return Err(Error::contract("dense steering needs prototypes computed over raw queries"));
    }
    if cfg.anchor.is_some() {
        return Err(Error::Config("dense steering does not support an anchor".into()));
    }
    ascend(s0, protos, cfg, 0.0)
}

/// `c_target - mean of the other centers`.
pub fn static_vector_sparse(protos: &PrototypeSet, target: usize) -> Result<Vec<f64>> {
    let k = protos.k();
    if k < 2 || target >= k {
        return Err(Error::contract(format!("target {target} with {k} classes")));
    }
    let mut v = protos.centers[target].clone();
    let w = 1.0 / (k - 1) as f64;
    for (j, c) in protos.centers.iter().enumerate() {
        if j != target {
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= w * b);
        }
    }
    Ok(v)
}

/// Replaces the latent with the target center.
pub fn direct_center_assign(protos: &PrototypeSet, target: usize) -> Result<Vec<f64>> {
    protos
        .centers
        .get(target)
        .cloned()
        .ok_or_else(|| Error::contract(format!("target {target} outside {} classes", protos.k())))
}
