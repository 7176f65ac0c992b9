use serde::{Deserialize, Serialize};

use super::metrics::{aggregate, InstanceRecord, RunMetrics};
use super::score::score_generation;
use crate::diagnostics::{activation_deviation, next_token_jsd, non_target_drift};
use crate::gridworld::{DatasetRecord, Target};
use crate::numerics::Matrix;
use crate::sae::{HeadCoders, Regularizer};
use crate::steering::{pooled_latent, steer_latent, Method, PrototypeSet, SteerConfig, SteeringKit};
use crate::tinylm::{encode_prompt, ForwardOptions, LmCheckpoint, QueryEdit, ResidualEdit, TokenId};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub metrics: RunMetrics,
    pub records: Vec<InstanceRecord>,
}

/// Applies `method` toward every target in `targets` on each record's untagged prompt.
pub fn run_experiment(records: &[DatasetRecord], kit: &SteeringKit, method: Method, targets: &[Target]) -> Result<ExperimentResult> {
    if records.is_empty() {
        return Err(Error::contract("no instances to evaluate"));
    }
    let mut out = Vec::with_capacity(records.len() * targets.len());
    for rec in records {
        let prompt = encode_prompt(&rec.grid, None)?;
        // the unsteered output does not depend on the target
        let plain = if method == Method::None {
            Some(kit.run(&prompt, method, Target::Short)?)
        } else {
            None
        };
        for &target in targets {
            let res = match &plain {
                Some(p) => p.clone(),
                None => kit.run(&prompt, method, target)?,
            };
            out.push(InstanceRecord {
                id: rec.grid.id().to_string(),
                method,
                target,
                outcome: score_generation(&rec.grid, &rec.gold, &res.text, target),
                jsd: res.jsd,
                steps: res.trace.as_ref().map_or(0, |t| t.updates()),
                text: res.text,
            });
        }
    }
    Ok(ExperimentResult {
        metrics: aggregate(method, kit.layer(), &out),
        records: out,
    })
}

/// [`run_experiment`] once per kit, each kit built for a different layer.
pub fn layer_sweep(records: &[DatasetRecord], kits: &[SteeringKit], method: Method, targets: &[Target]) -> Result<Vec<RunMetrics>> {
    if kits.is_empty() {
        return Err(Error::contract("layer sweep over no layers"));
    }
    kits.iter()
        .map(|k| run_experiment(records, k, method, targets).map(|r| r.metrics))
        .collect()
}

/// One coder family for the drift comparison.
#[derive(Debug, Clone, Copy)]
pub struct DriftArm<'a> {
    pub kind: Regularizer,
    pub coefficient: f64,
    pub coders: &'a HeadCoders,
    pub protos: &'a PrototypeSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub target: Target,
    pub coefficient: f64,
    pub mean_l1: f64,
    pub mean_l2: f64,
    /// `mean_l2 / mean_l1`.
    pub ratio: f64,
    pub mean_steps_l1: f64,
    pub mean_steps_l2: f64,
    pub n: usize,
    /// Runs dropped because some non-target distance started at zero.
    pub excluded: usize,
}

/// Non-target drift of latent ascent under L1 and L2 coders, per (target, coefficient).
///
/// Starting points are the pooled codes of the model's own unsteered output.
pub fn drift_experiment(
    lm: &LmCheckpoint,
    records: &[DatasetRecord],
    arms: &[DriftArm],
    targets: &[Target],
    steer: &SteerConfig,
    max_new: usize,
) -> Result<Vec<DriftRow>> {
    let layer = arms.first().ok_or_else(|| Error::contract("no drift arms"))?.coders.layer;
    if arms.iter().any(|a| a.coders.layer != layer || a.protos.layer != layer) {
        return Err(Error::Config("drift arms disagree on the layer".into()));
    }
    let mut taps = Vec::with_capacity(records.len());
    for rec in records {
        let prompt = encode_prompt(&rec.grid, None)?;
        let mut seq = prompt.clone();
        seq.extend(lm.generate(&prompt, max_new, None)?);
        let opts = ForwardOptions {
            tap_layer: Some(layer),
            ..Default::default()
        };
        taps.push(lm.forward(&seq, &opts)?.tap.expect("tap requested"));
    }
    let mut coefficients: Vec<f64> = arms.iter().map(|a| a.coefficient).collect();
    coefficients.sort_by(f64::total_cmp);
    coefficients.dedup();
    let mut rows = Vec::new();
    for &target in targets {
        for &coefficient in &coefficients {
            let arm = |kind| arms.iter().find(|a| a.kind == kind && a.coefficient == coefficient);
            let (Some(l1), Some(l2)) = (arm(Regularizer::L1), arm(Regularizer::L2)) else {
                return Err(Error::Config(format!("coefficient {coefficient} lacks an L1 or L2 arm")));
            };
            let cfg = SteerConfig { target, ..*steer };
            let mut pairs = Vec::new();
            let mut excluded = 0;
            for tap in &taps {
                let run = |a: &DriftArm| -> Result<Option<(f64, usize)>> {
                    let z0 = pooled_latent(a.coders, tap)?;
                    let (_, trace) = steer_latent(&z0, a.protos, &cfg)?;
                    if trace.steps.len() < 2 {
                        return Ok(Some((0.0, 0)));
                    }
                    match non_target_drift(&trace) {
                        Ok(r) => Ok(Some((r.drift, r.steps))),
                        Err(Error::Contract(_)) => Ok(None),
                        Err(e) => Err(e),
                    }
                };
                match (run(l1)?, run(l2)?) {
                    (Some(a), Some(b)) => pairs.push((a, b)),
                    _ => excluded += 1,
                }
            }
            let n = pairs.len().max(1) as f64;
            let mean_l1 = pairs.iter().map(|p| p.0 .0).sum::<f64>() / n;
            let mean_l2 = pairs.iter().map(|p| p.1 .0).sum::<f64>() / n;
            rows.push(DriftRow {
                target,
                coefficient,
                mean_l1,
                mean_l2,
                ratio: mean_l2 / mean_l1,
                mean_steps_l1: pairs.iter().map(|p| p.0 .1 as f64).sum::<f64>() / n,
                mean_steps_l2: pairs.iter().map(|p| p.1 .1 as f64).sum::<f64>() / n,
                n: pairs.len(),
                excluded,
            });
        }
    }
    Ok(rows)
}

/// Query versus residual injection at equal perturbation norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalityReport {
    pub n: usize,
    pub mean_query_delta: f64,
    pub mean_residual_delta: f64,
    pub mean_query_jsd: f64,
    pub mean_residual_jsd: f64,
    /// Mean per-layer deviation for each arm.
    pub query_profile: Vec<f64>,
    pub residual_profile: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// For every record: the SAE-OPT query offset toward `target`, and the residual
/// mean-difference direction rescaled to the same norm, each injected at the kit's
/// layer over the prompt plus unsteered output. Deviations are averaged over layers
/// from the intervention site on; divergence is taken at the last prompt position.
pub fn locality_experiment(records: &[DatasetRecord], kit: &SteeringKit, target: Target) -> Result<LocalityReport> {
    let caa = kit.caa.as_ref().ok_or_else(|| Error::contract("residual vectors not prepared"))?;
    let dir = &caa[target.index()];
    let dir_norm = norm(dir);
    if dir_norm == 0.0 {
        return Err(Error::contract("residual direction is zero"));
    }
    let layer = kit.layer();
    let n_layers = kit.lm.config.n_layers;
    let mut acc = LocalityReport {
        n: 0,
        mean_query_delta: 0.0,
        mean_residual_delta: 0.0,
        mean_query_jsd: 0.0,
        mean_residual_jsd: 0.0,
        query_profile: vec![0.0; n_layers],
        residual_profile: vec![0.0; n_layers],
    };
    for rec in records {
        let prompt = encode_prompt(&rec.grid, None)?;
        let out = kit.run(&prompt, Method::SaeOpt, target)?;
        let q_norm = norm(&out.query_offset);
        if q_norm == 0.0 {
            continue;
        }
        let mut seq: Vec<TokenId> = prompt.clone();
        seq.extend(&out.initial);
        let residual: Vec<f64> = dir.iter().map(|v| v * q_norm / dir_norm).collect();
        let next = prompt.len() - 1;
        let run = |opts: ForwardOptions| -> Result<(Vec<Matrix>, Vec<f64>)> {
            let f = kit.lm.forward(
                &seq,
                &ForwardOptions {
                    record_residuals: true,
                    ..opts
                },
            )?;
            Ok((f.residuals.expect("requested"), f.logits.row(next).to_vec()))
        };
        let (base, base_logits) = run(ForwardOptions::default())?;
        let (q, q_logits) = run(ForwardOptions {
            query_edit: Some((
                layer,
                QueryEdit::Offset {
                    offset: &out.query_offset,
                    from: 0,
                },
            )),
            ..Default::default()
        })?;
        let (r, r_logits) = run(ForwardOptions {
            residual_edit: Some(ResidualEdit {
                layer,
                vector: &residual,
                from: 0,
            }),
            ..Default::default()
        })?;
        let qp = activation_deviation(&base, &q, layer)?;
        let rp = activation_deviation(&base, &r, layer)?;
        acc.n += 1;
        acc.mean_query_delta += qp.downstream_mean();
        acc.mean_residual_delta += rp.downstream_mean();
        acc.mean_query_jsd += next_token_jsd(&base_logits, &q_logits)?;
        acc.mean_residual_jsd += next_token_jsd(&base_logits, &r_logits)?;
        acc.query_profile.iter_mut().zip(&qp.deltas).for_each(|(a, b)| *a += b);
        acc.residual_profile.iter_mut().zip(&rp.deltas).for_each(|(a, b)| *a += b);
    }
    if acc.n == 0 {
        return Err(Error::contract("no instance produced a nonzero query offset"));
    }
    let k = acc.n as f64;
    acc.mean_query_delta /= k;
    acc.mean_residual_delta /= k;
    acc.mean_query_jsd /= k;
    acc.mean_residual_jsd /= k;
    acc.query_profile.iter_mut().chain(acc.residual_profile.iter_mut()).for_each(|v| *v /= k);
    Ok(acc)
}

/// Mean next-token divergence of SAE-OPT for each step size.
pub fn jsd_sweep(records: &[DatasetRecord], kit: &SteeringKit, target: Target, etas: &[f64]) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::with_capacity(etas.len());
    for &eta in etas {
        let k = SteeringKit {
            steer: SteerConfig { eta, ..kit.steer },
            ..kit.clone()
        };
        let mut total = 0.0;
        for rec in records {
            total += k.run(&encode_prompt(&rec.grid, None)?, Method::SaeOpt, target)?.jsd;
        }
        out.push((eta, total / records.len().max(1) as f64));
    }
    Ok(out)
}
