use serde::{Deserialize, Serialize};

use super::optimize::{direct_center_assign, static_vector_sparse, steer_dense, steer_latent, SteerConfig};
use super::prototype::{pooled_latent, tap_sequence, PrototypeSet, Space, SupportExample};
use super::trace::SteerTrace;
use crate::diagnostics::next_token_jsd;
use crate::gridworld::Target;
use crate::sae::HeadCoders;
use crate::tinylm::{encode_path, encode_prompt, ForwardOptions, Intervention, LmCheckpoint, QueryEdit, QueryTap, ResidualEdit, TokenId, Vocab};
use crate::{Error, Result};

/// Every steering arm compared by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Plain greedy generation.
    None,
    SaeOpt,
    SaeOptAnch,
    DenseOpt,
    SaeSsv,
    DiscoQ,
    Caa,
    DirectCenter,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::None,
        Method::SaeOpt,
        Method::SaeOptAnch,
        Method::DenseOpt,
        Method::SaeSsv,
        Method::DiscoQ,
        Method::Caa,
        Method::DirectCenter,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::SaeOpt => "sae-opt",
            Method::SaeOptAnch => "sae-opt-anch",
            Method::DenseOpt => "dense-opt",
            Method::SaeSsv => "sae-ssv",
            Method::DiscoQ => "disco-q",
            Method::Caa => "caa",
            Method::DirectCenter => "direct-center",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

fn mean_rows<'a>(rows: impl Iterator<Item = &'a [f64]>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    let mut n = 0;
    for r in rows {
        if out.is_empty() {
            out = vec![0.0; r.len()];
        }
        out.iter_mut().zip(r).for_each(|(o, v)| *o += v);
        n += 1;
    }
    out.iter_mut().for_each(|o| *o /= n as f64);
    out
}

fn mean_difference(pos: &[Vec<f64>], neg: &[Vec<f64>]) -> Vec<f64> {
    let p = mean_rows(pos.iter().map(Vec::as_slice));
    let n = mean_rows(neg.iter().map(Vec::as_slice));
    p.iter().zip(&n).map(|(a, b)| a - b).collect()
}

/// Position-mean residual stream after block `layer` over prompt + path.
pub fn pooled_residual(lm: &LmCheckpoint, ex: &SupportExample, layer: usize) -> Result<Vec<f64>> {
    let mut toks = encode_prompt(&ex.grid, None)?;
    toks.extend(encode_path(&ex.path)?);
    let out = lm.forward(
        &toks,
        &ForwardOptions {
            record_residuals: true,
            ..Default::default()
        },
    )?;
    let res = &out.residuals.expect("residuals requested")[layer];
    Ok(mean_rows((0..res.rows()).map(|t| res.row(t))))
}

/// Positive-minus-negative mean of pooled residuals, `d_model` wide.
pub fn static_vector_caa(positive: &[SupportExample], negative: &[SupportExample], lm: &LmCheckpoint, layer: usize) -> Result<Vec<f64>> {
    if positive.is_empty() || negative.is_empty() {
        return Err(Error::contract("residual mean difference needs both supports"));
    }
    let p = positive.iter().map(|e| pooled_residual(lm, e, layer)).collect::<Result<Vec<_>>>()?;
    let n = negative.iter().map(|e| pooled_residual(lm, e, layer)).collect::<Result<Vec<_>>>()?;
    Ok(mean_difference(&p, &n))
}

/// Per-head positive-minus-negative mean of pooled raw queries, `n_heads * head_dim` wide.
pub fn static_vector_query(positive: &[SupportExample], negative: &[SupportExample], lm: &LmCheckpoint, layer: usize) -> Result<Vec<f64>> {
    if positive.is_empty() || negative.is_empty() {
        return Err(Error::contract("query mean difference needs both supports"));
    }
    let pool = |e: &SupportExample| tap_sequence(lm, &e.grid, &e.path, layer).map(|t| t.position_mean());
    let p = positive.iter().map(pool).collect::<Result<Vec<_>>>()?;
    let n = negative.iter().map(pool).collect::<Result<Vec<_>>>()?;
    Ok(mean_difference(&p, &n))
}

/// Maps a head-concatenated latent offset to a query offset through each normalised decoder.
pub fn latent_offset_to_queries(coders: &HeadCoders, delta: &[f64]) -> Result<Vec<f64>> {
    let l = coders.latent_dim();
    if delta.len() != coders.n_heads() * l {
        return Err(Error::shape(format!(
            "latent offset of {} values, expected {}",
            delta.len(),
            coders.n_heads() * l
        )));
    }
    let mut out = Vec::with_capacity(coders.n_heads() * coders.head_dim());
    for (h, c) in coders.coders.iter().enumerate() {
        out.extend(c.decode(&delta[h * l..(h + 1) * l])?);
    }
    Ok(out)
}

/// Everything the steering arms need, built once per experiment.
#[derive(Debug, Clone)]
pub struct SteeringKit<'a> {
    pub lm: &'a LmCheckpoint,
    pub coders: &'a HeadCoders,
    pub protos: &'a PrototypeSet,
    pub dense_protos: Option<&'a PrototypeSet>,
    /// Residual mean differences per target (indexed by `Target::index`).
    pub caa: Option<Vec<Vec<f64>>>,
    /// Raw-query mean differences per target.
    pub disco: Option<Vec<Vec<f64>>>,
    pub steer: SteerConfig,
    pub anchor: f64,
    pub ssv_alpha: f64,
    pub caa_coeff: f64,
    pub disco_coeff: f64,
    pub max_new: usize,
}

/// Result of one (prompt, method, target) generation.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeredOutput {
    /// Unsteered continuation used to define the optimised span.
    pub initial: Vec<TokenId>,
    pub tokens: Vec<TokenId>,
    pub text: String,
    pub trace: Option<SteerTrace>,
    /// Query offset added at the intervention layer (empty when the method does not touch queries).
    pub query_offset: Vec<f64>,
    /// Divergence between the plain and intervened next-token distributions after the prompt.
    pub jsd: f64,
}

impl<'a> SteeringKit<'a> {
    pub fn new(lm: &'a LmCheckpoint, coders: &'a HeadCoders, protos: &'a PrototypeSet, steer: SteerConfig, max_new: usize) -> Result<Self> {
        if protos.space != Space::Latent || protos.layer != coders.layer {
            return Err(Error::contract("prototypes must be latent-space centers at the coders' layer"));
        }
        if protos.dim() != coders.n_heads() * coders.latent_dim() {
            return Err(Error::shape("prototype width does not match the coders"));
        }
        steer.validate()?;
        Ok(SteeringKit {
            lm,
            coders,
            protos,
            dense_protos: None,
            caa: None,
            disco: None,
            steer,
            anchor: 1.0,
            ssv_alpha: 1.0,
            caa_coeff: 1.0,
            disco_coeff: 1.0,
            max_new,
        })
    }

    /// Computes dense prototypes and both static vectors from `support`.
    pub fn with_baselines(mut self, support: &[SupportExample], dense_protos: &'a PrototypeSet) -> Result<Self> {
        let layer = self.coders.layer;
        let mut caa = Vec::new();
        let mut disco = Vec::new();
        for t in Target::ALL {
            let (pos, neg): (Vec<SupportExample>, Vec<SupportExample>) = support.iter().cloned().partition(|e| e.class == t.index());
            caa.push(static_vector_caa(&pos, &neg, self.lm, layer)?);
            disco.push(static_vector_query(&pos, &neg, self.lm, layer)?);
        }
        self.dense_protos = Some(dense_protos);
        self.caa = Some(caa);
        self.disco = Some(disco);
        Ok(self)
    }

    pub fn layer(&self) -> usize {
        self.coders.layer
    }

    /// Unsteered continuation and the queries tapped over prompt + continuation.
    fn initial_pass(&self, prompt: &[TokenId]) -> Result<(Vec<TokenId>, QueryTap)> {
        let initial = self.lm.generate(prompt, self.max_new, None)?;
        let mut seq = prompt.to_vec();
        seq.extend(&initial);
        let opts = ForwardOptions {
            tap_layer: Some(self.layer()),
            ..Default::default()
        };
        let tap = self.lm.forward(&seq, &opts)?.tap.expect("tap requested");
        Ok((initial, tap))
    }

    fn finish(
        &self,
        prompt: &[TokenId],
        initial: Vec<TokenId>,
        intervention: Option<Intervention>,
        trace: Option<SteerTrace>,
        query_offset: Vec<f64>,
    ) -> Result<SteeredOutput> {
        let (tokens, jsd) = match intervention {
            None => (initial.clone(), 0.0),
            Some(iv) => (self.lm.generate(prompt, self.max_new, Some(iv))?, self.prompt_jsd(prompt, iv)?),
        };
        Ok(SteeredOutput {
            initial,
            text: Vocab::get().detokenize(&tokens),
            tokens,
            trace,
            query_offset,
            jsd,
        })
    }

    fn prompt_jsd(&self, prompt: &[TokenId], iv: Intervention) -> Result<f64> {
        let last = prompt.len() - 1;
        let base = self.lm.forward(prompt, &ForwardOptions::default())?;
        let steered = self.lm.forward(prompt, &iv.options())?;
        next_token_jsd(base.logits.row(last), steered.logits.row(last))
    }

    fn query_run(&self, prompt: &[TokenId], initial: Vec<TokenId>, offset: Vec<f64>, trace: Option<SteerTrace>) -> Result<SteeredOutput> {
        let iv = Intervention::Query {
            layer: self.layer(),
            edit: QueryEdit::Offset { offset: &offset, from: 0 },
        };
        let tokens = self.lm.generate(prompt, self.max_new, Some(iv))?;
        let jsd = self.prompt_jsd(prompt, iv)?;
        Ok(SteeredOutput {
            initial,
            text: Vocab::get().detokenize(&tokens),
            tokens,
            trace,
            query_offset: offset,
            jsd,
        })
    }

    /// Latent-space arms: pooled code of the initial response, ascent (or a fixed move),
    /// then the uniform latent offset is decoded and added to the model's own queries.
    fn latent_run(&self, prompt: &[TokenId], method: Method, target: Target) -> Result<SteeredOutput> {
        let (initial, tap) = self.initial_pass(prompt)?;
        let z0 = pooled_latent(self.coders, &tap)?;
        let cfg = SteerConfig { target, ..self.steer };
        let (z_star, trace) = match method {
            Method::SaeOpt => {
                let (z, t) = steer_latent(&z0, self.protos, &SteerConfig { anchor: None, ..cfg })?;
                (z, Some(t))
            }
            Method::SaeOptAnch => {
                let (z, t) = steer_latent(
                    &z0,
                    self.protos,
                    &SteerConfig {
                        anchor: Some(self.anchor),
                        ..cfg
                    },
                )?;
                (z, Some(t))
            }
            Method::DirectCenter => (direct_center_assign(self.protos, target.index())?, None),
            Method::SaeSsv => {
                let v = static_vector_sparse(self.protos, target.index())?;
                (z0.iter().zip(&v).map(|(z, d)| z + self.ssv_alpha * d).collect(), None)
            }
            other => return Err(Error::contract(format!("{other} is not a latent-space method"))),
        };
        let delta: Vec<f64> = z_star.iter().zip(&z0).map(|(a, b)| a - b).collect();
        let offset = latent_offset_to_queries(self.coders, &delta)?;
        self.query_run(prompt, initial, offset, trace)
    }

    /// Runs one arm on an untagged prompt.
    pub fn run(&self, prompt: &[TokenId], method: Method, target: Target) -> Result<SteeredOutput> {
        match method {
            Method::None => {
                let initial = self.lm.generate(prompt, self.max_new, None)?;
                self.finish(prompt, initial, None, None, Vec::new())
            }
            Method::SaeOpt | Method::SaeOptAnch | Method::DirectCenter | Method::SaeSsv => self.latent_run(prompt, method, target),
            Method::DenseOpt => {
                let dense = self.dense_protos.ok_or_else(|| Error::contract("dense prototypes not prepared"))?;
                let (initial, tap) = self.initial_pass(prompt)?;
                let s0 = tap.position_mean();
                let (s_star, trace) = steer_dense(
                    &s0,
                    dense,
                    &SteerConfig {
                        target,
                        anchor: None,
                        ..self.steer
                    },
                )?;
                let offset = s_star.iter().zip(&s0).map(|(a, b)| a - b).collect();
                self.query_run(prompt, initial, offset, Some(trace))
            }
            Method::DiscoQ => {
                let disco = self.disco.as_ref().ok_or_else(|| Error::contract("query vectors not prepared"))?;
                let offset = disco[target.index()].iter().map(|v| self.disco_coeff * v).collect();
                self.query_run(prompt, Vec::new(), offset, None)
            }
            Method::Caa => {
                let caa = self.caa.as_ref().ok_or_else(|| Error::contract("residual vectors not prepared"))?;
                let v: Vec<f64> = caa[target.index()].iter().map(|x| self.caa_coeff * x).collect();
                let iv = Intervention::Residual(ResidualEdit {
                    layer: self.layer(),
                    vector: &v,
                    from: prompt.len().saturating_sub(1),
                });
                self.finish(prompt, Vec::new(), Some(iv), None, Vec::new())
            }
        }
    }
}

/// SAE-OPT on one prompt: plain generation, tap, encode, ascend, decode and regenerate.
pub fn steered_generate(
    lm: &LmCheckpoint,
    coders: &HeadCoders,
    protos: &PrototypeSet,
    prompt: &[TokenId],
    cfg: &SteerConfig,
    max_new: usize,
) -> Result<SteeredOutput> {
    let kit = SteeringKit::new(lm, coders, protos, *cfg, max_new)?;
    let method = if cfg.anchor.is_some() { Method::SaeOptAnch } else { Method::SaeOpt };
    let kit = SteeringKit {
        anchor: cfg.anchor.unwrap_or(0.0),
        ..kit
    };
    kit.run(prompt, method, cfg.target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::steering::{compute_dense_prototypes, support_from_records};
    use crate::testutil::{coders, Fixture};

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert_eq!("sae_opt".parse::<Method>().unwrap_err().kind(), "config");
    }

    #[test]
    fn zero_step_size_reproduces_plain_generation() {
        let f = Fixture::new();
        let kit = f.kit(0.0);
        for rec in &f.records[..5] {
            let prompt = encode_prompt(&rec.grid, None).unwrap();
            let plain = kit.run(&prompt, Method::None, Target::Safe).unwrap();
            let steered = kit.run(&prompt, Method::SaeOpt, Target::Safe).unwrap();
            assert_eq!(steered.tokens, plain.tokens);
            assert_eq!(steered.text, plain.text);
            assert!(steered.query_offset.iter().all(|v| *v == 0.0));
            assert_eq!(steered.jsd, 0.0);
        }
    }

    #[test]
    fn steered_wrapper_matches_the_kit() {
        let f = Fixture::new();
        let cfg = SteerConfig {
            target: Target::Long,
            max_steps: 40,
            ..SteerConfig::default()
        };
        let prompt = encode_prompt(&f.records[0].grid, None).unwrap();
        let a = steered_generate(&f.lm, &f.coders, &f.protos, &prompt, &cfg, 10).unwrap();
        let b = f.kit(0.5).run(&prompt, Method::SaeOpt, Target::Long).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn equal_supports_give_zero_static_vectors() {
        let f = Fixture::new();
        let support = support_from_records(&f.records[..3]);
        assert!(static_vector_caa(&support, &support, &f.lm, 1).unwrap().iter().all(|v| *v == 0.0));
        assert!(static_vector_query(&support, &support, &f.lm, 1).unwrap().iter().all(|v| *v == 0.0));
        assert!(static_vector_caa(&support, &[], &f.lm, 1).is_err());
    }

    #[test]
    fn zero_latent_offset_decodes_to_zero() {
        let f = Fixture::new();
        let w = f.coders.n_heads() * f.coders.latent_dim();
        let q = latent_offset_to_queries(&f.coders, &vec![0.0; w]).unwrap();
        assert_eq!(q, vec![0.0; f.lm.config.d_model]);
        assert_eq!(latent_offset_to_queries(&f.coders, &[1.0]).unwrap_err().kind(), "shape");
    }

    #[test]
    fn every_arm_runs_once_baselines_exist() {
        let f = Fixture::new();
        let support = support_from_records(&f.records);
        let dense = compute_dense_prototypes(&support, &f.lm, 1).unwrap();
        let kit = f.kit(0.5).with_baselines(&support, &dense).unwrap();
        let prompt = encode_prompt(&f.records[1].grid, None).unwrap();
        for m in Method::ALL {
            let out = kit.run(&prompt, m, Target::Short).unwrap();
            assert_eq!(out.text, Vocab::get().detokenize(&out.tokens));
            assert!(out.tokens.len() <= 10);
            assert!(out.jsd >= 0.0);
            assert_eq!(
                out.trace.is_some(),
                matches!(m, Method::SaeOpt | Method::SaeOptAnch | Method::DenseOpt),
                "{m}"
            );
        }
    }

    #[test]
    fn baseline_arms_need_preparation() {
        let f = Fixture::new();
        let prompt = encode_prompt(&f.records[0].grid, None).unwrap();
        for m in [Method::DenseOpt, Method::Caa, Method::DiscoQ] {
            assert_eq!(f.kit(0.5).run(&prompt, m, Target::Safe).unwrap_err().kind(), "contract");
        }
    }

    #[test]
    fn mismatched_components_are_rejected() {
        let f = Fixture::new();
        let other = coders(&f.lm, 0, 1);
        assert!(SteeringKit::new(&f.lm, &other, &f.protos, SteerConfig::default(), 5).is_err());
        let dense = compute_dense_prototypes(&support_from_records(&f.records), &f.lm, 1).unwrap();
        assert!(SteeringKit::new(&f.lm, &f.coders, &dense, SteerConfig::default(), 5).is_err());
        let bad = SteerConfig {
            epsilon: 0.0,
            ..SteerConfig::default()
        };
        assert_eq!(SteeringKit::new(&f.lm, &f.coders, &f.protos, bad, 5).unwrap_err().kind(), "config");
    }
}
