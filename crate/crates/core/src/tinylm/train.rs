use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::LmConfig;
use super::model::LmCheckpoint;
use super::model::{ForwardOptions, QueryEdit};
use super::vocab::{TokenId, Vocab, ARROW, BOS, EOS, NEWLINE};
use crate::gridworld::{render_prompt, DatasetRecord, Grid, Path, Target};
use crate::numerics::{adam_step, masked_cross_entropy, AdamState, LrSchedule};
use crate::{Error, Result};

/// `[BOS, tag?, prompt tokens.., NEWLINE]`; the model continues with a path.
pub fn encode_prompt(grid: &Grid, tag: Option<Target>) -> Result<Vec<TokenId>> {
    let mut out = vec![BOS];
    out.extend(tag.map(Vocab::tag));
    out.extend(Vocab::get().tokenize(&render_prompt(grid))?);
    out.push(NEWLINE);
    Ok(out)
}

/// Cell tokens joined by `->`, without EOS.
pub fn encode_path(path: &Path) -> Result<Vec<TokenId>> {
    let mut out = Vec::with_capacity(2 * path.len());
    for (i, c) in path.cells().iter().enumerate() {
        if i > 0 {
            out.push(ARROW);
        }
        out.push(Vocab::cell(c.row, c.col).ok_or_else(|| Error::contract(format!("no token for cell {c}")))?);
    }
    Ok(out)
}

/// A training sequence; positions predicting `tokens[loss_from..]` carry loss.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LmExample {
    pub tokens: Vec<TokenId>,
    pub loss_from: usize,
}

impl LmExample {
    pub fn new(grid: &Grid, path: &Path, tag: Option<Target>) -> Result<Self> {
        let mut tokens = encode_prompt(grid, tag)?;
        let loss_from = tokens.len();
        tokens.extend(encode_path(path)?);
        tokens.push(EOS);
        Ok(LmExample { tokens, loss_from })
    }

    /// Next-token targets for every position, `None` outside the path region.
    pub fn targets(&self) -> Vec<Option<usize>> {
        (0..self.tokens.len())
            .map(|t| (t + 1 >= self.loss_from && t + 1 < self.tokens.len()).then(|| self.tokens[t + 1] as usize))
            .collect()
    }
}

/// Which untagged copies are added next to the tagged sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UntaggedMix {
    None,
    /// One untagged copy per record with a gold type drawn at random.
    OnePerRecord,
    /// Untagged copies of all three gold paths.
    AllTargets,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub epochs: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub lr: f64,
    /// Fraction of all steps spent in linear warm-up.
    pub warmup_frac: f64,
    pub clip_norm: f64,
    pub untagged: UntaggedMix,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 4,
            seed: 0,
            batch_size: 16,
            lr: 3e-3,
            warmup_frac: 0.05,
            clip_norm: 1.0,
            untagged: UntaggedMix::OnePerRecord,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean masked loss over the whole training set before the first update.
    pub initial_loss: f64,
    /// Mean batch loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

pub fn build_examples(records: &[DatasetRecord], mix: UntaggedMix, seed: u64) -> Result<Vec<LmExample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e_ed0f_7a65);
    let mut out = Vec::new();
    for rec in records {
        for t in Target::ALL {
            out.push(LmExample::new(&rec.grid, rec.gold.path(t), Some(t))?);
        }
        match mix {
            UntaggedMix::None => {}
            UntaggedMix::OnePerRecord => {
                let t = *Target::ALL.choose(&mut rng).expect("three targets");
                out.push(LmExample::new(&rec.grid, rec.gold.path(t), None)?);
            }
            UntaggedMix::AllTargets => {
                for t in Target::ALL {
                    out.push(LmExample::new(&rec.grid, rec.gold.path(t), None)?);
                }
            }
        }
    }
    Ok(out)
}

impl LmCheckpoint {
    /// Masked loss of one example and, optionally, its gradient added into `grads`.
    pub fn example_loss(&self, ex: &LmExample, grads: Option<&mut [f64]>) -> Result<f64> {
        let targets = ex.targets();
        match grads {
            None => {
                let out = self.forward(&ex.tokens, &Default::default())?;
                Ok(masked_cross_entropy(&out.logits, &targets)?.0)
            }
            Some(g) => {
                let mut cache = LmCheckpoint::empty_cache();
                let out = self.forward_impl(&ex.tokens, &Default::default(), Some(&mut cache))?;
                let (loss, dlogits) = masked_cross_entropy(&out.logits, &targets)?;
                self.backward(&cache, &dlogits, g);
                Ok(loss)
            }
        }
    }

    /// Masked loss of `ex` and its gradient with respect to a query offset added at `layer` from position `from` on.
    pub fn query_offset_grad(&self, ex: &LmExample, layer: usize, offset: &[f64], from: usize) -> Result<(f64, Vec<f64>)> {
        let targets = ex.targets();
        let mut cache = LmCheckpoint::empty_cache();
        let opts = ForwardOptions {
            query_edit: Some((layer, QueryEdit::Offset { offset, from })),
            ..Default::default()
        };
        let out = self.forward_impl(&ex.tokens, &opts, Some(&mut cache))?;
        let (loss, dlogits) = masked_cross_entropy(&out.logits, &targets)?;
        let mut scratch = vec![0.0; self.params.len()];
        let mut dq = Vec::new();
        self.backward_tapped(&cache, &dlogits, &mut scratch, Some((layer, &mut dq)));
        let d = self.config.d_model;
        let mut g = vec![0.0; d];
        for row in dq.chunks(d).skip(from) {
            g.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
        Ok((loss, g))
    }

    /// Mean masked loss over `examples`.
    pub fn mean_loss(&self, examples: &[LmExample]) -> Result<f64> {
        if examples.is_empty() {
            return Err(Error::contract("mean loss over no examples"));
        }
        let mut total = 0.0;
        for ex in examples {
            total += self.example_loss(ex, None)?;
        }
        Ok(total / examples.len() as f64)
    }
}

/// Trains a fresh model on tagged (and optionally untagged) prompt/path sequences.
pub fn train_lm(records: &[DatasetRecord], config: LmConfig, opts: &TrainOptions) -> Result<(LmCheckpoint, TrainLog)> {
    if records.is_empty() {
        return Err(Error::contract("training set is empty"));
    }
    if opts.batch_size == 0 || opts.lr.is_nan() || opts.lr <= 0.0 || !(0.0..1.0).contains(&opts.warmup_frac) {
        return Err(Error::Config("batch_size must be positive, lr > 0, warmup_frac in [0, 1)".into()));
    }
    let mut model = LmCheckpoint::init(config, opts.seed)?;
    let mut examples = build_examples(records, opts.untagged, opts.seed)?;
    if let Some(ex) = examples.iter().find(|e| e.tokens.len() > config.context_len) {
        return Err(Error::contract(format!(
            "sequence of {} tokens exceeds context {}",
            ex.tokens.len(),
            config.context_len
        )));
    }
    let initial_loss = model.mean_loss(&examples)?;
    let steps_per_epoch = examples.len().div_ceil(opts.batch_size);
    let total = steps_per_epoch * opts.epochs;
    let schedule = LrSchedule::new(opts.lr, (total as f64 * opts.warmup_frac) as usize, total)?;
    let mut adam = AdamState::new(model.param_count());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(1));
    let mut grads = vec![0.0; model.param_count()];
    let mut epoch_losses = Vec::with_capacity(opts.epochs);
    let mut step = 0;
    for _ in 0..opts.epochs {
        examples.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in examples.chunks(opts.batch_size) {
            grads.fill(0.0);
            let mut loss = 0.0;
            for ex in batch {
                loss += model.example_loss(ex, Some(&mut grads))?;
            }
            let inv = 1.0 / batch.len() as f64;
            loss *= inv;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("non-finite loss at step {step}")));
            }
            grads.iter_mut().for_each(|g| *g *= inv);
            clip_global_norm(&mut grads, opts.clip_norm);
            step += 1;
            adam_step(model.params_mut(), &grads, &mut adam, schedule.lr_at(step))?;
            epoch_loss += loss;
        }
        epoch_losses.push(epoch_loss / steps_per_epoch as f64);
    }
    Ok((
        model,
        TrainLog {
            initial_loss,
            epoch_losses,
            steps: step,
        },
    ))
}

fn clip_global_norm(g: &mut [f64], max_norm: f64) {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm && max_norm > 0.0 {
        let s = max_norm / norm;
        g.iter_mut().for_each(|v| *v *= s);
    }
}
