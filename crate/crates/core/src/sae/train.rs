use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::coder::{Regularizer, SaeLoss, SparseCoder};
use crate::gridworld::{DatasetRecord, Target};
use crate::numerics::{adam_step, AdamState, LrSchedule, Matrix};
use crate::tinylm::{encode_path, encode_prompt, ForwardOptions, LmCheckpoint};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaeConfig {
    pub kind: Regularizer,
    pub lambda: f64,
    pub beta: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub warmup_frac: f64,
    pub seed: u64,
}

impl Default for SaeConfig {
    fn default() -> Self {
        SaeConfig {
            kind: Regularizer::L1,
            lambda: 3e-3,
            beta: 1e-4,
            epochs: 40,
            lr: 3e-5,
            batch_size: 64,
            warmup_frac: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaeLog {
    pub epoch_losses: Vec<SaeLoss>,
    /// Largest `|norm - 1|` over live decoder columns at the end of each epoch.
    pub epoch_norm_error: Vec<f64>,
    /// Mean squared reconstruction error per dimension on the training corpus.
    pub mse: f64,
    /// Mean per-dimension variance of the corpus.
    pub variance: f64,
    /// Mean number of active latents per code.
    pub mean_l0: f64,
}

/// Per-head query vectors tapped at `layer` from untagged prompt + gold-path sequences.
///
/// Every position of every sequence contributes one vector per head. When the corpus
/// is larger than `max_per_head`, a seeded subsample is kept.
pub fn collect_query_corpus(lm: &LmCheckpoint, records: &[DatasetRecord], layer: usize, max_per_head: usize, seed: u64) -> Result<Vec<Matrix>> {
    if records.is_empty() {
        return Err(Error::contract("no records to tap"));
    }
    let (h, dh) = (lm.config.n_heads, lm.config.head_dim());
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); h];
    let opts = ForwardOptions {
        tap_layer: Some(layer),
        ..Default::default()
    };
    for rec in records {
        for t in Target::ALL {
            let mut toks = encode_prompt(&rec.grid, None)?;
            toks.extend(encode_path(rec.gold.path(t))?);
            let tap = lm.forward(&toks, &opts)?.tap.expect("tap requested");
            for (head, r) in rows.iter_mut().enumerate() {
                r.extend_from_slice(tap.head(head));
            }
        }
    }
    let n = rows[0].len() / dh;
    let mut idx: Vec<usize> = (0..n).collect();
    if n > max_per_head {
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(max_per_head);
        idx.sort_unstable();
    }
    rows.into_iter()
        .map(|r| {
            let data: Vec<f64> = idx.iter().flat_map(|&i| r[i * dh..(i + 1) * dh].iter().copied()).collect();
            Matrix::from_vec(idx.len(), dh, data)
        })
        .collect()
}

fn gather(corpus: &Matrix, idx: &[usize]) -> Matrix {
    let d = corpus.cols();
    let mut data = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        data.extend_from_slice(corpus.row(i));
    }
    Matrix::from_vec(idx.len(), d, data).expect("rows of a finite matrix")
}

/// Reconstruction statistics of `coder` on `corpus`: (mse per dimension, variance per dimension, mean L0).
pub fn reconstruction_stats(coder: &SparseCoder, corpus: &Matrix) -> Result<(f64, f64, f64)> {
    let (n, d) = corpus.shape();
    if n == 0 {
        return Err(Error::contract("empty corpus"));
    }
    let z = coder.encode_batch(corpus)?;
    let rec = coder.decode_batch(&z)?;
    let mse = rec.data().iter().zip(corpus.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (n * d) as f64;
    let mut var = 0.0;
    for j in 0..d {
        let mean = (0..n).map(|i| corpus.get(i, j)).sum::<f64>() / n as f64;
        var += (0..n).map(|i| (corpus.get(i, j) - mean).powi(2)).sum::<f64>() / n as f64;
    }
    let l0 = z.data().iter().filter(|v| **v > 0.0).count() as f64 / n as f64;
    Ok((mse, var / d as f64, l0))
}

/// Trains one head's coder with Adam under warm-up + cosine decay, renormalising
/// the decoder after every step.
pub fn train_sae(corpus: &Matrix, layer: usize, head: usize, cfg: &SaeConfig) -> Result<(SparseCoder, SaeLog)> {
    let n = corpus.rows();
    if n == 0 {
        return Err(Error::contract("empty activation corpus"));
    }
    if cfg.batch_size == 0 || cfg.lr.is_nan() || cfg.lr <= 0.0 || cfg.lambda < 0.0 || cfg.beta < 0.0 {
        return Err(Error::Config(
            "sae batch_size and lr must be positive, lambda and beta non-negative".into(),
        ));
    }
    let seed = cfg.seed ^ ((layer as u64) << 32) ^ head as u64;
    let mut coder = SparseCoder::init(layer, head, corpus.cols(), cfg.kind, cfg.lambda, cfg.beta, seed)?;
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let schedule = LrSchedule::new(cfg.lr, (total as f64 * cfg.warmup_frac) as usize, total)?;
    let mut params = coder.flat_params();
    let mut adam = AdamState::new(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut idx: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut epoch_norm_error = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        idx.shuffle(&mut rng);
        let mut acc = SaeLoss::default();
        for batch in idx.chunks(cfg.batch_size) {
            let (loss, g) = coder.loss_and_grads(&gather(corpus, batch))?;
            if !loss.total().is_finite() {
                return Err(Error::Divergence(format!("non-finite sae loss at step {step}")));
            }
            let grads = [g.w_e, g.b_e, g.w_d].concat();
            step += 1;
            adam_step(&mut params, &grads, &mut adam, schedule.lr_at(step))?;
            coder.set_flat_params(&params);
            coder.renormalize();
            params = coder.flat_params();
            acc.recon += loss.recon;
            acc.sparsity += loss.sparsity;
            acc.bias_decay += loss.bias_decay;
        }
        let k = steps_per_epoch as f64;
        epoch_losses.push(SaeLoss {
            recon: acc.recon / k,
            sparsity: acc.sparsity / k,
            bias_decay: acc.bias_decay / k,
        });
        let norms = coder.column_norms();
        let live = norms.iter().filter(|c| **c >= coder.gamma);
        let err = live.map(|c| (c - 1.0).abs()).fold(0.0, f64::max);
        if err > 1e-6 {
            return Err(Error::Divergence(format!(
                "decoder columns left the unit sphere in epoch {epoch} (error {err:e})"
            )));
        }
        epoch_norm_error.push(err);
    }
    let (mse, variance, mean_l0) = reconstruction_stats(&coder, corpus)?;
    Ok((
        coder,
        SaeLog {
            epoch_losses,
            epoch_norm_error,
            mse,
            variance,
            mean_l0,
        },
    ))
}
