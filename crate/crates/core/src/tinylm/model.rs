//! Pre-norm decoder-only transformer with hand-written backward pass.
//!
//! Parameters live in one flat `Vec<f64>`; [`Layout`] maps tensor names to ranges.
//! Row-major weight matrices are applied on the right: `y = x W` with `x` of shape
//! `positions x in` and `W` of shape `in x out`.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::LmConfig;
use super::vocab::{TokenId, Vocab};
use crate::numerics::{gemm, Matrix};
use crate::{Error, Result};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct LayerOffsets {
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    pub wq: Range<usize>,
    pub wk: Range<usize>,
    pub wv: Range<usize>,
    pub wo: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
}

/// Offsets of every tensor inside the flat parameter vector, in storage order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub(crate) wte: Range<usize>,
    pub(crate) wpe: Range<usize>,
    pub(crate) layers: Vec<LayerOffsets>,
    pub(crate) lnf_g: Range<usize>,
    pub(crate) lnf_b: Range<usize>,
    pub(crate) w_out: Range<usize>,
    tensors: Vec<(String, Vec<usize>)>,
    total: usize,
}

impl Layout {
    pub fn new(cfg: &LmConfig, vocab: usize) -> Self {
        let (d, f) = (cfg.d_model, cfg.ff_dim());
        let mut tensors = Vec::new();
        let mut cursor = 0;
        let mut take = |name: String, shape: Vec<usize>| {
            let n: usize = shape.iter().product();
            let r = cursor..cursor + n;
            cursor += n;
            tensors.push((name, shape));
            r
        };
        let wte = take("wte".into(), vec![vocab, d]);
        let wpe = take("wpe".into(), vec![cfg.context_len, d]);
        let layers = (0..cfg.n_layers)
            .map(|l| LayerOffsets {
                ln1_g: take(format!("h{l}.ln1.g"), vec![d]),
                ln1_b: take(format!("h{l}.ln1.b"), vec![d]),
                wq: take(format!("h{l}.attn.wq"), vec![d, d]),
                wk: take(format!("h{l}.attn.wk"), vec![d, d]),
                wv: take(format!("h{l}.attn.wv"), vec![d, d]),
                wo: take(format!("h{l}.attn.wo"), vec![d, d]),
                ln2_g: take(format!("h{l}.ln2.g"), vec![d]),
                ln2_b: take(format!("h{l}.ln2.b"), vec![d]),
                w1: take(format!("h{l}.mlp.w1"), vec![d, f]),
                b1: take(format!("h{l}.mlp.b1"), vec![f]),
                w2: take(format!("h{l}.mlp.w2"), vec![f, d]),
                b2: take(format!("h{l}.mlp.b2"), vec![d]),
            })
            .collect();
        let lnf_g = take("lnf.g".into(), vec![d]);
        let lnf_b = take("lnf.b".into(), vec![d]);
        let w_out = take("w_out".into(), vec![d, vocab]);
        Layout {
            wte,
            wpe,
            layers,
            lnf_g,
            lnf_b,
            w_out,
            tensors,
            total: cursor,
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// `(name, shape)` of every tensor in storage order.
    pub fn tensors(&self) -> &[(String, Vec<usize>)] {
        &self.tensors
    }
}

/// Per-head query activations of one layer, stored head-major: `[head][position][dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryTap {
    pub layer: usize,
    pub n_heads: usize,
    pub positions: usize,
    pub head_dim: usize,
    pub data: Vec<f64>,
}

impl QueryTap {
    pub fn zeros(layer: usize, n_heads: usize, positions: usize, head_dim: usize) -> Self {
        QueryTap {
            layer,
            n_heads,
            positions,
            head_dim,
            data: vec![0.0; n_heads * positions * head_dim],
        }
    }

    /// All positions of one head, `positions x head_dim` row-major.
    pub fn head(&self, h: usize) -> &[f64] {
        let n = self.positions * self.head_dim;
        &self.data[h * n..(h + 1) * n]
    }

    pub fn head_mut(&mut self, h: usize) -> &mut [f64] {
        let n = self.positions * self.head_dim;
        &mut self.data[h * n..(h + 1) * n]
    }

    pub fn vector(&self, h: usize, t: usize) -> &[f64] {
        let start = (h * self.positions + t) * self.head_dim;
        &self.data[start..start + self.head_dim]
    }

    /// Mean over positions for every head, concatenated (`n_heads * head_dim`).
    pub fn position_mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_heads * self.head_dim];
        for h in 0..self.n_heads {
            for t in 0..self.positions {
                for (o, v) in out[h * self.head_dim..(h + 1) * self.head_dim].iter_mut().zip(self.vector(h, t)) {
                    *o += v;
                }
            }
        }
        let inv = 1.0 / self.positions.max(1) as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        out
    }
}

/// How the queries of the intervention layer are modified.
#[derive(Debug, Clone, Copy)]
pub enum QueryEdit<'a> {
    /// Queries at positions `0..tap.positions` are replaced by the tap; later positions keep their own.
    Replace(&'a QueryTap),
    /// `offset` (`n_heads * head_dim`, head-major) is added to every query at positions `>= from`.
    Offset { offset: &'a [f64], from: usize },
}

/// Adds `vector` to the residual stream after block `layer`, at positions `>= from`.
#[derive(Debug, Clone, Copy)]
pub struct ResidualEdit<'a> {
    pub layer: usize,
    pub vector: &'a [f64],
    pub from: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOptions<'a> {
    pub tap_layer: Option<usize>,
    /// Keep the post-block residual stream of every layer.
    pub record_residuals: bool,
    /// Keep the attention probabilities of this layer.
    pub attention_layer: Option<usize>,
    pub query_edit: Option<(usize, QueryEdit<'a>)>,
    pub residual_edit: Option<ResidualEdit<'a>>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `positions x vocab`.
    pub logits: Matrix,
    pub tap: Option<QueryTap>,
    /// One `positions x d_model` matrix per layer.
    pub residuals: Option<Vec<Matrix>>,
    /// One `positions x positions` matrix per head.
    pub attention: Option<Vec<Matrix>>,
}

struct LayerCache {
    x_in: Vec<f64>,
    ln1: Vec<f64>,
    mean1: Vec<f64>,
    rstd1: Vec<f64>,
    qh: Vec<f64>,
    kh: Vec<f64>,
    vh: Vec<f64>,
    att: Vec<f64>,
    o: Vec<f64>,
    x_mid: Vec<f64>,
    ln2: Vec<f64>,
    mean2: Vec<f64>,
    rstd2: Vec<f64>,
    h_pre: Vec<f64>,
    h_act: Vec<f64>,
}

pub(crate) struct Cache {
    tokens: Vec<TokenId>,
    layers: Vec<LayerCache>,
    x_final: Vec<f64>,
    lnf: Vec<f64>,
    meanf: Vec<f64>,
    rstdf: Vec<f64>,
}

/// Trained (or freshly initialised) model parameters plus their shape.
#[derive(Debug, Clone, PartialEq)]
pub struct LmCheckpoint {
    pub config: LmConfig,
    pub(crate) layout: Layout,
    pub(crate) params: Vec<f64>,
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64], rows: usize, d: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut out = vec![0.0; rows * d];
    let mut means = vec![0.0; rows];
    let mut rstds = vec![0.0; rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rstd = 1.0 / (var + LN_EPS).sqrt();
        for i in 0..d {
            out[r * d + i] = (xr[i] - mean) * rstd * g[i] + b[i];
        }
        means[r] = mean;
        rstds[r] = rstd;
    }
    (out, means, rstds)
}

/// Accumulates parameter gradients and returns `dx`.
#[allow(clippy::too_many_arguments)]
fn layer_norm_backward(
    dy: &[f64],
    x: &[f64],
    mean: &[f64],
    rstd: &[f64],
    g: &[f64],
    dg: &mut [f64],
    db: &mut [f64],
    rows: usize,
    d: usize,
) -> Vec<f64> {
    let mut dx = vec![0.0; rows * d];
    let mut xhat = vec![0.0; d];
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let (xr, dyr) = (&x[r * d..(r + 1) * d], &dy[r * d..(r + 1) * d]);
        for i in 0..d {
            xhat[i] = (xr[i] - mean[r]) * rstd[r];
            dxhat[i] = dyr[i] * g[i];
            dg[i] += dyr[i] * xhat[i];
            db[i] += dyr[i];
        }
        let m1 = dxhat.iter().sum::<f64>() / d as f64;
        let m2 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for i in 0..d {
            dx[r * d + i] = rstd[r] * (dxhat[i] - m1 - xhat[i] * m2);
        }
    }
    dx
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// `a (m x k) * b (k x n)`.
fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    gemm(m, k, n, 1.0, a, false, b, false, 0.0, &mut c);
    c
}

/// Row-major `t x d` into head-major `h x t x dh`.
fn split_heads(x: &[f64], t: usize, h: usize, dh: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for head in 0..h {
        for pos in 0..t {
            let src = &x[pos * h * dh + head * dh..pos * h * dh + (head + 1) * dh];
            out[(head * t + pos) * dh..(head * t + pos + 1) * dh].copy_from_slice(src);
        }
    }
    out
}

fn merge_heads(x: &[f64], t: usize, h: usize, dh: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for head in 0..h {
        for pos in 0..t {
            let src = &x[(head * t + pos) * dh..(head * t + pos + 1) * dh];
            out[pos * h * dh + head * dh..pos * h * dh + (head + 1) * dh].copy_from_slice(src);
        }
    }
    out
}

impl LmCheckpoint {
    /// Fresh model: normal weights with `1/sqrt(fan_in)` scale, residual projections
    /// additionally shrunk by `1/sqrt(2 n_layers)`, unit layer-norm gains.
    pub fn init(config: LmConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let vocab = Vocab::get().len();
        let layout = Layout::new(&config, vocab);
        let mut params = vec![0.0; layout.total()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model as f64;
        let f = config.ff_dim() as f64;
        let resid = 1.0 / (2.0 * config.n_layers as f64).sqrt();
        let mut fill = |r: &Range<usize>, std: f64, rng: &mut ChaCha8Rng| {
            let normal = Normal::new(0.0, std).expect("positive std");
            for p in &mut params[r.clone()] {
                *p = normal.sample(rng);
            }
        };
        fill(&layout.wte, 0.3, &mut rng);
        fill(&layout.wpe, 0.3, &mut rng);
        for l in &layout.layers {
            fill(&l.wq, 1.0 / d.sqrt(), &mut rng);
            fill(&l.wk, 1.0 / d.sqrt(), &mut rng);
            fill(&l.wv, 1.0 / d.sqrt(), &mut rng);
            fill(&l.wo, resid / d.sqrt(), &mut rng);
            fill(&l.w1, 1.0 / d.sqrt(), &mut rng);
            fill(&l.w2, resid / f.sqrt(), &mut rng);
        }
        fill(&layout.w_out, 1.0 / d.sqrt(), &mut rng);
        for l in &layout.layers {
            params[l.ln1_g.clone()].fill(1.0);
            params[l.ln2_g.clone()].fill(1.0);
        }
        params[layout.lnf_g.clone()].fill(1.0);
        Ok(LmCheckpoint { config, layout, params })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn p(&self, r: &Range<usize>) -> &[f64] {
        &self.params[r.clone()]
    }

    pub fn forward(&self, tokens: &[TokenId], opts: &ForwardOptions) -> Result<ForwardOutput> {
        self.forward_impl(tokens, opts, None)
    }

    /// Forward pass with the queries of `layer` replaced over the positions the tap covers.
    pub fn forward_with_injection(&self, tokens: &[TokenId], layer: usize, replacement: &QueryTap, record_residuals: bool) -> Result<ForwardOutput> {
        self.forward(
            tokens,
            &ForwardOptions {
                query_edit: Some((layer, QueryEdit::Replace(replacement))),
                record_residuals,
                ..Default::default()
            },
        )
    }

    /// Forward pass with `vector` added to the residual stream after block `layer` at every position.
    pub fn residual_injection(&self, tokens: &[TokenId], layer: usize, vector: &[f64], record_residuals: bool) -> Result<ForwardOutput> {
        self.forward(
            tokens,
            &ForwardOptions {
                residual_edit: Some(ResidualEdit { layer, vector, from: 0 }),
                record_residuals,
                ..Default::default()
            },
        )
    }

    pub(crate) fn forward_impl(&self, tokens: &[TokenId], opts: &ForwardOptions, cache: Option<&mut Cache>) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let (t, d, h, dh, f) = (tokens.len(), cfg.d_model, cfg.n_heads, cfg.head_dim(), cfg.ff_dim());
        let vocab = Vocab::get().len();
        if t == 0 {
            return Err(Error::contract("forward over an empty sequence"));
        }
        if t > cfg.context_len {
            return Err(Error::contract(format!("{t} tokens exceed the context of {}", cfg.context_len)));
        }
        if let Some(bad) = tokens.iter().find(|&&id| id as usize >= vocab) {
            return Err(Error::contract(format!("token id {bad} outside vocabulary")));
        }
        for layer in [
            opts.tap_layer,
            opts.attention_layer,
            opts.query_edit.map(|q| q.0),
            opts.residual_edit.map(|r| r.layer),
        ]
        .into_iter()
        .flatten()
        {
            if layer >= cfg.n_layers {
                return Err(Error::contract(format!("layer {layer} outside a {}-layer model", cfg.n_layers)));
            }
        }
        if let Some((_, edit)) = opts.query_edit {
            match edit {
                QueryEdit::Replace(rep) => {
                    if rep.n_heads != h || rep.head_dim != dh || rep.positions > t {
                        return Err(Error::shape(format!(
                            "query replacement {}x{}x{} for {h} heads x {t} positions x {dh}",
                            rep.n_heads, rep.positions, rep.head_dim
                        )));
                    }
                }
                QueryEdit::Offset { offset, .. } => {
                    if offset.len() != h * dh {
                        return Err(Error::shape(format!("query offset of {} values, expected {}", offset.len(), h * dh)));
                    }
                }
            }
        }
        if let Some(edit) = opts.residual_edit {
            if edit.vector.len() != d {
                return Err(Error::shape(format!("residual vector of {} values, expected {d}", edit.vector.len())));
            }
        }

        let wte = self.p(&self.layout.wte);
        let wpe = self.p(&self.layout.wpe);
        let mut x = vec![0.0; t * d];
        for (pos, &tok) in tokens.iter().enumerate() {
            let e = &wte[tok as usize * d..(tok as usize + 1) * d];
            let p = &wpe[pos * d..(pos + 1) * d];
            for i in 0..d {
                x[pos * d + i] = e[i] + p[i];
            }
        }
        let scale = 1.0 / (dh as f64).sqrt();
        let mut tap = None;
        let mut residuals = opts.record_residuals.then(Vec::new);
        let mut attention = None;
        let mut layer_caches = Vec::new();

        for (li, lo) in self.layout.layers.iter().enumerate() {
            let (ln1, mean1, rstd1) = layer_norm(&x, self.p(&lo.ln1_g), self.p(&lo.ln1_b), t, d);
            let q = mm(&ln1, self.p(&lo.wq), t, d, d);
            let k = mm(&ln1, self.p(&lo.wk), t, d, d);
            let v = mm(&ln1, self.p(&lo.wv), t, d, d);
            let mut qh = split_heads(&q, t, h, dh);
            let kh = split_heads(&k, t, h, dh);
            let vh = split_heads(&v, t, h, dh);
            if let Some((layer, edit)) = opts.query_edit {
                if layer == li {
                    apply_query_edit(&mut qh, edit, t, h, dh);
                }
            }
            if opts.tap_layer == Some(li) {
                tap = Some(QueryTap {
                    layer: li,
                    n_heads: h,
                    positions: t,
                    head_dim: dh,
                    data: qh.clone(),
                });
            }
            let mut att = vec![0.0; h * t * t];
            let mut oh = vec![0.0; h * t * dh];
            for head in 0..h {
                let qs = &qh[head * t * dh..(head + 1) * t * dh];
                let ks = &kh[head * t * dh..(head + 1) * t * dh];
                let vs = &vh[head * t * dh..(head + 1) * t * dh];
                let a = &mut att[head * t * t..(head + 1) * t * t];
                gemm(t, dh, t, scale, qs, false, ks, true, 0.0, a);
                for i in 0..t {
                    let row = &mut a[i * t..(i + 1) * t];
                    let max = row[..=i].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for r in row[..=i].iter_mut() {
                        *r = (*r - max).exp();
                        sum += *r;
                    }
                    for r in row[..=i].iter_mut() {
                        *r /= sum;
                    }
                    row[i + 1..].fill(0.0);
                }
                gemm(t, t, dh, 1.0, a, false, vs, false, 0.0, &mut oh[head * t * dh..(head + 1) * t * dh]);
            }
            if opts.attention_layer == Some(li) {
                attention = Some(
                    (0..h)
                        .map(|head| Matrix::from_vec(t, t, att[head * t * t..(head + 1) * t * t].to_vec()))
                        .collect::<Result<Vec<_>>>()?,
                );
            }
            let o = merge_heads(&oh, t, h, dh);
            let attn_out = mm(&o, self.p(&lo.wo), t, d, d);
            let x_in = std::mem::take(&mut x);
            let mut x_mid: Vec<f64> = x_in.iter().zip(&attn_out).map(|(a, b)| a + b).collect();
            let (ln2, mean2, rstd2) = layer_norm(&x_mid, self.p(&lo.ln2_g), self.p(&lo.ln2_b), t, d);
            let x_mid_saved = if cache.is_some() { x_mid.clone() } else { Vec::new() };
            let mut h_pre = mm(&ln2, self.p(&lo.w1), t, d, f);
            let b1 = self.p(&lo.b1);
            for row in h_pre.chunks_mut(f) {
                row.iter_mut().zip(b1).for_each(|(v, b)| *v += b);
            }
            let h_act: Vec<f64> = h_pre.iter().map(|v| gelu(*v)).collect();
            let mlp = mm(&h_act, self.p(&lo.w2), t, f, d);
            let b2 = self.p(&lo.b2);
            for (pos, row) in x_mid.chunks_mut(d).enumerate() {
                for i in 0..d {
                    row[i] += mlp[pos * d + i] + b2[i];
                }
            }
            let mut x_out = x_mid;
            if let Some(edit) = opts.residual_edit {
                if edit.layer == li {
                    for row in x_out.chunks_mut(d).skip(edit.from) {
                        row.iter_mut().zip(edit.vector).for_each(|(a, b)| *a += b);
                    }
                }
            }
            if let Some(r) = residuals.as_mut() {
                r.push(Matrix::from_vec(t, d, x_out.clone())?);
            }
            if cache.is_some() {
                layer_caches.push(LayerCache {
                    x_in,
                    ln1,
                    mean1,
                    rstd1,
                    qh,
                    kh,
                    vh,
                    att,
                    o,
                    x_mid: x_mid_saved,
                    ln2,
                    mean2,
                    rstd2,
                    h_pre,
                    h_act,
                });
            }
            x = x_out;
        }
        let (lnf, meanf, rstdf) = layer_norm(&x, self.p(&self.layout.lnf_g), self.p(&self.layout.lnf_b), t, d);
        let logits = mm(&lnf, self.p(&self.layout.w_out), t, d, vocab);
        if let Some(c) = cache {
            *c = Cache {
                tokens: tokens.to_vec(),
                layers: layer_caches,
                x_final: x,
                lnf,
                meanf,
                rstdf,
            };
        }
        Ok(ForwardOutput {
            logits: Matrix::from_vec(t, vocab, logits)?,
            tap,
            residuals,
            attention,
        })
    }

    pub(crate) fn empty_cache() -> Cache {
        Cache {
            tokens: Vec::new(),
            layers: Vec::new(),
            x_final: Vec::new(),
            lnf: Vec::new(),
            meanf: Vec::new(),
            rstdf: Vec::new(),
        }
    }

    /// Accumulates `d loss / d params` into `grads` given `d loss / d logits`.
    pub(crate) fn backward(&self, cache: &Cache, dlogits: &Matrix, grads: &mut [f64]) {
        self.backward_tapped(cache, dlogits, grads, None)
    }

    /// As `backward`, optionally copying `d loss / d queries` (row-major, `t x d_model`) at one layer.
    pub(crate) fn backward_tapped(&self, cache: &Cache, dlogits: &Matrix, grads: &mut [f64], mut dq_tap: Option<(usize, &mut Vec<f64>)>) {
        let cfg = &self.config;
        let (t, d, h, dh, f) = (cache.tokens.len(), cfg.d_model, cfg.n_heads, cfg.head_dim(), cfg.ff_dim());
        let vocab = Vocab::get().len();
        let lay = &self.layout;
        let scale = 1.0 / (dh as f64).sqrt();
        let dl = dlogits.data();

        gemm(d, t, vocab, 1.0, &cache.lnf, true, dl, false, 1.0, &mut grads[lay.w_out.clone()]);
        let mut dlnf = vec![0.0; t * d];
        gemm(t, vocab, d, 1.0, dl, false, self.p(&lay.w_out), true, 0.0, &mut dlnf);
        let mut dx = {
            let (dg, db) = two_mut(grads, &lay.lnf_g, &lay.lnf_b);
            layer_norm_backward(&dlnf, &cache.x_final, &cache.meanf, &cache.rstdf, self.p(&lay.lnf_g), dg, db, t, d)
        };

        for (li, (lo, lc)) in lay.layers.iter().zip(&cache.layers).enumerate().rev() {
            // feed-forward
            for row in dx.chunks(d) {
                grads[lo.b2.clone()].iter_mut().zip(row).for_each(|(g, v)| *g += v);
            }
            gemm(f, t, d, 1.0, &lc.h_act, true, &dx, false, 1.0, &mut grads[lo.w2.clone()]);
            let mut dh_pre = vec![0.0; t * f];
            gemm(t, d, f, 1.0, &dx, false, self.p(&lo.w2), true, 0.0, &mut dh_pre);
            for (g, x) in dh_pre.iter_mut().zip(&lc.h_pre) {
                *g *= gelu_grad(*x);
            }
            for row in dh_pre.chunks(f) {
                grads[lo.b1.clone()].iter_mut().zip(row).for_each(|(g, v)| *g += v);
            }
            gemm(d, t, f, 1.0, &lc.ln2, true, &dh_pre, false, 1.0, &mut grads[lo.w1.clone()]);
            let mut dln2 = vec![0.0; t * d];
            gemm(t, f, d, 1.0, &dh_pre, false, self.p(&lo.w1), true, 0.0, &mut dln2);
            let dx_mid_ln = {
                let (dg, db) = two_mut(grads, &lo.ln2_g, &lo.ln2_b);
                layer_norm_backward(&dln2, &lc.x_mid, &lc.mean2, &lc.rstd2, self.p(&lo.ln2_g), dg, db, t, d)
            };
            let dx_mid: Vec<f64> = dx.iter().zip(&dx_mid_ln).map(|(a, b)| a + b).collect();

            // attention
            gemm(d, t, d, 1.0, &lc.o, true, &dx_mid, false, 1.0, &mut grads[lo.wo.clone()]);
            let mut d_o = vec![0.0; t * d];
            gemm(t, d, d, 1.0, &dx_mid, false, self.p(&lo.wo), true, 0.0, &mut d_o);
            let d_oh = split_heads(&d_o, t, h, dh);
            let mut dqh = vec![0.0; h * t * dh];
            let mut dkh = vec![0.0; h * t * dh];
            let mut dvh = vec![0.0; h * t * dh];
            let mut da = vec![0.0; t * t];
            for head in 0..h {
                let hs = head * t * dh..(head + 1) * t * dh;
                let a = &lc.att[head * t * t..(head + 1) * t * t];
                gemm(t, dh, t, 1.0, &d_oh[hs.clone()], false, &lc.vh[hs.clone()], true, 0.0, &mut da);
                gemm(t, t, dh, 1.0, a, true, &d_oh[hs.clone()], false, 0.0, &mut dvh[hs.clone()]);
                for i in 0..t {
                    let arow = &a[i * t..(i + 1) * t];
                    let drow = &mut da[i * t..(i + 1) * t];
                    let dot: f64 = arow[..=i].iter().zip(&drow[..=i]).map(|(x, y)| x * y).sum();
                    for j in 0..=i {
                        drow[j] = arow[j] * (drow[j] - dot);
                    }
                    drow[i + 1..].fill(0.0);
                }
                gemm(t, t, dh, scale, &da, false, &lc.kh[hs.clone()], false, 0.0, &mut dqh[hs.clone()]);
                gemm(t, t, dh, scale, &da, true, &lc.qh[hs.clone()], false, 0.0, &mut dkh[hs.clone()]);
            }
            let dq = merge_heads(&dqh, t, h, dh);
            if let Some((l, out)) = dq_tap.as_mut() {
                if *l == li {
                    out.clone_from(&dq);
                }
            }
            let dk = merge_heads(&dkh, t, h, dh);
            let dv = merge_heads(&dvh, t, h, dh);
            gemm(d, t, d, 1.0, &lc.ln1, true, &dq, false, 1.0, &mut grads[lo.wq.clone()]);
            gemm(d, t, d, 1.0, &lc.ln1, true, &dk, false, 1.0, &mut grads[lo.wk.clone()]);
            gemm(d, t, d, 1.0, &lc.ln1, true, &dv, false, 1.0, &mut grads[lo.wv.clone()]);
            let mut dln1 = vec![0.0; t * d];
            gemm(t, d, d, 1.0, &dq, false, self.p(&lo.wq), true, 0.0, &mut dln1);
            gemm(t, d, d, 1.0, &dk, false, self.p(&lo.wk), true, 1.0, &mut dln1);
            gemm(t, d, d, 1.0, &dv, false, self.p(&lo.wv), true, 1.0, &mut dln1);
            let dx_in_ln = {
                let (dg, db) = two_mut(grads, &lo.ln1_g, &lo.ln1_b);
                layer_norm_backward(&dln1, &lc.x_in, &lc.mean1, &lc.rstd1, self.p(&lo.ln1_g), dg, db, t, d)
            };
            dx = dx_mid.iter().zip(&dx_in_ln).map(|(a, b)| a + b).collect();
        }

        for (pos, &tok) in cache.tokens.iter().enumerate() {
            let row = &dx[pos * d..(pos + 1) * d];
            let e = lay.wte.start + tok as usize * d;
            grads[e..e + d].iter_mut().zip(row).for_each(|(g, v)| *g += v);
            let p = lay.wpe.start + pos * d;
            grads[p..p + d].iter_mut().zip(row).for_each(|(g, v)| *g += v);
        }
    }
}

fn apply_query_edit(qh: &mut [f64], edit: QueryEdit, t: usize, h: usize, dh: usize) {
    match edit {
        QueryEdit::Replace(rep) => {
            for head in 0..h {
                for pos in 0..rep.positions {
                    qh[(head * t + pos) * dh..(head * t + pos + 1) * dh].copy_from_slice(rep.vector(head, pos));
                }
            }
        }
        QueryEdit::Offset { offset, from } => {
            for head in 0..h {
                let off = &offset[head * dh..(head + 1) * dh];
                for pos in from..t {
                    qh[(head * t + pos) * dh..(head * t + pos + 1) * dh]
                        .iter_mut()
                        .zip(off)
                        .for_each(|(q, o)| *q += o);
                }
            }
        }
    }
}

/// Two disjoint mutable slices of the gradient buffer; `a` must precede `b`.
fn two_mut<'a>(buf: &'a mut [f64], a: &Range<usize>, b: &Range<usize>) -> (&'a mut [f64], &'a mut [f64]) {
    debug_assert!(a.end <= b.start);
    let (left, right) = buf.split_at_mut(b.start);
    (&mut left[a.clone()], &mut right[..b.len()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{generate_grid, GoldTriple};
    use crate::numerics::relative_error;
    use crate::tinylm::LmExample;

    fn tiny() -> LmCheckpoint {
        LmCheckpoint::init(LmConfig::new(2, 2, 8, 64).unwrap(), 7).unwrap()
    }

    fn example() -> LmExample {
        let g = generate_grid(3, 3, 0.2, 5).unwrap();
        let gold = GoldTriple::compute(&g, 64).unwrap();
        LmExample::new(&g, &gold.long, Some(crate::gridworld::Target::Long)).unwrap()
    }

    fn tokens() -> Vec<TokenId> {
        example().tokens
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut m = tiny();
        let ex = example();
        let mut grads = vec![0.0; m.param_count()];
        m.example_loss(&ex, Some(&mut grads)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut probes: Vec<usize> = (0..m.param_count()).collect();
        rand::seq::SliceRandom::shuffle(probes.as_mut_slice(), &mut rng);
        let h = 1e-5;
        let mut checked = 0;
        let mut worst: f64 = 0.0;
        for &i in &probes {
            if checked == 150 {
                break;
            }
            let orig = m.params[i];
            m.params[i] = orig + h;
            let up = m.example_loss(&ex, None).unwrap();
            m.params[i] = orig - h;
            let down = m.example_loss(&ex, None).unwrap();
            m.params[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            // token embeddings of absent tokens have exactly zero gradient; skip them
            if grads[i] == 0.0 && numeric.abs() < 1e-12 {
                continue;
            }
            worst = worst.max(relative_error(grads[i], numeric, 1e-6));
            checked += 1;
        }
        assert!(checked >= 100);
        assert!(worst < 1e-3, "worst relative error {worst}");
    }

    #[test]
    fn logits_are_causal() {
        let m = tiny();
        let a = tokens();
        let mut b = a.clone();
        let cut = a.len() / 2;
        for t in &mut b[cut..] {
            *t = (*t + 17) % Vocab::get().len() as TokenId;
        }
        let la = m.forward(&a, &Default::default()).unwrap().logits;
        let lb = m.forward(&b, &Default::default()).unwrap().logits;
        for t in 0..cut {
            assert_eq!(la.row(t), lb.row(t));
        }
        assert_ne!(la.row(a.len() - 1), lb.row(a.len() - 1));
    }

    #[test]
    fn forward_is_deterministic_and_shaped() {
        let m = tiny();
        let toks = tokens();
        let opts = ForwardOptions {
            tap_layer: Some(1),
            ..Default::default()
        };
        let a = m.forward(&toks, &opts).unwrap();
        let b = m.forward(&toks, &opts).unwrap();
        assert_eq!(a.logits.rows(), toks.len());
        assert_eq!(a.logits.cols(), Vocab::get().len());
        let bits = |m: &Matrix| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.logits), bits(&b.logits));
        let tap = a.tap.unwrap();
        assert_eq!(tap.head_dim, m.config.head_dim());
        assert_eq!(tap.positions, toks.len());
    }

    #[test]
    fn overlong_input_is_rejected() {
        let m = tiny();
        let toks = vec![crate::tinylm::BOS; 65];
        assert!(matches!(m.forward(&toks, &Default::default()), Err(Error::Contract(_))));
    }

    #[test]
    fn identity_injection_is_exact() {
        let m = tiny();
        let toks = tokens();
        let plain = m
            .forward(
                &toks,
                &ForwardOptions {
                    tap_layer: Some(1),
                    ..Default::default()
                },
            )
            .unwrap();
        let tap = plain.tap.unwrap();
        let inj = m.forward_with_injection(&toks, 1, &tap, false).unwrap();
        for (a, b) in plain.logits.data().iter().zip(inj.logits.data()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn zero_queries_give_uniform_attention() {
        let m = tiny();
        let toks = tokens();
        let zeros = QueryTap::zeros(0, 2, toks.len(), 4);
        let out = m
            .forward(
                &toks,
                &ForwardOptions {
                    query_edit: Some((0, QueryEdit::Replace(&zeros))),
                    attention_layer: Some(0),
                    ..Default::default()
                },
            )
            .unwrap();
        for a in out.attention.unwrap() {
            for i in 0..toks.len() {
                for j in 0..=i {
                    assert!((a.get(i, j) - 1.0 / (i + 1) as f64).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn perturbed_queries_change_only_downstream_layers() {
        let m = LmCheckpoint::init(LmConfig::new(3, 2, 8, 64).unwrap(), 3).unwrap();
        let toks = tokens();
        let base = m
            .forward(
                &toks,
                &ForwardOptions {
                    tap_layer: Some(1),
                    record_residuals: true,
                    ..Default::default()
                },
            )
            .unwrap();
        let mut tap = base.tap.unwrap();
        tap.data.iter_mut().for_each(|v| *v += 0.5);
        let inj = m.forward_with_injection(&toks, 1, &tap, true).unwrap();
        let (r0, r1) = (base.residuals.unwrap(), inj.residuals.unwrap());
        assert_eq!(r0[0], r1[0]);
        assert_ne!(r0[1], r1[1]);
        assert_ne!(r0[2], r1[2]);
    }

    #[test]
    fn replacement_shape_is_checked() {
        let m = tiny();
        let toks = tokens();
        let bad = QueryTap::zeros(0, 3, toks.len(), 4);
        assert!(matches!(m.forward_with_injection(&toks, 0, &bad, false), Err(Error::Shape(_))));
    }

    #[test]
    fn residual_injection_placement() {
        let m = tiny();
        let toks = tokens();
        let plain = m
            .forward(
                &toks,
                &ForwardOptions {
                    record_residuals: true,
                    ..Default::default()
                },
            )
            .unwrap();
        let zero = m.residual_injection(&toks, 0, &[0.0; 8], false).unwrap();
        assert_eq!(plain.logits, zero.logits);
        let v = [0.3; 8];
        let last = m.residual_injection(&toks, 1, &v, true).unwrap();
        let (r0, r1) = (plain.residuals.unwrap(), last.residuals.unwrap());
        assert_eq!(r0[0], r1[0]);
        assert_ne!(plain.logits, last.logits);
        assert!(matches!(m.residual_injection(&toks, 0, &[0.0; 7], false), Err(Error::Shape(_))));
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let m = tiny();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let back = LmCheckpoint::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        let toks = tokens();
        let a = m.forward(&toks, &Default::default()).unwrap().logits;
        let b = back.forward(&toks, &Default::default()).unwrap().logits;
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn generation_limits() {
        let m = tiny();
        let toks = tokens();
        assert!(m.generate(&toks, 0, None).unwrap().is_empty());
        let plain = m.generate(&toks, 6, None).unwrap();
        assert!(plain.len() <= 6);
        let zero = vec![0.0; 8];
        let edit = crate::tinylm::Intervention::Query {
            layer: 1,
            edit: QueryEdit::Offset { offset: &zero, from: 0 },
        };
        assert_eq!(m.generate(&toks, 6, Some(edit)).unwrap(), plain);
    }
}
