use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::numerics::{gemm, Matrix};
use crate::{Error, Result};

/// Default floor on decoder column norms.
pub const DEFAULT_GAMMA: f64 = 1e-8;
/// Latent width as a multiple of the activation width.
pub const EXPANSION: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regularizer {
    /// `lambda * |z|_1`
    L1,
    /// `lambda * |z|_2^2`, the shrinkage control.
    L2,
}

impl std::str::FromStr for Regularizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Regularizer::L1),
            "l2" => Ok(Regularizer::L2),
            other => Err(Error::Config(format!("unknown regularizer {other:?}"))),
        }
    }
}

/// Single-layer ReLU autoencoder for one attention head's queries.
///
/// `w_e` is `latent_dim x head_dim`, `w_d` is `head_dim x latent_dim`, both row-major.
/// Decoding always goes through the column-normalised decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseCoder {
    pub layer: usize,
    pub head: usize,
    pub head_dim: usize,
    pub latent_dim: usize,
    pub kind: Regularizer,
    pub lambda: f64,
    pub beta: f64,
    pub gamma: f64,
    #[serde(skip)]
    pub w_e: Vec<f64>,
    #[serde(skip)]
    pub b_e: Vec<f64>,
    #[serde(skip)]
    pub w_d: Vec<f64>,
}

/// Loss terms, each already weighted, averaged over the batch where applicable.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SaeLoss {
    pub recon: f64,
    pub sparsity: f64,
    pub bias_decay: f64,
}

impl SaeLoss {
    pub fn total(&self) -> f64 {
        self.recon + self.sparsity + self.bias_decay
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaeGrads {
    pub w_e: Vec<f64>,
    pub b_e: Vec<f64>,
    pub w_d: Vec<f64>,
}

impl SparseCoder {
    /// Random unit decoder columns; encoder starts as half the decoder transpose, zero bias.
    pub fn init(layer: usize, head: usize, head_dim: usize, kind: Regularizer, lambda: f64, beta: f64, seed: u64) -> Result<Self> {
        if head_dim == 0 {
            return Err(Error::contract("head_dim must be positive"));
        }
        let latent_dim = EXPANSION * head_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w_d: Vec<f64> = (0..head_dim * latent_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut c = SparseCoder {
            layer,
            head,
            head_dim,
            latent_dim,
            kind,
            lambda,
            beta,
            gamma: DEFAULT_GAMMA,
            w_e: vec![0.0; latent_dim * head_dim],
            b_e: vec![0.0; latent_dim],
            w_d,
        };
        c.renormalize();
        for j in 0..latent_dim {
            for i in 0..head_dim {
                c.w_e[j * head_dim + i] = 0.5 * c.w_d[i * latent_dim + j];
            }
        }
        Ok(c)
    }

    /// Builds a coder from explicit weights (validated for shape and finiteness).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(layer: usize, head: usize, kind: Regularizer, lambda: f64, beta: f64, w_e: Matrix, b_e: Vec<f64>, w_d: Matrix) -> Result<Self> {
        let (latent_dim, head_dim) = (w_e.rows(), w_e.cols());
        if w_d.rows() != head_dim || w_d.cols() != latent_dim || b_e.len() != latent_dim {
            return Err(Error::shape(format!(
                "encoder {}x{}, bias {}, decoder {}x{}",
                latent_dim,
                head_dim,
                b_e.len(),
                w_d.rows(),
                w_d.cols()
            )));
        }
        if b_e.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("non-finite encoder bias"));
        }
        Ok(SparseCoder {
            layer,
            head,
            head_dim,
            latent_dim,
            kind,
            lambda,
            beta,
            gamma: DEFAULT_GAMMA,
            w_e: w_e.data().to_vec(),
            b_e,
            w_d: w_d.data().to_vec(),
        })
    }

    /// L2 norm of every stored decoder column.
    pub fn column_norms(&self) -> Vec<f64> {
        let mut norms = vec![0.0; self.latent_dim];
        for i in 0..self.head_dim {
            for (j, n) in norms.iter_mut().enumerate() {
                let w = self.w_d[i * self.latent_dim + j];
                *n += w * w;
            }
        }
        norms.iter_mut().for_each(|n| *n = n.sqrt());
        norms
    }

    /// Decoder with every column divided by `max(norm, gamma)`.
    pub fn normalized_decoder(&self) -> Matrix {
        let norms = self.column_norms();
        let mut d = self.w_d.clone();
        for i in 0..self.head_dim {
            for j in 0..self.latent_dim {
                d[i * self.latent_dim + j] /= norms[j].max(self.gamma);
            }
        }
        Matrix::from_vec(self.head_dim, self.latent_dim, d).expect("finite decoder")
    }

    /// Rescales the stored decoder in place to its normalised form.
    /// Returns the indices of columns whose norm fell below `gamma`.
    pub fn renormalize(&mut self) -> Vec<usize> {
        let norms = self.column_norms();
        for row in self.w_d.chunks_mut(self.latent_dim) {
            for (w, n) in row.iter_mut().zip(&norms) {
                *w /= n.max(self.gamma);
            }
        }
        norms.iter().enumerate().filter(|(_, n)| **n < self.gamma).map(|(j, _)| j).collect()
    }

    fn check_batch(&self, s: &Matrix) -> Result<()> {
        if s.cols() != self.head_dim {
            return Err(Error::shape(format!(
                "activations of width {}, coder expects {}",
                s.cols(),
                self.head_dim
            )));
        }
        Ok(())
    }

    /// Pre-activations `s W_e^T + b_e` for a batch (rows are activations).
    fn pre_activations(&self, s: &Matrix) -> Vec<f64> {
        let n = s.rows();
        let mut u = vec![0.0; n * self.latent_dim];
        for row in u.chunks_mut(self.latent_dim) {
            row.copy_from_slice(&self.b_e);
        }
        gemm(n, self.head_dim, self.latent_dim, 1.0, s.data(), false, &self.w_e, true, 1.0, &mut u);
        u
    }

    /// `ReLU(W_e s + b_e)` for every row of `s`.
    pub fn encode_batch(&self, s: &Matrix) -> Result<Matrix> {
        self.check_batch(s)?;
        let mut u = self.pre_activations(s);
        u.iter_mut().for_each(|v| *v = v.max(0.0));
        Matrix::from_vec(s.rows(), self.latent_dim, u)
    }

    /// Normalised-decoder reconstruction of every row of `z`.
    pub fn decode_batch(&self, z: &Matrix) -> Result<Matrix> {
        if z.cols() != self.latent_dim {
            return Err(Error::shape(format!("latents of width {}, coder expects {}", z.cols(), self.latent_dim)));
        }
        let wd = self.normalized_decoder();
        let mut out = vec![0.0; z.rows() * self.head_dim];
        gemm(
            z.rows(),
            self.latent_dim,
            self.head_dim,
            1.0,
            z.data(),
            false,
            wd.data(),
            true,
            0.0,
            &mut out,
        );
        Matrix::from_vec(z.rows(), self.head_dim, out)
    }

    pub fn encode(&self, s: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::from_vec(1, s.len(), s.to_vec())?;
        Ok(self.encode_batch(&m)?.data().to_vec())
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::from_vec(1, z.len(), z.to_vec())?;
        Ok(self.decode_batch(&m)?.data().to_vec())
    }

    /// Batch-mean loss and hand-derived gradients with respect to the raw parameters.
    ///
    /// The decoder gradient is taken through the column normalisation, so for a
    /// column with norm at least `gamma` only its tangential component survives.
    pub fn loss_and_grads(&self, s: &Matrix) -> Result<(SaeLoss, SaeGrads)> {
        self.check_batch(s)?;
        let n = s.rows();
        if n == 0 {
            return Err(Error::contract("empty activation batch"));
        }
        let (h, l) = (self.head_dim, self.latent_dim);
        let inv = 1.0 / n as f64;
        let u = self.pre_activations(s);
        let z: Vec<f64> = u.iter().map(|v| v.max(0.0)).collect();
        let norms = self.column_norms();
        let wd = self.normalized_decoder();
        let mut recon = vec![0.0; n * h];
        gemm(n, l, h, 1.0, &z, false, wd.data(), true, 0.0, &mut recon);

        let mut loss = SaeLoss::default();
        let mut d_recon = vec![0.0; n * h];
        for ((d, r), x) in d_recon.iter_mut().zip(&recon).zip(s.data()) {
            let e = r - x;
            loss.recon += e * e;
            *d = 2.0 * e * inv;
        }
        loss.recon *= inv;
        loss.sparsity = match self.kind {
            Regularizer::L1 => self.lambda * z.iter().sum::<f64>() * inv,
            Regularizer::L2 => self.lambda * z.iter().map(|v| v * v).sum::<f64>() * inv,
        };
        loss.bias_decay = self.beta * self.b_e.iter().map(|b| b * b).sum::<f64>();

        // dz = d_recon W~ + sparsity term
        let mut dz = vec![0.0; n * l];
        gemm(n, h, l, 1.0, &d_recon, false, wd.data(), false, 0.0, &mut dz);
        for (g, zv) in dz.iter_mut().zip(&z) {
            *g += match self.kind {
                Regularizer::L1 => self.lambda * inv,
                Regularizer::L2 => 2.0 * self.lambda * zv * inv,
            };
        }
        for (g, uv) in dz.iter_mut().zip(&u) {
            if *uv <= 0.0 {
                *g = 0.0;
            }
        }
        let mut g_we = vec![0.0; l * h];
        gemm(l, n, h, 1.0, &dz, true, s.data(), false, 0.0, &mut g_we);
        let mut g_be: Vec<f64> = self.b_e.iter().map(|b| 2.0 * self.beta * b).collect();
        for row in dz.chunks(l) {
            g_be.iter_mut().zip(row).for_each(|(g, v)| *g += v);
        }
        // gradient w.r.t. the normalised decoder, then through the normalisation
        let mut g_wn = vec![0.0; h * l];
        gemm(h, n, l, 1.0, &d_recon, true, &z, false, 0.0, &mut g_wn);
        let mut g_wd = vec![0.0; h * l];
        for j in 0..l {
            let scale = norms[j].max(self.gamma);
            if norms[j] >= self.gamma {
                let radial: f64 = (0..h).map(|i| g_wn[i * l + j] * wd.get(i, j)).sum();
                for i in 0..h {
                    g_wd[i * l + j] = (g_wn[i * l + j] - radial * wd.get(i, j)) / scale;
                }
            } else {
                for i in 0..h {
                    g_wd[i * l + j] = g_wn[i * l + j] / scale;
                }
            }
        }
        Ok((
            loss,
            SaeGrads {
                w_e: g_we,
                b_e: g_be,
                w_d: g_wd,
            },
        ))
    }

    /// Parameters flattened as `[w_e, b_e, w_d]`.
    pub fn flat_params(&self) -> Vec<f64> {
        [self.w_e.as_slice(), &self.b_e, &self.w_d].concat()
    }

    /// Inverse of [`Self::flat_params`]; `p` must have the same length.
    pub fn set_flat_params(&mut self, p: &[f64]) {
        let (a, b) = (self.w_e.len(), self.b_e.len());
        self.w_e.copy_from_slice(&p[..a]);
        self.b_e.copy_from_slice(&p[a..a + b]);
        self.w_d.copy_from_slice(&p[a + b..]);
    }
}
