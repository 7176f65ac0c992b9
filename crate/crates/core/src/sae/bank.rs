use std::io::{Read, Write};
use std::path::Path;

use super::coder::SparseCoder;
use crate::numerics::Matrix;
use crate::tinylm::QueryTap;
use crate::{artifact, Error, Result};

pub const SAE_FORMAT_VERSION: u32 = 1;
const KIND: &str = "sae";

/// Codes of one head over a sequence, `positions x latent_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub layer: usize,
    pub head: usize,
    pub z: Matrix,
}

/// One coder per attention head of a layer.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadCoders {
    pub layer: usize,
    pub coders: Vec<SparseCoder>,
}

impl HeadCoders {
    pub fn new(coders: Vec<SparseCoder>) -> Result<Self> {
        let first = coders.first().ok_or_else(|| Error::contract("no coders"))?;
        let layer = first.layer;
        for (i, c) in coders.iter().enumerate() {
            if c.head != i || c.layer != layer || c.head_dim != first.head_dim {
                return Err(Error::contract(format!(
                    "coder {i} is for layer {} head {} (dim {})",
                    c.layer, c.head, c.head_dim
                )));
            }
        }
        Ok(HeadCoders { layer, coders })
    }

    pub fn n_heads(&self) -> usize {
        self.coders.len()
    }

    pub fn head_dim(&self) -> usize {
        self.coders[0].head_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.coders[0].latent_dim
    }

    /// Positionwise encoding of every head of `tap`.
    pub fn encode_sequence(&self, tap: &QueryTap) -> Result<Vec<LatentCode>> {
        if tap.n_heads != self.n_heads() {
            return Err(Error::shape(format!("tap has {} heads, {} coders", tap.n_heads, self.n_heads())));
        }
        self.coders
            .iter()
            .enumerate()
            .map(|(h, c)| {
                let s = Matrix::from_vec(tap.positions, tap.head_dim, tap.head(h).to_vec())?;
                Ok(LatentCode {
                    layer: self.layer,
                    head: h,
                    z: c.encode_batch(&s)?,
                })
            })
            .collect()
    }

    /// Positionwise decoding back to query activations.
    pub fn decode_sequence(&self, codes: &[LatentCode]) -> Result<QueryTap> {
        if codes.len() != self.n_heads() {
            return Err(Error::shape(format!("{} codes for {} coders", codes.len(), self.n_heads())));
        }
        let positions = codes[0].z.rows();
        if codes.iter().any(|c| c.z.rows() != positions) {
            return Err(Error::shape("codes cover different position counts"));
        }
        let mut tap = QueryTap::zeros(self.layer, self.n_heads(), positions, self.head_dim());
        for (h, (c, code)) in self.coders.iter().zip(codes).enumerate() {
            tap.head_mut(h).copy_from_slice(c.decode_batch(&code.z)?.data());
        }
        Ok(tap)
    }

    /// Mean relative reconstruction error `|s - dec(enc(s))| / |s|` over all (head, position) vectors.
    pub fn relative_error(&self, tap: &QueryTap) -> Result<f64> {
        let rec = self.decode_sequence(&self.encode_sequence(tap)?)?;
        let mut total = 0.0;
        let mut count = 0;
        for h in 0..tap.n_heads {
            for t in 0..tap.positions {
                let (a, b) = (tap.vector(h, t), rec.vector(h, t));
                let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    total += a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt() / norm;
                    count += 1;
                }
            }
        }
        Ok(if count == 0 { 0.0 } else { total / count as f64 })
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let values: Vec<f64> = self.coders.iter().flat_map(|c| c.flat_params()).collect();
        artifact::write(w, KIND, SAE_FORMAT_VERSION, &self.coders, &values)
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        Self::from_container(artifact::read(r, KIND, SAE_FORMAT_VERSION)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let values: Vec<f64> = self.coders.iter().flat_map(|c| c.flat_params()).collect();
        artifact::save(path, KIND, SAE_FORMAT_VERSION, &self.coders, &values)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(artifact::load(path, KIND, SAE_FORMAT_VERSION)?)
    }

    fn from_container(c: artifact::Container<Vec<SparseCoder>>) -> Result<Self> {
        let mut coders = c.header;
        let mut offset = 0;
        for coder in &mut coders {
            let (h, l) = (coder.head_dim, coder.latent_dim);
            let n = 2 * h * l + l;
            if offset + n > c.values.len() {
                return Err(Error::Format("coder file holds fewer values than its header describes".into()));
            }
            coder.w_e = vec![0.0; h * l];
            coder.b_e = vec![0.0; l];
            coder.w_d = vec![0.0; h * l];
            coder.set_flat_params(&c.values[offset..offset + n]);
            offset += n;
        }
        if offset != c.values.len() {
            return Err(Error::Format("coder file holds more values than its header describes".into()));
        }
        HeadCoders::new(coders).map_err(|e| Error::Format(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sae::Regularizer;
    use crate::testutil::{coders, lm};
    use crate::tinylm::{encode_prompt, ForwardOptions};

    fn tap(layer: usize) -> QueryTap {
        let lm = lm();
        let rec = &crate::testutil::records(2, 1)[0];
        let toks = encode_prompt(&rec.grid, None).unwrap();
        lm.forward(
            &toks,
            &ForwardOptions {
                tap_layer: Some(layer),
                ..Default::default()
            },
        )
        .unwrap()
        .tap
        .unwrap()
    }

    #[test]
    fn sequences_encode_and_decode_per_head() {
        let bank = coders(&lm(), 1, 2);
        let t = tap(1);
        let codes = bank.encode_sequence(&t).unwrap();
        assert_eq!(codes.len(), 2);
        assert!(codes.iter().all(|c| c.z.shape() == (t.positions, bank.latent_dim()) && c.layer == 1));
        let back = bank.decode_sequence(&codes).unwrap();
        assert_eq!((back.n_heads, back.positions, back.head_dim), (t.n_heads, t.positions, t.head_dim));
        assert!(bank.relative_error(&t).unwrap().is_finite());
        assert!(bank.decode_sequence(&codes[..1]).is_err());
    }

    #[test]
    fn coders_must_be_in_head_order_at_one_layer() {
        let a = SparseCoder::init(1, 0, 4, Regularizer::L1, 0.1, 0.0, 1).unwrap();
        let b = SparseCoder::init(2, 1, 4, Regularizer::L1, 0.1, 0.0, 2).unwrap();
        let c = SparseCoder::init(1, 0, 4, Regularizer::L1, 0.1, 0.0, 3).unwrap();
        assert!(HeadCoders::new(vec![a.clone(), b]).is_err());
        assert!(HeadCoders::new(vec![a, c]).is_err());
        assert!(HeadCoders::new(Vec::new()).is_err());
    }

    #[test]
    fn files_round_trip_bitwise() {
        let bank = coders(&lm(), 1, 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sae.bin");
        bank.save(&path).unwrap();
        let back = HeadCoders::load(&path).unwrap();
        assert_eq!(back, bank);
        let t = tap(1);
        let (x, y) = (bank.encode_sequence(&t).unwrap(), back.encode_sequence(&t).unwrap());
        for (a, b) in x.iter().zip(&y) {
            assert!(a.z.data().iter().zip(b.z.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
        let mut buf = Vec::new();
        bank.write_to(&mut buf).unwrap();
        assert_eq!(HeadCoders::read_from(&buf[..]).unwrap(), bank);
    }

    #[test]
    fn value_count_must_match_the_header() {
        let bank = coders(&lm(), 1, 4);
        let c = artifact::Container {
            header: bank.coders.clone(),
            values: vec![0.0; 3],
        };
        assert_eq!(HeadCoders::from_container(c).unwrap_err().kind(), "format");
        assert_eq!(HeadCoders::load(Path::new("/definitely/not/here")).unwrap_err().kind(), "missing-file");
    }
}
