use std::io::{Read, Write};
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::gridworld::{DatasetRecord, Grid, Path, Target};
use crate::sae::HeadCoders;
use crate::tinylm::{encode_path, encode_prompt, ForwardOptions, LmCheckpoint, QueryTap};
use crate::{artifact, Error, Result};

pub const PROTOTYPE_FORMAT_VERSION: u32 = 1;
const KIND: &str = "prototypes";

/// Which representation the centers live in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    /// Sparse codes, `n_heads * latent_dim` wide.
    Latent,
    /// Raw queries, `n_heads * head_dim` wide.
    Dense,
}

/// Class centers over position-mean, head-concatenated representations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    pub layer: usize,
    pub space: Space,
    pub names: Vec<String>,
    pub support: Vec<usize>,
    /// Width of each head's block inside a center.
    pub head_width: usize,
    #[serde(skip)]
    pub centers: Vec<Vec<f64>>,
}

/// A labelled (prompt, path) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportExample {
    pub grid: Grid,
    pub path: Path,
    pub class: usize,
}

/// Every record contributes its three gold paths, one to each class.
pub fn support_from_records(records: &[DatasetRecord]) -> Vec<SupportExample> {
    records
        .iter()
        .flat_map(|r| {
            Target::ALL.iter().map(move |&t| SupportExample {
                grid: r.grid.clone(),
                path: r.gold.path(t).clone(),
                class: t.index(),
            })
        })
        .collect()
}

/// Queries tapped at `layer` over the untagged prompt followed by `path` (no EOS).
pub fn tap_sequence(lm: &LmCheckpoint, grid: &Grid, path: &Path, layer: usize) -> Result<QueryTap> {
    let mut toks = encode_prompt(grid, None)?;
    toks.extend(encode_path(path)?);
    let opts = ForwardOptions {
        tap_layer: Some(layer),
        ..Default::default()
    };
    Ok(lm.forward(&toks, &opts)?.tap.expect("tap requested"))
}

/// Position-mean of each head's codes, concatenated across heads.
pub fn pooled_latent(coders: &HeadCoders, tap: &QueryTap) -> Result<Vec<f64>> {
    let codes = coders.encode_sequence(tap)?;
    let mut out = Vec::with_capacity(coders.n_heads() * coders.latent_dim());
    for c in &codes {
        let (n, l) = c.z.shape();
        let mut mean = vec![0.0; l];
        for t in 0..n {
            mean.iter_mut().zip(c.z.row(t)).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        out.extend(mean);
    }
    Ok(out)
}

fn centers_of(k: usize, items: impl Iterator<Item = Result<(usize, Vec<f64>)>>) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut sums: Vec<Vec<f64>> = vec![Vec::new(); k];
    let mut counts = vec![0; k];
    for item in items {
        let (class, v) = item?;
        if class >= k {
            return Err(Error::contract(format!("class {class} outside {k} classes")));
        }
        if sums[class].is_empty() {
            sums[class] = vec![0.0; v.len()];
        }
        sums[class].iter_mut().zip(&v).for_each(|(s, x)| *s += x);
        counts[class] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::contract(format!("class {empty} has no support examples")));
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|v| *v /= c as f64);
    }
    Ok((sums, counts))
}

fn target_names() -> Vec<String> {
    Target::ALL.iter().map(|t| t.name().to_string()).collect()
}

/// Latent-space centers: tap, encode, mean over positions, then over each class's examples.
pub fn compute_prototypes(support: &[SupportExample], lm: &LmCheckpoint, coders: &HeadCoders) -> Result<PrototypeSet> {
    let layer = coders.layer;
    let (centers, counts) = centers_of(
        Target::ALL.len(),
        support
            .iter()
            .map(|ex| Ok((ex.class, pooled_latent(coders, &tap_sequence(lm, &ex.grid, &ex.path, layer)?)?))),
    )?;
    PrototypeSet::new(layer, Space::Latent, target_names(), counts, coders.latent_dim(), centers)
}

/// Centers over position-mean raw queries, bypassing the coders.
pub fn compute_dense_prototypes(support: &[SupportExample], lm: &LmCheckpoint, layer: usize) -> Result<PrototypeSet> {
    let (centers, counts) = centers_of(
        Target::ALL.len(),
        support
            .iter()
            .map(|ex| Ok((ex.class, tap_sequence(lm, &ex.grid, &ex.path, layer)?.position_mean()))),
    )?;
    PrototypeSet::new(layer, Space::Dense, target_names(), counts, lm.config.head_dim(), centers)
}

impl PrototypeSet {
    pub fn new(layer: usize, space: Space, names: Vec<String>, support: Vec<usize>, head_width: usize, centers: Vec<Vec<f64>>) -> Result<Self> {
        if centers.is_empty() || names.len() != centers.len() || support.len() != centers.len() {
            return Err(Error::contract("names, support sizes and centers must be non-empty and aligned"));
        }
        let dim = centers[0].len();
        if dim == 0 || head_width == 0 || !dim.is_multiple_of(head_width) || centers.iter().any(|c| c.len() != dim) {
            return Err(Error::shape("centers must share a width that is a multiple of head_width"));
        }
        if centers.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::contract("non-finite prototype center"));
        }
        if support.contains(&0) {
            return Err(Error::contract("every class needs at least one support example"));
        }
        Ok(PrototypeSet {
            layer,
            space,
            names,
            support,
            head_width,
            centers,
        })
    }

    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }

    pub fn n_heads(&self) -> usize {
        self.dim() / self.head_width
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        artifact::write(w, KIND, PROTOTYPE_FORMAT_VERSION, self, &self.centers.concat())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        Self::from_container(artifact::read(r, KIND, PROTOTYPE_FORMAT_VERSION)?)
    }

    pub fn save(&self, path: &FsPath) -> Result<()> {
        artifact::save(path, KIND, PROTOTYPE_FORMAT_VERSION, self, &self.centers.concat())
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        Self::from_container(artifact::load(path, KIND, PROTOTYPE_FORMAT_VERSION)?)
    }

    fn from_container(c: artifact::Container<PrototypeSet>) -> Result<Self> {
        let h = c.header;
        let k = h.names.len();
        if k == 0 || !c.values.len().is_multiple_of(k) {
            return Err(Error::Format(format!("{} values cannot split into {k} centers", c.values.len())));
        }
        let centers = c.values.chunks(c.values.len() / k).map(<[f64]>::to_vec).collect();
        PrototypeSet::new(h.layer, h.space, h.names, h.support, h.head_width, centers).map_err(|e| Error::Format(e.to_string()))
    }
}
