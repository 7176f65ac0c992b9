use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::LmConfig;
use super::model::{Layout, LmCheckpoint};
use super::vocab::Vocab;
use crate::{artifact, Error, Result};

pub const LM_FORMAT_VERSION: u32 = 1;
const KIND: &str = "lm";

#[derive(Serialize, Deserialize)]
struct Header {
    config: LmConfig,
    vocab_size: usize,
    /// Tensor names and shapes, in the order their values are stored.
    tensors: Vec<(String, Vec<usize>)>,
}

impl LmCheckpoint {
    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let header = Header {
            config: self.config,
            vocab_size: Vocab::get().len(),
            tensors: self.layout.tensors().to_vec(),
        };
        artifact::write(w, KIND, LM_FORMAT_VERSION, &header, &self.params)
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        Self::from_container(artifact::read(r, KIND, LM_FORMAT_VERSION)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            config: self.config,
            vocab_size: Vocab::get().len(),
            tensors: self.layout.tensors().to_vec(),
        };
        artifact::save(path, KIND, LM_FORMAT_VERSION, &header, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(artifact::load(path, KIND, LM_FORMAT_VERSION)?)
    }

    fn from_container(c: artifact::Container<Header>) -> Result<Self> {
        let config = c.header.config;
        config.validate().map_err(|e| Error::Format(format!("stored config invalid: {e}")))?;
        if c.header.vocab_size != Vocab::get().len() {
            return Err(Error::Format(format!(
                "vocabulary of {} tokens, expected {}",
                c.header.vocab_size,
                Vocab::get().len()
            )));
        }
        let layout = Layout::new(&config, c.header.vocab_size);
        if layout.tensors() != c.header.tensors.as_slice() {
            return Err(Error::Format("tensor table does not match the stored config".into()));
        }
        if c.values.len() != layout.total() {
            return Err(Error::Format(format!("{} parameters, expected {}", c.values.len(), layout.total())));
        }
        Ok(LmCheckpoint {
            config,
            layout,
            params: c.values,
        })
    }
}
