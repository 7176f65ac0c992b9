//! Stage helpers shared by the subcommands, the examples and the acceptance run.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use super::config::{ExperimentConfig, SeedStream};
use crate::gridworld::{build_dataset, read_dataset, write_dataset, DatasetRecord, Split};
use crate::sae::{collect_query_corpus, train_sae, HeadCoders, SaeConfig, SaeLog};
use crate::steering::{support_from_records, SupportExample};
use crate::tinylm::{train_lm, LmCheckpoint, TrainLog};
use crate::{Error, Result};

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(bytes)?;
    f.flush()?;
    Ok(())
}

pub fn load_records(path: &Path) -> Result<Vec<DatasetRecord>> {
    read_dataset(BufReader::new(open(path)?))
}

pub fn save_records(records: &[DatasetRecord], path: &Path) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    write_dataset(records, &mut f)?;
    f.flush()?;
    Ok(())
}

/// Records of one split in file order, optionally truncated.
pub fn split_records(records: &[DatasetRecord], split: Split, limit: Option<usize>) -> Vec<DatasetRecord> {
    records
        .iter()
        .filter(|r| r.split == split)
        .take(limit.unwrap_or(usize::MAX))
        .cloned()
        .collect()
}

pub fn generate(cfg: &ExperimentConfig) -> Result<Vec<DatasetRecord>> {
    build_dataset(&cfg.data, cfg.derived_seed(SeedStream::Data))
}

/// Trains the model on the train split.
pub fn train_model(records: &[DatasetRecord], cfg: &ExperimentConfig) -> Result<(LmCheckpoint, TrainLog)> {
    let train = split_records(records, Split::Train, None);
    if train.is_empty() {
        return Err(Error::Config("dataset has no train split".into()));
    }
    train_lm(&train, cfg.lm.model, &cfg.lm.train)
}

/// The layer coders are trained for: the configured one, else the model's intervention layer.
pub fn sae_layer(cfg: &ExperimentConfig, lm: &LmCheckpoint) -> usize {
    cfg.sae.layer.unwrap_or(lm.config.intervention_layer)
}

/// One coder per head at `layer`, trained on queries from the first
/// `sae.corpus_records` training records.
pub fn train_coders(
    lm: &LmCheckpoint,
    records: &[DatasetRecord],
    layer: usize,
    cfg: &ExperimentConfig,
    sae: &SaeConfig,
) -> Result<(HeadCoders, Vec<SaeLog>)> {
    if layer >= lm.config.n_layers {
        return Err(Error::Config(format!("layer {layer} outside a {}-layer model", lm.config.n_layers)));
    }
    let train = split_records(records, Split::Train, Some(cfg.sae.corpus_records));
    if train.is_empty() {
        return Err(Error::Config("dataset has no train split".into()));
    }
    let corpus = collect_query_corpus(lm, &train, layer, cfg.sae.max_per_head, cfg.derived_seed(SeedStream::SaeCorpus))?;
    let mut coders = Vec::with_capacity(corpus.len());
    let mut logs = Vec::with_capacity(corpus.len());
    for (head, c) in corpus.iter().enumerate() {
        let (coder, log) = train_sae(c, layer, head, sae)?;
        coders.push(coder);
        logs.push(log);
    }
    Ok((HeadCoders::new(coders)?, logs))
}

/// Gold paths of the first `steering.support_records` training records, three per record.
pub fn support_set(records: &[DatasetRecord], cfg: &ExperimentConfig) -> Result<Vec<SupportExample>> {
    let train = split_records(records, Split::Train, Some(cfg.steering.support_records));
    if train.is_empty() {
        return Err(Error::Config("dataset has no train split".into()));
    }
    Ok(support_from_records(&train))
}
