//! Per-head sparse autoencoders over attention queries.

mod bank;
mod coder;
mod train;

pub use bank::{HeadCoders, LatentCode, SAE_FORMAT_VERSION};
pub use coder::{Regularizer, SaeGrads, SaeLoss, SparseCoder, DEFAULT_GAMMA, EXPANSION};
pub use train::{collect_query_corpus, reconstruction_stats, train_sae, SaeConfig, SaeLog};
