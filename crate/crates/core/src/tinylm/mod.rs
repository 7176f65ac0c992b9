//! A small decoder-only transformer over gridworld text, with capture and
//! injection of per-head attention queries at one layer.

mod checkpoint;
mod config;
mod generate;
mod model;
mod train;
mod vocab;

pub use checkpoint::LM_FORMAT_VERSION;
pub use config::LmConfig;
pub use generate::Intervention;
pub use model::{ForwardOptions, ForwardOutput, Layout, LmCheckpoint, QueryEdit, QueryTap, ResidualEdit};
pub use train::{build_examples, encode_path, encode_prompt, train_lm, LmExample, TrainLog, TrainOptions, UntaggedMix};
pub use vocab::{TokenId, Vocab, ARROW, BOS, EMPTY, EOS, GOAL, GRID, MAX_COORD, NEWLINE, PAD, START, WALL};
