//! Prototype-guided steering of attention queries in a sparse-coder latent space,
//! evaluated on a gridworld path-planning benchmark with exact reference oracles.
//!
//! Modules, bottom up:
//!
//! - [`numerics`]: dense matrices, softmax and divergences, Adam with warm-up + cosine
//!   decay, finite-difference gradient checks.
//! - [`gridworld`]: grids, prompts, path validation and the shortest / safest /
//!   longest oracles, and seeded dataset generation.
//! - [`tinylm`]: a small decoder-only transformer with query taps, query and residual
//!   edits, training and greedy generation.
//! - [`sae`]: per-head sparse coders over tapped queries (L1 or L2 penalty).
//! - [`steering`]: class prototypes, the prototype softmax, latent gradient ascent and
//!   the comparison arms.
//! - [`diagnostics`]: activation deviation, next-token divergence, drift and attention maps.
//! - [`evalharness`]: rule-based scoring, experiment drivers, bootstrap statistics and reports.
//! - [`cli`]: configuration, pipeline stages and the `protosteer` command line.

pub(crate) mod artifact;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod evalharness;
pub mod gridworld;
pub mod numerics;
pub mod sae;
pub mod steering;
pub mod tinylm;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
