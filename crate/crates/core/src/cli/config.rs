use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::evalharness::ReportFormat;
use crate::gridworld::{DataConfig, Split, Target};
use crate::sae::SaeConfig;
use crate::steering::{Method, SteerConfig};
use crate::tinylm::{LmConfig, TrainOptions};
use crate::{Error, Result};

/// Whole-pipeline configuration. Every section is optional; `seed` is not.
///
/// The seeds of the individual stages are derived from `seed`, so any `seed`
/// given inside `[lm.train]` or `[sae.train]` is overwritten.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub lm: LmSection,
    #[serde(default)]
    pub sae: SaeSection,
    #[serde(default)]
    pub steering: SteeringSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmSection {
    pub model: LmConfig,
    pub train: TrainOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaeSection {
    /// Defaults to the model's intervention layer.
    pub layer: Option<usize>,
    /// Training records whose gold sequences feed the query corpus.
    pub corpus_records: usize,
    pub max_per_head: usize,
    pub train: SaeConfig,
}

impl Default for SaeSection {
    fn default() -> Self {
        SaeSection {
            layer: None,
            corpus_records: 600,
            max_per_head: 20_000,
            train: SaeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SteeringSection {
    pub eta: f64,
    pub epsilon: f64,
    pub max_steps: usize,
    /// Anchor weight used by `sae-opt-anch`.
    pub anchor: f64,
    pub ssv_alpha: f64,
    pub caa_coeff: f64,
    pub disco_coeff: f64,
    /// Generation budget in tokens.
    pub max_new: usize,
    /// Training records used as the labelled support set (three examples each).
    pub support_records: usize,
}

impl Default for SteeringSection {
    fn default() -> Self {
        let s = SteerConfig::default();
        SteeringSection {
            eta: s.eta,
            epsilon: s.epsilon,
            max_steps: s.max_steps,
            anchor: 1.0,
            ssv_alpha: 1.0,
            caa_coeff: 1.0,
            disco_coeff: 1.0,
            max_new: 60,
            support_records: 300,
        }
    }
}

impl SteeringSection {
    pub fn steer_config(&self, target: Target) -> SteerConfig {
        SteerConfig {
            eta: self.eta,
            epsilon: self.epsilon,
            max_steps: self.max_steps,
            anchor: None,
            target,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub split: Split,
    /// Evaluate only the first `limit` records of the split.
    pub limit: Option<usize>,
    pub methods: Vec<Method>,
    pub targets: Vec<Target>,
    pub format: ReportFormat,
    /// Step sizes for the divergence sweep.
    pub etas: Vec<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            split: Split::Test,
            limit: None,
            methods: vec![Method::None, Method::SaeOpt],
            targets: Target::ALL.to_vec(),
            format: ReportFormat::Json,
            etas: vec![0.0, 0.1, 0.25, 0.5, 1.0],
        }
    }
}

/// Largest accepted seed, so every seed stays representable in TOML.
pub const MAX_SEED: u64 = i64::MAX as u64;

/// Independent seed streams derived from the top-level seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedStream {
    Data,
    LmTrain,
    SaeCorpus,
    SaeTrain,
}

impl ExperimentConfig {
    /// Defaults everywhere except the seed.
    pub fn with_seed(seed: u64) -> Self {
        ExperimentConfig {
            seed,
            data: DataConfig::default(),
            lm: LmSection::default(),
            sae: SaeSection::default(),
            steering: SteeringSection::default(),
            eval: EvalSection::default(),
        }
    }

    /// Parses, derives the stage seeds and validates.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.apply_seeds();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_toml(&text)
    }

    /// Loads `path` if given; otherwise defaults, which then need `seed`.
    /// A `seed` argument overrides the file.
    pub fn resolve(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut cfg = match (path, seed) {
            (Some(p), _) => Self::load(p)?,
            (None, Some(s)) => Self::with_seed(s),
            (None, None) => return Err(Error::Config("a seed is required: pass --seed or a config file".into())),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.apply_seeds();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn derived_seed(&self, stream: SeedStream) -> u64 {
        let k = match stream {
            SeedStream::Data => 0,
            SeedStream::LmTrain => 1,
            SeedStream::SaeCorpus => 2,
            SeedStream::SaeTrain => 3,
        };
        // TOML integers are signed 64-bit
        (self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k) >> 1) & MAX_SEED
    }

    fn apply_seeds(&mut self) {
        self.lm.train.seed = self.derived_seed(SeedStream::LmTrain);
        self.sae.train.seed = self.derived_seed(SeedStream::SaeTrain);
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed > MAX_SEED {
            return Err(Error::Config(format!("seed must be at most {MAX_SEED}")));
        }
        self.lm.model.validate()?;
        if let Some(l) = self.sae.layer {
            if l >= self.lm.model.n_layers {
                return Err(Error::Config(format!("sae.layer {l} outside a {}-layer model", self.lm.model.n_layers)));
            }
        }
        if self.sae.corpus_records == 0 || self.sae.max_per_head == 0 {
            return Err(Error::Config("sae.corpus_records and sae.max_per_head must be positive".into()));
        }
        let s = &self.steering;
        s.steer_config(Target::Safe).validate()?;
        if s.anchor.is_nan() || s.anchor < 0.0 || s.max_new == 0 || s.support_records == 0 {
            return Err(Error::Config("steering.anchor >= 0, max_new and support_records > 0 required".into()));
        }
        if self.eval.methods.is_empty() || self.eval.targets.is_empty() {
            return Err(Error::Config("eval.methods and eval.targets must be non-empty".into()));
        }
        Ok(())
    }

    /// Pretty TOML of the effective configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_else(|e| panic!("config is TOML-representable: {e}"))
    }
}
