//! Small fixtures shared by unit tests.

use crate::gridworld::{build_dataset, DataConfig, DatasetRecord};
use crate::sae::{HeadCoders, Regularizer, SparseCoder};
use crate::steering::{compute_prototypes, support_from_records, PrototypeSet, SteerConfig, SteeringKit};
use crate::tinylm::{LmCheckpoint, LmConfig};

pub fn records(count: usize, seed: u64) -> Vec<DatasetRecord> {
    let cfg = DataConfig {
        count,
        rows: [3, 4],
        cols: [3, 4],
        ..DataConfig::default()
    };
    build_dataset(&cfg, seed).unwrap()
}

/// Untrained 2-layer model, 2 heads of width 4, steered at layer 1.
pub fn lm() -> LmCheckpoint {
    LmCheckpoint::init(LmConfig::new(2, 2, 8, 96).unwrap(), 11).unwrap()
}

pub fn coders(lm: &LmCheckpoint, layer: usize, seed: u64) -> HeadCoders {
    let dh = lm.config.head_dim();
    HeadCoders::new(
        (0..lm.config.n_heads)
            .map(|h| SparseCoder::init(layer, h, dh, Regularizer::L1, 3e-3, 1e-4, seed + h as u64).unwrap())
            .collect(),
    )
    .unwrap()
}

pub struct Fixture {
    pub records: Vec<DatasetRecord>,
    pub lm: LmCheckpoint,
    pub coders: HeadCoders,
    pub protos: PrototypeSet,
}

impl Fixture {
    pub fn new() -> Self {
        let records = records(12, 3);
        let lm = lm();
        let coders = coders(&lm, 1, 5);
        let protos = compute_prototypes(&support_from_records(&records), &lm, &coders).unwrap();
        Fixture { records, lm, coders, protos }
    }

    pub fn kit(&self, eta: f64) -> SteeringKit<'_> {
        let steer = SteerConfig {
            eta,
            max_steps: 40,
            ..SteerConfig::default()
        };
        SteeringKit::new(&self.lm, &self.coders, &self.protos, steer, 10).unwrap()
    }
}
