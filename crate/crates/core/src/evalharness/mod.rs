//! Rule-based scoring, experiment orchestration and report emission.

mod experiment;
mod metrics;
mod report;
mod score;
mod stats;

pub use experiment::{
    drift_experiment, jsd_sweep, layer_sweep, locality_experiment, run_experiment, DriftArm, DriftRow, ExperimentResult, LocalityReport,
};
pub use metrics::{aggregate, InstanceRecord, RunMetrics, TargetMetrics, REPORT_SCHEMA_VERSION};
pub use report::{emit_report, sha256_hex, Manifest, Report, ReportFormat, REPORT_COLUMNS};
pub use score::{score_generation, Bucket, Outcome};
pub use stats::{bootstrap_mean, BootstrapInterval};
