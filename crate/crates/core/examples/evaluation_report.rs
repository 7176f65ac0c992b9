//! Score unsteered and steered generations on a split and emit every report format
//! plus a checksum manifest.

use protosteer::cli::{build_kit, generate, sae_layer, split_records, support_set, train_coders, train_model, ExperimentConfig};
use protosteer::evalharness::{bootstrap_mean, emit_report, run_experiment, sha256_hex, Report, ReportFormat};
use protosteer::gridworld::{Split, Target};
use protosteer::steering::{compute_prototypes, Method};

const CONFIG: &str = r#"
seed = 17
[data]
count = 1200
rows = [4, 4]
cols = [4, 4]
[lm.model]
n_layers = 3
n_heads = 4
d_model = 48
context_len = 128
ff_mult = 4
intervention_layer = 1
[lm.train]
epochs = 5
[sae]
corpus_records = 300
[sae.train]
epochs = 20
[steering]
support_records = 200
"#;

/// The built-in small recipe, or the TOML file given as the first argument.
fn config() -> protosteer::Result<ExperimentConfig> {
    match std::env::args().nth(1) {
        Some(p) => ExperimentConfig::load(std::path::Path::new(&p)),
        None => ExperimentConfig::from_toml(CONFIG),
    }
}

fn main() -> protosteer::Result<()> {
    let cfg = config()?;
    let records = generate(&cfg)?;
    let (lm, _) = train_model(&records, &cfg)?;
    let (coders, _) = train_coders(&lm, &records, sae_layer(&cfg, &lm), &cfg, &cfg.sae.train)?;
    let protos = compute_prototypes(&support_set(&records, &cfg)?, &lm, &coders)?;
    let kit = build_kit(&lm, &coders, &protos, &cfg, None)?;
    let test = split_records(&records, Split::Test, Some(30));

    let base = run_experiment(&test, &kit, Method::None, &Target::ALL)?;
    let steered = run_experiment(&test, &kit, Method::SaeOpt, &Target::ALL)?;
    for t in Target::ALL {
        let diffs: Vec<f64> = base
            .records
            .iter()
            .zip(&steered.records)
            .filter(|(b, _)| b.target == t)
            .filter_map(|(b, s)| Some(s.outcome.attribute(t)? - b.outcome.attribute(t)?))
            .collect();
        let ci = bootstrap_mean(&diffs, 2000, 0.95, 1);
        println!(
            "{t}: paired attribute change {:+.3} [{:+.3}, {:+.3}] over {} pairs",
            ci.mean, ci.lo, ci.hi, ci.n
        );
    }

    let report = Report::new(vec![base.metrics, steered.metrics]);
    for f in [ReportFormat::Markdown, ReportFormat::Csv] {
        println!("{}", emit_report(&report, f)?);
    }
    let json = emit_report(&report, ReportFormat::Json)?;
    println!("json report sha256 {}", sha256_hex(json.as_bytes()));
    Ok(())
}
