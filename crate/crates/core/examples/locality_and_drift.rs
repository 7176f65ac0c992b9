//! Query versus residual injection locality, non-target drift under L1/L2 coders
//! and a cell attention map, written as CSV and SVG into a temporary directory.

use protosteer::cli::{build_kit, generate, sae_layer, split_records, support_set, train_coders, train_model, ExperimentConfig};
use protosteer::diagnostics::{attention_svg, cell_attention_map, cell_token_spans, write_attention_csv};
use protosteer::evalharness::{drift_experiment, locality_experiment, DriftArm};
use protosteer::gridworld::{Split, Target};
use protosteer::sae::{Regularizer, SaeConfig};
use protosteer::steering::{compute_dense_prototypes, compute_prototypes};
use protosteer::tinylm::{encode_prompt, ForwardOptions};

const CONFIG: &str = r#"
seed = 13
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
    let layer = sae_layer(&cfg, &lm);
    let support = support_set(&records, &cfg)?;
    let test = split_records(&records, Split::Test, Some(20));

    let (coders, _) = train_coders(&lm, &records, layer, &cfg, &cfg.sae.train)?;
    let protos = compute_prototypes(&support, &lm, &coders)?;
    let dense = compute_dense_prototypes(&support, &lm, layer)?;
    let kit = build_kit(&lm, &coders, &protos, &cfg, Some((&support, &dense)))?;
    for t in Target::ALL {
        let r = locality_experiment(&test, &kit, t)?;
        println!(
            "{t}: downstream deviation query {:.4} residual {:.4}; next-token JSD query {:.2e} residual {:.2e}",
            r.mean_query_delta, r.mean_residual_delta, r.mean_query_jsd, r.mean_residual_jsd
        );
    }

    let mut fams = Vec::new();
    for kind in [Regularizer::L1, Regularizer::L2] {
        let (c, _) = train_coders(
            &lm,
            &records,
            layer,
            &cfg,
            &SaeConfig {
                kind,
                lambda: 3e-2,
                ..cfg.sae.train
            },
        )?;
        let p = compute_prototypes(&support, &lm, &c)?;
        fams.push((kind, c, p));
    }
    let arms: Vec<DriftArm> = fams
        .iter()
        .map(|(kind, c, p)| DriftArm {
            kind: *kind,
            coefficient: 3e-2,
            coders: c,
            protos: p,
        })
        .collect();
    for row in drift_experiment(
        &lm,
        &test,
        &arms,
        &Target::ALL,
        &cfg.steering.steer_config(Target::Safe),
        cfg.steering.max_new,
    )? {
        println!("drift {}: L1 {:.4} L2 {:.4} ratio {:.3}", row.target, row.mean_l1, row.mean_l2, row.ratio);
    }

    let rec = &test[0];
    let mut seq = encode_prompt(&rec.grid, None)?;
    seq.extend(kit.run(&seq, protosteer::steering::Method::None, Target::Short)?.tokens);
    let fwd = lm.forward(
        &seq,
        &ForwardOptions {
            attention_layer: Some(layer),
            ..Default::default()
        },
    )?;
    let map = cell_attention_map(&fwd.attention.expect("attention requested"), &cell_token_spans(&rec.grid, &seq), layer)?;
    let dir = tempfile_dir();
    let mut csv = Vec::new();
    write_attention_csv(&map, &mut csv)?;
    std::fs::write(dir.join("attention.csv"), csv)?;
    std::fs::write(dir.join("attention.svg"), attention_svg(&map, rec.grid.rows(), rec.grid.cols()))?;
    println!("attention map written to {}", dir.display());
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join("protosteer-locality");
    std::fs::create_dir_all(&d).expect("temp dir");
    d
}
