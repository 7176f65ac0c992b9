//! Build class prototypes in coder space and steer one prompt with every method.

use protosteer::cli::{build_kit, generate, sae_layer, split_records, support_set, train_coders, train_model, ExperimentConfig};
use protosteer::evalharness::score_generation;
use protosteer::gridworld::{render_prompt, Split, Target};
use protosteer::steering::{compute_dense_prototypes, compute_prototypes, prototype_distribution, Method};
use protosteer::tinylm::encode_prompt;

const CONFIG: &str = r#"
seed = 11
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
    let (coders, _) = train_coders(&lm, &records, layer, &cfg, &cfg.sae.train)?;
    let support = support_set(&records, &cfg)?;
    let protos = compute_prototypes(&support, &lm, &coders)?;
    let dense = compute_dense_prototypes(&support, &lm, layer)?;
    let kit = build_kit(&lm, &coders, &protos, &cfg, Some((&support, &dense)))?;

    let (d, p) = prototype_distribution(&protos.centers[1], &protos)?;
    println!("safe center: distances {d:.3?}, class probabilities {p:.3?}");

    let rec = &split_records(&records, Split::Test, Some(1))[0];
    println!("{}", render_prompt(&rec.grid));
    let prompt = encode_prompt(&rec.grid, None)?;
    for t in Target::ALL {
        println!("target {t}:");
        for m in Method::ALL {
            let out = kit.run(&prompt, m, t)?;
            let o = score_generation(&rec.grid, &rec.gold, &out.text, t);
            let steps = out.trace.as_ref().map_or(0, |tr| tr.updates());
            println!(
                "  {:>13} {:?} len {:?} adj {:?} steps {steps:>3} jsd {:.2e}",
                m.name(),
                o.bucket,
                o.length,
                o.adjacency,
                out.jsd
            );
        }
    }
    Ok(())
}
