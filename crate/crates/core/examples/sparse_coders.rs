//! Train per-head sparse coders on tapped queries and compare L1 with L2 penalties.

use protosteer::cli::{generate, train_coders, train_model, ExperimentConfig};
use protosteer::sae::{Regularizer, SaeConfig};
use protosteer::tinylm::{encode_prompt, ForwardOptions};

const CONFIG: &str = r#"
seed = 5
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
    let layer = lm.config.intervention_layer;
    for kind in [Regularizer::L1, Regularizer::L2] {
        for lambda in [3e-3, 3e-2, 3e-1] {
            let (coders, logs) = train_coders(
                &lm,
                &records,
                layer,
                &cfg,
                &SaeConfig {
                    kind,
                    lambda,
                    ..cfg.sae.train
                },
            )?;
            let l0: Vec<String> = logs.iter().map(|l| format!("{:.1}", l.mean_l0)).collect();
            let mse: Vec<String> = logs.iter().map(|l| format!("{:.3}", l.mse / l.variance)).collect();
            println!(
                "{kind:?} lambda {lambda:<6}: per-head L0 {l0:?} of {}, mse/var {mse:?}",
                coders.latent_dim()
            );

            let opts = ForwardOptions {
                tap_layer: Some(layer),
                ..Default::default()
            };
            let tap = lm.forward(&encode_prompt(&records[0].grid, None)?, &opts)?.tap.expect("tap requested");
            println!("    relative reconstruction error on one prompt {:.4}", coders.relative_error(&tap)?);
        }
    }
    Ok(())
}
