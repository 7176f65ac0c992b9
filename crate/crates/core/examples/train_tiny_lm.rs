//! Train a small decoder-only model on gridworld paths and sample from it.

use protosteer::cli::{generate, split_records, train_model, ExperimentConfig};
use protosteer::evalharness::score_generation;
use protosteer::gridworld::{Split, Target};
use protosteer::tinylm::{encode_prompt, Vocab};

const CONFIG: &str = r#"
seed = 3
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
    let (lm, log) = train_model(&records, &cfg)?;
    println!("{} parameters; loss {:.3} -> {:?}", lm.param_count(), log.initial_loss, log.epoch_losses);

    let vocab = Vocab::get();
    for rec in split_records(&records, Split::Test, Some(6)) {
        for tag in [None, Some(Target::Long)] {
            let out = lm.generate(&encode_prompt(&rec.grid, tag)?, 60, None)?;
            let text = vocab.detokenize(&out);
            let score = score_generation(&rec.grid, &rec.gold, &text, tag.unwrap_or(Target::Short));
            println!(
                "{} {:>5}: {text}  [{:?}]",
                rec.grid.id(),
                tag.map_or("plain".to_string(), |t| t.to_string()),
                score.bucket
            );
        }
    }
    Ok(())
}
