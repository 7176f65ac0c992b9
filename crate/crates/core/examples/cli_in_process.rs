//! Drive the command-line interface in process: resolve a configuration, inspect the
//! derived seeds and run two subcommands.

use protosteer::cli::{main_with, ExperimentConfig, SeedStream};

fn main() -> protosteer::Result<()> {
    let cfg = ExperimentConfig::resolve(None, Some(42))?;
    for s in [SeedStream::Data, SeedStream::LmTrain, SeedStream::SaeCorpus, SeedStream::SaeTrain] {
        println!("{s:?} seed {}", cfg.derived_seed(s));
    }

    let dir = std::env::temp_dir().join("protosteer-cli-example");
    std::fs::create_dir_all(&dir)?;
    let data = dir.join("data.jsonl");
    let code = main_with([
        "protosteer",
        "gen-data",
        "--seed",
        "42",
        "--count",
        "20",
        "--rows",
        "4",
        "--cols",
        "4-5",
        "--out",
        data.to_str().unwrap(),
    ]);
    println!("gen-data exited {code}; {} lines", std::fs::read_to_string(&data)?.lines().count());

    let code = main_with(["protosteer", "report", "--in", data.to_str().unwrap()]);
    println!("report on a dataset file exited {code} (format error)");
    Ok(())
}
