use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

const BIN: &str = env!("CARGO_BIN_EXE_protosteer");

const TINY: &str = r#"
seed = 7

[data]
count = 40
rows = [3, 4]
cols = [3, 4]

[lm.model]
n_layers = 2
n_heads = 2
d_model = 16
context_len = 96
ff_mult = 4
intervention_layer = 1

[lm.train]
epochs = 2

[sae]
corpus_records = 20
max_per_head = 2000

[sae.train]
epochs = 3

[steering]
max_steps = 40
max_new = 24
support_records = 12

[eval]
limit = 4
"#;

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

struct Pipeline {
    dir: PathBuf,
}

impl Pipeline {
    fn path(&self, name: &str) -> String {
        self.dir.join(name).to_str().unwrap().to_string()
    }
}

fn pipeline() -> &'static Pipeline {
    static P: OnceLock<Pipeline> = OnceLock::new();
    P.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        let p = Pipeline { dir };
        std::fs::write(p.path("cfg.toml"), TINY).unwrap();
        let cfg = p.path("cfg.toml");
        ok(&["gen-data", "--config", &cfg, "--out", &p.path("data.jsonl")]);
        ok(&["train-lm", "--config", &cfg, "--data", &p.path("data.jsonl"), "--out", &p.path("lm.bin")]);
        ok(&[
            "train-sae",
            "--config",
            &cfg,
            "--lm",
            &p.path("lm.bin"),
            "--data",
            &p.path("data.jsonl"),
            "--out",
            &p.path("sae.bin"),
        ]);
        ok(&[
            "prototypes",
            "--config",
            &cfg,
            "--lm",
            &p.path("lm.bin"),
            "--sae",
            &p.path("sae.bin"),
            "--data",
            &p.path("data.jsonl"),
            "--out",
            &p.path("protos.bin"),
        ]);
        p
    })
}

fn error_kind(out: &Output) -> String {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().rev().find(|l| l.starts_with('{')).expect("json error line");
    let v: serde_json::Value = serde_json::from_str(line).unwrap();
    assert!(v["message"].is_string());
    v["error"].as_str().unwrap().to_string()
}

fn first_test_id(data: &Path) -> String {
    let text = std::fs::read_to_string(data).unwrap();
    text.lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .find(|v| v["split"] == "test")
        .map(|v| v["id"].as_str().unwrap().to_string())
        .expect("a test record")
}

#[test]
fn unknown_config_key_exits_2_with_a_json_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 1\n[lm.model]\nwidth = 3\n").unwrap();
    let out = run(&[
        "gen-data",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("d").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out), "config");
}

#[test]
fn missing_input_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "train-lm",
        "--seed",
        "1",
        "--data",
        dir.path().join("none.jsonl").to_str().unwrap(),
        "--out",
        dir.path().join("lm").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_kind(&out), "missing-file");
}

#[test]
fn tampered_format_version_exits_4() {
    let p = pipeline();
    let mut bytes = std::fs::read(p.path("lm.bin")).unwrap();
    // magic (8) + kind length (4) + "lm" (2), then the u32 version
    bytes[14] = 99;
    let bad = p.path("lm_v99.bin");
    std::fs::write(&bad, bytes).unwrap();
    let out = run(&[
        "steer",
        "--config",
        &p.path("cfg.toml"),
        "--lm",
        &bad,
        "--sae",
        &p.path("sae.bin"),
        "--protos",
        &p.path("protos.bin"),
        "--data",
        &p.path("data.jsonl"),
        "--grid-id",
        &first_test_id(&p.dir.join("data.jsonl")),
        "--target",
        "safe",
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(error_kind(&out), "version");
}

#[test]
fn zero_step_steering_matches_the_plain_model() {
    let p = pipeline();
    let id = first_test_id(&p.dir.join("data.jsonl"));
    let steer = |extra: &[&str]| {
        let (cfg, lm, sae, protos, data) = (
            p.path("cfg.toml"),
            p.path("lm.bin"),
            p.path("sae.bin"),
            p.path("protos.bin"),
            p.path("data.jsonl"),
        );
        let mut args = vec![
            "steer",
            "--config",
            &cfg,
            "--lm",
            &lm,
            "--sae",
            &sae,
            "--protos",
            &protos,
            "--data",
            &data,
            "--grid-id",
            &id,
            "--target",
            "long",
        ];
        args.extend_from_slice(extra);
        String::from_utf8(ok(&args).stdout).unwrap()
    };
    assert_eq!(steer(&["--eta", "0"]), steer(&["--method", "none"]));
}

#[test]
fn effective_configuration_is_printed() {
    let p = pipeline();
    let out = ok(&[
        "gen-data",
        "--config",
        &p.path("cfg.toml"),
        "--count",
        "5",
        "--out",
        &p.path("small.jsonl"),
    ]);
    let stderr = String::from_utf8(out.stderr).unwrap();
    let toml = stderr.split("# effective configuration\n").nth(1).expect("config header");
    assert!(toml.contains("seed = 7") && toml.contains("count = 5"));
}

#[test]
fn eval_writes_a_manifest_and_reports_convert() {
    let p = pipeline();
    let report = p.path("eval.json");
    ok(&[
        "eval",
        "--config",
        &p.path("cfg.toml"),
        "--lm",
        &p.path("lm.bin"),
        "--sae",
        &p.path("sae.bin"),
        "--protos",
        &p.path("protos.bin"),
        "--data",
        &p.path("data.jsonl"),
        "--out",
        &report,
    ]);
    let man: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p.path("eval.manifest.json")).unwrap()).unwrap();
    assert_eq!(man["seed"], 7);
    assert!(serde_json::to_string(&man).unwrap().contains("eval.json"));

    let md = String::from_utf8(ok(&["report", "--in", &report]).stdout).unwrap();
    assert!(md.starts_with('|') || md.contains("\n|"));
    let again = p.path("again.json");
    ok(&["report", "--in", &report, "--format", "json", "--out", &again]);
    let a: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let b: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&again).unwrap()).unwrap();
    assert_eq!(a, b);

    let out = run(&["report", "--in", &p.path("lm.bin")]);
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["steer", "--target", "sideways"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}
