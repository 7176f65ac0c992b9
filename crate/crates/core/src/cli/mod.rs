//! Subcommand front end. Each command resolves an [`ExperimentConfig`] (file, then
//! flags), prints it to stderr, then runs one pipeline stage.

mod config;
mod pipeline;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::{EvalSection, ExperimentConfig, LmSection, SaeSection, SeedStream, SteeringSection, MAX_SEED};
pub use pipeline::{generate, load_records, sae_layer, save_records, split_records, support_set, train_coders, train_model};

use crate::diagnostics::{
    attention_svg, cell_attention_map, cell_token_spans, deviation_svg, line_chart_svg, write_attention_csv, write_deviation_csv,
    LayerDeviationProfile,
};
use crate::evalharness::{
    drift_experiment, emit_report, jsd_sweep, layer_sweep, locality_experiment, run_experiment, DriftArm, Manifest, Report, ReportFormat,
};
use crate::gridworld::{parse_prompt, DatasetRecord, Split, Target};
use crate::sae::{HeadCoders, Regularizer};
use crate::steering::{compute_dense_prototypes, compute_prototypes, Method, PrototypeSet, SteeringKit, SupportExample};
use crate::tinylm::{encode_prompt, ForwardOptions, LmCheckpoint, QueryEdit};
use crate::{Error, Result};
use pipeline::write_file;

#[derive(Debug, Parser)]
#[command(name = "protosteer", version, about = "Prototype-guided query steering on gridworld planning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options every pipeline command accepts.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML experiment configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the file's.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a gridworld dataset (JSON lines).
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: Option<usize>,
        /// Row range, `N` or `MIN,MAX`.
        #[arg(long, value_parser = parse_range)]
        rows: Option<[usize; 2]>,
        #[arg(long, value_parser = parse_range)]
        cols: Option<[usize; 2]>,
    },
    /// Train the toy language model on the train split.
    TrainLm {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        /// Write the training log as JSON.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Train one sparse coder per head on tapped queries.
    TrainSae {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lm: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        kind: Option<Regularizer>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Compute latent-space class prototypes from the train split.
    Prototypes {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lm: PathBuf,
        #[arg(long)]
        sae: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write raw-query prototypes.
        #[arg(long)]
        dense_out: Option<PathBuf>,
        /// Training records used as support.
        #[arg(long)]
        support: Option<usize>,
    },
    /// Steer one prompt and print the generated path.
    Steer {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        arts: Artifacts,
        #[arg(long)]
        target: Target,
        /// File holding a rendered grid prompt.
        #[arg(long, conflicts_with = "grid_id")]
        prompt_file: Option<PathBuf>,
        /// Id of a record in `--data`.
        #[arg(long, requires = "data")]
        grid_id: Option<String>,
        #[arg(long, default_value = "sae-opt")]
        method: Method,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
        /// Write the ascent trace as JSON lines.
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Evaluate methods on a split and write a report plus manifest.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        arts: Artifacts,
        #[arg(long)]
        split: Option<Split>,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long = "method", value_delimiter = ',')]
        methods: Vec<Method>,
        #[arg(long = "target", value_delimiter = ',')]
        targets: Vec<Target>,
        #[arg(long)]
        format: Option<ReportFormat>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Manifest path; defaults to `<out stem>.manifest.json` beside the report.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Per-instance records as JSON lines.
        #[arg(long)]
        records_out: Option<PathBuf>,
    },
    /// Locality, divergence, drift, attention and layer diagnostics.
    Diagnose {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        arts: Artifacts,
        #[arg(long)]
        mode: Mode,
        #[arg(long)]
        split: Option<Split>,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long = "target", value_delimiter = ',')]
        targets: Vec<Target>,
        /// Methods for `layer-sweep`; the first one is mapped by `attention-map`.
        #[arg(long = "method", value_delimiter = ',')]
        methods: Vec<Method>,
        /// Step sizes for `jsd-sweep`.
        #[arg(long, value_delimiter = ',')]
        etas: Vec<f64>,
        /// `KIND:LAMBDA:SAE_FILE:PROTO_FILE`, for `drift` (repeat).
        #[arg(long = "arm")]
        arms: Vec<String>,
        /// Coder file per layer, for `layer-sweep` (repeat).
        #[arg(long = "layer-sae")]
        layer_sae: Vec<PathBuf>,
        /// Record whose attention is mapped, for `attention-map`; default the first of the split.
        #[arg(long)]
        grid_id: Option<String>,
        /// Layer whose attention is mapped; default the coders' layer.
        #[arg(long)]
        layer: Option<usize>,
        /// Report format for `layer-sweep`.
        #[arg(long)]
        format: Option<ReportFormat>,
        #[arg(long)]
        out: PathBuf,
        /// Also write an SVG plot.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Re-emit a JSON report in another format.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: ReportFormat,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Trained artifacts consumed by steering commands.
#[derive(Debug, Clone, Args)]
pub struct Artifacts {
    #[arg(long)]
    pub lm: PathBuf,
    #[arg(long)]
    pub sae: Option<PathBuf>,
    #[arg(long)]
    pub protos: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Deviation,
    JsdSweep,
    Drift,
    AttentionMap,
    LayerSweep,
}

fn parse_range(s: &str) -> std::result::Result<[usize; 2], String> {
    let parts: Vec<&str> = s.split([',', '-']).collect();
    let num = |p: &str| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}"));
    match parts.as_slice() {
        [a] => num(a).map(|v| [v, v]),
        [a, b] => Ok([num(a)?, num(b)?]),
        _ => Err(format!("expected N or MIN,MAX, got {s:?}")),
    }
}

/// Process exit status for each failure class.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Io(_) | Error::MissingFile(_) => 3,
        Error::Version { .. } => 4,
        Error::Format(_) | Error::Json(_) | Error::Parse { .. } | Error::Tokenize { .. } => 5,
        _ => 1,
    }
}

/// The machine-readable failure line written to stderr.
pub fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

/// Parses `args` (program name first), runs the command and returns the exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            eprintln!(
                "{}",
                error_line("config", msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: "))
            );
            return 2;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            exit_code(&e)
        }
    }
}

impl Common {
    /// File, then `--seed`, then the command's own flags; validated and printed.
    fn resolve(&self, overrides: impl FnOnce(&mut ExperimentConfig)) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::resolve(self.config.as_deref(), self.seed)?;
        overrides(&mut cfg);
        cfg.validate()?;
        eprintln!("# effective configuration\n{}", cfg.to_toml());
        Ok(cfg)
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData {
            common,
            out,
            count,
            rows,
            cols,
        } => {
            let cfg = common.resolve(|c| {
                if let Some(n) = count {
                    c.data.count = n;
                }
                if let Some(r) = rows {
                    c.data.rows = r;
                }
                if let Some(r) = cols {
                    c.data.cols = r;
                }
            })?;
            let records = generate(&cfg)?;
            save_records(&records, &out)?;
            eprintln!("wrote {} records to {}", records.len(), out.display());
            Ok(())
        }
        Command::TrainLm {
            common,
            data,
            out,
            epochs,
            log,
        } => {
            let cfg = common.resolve(|c| {
                if let Some(e) = epochs {
                    c.lm.train.epochs = e;
                }
            })?;
            let records = load_records(&data)?;
            let (lm, train_log) = train_model(&records, &cfg)?;
            lm.save(&out)?;
            eprintln!(
                "trained {} parameters: loss {:.4} -> {:.4}",
                lm.param_count(),
                train_log.initial_loss,
                train_log.epoch_losses.last().copied().unwrap_or(f64::NAN)
            );
            if let Some(p) = log {
                write_file(&p, serde_json::to_string_pretty(&train_log)?.as_bytes())?;
            }
            Ok(())
        }
        Command::TrainSae {
            common,
            lm,
            data,
            out,
            layer,
            lambda,
            kind,
            epochs,
            log,
        } => {
            let cfg = common.resolve(|c| {
                if layer.is_some() {
                    c.sae.layer = layer;
                }
                if let Some(l) = lambda {
                    c.sae.train.lambda = l;
                }
                if let Some(k) = kind {
                    c.sae.train.kind = k;
                }
                if let Some(e) = epochs {
                    c.sae.train.epochs = e;
                }
            })?;
            let lm = LmCheckpoint::load(&lm)?;
            let records = load_records(&data)?;
            let (coders, logs) = train_coders(&lm, &records, sae_layer(&cfg, &lm), &cfg, &cfg.sae.train)?;
            coders.save(&out)?;
            for (h, l) in logs.iter().enumerate() {
                eprintln!("head {h}: mse/var {:.4}, mean L0 {:.2}", l.mse / l.variance, l.mean_l0);
            }
            if let Some(p) = log {
                write_file(&p, serde_json::to_string_pretty(&logs)?.as_bytes())?;
            }
            Ok(())
        }
        Command::Prototypes {
            common,
            lm,
            sae,
            data,
            out,
            dense_out,
            support,
        } => {
            let cfg = common.resolve(|c| {
                if let Some(n) = support {
                    c.steering.support_records = n;
                }
            })?;
            let lm = LmCheckpoint::load(&lm)?;
            let coders = HeadCoders::load(&sae)?;
            check_coders(&lm, &coders)?;
            let support = support_set(&load_records(&data)?, &cfg)?;
            compute_prototypes(&support, &lm, &coders)?.save(&out)?;
            if let Some(p) = dense_out {
                compute_dense_prototypes(&support, &lm, coders.layer)?.save(&p)?;
            }
            Ok(())
        }
        Command::Steer {
            common,
            arts,
            target,
            prompt_file,
            grid_id,
            method,
            eta,
            epsilon,
            trace_out,
        } => {
            let cfg = common.resolve(|c| steering_overrides(c, eta, epsilon))?;
            let grid = match (&prompt_file, &grid_id) {
                (Some(p), _) => parse_prompt(&std::fs::read_to_string(p).map_err(|e| io_error(e, p))?, "prompt")?,
                (None, Some(id)) => find_record(&load_records(required(&arts.data, "--data")?)?, id)?.grid,
                (None, None) => return Err(Error::Config("pass --prompt-file or --grid-id".into())),
            };
            let loaded = Loaded::new(&arts, &cfg, needs_baselines(&[method]))?;
            let kit = loaded.kit(&cfg)?;
            let out = kit.run(&encode_prompt(&grid, None)?, method, target)?;
            println!("{}", out.text);
            if let (Some(p), Some(trace)) = (trace_out, &out.trace) {
                let mut buf = Vec::new();
                trace.write_jsonl(&mut buf)?;
                write_file(&p, &buf)?;
            }
            Ok(())
        }
        Command::Eval {
            common,
            arts,
            split,
            limit,
            methods,
            targets,
            format,
            eta,
            epsilon,
            out,
            manifest,
            records_out,
        } => {
            let cfg = common.resolve(|c| {
                eval_overrides(&mut c.eval, split, limit, methods, targets);
                if let Some(f) = format {
                    c.eval.format = f;
                }
                steering_overrides(c, eta, epsilon);
            })?;
            let loaded = Loaded::new(&arts, &cfg, needs_baselines(&cfg.eval.methods))?;
            let kit = loaded.kit(&cfg)?;
            let eval = eval_records(&loaded, &cfg)?;
            let mut runs = Vec::new();
            let mut instances = Vec::new();
            for &m in &cfg.eval.methods {
                let res = run_experiment(&eval, &kit, m, &cfg.eval.targets)?;
                runs.push(res.metrics);
                instances.extend(res.records);
            }
            write_file(&out, emit_report(&Report::new(runs), cfg.eval.format)?.as_bytes())?;
            let mut man = Manifest::new(cfg.seed, serde_json::to_value(&cfg)?);
            for p in [Some(&arts.lm), arts.sae.as_ref(), arts.protos.as_ref(), arts.data.as_ref(), Some(&out)]
                .into_iter()
                .flatten()
            {
                man.add_file(p)?;
            }
            if let Some(p) = &records_out {
                let mut s = String::new();
                for r in &instances {
                    s += &serde_json::to_string(r)?;
                    s.push('\n');
                }
                write_file(p, s.as_bytes())?;
                man.add_file(p)?;
            }
            let man_path = manifest.unwrap_or_else(|| manifest_path(&out));
            write_file(&man_path, (serde_json::to_string_pretty(&man)? + "\n").as_bytes())?;
            Ok(())
        }
        Command::Diagnose {
            common,
            arts,
            mode,
            split,
            limit,
            targets,
            methods,
            etas,
            arms,
            layer_sae,
            grid_id,
            layer,
            format,
            out,
            svg,
        } => {
            let cfg = common.resolve(|c| {
                eval_overrides(&mut c.eval, split, limit, methods, targets);
                if let Some(f) = format {
                    c.eval.format = f;
                }
                if !etas.is_empty() {
                    c.eval.etas = etas;
                }
            })?;
            diagnose(mode, &cfg, &arts, &arms, &layer_sae, grid_id.as_deref(), layer, &out, svg.as_deref())
        }
        Command::Report { input, format, out } => {
            let bytes = std::fs::read(&input).map_err(|e| io_error(e, &input))?;
            let text = String::from_utf8(bytes).map_err(|_| Error::Format(format!("{} is not a text report", input.display())))?;
            let rendered = emit_report(&Report::from_json(&text)?, format)?;
            match out {
                Some(p) => write_file(&p, rendered.as_bytes()),
                None => {
                    print!("{rendered}");
                    Ok(())
                }
            }
        }
    }
}

fn io_error(e: std::io::Error, path: &Path) -> Error {
    match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    }
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config(format!("{flag} is required here")))
}

fn steering_overrides(c: &mut ExperimentConfig, eta: Option<f64>, epsilon: Option<f64>) {
    if let Some(e) = eta {
        c.steering.eta = e;
    }
    if let Some(e) = epsilon {
        c.steering.epsilon = e;
    }
}

fn eval_overrides(e: &mut EvalSection, split: Option<Split>, limit: Option<usize>, methods: Vec<Method>, targets: Vec<Target>) {
    if let Some(s) = split {
        e.split = s;
    }
    if limit.is_some() {
        e.limit = limit;
    }
    if !methods.is_empty() {
        e.methods = methods;
    }
    if !targets.is_empty() {
        e.targets = targets;
    }
}

fn manifest_path(report: &Path) -> PathBuf {
    let stem = report.file_stem().map_or_else(|| "report".into(), |s| s.to_string_lossy().into_owned());
    report.with_file_name(format!("{stem}.manifest.json"))
}

fn find_record(records: &[DatasetRecord], id: &str) -> Result<DatasetRecord> {
    records
        .iter()
        .find(|r| r.grid.id() == id)
        .cloned()
        .ok_or_else(|| Error::Config(format!("no record with id {id:?}")))
}

fn needs_baselines(methods: &[Method]) -> bool {
    methods.iter().any(|m| matches!(m, Method::DenseOpt | Method::Caa | Method::DiscoQ))
}

fn check_coders(lm: &LmCheckpoint, coders: &HeadCoders) -> Result<()> {
    if coders.layer >= lm.config.n_layers || coders.n_heads() != lm.config.n_heads || coders.head_dim() != lm.config.head_dim() {
        return Err(Error::Config(format!(
            "coders (layer {}, {} heads of width {}) do not fit the model",
            coders.layer,
            coders.n_heads(),
            coders.head_dim()
        )));
    }
    Ok(())
}

fn check_protos(coders: &HeadCoders, protos: &PrototypeSet) -> Result<()> {
    if protos.layer != coders.layer || protos.dim() != coders.n_heads() * coders.latent_dim() {
        return Err(Error::Config(format!(
            "prototypes (layer {}, width {}) do not match the coders",
            protos.layer,
            protos.dim()
        )));
    }
    Ok(())
}

/// Artifacts loaded from disk plus the support-derived pieces some arms need.
struct Loaded {
    lm: LmCheckpoint,
    coders: HeadCoders,
    protos: PrototypeSet,
    records: Vec<DatasetRecord>,
    support: Vec<SupportExample>,
    dense: Option<PrototypeSet>,
}

impl Loaded {
    fn new(arts: &Artifacts, cfg: &ExperimentConfig, baselines: bool) -> Result<Self> {
        let lm = LmCheckpoint::load(&arts.lm)?;
        let coders = HeadCoders::load(required(&arts.sae, "--sae")?)?;
        check_coders(&lm, &coders)?;
        let protos = PrototypeSet::load(required(&arts.protos, "--protos")?)?;
        check_protos(&coders, &protos)?;
        let records = match &arts.data {
            Some(p) => load_records(p)?,
            None if baselines => return Err(Error::Config("--data is required for dense-opt, caa and disco-q".into())),
            None => Vec::new(),
        };
        let (support, dense) = if baselines {
            let s = support_set(&records, cfg)?;
            let d = compute_dense_prototypes(&s, &lm, coders.layer)?;
            (s, Some(d))
        } else {
            (Vec::new(), None)
        };
        Ok(Loaded {
            lm,
            coders,
            protos,
            records,
            support,
            dense,
        })
    }

    fn kit(&self, cfg: &ExperimentConfig) -> Result<SteeringKit<'_>> {
        build_kit(
            &self.lm,
            &self.coders,
            &self.protos,
            cfg,
            self.dense.as_ref().map(|d| (self.support.as_slice(), d)),
        )
    }
}

/// A kit carrying the configured coefficients, with baselines when `baselines` is given.
pub fn build_kit<'a>(
    lm: &'a LmCheckpoint,
    coders: &'a HeadCoders,
    protos: &'a PrototypeSet,
    cfg: &ExperimentConfig,
    baselines: Option<(&[SupportExample], &'a PrototypeSet)>,
) -> Result<SteeringKit<'a>> {
    let s = &cfg.steering;
    let mut kit = SteeringKit::new(lm, coders, protos, s.steer_config(Target::Safe), s.max_new)?;
    kit.anchor = s.anchor;
    kit.ssv_alpha = s.ssv_alpha;
    kit.caa_coeff = s.caa_coeff;
    kit.disco_coeff = s.disco_coeff;
    match baselines {
        Some((support, dense)) => kit.with_baselines(support, dense),
        None => Ok(kit),
    }
}

fn eval_records(loaded: &Loaded, cfg: &ExperimentConfig) -> Result<Vec<DatasetRecord>> {
    if loaded.records.is_empty() {
        return Err(Error::Config("--data is required here".into()));
    }
    let recs = split_records(&loaded.records, cfg.eval.split, cfg.eval.limit);
    if recs.is_empty() {
        return Err(Error::Config(format!("split {:?} has no records", cfg.eval.split)));
    }
    Ok(recs)
}

fn parse_arm(spec: &str) -> Result<(Regularizer, f64, PathBuf, PathBuf)> {
    let parts: Vec<&str> = spec.splitn(4, ':').collect();
    let [kind, lambda, sae, protos] = parts.as_slice() else {
        return Err(Error::Config(format!("--arm {spec:?}: expected KIND:LAMBDA:SAE_FILE:PROTO_FILE")));
    };
    let lambda = lambda.parse::<f64>().map_err(|e| Error::Config(format!("--arm {spec:?}: {e}")))?;
    Ok((kind.parse()?, lambda, sae.into(), protos.into()))
}

#[allow(clippy::too_many_arguments)]
fn diagnose(
    mode: Mode,
    cfg: &ExperimentConfig,
    arts: &Artifacts,
    arms: &[String],
    layer_sae: &[PathBuf],
    grid_id: Option<&str>,
    layer: Option<usize>,
    out: &Path,
    svg: Option<&Path>,
) -> Result<()> {
    let write_svg = |s: String| svg.map_or(Ok(()), |p| write_file(p, s.as_bytes()));
    match mode {
        Mode::Deviation => {
            let loaded = Loaded::new(arts, cfg, true)?;
            let kit = loaded.kit(cfg)?;
            let eval = eval_records(&loaded, cfg)?;
            let mut profiles = Vec::new();
            for &t in &cfg.eval.targets {
                let rep = locality_experiment(&eval, &kit, t)?;
                eprintln!(
                    "{t}: n {} delta query {:.4} residual {:.4}, jsd query {:.6} residual {:.6}",
                    rep.n, rep.mean_query_delta, rep.mean_residual_delta, rep.mean_query_jsd, rep.mean_residual_jsd
                );
                for (arm, deltas) in [("query", rep.query_profile), ("residual", rep.residual_profile)] {
                    profiles.push(LayerDeviationProfile {
                        intervention_layer: kit.layer(),
                        deltas,
                        descriptor: format!("{arm}-{t}"),
                    });
                }
            }
            let mut buf = Vec::new();
            write_deviation_csv(&profiles, &mut buf)?;
            write_file(out, &buf)?;
            write_svg(deviation_svg(&profiles))
        }
        Mode::JsdSweep => {
            let loaded = Loaded::new(arts, cfg, false)?;
            let kit = loaded.kit(cfg)?;
            let eval = eval_records(&loaded, cfg)?;
            let mut csv = String::from("target,eta,mean_jsd\n");
            let mut series = Vec::new();
            for &t in &cfg.eval.targets {
                let pts = jsd_sweep(&eval, &kit, t, &cfg.eval.etas)?;
                for (eta, j) in &pts {
                    let _ = writeln!(csv, "{t},{eta},{j}");
                }
                series.push((t.to_string(), pts));
            }
            write_file(out, csv.as_bytes())?;
            write_svg(line_chart_svg("next-token divergence", "eta", "mean JSD", &series))
        }
        Mode::Drift => {
            let lm = LmCheckpoint::load(&arts.lm)?;
            let records = load_records(required(&arts.data, "--data")?)?;
            let mut loaded = Vec::new();
            for spec in arms {
                let (kind, lambda, sae, protos) = parse_arm(spec)?;
                let coders = HeadCoders::load(&sae)?;
                check_coders(&lm, &coders)?;
                let protos = PrototypeSet::load(&protos)?;
                check_protos(&coders, &protos)?;
                loaded.push((kind, lambda, coders, protos));
            }
            if loaded.is_empty() {
                return Err(Error::Config("drift needs --arm entries".into()));
            }
            let drift_arms: Vec<DriftArm> = loaded
                .iter()
                .map(|(kind, coefficient, coders, protos)| DriftArm {
                    kind: *kind,
                    coefficient: *coefficient,
                    coders,
                    protos,
                })
                .collect();
            let eval = split_records(&records, cfg.eval.split, cfg.eval.limit);
            let steer = cfg.steering.steer_config(Target::Safe);
            let rows = drift_experiment(&lm, &eval, &drift_arms, &cfg.eval.targets, &steer, cfg.steering.max_new)?;
            let mut csv = String::from("target,coefficient,mean_l1,mean_l2,ratio,mean_steps_l1,mean_steps_l2,n,excluded\n");
            for r in &rows {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{},{},{}",
                    r.target, r.coefficient, r.mean_l1, r.mean_l2, r.ratio, r.mean_steps_l1, r.mean_steps_l2, r.n, r.excluded
                );
            }
            write_file(out, csv.as_bytes())
        }
        Mode::AttentionMap => {
            let loaded = Loaded::new(arts, cfg, needs_baselines(&cfg.eval.methods))?;
            let kit = loaded.kit(cfg)?;
            let rec = match grid_id {
                Some(id) => find_record(&loaded.records, id)?,
                None => eval_records(&loaded, cfg)?.swap_remove(0),
            };
            let layer = layer.unwrap_or(kit.layer());
            if layer >= loaded.lm.config.n_layers {
                return Err(Error::Config(format!("layer {layer} outside the model")));
            }
            let method = cfg.eval.methods[0];
            let target = cfg.eval.targets[0];
            let prompt = encode_prompt(&rec.grid, None)?;
            let steered = kit.run(&prompt, method, target)?;
            let mut seq = prompt;
            seq.extend(&steered.tokens);
            let query_edit = (!steered.query_offset.is_empty()).then(|| {
                (
                    kit.layer(),
                    QueryEdit::Offset {
                        offset: &steered.query_offset,
                        from: 0,
                    },
                )
            });
            let fwd = loaded.lm.forward(
                &seq,
                &ForwardOptions {
                    attention_layer: Some(layer),
                    query_edit,
                    ..Default::default()
                },
            )?;
            let map = cell_attention_map(&fwd.attention.expect("attention requested"), &cell_token_spans(&rec.grid, &seq), layer)?;
            let mut buf = Vec::new();
            write_attention_csv(&map, &mut buf)?;
            write_file(out, &buf)?;
            write_svg(attention_svg(&map, rec.grid.rows(), rec.grid.cols()))
        }
        Mode::LayerSweep => {
            let lm = LmCheckpoint::load(&arts.lm)?;
            let records = load_records(required(&arts.data, "--data")?)?;
            if layer_sae.is_empty() {
                return Err(Error::Config("layer-sweep needs --layer-sae files".into()));
            }
            let support = support_set(&records, cfg)?;
            let baselines = needs_baselines(&cfg.eval.methods);
            let mut parts = Vec::new();
            for p in layer_sae {
                let coders = HeadCoders::load(p)?;
                check_coders(&lm, &coders)?;
                let protos = compute_prototypes(&support, &lm, &coders)?;
                let dense = if baselines {
                    Some(compute_dense_prototypes(&support, &lm, coders.layer)?)
                } else {
                    None
                };
                parts.push((coders, protos, dense));
            }
            let kits = parts
                .iter()
                .map(|(c, p, d)| build_kit(&lm, c, p, cfg, d.as_ref().map(|d| (support.as_slice(), d))))
                .collect::<Result<Vec<_>>>()?;
            let eval = split_records(&records, cfg.eval.split, cfg.eval.limit);
            if eval.is_empty() {
                return Err(Error::Config("evaluation split is empty".into()));
            }
            let mut runs = Vec::new();
            for &m in &cfg.eval.methods {
                runs.extend(layer_sweep(&eval, &kits, m, &cfg.eval.targets)?);
            }
            write_file(out, emit_report(&Report::new(runs), cfg.eval.format)?.as_bytes())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_parse() {
        assert_eq!(parse_range("4").unwrap(), [4, 4]);
        assert_eq!(parse_range("4,5").unwrap(), [4, 5]);
        assert_eq!(parse_range("3-6").unwrap(), [3, 6]);
        assert!(parse_range("a").is_err());
        assert!(parse_range("1,2,3").is_err());
    }

    #[test]
    fn exit_codes_are_distinct_per_class() {
        let codes = [
            exit_code(&Error::Config("x".into())),
            exit_code(&Error::MissingFile("x".into())),
            exit_code(&Error::Version {
                expected: "1".into(),
                found: "2".into(),
            }),
            exit_code(&Error::Format("x".into())),
            exit_code(&Error::NoPath),
        ];
        assert_eq!(codes, [2, 3, 4, 5, 1]);
    }

    #[test]
    fn error_line_is_json() {
        let v: serde_json::Value = serde_json::from_str(&error_line("config", "bad \"key\"")).unwrap();
        assert_eq!(v["error"], "config");
        assert_eq!(v["message"], "bad \"key\"");
    }

    #[test]
    fn arm_specs_parse() {
        let (k, l, s, p) = parse_arm("l2:3e-2:a/sae.bin:a/p.bin").unwrap();
        assert_eq!((k, l), (Regularizer::L2, 3e-2));
        assert_eq!((s, p), (PathBuf::from("a/sae.bin"), PathBuf::from("a/p.bin")));
        assert_eq!(parse_arm("l1:x:a:b").unwrap_err().kind(), "config");
        assert_eq!(parse_arm("l1:1").unwrap_err().kind(), "config");
    }

    #[test]
    fn manifest_sits_beside_the_report() {
        assert_eq!(manifest_path(Path::new("out/r.json")), PathBuf::from("out/r.manifest.json"));
    }

    #[test]
    fn usage_errors_exit_with_the_config_code() {
        assert_eq!(main_with(["protosteer", "gen-data"]), 2);
        assert_eq!(main_with(["protosteer", "frobnicate"]), 2);
        assert_eq!(main_with(["protosteer", "gen-data", "--out", "/nonexistent/x.jsonl"]), 2);
    }

    #[test]
    fn missing_inputs_exit_with_the_io_code() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("lm.bin");
        let code = main_with([
            "protosteer",
            "train-lm",
            "--seed",
            "1",
            "--data",
            dir.path().join("absent.jsonl").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 3);
    }

    #[test]
    fn invalid_config_key_exits_with_the_config_code() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        std::fs::write(&cfg, "seed = 1\n[data]\ncolour = 3\n").unwrap();
        let out = dir.path().join("d.jsonl");
        let code = main_with([
            "protosteer",
            "gen-data",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 2);
        assert!(!out.exists());
    }
}
