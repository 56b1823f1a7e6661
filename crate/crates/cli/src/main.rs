//! `cardiomodal` command-line interface.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use cardiomodal::dataset::{SourceKind, NUM_CASES};
use cardiomodal::hodmd::{DPolicy, HodmdConfig};
use cardiomodal::inference::{evaluate, predict_sequences, timed_pipeline, FusionRule, PipelineConfig, PredictionRecord, TimingAverages, UNDETERMINED};
use cardiomodal::manifest::{SequenceManifest, Split};
use cardiomodal::registry::{build_dataset, build_registry, DatasetSpec, DecomposeConfig, PhaseTimings, RegistryIndex, DEFAULT_TEST_KIND, TIMINGS_FILE};
use cardiomodal::synth::{make_toy_classes, ToyConfig};
use cardiomodal::tensor::{read_stf, write_json};
use cardiomodal::trainer::{train, TrainConfig};
use cardiomodal::vit::{Checkpoint, VitConfig, VitParams};
use cardiomodal::{Error, SnapshotSequence};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

const EXIT_HELP: &str = "\
Exit codes:
  0  success
  1  other failure (too few sequences, missing sample kinds, ...)
  2  usage error (unknown flag, bad value, invalid argument)
  3  i/o error (missing or unreadable file)
  4  malformed input (manifest, JSON, STF file, sequence shape)
  5  numerical failure (non-finite values, divergence, degenerate eigenproblem)

Errors are printed to stderr as one JSON line: {\"error\":KIND,\"code\":N,\"message\":TEXT}";

#[derive(Parser, Debug)]
#[command(name = "cardiomodal", version, about = "Modal decomposition and vision-transformer classification of snapshot sequences", after_help = EXIT_HELP)]
struct Cli {
    /// Root directory for every relative path.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,
    /// Seed for all randomness.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthetic data generation.
    Synth {
        #[command(subcommand)]
        command: SynthCommand,
    },
    /// Run SVD and iterative HODMD on every manifest sequence.
    Decompose(DecomposeArgs),
    /// Assemble a training case from a decomposition registry.
    BuildDataset(BuildDatasetArgs),
    /// Train the vision transformer on a dataset.
    Train(TrainArgs),
    /// Classify a sequence file or every sequence of a manifest.
    Predict(PredictArgs),
    /// Metrics report over a dataset split.
    Evaluate(EvaluateArgs),
}

#[derive(Subcommand, Debug)]
enum SynthCommand {
    /// Write a separable multi-class toy dataset with a manifest.
    Gen(SynthArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Sequences per class.
    #[arg(long, default_value_t = 8)]
    sequences: usize,
    #[arg(long, default_value_t = 48)]
    frames: usize,
    #[arg(long, default_value_t = 0.02)]
    dt: f64,
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    /// Frame size in pixels (square).
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value = "data")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct DecomposeArgs {
    #[arg(long, default_value = "data/manifest.json")]
    manifest: PathBuf,
    #[arg(long, default_value = "registry")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 5e-4)]
    eps_svd: f64,
    #[arg(long, default_value_t = 5e-4)]
    eps_dmd: f64,
    /// Delay policy: k3, k5 or fixed:N.
    #[arg(long, default_value = "k3", value_parser = parse_d_policy)]
    d_policy: DPolicy,
    /// Minimum valid frames per sequence [default: max(2d+1, 20)].
    #[arg(long)]
    min_snapshots: Option<usize>,
    #[arg(long, default_value_t = 10)]
    max_iters: usize,
    #[arg(long, default_value_t = 5)]
    svd_modes: usize,
    /// Resize frames to HxW before decomposition.
    #[arg(long, value_parser = parse_size)]
    resize: Option<(usize, usize)>,
    /// Skip per-sequence min-max intensity normalisation.
    #[arg(long)]
    no_normalize: bool,
    /// Sequences decomposed concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct BuildDatasetArgs {
    #[arg(long, default_value = "registry")]
    registry: PathBuf,
    /// Training case 1..12.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=NUM_CASES as i64))]
    case: u8,
    /// Train, val and test fractions.
    #[arg(long, default_value = "0.6,0.2,0.2", value_parser = parse_fractions)]
    fractions: [f64; 3],
    /// Image kind used for validation and test.
    #[arg(long, default_value_t = DEFAULT_TEST_KIND.to_string())]
    test_kind: String,
    #[arg(long, default_value = "dataset.json")]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModelPreset {
    Tiny,
    Toy,
    Full,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, default_value = "dataset.json")]
    dataset: PathBuf,
    #[arg(long, default_value = "run")]
    out_dir: PathBuf,
    /// JSON file with TrainConfig fields and an optional "model" object; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model preset [default: toy].
    #[arg(long, value_enum)]
    model: Option<ModelPreset>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    warmup_fraction: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    min_class_fraction: Option<f64>,
    #[arg(long)]
    eval_every: Option<usize>,
    /// Stop after this iteration; continue later with --resume.
    #[arg(long)]
    stop_at: Option<usize>,
    #[arg(long)]
    no_augment: bool,
    /// Continue from OUT_DIR/last.
    #[arg(long)]
    resume: bool,
}

#[derive(Args, Debug)]
struct FusionArgs {
    #[arg(long, default_value = "average", value_parser = parse_rule)]
    fusion: FusionRule,
    /// Minimum fused score for a verdict; below it the sequence is UNDETERMINED.
    #[arg(long, default_value_t = 0.0)]
    threshold: f64,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long, default_value = "run/best")]
    checkpoint: PathBuf,
    /// A single STF sequence `[K, H, W]`.
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    sequence: Option<PathBuf>,
    /// Frame interval of --sequence in seconds.
    #[arg(long, default_value_t = 0.02)]
    dt: f64,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Image kind fed to the network.
    #[arg(long, default_value_t = DEFAULT_TEST_KIND.to_string())]
    kind: String,
    /// Registry whose decomposition settings are reused.
    #[arg(long)]
    registry: Option<PathBuf>,
    #[command(flatten)]
    fusion: FusionArgs,
    /// Write per-image phase timings here.
    #[arg(long)]
    timings_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long, default_value = "dataset.json")]
    dataset: PathBuf,
    #[arg(long, default_value = "run/best")]
    checkpoint: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
    #[command(flatten)]
    fusion: FusionArgs,
    #[arg(long, default_value = "report")]
    out_dir: PathBuf,
}

fn parse_d_policy(s: &str) -> Result<DPolicy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_rule(s: &str) -> Result<FusionRule, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_split(s: &str) -> Result<Split, String> {
    Split::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| format!("unknown split {s:?}"))
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or("expected HxW")?;
    Ok((h.trim().parse().map_err(|_| "bad height")?, w.trim().parse().map_err(|_| "bad width")?))
}

fn parse_fractions(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s.split(',').map(|x| x.trim().parse::<f64>().map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
    let f: [f64; 3] = v.try_into().map_err(|_| "expected three comma-separated fractions")?;
    if f.iter().any(|x| *x <= 0.0) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err("fractions must be positive and sum to 1".into());
    }
    Ok(f)
}

fn parse_kind(s: &str) -> Result<SourceKind, Error> {
    s.parse()
}

struct Failure {
    kind: &'static str,
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (kind, code) = match &e {
            Error::Io { .. } => ("io", 3),
            Error::BadMagic { .. }
            | Error::Truncated { .. }
            | Error::TrailingBytes { .. }
            | Error::ExtentOverflow { .. }
            | Error::InvalidShape { .. }
            | Error::InvalidSequence(_)
            | Error::Manifest(_)
            | Error::Json(_) => ("input", 4),
            Error::NonFinite(_) | Error::DegenerateEigen(_) | Error::Diverged { .. } => ("numeric", 5),
            Error::InvalidArgument(_) | Error::NonPositiveTemperature(_) => ("usage", 2),
            _ => ("other", 1),
        };
        Failure { kind, code, message: e.to_string() }
    }
}

type CmdResult = Result<(), Failure>;

struct Ctx {
    workdir: PathBuf,
    seed: u64,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        self.workdir.join(p)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let message = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            report(&Failure { kind: "usage", code: 2, message });
            return ExitCode::from(2);
        }
    };
    let ctx = Ctx { workdir: cli.workdir, seed: cli.seed };
    let result = match cli.command {
        Command::Synth { command: SynthCommand::Gen(a) } => synth_gen(&ctx, a),
        Command::Decompose(a) => decompose(&ctx, a),
        Command::BuildDataset(a) => build(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Predict(a) => predict(&ctx, a),
        Command::Evaluate(a) => evaluate_cmd(&ctx, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            report(&f);
            ExitCode::from(f.code)
        }
    }
}

fn report(f: &Failure) {
    eprintln!("{}", json!({ "error": f.kind, "code": f.code, "message": f.message }));
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { kind: "usage", code: 2, message: message.into() }
}

fn mkdir(p: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(p).map_err(|e| Failure { kind: "io", code: 3, message: format!("io error on {}: {e}", p.display()) })
}

fn synth_gen(ctx: &Ctx, a: SynthArgs) -> CmdResult {
    if a.classes == 0 || a.sequences == 0 || a.frames == 0 || a.size < 2 || !(a.dt > 0.0) || a.noise < 0.0 {
        return Err(usage("classes, sequences and frames must be positive, size >= 2, dt > 0 and noise >= 0"));
    }
    let out = ctx.path(&a.out_dir);
    mkdir(&out)?;
    let cfg = ToyConfig {
        num_classes: a.classes,
        per_class: a.sequences,
        frames: a.frames,
        dt: a.dt,
        shape: (a.size, a.size),
        noise: a.noise,
        seed: ctx.seed,
    };
    let m = make_toy_classes(&cfg, &out)?;
    println!("{}", json!({ "manifest": a.out_dir.join("manifest.json"), "sequences": m.entries.len() }));
    Ok(())
}

fn decompose(ctx: &Ctx, a: DecomposeArgs) -> CmdResult {
    let (manifest, base) = SequenceManifest::load(ctx.path(&a.manifest))?;
    let cfg = DecomposeConfig {
        hodmd: HodmdConfig { d_policy: a.d_policy, eps_svd: a.eps_svd, eps_dmd: a.eps_dmd, min_snapshots: a.min_snapshots, max_iters: a.max_iters },
        svd_modes: a.svd_modes,
        resize: a.resize,
        normalize: !a.no_normalize,
    };
    let out = ctx.path(&a.out_dir);
    let index = build_registry(&manifest, &base, &out, &cfg, a.jobs.max(1))?;
    println!("{}", json!({ "registry": a.out_dir, "sequences": index.entries.len(), "skipped": index.skipped.len() }));
    Ok(())
}

fn build(ctx: &Ctx, a: BuildDatasetArgs) -> CmdResult {
    let test_kind = parse_kind(&a.test_kind)?;
    let (index, _) = RegistryIndex::load(ctx.path(&a.registry))?;
    let out = ctx.path(&a.out);
    let out_dir = out.parent().map(Path::to_path_buf).unwrap_or_default();
    mkdir(&out_dir)?;
    let reg = ctx.path(&a.registry);
    let reg = if reg.is_dir() { reg.join("index.json") } else { reg };
    let rel = relative_to(&reg, &out_dir)?;
    let spec = build_dataset(&index, rel, a.case as usize, a.fractions, ctx.seed, test_kind)?;
    write_json(&spec, &out)?;
    let counts: BTreeMap<&str, usize> = spec.splits.iter().map(|(s, ids)| (s.name(), ids.len())).collect();
    println!("{}", json!({ "dataset": a.out, "case": spec.case, "kinds": spec.kinds, "sequences": counts }));
    Ok(())
}

fn relative_to(path: &Path, base: &Path) -> Result<PathBuf, Failure> {
    let abs = |p: &Path| std::path::absolute(p).map_err(|e| Failure { kind: "io", code: 3, message: format!("io error on {}: {e}", p.display()) });
    let (p, b) = (abs(path)?, abs(base)?);
    Ok(pathdiff::diff_paths(&p, &b).unwrap_or(p))
}

fn load_config_file(path: &Path) -> Result<Value, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure { kind: "io", code: 3, message: format!("io error on {}: {e}", path.display()) })?;
    let v: Value = serde_json::from_str(&text).map_err(Error::from)?;
    if !v.is_object() {
        return Err(Failure::from(Error::Manifest("train config must be a JSON object".into())));
    }
    Ok(v)
}

/// Defaults, then the config file, then explicit flags.
fn resolve_train_config(ctx: &Ctx, a: &TrainArgs, num_classes: usize) -> Result<(TrainConfig, VitConfig), Failure> {
    let mut file = match &a.config {
        Some(p) => load_config_file(&ctx.path(p))?,
        None => json!({}),
    };
    let model_value = file.as_object_mut().and_then(|o| o.remove("model"));
    let mut base = serde_json::to_value(TrainConfig { seed: ctx.seed, ..TrainConfig::default() }).map_err(Error::from)?;
    for (k, v) in file.as_object().into_iter().flatten() {
        if base.get(k).is_none() {
            return Err(Failure::from(Error::Manifest(format!("unknown train config field {k:?}"))));
        }
        base[k] = v.clone();
    }
    let mut cfg: TrainConfig = serde_json::from_value(base).map_err(Error::from)?;
    macro_rules! flag {
        ($field:ident, $arg:expr) => {
            if let Some(v) = $arg {
                cfg.$field = v;
            }
        };
    }
    flag!(max_iters, a.max_iters);
    flag!(target_lr, a.lr);
    flag!(warmup_fraction, a.warmup_fraction);
    flag!(weight_decay, a.weight_decay);
    flag!(beta1, a.beta1);
    flag!(beta2, a.beta2);
    flag!(batch_size, a.batch_size);
    flag!(min_class_fraction, a.min_class_fraction);
    if a.eval_every.is_some() {
        cfg.eval_every = a.eval_every;
    }
    if a.stop_at.is_some() {
        cfg.stop_at = a.stop_at;
    }
    if a.no_augment {
        cfg.augment = None;
    }
    let model = match (a.model, model_value) {
        (None, Some(v)) => {
            let mut m: VitConfig = serde_json::from_value(v).map_err(Error::from)?;
            m.num_classes = num_classes;
            m
        }
        (preset, _) => match preset.unwrap_or(ModelPreset::Toy) {
            ModelPreset::Tiny => VitConfig::tiny(num_classes),
            ModelPreset::Toy => VitConfig::toy(num_classes),
            ModelPreset::Full => VitConfig::full(num_classes),
        },
    };
    cfg.validate()?;
    model.validate()?;
    Ok((cfg, model))
}

fn train_cmd(ctx: &Ctx, a: TrainArgs) -> CmdResult {
    let (spec, base) = DatasetSpec::load(ctx.path(&a.dataset))?;
    let (cfg, model) = resolve_train_config(ctx, &a, spec.classes.len())?;
    let train_set = spec.samples(&base, Split::Train)?;
    let val_set = spec.samples(&base, Split::Val)?;
    let init = VitParams::init(&model, ctx.seed)?;
    let out = ctx.path(&a.out_dir);
    let r = train(&model, &spec.classes, init, &train_set, &val_set, &cfg, &out, a.resume)?;
    let last = r.history.last();
    println!(
        "{}",
        json!({
            "out_dir": a.out_dir,
            "iterations": last.map_or(0, |m| m.iteration),
            "best_step": r.best_step,
            "best_val_acc": if r.best_val_acc.is_finite() { json!(r.best_val_acc) } else { Value::Null },
            "train_images": train_set.len(),
            "val_images": val_set.len(),
        })
    );
    Ok(())
}

fn record_json(r: &PredictionRecord, classes: &[String]) -> Value {
    json!({
        "sequence_id": r.sequence_id,
        "verdict": r.verdict.map_or(UNDETERMINED.to_string(), |v| classes[v].clone()),
        "verdict_index": r.verdict,
        "fused": classes.iter().cloned().zip(r.fused.iter().copied()).collect::<BTreeMap<_, _>>(),
        "images": r.scores.len(),
        "rule": r.rule,
        "threshold": r.threshold,
    })
}

fn predict(ctx: &Ctx, a: PredictArgs) -> CmdResult {
    let ck = Checkpoint::load(&ctx.path(&a.checkpoint))?;
    let kind = parse_kind(&a.kind)?;
    let decompose = match &a.registry {
        Some(r) => RegistryIndex::load(ctx.path(r))?.0.config,
        None => DecomposeConfig::default(),
    };
    let sequences: Vec<SnapshotSequence> = match (&a.sequence, &a.manifest) {
        (Some(p), _) => {
            let path = ctx.path(p);
            let id = path.file_stem().map_or_else(|| "sequence".into(), |s| s.to_string_lossy().into_owned());
            vec![SnapshotSequence::new(id, read_stf(&path)?, a.dt, None)?]
        }
        (None, Some(m)) => {
            let (m, base) = SequenceManifest::load(ctx.path(m))?;
            m.entries.iter().map(|e| m.load_sequence(e, &base)).collect::<cardiomodal::Result<_>>()?
        }
        (None, None) => return Err(usage("either --sequence or --manifest is required")),
    };
    let pc = PipelineConfig { decompose, kind, rule: a.fusion.fusion, threshold: a.fusion.threshold };
    let mut timings = Vec::new();
    for s in &sequences {
        let (records, t) = timed_pipeline(s, &ck.params, &ck.header.config, &pc)?;
        for r in &records {
            println!("{}", record_json(r, &ck.header.classes));
        }
        timings.push(json!({ "sequence_id": s.sequence_id, "averages": t.averages, "total_ms": t.total_ms }));
    }
    if let Some(p) = &a.timings_out {
        write_json(&timings, ctx.path(p))?;
    }
    Ok(())
}

fn evaluate_cmd(ctx: &Ctx, a: EvaluateArgs) -> CmdResult {
    let (spec, base) = DatasetSpec::load(ctx.path(&a.dataset))?;
    let ck = Checkpoint::load(&ctx.path(&a.checkpoint))?;
    if ck.header.classes != spec.classes {
        return Err(Failure::from(Error::Manifest(format!("checkpoint classes {:?} differ from dataset classes {:?}", ck.header.classes, spec.classes))));
    }
    let seqs = spec.sequences(&base, a.split)?;
    let labels: Vec<usize> = seqs.iter().map(|s| s.label).collect();
    let t0 = Instant::now();
    let records = predict_sequences(&seqs, spec.test_kind, &ck.params, &ck.header.config, a.fusion.fusion, a.fusion.threshold)?;
    let pred_ms = t0.elapsed().as_secs_f64() * 1e3;
    let report = evaluate(&records, &labels)?;

    let out = ctx.path(&a.out_dir);
    mkdir(&out)?;
    let classes = &spec.classes;
    let summary = json!({
        "classes": classes,
        "split": a.split.name(),
        "test_kind": spec.test_kind,
        "case": spec.case,
        "fusion": a.fusion.fusion,
        "threshold": a.fusion.threshold,
        "metrics": report,
    });
    write_json(&summary, out.join("report.json"))?;
    write_text(&out.join("report.csv"), &report.to_csv(classes))?;
    let preds: Vec<Value> = records
        .iter()
        .zip(&labels)
        .map(|(r, &y)| {
            let mut v = record_json(r, classes);
            v["label"] = json!(classes[y]);
            v["image_predictions"] = json!(r.image_predictions().map(|k| classes[k].clone()).collect::<Vec<_>>());
            v
        })
        .collect();
    write_json(&preds, out.join("predictions.json"))?;

    // Decomposition timings come from the registry; prediction time is measured here.
    let reg_path = spec.registry_path(&base);
    let reg_dir = if reg_path.is_dir() { reg_path } else { reg_path.parent().map(Path::to_path_buf).unwrap_or_default() };
    let phase: BTreeMap<String, PhaseTimings> = std::fs::read_to_string(reg_dir.join(TIMINGS_FILE))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .unwrap_or_default();
    let mut totals = PhaseTimings::default();
    for s in &seqs {
        if let Some(t) = phase.get(&s.sequence_id) {
            totals.svd_ms += t.svd_ms;
            totals.hosvd_ms += t.hosvd_ms;
            totals.hodmd_ms += t.hodmd_ms;
            totals.frames += t.frames;
        }
    }
    let averages = TimingAverages::from_totals(report.images, &totals, pred_ms);
    write_json(&json!({ "averages_ms_per_image": averages }), out.join(TIMINGS_FILE))?;

    println!(
        "{}",
        json!({
            "report": a.out_dir.join("report.json"),
            "per_image_accuracy_without_fusion": report.per_image_accuracy_without_fusion,
            "per_image_accuracy_with_fusion": report.per_image_accuracy_with_fusion,
            "per_sequence_accuracy": report.per_sequence_accuracy,
        })
    );
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    let tmp = path.with_extension("csv.tmp");
    std::fs::write(&tmp, text)
        .and_then(|_| std::fs::rename(&tmp, path))
        .map_err(|e| Failure { kind: "io", code: 3, message: format!("io error on {}: {e}", path.display()) })
}
