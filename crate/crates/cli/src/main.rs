//! `paclab`: command-line front end for semi-supervised domain adaptation
//! experiments.

mod plot;
mod run;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use paclab_core::analysis::{
    export_embedding, pick_classes, AnalysisReport, EmbeddingConfig, FeatureDump, Provenance,
    DEFAULT_EMBEDDING_CLASSES,
};
use paclab_core::augment::PerturbationSpec;
use paclab_core::data::{
    export_folder_dataset, sample_nshot_split, DataSource, Pool, SSDASplit, SplitManifest,
    SyntheticDomainSpec,
};
use paclab_core::model::{Backbone, Checkpoint, Network, PretrainTag};
use paclab_core::rng::{RngStream, StreamId};
use paclab_core::train::{
    evaluate, parse_pretrain_tag, pretrain_backbone, run_ablation, run_shot_sweep, train, AblationCell,
    Method, Preset, TrainerSpec,
};
use serde::Serialize;

use crate::run::{ExperimentManifest, RunDir};

/// A problem with the command line or its inputs; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Parser)]
#[command(name = "paclab", version, about = "Semi-supervised domain adaptation experiments")]
struct Cli {
    /// Root directory for run outputs [default: runs].
    #[arg(long, global = true, env = "PACLAB_RUNS_DIR")]
    runs_dir: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic source/target pair as class folders.
    Synth(SynthArgs),
    /// Draw an n-shot split and save its manifest.
    Split(SplitArgs),
    /// Run stage-1 pretraining only.
    Pretrain(PretrainArgs),
    /// Train a model (pretraining first when requested).
    Train(TrainArgs),
    /// Accuracy of a checkpoint on one pool of a split.
    Eval(EvalArgs),
    /// Feature-space diagnostics and a 2-D embedding of a backbone.
    Analyze(AnalyzeArgs),
    /// Pretraining x consistency ablation grid.
    Ablate(AblateArgs),
    /// Accuracy as a function of shots, threshold or perturbation.
    Sweep(SweepArgs),
    /// Render a CSV produced by another subcommand.
    Plot(PlotArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 8)]
    classes: usize,
    #[arg(long, default_value_t = 200)]
    per_class: usize,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Render the target without color inversion.
    #[arg(long)]
    no_invert: bool,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    stroke_delta: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    /// Directory written by `synth`.
    #[arg(long, conflicts_with_all = ["source", "target"])]
    synth_dir: Option<PathBuf>,
    /// Class-folder tree of the source domain.
    #[arg(long, requires = "target")]
    source: Option<PathBuf>,
    #[arg(long, requires = "source")]
    target: Option<PathBuf>,
    /// Side length images are resized to when loading folders.
    #[arg(long, default_value_t = 32)]
    image_size: usize,
    #[arg(long, default_value_t = 3)]
    shots: usize,
    #[arg(long, default_value_t = 3)]
    val_per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PresetArg {
    Desk,
    Alexnet,
    Vgg,
    Resnet,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Desk => Preset::Desk,
            PresetArg::Alexnet => Preset::Alexnet,
            PresetArg::Vgg => Preset::Vgg,
            PresetArg::Resnet => Preset::Resnet,
        }
    }
}

/// Options shared by every subcommand that trains.
#[derive(Args, Clone)]
struct SpecArgs {
    #[arg(long, value_enum, default_value = "desk")]
    preset: PresetArg,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    eval_interval: Option<u64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    lr_backbone: Option<f64>,
    #[arg(long)]
    lr_classifier: Option<f64>,
    /// Steps of stage-1 pretraining.
    #[arg(long)]
    pretrain_steps: Option<u64>,
    /// `key = value` file overriding training settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Drop the labeled source batch.
    #[arg(long)]
    source_free: bool,
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    split: PathBuf,
    /// `rotation` or `moco`.
    #[arg(long, default_value = "rotation")]
    kind: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    spec: SpecArgs,
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// Re-run the experiment recorded in a manifest.
    #[arg(long, conflicts_with_all = ["method", "split"])]
    manifest: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    method: Option<String>,
    #[arg(long, default_value = "none")]
    pretrain: String,
    #[arg(long, conflicts_with = "no_cr")]
    cr: bool,
    #[arg(long)]
    no_cr: bool,
    #[arg(long, required_unless_present = "manifest")]
    split: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    spec: SpecArgs,
    #[arg(long)]
    name: Option<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PoolArg {
    Unlabeled,
    Validation,
    Labeled,
    Source,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long, value_enum, default_value = "unlabeled")]
    pool: PoolArg,
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long, required_unless_present = "random_init")]
    checkpoint: Option<PathBuf>,
    /// Analyze a randomly initialized desk backbone drawn from this seed.
    #[arg(long, conflicts_with = "checkpoint")]
    random_init: Option<u64>,
    #[arg(long)]
    split: PathBuf,
    /// Classes to embed; defaults to a random choice of five.
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    embed_epochs: usize,
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    split: PathBuf,
    /// Factors to cross: any of `rot`, `moco`, `cr`.
    #[arg(long, value_delimiter = ',', default_value = "rot,cr")]
    grid: Vec<String>,
    /// Number of seeds, starting at 0.
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    /// `pac` or `mme`.
    #[arg(long, default_value = "pac")]
    method: String,
    #[command(flatten)]
    spec: SpecArgs,
    #[arg(long)]
    name: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SweepOver {
    Shots,
    Tau,
    Augment,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_enum)]
    over: SweepOver,
    /// Split whose data source and protocol are reused.
    #[arg(long)]
    split: PathBuf,
    /// Methods as `method[+pretrain]`, e.g. `pac+rotation`.
    #[arg(long, value_delimiter = ',', default_value = "pac+rotation,s_plus_t")]
    methods: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
    shots: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,0.7,0.8,0.9,0.95")]
    taus: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    #[command(flatten)]
    spec: SpecArgs,
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long, value_enum)]
    style: plot::Style,
    #[arg(long)]
    input: PathBuf,
    /// Output SVG path.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_usage(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn is_usage(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<UsageError>().is_some()
            || c.downcast_ref::<paclab_core::Error>().is_some_and(paclab_core::Error::is_usage)
    })
}

fn dispatch(cli: Cli) -> Result<()> {
    let root = cli.runs_dir.unwrap_or_else(|| PathBuf::from("runs"));
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Split(a) => cmd_split(a),
        Command::Pretrain(a) => cmd_pretrain(&root, a),
        Command::Train(a) => cmd_train(&root, a),
        Command::Eval(a) => cmd_eval(&root, a),
        Command::Analyze(a) => cmd_analyze(&root, a),
        Command::Ablate(a) => cmd_ablate(&root, a),
        Command::Sweep(a) => cmd_sweep(&root, a),
        Command::Plot(a) => plot::plot(a.style, &a.input, &a.out),
    }
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut spec = SyntheticDomainSpec::desk(a.seed);
    spec.num_classes = a.classes;
    spec.n_per_class_per_domain = a.per_class;
    spec.image_size = a.size;
    spec.shift.invert = !a.no_invert;
    if let Some(v) = a.noise {
        spec.shift.noise = v;
    }
    if let Some(v) = a.stroke_delta {
        spec.shift.stroke_delta = v;
    }
    let (source, target) = paclab_core::data::make_synthetic_domain_pair(&spec)?;
    export_folder_dataset(&source, a.out.join("source"))?;
    export_folder_dataset(&target, a.out.join("target"))?;
    #[derive(Serialize)]
    struct SynthManifest<'a> {
        spec: &'a SyntheticDomainSpec,
        source_hash: String,
        target_hash: String,
    }
    let m = SynthManifest {
        spec: &spec,
        source_hash: source.content_hash(),
        target_hash: target.content_hash(),
    };
    let path = a.out.join("synth.json");
    std::fs::write(&path, serde_json::to_string_pretty(&m)?).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {} source and {} target images to {}", source.len(), target.len(), a.out.display());
    Ok(())
}

fn cmd_split(a: SplitArgs) -> Result<()> {
    let data = match (a.synth_dir, a.source, a.target) {
        (Some(dir), _, _) => {
            let path = dir.join("synth.json");
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let v: serde_json::Value = serde_json::from_str(&text).map_err(paclab_core::Error::from)?;
            let spec: SyntheticDomainSpec =
                serde_json::from_value(v["spec"].clone()).map_err(paclab_core::Error::from)?;
            DataSource::Synthetic { spec }
        }
        (None, Some(source_root), Some(target_root)) => DataSource::Folders {
            source_root,
            target_root,
            image_size: a.image_size,
        },
        _ => return Err(usage("give --synth-dir, or both --source and --target")),
    };
    let (source, target) = data.load()?;
    let split = sample_nshot_split(
        &source,
        &target,
        a.shots,
        a.val_per_class,
        &mut RngStream::new(a.seed, StreamId::Split),
    )?;
    let manifest = SplitManifest::new(data, &source, &target, &split, a.val_per_class, a.seed);
    manifest.save(&a.out)?;
    println!(
        "split: {} source, {} labeled target, {} unlabeled target, {} validation",
        split.source.len(),
        split.labeled_target.len(),
        split.unlabeled_target.len(),
        split.validation.len()
    );
    Ok(())
}

fn load_split(path: &Path) -> Result<(SplitManifest, SSDASplit)> {
    let m = SplitManifest::load(path).with_context(|| format!("loading split {}", path.display()))?;
    let (_, _, split) = m.materialize()?;
    Ok((m, split))
}

fn build_spec(
    method: Method,
    pretrain: PretrainTag,
    seed: u64,
    a: &SpecArgs,
    image_size: usize,
) -> Result<TrainerSpec> {
    let mut spec = TrainerSpec::preset(a.preset.into(), method, pretrain, image_size);
    if let Some(path) = &a.config {
        let mut doc = paclab_core::config::KvDocument::load(path)?;
        spec.train.apply(&mut doc)?;
        doc.finish()?;
    }
    spec.train.seed = seed;
    if let Some(v) = a.steps {
        spec.train.total_steps = v;
        if a.eval_interval.is_none() {
            spec.train.eval_interval = spec.train.eval_interval.min(v.max(1));
        }
    }
    if let Some(v) = a.eval_interval {
        spec.train.eval_interval = v;
    }
    if let Some(v) = a.tau {
        spec.train.tau = v;
    }
    if let Some(v) = a.lr_backbone {
        spec.train.lr_backbone = v;
    }
    if let Some(v) = a.lr_classifier {
        spec.train.lr_classifier = v;
    }
    if let Some(v) = a.pretrain_steps {
        spec.rotation.steps = v;
        spec.moco.steps = v;
    }
    spec.use_source = !a.source_free;
    Ok(spec)
}

fn parse_method(s: &str) -> Result<Method> {
    s.parse::<Method>().map_err(|e| usage(e.to_string()))
}

fn parse_pretrain(s: &str) -> Result<PretrainTag> {
    parse_pretrain_tag(s).map_err(|e| usage(e.to_string()))
}

fn image_size(m: &SplitManifest) -> usize {
    m.data.image_size()
}

fn cmd_pretrain(root: &Path, a: PretrainArgs) -> Result<()> {
    let tag = parse_pretrain(&a.kind)?;
    if tag == PretrainTag::None {
        return Err(usage("pretrain needs --kind rotation or moco"));
    }
    let (manifest, split) = load_split(&a.split)?;
    let spec = build_spec(Method::Pac, tag, a.seed, &a.spec, image_size(&manifest))?;
    spec.validate()?;
    let name = a.name.unwrap_or_else(|| format!("pretrain-{}-seed{}", a.kind, a.seed));
    let dir = RunDir::create(root, &name)?;
    dir.write_json(
        "manifest.json",
        &ExperimentManifest::new("pretrain", &spec, &manifest, &["pretrained.ckpt", "pretrain_trace.jsonl", "pretrain.json"]),
    )?;
    let pre = pretrain_backbone(&spec, &split)?.expect("pretraining was requested");
    let mut rng = RngStream::with_index(a.seed, StreamId::Init, 0);
    let mut network = Network::new(&spec.model.network_arch(split.num_classes), &mut rng)?;
    network.backbone = pre.backbone.clone();
    Checkpoint {
        network,
        step: 0,
        pretrain: tag,
        rng_states: Default::default(),
    }
    .save(dir.file("pretrained.ckpt"))?;
    let mut trace = String::new();
    for r in &pre.trace {
        trace.push_str(&serde_json::to_string(r)?);
        trace.push('\n');
    }
    dir.write("pretrain_trace.jsonl", trace)?;
    dir.write_json(
        "pretrain.json",
        &serde_json::json!({ "kind": a.kind, "steps": pre.trace.last().map(|r| r.step), "heldout_rotation_accuracy": pre.heldout_accuracy }),
    )?;
    if let Some(acc) = pre.heldout_accuracy {
        println!("held-out rotation accuracy {acc:.4}");
    }
    println!("{}", dir.finish()?.display());
    Ok(())
}

fn cmd_train(root: &Path, a: TrainArgs) -> Result<()> {
    let (spec, manifest, split, default_name) = if let Some(path) = &a.manifest {
        let m = ExperimentManifest::load(path)?;
        let (_, _, split) = m.split.materialize()?;
        let name = format!("{}-rerun", path.parent().and_then(Path::file_name).map_or("run".into(), |n| n.to_string_lossy().into_owned()));
        (m.spec, m.split, split, name)
    } else {
        let method = parse_method(a.method.as_deref().unwrap_or_default())?;
        let pretrain = parse_pretrain(&a.pretrain)?;
        let split_path = a.split.as_ref().expect("clap requires --split");
        let (manifest, split) = load_split(split_path)?;
        let mut spec = build_spec(method, pretrain, a.seed, &a.spec, image_size(&manifest))?;
        if a.cr {
            spec.cr_enabled = true;
        }
        if a.no_cr {
            spec.cr_enabled = false;
        }
        let name = format!("{}-seed{}-{}", spec.label(), a.seed, &spec.hash()[..8]);
        (spec, manifest, split, name)
    };
    spec.validate()?;
    let name = a.name.unwrap_or(default_name);
    let dir = RunDir::create(root, &name)?;
    dir.write_json(
        "manifest.json",
        &ExperimentManifest::new(
            "train",
            &spec,
            &manifest,
            &["metrics.jsonl", "metrics.csv", "best.ckpt", "result.json"],
        ),
    )?;
    let result = train(&spec, &split)?;
    result.write_artifacts(&spec, &dir.path)?;
    println!(
        "{}: target accuracy {:.4} at best validation step {} (final {:.4})",
        spec.label(),
        result.target_accuracy_at_best_val,
        result.best_step,
        result.final_target_accuracy
    );
    println!("{}", dir.finish()?.display());
    Ok(())
}

fn pick_pool(split: &SSDASplit, p: PoolArg) -> &Pool {
    match p {
        PoolArg::Unlabeled => &split.unlabeled_target,
        PoolArg::Validation => &split.validation,
        PoolArg::Labeled => &split.labeled_target,
        PoolArg::Source => &split.source,
    }
}

fn file_hash(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or("checkpoint".into(), |s| s.to_string_lossy().into_owned())
}

fn cmd_eval(root: &Path, a: EvalArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let (_, split) = load_split(&a.split)?;
    let pool = pick_pool(&split, a.pool);
    let acc = evaluate(&ck.network, pool)?;
    let name = a.name.unwrap_or_else(|| format!("eval-{}", stem(&a.checkpoint)));
    let dir = RunDir::create(root, &name)?;
    let report = serde_json::json!({
        "checkpoint": a.checkpoint,
        "checkpoint_hash": file_hash(&a.checkpoint)?,
        "pool": format!("{:?}", a.pool).to_lowercase(),
        "n": pool.len(),
        "accuracy": acc,
    });
    dir.write_json("eval.json", &report)?;
    println!("accuracy {acc:.4} on {} examples", pool.len());
    dir.finish()?;
    Ok(())
}

fn cmd_analyze(root: &Path, a: AnalyzeArgs) -> Result<()> {
    let (manifest, split) = load_split(&a.split)?;
    let (backbone, checkpoint_hash, default_name): (Backbone<f32>, String, String) = match (&a.checkpoint, a.random_init) {
        (Some(path), _) => {
            let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
            (ck.network.backbone, file_hash(path)?, format!("analyze-{}", stem(path)))
        }
        (None, Some(seed)) => {
            let spec = TrainerSpec::preset(Preset::Desk, Method::Pac, PretrainTag::None, image_size(&manifest));
            let arch = spec.model.network_arch(split.num_classes);
            let net = Network::new(&arch, &mut RngStream::with_index(seed, StreamId::Init, 0))?;
            (net.backbone, format!("random-init-{seed}"), format!("analyze-random-seed{seed}"))
        }
        (None, None) => return Err(usage("give --checkpoint or --random-init")),
    };
    let provenance = Provenance {
        checkpoint_hash,
        dataset_id: manifest.hash(),
    };
    let dump = FeatureDump::from_split(&backbone, &split, provenance)?;
    let name = a.name.unwrap_or(default_name);
    let dir = RunDir::create(root, &name)?;
    dump.save(dir.file("features.bin"))?;
    let report = AnalysisReport::compute(&dump, split.num_classes, a.seed)?;
    dir.write_json("report.json", &report)?;
    let classes = match a.classes {
        Some(c) => c,
        None => {
            let k = DEFAULT_EMBEDDING_CLASSES.min(split.num_classes);
            pick_classes(split.num_classes, k, &mut RngStream::with_index(a.seed, StreamId::Analysis, 1))?
        }
    };
    let cfg = EmbeddingConfig {
        epochs: a.embed_epochs,
        seed: a.seed,
        ..Default::default()
    };
    let rows = export_embedding(&dump, &classes, split.num_classes, &cfg, dir.file("embedding.csv"))?;
    println!(
        "a-distance {:.4} (domain error {:.4}), dist-acc target {:.4}, dist-acc source {:.4}; embedded {rows} points",
        report.a_distance, report.domain_classifier_error, report.dist_acc_target, report.dist_acc_source
    );
    println!("{}", dir.finish()?.display());
    Ok(())
}

fn ablation_cells(grid: &[String]) -> Result<Vec<AblationCell>> {
    let mut pretrains = vec![PretrainTag::None];
    let mut crs = vec![true];
    for g in grid {
        match g.as_str() {
            "rot" | "rotation" => pretrains.push(PretrainTag::Rotation),
            "moco" => pretrains.push(PretrainTag::Moco),
            "cr" => crs = vec![false, true],
            other => return Err(usage(format!("unknown grid factor `{other}`"))),
        }
    }
    Ok(pretrains
        .iter()
        .flat_map(|&pretrain| crs.iter().map(move |&cr_enabled| AblationCell { pretrain, cr_enabled }))
        .collect())
}

fn cmd_ablate(root: &Path, a: AblateArgs) -> Result<()> {
    let method = parse_method(&a.method)?;
    if !matches!(method, Method::Pac | Method::Mme) {
        return Err(usage("ablate --method must be pac or mme"));
    }
    if a.seeds == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    let cells = ablation_cells(&a.grid)?;
    let (manifest, split) = load_split(&a.split)?;
    let base = build_spec(method, PretrainTag::None, 0, &a.spec, image_size(&manifest))?;
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let name = a.name.unwrap_or_else(|| format!("ablate-{}-{}", method, a.grid.join("-")));
    let dir = RunDir::create(root, &name)?;
    let mut m = ExperimentManifest::new("ablate", &base, &manifest, &["ablation.csv", "ablation.txt"]);
    m.seeds = seeds.clone();
    dir.write_json("manifest.json", &m)?;
    let table = run_ablation(&base, &cells, &split, &seeds)?;
    dir.write("ablation.csv", table.to_csv())?;
    dir.write("ablation.txt", table.render())?;
    print!("{}", table.render());
    println!("{}", dir.finish()?.display());
    Ok(())
}

fn parse_method_pretrain(s: &str) -> Result<(Method, PretrainTag)> {
    let (m, p) = s.split_once('+').unwrap_or((s, "none"));
    Ok((parse_method(m)?, parse_pretrain(p)?))
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn cmd_sweep(root: &Path, a: SweepArgs) -> Result<()> {
    if a.seeds == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    let (manifest, split) = load_split(&a.split)?;
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let size = image_size(&manifest);
    let name = a.name.unwrap_or_else(|| format!("sweep-{:?}", a.over).to_lowercase());
    let (first_method, first_pretrain) = parse_method_pretrain(a.methods.first().map_or("pac+rotation", String::as_str))?;
    let base = build_spec(first_method, first_pretrain, 0, &a.spec, size)?;
    let dir = RunDir::create(root, &name)?;
    let mut m = ExperimentManifest::new("sweep", &base, &manifest, &["sweep.csv"]);
    m.seeds = seeds.clone();
    dir.write_json("manifest.json", &m)?;
    let csv = match a.over {
        SweepOver::Shots => {
            let specs = a
                .methods
                .iter()
                .map(|s| {
                    let (method, pretrain) = parse_method_pretrain(s)?;
                    build_spec(method, pretrain, 0, &a.spec, size)
                })
                .collect::<Result<Vec<_>>>()?;
            let data = manifest.data.clone();
            let (source, target) = data.load()?;
            let split_for = |k: usize, seed: u64| {
                sample_nshot_split(
                    &source,
                    &target,
                    k,
                    manifest.n_val_per_class,
                    &mut RngStream::new(manifest.seed.wrapping_add(seed), StreamId::Split),
                )
            };
            run_shot_sweep(split_for, &a.shots, &specs, &seeds)?.to_csv()
        }
        SweepOver::Tau => {
            let mut out = String::from("tau,mean_accuracy,std_accuracy,n_seeds\n");
            for &tau in &a.taus {
                let accs = seeds
                    .iter()
                    .map(|&seed| {
                        let mut s = base.clone();
                        s.train.tau = tau;
                        s.train.seed = seed;
                        Ok(train(&s, &split)?.target_accuracy_at_best_val)
                    })
                    .collect::<Result<Vec<f64>>>()?;
                let (mean, std) = mean_std(&accs);
                out.push_str(&format!("{tau},{mean:?},{std:?},{}\n", accs.len()));
            }
            out
        }
        SweepOver::Augment => {
            let variants = [
                ("randaugment+jitter", PerturbationSpec::default()),
                ("randaugment", PerturbationSpec::randaugment_only()),
                ("color_jitter", PerturbationSpec::jitter_only()),
            ];
            let mut out = String::from("augmentation,mean_accuracy,std_accuracy,n_seeds\n");
            for (label, pert) in variants {
                let accs = seeds
                    .iter()
                    .map(|&seed| {
                        let mut s = base.clone();
                        s.perturbation = pert.clone();
                        s.train.seed = seed;
                        Ok(train(&s, &split)?.target_accuracy_at_best_val)
                    })
                    .collect::<Result<Vec<f64>>>()?;
                let (mean, std) = mean_std(&accs);
                out.push_str(&format!("{label},{mean:?},{std:?},{}\n", accs.len()));
            }
            out
        }
    };
    dir.write("sweep.csv", &csv)?;
    print!("{csv}");
    println!("{}", dir.finish()?.display());
    Ok(())
}
