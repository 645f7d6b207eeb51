//! Command implementations behind the `metaself` binary.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use metaself_core::dataset::{
    drop_com_channels, load_split, read_episode_file, split_dataset, window_at, write_episode_file, DatasetManifest,
    EpisodeStore, Split, DATASET_MANIFEST,
};
use metaself_core::factory::{generate_family, read_family, read_family_info, write_family, FAMILY_INFO};
use metaself_core::net::loss::{head_range, JOINT_HEADS};
use metaself_core::net::{batch_input, predict_config, Checkpoint, Mode, Variant};
use metaself_core::sim::{collect_family, CHANNELS};
use metaself_core::train::report::MetricTable;
use metaself_core::train::{compare_variants, evaluate, labels_to_code, save_history, train, EvalReport};
use metaself_core::{HalfConfigCode, PipelineConfig};

/// Environment variable that overrides the dataset root from the config file.
pub const DATA_ENV: &str = "METASELF_DATA";
/// Resolved configuration written next to every artifact.
pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or missing inputs.
    Usage(String),
    /// Inconsistent configuration.
    Config(String),
    /// The command ran but some work failed.
    Partial(String),
    /// Evaluation finished below the requested thresholds.
    Gate(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Partial(_) => 1,
            CliError::Gate(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Partial(m) => write!(f, "partial failure: {m}"),
            CliError::Gate(m) => write!(f, "gate failed: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Exit status for an error returned by [`run`].
pub fn exit_code(err: &anyhow::Error) -> i32 {
    err.downcast_ref::<CliError>().map_or(1, CliError::exit_code)
}

#[derive(Debug, Parser)]
#[command(name = "metaself", version, about = "Generate robots, collect babbling data and train configuration classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a family of valid robots.
    GenRobots(GenArgs),
    /// Simulate one babbling episode per robot and split the dataset.
    Collect(CollectArgs),
    /// Train a classifier on the training split.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Rank several evaluation reports.
    Compare(CompareArgs),
    /// Predict the configuration code of a single episode.
    Predict(PredictArgs),
    /// Copy one stored episode to a standalone file.
    ExportEpisode(ExportArgs),
}

/// Flags shared by every command that touches the dataset.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Dataset root; overrides the environment and the config file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Pipeline config in TOML.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CollectArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Codes held out as the test split.
    #[arg(long)]
    pub test_count: Option<usize>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Stop once this many episodes are stored.
    #[arg(long)]
    pub max_episodes: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Arch {
    /// Convolution plus squeeze-and-excitation encoder.
    #[value(alias = "conv_se")]
    Om,
    Lstm,
    Mlp,
}

impl From<Arch> for Variant {
    fn from(a: Arch) -> Variant {
        match a {
            Arch::Om => Variant::ConvSe,
            Arch::Lstm => Variant::Lstm,
            Arch::Mlp => Variant::Mlp,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub arch: Option<Arch>,
    #[arg(long)]
    pub rm_xyz: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Name of the run directory under `runs/`.
    #[arg(long)]
    pub run: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Defaults to the test split when it is non-empty, else validation.
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    /// Seed of the evaluation windows.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Assert the checkpoint was trained without position channels.
    #[arg(long)]
    pub rm_xyz: bool,
    /// Report path; defaults to `eval-<split>.json` next to the checkpoint.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Exit nonzero when a threshold is missed.
    #[arg(long)]
    pub gate: bool,
    #[arg(long, default_value_t = 0.33)]
    pub min_leg_acc: f64,
    #[arg(long, default_value_t = 0.25)]
    pub min_jnt_acc: f64,
    #[arg(long, default_value_t = 1.5)]
    pub max_err_dist: f64,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Evaluation reports written by `eval`.
    #[arg(required = true, num_args = 2..)]
    pub reports: Vec<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Standalone episode file written by `export-episode`.
    #[arg(long, conflicts_with = "code", required_unless_present = "code")]
    pub episode: Option<PathBuf>,
    /// Stored episode, as comma-separated half-code values.
    #[arg(long)]
    pub code: Option<String>,
    /// First time step of the window; a seeded start is drawn otherwise.
    #[arg(long, conflicts_with = "seed")]
    pub start: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub rm_xyz: bool,
    /// Print the prediction as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub code: String,
    #[arg(long)]
    pub file: PathBuf,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenRobots(a) => cmd_gen_robots(a),
        Command::Collect(a) => cmd_collect(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Predict(a) => cmd_predict(a),
        Command::ExportEpisode(a) => cmd_export(a),
    }
}

/// Loads the config file (or defaults) and applies the environment override.
/// Command flags are applied by the caller on top.
pub fn load_config(common: &Common) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))?;
            PipelineConfig::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(v) = std::env::var_os(DATA_ENV).filter(|v| !v.is_empty()) {
        cfg.dataset_root = Some(PathBuf::from(v));
    }
    if let Some(out) = &common.out {
        cfg.dataset_root = Some(out.clone());
    }
    Ok(cfg)
}

fn dataset_root(cfg: &PipelineConfig) -> anyhow::Result<PathBuf> {
    cfg.dataset_root
        .clone()
        .ok_or_else(|| CliError::Usage(format!("no dataset root: pass --out, set {DATA_ENV} or dataset_root")).into())
}

fn finish_config(cfg: &PipelineConfig) -> anyhow::Result<()> {
    cfg.validate().map_err(|e| CliError::Config(e).into())
}

fn persist_config(dir: &Path, name: &str, cfg: &PipelineConfig) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), cfg.to_toml()).with_context(|| format!("writing config to {}", dir.display()))
}

fn parse_code(s: &str) -> anyhow::Result<HalfConfigCode> {
    s.parse::<HalfConfigCode>().map_err(|e| CliError::Usage(format!("bad code {s:?}: {e}")).into())
}

pub fn cmd_gen_robots(a: GenArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(&a.common)?;
    if let Some(n) = a.count {
        cfg.robots = n;
    }
    if let Some(s) = a.seed {
        cfg.seeds.generation = s;
    }
    if a.workers.is_some() {
        cfg.workers = a.workers;
    }
    finish_config(&cfg)?;
    if cfg.robots == 0 {
        return Err(CliError::Usage("robot count must be positive".into()).into());
    }
    let root = dataset_root(&cfg)?;
    if root.join(FAMILY_INFO).exists() {
        let info = read_family_info(&root)?;
        if info.count == cfg.robots && info.seed == cfg.seeds.generation && info.config == cfg.factory {
            println!("family of {} robots already present in {}; nothing to do", info.count, root.display());
            return Ok(());
        }
        return Err(CliError::Usage(format!(
            "{} already holds a different family ({} robots, seed {}); choose another --out",
            root.display(),
            info.count,
            info.seed
        ))
        .into());
    }
    let (family, stats) = generate_family(cfg.robots, cfg.seeds.generation, &cfg.factory, cfg.worker_count())?;
    write_family(&root, &family, &stats)?;
    persist_config(&root, "gen-robots.toml", &cfg)?;
    println!(
        "generated {} robots in {}: {} candidates, {} duplicates, {} self-collisions, {} slipped, rejection rate {:.3}",
        family.len(),
        root.display(),
        stats.attempts,
        stats.duplicates,
        stats.self_collision,
        stats.slipped,
        stats.rejection_rate()
    );
    Ok(())
}

pub fn cmd_collect(a: CollectArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(&a.common)?;
    if let Some(s) = a.seed {
        cfg.seeds.collection = s;
    }
    if let Some(t) = a.trials {
        cfg.collect.trials = t;
    }
    if a.workers.is_some() {
        cfg.workers = a.workers;
    }
    if let Some(t) = a.test_count {
        cfg.split.test_count = t;
    }
    if let Some(s) = a.split_seed {
        cfg.seeds.split = s;
    }
    if a.max_episodes.is_some() {
        cfg.collect.max_episodes = a.max_episodes;
    }
    cfg.split.seed = cfg.seeds.split;
    finish_config(&cfg)?;
    let root = dataset_root(&cfg)?;
    if !root.join(FAMILY_INFO).exists() {
        return Err(CliError::Usage(format!("no robot family in {}; run gen-robots first", root.display())).into());
    }
    let family = read_family(&root)?;
    let mut store = EpisodeStore::open(&root)?;
    let stats = collect_family(
        &family,
        &cfg.collect,
        &family.config.engine,
        cfg.seeds.collection,
        &mut store,
        cfg.worker_count(),
    )?;
    let manifest = split_dataset(&store, &cfg.split, cfg.seeds.collection)?;
    manifest.write(&root)?;
    persist_config(&root, "collect.toml", &cfg)?;
    fs::write(root.join("collect-stats.json"), serde_json::to_string_pretty(&stats)?)?;
    let a = manifest.assignment();
    println!(
        "collected {} new episodes ({} already stored), {} reruns over {} trials ({} early, {} late)",
        stats.written, stats.skipped_existing, stats.reruns, stats.trials, stats.early_topples, stats.late_topples
    );
    println!("split: {} train, {} val, {} test", a.train.len(), a.val.len(), a.test.len());
    for (code, why) in &stats.failures {
        eprintln!("failed {code}: {why}");
    }
    let cap_met = cfg.collect.max_episodes.is_some_and(|m| store.len() >= m);
    if !stats.failures.is_empty() && !cap_met {
        return Err(CliError::Partial(format!("{} of {} robots failed", stats.failures.len(), family.len())).into());
    }
    Ok(())
}

fn open_dataset(root: &Path) -> anyhow::Result<(EpisodeStore, DatasetManifest)> {
    if !root.join(DATASET_MANIFEST).exists() {
        return Err(CliError::Usage(format!("no dataset in {}; run collect first", root.display())).into());
    }
    Ok((EpisodeStore::open(root)?, DatasetManifest::read(root)?))
}

pub fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(&a.common)?;
    if let Some(arch) = a.arch {
        cfg.train.variant = arch.into();
    }
    if a.rm_xyz {
        cfg.train.rm_xyz = true;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.train.learning_rate = lr;
    }
    if let Some(s) = a.seed {
        cfg.seeds.train = s;
    }
    cfg.train.seed = cfg.seeds.train;
    finish_config(&cfg)?;
    let root = dataset_root(&cfg)?;
    let (store, manifest) = open_dataset(&root)?;
    let space = read_family_info(&root)?.config.space;
    let train_eps = load_split(&store, &manifest, Split::Train)?;
    let val_eps = load_split(&store, &manifest, Split::Val)?;
    let name = a.run.unwrap_or_else(|| {
        format!("{}{}-s{}", cfg.train.variant.name(), if cfg.train.rm_xyz { "-rm_xyz" } else { "" }, cfg.train.seed)
    });
    let dir = root.join("runs").join(&name);
    persist_config(&dir, RESOLVED_CONFIG, &cfg)?;
    log::info!("training {name} on {} episodes, validating on {}", train_eps.len(), val_eps.len());
    let out = train(&train_eps, &val_eps, &cfg.train, &space)?;
    out.best.save(&dir.join("best.ckpt"))?;
    out.last.save(&dir.join("last.ckpt"))?;
    save_history(&dir.join("history.json"), &out.history)?;
    let best = &out.history.epochs[out.history.best_epoch - 1];
    println!(
        "run {name}: best epoch {} val loss {:.4} leg {:.3} jnt {:.3} tot {:.3}; artifacts in {}",
        out.history.best_epoch,
        best.val_loss,
        best.val.leg_acc,
        best.val.jnt_acc_mean,
        best.val.tot_acc,
        dir.display()
    );
    Ok(())
}

fn load_checkpoint(path: &Path, rm_xyz: bool) -> anyhow::Result<Checkpoint> {
    let ck = Checkpoint::load(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let channels = ck.net.config().in_channels;
    if rm_xyz && channels == CHANNELS {
        return Err(CliError::Config(format!(
            "--rm-xyz given but the checkpoint expects all {CHANNELS} channels"
        ))
        .into());
    }
    Ok(ck)
}

/// Thresholds checked in gate mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub min_leg_acc: f64,
    pub min_jnt_acc: f64,
    pub max_err_dist: f64,
    pub passed: bool,
}

/// JSON written by `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub name: String,
    pub checkpoint: String,
    pub split: Split,
    pub table: MetricTable,
    pub report: EvalReport,
    pub gate: Option<Gate>,
}

pub fn cmd_eval(a: EvalArgs) -> anyhow::Result<()> {
    let cfg = load_config(&a.common)?;
    finish_config(&cfg)?;
    let root = dataset_root(&cfg)?;
    let ck = load_checkpoint(&a.checkpoint, a.rm_xyz)?;
    let (store, manifest) = open_dataset(&root)?;
    let space = read_family_info(&root)?.config.space;
    let split = match a.split {
        Some(s) => s.into(),
        None if manifest.codes(Split::Test).is_empty() => Split::Val,
        None => Split::Test,
    };
    let episodes = load_split(&store, &manifest, split)?;
    if episodes.is_empty() {
        return Err(CliError::Usage(format!("the {split:?} split is empty")).into());
    }
    let seed = a.seed.unwrap_or(cfg.seeds.eval);
    let report = evaluate(&ck, &episodes, seed, &space)?;
    let m = report.metrics.clone();
    let gate = a.gate.then(|| Gate {
        min_leg_acc: a.min_leg_acc,
        min_jnt_acc: a.min_jnt_acc,
        max_err_dist: a.max_err_dist,
        passed: m.leg_acc >= a.min_leg_acc && m.jnt_acc_mean >= a.min_jnt_acc && m.err_dist_mean_all < a.max_err_dist,
    });
    let split_name = format!("{split:?}").to_lowercase();
    let out = EvalOutput {
        name: report.label(),
        checkpoint: a.checkpoint.display().to_string(),
        split,
        table: report.table(),
        report,
        gate: gate.clone(),
    };
    let path = a.report.unwrap_or_else(|| {
        a.checkpoint.parent().unwrap_or(Path::new(".")).join(format!("eval-{split_name}.json"))
    });
    fs::write(&path, serde_json::to_string_pretty(&out)?).with_context(|| format!("writing {}", path.display()))?;
    println!("{} on {} {} robots (window seed {seed}):", out.name, m.count, split_name);
    print!("{}", out.table.render());
    println!("report written to {}", path.display());
    if let Some(g) = gate {
        if !g.passed {
            return Err(CliError::Gate(format!(
                "leg {:.3} (min {}), joint {:.3} (min {}), err-dist {:.3} (max {})",
                m.leg_acc, g.min_leg_acc, m.jnt_acc_mean, g.min_jnt_acc, m.err_dist_mean_all, g.max_err_dist
            ))
            .into());
        }
        println!("gate passed");
    }
    Ok(())
}

pub fn cmd_compare(a: CompareArgs) -> anyhow::Result<()> {
    let mut named = Vec::with_capacity(a.reports.len());
    for p in &a.reports {
        let text = fs::read_to_string(p).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))?;
        let out: EvalOutput =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{} is not an eval report: {e}", p.display())))?;
        named.push((out.name, out.report.metrics));
    }
    let cmp = compare_variants(&named)?;
    print!("{}", cmp.render());
    if let Some(o) = a.output {
        fs::write(&o, serde_json::to_string_pretty(&cmp)?)?;
    }
    Ok(())
}

/// What `predict` reports for one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub code: String,
    pub window_start: usize,
    /// Softmax probability of the chosen class, leg head first.
    pub confidence: Vec<f64>,
    pub truth: String,
    pub correct: bool,
}

pub fn cmd_predict(a: PredictArgs) -> anyhow::Result<()> {
    let ck = load_checkpoint(&a.checkpoint, a.rm_xyz)?;
    let cfg = load_config(&a.common)?;
    let (episode, space) = match (&a.episode, &a.code) {
        (Some(path), _) => {
            let ep = read_episode_file(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let space = match &cfg.dataset_root {
                Some(root) if root.join(FAMILY_INFO).exists() => read_family_info(root)?.config.space,
                _ => cfg.factory.space.clone(),
            };
            (ep, space)
        }
        (None, Some(code)) => {
            let root = dataset_root(&cfg)?;
            let store = EpisodeStore::open(&root)?;
            let code = parse_code(code)?;
            let ep = store.read_code(&code).map_err(|e| CliError::Usage(e.to_string()))?;
            (ep, read_family_info(&root)?.config.space)
        }
        (None, None) => return Err(CliError::Usage("pass --episode or --code".into()).into()),
    };
    let window = match a.start {
        Some(s) => window_at(&episode, s, &space).map_err(|e| CliError::Usage(e.to_string()))?,
        None => {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(a.seed.unwrap_or(cfg.seeds.eval));
            metaself_core::dataset::sample_window(&episode, &mut rng, &space)?
        }
    };
    let window = if ck.net.config().in_channels == CHANNELS { window } else { drop_com_channels(&window)? };
    let mut net = ck.net.clone();
    let logits = net.forward(&batch_input(&[&window])?, Mode::EVAL, false)?;
    let labels = predict_config(&logits)[0];
    let predicted = labels_to_code(&labels, &space)?;
    let confidence = (0..=JOINT_HEADS)
        .map(|h| {
            let row = logits.slice(ndarray::s![0, head_range(h)]);
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            row.fold(0.0, |s, &v| s + (v - max).exp()).recip()
        })
        .collect();
    let p = Prediction {
        code: predicted.to_string(),
        window_start: window.start,
        confidence,
        truth: episode.code.to_string(),
        correct: predicted == episode.code,
    };
    if a.json {
        println!("{}", serde_json::to_string_pretty(&p)?);
    } else {
        println!("predicted code: {}", p.code);
        let heads: Vec<String> = std::iter::once("leg".to_string()).chain((1..=JOINT_HEADS).map(|j| format!("jnt{j}"))).collect();
        let conf: Vec<String> = heads.iter().zip(&p.confidence).map(|(h, c)| format!("{h} {c:.3}")).collect();
        println!("confidence: {}", conf.join(", "));
        println!("stored code: {} ({})", p.truth, if p.correct { "match" } else { "mismatch" });
    }
    Ok(())
}

pub fn cmd_export(a: ExportArgs) -> anyhow::Result<()> {
    let cfg = load_config(&a.common)?;
    let root = dataset_root(&cfg)?;
    let store = EpisodeStore::open(&root)?;
    let code = parse_code(&a.code)?;
    let ep = store.read_code(&code).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(dir) = a.file.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_episode_file(&a.file, &ep)?;
    println!("wrote episode {} to {}", ep.code, a.file.display());
    Ok(())
}
