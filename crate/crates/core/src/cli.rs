//! The `ccf` command line.
//!
//! Options resolve in three layers: command-line flags, then a `key=value`
//! file given with `--config`, then built-in defaults. Exit codes are 0 on
//! success, 1 on runtime or data errors and 2 on usage errors.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use indexmap::IndexSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::synth::{synth_generate, SynthConfig, DEFAULT_UTILITY_SCALE};
use crate::data::{
    decisions_by_user, parse_dyadic, parse_sessions, simulate_contexts, split_dyadic,
    split_sessions, DyadicDataset, SessionDataset, SplitRatios,
};
use crate::error::Error;
use crate::evaluation::{
    evaluate_offline, fraction_predicted_positive, online_accuracy, rank_top_n, score_histogram,
    ScoreTransform,
};
use crate::model::{EntityId, ParameterStore};
use crate::objectives::{DyadObservation, LossKind, DEFAULT_SMOOTH_SLOPE};
use crate::trainer::{fit, TrainConfig, TrainingRecords, TrainingSet};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage error: {msg}"),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Runtime(Error::Io(e))
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Parser)]
#[command(name = "ccf", version, about = "Session-based choice-aware recommender")]
pub struct Cli {
    /// Read defaults from a key=value file; flags take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn a dyadic file into sessions with sampled pseudo offer sets.
    Simulate(SimulateArgs),
    /// Sample sessions from a random logit world.
    Generate(GenerateArgs),
    /// Partition a dyadic or session file into train, validation and test.
    Split(SplitArgs),
    /// Fit a model and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint against held-out data.
    Evaluate(EvaluateArgs),
    /// Print the top-n items for one user.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Dyadic input file.
    pub input: PathBuf,
    /// Pseudo non-choices added to every positive dyad [default: 9].
    #[arg(long)]
    pub neg_samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub items: Option<usize>,
    /// Dimensionality of the true factors [default: 5].
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub sessions_per_user: Option<usize>,
    #[arg(long)]
    pub offer_size: Option<usize>,
    /// Standard deviation of the true utilities.
    #[arg(long)]
    pub utility_scale: Option<f64>,
    /// Mean action threshold; enables no-response sessions.
    #[arg(long)]
    pub threshold_mean: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the true parameters as a checkpoint.
    #[arg(long, value_name = "PATH")]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub train: Option<f64>,
    #[arg(long)]
    pub valid: Option<f64>,
    #[arg(long)]
    pub test: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output prefix; writes `<prefix>.train`, `<prefix>.valid`, `<prefix>.test`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Softmax,
    Hinge,
    SoftmaxExt,
    HingeExt,
    L2,
    Logistic,
}

impl LossArg {
    fn name(self) -> &'static str {
        match self {
            LossArg::Softmax => "softmax",
            LossArg::Hinge => "hinge",
            LossArg::SoftmaxExt => "softmax-ext",
            LossArg::HingeExt => "hinge-ext",
            LossArg::L2 => "l2",
            LossArg::Logistic => "logistic",
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Session file, or a dyadic file for the `l2` and `logistic` losses.
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub reg_user: Option<f64>,
    #[arg(long)]
    pub reg_item: Option<f64>,
    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Per-epoch learning-rate decay factor.
    #[arg(long)]
    pub anneal: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Train on this many data-parallel shards with per-epoch averaging.
    #[arg(long)]
    pub shards: Option<usize>,
    /// Store parameters in a hashed table of 2^bits slots.
    #[arg(long)]
    pub hash_bits: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Weight of the no-response slack in the extended hinge loss.
    #[arg(long)]
    pub tradeoff_c: Option<f64>,
    #[arg(long)]
    pub init_scale: Option<f64>,
    /// For CF losses on session input, also train on non-chosen offers as
    /// negatives.
    #[arg(long)]
    pub cf_negatives: bool,
    /// Data file whose users and items are added to the model, typically
    /// the unsplit dataset.
    #[arg(long, value_name = "PATH")]
    pub universe: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TransformArg {
    Raw,
    Sigmoid,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Test data: a session file, or a dyadic file for offline metrics.
    pub input: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    /// Metric cutoff [default: 4 when every offer set has 4 items, else 5].
    #[arg(short = 'n')]
    pub n: Option<usize>,
    /// Report next-choice accuracy instead of top-n metrics.
    #[arg(long)]
    pub online: bool,
    /// Drop each user's training positives from the candidates.
    #[arg(long)]
    pub exclude_train: bool,
    /// Training data used by `--exclude-train`.
    #[arg(long, value_name = "PATH")]
    pub train_data: Option<PathBuf>,
    /// Expected dimensionality; a different checkpoint is rejected.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Write a score histogram of random dyads as CSV.
    #[arg(long, value_name = "PATH")]
    pub histogram: Option<PathBuf>,
    #[arg(long)]
    pub buckets: Option<usize>,
    #[arg(long)]
    pub hist_samples: Option<usize>,
    #[arg(long, value_enum)]
    pub transform: Option<TransformArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the key=value report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the single-line tab-separated record here.
    #[arg(long, value_name = "PATH")]
    pub record: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    #[arg(long)]
    pub user: String,
    /// Comma-separated candidates; defaults to every item in the model.
    #[arg(long, value_delimiter = ',')]
    pub candidates: Vec<String>,
    #[arg(short = 'n')]
    pub n: Option<usize>,
}

const CONFIG_KEYS: &[&str] = &[
    "loss", "dim", "reg-user", "reg-item", "lr", "anneal", "epochs", "shards", "hash-bits",
    "seed", "tradeoff-c", "init-scale", "cf-negatives", "neg-samples", "offer-size", "n",
    "online", "exclude-train", "buckets", "hist-samples", "transform", "users", "items",
    "sessions-per-user", "utility-scale", "threshold-mean", "train", "valid", "test",
];

/// Parsed `key=value` configuration. Keys accept `-` or `_`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut values = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("config line {}: expected key=value", k + 1)))?;
            let key = key.trim().replace('_', "-");
            if !CONFIG_KEYS.contains(&key.as_str()) {
                return Err(usage(format!("config line {}: unknown key `{key}`", k + 1)));
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(ConfigFile { values })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        require_file(path)?;
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> CliResult<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| usage(format!("config key `{key}`: invalid value `{v}`"))),
        }
    }

    fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> CliResult<T> {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }

    fn pick_opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> CliResult<Option<T>> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }

    fn switch(&self, flag: bool, key: &str) -> CliResult<bool> {
        Ok(flag || self.get(key)?.unwrap_or(false))
    }

    fn pick_enum<T: ValueEnum>(&self, flag: Option<T>, key: &str, default: T) -> CliResult<T> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.values.get(key) {
            None => Ok(default),
            Some(v) => T::from_str(v, true)
                .map_err(|_| usage(format!("config key `{key}`: invalid value `{v}`"))),
        }
    }
}

fn require_file(path: &Path) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("no such file: {}", path.display())))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataFormat {
    Dyadic,
    Sessions,
}

/// Tells dyadic from session files by the column count of the first record.
pub fn detect_format(path: &Path) -> CliResult<DataFormat> {
    require_file(path)?;
    for (k, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        return match line.split('\t').count() {
            2 => Ok(DataFormat::Dyadic),
            3 => Ok(DataFormat::Sessions),
            c => Err(Error::Parse {
                line: k + 1,
                msg: format!("expected 2 or 3 tab-separated columns, found {c}"),
            }
            .into()),
        };
    }
    Err(Error::Empty(format!("{} has no records", path.display())).into())
}

enum Dataset {
    Dyadic(DyadicDataset),
    Sessions(SessionDataset),
}

impl Dataset {
    fn load(path: &Path) -> CliResult<Self> {
        Ok(match detect_format(path)? {
            DataFormat::Dyadic => Dataset::Dyadic(parse_dyadic(path)?),
            DataFormat::Sessions => Dataset::Sessions(parse_sessions(path)?),
        })
    }

    fn universes(&self) -> (&IndexSet<EntityId>, &IndexSet<EntityId>) {
        match self {
            Dataset::Dyadic(d) => (&d.users, &d.items),
            Dataset::Sessions(s) => (&s.users, &s.items),
        }
    }

    fn positives_by_user(&self) -> BTreeMap<EntityId, Vec<EntityId>> {
        match self {
            Dataset::Sessions(s) => decisions_by_user(&s.sessions),
            Dataset::Dyadic(d) => {
                let mut out: BTreeMap<EntityId, Vec<EntityId>> = BTreeMap::new();
                for (u, i) in &d.dyads {
                    out.entry(u.clone()).or_default().push(i.clone());
                }
                out
            }
        }
    }
}

/// Parses `args` and runs the command, writing reports to `out`.
pub fn run_with<I, T>(args: I, out: &mut dyn Write) -> CliResult
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| usage(e.to_string()))?;
    run(&cli, out)
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> CliResult {
    let config = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, &config, out),
        Command::Generate(a) => cmd_generate(a, &config, out),
        Command::Split(a) => cmd_split(a, &config, out),
        Command::Train(a) => cmd_train(a, &config, out),
        Command::Evaluate(a) => cmd_evaluate(a, &config, out),
        Command::Predict(a) => cmd_predict(a, &config, out),
    }
}

/// Process entry point; returns the exit code.
pub fn main_entry() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    match run(&cli, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("ccf: {e}");
            e.exit_code()
        }
    }
}

pub fn cmd_simulate(args: &SimulateArgs, config: &ConfigFile, out: &mut dyn Write) -> CliResult {
    require_file(&args.input)?;
    let m = config.pick(args.neg_samples, "neg-samples", 9)?;
    let seed = config.pick(args.seed, "seed", 0)?;
    let dyads = parse_dyadic(&args.input)?;
    let sessions = simulate_contexts(&dyads, m, seed)?;
    sessions.save(&args.out)?;
    writeln!(
        out,
        "sessions={} users={} items={}",
        sessions.len(),
        sessions.users.len(),
        sessions.items.len()
    )?;
    Ok(())
}

pub fn cmd_generate(args: &GenerateArgs, config: &ConfigFile, out: &mut dyn Write) -> CliResult {
    let d = SynthConfig::default();
    let synth = SynthConfig {
        dim: config.pick(args.dim, "dim", d.dim)?,
        users: config.pick(args.users, "users", d.users)?,
        items: config.pick(args.items, "items", d.items)?,
        sessions_per_user: config.pick(args.sessions_per_user, "sessions-per-user", d.sessions_per_user)?,
        offer_size: config.pick(args.offer_size, "offer-size", d.offer_size)?,
        seed: config.pick(args.seed, "seed", d.seed)?,
        utility_scale: config.pick(args.utility_scale, "utility-scale", DEFAULT_UTILITY_SCALE)?,
        threshold_mean: config.pick_opt(args.threshold_mean, "threshold-mean")?,
    };
    synth.validate().map_err(|e| usage(e.to_string()))?;
    let (truth, sessions) = synth_generate(&synth)?;
    sessions.save(&args.out)?;
    if let Some(p) = &args.truth {
        truth.store.save(p)?;
    }
    writeln!(
        out,
        "sessions={} users={} items={}",
        sessions.len(),
        sessions.users.len(),
        sessions.items.len()
    )?;
    Ok(())
}

fn suffixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn cmd_split(args: &SplitArgs, config: &ConfigFile, out: &mut dyn Write) -> CliResult {
    let ratios = SplitRatios::new(
        config.pick(args.train, "train", 0.8)?,
        config.pick(args.valid, "valid", 0.0)?,
        config.pick(args.test, "test", 0.2)?,
    )
    .map_err(|e| usage(e.to_string()))?;
    let seed = config.pick(args.seed, "seed", 0)?;
    let names = [".train", ".valid", ".test"];
    let sizes: Vec<usize> = match Dataset::load(&args.input)? {
        Dataset::Dyadic(d) => split_dyadic(&d, ratios, seed)
            .iter()
            .zip(names)
            .map(|(part, name)| part.save(suffixed(&args.out, name)).map(|_| part.len()))
            .collect::<Result<_, _>>()?,
        Dataset::Sessions(s) => split_sessions(&s, ratios, seed)
            .iter()
            .zip(names)
            .map(|(part, name)| part.save(suffixed(&args.out, name)).map(|_| part.len()))
            .collect::<Result<_, _>>()?,
    };
    writeln!(out, "train={} valid={} test={}", sizes[0], sizes[1], sizes[2])?;
    Ok(())
}

/// Resolves the training configuration from flags, config file and defaults.
pub fn resolve_train_config(args: &TrainArgs, config: &ConfigFile) -> CliResult<TrainConfig> {
    let d = TrainConfig::default();
    let loss = config.pick_enum(args.loss, "loss", LossArg::Softmax)?;
    let c = config.pick(args.tradeoff_c, "tradeoff-c", 1.0)?;
    let cfg = TrainConfig {
        loss: LossKind::from_name(loss.name(), c, DEFAULT_SMOOTH_SLOPE)
            .map_err(|e| usage(e.to_string()))?,
        dim: config.pick(args.dim, "dim", d.dim)?,
        reg_user: config.pick(args.reg_user, "reg-user", d.reg_user)?,
        reg_item: config.pick(args.reg_item, "reg-item", d.reg_item)?,
        lr0: config.pick(args.lr, "lr", d.lr0)?,
        anneal: config.pick(args.anneal, "anneal", d.anneal)?,
        epochs: config.pick(args.epochs, "epochs", d.epochs)?,
        shards: config.pick(args.shards, "shards", d.shards)?,
        seed: config.pick(args.seed, "seed", d.seed)?,
        hash_bits: config.pick_opt(args.hash_bits, "hash-bits")?,
        init_scale: config.pick(args.init_scale, "init-scale", d.init_scale)?,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn cf_observations(sessions: &SessionDataset, loss: &LossKind, negatives: bool) -> Vec<DyadObservation> {
    let positives = sessions.positive_dyads();
    let mut obs = positives.observations(1.0);
    if negatives {
        let negative_label = if matches!(loss, LossKind::CfL2) { 0.0 } else { -1.0 };
        let pos: HashSet<(&str, &str)> = positives
            .dyads
            .iter()
            .map(|(u, i)| (u.as_str(), i.as_str()))
            .collect();
        let mut seen = HashSet::new();
        for s in &sessions.sessions {
            for i in s.offers() {
                let key = (s.user(), i.as_str());
                if !pos.contains(&key) && seen.insert(key) {
                    obs.push(DyadObservation::new(s.user(), i.clone(), negative_label));
                }
            }
        }
    }
    obs
}

/// Builds the training set `args` describes for `cfg`.
pub fn load_training_set(args: &TrainArgs, cfg: &TrainConfig, negatives: bool) -> CliResult<TrainingSet> {
    let set = match (Dataset::load(&args.input)?, cfg.loss.is_dyadic()) {
        (Dataset::Sessions(s), false) => s.to_training_set(),
        (Dataset::Sessions(s), true) => TrainingSet {
            records: TrainingRecords::Dyads(cf_observations(&s, &cfg.loss, negatives)),
            users: s.users,
            items: s.items,
        },
        (Dataset::Dyadic(d), true) => d.to_training_set(1.0),
        (Dataset::Dyadic(_), false) => {
            return Err(usage(format!(
                "loss `{}` needs session input; run `ccf simulate` on dyadic data first",
                cfg.loss.name()
            )))
        }
    };
    Ok(match &args.universe {
        None => set,
        Some(p) => {
            let extra = Dataset::load(p)?;
            let (users, items) = extra.universes();
            set.with_universe(users, items)
        }
    })
}

pub fn cmd_train(args: &TrainArgs, config: &ConfigFile, out: &mut dyn Write) -> CliResult {
    require_file(&args.input)?;
    let cfg = resolve_train_config(args, config)?;
    let negatives = config.switch(args.cf_negatives, "cf-negatives")?;
    let set = load_training_set(args, &cfg, negatives)?;
    if cfg.shards > set.len() {
        return Err(usage(format!(
            "{} shards requested for {} records",
            cfg.shards,
            set.len()
        )));
    }
    let (store, report) = fit(&set, &cfg)?;
    for (e, (obj, lr)) in report.objectives.iter().zip(&report.learning_rates).enumerate() {
        writeln!(out, "epoch={} lr={lr} objective={obj}", e + 1)?;
    }
    store.save(&args.out)?;
    writeln!(
        out,
        "loss={} records={} users={} items={} checkpoint={}",
        cfg.loss.name(),
        set.len(),
        set.users.len(),
        set.items.len(),
        args.out.display()
    )?;
    Ok(())
}

/// Default cutoff: 4 when every session offers exactly 4 items, else 5.
pub fn default_cutoff(sessions: &[crate::model::Session]) -> usize {
    if !sessions.is_empty() && sessions.iter().all(|s| s.offers().len() == 4) {
        4
    } else {
        5
    }
}

fn random_dyads(store: &ParameterStore, count: usize, seed: u64) -> Vec<(EntityId, EntityId)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users = store.users();
    let items = store.items();
    (0..count)
        .map(|_| {
            let u = &users[rng.random_range(0..users.len())];
            let i = &items[rng.random_range(0..items.len())];
            (u.clone(), i.clone())
        })
        .collect()
}

pub fn cmd_evaluate(args: &EvaluateArgs, config: &ConfigFile, out: &mut dyn Write) -> CliResult {
    require_file(&args.input)?;
    require_file(&args.model)?;
    let online = config.switch(args.online, "online")?;
    let exclude = config.switch(args.exclude_train, "exclude-train")?;
    if exclude && args.train_data.is_none() {
        return Err(usage("--exclude-train needs --train-data"));
    }
    let store = ParameterStore::load(&args.model)?;
    if let Some(dim) = config.pick_opt(args.dim, "dim")? {
        if dim != store.dim() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has dim {}, expected {dim}",
                store.dim()
            ))
            .into());
        }
    }
    let test = Dataset::load(&args.input)?;
    let mut report = match (&test, online) {
        (Dataset::Sessions(s), true) => crate::evaluation::EvalReport {
            online_accuracy: Some(online_accuracy(&store, &s.sessions)?),
            ..Default::default()
        },
        (Dataset::Dyadic(_), true) => {
            return Err(usage("online evaluation needs a session file"));
        }
        (_, false) => {
            let n = match (config.pick_opt(args.n, "n")?, &test) {
                (Some(0), _) => return Err(usage("-n must be at least 1")),
                (Some(n), _) => n,
                (None, Dataset::Sessions(s)) => default_cutoff(&s.sessions),
                (None, Dataset::Dyadic(_)) => 5,
            };
            let train = match (&args.train_data, exclude) {
                (Some(p), true) => Some(Dataset::load(p)?.positives_by_user()),
                _ => None,
            };
            let universe: Vec<EntityId> = store.items().iter().cloned().collect();
            evaluate_offline(&store, &test.positives_by_user(), &universe, train.as_ref(), n)?
        }
    };
    let mut text = report.to_key_value();
    if let Some(path) = &args.histogram {
        let buckets = config.pick(args.buckets, "buckets", 10)?;
        let samples = config.pick(args.hist_samples, "hist-samples", 1000)?;
        let transform = match config.pick_enum(args.transform, "transform", TransformArg::Sigmoid)? {
            TransformArg::Raw => ScoreTransform::Raw,
            TransformArg::Sigmoid => ScoreTransform::Sigmoid,
        };
        if buckets < 2 {
            return Err(usage("--buckets must be at least 2"));
        }
        let seed = config.pick(args.seed, "seed", 0)?;
        let dyads = random_dyads(&store, samples, seed);
        let hist = score_histogram(&store, &dyads, transform, buckets)?;
        fs::write(path, hist.to_csv())?;
        text.push_str(&format!(
            "fraction_positive={}\n",
            fraction_predicted_positive(&store, &dyads)?
        ));
        report.histogram = Some(hist);
    }
    out.write_all(text.as_bytes())?;
    if let Some(p) = &args.out {
        fs::write(p, &text)?;
    }
    if let Some(p) = &args.record {
        fs::write(p, report.to_tsv())?;
    }
    Ok(())
}

pub fn cmd_predict(args: &PredictArgs, config: &ConfigFile, out: &mut dyn Write) -> CliResult {
    require_file(&args.model)?;
    let n = config.pick(args.n, "n", 5)?;
    if n == 0 {
        return Err(usage("-n must be at least 1"));
    }
    let store = ParameterStore::load(&args.model)?;
    let candidates: Vec<EntityId> = if args.candidates.is_empty() {
        store.items().iter().cloned().collect()
    } else {
        args.candidates.clone()
    };
    for s in rank_top_n(&store, &args.user, &candidates, n)? {
        writeln!(out, "{}\t{}", s.item, s.score)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_parsing() {
        let c = ConfigFile::parse("# comment\n\ndim = 7\nreg_user=0.5\nloss=hinge-ext\n").unwrap();
        assert_eq!(c.get::<usize>("dim").unwrap(), Some(7));
        assert_eq!(c.get::<f64>("reg-user").unwrap(), Some(0.5));
        assert_eq!(c.pick(Some(3usize), "dim", 10).unwrap(), 3);
        assert_eq!(c.pick(None, "epochs", 10usize).unwrap(), 10);
        assert_eq!(c.pick_enum(None, "loss", LossArg::Softmax).unwrap(), LossArg::HingeExt);
        assert!(ConfigFile::parse("dim").is_err());
        assert!(ConfigFile::parse("bogus=1").is_err());
        assert!(ConfigFile::parse("dim=x").unwrap().get::<usize>("dim").is_err());
    }

    #[test]
    fn train_defaults() {
        let cli = Cli::try_parse_from(["ccf", "train", "in.tsv", "--out", "m"]).unwrap();
        let Command::Train(args) = cli.command else {
            panic!("expected train")
        };
        let cfg = resolve_train_config(&args, &ConfigFile::default()).unwrap();
        assert_eq!(cfg.dim, 10);
        assert_eq!(cfg.reg_user, 1e-4);
        assert_eq!(cfg.reg_item, 1e-4);
        assert_eq!(cfg.anneal, 0.9);
        assert_eq!(cfg.loss, LossKind::Softmax);
    }

    #[test]
    fn flags_beat_config() {
        let cli = Cli::try_parse_from(["ccf", "train", "in", "--out", "m", "--dim", "3"]).unwrap();
        let Command::Train(args) = cli.command else {
            panic!("expected train")
        };
        let file = ConfigFile::parse("dim=8\nepochs=2\n").unwrap();
        let cfg = resolve_train_config(&args, &file).unwrap();
        assert_eq!((cfg.dim, cfg.epochs), (3, 2));
    }

    #[test]
    fn out_of_range_is_usage_error() {
        let cli = Cli::try_parse_from(["ccf", "train", "in", "--out", "m", "--lr=-1"]).unwrap();
        let Command::Train(args) = cli.command else {
            panic!("expected train")
        };
        let err = resolve_train_config(&args, &ConfigFile::default()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
