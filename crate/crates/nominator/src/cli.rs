//! The `nominator` command line.
//!
//! Settings resolve in increasing precedence: built-in defaults, a JSON file
//! of flat dotted keys (`--config`), command-line flags, and finally the
//! `NOMINATOR_SEED` environment variable for the seed. The resolved settings
//! are logged to standard error on every run.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nominator_core::dom::{corpus_stats, DomTree};
use nominator_core::embedders::{EmbedError, EmbedderConfig, EmbedderKind, Model};
use nominator_core::eval::{self, EvalConfig, EvalError};
use nominator_core::features::FeatureConfig;
use nominator_core::synth::{self, GenConfig};
use nominator_core::tensor::{gradcheck, GradcheckConfig, GradcheckError, Reduction};
use nominator_core::training::{fit_with, AugmentMode, TrainConfig, TrainError};
use nominator_core::{ClassId, Page, PageGraph, Tensor};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::corpus::{write_corpus, Corpus, Manifest, Split};
use crate::html::parse_html;
use crate::page_json::read_page;
use crate::parallel::Rayon;
use crate::report::{write_gaps, write_history, write_metrics};

pub const SEED_ENV: &str = "NOMINATOR_SEED";

/// Largest relative gradient error `gradcheck` accepts.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "nominator",
    version,
    about = "Nominate web elements on DOM trees with graph neural networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus with a train/val/test manifest.
    Generate(GenerateArgs),
    /// Convert a directory of HTML files into canonical page JSON.
    Ingest(IngestArgs),
    /// Print corpus statistics as JSON.
    Stats(StatsArgs),
    /// Train a model; writes checkpoint.json, history.csv and gaps.csv.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a corpus split; writes a metric CSV.
    Eval(EvalArgs),
    /// Print the per-class nominees of one page as JSON.
    Nominate(NominateArgs),
    /// Check every embedder's gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AugmentArg {
    Off,
    Once,
    Every,
}

impl From<AugmentArg> for AugmentMode {
    fn from(a: AugmentArg) -> Self {
        match a {
            AugmentArg::Off => AugmentMode::Off,
            AugmentArg::Once => AugmentMode::OnceAtT,
            AugmentArg::Every => AugmentMode::EveryT,
        }
    }
}

fn parse_kind(s: &str) -> Result<EmbedderKind, String> {
    s.parse().map_err(|e: EmbedError| e.to_string())
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// JSON file of flat dotted keys, e.g. {"train.epochs": 20}.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long = "pages")]
    pub n_pages: Option<usize>,
    /// Near-duplicate distractors per labeled class.
    #[arg(long)]
    pub distractors: Option<usize>,
    #[arg(long = "text-dim")]
    pub text_dim: Option<usize>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory of `.html`/`.htm` files.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_kind)]
    pub model: Option<EmbedderKind>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long = "M")]
    pub m: Option<usize>,
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long = "T")]
    pub t: Option<usize>,
    #[arg(long, value_enum)]
    pub augment: Option<AugmentArg>,
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    #[arg(long = "text-dim")]
    pub text_dim: Option<usize>,
    /// Worker threads for page-level parallelism; all cores by default.
    #[arg(long)]
    pub workers: Option<usize>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// train, val, test or all.
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct NominateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A canonical page JSON file.
    #[arg(long)]
    pub page: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Random trees per embedder.
    #[arg(long, default_value_t = 5)]
    pub trees: usize,
}

/// Architecture choices exposed as settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub kind: EmbedderKind,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let c = EmbedderConfig::new(EmbedderKind::GcnMean, 1);
        ModelSettings {
            kind: c.kind,
            dim: c.dim,
            layers: c.layers,
            heads: c.heads,
        }
    }
}

impl ModelSettings {
    pub fn embedder(&self, input_dim: usize) -> EmbedderConfig {
        EmbedderConfig::new(self.kind, input_dim)
            .with_dim(self.dim)
            .with_layers(self.layers)
            .with_heads(self.heads)
    }
}

/// Every tunable setting; dotted config keys address its fields, e.g.
/// `model.dim`, `train.lr`, `features.text_dim`, `gen.n_pages`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Settings {
    pub model: ModelSettings,
    pub train: TrainConfig,
    pub features: FeatureConfig,
    pub gen: GenConfig,
}

impl Settings {
    /// Applies a JSON object of dotted keys. Every key must name an existing
    /// setting.
    pub fn apply_json(&mut self, text: &str) -> Result<(), CliError> {
        let overrides: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config file: {e}")))?;
        let mut tree = serde_json::to_value(&*self).expect("settings serialize");
        for (key, value) in overrides {
            let mut slot = &mut tree;
            for part in key.split('.') {
                slot = slot
                    .as_object_mut()
                    .and_then(|o| o.get_mut(part))
                    .ok_or_else(|| CliError::Usage(format!("config file: unknown key `{key}`")))?;
            }
            *slot = value;
        }
        *self = serde_json::from_value(tree)
            .map_err(|e| CliError::Usage(format!("config file: {e}")))?;
        Ok(())
    }

    fn load(config: &ConfigArgs) -> Result<Self, CliError> {
        let mut s = Settings::default();
        if let Some(path) = &config.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            s.apply_json(&text)?;
        }
        Ok(s)
    }
}

/// `--seed`, overridden by the environment when set.
fn resolve_seed(flag: Option<u64>) -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => {
            v.trim().parse().map(Some).map_err(|_| {
                CliError::Usage(format!("{SEED_ENV}: `{v}` is not an unsigned integer"))
            })
        }
        Err(_) => Ok(flag),
    }
}

fn log_settings<T: Serialize>(command: &str, value: &T) {
    eprintln!(
        "nominator {command}: resolved config {}",
        serde_json::to_string(value).expect("settings serialize")
    );
}

fn executor(workers: Option<usize>) -> Result<Rayon, CliError> {
    Rayon::new(workers).map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))
}

fn featurize_pages(trees: Vec<DomTree>, features: &FeatureConfig) -> Result<Vec<Page>, CliError> {
    trees
        .into_iter()
        .map(|t| {
            let id = t.page_id().to_string();
            Page::new(t, features).map_err(|e| CliError::Data(format!("page `{id}`: {e}")))
        })
        .collect()
}

fn load_corpus(dir: &Path) -> Result<Corpus, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Data(format!(
            "corpus directory {} does not exist",
            dir.display()
        )));
    }
    Corpus::load(dir).map_err(data)
}

fn create_file(path: &Path) -> Result<std::fs::File, CliError> {
    std::fs::File::create(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn generate(args: GenerateArgs) -> Result<(), CliError> {
    let mut s = Settings::load(&args.config)?;
    if let Some(seed) = resolve_seed(args.config.seed)? {
        s.gen.seed = seed;
    }
    if let Some(n) = args.n_pages {
        s.gen.n_pages = n;
    }
    if let Some(d) = args.distractors {
        s.gen.distractors_per_class = d;
    }
    if let Some(d) = args.text_dim {
        s.gen.text_dim = d;
    }
    log_settings("generate", &s.gen);
    let pages = synth::generate_pages(&s.gen).map_err(|e| CliError::Usage(e.to_string()))?;
    let (train, val, test) = synth::split_indices(pages.len());
    let ids = |ix: Vec<usize>| {
        ix.into_iter()
            .map(|i| pages[i].page_id().to_string())
            .collect()
    };
    let manifest = Manifest {
        train: ids(train),
        val: ids(val),
        test: ids(test),
    };
    write_corpus(&args.out, &pages, Some(&manifest)).map_err(data)?;
    eprintln!("wrote {} pages to {}", pages.len(), args.out.display());
    Ok(())
}

fn ingest(args: IngestArgs) -> Result<(), CliError> {
    if !args.corpus.is_dir() {
        return Err(CliError::Data(format!(
            "input directory {} does not exist",
            args.corpus.display()
        )));
    }
    let mut files = Vec::new();
    for entry in std::fs::read_dir(&args.corpus).map_err(data)? {
        let path = entry.map_err(data)?.path();
        if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("html") || e.eq_ignore_ascii_case("htm"))
        {
            files.push(path);
        }
    }
    files.sort();
    let mut pages = Vec::with_capacity(files.len());
    for path in &files {
        let bytes =
            std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        pages.push(
            parse_html(&id, &bytes)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?,
        );
    }
    write_corpus(&args.out, &pages, None).map_err(data)?;
    eprintln!(
        "ingested {} documents into {}",
        pages.len(),
        args.out.display()
    );
    Ok(())
}

fn stats(args: StatsArgs) -> Result<(), CliError> {
    let corpus = load_corpus(&args.corpus)?;
    let stats = corpus_stats(&corpus.pages).map_err(data)?;
    let mut stdout = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut stdout, &stats).map_err(data)?;
    writeln!(stdout).map_err(data)
}

fn train_error(e: TrainError) -> CliError {
    match e {
        TrainError::NonFiniteLoss { .. } | TrainError::Tensor(_) => {
            CliError::Numeric(e.to_string())
        }
        TrainError::InvalidConfig(_) | TrainError::Model(EmbedError::InvalidConfig(_)) => {
            CliError::Usage(e.to_string())
        }
        TrainError::Model(EmbedError::Tensor(_)) => CliError::Numeric(e.to_string()),
        _ => CliError::Data(e.to_string()),
    }
}

#[derive(Serialize)]
struct TrainLog<'a> {
    model: &'a ModelSettings,
    train: &'a TrainConfig,
    features: &'a FeatureConfig,
    workers: usize,
}

fn train(args: TrainArgs) -> Result<(), CliError> {
    let mut s = Settings::load(&args.config)?;
    let t = &mut s.train;
    if let Some(seed) = resolve_seed(args.config.seed)? {
        t.seed = seed;
    }
    macro_rules! set {
        ($($flag:ident => $field:expr),* $(,)?) => {
            $(if let Some(v) = args.$flag { $field = v.into(); })*
        };
    }
    set!(epochs => t.epochs, lr => t.lr, m => t.m, k => t.k, batch_size => t.batch_size, augment => t.augment);
    if let Some(v) = args.t {
        t.t = Some(v);
    }
    set!(model => s.model.kind, dim => s.model.dim, layers => s.model.layers, heads => s.model.heads, text_dim => s.features.text_dim);
    let exec = executor(args.workers)?;
    log_settings(
        "train",
        &TrainLog {
            model: &s.model,
            train: &s.train,
            features: &s.features,
            workers: exec.workers(),
        },
    );

    let embedder = s.model.embedder(s.features.dim());
    embedder
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    s.train.validate().map_err(train_error)?;
    let corpus = load_corpus(&args.corpus)?;
    let (train_trees, val_trees) = corpus.train_val(s.train.val_fraction);
    let train = featurize_pages(train_trees, &s.features)?;
    let val = featurize_pages(val_trees, &s.features)?;
    eprintln!(
        "training on {} pages, validating on {}",
        train.len(),
        val.len()
    );

    let model = Model::new(embedder, s.train.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    let epochs = s.train.epochs;
    let result = fit_with(&train, &val, model, &s.train, &exec, |r| {
        let acc = r
            .val_nom_acc
            .map_or_else(|| String::from("-"), |a| format!("{a:.4}"));
        eprintln!(
            "epoch {}/{epochs}: train_loss {:.5} val_loss {:.5} val_nom_acc {acc}",
            r.epoch, r.train_loss, r.val_loss
        );
    })
    .map_err(train_error)?;

    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Data(format!("{}: {e}", args.out.display())))?;
    Checkpoint::new(&result.best, &s.features, &s.train, result.best_epoch)
        .save(&args.out.join("checkpoint.json"))
        .map_err(data)?;
    write_history(create_file(&args.out.join("history.csv"))?, &result.history).map_err(data)?;
    let gaps: Vec<(usize, [Option<f64>; 6])> = result
        .history
        .iter()
        .map(|r| (r.epoch, r.conf_gap))
        .collect();
    write_gaps(create_file(&args.out.join("gaps.csv"))?, &gaps).map_err(data)?;
    eprintln!(
        "best epoch {} (val_loss {:.5}); wrote {}",
        result.best_epoch,
        result.best_val_loss,
        args.out.display()
    );
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<(Checkpoint, Model), CliError> {
    let ck = Checkpoint::load(path).map_err(data)?;
    let model = ck.model().map_err(data)?;
    Ok((ck, model))
}

fn eval_error(e: EvalError) -> CliError {
    match e {
        EvalError::Model(EmbedError::Tensor(_)) => CliError::Numeric(e.to_string()),
        _ => CliError::Data(e.to_string()),
    }
}

fn evaluate(args: EvalArgs) -> Result<(), CliError> {
    let (ck, model) = load_checkpoint(&args.checkpoint)?;
    let mut cfg = EvalConfig {
        m: ck.train.m,
        include_subject: ck.train.include_subject,
        seed: ck.train.seed,
    };
    if let Some(seed) = resolve_seed(args.config.seed)? {
        cfg.seed = seed;
    }
    if args.config.config.is_some() {
        return Err(CliError::Usage(String::from(
            "eval takes its settings from the checkpoint; --config is not accepted",
        )));
    }
    let exec = executor(args.workers)?;
    log_settings("eval", &cfg);
    let corpus = load_corpus(&args.corpus)?;
    let pages = featurize_pages(corpus.split(args.split), &ck.features)?;
    if pages.is_empty() {
        return Err(CliError::Data(format!(
            "split {:?} of {} is empty",
            args.split,
            args.corpus.display()
        )));
    }
    let report = eval::evaluate(&model, &pages, &cfg, &exec).map_err(eval_error)?;
    match &args.out {
        Some(path) => write_metrics(create_file(path)?, &report).map_err(data)?,
        None => write_metrics(std::io::stdout().lock(), &report).map_err(data)?,
    }
    eprintln!(
        "average nomination accuracy {:.4} over {} pages",
        report.average_nomination_accuracy,
        pages.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct Nominee {
    node: usize,
    probability: f64,
    correct: Option<bool>,
}

#[derive(Serialize)]
struct Nominations {
    page_id: String,
    price: Nominee,
    name: Nominee,
    image: Nominee,
    buy: Nominee,
    cart: Nominee,
    subject: Nominee,
}

fn nominate(args: NominateArgs) -> Result<(), CliError> {
    let (ck, model) = load_checkpoint(&args.checkpoint)?;
    let tree = read_page(&args.page).map_err(data)?;
    let page = featurize_pages(vec![tree], &ck.features)?.remove(0);
    let res = eval::nominate(&model, &page).map_err(eval_error)?;
    let pick = |c: ClassId| {
        let n = res.get(c).expect("one nomination per positive class");
        Nominee {
            node: n.node,
            probability: n.probability,
            correct: n.correct,
        }
    };
    let out = Nominations {
        page_id: res.page_id.clone(),
        price: pick(ClassId::Price),
        name: pick(ClassId::Name),
        image: pick(ClassId::Image),
        buy: pick(ClassId::Buy),
        cart: pick(ClassId::Cart),
        subject: pick(ClassId::Subject),
    };
    let mut stdout = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut stdout, &out).map_err(data)?;
    writeln!(stdout).map_err(data)?;
    Ok(())
}

/// Input width, embedding width and largest tree of the gradient suite.
const GRADCHECK_SHAPE: (usize, usize, usize) = (6, 5, 9);

fn gradcheck_one(kind: EmbedderKind, seed: u64) -> Result<f64, CliError> {
    let (input_dim, dim, max_nodes) = GRADCHECK_SHAPE;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=max_nodes);
    let parents = (0..n)
        .map(|i| (i > 0).then(|| rng.random_range(0..i)))
        .collect();
    let x = Tensor::from_vec(
        n,
        input_dim,
        (0..n * input_dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .expect("shape matches");
    let graph = PageGraph::from_parts(parents, x).expect("random tree is valid");
    let targets: Vec<usize> = (0..n)
        .map(|_| rng.random_range(0..ClassId::COUNT))
        .collect();
    let heads = if kind == EmbedderKind::Te { dim } else { 1 };
    let model = Model::new(
        EmbedderConfig::new(kind, input_dim)
            .with_dim(dim)
            .with_heads(heads),
        seed,
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;
    let nodes: Vec<usize> = (0..n).collect();
    let err = gradcheck(
        model.params(),
        |tape, bound| {
            let logits = model
                .logits(tape, bound, &graph, &nodes)
                .map_err(|e| match e {
                    EmbedError::Tensor(t) => t,
                    other => unreachable!("gradcheck inputs are well formed: {other}"),
                })?;
            tape.softmax_cross_entropy(logits, &targets, Reduction::Sum)
        },
        &GradcheckConfig::default(),
    );
    err.map_err(|e: GradcheckError| CliError::Numeric(format!("{kind}: {e}")))
}

/// Worst relative gradient error per embedder over `trees` random trees,
/// each model followed by the classifier head and a summed cross-entropy.
pub fn gradient_suite(seed: u64, trees: usize) -> Result<Vec<(EmbedderKind, f64)>, CliError> {
    EmbedderKind::ALL
        .into_iter()
        .map(|kind| {
            let mut worst: f64 = 0.0;
            for i in 0..trees as u64 {
                worst = worst.max(gradcheck_one(
                    kind,
                    seed.wrapping_mul(1000).wrapping_add(i),
                )?);
            }
            Ok((kind, worst))
        })
        .collect()
}

fn gradcheck_suite(args: GradcheckArgs) -> Result<(), CliError> {
    let seed = resolve_seed(args.seed)?.unwrap_or(0);
    log_settings(
        "gradcheck",
        &serde_json::json!({ "seed": seed, "trees": args.trees, "tolerance": GRADCHECK_TOLERANCE }),
    );
    let mut worst: f64 = 0.0;
    for (kind, err) in gradient_suite(seed, args.trees)? {
        println!("{:<9} max relative error {err:.3e}", kind.to_string());
        worst = worst.max(err);
    }
    println!("overall   max relative error {worst:.3e}");
    if worst < GRADCHECK_TOLERANCE {
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "gradient check failed: {worst:.3e} >= {GRADCHECK_TOLERANCE:e}"
        )))
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Ingest(a) => ingest(a),
        Command::Stats(a) => stats(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => evaluate(a),
        Command::Nominate(a) => nominate(a),
        Command::Gradcheck(a) => gradcheck_suite(a),
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
