//! Command-line front end. `main.rs` only installs logging and the Ctrl-C
//! handler and calls [`run`].

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::canon::{ApiKeyword, Framework, SignatureDatabase};
use crate::corpus::{Corpus, CorpusManifest, IngestOptions};
use crate::dict::{
    csls_rescale, generate_dictionary, score_matrix, DictConfig, KeywordDictionary, Measure,
    ScoreMatrix, ScoreTable,
};
use crate::embed::{
    bpe_train, embed_batch, BpeVocab, ContextWindow, EmbeddingProvider, FileBacked, HashProvider,
    ProviderKind, SkipGramConfig,
};
use crate::eval::{load_eval_set, parse_qualified, run_suite, same_kind};
use crate::llm::{BackendConfig, PromptTemplate};
use crate::pipeline::{Pipeline, PipelineError, UnmappedPolicy};
use crate::train::{
    grid_search, initial_checkpoint, train, Checkpoint, KeywordSamples, MetricRecord, TrainConfig,
    TrainObserver, BATCH_GRID, LR_GRID,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PIPELINE: i32 = 3;
pub const EXIT_BACKEND: i32 = 4;

pub const DEFAULT_EVAL_SEEDS: [u64; 5] = [10, 20, 30, 40, 50];
pub const BPE_FILE: &str = "bpe.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LAST_FILE: &str = "last.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const VOCABS_FILE: &str = "vocabs.json";
pub const CONTEXT_FILE: &str = "context.json";

/// Set by the Ctrl-C handler; training checkpoints and stops at the next step.
pub static INTERRUPTED: AtomicBool = AtomicBool::new(false);

pub fn install_interrupt_handler() {
    if let Err(e) = ctrlc::set_handler(|| INTERRUPTED.store(true, Ordering::SeqCst)) {
        log::warn!("cannot install Ctrl-C handler: {e}");
    }
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(m: impl std::fmt::Display) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: m.to_string(),
        }
    }

    fn pipeline(m: impl std::fmt::Display) -> Self {
        CliError {
            code: EXIT_PIPELINE,
            message: m.to_string(),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let code = if e.is_backend() {
            EXIT_BACKEND
        } else {
            EXIT_PIPELINE
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::pipeline(e)
    }
}

type CliResult = Result<(), CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Format {
    #[default]
    Text,
    Json,
}

#[derive(Debug, Parser)]
#[command(
    name = "dlport",
    version,
    about = "Transpile between deep-learning frameworks"
)]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a corpus from source trees.
    Ingest(IngestArgs),
    /// Train the keyword alignment model.
    Train(TrainArgs),
    /// Generate a keyword dictionary.
    Dict(DictArgs),
    /// Transpile a file or stdin.
    Transpile(TranspileArgs),
    /// Run an evaluation suite.
    Eval(EvalArgs),
    /// Look at vocabularies, scores and dictionaries.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    pub roots: Vec<PathBuf>,
    /// Signature database, once per framework.
    #[arg(long = "db")]
    pub dbs: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub include: Vec<String>,
    #[arg(long)]
    pub exclude: Vec<String>,
    #[arg(long = "marker")]
    pub markers: Vec<String>,
    #[arg(long)]
    pub max_file_bytes: Option<u64>,
    #[arg(long)]
    pub bpe_merges: Option<usize>,
    /// Report counts without writing anything.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderArg {
    Hash,
    Context,
    File,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long = "db")]
    pub dbs: Vec<PathBuf>,
    #[arg(long)]
    pub src: Option<Framework>,
    #[arg(long)]
    pub tgt: Option<Framework>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub provider: Option<ProviderArg>,
    #[arg(long)]
    pub d_b: Option<usize>,
    /// Embedding file for the file-backed provider.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Search the learning-rate and batch-size grid.
    #[arg(long)]
    pub grid: bool,
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub total_samples: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MeasureArg {
    Cosine,
    Dot,
    Csls,
}

#[derive(Debug, Args)]
pub struct ScoreSource {
    /// Directory written by `train`.
    #[arg(long, conflicts_with = "scores")]
    pub train_dir: Option<PathBuf>,
    /// Score table JSON.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub measure: Option<MeasureArg>,
    /// Neighbourhood size for CSLS.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Base measure under CSLS.
    #[arg(long, value_enum, default_value_t = MeasureArg::Dot)]
    pub base: MeasureArg,
}

#[derive(Debug, Args)]
pub struct DictArgs {
    #[command(flatten)]
    pub source: ScoreSource,
    #[arg(long, default_value_t = crate::dict::DEFAULT_TAU)]
    pub tau: f64,
    /// Never turn parameters into extra calls.
    #[arg(long)]
    pub no_expand: bool,
    #[arg(long)]
    pub drop_floor: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long = "db")]
    pub dbs: Vec<PathBuf>,
    #[arg(long = "dict")]
    pub dictionary: Option<PathBuf>,
    #[arg(long)]
    pub template: Option<PathBuf>,
    #[arg(long)]
    pub backend: Option<PathBuf>,
    /// Fail on keywords missing from the dictionary instead of keeping them.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct TranspileArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Source file; stdin when absent.
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[arg(long)]
    pub eval_set: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Writes predictions, test stubs and report.json here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Score source for ranking metrics.
    #[arg(long)]
    pub train_dir: Option<PathBuf>,
    #[arg(long)]
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[command(subcommand)]
    pub what: InspectCommand,
}

#[derive(Debug, Subcommand)]
pub enum InspectCommand {
    /// Keyword vocabulary of a corpus.
    Vocab {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        framework: Framework,
        #[arg(long)]
        top: Option<usize>,
    },
    /// Best-scoring target keywords for a source keyword.
    Topk {
        #[command(flatten)]
        source: ScoreSource,
        #[arg(long)]
        keyword: String,
        #[arg(long = "top", default_value_t = 5)]
        top: usize,
    },
    /// Differences between two dictionaries.
    Diff { a: PathBuf, b: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedSettings {
    pub provider: ProviderArg,
    pub d_b: usize,
    pub file: Option<PathBuf>,
    pub skipgram: SkipGramConfig,
}

impl Default for EmbedSettings {
    fn default() -> Self {
        EmbedSettings {
            provider: ProviderArg::Context,
            d_b: 32,
            file: None,
            skipgram: SkipGramConfig::default(),
        }
    }
}

/// Values a config file may supply. Relative paths resolve against the file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub dbs: Vec<PathBuf>,
    pub dictionary: Option<PathBuf>,
    pub train_dir: Option<PathBuf>,
    pub eval_set: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub template: Option<PathBuf>,
    pub backend: Option<PathBuf>,
    pub src: Option<Framework>,
    pub tgt: Option<Framework>,
    pub seed: Option<u64>,
    pub seeds: Option<Vec<u64>>,
    pub bpe_merges: Option<usize>,
    pub train: Option<TrainConfig>,
    pub embeddings: Option<EmbedSettings>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(x) = p.as_mut() {
                if x.is_relative() {
                    *x = base.join(&*x);
                }
            }
        };
        for p in [
            &mut cfg.corpus,
            &mut cfg.dictionary,
            &mut cfg.train_dir,
            &mut cfg.eval_set,
            &mut cfg.report,
            &mut cfg.template,
            &mut cfg.backend,
        ] {
            fix(p);
        }
        if let Some(e) = cfg.embeddings.as_mut() {
            fix(&mut e.file);
        }
        cfg.dbs = cfg
            .dbs
            .into_iter()
            .map(|p| if p.is_relative() { base.join(p) } else { p })
            .collect();
        Ok(cfg)
    }
}

struct Ctx<'a> {
    cfg: RunConfig,
    format: Format,
    seed: Option<u64>,
    out: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn emit(&mut self, text: &str, value: serde_json::Value) -> CliResult {
        match self.format {
            Format::Text => write!(self.out, "{text}")?,
            Format::Json => writeln!(
                self.out,
                "{}",
                serde_json::to_string_pretty(&value).expect("json")
            )?,
        }
        Ok(())
    }
}

fn required<T: Clone>(flag: Option<T>, cfg: Option<T>, name: &str) -> Result<T, CliError> {
    flag.or(cfg)
        .ok_or_else(|| CliError::usage(format!("missing --{name}")))
}

fn existing(path: PathBuf) -> Result<PathBuf, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::usage(format!(
            "{} does not exist",
            path.display()
        )))
    }
}

fn load_dbs(flags: &[PathBuf], cfg: &RunConfig) -> Result<Vec<SignatureDatabase>, CliError> {
    let paths = if flags.is_empty() { &cfg.dbs } else { flags };
    if paths.is_empty() {
        return Err(CliError::usage("missing --db"));
    }
    paths
        .iter()
        .map(|p| SignatureDatabase::load(p).map_err(CliError::usage))
        .collect()
}

fn take_db(dbs: &mut Vec<SignatureDatabase>, fw: Framework) -> Result<SignatureDatabase, CliError> {
    let i = dbs
        .iter()
        .position(|d| d.framework == fw)
        .ok_or_else(|| CliError::usage(format!("no signature database for {fw}")))?;
    Ok(dbs.remove(i))
}

/// Runs the CLI on `args` (program name first). Returns the exit code.
pub fn run<I, T>(args: I, stdin: &mut dyn Read, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            if code == 0 {
                let _ = write!(stdout, "{e}");
            } else {
                eprint!("{e}");
            }
            return code;
        }
    };
    match dispatch(cli, stdin, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn dispatch(cli: Cli, stdin: &mut dyn Read, stdout: &mut dyn Write) -> CliResult {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = cli.seed.or(cfg.seed);
    let mut ctx = Ctx {
        cfg,
        format: cli.format,
        seed,
        out: stdout,
    };
    match cli.command {
        Command::Ingest(a) => cmd_ingest(&mut ctx, a),
        Command::Train(a) => cmd_train(&mut ctx, a),
        Command::Dict(a) => cmd_dict(&mut ctx, a),
        Command::Transpile(a) => cmd_transpile(&mut ctx, a, stdin),
        Command::Eval(a) => cmd_eval(&mut ctx, a),
        Command::Inspect(a) => cmd_inspect(&mut ctx, a),
    }
}

fn cmd_ingest(ctx: &mut Ctx, a: IngestArgs) -> CliResult {
    if a.roots.is_empty() {
        return Err(CliError::usage("no input paths"));
    }
    let roots: Vec<PathBuf> = a
        .roots
        .into_iter()
        .map(existing)
        .collect::<Result<_, _>>()?;
    let dbs = load_dbs(&a.dbs, &ctx.cfg)?;
    let db_refs: Vec<&SignatureDatabase> = dbs.iter().collect();
    let mut opts = IngestOptions {
        include: a.include,
        exclude: a.exclude,
        ..Default::default()
    };
    if !a.markers.is_empty() {
        opts.markers = a.markers;
    }
    if let Some(m) = a.max_file_bytes {
        opts.max_file_bytes = m;
    }
    let corpus = Corpus::ingest(&roots, &db_refs, &opts).map_err(CliError::usage)?;
    let out_dir = if a.dry_run {
        None
    } else {
        Some(required(a.out, ctx.cfg.corpus.clone(), "out")?)
    };
    let manifest = corpus
        .manifest(&db_refs, out_dir.as_ref().map(|_| BPE_FILE))
        .map_err(CliError::pipeline)?;
    if let Some(dir) = &out_dir {
        corpus.save(dir, &manifest).map_err(CliError::pipeline)?;
        let merges = a.bpe_merges.or(ctx.cfg.bpe_merges).unwrap_or(500);
        let texts: Vec<&str> = corpus
            .frameworks()
            .flat_map(|fw| corpus.units(fw).iter().map(|u| u.text.as_str()))
            .collect();
        bpe_train(texts, merges)
            .save(&dir.join(BPE_FILE))
            .map_err(CliError::pipeline)?;
    }
    let mut text = String::new();
    for (fw, m) in &manifest.frameworks {
        text.push_str(&format!(
            "{fw}: {} units, {} keywords\n",
            m.unit_count,
            m.vocabulary.len()
        ));
    }
    text.push_str(&format!("skipped: {}\n", corpus.skipped.len()));
    for s in &corpus.skipped {
        text.push_str(&format!("  {}: {}\n", s.path, s.reason));
    }
    let counts: BTreeMap<String, usize> = manifest
        .frameworks
        .iter()
        .map(|(fw, m)| (fw.to_string(), m.unit_count))
        .collect();
    ctx.emit(
        &text,
        json!({ "units": counts, "skipped": corpus.skipped, "manifest_hash": manifest.hash(), "dry_run": a.dry_run }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainVocabs {
    pub src_framework: Framework,
    pub tgt_framework: Framework,
    pub vocab1: Vec<String>,
    pub vocab2: Vec<String>,
}

impl TrainVocabs {
    pub fn keywords(&self) -> (Vec<ApiKeyword>, Vec<ApiKeyword>) {
        (
            self.vocab1
                .iter()
                .map(|s| parse_qualified(self.src_framework, s))
                .collect(),
            self.vocab2
                .iter()
                .map(|s| parse_qualified(self.tgt_framework, s))
                .collect(),
        )
    }
}

struct CliObserver {
    metrics: fs::File,
    last: PathBuf,
}

impl TrainObserver for CliObserver {
    fn record(&mut self, record: &MetricRecord) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.metrics, record)?;
        self.metrics.write_all(b"\n")
    }

    fn checkpoint(&mut self, ck: &Checkpoint) -> std::io::Result<()> {
        ck.save(&self.last).map_err(std::io::Error::other)
    }

    fn should_stop(&self) -> bool {
        INTERRUPTED.load(Ordering::SeqCst)
    }
}

fn build_provider(
    settings: &EmbedSettings,
    bpe: Arc<BpeVocab>,
    corpus: &Corpus,
    seed: u64,
    out: &Path,
) -> Result<Box<dyn EmbeddingProvider>, CliError> {
    Ok(match settings.provider {
        ProviderArg::Hash => Box::new(HashProvider::new(bpe, settings.d_b, seed)),
        ProviderArg::File => {
            let path = settings
                .file
                .clone()
                .ok_or_else(|| CliError::usage("file provider needs --embeddings"))?;
            Box::new(FileBacked::load(&path).map_err(CliError::usage)?)
        }
        ProviderArg::Context => {
            let texts: Vec<&str> = corpus
                .frameworks()
                .flat_map(|fw| corpus.units(fw).iter().map(|u| u.text.as_str()))
                .collect();
            let sg = SkipGramConfig {
                d_b: settings.d_b,
                seed,
                ..settings.skipgram.clone()
            };
            let cw = ContextWindow::train(bpe, &texts, sg);
            cw.save(&out.join(CONTEXT_FILE))
                .map_err(CliError::pipeline)?;
            Box::new(cw)
        }
    })
}

fn samples(
    corpus: &Corpus,
    db: &SignatureDatabase,
    vocab: &[ApiKeyword],
    provider: &dyn EmbeddingProvider,
) -> Result<KeywordSamples, CliError> {
    let index: HashMap<&ApiKeyword, usize> =
        vocab.iter().enumerate().map(|(i, k)| (k, i)).collect();
    let occs = corpus.occurrences(db).map_err(CliError::pipeline)?;
    let occs: Vec<_> = occs
        .into_iter()
        .filter(|o| index.contains_key(&o.keyword))
        .collect();
    let embs = embed_batch(provider, &occs).map_err(CliError::pipeline)?;
    let d_b = provider.d_b();
    let mut h = Array2::zeros((occs.len(), d_b));
    for (r, e) in embs.iter().enumerate() {
        if e.vector.len() != d_b {
            return Err(CliError::pipeline(format!(
                "embedding of {} has dimension {}",
                e.occurrence,
                e.vector.len()
            )));
        }
        h.row_mut(r).assign(&ndarray::ArrayView1::from(&e.vector));
    }
    let y = occs.iter().map(|o| index[&o.keyword]).collect();
    Ok(KeywordSamples { h, y })
}

fn cmd_train(ctx: &mut Ctx, a: TrainArgs) -> CliResult {
    let corpus_dir = existing(required(a.corpus, ctx.cfg.corpus.clone(), "corpus")?)?;
    let out = required(a.out, ctx.cfg.train_dir.clone(), "out")?;
    let src = required(a.src, ctx.cfg.src, "src")?;
    let tgt = required(a.tgt, ctx.cfg.tgt, "tgt")?;
    if src == tgt {
        return Err(CliError::usage("--src and --tgt must differ"));
    }
    let mut dbs = load_dbs(&a.dbs, &ctx.cfg)?;
    let (db1, db2) = (take_db(&mut dbs, src)?, take_db(&mut dbs, tgt)?);
    let (corpus, manifest): (Corpus, CorpusManifest) =
        Corpus::load(&corpus_dir).map_err(CliError::usage)?;
    let bpe_name = manifest
        .frameworks
        .values()
        .find_map(|m| m.bpe.clone())
        .unwrap_or_else(|| BPE_FILE.into());
    let bpe = Arc::new(BpeVocab::load(&corpus_dir.join(bpe_name)).map_err(CliError::usage)?);

    let mut cfg = ctx.cfg.train.clone().unwrap_or_default();
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    cfg.total_samples = a.total_samples.unwrap_or(cfg.total_samples);
    cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
    cfg.peak_lr = a.lr.unwrap_or(cfg.peak_lr);
    cfg.d = a.d.unwrap_or(cfg.d);
    cfg.checkpoint_every = a.checkpoint_every.unwrap_or(cfg.checkpoint_every);
    cfg.validate().map_err(CliError::usage)?;

    let mut settings = ctx.cfg.embeddings.clone().unwrap_or_default();
    if let Some(p) = a.provider {
        settings.provider = p;
    }
    if let Some(d) = a.d_b {
        settings.d_b = d;
    }
    if a.embeddings.is_some() {
        settings.file = a.embeddings;
    }

    let (v1, v2) = (manifest.vocabulary(src), manifest.vocabulary(tgt));
    if v1.is_empty() || v2.is_empty() {
        return Err(CliError::usage(
            "corpus has no keywords for one of the frameworks",
        ));
    }
    fs::create_dir_all(&out)?;
    let provider = build_provider(&settings, bpe, &corpus, cfg.seed, &out)?;
    let data = [
        samples(&corpus, &db1, &v1, provider.as_ref())?,
        samples(&corpus, &db2, &v2, provider.as_ref())?,
    ];
    let vocabs = TrainVocabs {
        src_framework: src,
        tgt_framework: tgt,
        vocab1: v1.iter().map(ApiKeyword::qualified).collect(),
        vocab2: v2.iter().map(ApiKeyword::qualified).collect(),
    };
    fs::write(
        out.join(VOCABS_FILE),
        serde_json::to_string_pretty(&vocabs).expect("json") + "\n",
    )?;

    let train_err = |e: crate::train::TrainError| CliError::pipeline(e);
    let (best, last_step, grid) = if a.grid {
        let (cells, best) =
            grid_search(&data, [&v1, &v2], &cfg, &LR_GRID, &BATCH_GRID).map_err(train_err)?;
        let summary: Vec<_> = cells
            .iter()
            .map(|c| json!({"peak_lr": c.peak_lr, "batch_size": c.batch_size, "avg_cos_sim": c.score, "step": c.checkpoint.step}))
            .collect();
        fs::write(
            out.join("grid.json"),
            serde_json::to_string_pretty(&summary).expect("json") + "\n",
        )?;
        let ck = cells[best].checkpoint.clone();
        let step = ck.step;
        (ck, step, Some(summary))
    } else {
        let start = match &a.resume {
            Some(p) => {
                let mut ck = Checkpoint::load(&existing(p.clone())?).map_err(CliError::usage)?;
                if let Some(n) = a.total_samples {
                    ck.config.total_samples = n;
                }
                ck
            }
            None => initial_checkpoint(provider.d_b(), &cfg, [v1.len(), v2.len()])
                .map_err(CliError::usage)?,
        };
        let metrics = fs::OpenOptions::new()
            .create(true)
            .append(a.resume.is_some())
            .write(true)
            .truncate(a.resume.is_none())
            .open(out.join(METRICS_FILE))?;
        let mut obs = CliObserver {
            metrics,
            last: out.join(LAST_FILE),
        };
        let outcome = train(&data, [&v1, &v2], start, &mut obs).map_err(train_err)?;
        (outcome.best, outcome.last.step, None)
    };
    best.save(&out.join(CHECKPOINT_FILE)).map_err(train_err)?;
    let text = format!(
        "trained {src} -> {tgt}: {} + {} samples, {} steps, best step {} (avg cos {})\n",
        data[0].len(),
        data[1].len(),
        last_step,
        best.step,
        best.avg_cos_sim
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "n/a".into())
    );
    ctx.emit(
        &text,
        json!({"steps": last_step, "best_step": best.step, "avg_cos_sim": best.avg_cos_sim,
               "interrupted": INTERRUPTED.load(Ordering::SeqCst), "grid": grid, "provider": ProviderKind::from(settings.provider)}),
    )
}

impl From<ProviderArg> for ProviderKind {
    fn from(p: ProviderArg) -> Self {
        match p {
            ProviderArg::Hash => ProviderKind::DeterministicHash,
            ProviderArg::Context => ProviderKind::ContextWindow,
            ProviderArg::File => ProviderKind::FileBacked,
        }
    }
}

fn measure_of(m: MeasureArg) -> Measure {
    match m {
        MeasureArg::Cosine => Measure::Cosine,
        MeasureArg::Dot => Measure::Dot,
        MeasureArg::Csls => Measure::Csls {
            k: 0,
            base: Box::new(Measure::Dot),
        },
    }
}

struct Scores {
    matrix: ScoreMatrix,
    vocab1: Vec<ApiKeyword>,
    vocab2: Vec<ApiKeyword>,
    src: Framework,
    tgt: Framework,
}

fn load_scores(src: &ScoreSource, cfg: &RunConfig) -> Result<Scores, CliError> {
    let requested = src.measure;
    let (matrix, vocab1, vocab2, s, t) = if let Some(path) = &src.scores {
        let table = ScoreTable::load(&existing(path.clone())?).map_err(CliError::usage)?;
        let m = table.matrix().map_err(CliError::usage)?;
        if let Some(r) = requested {
            if r != MeasureArg::Csls && measure_of(r) != table.measure {
                return Err(CliError::usage(format!(
                    "score table holds {:?} scores",
                    table.measure
                )));
            }
        }
        let (v1, v2) = table.vocabs();
        (m, v1, v2, table.src_framework, table.tgt_framework)
    } else {
        let dir = existing(required(
            src.train_dir.clone(),
            cfg.train_dir.clone(),
            "train-dir or --scores",
        )?)?;
        let ck = Checkpoint::load(&dir.join(CHECKPOINT_FILE)).map_err(CliError::usage)?;
        let text = fs::read_to_string(dir.join(VOCABS_FILE)).map_err(CliError::usage)?;
        let vocabs: TrainVocabs = serde_json::from_str(&text).map_err(CliError::usage)?;
        let (v1, v2) = vocabs.keywords();
        let base = match requested {
            Some(MeasureArg::Csls) => measure_of(src.base),
            Some(m) => measure_of(m),
            None => Measure::Dot,
        };
        let e = &ck.model.embeddings;
        let m = score_matrix(e[0].view(), e[1].view(), &base).map_err(CliError::pipeline)?;
        (m, v1, v2, vocabs.src_framework, vocabs.tgt_framework)
    };
    let matrix = if requested == Some(MeasureArg::Csls) {
        csls_rescale(&matrix, src.k).map_err(CliError::usage)?
    } else {
        matrix
    };
    Ok(Scores {
        matrix,
        vocab1,
        vocab2,
        src: s,
        tgt: t,
    })
}

fn cmd_dict(ctx: &mut Ctx, a: DictArgs) -> CliResult {
    let scores = load_scores(&a.source, &ctx.cfg)?;
    let cfg = DictConfig {
        tau: if a.no_expand { None } else { Some(a.tau) },
        drop_floor: a.drop_floor.unwrap_or(f64::NEG_INFINITY),
    };
    let dict = generate_dictionary(&scores.vocab1, &scores.vocab2, &scores.matrix, &cfg)
        .map_err(CliError::pipeline)?;
    if let Some(out) = a.out.or(ctx.cfg.dictionary.clone()) {
        dict.save(&out)?;
    }
    let mut text = format!(
        "{} -> {} ({:?})\n",
        scores.src, scores.tgt, scores.matrix.measure
    );
    for g in &dict.groups {
        text.push_str(&format!(
            "{} -> {} ({:.3})\n",
            g.src_callable, g.tgt_callable, g.score
        ));
        for p in &g.params {
            text.push_str(&format!(
                "  {} -> {}\n",
                p.src,
                p.tgt.as_deref().unwrap_or("<drop>")
            ));
        }
        for e in &g.expansions {
            text.push_str(&format!("  {} -> +{}\n", e.src_param, e.new_call));
        }
    }
    ctx.emit(&text, serde_json::to_value(&dict).expect("json"))
}

fn build_pipeline(a: &PipelineArgs, cfg: &RunConfig) -> Result<Pipeline, CliError> {
    let dict_path = existing(required(
        a.dictionary.clone(),
        cfg.dictionary.clone(),
        "dict",
    )?)?;
    let dict = KeywordDictionary::load(&dict_path).map_err(CliError::usage)?;
    let mut dbs = load_dbs(&a.dbs, cfg)?;
    let (src, tgt) = (
        take_db(&mut dbs, dict.src_framework)?,
        take_db(&mut dbs, dict.tgt_framework)?,
    );
    let tmpl_path = existing(required(
        a.template.clone(),
        cfg.template.clone(),
        "template",
    )?)?;
    let tmpl = PromptTemplate::load(&tmpl_path, dict.src_framework, dict.tgt_framework)
        .map_err(CliError::usage)?;
    let backend_path = existing(required(a.backend.clone(), cfg.backend.clone(), "backend")?)?;
    let backend = BackendConfig::load(&backend_path)
        .and_then(|b| b.build())
        .map_err(CliError::usage)?;
    let mut p = Pipeline::new(src, tgt, dict, tmpl, backend).map_err(CliError::usage)?;
    if a.strict {
        p.unmapped = UnmappedPolicy::Error;
    }
    Ok(p)
}

fn cmd_transpile(ctx: &mut Ctx, a: TranspileArgs, stdin: &mut dyn Read) -> CliResult {
    let pipeline = build_pipeline(&a.pipeline, &ctx.cfg)?;
    let source = match &a.input {
        Some(p) => fs::read_to_string(existing(p.clone())?).map_err(CliError::usage)?,
        None => {
            let mut s = String::new();
            stdin.read_to_string(&mut s).map_err(CliError::usage)?;
            s
        }
    };
    let out = pipeline.transpile(&source)?;
    for w in &out.warnings {
        log::warn!("{w}");
    }
    if let Some(path) = &a.output {
        fs::write(path, &out.text)?;
    }
    let text = if a.output.is_some() {
        String::new()
    } else {
        out.text.clone()
    };
    ctx.emit(
        &text,
        json!({"output": out.text, "skeleton": out.skeleton.text, "target_skeleton": out.target_skeleton,
               "translations": out.translations, "warnings": out.warnings}),
    )
}

fn cmd_eval(ctx: &mut Ctx, a: EvalArgs) -> CliResult {
    let mut pipeline = build_pipeline(&a.pipeline, &ctx.cfg)?;
    let set = existing(required(a.eval_set, ctx.cfg.eval_set.clone(), "eval-set")?)?;
    let examples = load_eval_set(&set).map_err(CliError::usage)?;
    let seeds = if !a.seeds.is_empty() {
        a.seeds
    } else if let Some(s) = ctx.seed {
        vec![s]
    } else {
        ctx.cfg
            .seeds
            .clone()
            .unwrap_or_else(|| DEFAULT_EVAL_SEEDS.to_vec())
    };
    if a.train_dir.is_some() || a.scores.is_some() {
        let source = ScoreSource {
            train_dir: a.train_dir,
            scores: a.scores,
            measure: None,
            k: 10,
            base: MeasureArg::Dot,
        };
        let s = load_scores(&source, &ctx.cfg)?;
        pipeline.scores = Some((s.matrix, s.vocab1, s.vocab2));
    }
    let out_dir = a.out.or(ctx.cfg.report.clone());
    if let Some(d) = &out_dir {
        fs::create_dir_all(d)?;
    }
    let dbs = [&pipeline.src_db, &pipeline.tgt_db];
    let report = run_suite(&pipeline, &examples, &seeds, &dbs, out_dir.as_deref())
        .map_err(CliError::pipeline)?;
    let mut text = String::from("seed  examples  f1      em      failures\n");
    for r in &report.seeds {
        text.push_str(&format!(
            "{:<5} {:<9} {:.4}  {:.4}  {}\n",
            r.seed, r.examples, r.f1, r.exact_match, r.failures
        ));
    }
    text.push_str(&format!(
        "mean f1 {:.4}, mean em {:.4}\n",
        report.mean_f1, report.mean_exact_match
    ));
    if let Some(k) = &report.keyword_metrics {
        text.push_str(&format!(
            "keywords: {} gold pairs, p@1 {:.4}, p@5 {:.4}, mrr {:.4}\n",
            k.gold_pairs, k.precision_at_1, k.precision_at_5, k.mrr
        ));
    }
    text.push_str(&format!("report hash {}\n", report.hash()));
    let mut value = serde_json::to_value(&report).expect("json");
    value["hash"] = json!(report.hash());
    ctx.emit(&text, value)
}

fn cmd_inspect(ctx: &mut Ctx, a: InspectArgs) -> CliResult {
    match a.what {
        InspectCommand::Vocab {
            corpus,
            framework,
            top,
        } => {
            let dir = existing(required(corpus, ctx.cfg.corpus.clone(), "corpus")?)?;
            let (_, manifest) = Corpus::load(&dir).map_err(CliError::usage)?;
            let m = manifest
                .frameworks
                .get(&framework)
                .ok_or_else(|| CliError::usage(format!("corpus has no {framework} units")))?;
            let entries: Vec<_> = m
                .vocabulary
                .iter()
                .take(top.unwrap_or(usize::MAX))
                .collect();
            let text: String = entries
                .iter()
                .map(|e| format!("{:>4} {:>6} {}\n", e.id, e.count, e.keyword))
                .collect();
            ctx.emit(&text, serde_json::to_value(&entries).expect("json"))
        }
        InspectCommand::Topk {
            source,
            keyword,
            top,
        } => {
            let s = load_scores(&source, &ctx.cfg)?;
            let kw = parse_qualified(s.src, &keyword);
            let row = s
                .vocab1
                .iter()
                .position(|k| *k == kw)
                .ok_or_else(|| CliError::usage(format!("unknown keyword `{keyword}`")))?;
            let ranked = top_k(&s.matrix, row, top, |j| same_kind(&kw, &s.vocab2[j]));
            let text: String = ranked
                .iter()
                .map(|&(j, v)| format!("{:>10.4} {}\n", v, s.vocab2[j].qualified()))
                .collect();
            let value: Vec<_> = ranked
                .iter()
                .map(|&(j, v)| json!({"keyword": s.vocab2[j].qualified(), "score": v}))
                .collect();
            ctx.emit(&text, json!(value))
        }
        InspectCommand::Diff { a, b } => {
            let da = KeywordDictionary::load(&existing(a)?).map_err(CliError::usage)?;
            let db = KeywordDictionary::load(&existing(b)?).map_err(CliError::usage)?;
            let diff = da.diff(&db);
            let text: String = diff.iter().map(|l| format!("{l}\n")).collect();
            ctx.emit(&text, json!(diff))
        }
    }
}

/// Columns of `row` accepted by `keep`, by descending score, ties by column index.
pub fn top_k(
    s: &ScoreMatrix,
    row: usize,
    k: usize,
    keep: impl Fn(usize) -> bool,
) -> Vec<(usize, f64)> {
    let (_, cols) = s.shape();
    let mut v: Vec<(usize, f64)> = (0..cols)
        .filter(|&j| keep(j))
        .map(|j| (j, s.get(row, j)))
        .collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    v.truncate(k);
    v
}
