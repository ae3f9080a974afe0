//! The `qaforge` command line.
//!
//! Exit codes: 0 success, 1 validation error (including usage errors),
//! 2 provider failure, 3 I/O failure.
//!
//! Every global flag can also be set through a `QAFORGE_*` environment
//! variable or a TOML run configuration (`--run-config`). Flags and
//! environment variables take precedence over the file.

use std::ffi::OsString;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    open_input, read_triplets, write_triplets, CorpusError, DomainTag, JsonlReader, PassageStore, Triplet,
    DEFAULT_ERROR_CAP,
};
use crate::evalharness::{self, EvalError, EvalSets, ExperimentPlan, SquadItem};
use crate::filter::{FilterConfig, FilterError, FilterPipeline};
use crate::genio::{self, Checkpoint, GenError, GenOptions, GenParams, PromptStyle, StyleTag};
use crate::ingest::{self, IngestConfig, IngestError};
use crate::providers::{Endpoints, HttpOptions, OracleTrainer, Providers, Role, Trainer};
use crate::stats::{self, CategoryRules, DiagnosticsConfig, StatsError};
use crate::textproc::Analyzer;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_PROVIDER: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Provider(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Provider(_) => EXIT_PROVIDER,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Provider(m) => write!(f, "provider failure: {m}"),
            CliError::Io(m) => write!(f, "i/o failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io(_) | CorpusError::File { .. } => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Corpus(c) => c.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<GenError> for CliError {
    fn from(e: GenError) -> Self {
        match e {
            GenError::Aborted { .. } => CliError::Provider(e.to_string()),
            GenError::Io(_) => CliError::Io(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<FilterError> for CliError {
    fn from(e: FilterError) -> Self {
        match e {
            FilterError::Io(_) => CliError::Io(e.to_string()),
            FilterError::Corpus(c) => c.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        if e.provider_error().is_some() {
            return CliError::Provider(e.to_string());
        }
        match e {
            StatsError::Io(_) => CliError::Io(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io(_) => CliError::Io(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

/// Settings shared by every subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlobalConfig {
    pub endpoints: Endpoints,
    pub workers: usize,
    /// Extra attempts after a failed provider call.
    pub retries: u32,
    pub retry_backoff_ms: u64,
    /// `None` leaves seeds of loaded plans untouched; other seeded steps use 0.
    pub seed: Option<u64>,
    pub http: HttpOptions,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        GlobalConfig {
            endpoints: Endpoints::default(),
            workers: 1,
            retries: 2,
            retry_backoff_ms: 0,
            seed: None,
            http: HttpOptions::default(),
        }
    }
}

impl GlobalConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.workers == 0 {
            return Err("workers must be at least 1".into());
        }
        if self.http.max_in_flight == 0 {
            return Err("http.max_in_flight must be at least 1".into());
        }
        for role in Role::ALL {
            self.endpoints.spec(role)?;
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn providers(&self) -> Result<Providers, CliError> {
        Providers::from_endpoints(&self.endpoints, &self.http).map_err(CliError::Validation)
    }

    fn pool(&self) -> Result<rayon::ThreadPool, CliError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| CliError::Io(format!("cannot start worker pool: {e}")))
    }
}

#[derive(Debug, Parser, Serialize)]
#[command(name = "qaforge", version, about = "Synthetic QA dataset generation, filtration and evaluation")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Serialize)]
struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true, env = "QAFORGE_RUN_CONFIG")]
    run_config: Option<PathBuf>,
    #[arg(long, global = true, env = "QAFORGE_WORKERS")]
    workers: Option<usize>,
    #[arg(long, global = true, env = "QAFORGE_RETRIES")]
    retries: Option<u32>,
    #[arg(long, global = true, env = "QAFORGE_SEED")]
    seed: Option<u64>,
    #[arg(long, global = true, env = "QAFORGE_GENERATOR_ENDPOINT")]
    generator_endpoint: Option<String>,
    #[arg(long, global = true, env = "QAFORGE_READER_ENDPOINT")]
    reader_endpoint: Option<String>,
    #[arg(long, global = true, env = "QAFORGE_NER_ENDPOINT")]
    ner_endpoint: Option<String>,
    #[arg(long, global = true, env = "QAFORGE_LEMMATIZER_ENDPOINT")]
    lemmatizer_endpoint: Option<String>,
    #[arg(long, global = true, env = "QAFORGE_EMBEDDER_ENDPOINT")]
    embedder_endpoint: Option<String>,
    #[arg(long, global = true, env = "QAFORGE_TRAINER_ENDPOINT")]
    trainer_endpoint: Option<String>,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
enum Command {
    /// Build a batched passage store from raw JSONL records.
    Ingest(IngestArgs),
    /// Generate QA triplets for every passage of a store.
    Generate(GenerateArgs),
    /// Run the filtration cascade over generated triplets.
    Filter(FilterArgs),
    /// Compute diversity and length diagnostics of surviving triplets.
    Stats(StatsArgs),
    /// Run a fine-tuning experiment plan and score it.
    Eval(EvalArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Generate(_) => "generate",
            Command::Filter(_) => "filter",
            Command::Stats(_) => "stats",
            Command::Eval(_) => "eval",
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct IngestArgs {
    /// Input JSONL files; `.gz` is decompressed.
    #[arg(long = "in", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value = "wiki")]
    domain: DomainTag,
    #[arg(long, default_value_t = 20)]
    batches: u32,
    /// Overrides the domain's default lower length bound.
    #[arg(long)]
    min_chars: Option<usize>,
    /// Overrides the domain's default upper length bound.
    #[arg(long)]
    max_chars: Option<usize>,
    /// Additional category substring marking a record for exclusion.
    #[arg(long = "exclude-category")]
    exclude_category: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum StyleArg {
    Gpt,
    T5,
}

#[derive(Debug, Args, Serialize)]
struct GenerateArgs {
    #[arg(long)]
    passages: PathBuf,
    #[arg(long, value_enum, default_value = "gpt")]
    style: StyleArg,
    /// Generator endpoint; overrides the run configuration.
    #[arg(long)]
    endpoint: Option<String>,
    /// Decoding parameters (TOML, or JSON for `.json` files).
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Continue from `checkpoint.json` in the output directory.
    #[arg(long)]
    resume: bool,
    /// Passages per checkpointed unit of work.
    #[arg(long, default_value_t = 64)]
    chunk_size: usize,
}

#[derive(Debug, Args, Serialize)]
struct FilterArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    passages: PathBuf,
    /// Filter configuration (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Write only surviving triplets.
    #[arg(long)]
    survivors_only: bool,
}

#[derive(Debug, Args, Serialize)]
struct StatsArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    passages: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5000)]
    self_bleu_sample: usize,
    #[arg(long, default_value_t = 20)]
    top_k: usize,
    /// Category group rules (TOML).
    #[arg(long)]
    categories: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    /// Experiment plan (TOML).
    #[arg(long)]
    plan: PathBuf,
    /// SQuAD-style dataset, or a triplet file when `--passages` is given.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    passages: Option<PathBuf>,
    #[arg(long)]
    sberquad_dev: PathBuf,
    #[arg(long)]
    sberquad_test: PathBuf,
    /// Second training set for the baseline and sequential fine-tuning.
    #[arg(long)]
    sberquad_train: Option<PathBuf>,
    /// Trainer endpoint; overrides the run configuration.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Directory for sample files handed to the trainer.
    #[arg(long)]
    work_dir: Option<PathBuf>,
}

fn init_logging() {
    let env = env_logger::Env::default().filter_or("QAFORGE_LOG", "info");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_VALIDATION,
            };
        }
    };
    init_logging();
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("qaforge: {e}");
            e.exit_code()
        }
    }
}

fn resolve_global(args: &GlobalArgs) -> Result<GlobalConfig, CliError> {
    let mut cfg = match &args.run_config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            GlobalConfig::from_toml(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?
        }
        None => GlobalConfig::default(),
    };
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(r) = args.retries {
        cfg.retries = r;
    }
    if args.seed.is_some() {
        cfg.seed = args.seed;
    }
    let overrides = [
        (Role::Generator, &args.generator_endpoint),
        (Role::Reader, &args.reader_endpoint),
        (Role::Ner, &args.ner_endpoint),
        (Role::Lemmatizer, &args.lemmatizer_endpoint),
        (Role::Embedder, &args.embedder_endpoint),
        (Role::Trainer, &args.trainer_endpoint),
    ];
    for (role, value) in overrides {
        if let Some(v) = value {
            cfg.endpoints.set(role, v.clone());
        }
    }
    Ok(cfg)
}

/// Hex SHA-256 of the canonical JSON of everything that shapes a run.
pub fn config_hash(value: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(value).expect("JSON values always serialize");
    hex::encode(Sha256::digest(&bytes))
}

fn log_header(global: &GlobalConfig, command: &Command, resolved: serde_json::Value) {
    let value = serde_json::json!({
        "global": global,
        "command": command,
        "resolved": resolved,
    });
    log::info!(
        "qaforge {} {} seed={} config_sha256={}",
        env!("CARGO_PKG_VERSION"),
        command.name(),
        global.seed.map_or_else(|| "default".to_string(), |s| s.to_string()),
        config_hash(&value)
    );
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut global = resolve_global(&cli.global)?;
    match &cli.command {
        Command::Generate(a) => {
            if let Some(e) = &a.endpoint {
                global.endpoints.set(Role::Generator, e.clone());
            }
        }
        Command::Eval(a) => {
            if let Some(e) = &a.endpoint {
                global.endpoints.set(Role::Trainer, e.clone());
            }
        }
        _ => {}
    }
    global.validate().map_err(CliError::Validation)?;
    match &cli.command {
        Command::Ingest(a) => run_ingest(&global, &cli.command, a),
        Command::Generate(a) => run_generate(&global, &cli.command, a),
        Command::Filter(a) => run_filter(&global, &cli.command, a),
        Command::Stats(a) => run_stats(&global, &cli.command, a),
        Command::Eval(a) => run_eval(&global, &cli.command, a),
    }
}

fn to_json<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).expect("configuration types serialize to JSON")
}

/// Pretty JSON plus a trailing newline, written through a temporary file.
fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(|e| CliError::Io(format!("{}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn run_ingest(global: &GlobalConfig, command: &Command, a: &IngestArgs) -> Result<(), CliError> {
    let mut cfg = IngestConfig::for_domain(a.domain);
    cfg.batch_count = a.batches;
    if a.min_chars.is_some() {
        cfg.min_chars = a.min_chars;
    }
    if a.max_chars.is_some() {
        cfg.max_chars = a.max_chars;
    }
    cfg.exclude_category_patterns.extend(a.exclude_category.iter().cloned());
    cfg.seed = global.seed();
    cfg.validate().map_err(CliError::Validation)?;
    log_header(global, command, to_json(&cfg));

    let paths: Vec<&Path> = a.inputs.iter().map(PathBuf::as_path).collect();
    let (store, report) = ingest::ingest_files(&paths, cfg)?;
    store.write_dir(&a.out, a.batches)?;
    write_json_file(&a.out.join("ingest_report.json"), &report)?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?;
    println!("{text}");
    log::info!("kept {} of {} records", report.kept, report.records);
    Ok(())
}

/// Generation progress: the checkpoint plus the size of the triplet file at
/// the time it was taken.
#[derive(Debug, Default, Serialize, Deserialize)]
struct ResumeState {
    checkpoint: Checkpoint,
    output_bytes: u64,
}

fn load_params(path: Option<&Path>, style: StyleArg) -> Result<GenParams, CliError> {
    let Some(path) = path else {
        return Ok(match style {
            StyleArg::Gpt => GenParams::default(),
            StyleArg::T5 => GenParams::t5(),
        });
    };
    let text = read_text(path)?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn run_generate(global: &GlobalConfig, command: &Command, a: &GenerateArgs) -> Result<(), CliError> {
    let params = load_params(a.params.as_deref(), a.style)?;
    params.validate()?;
    let style = PromptStyle::for_tag(match a.style {
        StyleArg::Gpt => StyleTag::GptStyle,
        StyleArg::T5 => StyleTag::T5Style,
    });
    let opts = GenOptions {
        workers: global.workers,
        max_attempts: global.retries.saturating_add(1),
        retry_backoff_ms: global.retry_backoff_ms,
        chunk_size: a.chunk_size.max(1),
    };
    log_header(
        global,
        command,
        serde_json::json!({"params": params, "style": style, "options": opts}),
    );
    let providers = global.providers()?;
    let store = PassageStore::load(&a.passages)?;
    fs::create_dir_all(&a.out).map_err(|e| CliError::Io(format!("{}: {e}", a.out.display())))?;
    let triplets_path = a.out.join("triplets.jsonl");
    let state_path = a.out.join("checkpoint.json");

    let mut state = if a.resume && state_path.exists() {
        let text = read_text(&state_path)?;
        serde_json::from_str::<ResumeState>(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", state_path.display())))?
    } else {
        ResumeState::default()
    };
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .truncate(false)
        .open(&triplets_path)
        .map_err(|e| CliError::Io(format!("{}: {e}", triplets_path.display())))?;
    let on_disk = file.metadata()?.len();
    if on_disk < state.output_bytes {
        return Err(CliError::Validation(format!(
            "{} is shorter than its checkpoint records",
            triplets_path.display()
        )));
    }
    // Drop anything written after the last checkpoint.
    file.set_len(state.output_bytes)?;
    let mut file = file;
    io::Seek::seek(&mut file, io::SeekFrom::End(0))?;
    let mut out = BufWriter::new(file);

    let mut checkpoint = state.checkpoint.clone();
    let mut sink = |chunk: &[Triplet], ck: &Checkpoint| -> io::Result<()> {
        write_triplets(chunk, &mut out).map_err(|e| e.source)?;
        out.get_ref().sync_data()?;
        state.output_bytes = out.get_ref().metadata()?.len();
        state.checkpoint = ck.clone();
        write_json_file(&state_path, &state).map_err(|e| io::Error::other(e.to_string()))
    };
    let result = genio::generate_for_passages(
        store.passages(),
        providers.generator.as_ref(),
        &style,
        &params,
        &opts,
        &mut checkpoint,
        &mut sink,
    );
    let report = result?;
    if !a.out.join("checkpoint.json").exists() {
        write_json_file(&state_path, &state)?;
    }
    write_json_file(&a.out.join("generate_report.json"), &report)?;
    log::info!(
        "generated {} triplets from {} passages ({} resumed past, {} skipped)",
        report.triplets,
        report.passages,
        report.resumed_past,
        report.skipped.len()
    );
    Ok(())
}

/// Valid triplets of a JSONL stream; malformed lines are skipped up to the
/// default cap.
fn triplet_stream(reader: Box<dyn BufRead>) -> impl Iterator<Item = Result<Triplet, FilterError>> {
    let mut errors = 0usize;
    JsonlReader::<_, Triplet>::new(reader).filter_map(move |item| match item {
        Err(e) => Some(Err(FilterError::Io(e))),
        Ok((_, Ok(t))) => Some(Ok(t)),
        Ok((line, Err(e))) => {
            log::warn!("skipping malformed triplet: {e}");
            errors += 1;
            (errors > DEFAULT_ERROR_CAP).then_some(Err(FilterError::Corpus(CorpusError::TooManyMalformed {
                cap: DEFAULT_ERROR_CAP,
                line,
            })))
        }
    })
}

fn run_filter(global: &GlobalConfig, command: &Command, a: &FilterArgs) -> Result<(), CliError> {
    let config = match &a.config {
        Some(p) => FilterConfig::load(p)?,
        None => FilterConfig::default(),
    };
    config.validate().map_err(CliError::Validation)?;
    log_header(global, command, to_json(&config));
    let providers = global.providers()?;
    let store = PassageStore::load(&a.passages)?;
    let pipeline = FilterPipeline::new(config, providers)?.with_workers(global.workers)?;
    let input = triplet_stream(open_input(&a.input)?);
    let file = File::create(&a.out).map_err(|e| CliError::Io(format!("{}: {e}", a.out.display())))?;
    let mut out = BufWriter::new(file);
    let survivors_only = a.survivors_only;
    let mut sink = |t: &Triplet| -> io::Result<()> {
        if survivors_only && !t.survived() {
            return Ok(());
        }
        serde_json::to_writer(&mut out, t).map_err(io::Error::other)?;
        out.write_all(b"\n")
    };
    let report = pipeline.run(input, &store, &mut sink)?;
    out.flush()?;
    write_json_file(&a.report, &report)?;
    log::info!(
        "{} of {} triplets survived ({} unresolved)",
        report.survivors,
        report.input,
        report.unresolved
    );
    Ok(())
}

fn run_stats(global: &GlobalConfig, command: &Command, a: &StatsArgs) -> Result<(), CliError> {
    let rules = match &a.categories {
        Some(p) => CategoryRules::load(p)?,
        None => CategoryRules::default(),
    };
    let cfg = DiagnosticsConfig {
        self_bleu_sample: a.self_bleu_sample,
        seed: global.seed(),
        top_k: a.top_k,
        rules,
        ..Default::default()
    };
    log_header(global, command, to_json(&cfg));
    let providers = global.providers()?;
    let store = PassageStore::load(&a.passages)?;
    let triplets = read_triplets(open_input(&a.input)?, DEFAULT_ERROR_CAP)?;
    if !triplets.errors.is_empty() {
        log::warn!("{} malformed triplet lines skipped", triplets.errors.len());
    }
    let analyzer = Analyzer::new(providers.lemmatizer.clone());
    let report = global
        .pool()?
        .install(|| stats::diversity_report(&triplets.records, &store, &cfg, &analyzer))?;
    write_json_file(&a.out, &report)?;
    log::info!("diagnostics over {} surviving triplets", report.survivors);
    Ok(())
}

fn run_eval(global: &GlobalConfig, command: &Command, a: &EvalArgs) -> Result<(), CliError> {
    let mut plan = ExperimentPlan::load(&a.plan)?;
    if let Some(seed) = global.seed {
        plan.seed = seed;
    }
    log_header(global, command, to_json(&plan));
    let dataset: Vec<SquadItem> = match &a.passages {
        Some(p) => {
            let store = PassageStore::load(p)?;
            let triplets = read_triplets(open_input(&a.dataset)?, DEFAULT_ERROR_CAP)?;
            evalharness::squad_from_triplets(&triplets.records, &store)?
        }
        None => evalharness::load_squad(&a.dataset)?,
    };
    let sets = EvalSets {
        dev: evalharness::load_squad(&a.sberquad_dev)?,
        test: evalharness::load_squad(&a.sberquad_test)?,
        second_train: a.sberquad_train.as_deref().map(evalharness::load_squad).transpose()?,
    };
    plan.validate(dataset.len())?;
    let trainer: Arc<dyn Trainer> = if global.endpoints.get(Role::Trainer) == Some("stub:oracle") {
        let golds = sets
            .dev
            .iter()
            .chain(&sets.test)
            .chain(&dataset)
            .filter_map(|i| Some((i.id.clone(), i.answers.first()?.clone())));
        Arc::new(OracleTrainer::new(golds))
    } else {
        global.providers()?.trainer
    };
    let work_dir = a.work_dir.clone().unwrap_or_else(|| {
        let stem = a.out.file_stem().map_or_else(|| "eval".into(), |s| s.to_string_lossy().into_owned());
        a.out.with_file_name(format!("{stem}_work"))
    });
    let table = global
        .pool()?
        .install(|| evalharness::run_experiment(&plan, &dataset, trainer.as_ref(), &sets, &work_dir))?;
    write_json_file(&a.out, &table)?;
    print!("{}", table.render_text());
    let failed = table.rows.iter().filter(|r| r.failed).count();
    if failed > 0 {
        return Err(CliError::Provider(format!("{failed} of {} result rows failed", table.rows.len())));
    }
    Ok(())
}
