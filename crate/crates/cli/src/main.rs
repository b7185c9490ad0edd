use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use factbelief::analysis::{analyze_run, errors_csv, tabulate, DEFAULT_TOP_K};
use factbelief::corpus::{corpus_stats, load_corpus, CorpusFormat};
use factbelief::events::{evaluate_strategy, EventStrategy};
use factbelief::gateway::{load_provider_config, CacheStore, Gateway, RetryPolicy};
use factbelief::normalize::{NormalizationMode, DEFAULT_NORM_MODEL};
use factbelief::pipeline::{
    load_manifest, report, rescore, run_experiment_with, write_run, ErrorClass, PipelineError,
    RunConfig, RunMode, SotaReference, DEFAULT_CONCURRENCY, MANIFEST_FILE,
};
use factbelief::prompt::TemplateSet;
use factbelief::score::{score_csv, score_table, ScoreReport};

/// Source-and-target factuality prediction with LLMs
#[derive(Parser, Debug)]
#[command(name = "factbelief", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one experiment and write its manifest
    Run(RunArgs),
    /// Re-derive scores of finished runs from their stored responses
    Score(ScoreArgs),
    /// Error taxonomy of a finished run
    Analyze(AnalyzeArgs),
    /// Compare runs over the same corpus
    Report(ReportArgs),
    /// Evaluate an event detection strategy against gold events
    Tag(TagArgs),
    /// Corpus statistics
    Stats(StatsArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Factbank,
    Modafact,
}

impl From<Format> for CorpusFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Factbank => CorpusFormat::FactBank,
            Format::Modafact => CorpusFormat::ModaFact,
        }
    }
}

#[derive(Args, Debug)]
struct GatewayArgs {
    /// Provider config (TOML)
    #[arg(long, default_value = "providers.toml")]
    providers: PathBuf,

    /// Completion cache directory
    #[arg(long, default_value = ".factbelief-cache")]
    cache: PathBuf,

    /// Keep the cache in memory only
    #[arg(long, conflicts_with = "cache")]
    no_cache: bool,

    #[arg(long, default_value_t = 3)]
    max_retries: u32,

    /// Per-request timeout in seconds
    #[arg(long, default_value_t = 120)]
    timeout: u64,
}

impl GatewayArgs {
    fn build(&self) -> Result<Gateway, PipelineError> {
        let config = load_provider_config(&self.providers)?;
        let cache = if self.no_cache {
            CacheStore::memory()
        } else {
            CacheStore::directory(&self.cache)?
        };
        let retry = RetryPolicy {
            max_retries: self.max_retries,
            timeout_secs: self.timeout,
            ..RetryPolicy::default()
        };
        Ok(Gateway::from_config(&config, cache, retry)?)
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    corpus: PathBuf,

    #[arg(long, value_enum, default_value = "factbank")]
    format: Format,

    /// unified or hybrid
    #[arg(long, default_value = "unified")]
    mode: RunMode,

    /// Prediction model id, as named in the provider config
    #[arg(long)]
    model: String,

    /// Event strategy for hybrid runs: gold, file:PATH, llm-zero, llm-few or service:URL
    #[arg(long)]
    events: Option<String>,

    /// Model for llm-zero / llm-few event detection (defaults to --model)
    #[arg(long)]
    event_model: Option<String>,

    /// none, fewshot or oracle
    #[arg(long, default_value = "none")]
    normalization: NormalizationMode,

    #[arg(long, default_value = DEFAULT_NORM_MODEL)]
    norm_model: String,

    #[arg(long, default_value_t = DEFAULT_CONCURRENCY)]
    concurrency: usize,

    /// JSON object mapping labels to composed tags, for ModaFact runs
    #[arg(long)]
    tag_map: Option<PathBuf>,

    /// Abort on the first per-sentence failure
    #[arg(long)]
    strict: bool,

    /// Prompt template directory overriding the built-in templates
    #[arg(long)]
    templates: Option<PathBuf>,

    /// Output directory (default: runs/<timestamp>-<run name>)
    #[arg(long)]
    out: Option<PathBuf>,

    #[command(flatten)]
    gateway: GatewayArgs,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    /// Run directories or manifest files
    #[arg(required = true)]
    runs: Vec<PathBuf>,

    /// Score against this corpus instead of the one in the manifest
    #[arg(long)]
    corpus: Option<PathBuf>,

    #[arg(long, value_enum)]
    format: Option<Format>,

    #[arg(long)]
    csv: bool,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    run: PathBuf,

    #[arg(long)]
    corpus: Option<PathBuf>,

    /// Subtypes listed per category
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    top_k: usize,

    /// Also write every error record to this CSV file
    #[arg(long)]
    records: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Manifests, run directories or glob patterns
    #[arg(required = true)]
    runs: Vec<String>,

    /// Reference Full F1 in percent
    #[arg(long)]
    sota_full: Option<f64>,

    #[arg(long)]
    sota_author: Option<f64>,

    #[arg(long)]
    sota_nest: Option<f64>,

    #[arg(long)]
    csv: bool,

    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct TagArgs {
    #[arg(long)]
    corpus: PathBuf,

    #[arg(long, value_enum, default_value = "factbank")]
    format: Format,

    /// gold, file:PATH, llm-zero, llm-few or service:URL
    #[arg(long)]
    events: String,

    #[arg(long, default_value = DEFAULT_NORM_MODEL)]
    event_model: String,

    #[arg(long, default_value_t = DEFAULT_CONCURRENCY)]
    concurrency: usize,

    #[arg(long)]
    json: bool,

    #[command(flatten)]
    gateway: GatewayArgs,
}

#[derive(Args, Debug)]
struct StatsArgs {
    corpus: PathBuf,

    #[arg(long, value_enum, default_value = "factbank")]
    format: Format,

    #[arg(long)]
    json: bool,
}

fn config_err(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

fn load_tag_map(path: &Path) -> Result<BTreeMap<String, String>, PipelineError> {
    let text =
        fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn cmd_run(args: RunArgs) -> Result<(), PipelineError> {
    let mut cfg = RunConfig::new(&args.corpus, args.mode, &args.model);
    cfg.format = args.format.into();
    let event_model = args.event_model.as_deref().unwrap_or(&args.model);
    cfg.events = args
        .events
        .as_deref()
        .map(|spec| EventStrategy::parse(spec, event_model))
        .transpose()?;
    cfg.normalization = args.normalization;
    cfg.norm_model = args.norm_model;
    cfg.concurrency = args.concurrency;
    cfg.strict = args.strict;
    cfg.tag_map = args.tag_map.as_deref().map(load_tag_map).transpose()?;
    cfg.validate()?;

    let templates = match &args.templates {
        Some(dir) => TemplateSet::from_dir(dir)?,
        None => TemplateSet::builtin(),
    };
    let gateway = args.gateway.build()?;
    let out_dir = args.out.unwrap_or_else(|| {
        let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
        PathBuf::from("runs").join(format!("{stamp}-{}", slug(&cfg.run_name())))
    });
    cfg.out_dir = Some(out_dir.clone());

    let out = run_experiment_with(&cfg, &gateway, &templates)?;
    write_run(&out_dir, &out)?;
    let failed = out
        .manifest
        .sentences
        .iter()
        .filter(|t| t.error.is_some())
        .count();
    if failed > 0 {
        log::warn!("{failed} sentences failed and were scored as empty predictions");
    }
    print!(
        "{}",
        score_table(&[(&out.manifest.name, &out.manifest.scores)])
    );
    println!("wrote {}", out_dir.join(MANIFEST_FILE).display());
    Ok(())
}

fn cmd_score(args: ScoreArgs) -> Result<(), PipelineError> {
    let corpus = match &args.corpus {
        Some(path) => Some(load_corpus(
            path,
            args.format.map(Into::into).unwrap_or_default(),
        )?),
        None => None,
    };
    let mut rows: Vec<(String, ScoreReport)> = Vec::new();
    for run in &args.runs {
        let name = load_manifest(run)?.name;
        rows.push((name, rescore(run, corpus.as_ref())?));
    }
    let refs: Vec<(&str, &ScoreReport)> = rows.iter().map(|(n, r)| (n.as_str(), r)).collect();
    if args.csv {
        print!("{}", score_csv(&refs));
    } else {
        print!("{}", score_table(&refs));
    }
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<(), PipelineError> {
    let manifest = load_manifest(&args.run)?;
    let path = args.corpus.as_deref().unwrap_or(&manifest.config.corpus);
    let corpus = load_corpus(path, manifest.config.format)?;
    let records = analyze_run(&corpus.sentences, &manifest.predictions());
    print!("{}", tabulate(&records, args.top_k).to_text());
    if let Some(out) = &args.records {
        fs::write(out, errors_csv(&records)).map_err(|source| PipelineError::Io {
            path: out.display().to_string(),
            source,
        })?;
    }
    Ok(())
}

fn expand(patterns: &[String]) -> Result<Vec<PathBuf>, PipelineError> {
    let mut out = Vec::new();
    for p in patterns {
        let path = Path::new(p);
        if path.exists() {
            out.push(path.to_path_buf());
            continue;
        }
        let matches = glob::glob(p).map_err(|e| config_err(format!("{p}: {e}")))?;
        let before = out.len();
        out.extend(matches.filter_map(Result::ok));
        if out.len() == before {
            return Err(PipelineError::Manifest(format!("no runs match {p}")));
        }
    }
    Ok(out)
}

fn cmd_report(args: ReportArgs) -> Result<(), PipelineError> {
    let manifests = expand(&args.runs)?
        .iter()
        .map(|p| load_manifest(p))
        .collect::<Result<Vec<_>, _>>()?;
    let sota = SotaReference {
        full: args.sota_full,
        author: args.sota_author,
        nest: args.sota_nest,
    };
    let comparison = report(&manifests, Some(&sota))?;
    if args.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&comparison).expect("serializes")
        );
    } else if args.csv {
        print!("{}", comparison.to_csv());
    } else {
        println!("corpus: {}", comparison.corpus);
        print!("{}", comparison.to_text());
    }
    Ok(())
}

fn cmd_tag(args: TagArgs) -> Result<(), PipelineError> {
    if args.concurrency == 0 {
        return Err(config_err("concurrency must be at least 1"));
    }
    let corpus = load_corpus(&args.corpus, args.format.into())?;
    let strategy = EventStrategy::parse(&args.events, &args.event_model)?;
    let gateway = match strategy {
        EventStrategy::LlmZeroShot { .. } | EventStrategy::LlmFewShot { .. } => {
            args.gateway.build()?
        }
        _ => Gateway::new(CacheStore::memory()),
    };
    let report = evaluate_strategy(
        &corpus,
        &strategy,
        &gateway,
        &TemplateSet::builtin(),
        args.concurrency,
    );
    if args.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&report).expect("serializes")
        );
        return Ok(());
    }
    let o = &report.overall;
    println!("strategy:  {}", report.strategy);
    println!("sentences: {}", report.per_sentence.len());
    println!(
        "P {:.4}  R {:.4}  F1 {:.4}  (tp {} fp {} fn {})",
        o.precision, o.recall, o.f1, o.tp, o.fp, o.fn_
    );
    for (id, err) in &report.failures {
        println!("failed {id}: {err}");
    }
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> Result<(), PipelineError> {
    let corpus = load_corpus(&args.corpus, args.format.into())?;
    let stats = corpus_stats(&corpus);
    if args.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&stats).expect("serializes")
        );
        return Ok(());
    }
    println!("corpus:      {} ({:?})", corpus.name, corpus.language);
    println!("sentences:   {}", stats.sentences);
    println!(
        "annotations: {} (author {}, nested {})",
        stats.annotations, stats.author_annotations, stats.nested_annotations
    );
    for (label, n) in &stats.labels {
        println!("  {label:<14} {n}");
    }
    for w in &corpus.warnings {
        println!("warning: {w}");
    }
    Ok(())
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Provider => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Score(a) => cmd_score(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Report(a) => cmd_report(a),
        Command::Tag(a) => cmd_tag(a),
        Command::Stats(a) => cmd_stats(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
