//! End-to-end runs: events (hybrid only), prompt, completion, parse,
//! normalize, then score and error analysis, all captured in a manifest.

mod manifest;
mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{analyze_run, tabulate, DEFAULT_TOP_K};
use crate::corpus::{load_corpus, Corpus, CorpusError, CorpusFormat};
use crate::events::{get_events, EventError, EventStrategy};
use crate::gateway::{cost_ledger, Completer, CompletionResult, GatewayError};
use crate::model::{AnnotationSet, ComposedAnnotation, ComposedTag, Scope, SentenceRecord};
use crate::normalize::{NormalizationMode, Normalizer, DEFAULT_NORM_MODEL};
use crate::parse::parse_annotations;
use crate::prompt::{PromptError, TemplateSet};
use crate::score::{score_modafact_fold, score_run, ScoreError};

pub use manifest::{
    load_manifest, rederive_predictions, rescore, write_run, CallTiming, CorpusInfo, RunManifest,
    SentenceTrace, Timing, MANIFEST_FILE, RESPONSES_DIR, TIMING_FILE,
};
pub use report::{report, Comparison, ComparisonRow, SotaDelta, SotaReference};

pub const DEFAULT_CONCURRENCY: usize = 4;

/// Broad class of a failure, for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Provider,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Events(#[from] EventError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("manifests come from different corpora ({a} vs {b})")]
    ScopeMismatch { a: String, b: String },
    #[error("sentence {id}: {message}")]
    Strict {
        id: String,
        message: String,
        class: ErrorClass,
    },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl PipelineError {
    pub fn class(&self) -> ErrorClass {
        match self {
            PipelineError::Config(_) | PipelineError::Prompt(_) => ErrorClass::Config,
            PipelineError::Gateway(e) if e.is_config() => ErrorClass::Config,
            PipelineError::Gateway(_) => ErrorClass::Provider,
            PipelineError::Events(e) => event_error_class(e),
            PipelineError::Strict { class, .. } => *class,
            PipelineError::Corpus(_)
            | PipelineError::Score(_)
            | PipelineError::ScopeMismatch { .. }
            | PipelineError::Manifest(_)
            | PipelineError::Io { .. } => ErrorClass::Data,
        }
    }
}

fn event_error_class(e: &EventError) -> ErrorClass {
    match e {
        EventError::BadSpec(_) => ErrorClass::Config,
        EventError::MissingEvents { .. } | EventError::Corpus(_) => ErrorClass::Data,
        EventError::ServiceError { .. } => ErrorClass::Provider,
        EventError::Gateway(g) if g.is_config() => ErrorClass::Config,
        EventError::Gateway(_) => ErrorClass::Provider,
        EventError::Prompt(_) => ErrorClass::Config,
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Unified,
    Hybrid,
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunMode::Unified => "unified",
            RunMode::Hybrid => "hybrid",
        })
    }
}

impl FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "unified" => Ok(RunMode::Unified),
            "hybrid" => Ok(RunMode::Hybrid),
            other => Err(format!("unknown mode {other:?} (unified|hybrid)")),
        }
    }
}

/// Everything that determines a run's output. The output directory and
/// cache location are deliberately not part of the snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub format: CorpusFormat,
    pub mode: RunMode,
    pub model_id: String,
    pub events: Option<EventStrategy>,
    pub normalization: NormalizationMode,
    pub norm_model: String,
    pub concurrency: usize,
    pub strict: bool,
    /// Canonical label to composed tag, for scoring ModaFact folds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag_map: Option<BTreeMap<String, String>>,
    #[serde(skip)]
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(corpus: impl Into<PathBuf>, mode: RunMode, model_id: impl Into<String>) -> Self {
        RunConfig {
            corpus: corpus.into(),
            format: CorpusFormat::FactBank,
            mode,
            model_id: model_id.into(),
            events: None,
            normalization: NormalizationMode::None,
            norm_model: DEFAULT_NORM_MODEL.to_string(),
            concurrency: DEFAULT_CONCURRENCY,
            strict: false,
            tag_map: None,
            out_dir: None,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        match (self.mode, &self.events) {
            (RunMode::Hybrid, None) => {
                return Err(PipelineError::Config(
                    "hybrid mode needs an event strategy".into(),
                ))
            }
            (RunMode::Unified, Some(_)) => {
                return Err(PipelineError::Config(
                    "unified mode takes no event strategy".into(),
                ))
            }
            _ => {}
        }
        if self.model_id.trim().is_empty() {
            return Err(PipelineError::Config("empty model id".into()));
        }
        if self.concurrency == 0 {
            return Err(PipelineError::Config(
                "concurrency must be at least 1".into(),
            ));
        }
        if self.format == CorpusFormat::ModaFact && self.tag_map.is_none() {
            return Err(PipelineError::Config(
                "ModaFact runs need a label-to-tag map".into(),
            ));
        }
        if let Some(map) = &self.tag_map {
            for (label, tag) in map {
                crate::model::FactualityLabel::parse_any(label)
                    .map_err(|e| PipelineError::Config(format!("tag map: {e}")))?;
                ComposedTag::split(tag)
                    .map_err(|e| PipelineError::Config(format!("tag map: {e}")))?;
            }
        }
        Ok(())
    }

    /// Short human name, e.g. `gpt-4o hybrid` or `gpt-4o unified+fewshot`.
    pub fn run_name(&self) -> String {
        match self.normalization {
            NormalizationMode::None => format!("{} {}", self.model_id, self.mode),
            n => format!("{} {}+{}", self.model_id, self.mode, n),
        }
    }
}

/// Maps author-scope predictions onto composed (event, tag) pairs.
pub fn to_composed(
    predictions: &AnnotationSet,
    tag_map: &BTreeMap<String, String>,
) -> BTreeSet<ComposedAnnotation> {
    let canon: BTreeMap<String, &String> = tag_map
        .iter()
        .filter_map(|(k, v)| {
            crate::model::FactualityLabel::parse_any(k)
                .ok()
                .map(|l| (l.canonical().to_string(), v))
        })
        .collect();
    predictions
        .iter()
        .filter(|a| a.scope() == Scope::Author)
        .filter_map(|a| {
            let tag = canon.get(a.label.canonical())?;
            Some(ComposedAnnotation {
                event: a.event.clone(),
                tag: ComposedTag::split(tag).ok()?,
            })
        })
        .collect()
}

/// Per-sentence outcome before merge.
struct SentenceOutcome {
    trace: SentenceTrace,
    calls: Vec<CompletionResult>,
    fatal: Option<PipelineError>,
}

fn is_fatal(e: &GatewayError) -> bool {
    e.is_config() || matches!(e, GatewayError::AuthError { .. })
}

fn process_sentence(
    cfg: &RunConfig,
    s: &SentenceRecord,
    completer: &dyn Completer,
    templates: &TemplateSet,
    normalizer: &Normalizer<'_>,
) -> SentenceOutcome {
    let mut out = SentenceOutcome {
        trace: SentenceTrace::new(&s.id),
        calls: Vec::new(),
        fatal: None,
    };
    let fail = |out: &mut SentenceOutcome, e: PipelineError| {
        out.trace.error = Some(e.to_string());
        let fatal = match &e {
            PipelineError::Gateway(g) | PipelineError::Events(EventError::Gateway(g)) => {
                is_fatal(g)
            }
            PipelineError::Prompt(_) => true,
            _ => false,
        };
        if fatal || cfg.strict {
            out.fatal = Some(match e {
                e @ (PipelineError::Gateway(_) | PipelineError::Prompt(_)) => e,
                e => PipelineError::Strict {
                    id: s.id.clone(),
                    message: e.to_string(),
                    class: e.class(),
                },
            });
        }
    };

    let bundle = match (&cfg.mode, &cfg.events) {
        (RunMode::Hybrid, Some(strategy)) => {
            let fetched = match get_events(s, strategy, completer, templates) {
                Ok(f) => f,
                Err(e) => {
                    fail(&mut out, e.into());
                    return out;
                }
            };
            if let Some(call) = fetched.call {
                out.trace.event_call = Some(call.cache_key.clone());
                out.calls.push(call);
            }
            out.trace.events = Some(fetched.events.clone());
            if fetched.events.is_empty() {
                // Nothing to attribute; no call, empty prediction.
                return out;
            }
            templates.hybrid(s, &fetched.events)
        }
        _ => templates.unified(s),
    };
    let bundle = match bundle {
        Ok(b) => b,
        Err(e) => {
            fail(&mut out, e.into());
            return out;
        }
    };

    let req = completer.request_for(&cfg.model_id, bundle);
    let result = match completer.complete(&req) {
        Ok(r) => r,
        Err(e) => {
            fail(&mut out, e.into());
            return out;
        }
    };
    let parsed = parse_annotations(&result.text, s);
    out.trace.call = Some(result.cache_key.clone());
    out.calls.push(result);

    match normalizer.apply(cfg.normalization, &parsed.accepted, s) {
        Ok(n) => {
            out.trace.normalization_calls = n.calls.iter().map(|c| c.cache_key.clone()).collect();
            out.calls.extend(n.calls);
            out.trace.rewrites = n.rewrites;
            out.trace.predictions = n.annotations;
        }
        Err(e) => {
            // Keep the unnormalized parse so the failure is visible but scored.
            out.trace.predictions = parsed.accepted.clone();
            fail(&mut out, e.into());
        }
    }
    out.trace.parse = Some(parsed);
    out
}

/// Result of [`run_experiment`]: the deterministic manifest, raw response
/// texts by cache key, and timing for the separate timing file.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub manifest: RunManifest,
    pub responses: BTreeMap<String, String>,
    pub timing: Timing,
}

pub fn run_experiment(
    cfg: &RunConfig,
    completer: &dyn Completer,
) -> Result<RunOutput, PipelineError> {
    run_experiment_with(cfg, completer, &TemplateSet::builtin())
}

pub fn run_experiment_with(
    cfg: &RunConfig,
    completer: &dyn Completer,
    templates: &TemplateSet,
) -> Result<RunOutput, PipelineError> {
    cfg.validate()?;
    let corpus = load_corpus(&cfg.corpus, cfg.format)?;
    run_on_corpus(cfg, &corpus, completer, templates)
}

/// As [`run_experiment_with`] on an already loaded corpus.
pub fn run_on_corpus(
    cfg: &RunConfig,
    corpus: &Corpus,
    completer: &dyn Completer,
    templates: &TemplateSet,
) -> Result<RunOutput, PipelineError> {
    cfg.validate()?;
    if let Some(strategy) = &cfg.events {
        strategy.check(corpus)?;
    }
    let started_at = unix_now();
    let clock = Instant::now();
    let normalizer = Normalizer::new(completer, templates, cfg.norm_model.clone());

    let outcomes = crate::pool::bounded_map(cfg.concurrency, &corpus.sentences, |s| {
        process_sentence(cfg, s, completer, templates, &normalizer)
    });

    // Single-threaded merge in corpus order.
    let mut traces = Vec::with_capacity(outcomes.len());
    let mut calls = Vec::new();
    for o in outcomes {
        if let Some(e) = o.fatal {
            return Err(e);
        }
        if let Some(err) = &o.trace.error {
            log::warn!(
                "sentence {}: {err}; scored as an empty prediction",
                o.trace.id
            );
        }
        traces.push(o.trace);
        calls.extend(o.calls);
    }

    let manifest = RunManifest::assemble(cfg, corpus, templates, traces, &calls)?;
    let responses = calls
        .iter()
        .map(|c| (c.cache_key.clone(), c.text.clone()))
        .collect();
    let timing = Timing {
        started_at,
        finished_at: unix_now(),
        elapsed_ms: clock.elapsed().as_millis() as u64,
        calls: calls
            .iter()
            .map(|c| CallTiming {
                key: c.cache_key.clone(),
                model_id: c.model_id.clone(),
                cached: c.cached,
                latency_ms: c.latency_ms,
            })
            .collect(),
    };
    Ok(RunOutput {
        manifest,
        responses,
        timing,
    })
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub(crate) fn predictions_of(traces: &[SentenceTrace]) -> BTreeMap<String, AnnotationSet> {
    traces
        .iter()
        .map(|t| (t.id.clone(), t.predictions.clone()))
        .collect()
}

pub(crate) fn modafact_score(
    cfg: &RunConfig,
    corpus: &Corpus,
    predictions: &BTreeMap<String, AnnotationSet>,
) -> Result<Option<crate::score::Prf>, PipelineError> {
    match (&cfg.tag_map, cfg.format) {
        (Some(map), CorpusFormat::ModaFact) => {
            let composed = predictions
                .iter()
                .map(|(id, p)| (id.clone(), to_composed(p, map)))
                .collect();
            Ok(Some(score_modafact_fold(corpus, &composed)?))
        }
        _ => Ok(None),
    }
}

pub(crate) fn score_and_analyze(
    cfg: &RunConfig,
    corpus: &Corpus,
    traces: &[SentenceTrace],
) -> Result<
    (
        crate::score::ScoreReport,
        Option<crate::score::Prf>,
        crate::analysis::ErrorTable,
    ),
    PipelineError,
> {
    let predictions = predictions_of(traces);
    let scores = score_run(corpus, &predictions)?;
    let modafact = modafact_score(cfg, corpus, &predictions)?;
    let errors = tabulate(&analyze_run(&corpus.sentences, &predictions), DEFAULT_TOP_K);
    Ok((scores, modafact, errors))
}

pub(crate) fn corpus_info(corpus: &Corpus) -> CorpusInfo {
    CorpusInfo {
        name: corpus.name.clone(),
        digest: corpus.digest.clone(),
        language: corpus.language,
        sentences: corpus.sentences.len(),
    }
}

pub(crate) fn cost_of(calls: &[CompletionResult]) -> crate::gateway::CostReport {
    cost_ledger(calls)
}
