//! Event lists for hybrid runs, from gold annotations, a precomputed file,
//! an LLM event-detection prompt or a tagger service, and token-level
//! scoring of event detection.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{load_events_file, Corpus, CorpusError};
use crate::gateway::{Completer, CompletionResult, GatewayError};
use crate::model::{canonical_event, SentenceRecord};
use crate::parse::extract_event_tokens;
use crate::prompt::{EventPromptMode, PromptError, TemplateSet};
use crate::score::{Counts, Prf};

#[derive(Debug, Error)]
pub enum EventError {
    #[error("no events for sentence {id:?} from the {strategy} strategy")]
    MissingEvents { id: String, strategy: &'static str },
    #[error("tagger service at {url}: {message}")]
    ServiceError { url: String, message: String },
    #[error("invalid event strategy {0:?} (gold|file:PATH|llm-zero|llm-few|service:URL)")]
    BadSpec(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventStrategy {
    Gold,
    File {
        path: PathBuf,
        #[serde(skip)]
        events: BTreeMap<String, Vec<String>>,
    },
    LlmZeroShot {
        model: String,
    },
    LlmFewShot {
        model: String,
    },
    Service {
        url: String,
    },
}

impl EventStrategy {
    /// Parses the CLI form. LLM strategies use `model`; `file:` specs load
    /// the map immediately.
    pub fn parse(spec: &str, model: &str) -> Result<Self, EventError> {
        let spec = spec.trim();
        match spec {
            "gold" => return Ok(EventStrategy::Gold),
            "llm-zero" => {
                return Ok(EventStrategy::LlmZeroShot {
                    model: model.to_string(),
                })
            }
            "llm-few" => {
                return Ok(EventStrategy::LlmFewShot {
                    model: model.to_string(),
                })
            }
            _ => {}
        }
        if let Some(path) = spec.strip_prefix("file:") {
            return Self::from_file(PathBuf::from(path));
        }
        if let Some(url) = spec.strip_prefix("service:") {
            if url.starts_with("http://") || url.starts_with("https://") {
                return Ok(EventStrategy::Service {
                    url: url.trim_end_matches('/').to_string(),
                });
            }
        }
        Err(EventError::BadSpec(spec.to_string()))
    }

    pub fn from_file(path: PathBuf) -> Result<Self, EventError> {
        let events = load_events_file(&path)?;
        Ok(EventStrategy::File { path, events })
    }

    pub fn name(&self) -> &'static str {
        match self {
            EventStrategy::Gold => "gold",
            EventStrategy::File { .. } => "file",
            EventStrategy::LlmZeroShot { .. } => "llm-zero",
            EventStrategy::LlmFewShot { .. } => "llm-few",
            EventStrategy::Service { .. } => "service",
        }
    }

    pub fn model(&self) -> Option<&str> {
        match self {
            EventStrategy::LlmZeroShot { model } | EventStrategy::LlmFewShot { model } => {
                Some(model)
            }
            _ => None,
        }
    }

    /// Gold needs gold events on every sentence.
    pub fn check(&self, corpus: &Corpus) -> Result<(), EventError> {
        if let EventStrategy::Gold = self {
            if let Some(s) = corpus.sentences.iter().find(|s| s.gold_events.is_none()) {
                return Err(EventError::MissingEvents {
                    id: s.id.clone(),
                    strategy: "gold",
                });
            }
        }
        Ok(())
    }
}

impl fmt::Display for EventStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventStrategy::File { path, .. } => write!(f, "file:{}", path.display()),
            EventStrategy::Service { url } => write!(f, "service:{url}"),
            EventStrategy::LlmZeroShot { model } | EventStrategy::LlmFewShot { model } => {
                write!(f, "{}({model})", self.name())
            }
            EventStrategy::Gold => f.write_str("gold"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FetchedEvents {
    pub events: Vec<String>,
    /// The event-detection call, for LLM strategies.
    pub call: Option<CompletionResult>,
}

impl From<Vec<String>> for FetchedEvents {
    fn from(events: Vec<String>) -> Self {
        FetchedEvents { events, call: None }
    }
}

pub fn get_events(
    s: &SentenceRecord,
    strategy: &EventStrategy,
    completer: &dyn Completer,
    templates: &TemplateSet,
) -> Result<FetchedEvents, EventError> {
    match strategy {
        EventStrategy::Gold => s
            .gold_events
            .clone()
            .map(FetchedEvents::from)
            .ok_or_else(|| EventError::MissingEvents {
                id: s.id.clone(),
                strategy: "gold",
            }),
        EventStrategy::File { events, .. } => events
            .get(&s.id)
            .cloned()
            .map(FetchedEvents::from)
            .ok_or_else(|| EventError::MissingEvents {
                id: s.id.clone(),
                strategy: "file",
            }),
        EventStrategy::LlmZeroShot { model } | EventStrategy::LlmFewShot { model } => {
            let mode = if matches!(strategy, EventStrategy::LlmZeroShot { .. }) {
                EventPromptMode::ZeroShot
            } else {
                EventPromptMode::FewShot
            };
            let bundle = templates.event_detection(s, mode)?;
            let req = completer.request_for(model, bundle);
            let result = completer.complete(&req)?;
            Ok(FetchedEvents {
                events: extract_event_tokens(&result.text),
                call: Some(result),
            })
        }
        EventStrategy::Service { url } => tag_via_service(url, s).map(FetchedEvents::from),
    }
}

#[derive(Serialize)]
struct TagRequest<'a> {
    text: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    tokens: Option<&'a [String]>,
}

#[derive(Deserialize)]
struct TagResponse {
    events: Vec<String>,
}

fn service_client() -> &'static reqwest::blocking::Client {
    static CLIENT: OnceLock<reqwest::blocking::Client> = OnceLock::new();
    CLIENT.get_or_init(|| {
        reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .expect("http client builds")
    })
}

fn tag_via_service(url: &str, s: &SentenceRecord) -> Result<Vec<String>, EventError> {
    let err = |message: String| EventError::ServiceError {
        url: url.to_string(),
        message,
    };
    let body = TagRequest {
        text: &s.text,
        tokens: s.tokens.as_deref(),
    };
    let resp = service_client()
        .post(format!("{url}/tag"))
        .json(&body)
        .send()
        .map_err(|e| err(e.to_string()))?;
    let status = resp.status();
    if !status.is_success() {
        let text = resp.text().unwrap_or_default();
        return Err(err(format!("HTTP {}: {}", status.as_u16(), text.trim())));
    }
    let parsed: TagResponse = resp
        .json()
        .map_err(|e| err(format!("bad response body: {e}")))?;
    let mut events = Vec::new();
    for raw in parsed.events {
        let ev = canonical_event(&raw).map_err(|e| err(e.to_string()))?;
        if !events.contains(&ev) {
            events.push(ev);
        }
    }
    Ok(events)
}

/// Token-level counts for one sentence. Two empty sets score F1 = 1.
pub fn evaluate_event_tagging(gold: &BTreeSet<String>, pred: &BTreeSet<String>) -> Prf {
    Prf::from_counts_empty_perfect(Counts::of_sets(gold, pred))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventEvalReport {
    pub strategy: String,
    pub overall: Prf,
    pub per_sentence: BTreeMap<String, Counts>,
    pub failures: BTreeMap<String, String>,
}

/// Micro aggregation over sentences: summed TP/FP/FN, then PRF.
pub fn aggregate_event_counts<'a, I>(pairs: I) -> Prf
where
    I: IntoIterator<Item = (&'a BTreeSet<String>, &'a BTreeSet<String>)>,
{
    let total = pairs
        .into_iter()
        .fold(Counts::default(), |acc, (g, p)| acc + Counts::of_sets(g, p));
    Prf::from_counts_empty_perfect(total)
}

/// Runs `strategy` over every sentence with gold events and scores it.
/// Sentences whose events cannot be fetched count as empty predictions.
pub fn evaluate_strategy(
    corpus: &Corpus,
    strategy: &EventStrategy,
    completer: &dyn Completer,
    templates: &TemplateSet,
    concurrency: usize,
) -> EventEvalReport {
    let scored: Vec<_> = corpus
        .sentences
        .iter()
        .filter(|s| s.gold_events.is_some())
        .collect();
    let fetched = crate::pool::bounded_map(concurrency, &scored, |s| {
        get_events(s, strategy, completer, templates)
    });
    let mut report = EventEvalReport {
        strategy: strategy.to_string(),
        ..Default::default()
    };
    let mut total = Counts::default();
    for (s, result) in scored.iter().zip(fetched) {
        let gold: BTreeSet<String> = s.gold_events.iter().flatten().cloned().collect();
        let pred: BTreeSet<String> = match result {
            Ok(f) => f.events.into_iter().collect(),
            Err(e) => {
                report.failures.insert(s.id.clone(), e.to_string());
                BTreeSet::new()
            }
        };
        let c = Counts::of_sets(&gold, &pred);
        total += c;
        report.per_sentence.insert(s.id.clone(), c);
    }
    report.overall = Prf::from_counts_empty_perfect(total);
    report
}
