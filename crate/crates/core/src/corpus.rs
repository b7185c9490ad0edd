//! JSONL corpus loading (FactBank projection and ModaFact folds), event
//! prediction files, and corpus statistics.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{
    BeliefAnnotation, ComposedAnnotation, ComposedTag, PosHint, Scope, SentenceRecord,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}:{line}: {message}")]
    Schema {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: duplicate sentence id {id:?}")]
    DuplicateSentenceId {
        path: String,
        line: usize,
        id: String,
    },
    #[error("{path}:{line}: event {event:?} has a belief but no polarity")]
    MissingPolarity {
        path: String,
        line: usize,
        event: String,
    },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Language {
    #[default]
    #[serde(rename = "EN")]
    En,
    #[serde(rename = "IT")]
    It,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    #[default]
    FactBank,
    ModaFact,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub name: String,
    pub language: Language,
    pub sentences: Vec<SentenceRecord>,
    /// SHA-256 of the source file bytes; empty for in-memory corpora.
    pub digest: String,
    /// Non-fatal issues found while loading.
    pub warnings: Vec<String>,
}

impl Corpus {
    pub fn new(name: impl Into<String>, sentences: Vec<SentenceRecord>) -> Self {
        Corpus {
            name: name.into(),
            sentences,
            ..Default::default()
        }
    }

    pub fn get(&self, id: &str) -> Option<&SentenceRecord> {
        self.sentences.iter().find(|s| s.id == id)
    }

    pub fn annotation_count(&self) -> usize {
        self.sentences
            .iter()
            .map(|s| s.gold.len() + s.composed_gold.len())
            .sum()
    }
}

#[derive(Deserialize)]
struct RawGold {
    source: String,
    event: String,
    label: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSentence {
    id: String,
    text: String,
    #[serde(default)]
    tokens: Option<Vec<String>>,
    #[serde(default)]
    gold: Vec<RawGold>,
    #[serde(default)]
    gold_events: Option<Vec<String>>,
    #[serde(default)]
    pos: Option<BTreeMap<String, PosHint>>,
}

#[derive(Deserialize)]
struct RawModaEvent {
    event: String,
    #[serde(default)]
    belief: Option<String>,
    #[serde(default)]
    polarity: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModaSentence {
    id: String,
    text: String,
    #[serde(default)]
    tokens: Option<Vec<String>>,
    events: Vec<RawModaEvent>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvents {
    id: String,
    events: Vec<String>,
}

struct Lines {
    path: String,
    name: String,
    digest: String,
    content: String,
}

fn read_lines(path: &Path) -> Result<Lines, CorpusError> {
    let content = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let digest = hex::encode(Sha256::digest(content.as_bytes()));
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Lines {
        path: path.display().to_string(),
        name,
        digest,
        content,
    })
}

impl Lines {
    /// Non-blank lines with 1-based line numbers.
    fn records(&self) -> impl Iterator<Item = (usize, &str)> {
        self.content
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty())
    }

    fn schema(&self, line: usize, message: impl Into<String>) -> CorpusError {
        CorpusError::Schema {
            path: self.path.clone(),
            line,
            message: message.into(),
        }
    }
}

/// Loads a FactBank-style JSONL corpus, one sentence per line.
pub fn load_factbank_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let lines = read_lines(path)?;
    let mut corpus = Corpus {
        name: lines.name.clone(),
        language: Language::En,
        digest: lines.digest.clone(),
        ..Default::default()
    };
    let mut seen = HashSet::new();
    for (line, text) in lines.records() {
        let raw: RawSentence =
            serde_json::from_str(text).map_err(|e| lines.schema(line, e.to_string()))?;
        if !seen.insert(raw.id.clone()) {
            return Err(CorpusError::DuplicateSentenceId {
                path: lines.path.clone(),
                line,
                id: raw.id,
            });
        }
        let mut record = SentenceRecord {
            id: raw.id,
            text: raw.text,
            tokens: raw.tokens,
            gold: BTreeSet::new(),
            gold_events: raw.gold_events,
            pos_hints: raw.pos,
            composed_gold: BTreeSet::new(),
        };
        let mut labels_by_key: BTreeMap<(String, String), BTreeSet<String>> = BTreeMap::new();
        for g in raw.gold {
            let ann = BeliefAnnotation::parse(&g.source, &g.event, &g.label)
                .map_err(|e| lines.schema(line, e.to_string()))?;
            if !record.contains_token(&ann.event) {
                return Err(lines.schema(
                    line,
                    format!("gold event {:?} does not occur in the text", ann.event),
                ));
            }
            labels_by_key
                .entry((ann.source.render(), ann.event.clone()))
                .or_default()
                .insert(ann.label.canonical().to_string());
            if !record.gold.insert(ann.clone()) {
                corpus.warnings.push(format!(
                    "{}:{line}: duplicate gold annotation {ann} dropped",
                    lines.path
                ));
            }
        }
        for ((source, event), labels) in labels_by_key {
            if labels.len() > 1 {
                corpus.warnings.push(format!(
                    "{}:{line}: ({source}, {event}) carries several labels {labels:?}; \
                     string-level matching cannot tell the occurrences apart",
                    lines.path
                ));
            }
        }
        if let Some(events) = &record.gold_events {
            for ann in &record.gold {
                if !events.contains(&ann.event) {
                    return Err(lines.schema(
                        line,
                        format!("gold_events is missing annotated event {:?}", ann.event),
                    ));
                }
            }
        }
        corpus.sentences.push(record);
    }
    if corpus.sentences.is_empty() {
        corpus
            .warnings
            .push(format!("{}: corpus is empty", lines.path));
    }
    for w in &corpus.warnings {
        log::warn!("{w}");
    }
    Ok(corpus)
}

/// Loads a ModaFact fold: each event carries a belief and a polarity value,
/// composed into `belief+polarity`. Annotations are author-scope only.
pub fn load_modafact_fold(path: &Path) -> Result<Corpus, CorpusError> {
    let lines = read_lines(path)?;
    let mut corpus = Corpus {
        name: lines.name.clone(),
        language: Language::It,
        digest: lines.digest.clone(),
        ..Default::default()
    };
    let mut seen = HashSet::new();
    for (line, text) in lines.records() {
        let raw: RawModaSentence =
            serde_json::from_str(text).map_err(|e| lines.schema(line, e.to_string()))?;
        if !seen.insert(raw.id.clone()) {
            return Err(CorpusError::DuplicateSentenceId {
                path: lines.path.clone(),
                line,
                id: raw.id,
            });
        }
        let mut record = SentenceRecord {
            id: raw.id,
            text: raw.text,
            tokens: raw.tokens,
            ..Default::default()
        };
        let mut events = Vec::new();
        for ev in raw.events {
            let event = crate::model::canonical_event(&ev.event)
                .map_err(|e| lines.schema(line, e.to_string()))?;
            if !events.contains(&event) {
                events.push(event.clone());
            }
            let tag = match (ev.belief, ev.polarity) {
                (Some(b), Some(p)) => {
                    ComposedTag::new(&b, &p).map_err(|m| lines.schema(line, m))?
                }
                (Some(_), None) => {
                    return Err(CorpusError::MissingPolarity {
                        path: lines.path.clone(),
                        line,
                        event,
                    })
                }
                (None, _) => continue,
            };
            let ann = ComposedAnnotation { event, tag };
            if !record.composed_gold.insert(ann.clone()) {
                corpus.warnings.push(format!(
                    "{}:{line}: duplicate annotation ({}, {}) dropped",
                    lines.path, ann.event, ann.tag
                ));
            }
        }
        record.gold_events = Some(events);
        corpus.sentences.push(record);
    }
    if corpus.sentences.is_empty() {
        corpus
            .warnings
            .push(format!("{}: corpus is empty", lines.path));
    }
    for w in &corpus.warnings {
        log::warn!("{w}");
    }
    Ok(corpus)
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus, CorpusError> {
    match format {
        CorpusFormat::FactBank => load_factbank_corpus(path),
        CorpusFormat::ModaFact => load_modafact_fold(path),
    }
}

/// Reads `{"id": .., "events": [..]}` lines into an id → ordered events map.
pub fn load_events_file(path: &Path) -> Result<BTreeMap<String, Vec<String>>, CorpusError> {
    let lines = read_lines(path)?;
    let mut out = BTreeMap::new();
    for (line, text) in lines.records() {
        let raw: RawEvents =
            serde_json::from_str(text).map_err(|e| lines.schema(line, e.to_string()))?;
        if out.contains_key(&raw.id) {
            return Err(CorpusError::DuplicateSentenceId {
                path: lines.path.clone(),
                line,
                id: raw.id,
            });
        }
        out.insert(raw.id, raw.events);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsReport {
    pub sentences: usize,
    pub annotations: usize,
    pub author_annotations: usize,
    pub nested_annotations: usize,
    /// Keyed by canonical label (`CT+`, ...) or composed tag.
    pub labels: BTreeMap<String, usize>,
}

pub fn corpus_stats(corpus: &Corpus) -> StatsReport {
    let mut report = StatsReport {
        sentences: corpus.sentences.len(),
        ..Default::default()
    };
    for s in &corpus.sentences {
        for a in &s.gold {
            report.annotations += 1;
            match a.scope() {
                Scope::Author => report.author_annotations += 1,
                Scope::Nested => report.nested_annotations += 1,
            }
            *report
                .labels
                .entry(a.label.canonical().to_string())
                .or_default() += 1;
        }
        for a in &s.composed_gold {
            report.annotations += 1;
            report.author_annotations += 1;
            *report.labels.entry(a.tag.composed()).or_default() += 1;
        }
    }
    report
}
