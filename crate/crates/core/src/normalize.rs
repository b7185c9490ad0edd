//! Post-hoc source normalization: maps predicted source paths onto the
//! corpus's token-level source convention, either by a few-shot rewrite
//! prompt or by asking the model whether a prediction names the same entity
//! as one of the gold sources.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::{Mutex, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::gateway::{Completer, CompletionResult, GatewayError};
use crate::model::{AnnotationSet, BeliefAnnotation, Scope, SentenceRecord, SourcePath};
use crate::prompt::TemplateSet;

/// Default normalizer model; independent of the prediction model.
pub const DEFAULT_NORM_MODEL: &str = "gpt-4o";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizationMode {
    #[default]
    None,
    FewShot,
    Oracle,
}

impl fmt::Display for NormalizationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormalizationMode::None => "none",
            NormalizationMode::FewShot => "fewshot",
            NormalizationMode::Oracle => "oracle",
        })
    }
}

impl FromStr for NormalizationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(NormalizationMode::None),
            "fewshot" | "few-shot" => Ok(NormalizationMode::FewShot),
            "oracle" => Ok(NormalizationMode::Oracle),
            other => Err(format!(
                "unknown normalization mode {other:?} (none|fewshot|oracle)"
            )),
        }
    }
}

fn source_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"(?i:\bAUTHOR)(?:_[^\s_"'`,;*]+)+"#).expect("valid regex"))
}

/// First `AUTHOR(_segment)+` sequence in a few-shot reply, unless the reply
/// says no SIP was found.
pub fn parse_fewshot_reply(reply: &str) -> Option<SourcePath> {
    if reply.to_ascii_lowercase().contains("no sip found") {
        return None;
    }
    let m = source_pattern().find(reply)?;
    SourcePath::parse(m.as_str()).ok()
}

/// Whether the first line of an oracle reply starts with YES.
pub fn is_affirmative(reply: &str) -> bool {
    let first = reply.trim_start().lines().next().unwrap_or("");
    let word: String = first
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .chars()
        .take_while(|c| c.is_alphabetic())
        .collect();
    word.eq_ignore_ascii_case("yes")
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct MemoKey {
    mode: NormalizationMode,
    source: SourcePath,
    sentence: String,
    gold: Vec<SourcePath>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Normalized {
    pub annotations: AnnotationSet,
    /// Source rewrites applied in this sentence.
    pub rewrites: BTreeMap<SourcePath, SourcePath>,
    /// Gateway results of the calls this pass made (memo hits excluded).
    #[serde(skip)]
    pub calls: Vec<CompletionResult>,
}

pub struct Normalizer<'a> {
    completer: &'a dyn Completer,
    templates: &'a TemplateSet,
    model_id: String,
    memo: Mutex<HashMap<MemoKey, SourcePath>>,
}

impl<'a> Normalizer<'a> {
    pub fn new(
        completer: &'a dyn Completer,
        templates: &'a TemplateSet,
        model_id: impl Into<String>,
    ) -> Self {
        Normalizer {
            completer,
            templates,
            model_id: model_id.into(),
            memo: Mutex::new(HashMap::new()),
        }
    }

    fn memo_get(&self, key: &MemoKey) -> Option<SourcePath> {
        self.memo.lock().expect("memo poisoned").get(key).cloned()
    }

    fn memo_put(&self, key: MemoKey, value: SourcePath) {
        self.memo.lock().expect("memo poisoned").insert(key, value);
    }

    fn call(
        &self,
        prompt: crate::prompt::PromptBundle,
        calls: &mut Vec<CompletionResult>,
    ) -> Result<String, GatewayError> {
        let req = self.completer.request_for(&self.model_id, prompt);
        let result = self.completer.complete(&req)?;
        let text = result.text.clone();
        calls.push(result);
        Ok(text)
    }

    /// Rewrites a nested source via the few-shot prompt. Author-scope
    /// annotations pass through without a call.
    pub fn normalize_fewshot(
        &self,
        a: &BeliefAnnotation,
        sentence: &str,
        calls: &mut Vec<CompletionResult>,
    ) -> Result<BeliefAnnotation, GatewayError> {
        if a.scope() == Scope::Author {
            return Ok(a.clone());
        }
        let key = MemoKey {
            mode: NormalizationMode::FewShot,
            source: a.source.clone(),
            sentence: sentence.to_string(),
            gold: Vec::new(),
        };
        let source = match self.memo_get(&key) {
            Some(s) => s,
            None => {
                let prompt = self
                    .templates
                    .norm_fewshot(&a.source.render(), sentence)
                    .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
                let reply = self.call(prompt, calls)?;
                let source = parse_fewshot_reply(&reply).unwrap_or_else(|| a.source.clone());
                self.memo_put(key, source.clone());
                source
            }
        };
        Ok(BeliefAnnotation {
            source,
            ..a.clone()
        })
    }

    /// Replaces a nested source with the first gold source (in serialized
    /// order) the model confirms as the same entity. Sources already in the
    /// gold set, and author-scope sources, are returned without a call.
    pub fn normalize_oracle(
        &self,
        a: &BeliefAnnotation,
        gold_sources: &BTreeSet<SourcePath>,
        sentence: &str,
        calls: &mut Vec<CompletionResult>,
    ) -> Result<BeliefAnnotation, GatewayError> {
        if gold_sources.contains(&a.source) || a.scope() == Scope::Author {
            return Ok(a.clone());
        }
        let mut candidates: Vec<&SourcePath> = gold_sources
            .iter()
            .filter(|g| g.scope() == Scope::Nested)
            .collect();
        candidates.sort_by_key(|g| g.render());
        let key = MemoKey {
            mode: NormalizationMode::Oracle,
            source: a.source.clone(),
            sentence: sentence.to_string(),
            gold: candidates.iter().map(|g| (*g).clone()).collect(),
        };
        if let Some(source) = self.memo_get(&key) {
            return Ok(BeliefAnnotation {
                source,
                ..a.clone()
            });
        }
        let predicted = a.source.render();
        let mut source = a.source.clone();
        for gold in candidates {
            let prompt = self
                .templates
                .norm_oracle(sentence, &predicted, &gold.render())
                .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
            if is_affirmative(&self.call(prompt, calls)?) {
                source = gold.clone();
                break;
            }
        }
        self.memo_put(key, source.clone());
        Ok(BeliefAnnotation {
            source,
            ..a.clone()
        })
    }

    pub fn apply(
        &self,
        mode: NormalizationMode,
        predictions: &AnnotationSet,
        s: &SentenceRecord,
    ) -> Result<Normalized, GatewayError> {
        let mut out = Normalized::default();
        if mode == NormalizationMode::None {
            out.annotations = predictions.clone();
            return Ok(out);
        }
        let gold_sources = s.gold_sources();
        if mode == NormalizationMode::Oracle && gold_sources.is_empty() {
            out.annotations = predictions.clone();
            return Ok(out);
        }
        for a in predictions {
            let normalized = match mode {
                NormalizationMode::FewShot => self.normalize_fewshot(a, &s.text, &mut out.calls)?,
                NormalizationMode::Oracle => {
                    self.normalize_oracle(a, &gold_sources, &s.text, &mut out.calls)?
                }
                NormalizationMode::None => unreachable!(),
            };
            if normalized.source != a.source {
                out.rewrites
                    .insert(a.source.clone(), normalized.source.clone());
            }
            out.annotations.insert(normalized);
        }
        Ok(out)
    }
}

/// Re-applies recorded source rewrites without any model calls.
pub fn replay_rewrites(
    predictions: &AnnotationSet,
    rewrites: &BTreeMap<SourcePath, SourcePath>,
) -> AnnotationSet {
    predictions
        .iter()
        .map(|a| match rewrites.get(&a.source) {
            Some(to) => BeliefAnnotation {
                source: to.clone(),
                ..a.clone()
            },
            None => a.clone(),
        })
        .collect()
}

pub fn normalize_fewshot(
    a: &BeliefAnnotation,
    sentence: &str,
    completer: &dyn Completer,
    model_id: &str,
) -> Result<BeliefAnnotation, GatewayError> {
    let templates = TemplateSet::builtin();
    Normalizer::new(completer, &templates, model_id).normalize_fewshot(a, sentence, &mut Vec::new())
}

pub fn normalize_oracle(
    a: &BeliefAnnotation,
    gold_sources: &BTreeSet<SourcePath>,
    sentence: &str,
    completer: &dyn Completer,
    model_id: &str,
) -> Result<BeliefAnnotation, GatewayError> {
    let templates = TemplateSet::builtin();
    Normalizer::new(completer, &templates, model_id).normalize_oracle(
        a,
        gold_sources,
        sentence,
        &mut Vec::new(),
    )
}

pub fn apply_normalization(
    mode: NormalizationMode,
    predictions: &AnnotationSet,
    s: &SentenceRecord,
    completer: &dyn Completer,
    model_id: &str,
) -> Result<AnnotationSet, GatewayError> {
    let templates = TemplateSet::builtin();
    Normalizer::new(completer, &templates, model_id)
        .apply(mode, predictions, s)
        .map(|n| n.annotations)
}
