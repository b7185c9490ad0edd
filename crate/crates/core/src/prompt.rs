//! Prompt rendering for the annotation, event-detection and source
//! normalization prompt families.
//!
//! Templates are plain UTF-8 files with `{{name}}` slots. Substituted values
//! are inserted verbatim and never re-scanned, so braces inside a sentence
//! stay literal.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::SentenceRecord;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template {0} is missing")]
    TemplateMissing(String),
    #[error("template {family}: slot {{{{{slot}}}}} has no value")]
    UnfilledSlot { family: PromptFamily, slot: String },
    #[error("hybrid prompt needs at least one event")]
    EmptyEventList,
    #[error("{0} must not be empty")]
    EmptyInput(&'static str),
    #[error("reading template {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PromptFamily {
    Unified,
    Hybrid,
    EventZeroShot,
    EventFewShot,
    NormFewShot,
    NormOracle,
}

impl PromptFamily {
    pub const ALL: [PromptFamily; 6] = [
        PromptFamily::Unified,
        PromptFamily::Hybrid,
        PromptFamily::EventZeroShot,
        PromptFamily::EventFewShot,
        PromptFamily::NormFewShot,
        PromptFamily::NormOracle,
    ];

    /// Template file stem under the template directory.
    pub fn file_stem(self) -> &'static str {
        match self {
            PromptFamily::Unified => "unified",
            PromptFamily::Hybrid => "hybrid",
            PromptFamily::EventZeroShot => "event_zero",
            PromptFamily::EventFewShot => "event_few",
            PromptFamily::NormFewShot => "norm_few",
            PromptFamily::NormOracle => "norm_oracle",
        }
    }

    fn builtin(self) -> &'static str {
        match self {
            PromptFamily::Unified => include_str!("../templates/unified.txt"),
            PromptFamily::Hybrid => include_str!("../templates/hybrid.txt"),
            PromptFamily::EventZeroShot => include_str!("../templates/event_zero.txt"),
            PromptFamily::EventFewShot => include_str!("../templates/event_few.txt"),
            PromptFamily::NormFewShot => include_str!("../templates/norm_few.txt"),
            PromptFamily::NormOracle => include_str!("../templates/norm_oracle.txt"),
        }
    }
}

impl fmt::Display for PromptFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_stem())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventPromptMode {
    ZeroShot,
    FewShot,
}

/// A rendered prompt ready for dispatch. `template_version` travels with the
/// bundle into the run manifest but is never part of the dispatched text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    pub user: String,
    pub family: PromptFamily,
    pub template_version: String,
}

#[derive(Debug, Clone)]
struct Template {
    text: String,
    version: String,
}

impl Template {
    fn new(family: PromptFamily, text: String) -> Self {
        let digest = Sha256::digest(text.as_bytes());
        let version = format!("{}-{}", family.file_stem(), &hex::encode(digest)[..12]);
        Template { text, version }
    }
}

/// The six prompt templates plus optional extra few-shot exemplar blocks.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<PromptFamily, Template>,
    extra_norm_examples: String,
    extra_event_examples: String,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateSet {
    /// Templates compiled into the crate.
    pub fn builtin() -> Self {
        let templates = PromptFamily::ALL
            .iter()
            .map(|&f| (f, Template::new(f, f.builtin().to_string())))
            .collect();
        TemplateSet {
            templates,
            extra_norm_examples: String::new(),
            extra_event_examples: String::new(),
        }
    }

    /// Loads `<dir>/<stem>.txt` for every family. All six files must exist.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut templates = BTreeMap::new();
        for family in PromptFamily::ALL {
            let path = dir.join(format!("{}.txt", family.file_stem()));
            if !path.is_file() {
                return Err(PromptError::TemplateMissing(path.display().to_string()));
            }
            let text = fs::read_to_string(&path).map_err(|source| PromptError::Io {
                path: path.display().to_string(),
                source,
            })?;
            templates.insert(family, Template::new(family, text));
        }
        Ok(TemplateSet {
            templates,
            extra_norm_examples: String::new(),
            extra_event_examples: String::new(),
        })
    }

    /// Fills the exemplar slot of the few-shot normalization template.
    pub fn with_extra_norm_examples(mut self, block: impl Into<String>) -> Self {
        self.extra_norm_examples = block.into();
        self
    }

    /// Fills the exemplar slot of the few-shot event detection template.
    pub fn with_extra_event_examples(mut self, block: impl Into<String>) -> Self {
        self.extra_event_examples = block.into();
        self
    }

    pub fn version(&self, family: PromptFamily) -> Option<&str> {
        self.templates.get(&family).map(|t| t.version.as_str())
    }

    pub fn versions(&self) -> BTreeMap<PromptFamily, String> {
        self.templates
            .iter()
            .map(|(f, t)| (*f, t.version.clone()))
            .collect()
    }

    fn render(
        &self,
        family: PromptFamily,
        slots: &[(&str, &str)],
    ) -> Result<PromptBundle, PromptError> {
        let template = self
            .templates
            .get(&family)
            .ok_or_else(|| PromptError::TemplateMissing(family.file_stem().to_string()))?;
        let user = render_slots(&template.text, slots)
            .map_err(|slot| PromptError::UnfilledSlot { family, slot })?;
        Ok(PromptBundle {
            system: None,
            user,
            family,
            template_version: template.version.clone(),
        })
    }

    pub fn unified(&self, s: &SentenceRecord) -> Result<PromptBundle, PromptError> {
        if s.text.trim().is_empty() {
            return Err(PromptError::EmptyInput("sentence text"));
        }
        self.render(PromptFamily::Unified, &[("sentence", &s.text)])
    }

    pub fn hybrid(
        &self,
        s: &SentenceRecord,
        events: &[String],
    ) -> Result<PromptBundle, PromptError> {
        if s.text.trim().is_empty() {
            return Err(PromptError::EmptyInput("sentence text"));
        }
        if events.is_empty() {
            return Err(PromptError::EmptyEventList);
        }
        for ev in events {
            if !s.contains_token(ev) {
                log::warn!("sentence {}: event {ev:?} does not occur in the text", s.id);
            }
        }
        let list = serde_json::to_string(events).expect("string list serializes");
        self.render(
            PromptFamily::Hybrid,
            &[("sentence", &s.text), ("events", &list)],
        )
    }

    pub fn event_detection(
        &self,
        s: &SentenceRecord,
        mode: EventPromptMode,
    ) -> Result<PromptBundle, PromptError> {
        match mode {
            EventPromptMode::ZeroShot => {
                self.render(PromptFamily::EventZeroShot, &[("sentence", &s.text)])
            }
            EventPromptMode::FewShot => self.render(
                PromptFamily::EventFewShot,
                &[
                    ("sentence", &s.text),
                    ("extra_examples", &self.extra_event_examples),
                ],
            ),
        }
    }

    pub fn norm_fewshot(
        &self,
        predicted_source: &str,
        sentence: &str,
    ) -> Result<PromptBundle, PromptError> {
        if predicted_source.trim().is_empty() {
            return Err(PromptError::EmptyInput("predicted source"));
        }
        self.render(
            PromptFamily::NormFewShot,
            &[
                ("sentence", sentence),
                ("predicted", predicted_source),
                ("extra_examples", &self.extra_norm_examples),
            ],
        )
    }

    pub fn norm_oracle(
        &self,
        sentence: &str,
        predicted: &str,
        gold: &str,
    ) -> Result<PromptBundle, PromptError> {
        if predicted.trim().is_empty() {
            return Err(PromptError::EmptyInput("predicted source"));
        }
        if gold.trim().is_empty() {
            return Err(PromptError::EmptyInput("gold source"));
        }
        self.render(
            PromptFamily::NormOracle,
            &[
                ("sentence", sentence),
                ("predicted", predicted),
                ("gold", gold),
            ],
        )
    }
}

/// Single left-to-right pass over the template. Returns the name of the
/// first slot without a value.
fn render_slots(template: &str, slots: &[(&str, &str)]) -> Result<String, String> {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        let Some(close) = rest[open + 2..].find("}}") else {
            break;
        };
        let name = &rest[open + 2..open + 2 + close];
        let is_slot =
            !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        out.push_str(&rest[..open]);
        if is_slot {
            let value = slots
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| name.to_string())?;
            out.push_str(value);
        } else {
            out.push_str(&rest[open..open + 4 + close]);
        }
        rest = &rest[open + 4 + close..];
    }
    out.push_str(rest);
    Ok(out)
}

pub fn build_unified_prompt(s: &SentenceRecord) -> Result<PromptBundle, PromptError> {
    TemplateSet::builtin().unified(s)
}

pub fn build_hybrid_prompt(
    s: &SentenceRecord,
    events: &[String],
) -> Result<PromptBundle, PromptError> {
    TemplateSet::builtin().hybrid(s, events)
}

pub fn build_event_detection_prompt(
    s: &SentenceRecord,
    mode: EventPromptMode,
) -> Result<PromptBundle, PromptError> {
    TemplateSet::builtin().event_detection(s, mode)
}

pub fn build_norm_fewshot_prompt(
    predicted_source: &str,
    sentence: &str,
) -> Result<PromptBundle, PromptError> {
    TemplateSet::builtin().norm_fewshot(predicted_source, sentence)
}

pub fn build_norm_oracle_prompt(
    sentence: &str,
    predicted: &str,
    gold: &str,
) -> Result<PromptBundle, PromptError> {
    TemplateSet::builtin().norm_oracle(sentence, predicted, gold)
}
