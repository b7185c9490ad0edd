//! Belief-annotation data model: factuality labels, attribution paths
//! rooted at the author, and (source, event, label) triples.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Root segment every attribution path starts with.
pub const AUTHOR: &str = "AUTHOR";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("malformed source path {raw:?}: {reason}")]
    MalformedSourcePath { raw: String, reason: &'static str },
    #[error("unknown factuality label {0:?}")]
    UnknownLabel(String),
    #[error("invalid event token {raw:?}: {reason}")]
    InvalidEvent { raw: String, reason: &'static str },
}

/// FactBank-style factuality value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FactualityLabel {
    CtPlus,
    CtMinus,
    PrPlus,
    PrMinus,
    Uu,
}

impl FactualityLabel {
    pub const ALL: [FactualityLabel; 5] = [
        FactualityLabel::CtPlus,
        FactualityLabel::CtMinus,
        FactualityLabel::PrPlus,
        FactualityLabel::PrMinus,
        FactualityLabel::Uu,
    ];

    /// Parses the prompt-facing surface form (`true`, `false`, `ptrue`,
    /// `pfalse`, `unknown`), case-insensitively.
    pub fn from_surface(s: &str) -> Result<Self, ModelError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "true" => Ok(Self::CtPlus),
            "false" => Ok(Self::CtMinus),
            "ptrue" => Ok(Self::PrPlus),
            "pfalse" => Ok(Self::PrMinus),
            "unknown" => Ok(Self::Uu),
            _ => Err(ModelError::UnknownLabel(s.to_string())),
        }
    }

    pub fn surface(self) -> &'static str {
        match self {
            Self::CtPlus => "true",
            Self::CtMinus => "false",
            Self::PrPlus => "ptrue",
            Self::PrMinus => "pfalse",
            Self::Uu => "unknown",
        }
    }

    /// Corpus notation: `CT+`, `CT-`, `PR+`, `PR-`, `UU`.
    pub fn canonical(self) -> &'static str {
        match self {
            Self::CtPlus => "CT+",
            Self::CtMinus => "CT-",
            Self::PrPlus => "PR+",
            Self::PrMinus => "PR-",
            Self::Uu => "UU",
        }
    }

    fn from_canonical(s: &str) -> Option<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('\u{2212}', "-");
        match norm.as_str() {
            "CT+" | "CT_PLUS" => Some(Self::CtPlus),
            "CT-" | "CT_MINUS" => Some(Self::CtMinus),
            "PR+" | "PR_PLUS" => Some(Self::PrPlus),
            "PR-" | "PR_MINUS" => Some(Self::PrMinus),
            "UU" => Some(Self::Uu),
            _ => None,
        }
    }

    /// Accepts either the surface or the canonical notation.
    pub fn parse_any(s: &str) -> Result<Self, ModelError> {
        Self::from_surface(s).or_else(|e| Self::from_canonical(s).ok_or(e))
    }
}

impl fmt::Display for FactualityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.canonical())
    }
}

impl FromStr for FactualityLabel {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse_any(s)
    }
}

impl Serialize for FactualityLabel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.canonical())
    }
}

impl<'de> Deserialize<'de> for FactualityLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Self::parse_any(&raw).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Author,
    Nested,
}

/// Attribution chain rooted at the author, e.g. `AUTHOR_officials_spokesperson`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SourcePath(Vec<String>);

impl SourcePath {
    pub fn author() -> Self {
        SourcePath(vec![AUTHOR.to_string()])
    }

    /// Splits on `_`, requires an `AUTHOR` root (any case, stored upper-cased)
    /// and rejects empty segments. Non-root segments are kept verbatim.
    pub fn parse(raw: &str) -> Result<Self, ModelError> {
        let trimmed = raw.trim();
        let malformed = |reason| ModelError::MalformedSourcePath {
            raw: raw.to_string(),
            reason,
        };
        if trimmed.is_empty() {
            return Err(malformed("empty"));
        }
        let mut segments = Vec::new();
        for (i, seg) in trimmed.split('_').enumerate() {
            if seg.trim().is_empty() {
                return Err(malformed("empty segment"));
            }
            if i == 0 {
                if !seg.eq_ignore_ascii_case(AUTHOR) {
                    return Err(malformed("root is not AUTHOR"));
                }
                segments.push(AUTHOR.to_string());
            } else {
                segments.push(seg.to_string());
            }
        }
        Ok(SourcePath(segments))
    }

    /// Builds a path from explicit segments below the root.
    pub fn nested<I, S>(segments: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut raw = String::from(AUTHOR);
        for s in segments {
            raw.push('_');
            raw.push_str(s.as_ref());
        }
        Self::parse(&raw)
    }

    pub fn segments(&self) -> &[String] {
        &self.0
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn scope(&self) -> Scope {
        if self.0.len() == 1 {
            Scope::Author
        } else {
            Scope::Nested
        }
    }

    /// Innermost source; the root itself for author-scope paths.
    pub fn leaf(&self) -> &str {
        self.0.last().map(String::as_str).unwrap_or(AUTHOR)
    }

    /// Segments joined with `_`.
    pub fn render(&self) -> String {
        self.0.join("_")
    }
}

impl fmt::Display for SourcePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl FromStr for SourcePath {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl Serialize for SourcePath {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.render())
    }
}

impl<'de> Deserialize<'de> for SourcePath {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Self::parse(&raw).map_err(serde::de::Error::custom)
    }
}

pub fn parse_source_path(raw: &str) -> Result<SourcePath, ModelError> {
    SourcePath::parse(raw)
}

pub fn label_from_surface(s: &str) -> Result<FactualityLabel, ModelError> {
    FactualityLabel::from_surface(s)
}

pub fn label_to_surface(label: FactualityLabel) -> &'static str {
    label.surface()
}

pub fn scope_of(path: &SourcePath) -> Scope {
    path.scope()
}

/// Strips surrounding whitespace and rejects empty or multi-token events.
pub fn canonical_event(raw: &str) -> Result<String, ModelError> {
    let ev = raw.trim();
    if ev.is_empty() {
        return Err(ModelError::InvalidEvent {
            raw: raw.to_string(),
            reason: "empty",
        });
    }
    if ev.chars().any(char::is_whitespace) {
        return Err(ModelError::InvalidEvent {
            raw: raw.to_string(),
            reason: "multi-token",
        });
    }
    Ok(ev.to_string())
}

/// One (source, event, label) triple. Ordering is source, event, label.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BeliefAnnotation {
    pub source: SourcePath,
    pub event: String,
    pub label: FactualityLabel,
}

impl BeliefAnnotation {
    pub fn new(
        source: SourcePath,
        event: &str,
        label: FactualityLabel,
    ) -> Result<Self, ModelError> {
        Ok(BeliefAnnotation {
            source,
            event: canonical_event(event)?,
            label,
        })
    }

    /// Convenience constructor from raw strings; the label may be in either notation.
    pub fn parse(source: &str, event: &str, label: &str) -> Result<Self, ModelError> {
        Self::new(
            SourcePath::parse(source)?,
            event,
            FactualityLabel::parse_any(label)?,
        )
    }

    pub fn scope(&self) -> Scope {
        self.source.scope()
    }
}

impl fmt::Display for BeliefAnnotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.source, self.event, self.label)
    }
}

pub type AnnotationSet = BTreeSet<BeliefAnnotation>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PosHint {
    Noun,
    Verb,
    Other,
}

/// Belief and polarity values combined into a single `belief+polarity` tag.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ComposedTag {
    belief: String,
    polarity: String,
}

impl ComposedTag {
    /// Both parts must be non-empty and free of `+`.
    pub fn new(belief: &str, polarity: &str) -> Result<Self, String> {
        for (name, part) in [("belief", belief), ("polarity", polarity)] {
            if part.is_empty() {
                return Err(format!("{name} is empty"));
            }
            if part.contains('+') {
                return Err(format!("{name} {part:?} contains '+'"));
            }
        }
        Ok(ComposedTag {
            belief: belief.to_string(),
            polarity: polarity.to_string(),
        })
    }

    /// Splits on the first `+`.
    pub fn split(composed: &str) -> Result<Self, String> {
        let (belief, polarity) = composed
            .split_once('+')
            .ok_or_else(|| format!("composed tag {composed:?} has no '+'"))?;
        Self::new(belief, polarity)
    }

    pub fn belief(&self) -> &str {
        &self.belief
    }

    pub fn polarity(&self) -> &str {
        &self.polarity
    }

    pub fn composed(&self) -> String {
        format!("{}+{}", self.belief, self.polarity)
    }
}

impl fmt::Display for ComposedTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}+{}", self.belief, self.polarity)
    }
}

impl Serialize for ComposedTag {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.composed())
    }
}

impl<'de> Deserialize<'de> for ComposedTag {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Self::split(&raw).map_err(serde::de::Error::custom)
    }
}

/// Author-scope event paired with a composed belief+polarity tag.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ComposedAnnotation {
    pub event: String,
    pub tag: ComposedTag,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<String>>,
    #[serde(default)]
    pub gold: AnnotationSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_events: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos_hints: Option<BTreeMap<String, PosHint>>,
    /// Belief+polarity gold for corpora annotated that way; empty otherwise.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub composed_gold: BTreeSet<ComposedAnnotation>,
}

impl SentenceRecord {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        SentenceRecord {
            id: id.into(),
            text: text.into(),
            ..Default::default()
        }
    }

    pub fn gold_sources(&self) -> BTreeSet<SourcePath> {
        self.gold.iter().map(|a| a.source.clone()).collect()
    }

    /// Whether `event` occurs as a whole token: in `tokens` when present,
    /// otherwise as a substring bounded by non-alphanumeric characters.
    pub fn contains_token(&self, event: &str) -> bool {
        if let Some(tokens) = &self.tokens {
            return tokens.iter().any(|t| t == event);
        }
        contains_on_boundary(&self.text, event)
    }

    pub fn pos_of(&self, event: &str) -> Option<PosHint> {
        self.pos_hints.as_ref()?.get(event).copied()
    }
}

fn contains_on_boundary(text: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return false;
    }
    text.match_indices(needle).any(|(start, _)| {
        let end = start + needle.len();
        let before_ok = text[..start]
            .chars()
            .next_back()
            .is_none_or(|c| !c.is_alphanumeric());
        let after_ok = text[end..]
            .chars()
            .next()
            .is_none_or(|c| !c.is_alphanumeric());
        before_ok && after_ok
    })
}
