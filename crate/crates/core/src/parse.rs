//! Recovers the annotation array from free-form chain-of-thought output.
//!
//! The final answer is taken to be the last JSON array of objects in the
//! text, with arrays inside code fences taking priority. Parsing tolerates
//! `//` and `/* */` comments and trailing commas. Every input yields a value;
//! nothing here returns an error.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::model::{
    canonical_event, AnnotationSet, BeliefAnnotation, FactualityLabel, ModelError, SentenceRecord,
    SourcePath,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExtractionStrategy {
    FencedBlock,
    LastArray,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub records: Vec<Value>,
    pub strategy: ExtractionStrategy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RejectReason {
    NotAnObject,
    MissingKey { key: String },
    NotAString { key: String },
    MalformedSourcePath { detail: String },
    UnknownLabel { detail: String },
    MultiTokenEvent,
    EmptyEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub record: Value,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub accepted: AnnotationSet,
    pub rejected: Vec<Rejection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseOutcome {
    pub accepted: AnnotationSet,
    pub rejected: Vec<Rejection>,
    pub extraction_strategy: ExtractionStrategy,
}

impl ParseOutcome {
    pub fn empty() -> Self {
        ParseOutcome {
            accepted: AnnotationSet::new(),
            rejected: Vec::new(),
            extraction_strategy: ExtractionStrategy::None,
        }
    }
}

/// Byte ranges of code-fence bodies. An unterminated fence runs to the end.
fn fence_ranges(text: &str) -> Vec<Range<usize>> {
    let mut ranges = Vec::new();
    let mut open: Option<usize> = None;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        if line.trim_start().starts_with("```") {
            match open.take() {
                Some(start) => ranges.push(start..offset),
                None => open = Some(offset + line.len()),
            }
        }
        offset += line.len();
    }
    if let Some(start) = open {
        ranges.push(start..text.len());
    }
    ranges
}

/// Index of the `]` closing the `[` at `start`, skipping strings and comments.
fn matching_bracket(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut i = start;
    while i < bytes.len() {
        match bytes[i] {
            b'"' => {
                i += 1;
                while i < bytes.len() && bytes[i] != b'"' {
                    if bytes[i] == b'\\' {
                        i += 1;
                    }
                    i += 1;
                }
                if i >= bytes.len() {
                    return None;
                }
            }
            b'/' if bytes.get(i + 1) == Some(&b'/') => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
                continue;
            }
            b'/' if bytes.get(i + 1) == Some(&b'*') => {
                i += 2;
                while i + 1 < bytes.len() && !(bytes[i] == b'*' && bytes[i + 1] == b'/') {
                    i += 1;
                }
                if i + 1 >= bytes.len() {
                    return None;
                }
                i += 1;
            }
            b'[' => depth += 1,
            b']' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
        i += 1;
    }
    None
}

/// Removes comments and trailing commas outside of string literals.
fn relax(src: &str) -> String {
    let bytes = src.as_bytes();
    let mut out: Vec<u8> = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'"' => {
                let start = i;
                i += 1;
                while i < bytes.len() && bytes[i] != b'"' {
                    if bytes[i] == b'\\' {
                        i += 1;
                    }
                    i += 1;
                }
                let end = (i + 1).min(bytes.len());
                out.extend_from_slice(&bytes[start..end]);
                i = end;
                continue;
            }
            b'/' if bytes.get(i + 1) == Some(&b'/') => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
                continue;
            }
            b'/' if bytes.get(i + 1) == Some(&b'*') => {
                i += 2;
                while i + 1 < bytes.len() && !(bytes[i] == b'*' && bytes[i + 1] == b'/') {
                    i += 1;
                }
                i += 2;
                continue;
            }
            b']' | b'}' => {
                // Drop a comma that only whitespace separates from this closer.
                let mut j = out.len();
                while j > 0 && out[j - 1].is_ascii_whitespace() {
                    j -= 1;
                }
                if j > 0 && out[j - 1] == b',' {
                    out.remove(j - 1);
                }
                out.push(bytes[i]);
            }
            b => out.push(b),
        }
        i += 1;
    }
    // Only ASCII bytes were removed, so UTF-8 boundaries are intact.
    String::from_utf8(out).unwrap_or_default()
}

fn parse_object_array(slice: &str) -> Option<Vec<Value>> {
    let value: Value = serde_json::from_str(slice)
        .ok()
        .or_else(|| serde_json::from_str(&relax(slice)).ok())?;
    match value {
        Value::Array(items) if items.iter().all(Value::is_object) => Some(items),
        _ => None,
    }
}

/// Outermost parseable arrays of objects, in text order.
fn candidate_arrays(text: &str) -> Vec<(usize, Vec<Value>)> {
    let bytes = text.as_bytes();
    let mut found = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'[' {
            if let Some(end) = matching_bracket(bytes, i) {
                if let Some(records) = parse_object_array(&text[i..=end]) {
                    found.push((i, records));
                    i = end + 1;
                    continue;
                }
            }
        }
        i += 1;
    }
    found
}

pub fn extract_annotation_array(text: &str) -> Extraction {
    let fences = fence_ranges(text);
    let candidates = candidate_arrays(text);
    let fenced = candidates
        .iter()
        .rev()
        .find(|(pos, _)| fences.iter().any(|r| r.contains(pos)));
    if let Some((_, records)) = fenced {
        return Extraction {
            records: records.clone(),
            strategy: ExtractionStrategy::FencedBlock,
        };
    }
    match candidates.into_iter().next_back() {
        Some((_, records)) => Extraction {
            records,
            strategy: ExtractionStrategy::LastArray,
        },
        None => Extraction {
            records: Vec::new(),
            strategy: ExtractionStrategy::None,
        },
    }
}

fn string_field<'a>(
    obj: &'a serde_json::Map<String, Value>,
    key: &str,
) -> Result<&'a str, RejectReason> {
    match obj.get(key) {
        None => Err(RejectReason::MissingKey { key: key.into() }),
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(RejectReason::NotAString { key: key.into() }),
    }
}

fn validate_record(record: &Value) -> Result<BeliefAnnotation, RejectReason> {
    let obj = record.as_object().ok_or(RejectReason::NotAnObject)?;
    let source = string_field(obj, "source")?;
    let event = string_field(obj, "event")?;
    let label = string_field(obj, "label")?;
    let source = SourcePath::parse(source).map_err(|e| RejectReason::MalformedSourcePath {
        detail: e.to_string(),
    })?;
    let label = FactualityLabel::parse_any(label).map_err(|e| RejectReason::UnknownLabel {
        detail: e.to_string(),
    })?;
    let event = canonical_event(event).map_err(|e| match e {
        ModelError::InvalidEvent {
            reason: "empty", ..
        } => RejectReason::EmptyEvent,
        _ => RejectReason::MultiTokenEvent,
    })?;
    Ok(BeliefAnnotation {
        source,
        event,
        label,
    })
}

/// Checks each record for `source`, `event` and `label`; extra keys are ignored.
pub fn validate_annotations(raw: &[Value], s: &SentenceRecord) -> Validation {
    let mut out = Validation::default();
    for record in raw {
        match validate_record(record) {
            Ok(ann) => {
                if !s.contains_token(&ann.event) {
                    log::debug!(
                        "sentence {}: predicted event {:?} not in text",
                        s.id,
                        ann.event
                    );
                }
                out.accepted.insert(ann);
            }
            Err(reason) => out.rejected.push(Rejection {
                record: record.clone(),
                reason,
            }),
        }
    }
    out
}

pub fn parse_annotations(text: &str, s: &SentenceRecord) -> ParseOutcome {
    let extraction = extract_annotation_array(text);
    let v = validate_annotations(&extraction.records, s);
    ParseOutcome {
        accepted: v.accepted,
        rejected: v.rejected,
        extraction_strategy: extraction.strategy,
    }
}

/// Ordered, de-duplicated single-token events from an event-detection reply.
pub fn extract_event_tokens(text: &str) -> Vec<String> {
    let mut events: Vec<String> = Vec::new();
    for record in extract_annotation_array(text).records {
        let Some(Value::String(raw)) = record.get("event") else {
            continue;
        };
        if let Ok(ev) = canonical_event(raw) {
            if !events.contains(&ev) {
                events.push(ev);
            }
        }
    }
    events
}

/// Renders annotations in the prompt's output format (surface labels).
pub fn annotations_to_json(set: &AnnotationSet) -> Value {
    Value::Array(
        set.iter()
            .map(|a| {
                json!({
                    "source": a.source.render(),
                    "event": a.event,
                    "label": a.label.surface(),
                })
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sentence() -> SentenceRecord {
        SentenceRecord::new("s1", "Trurit Inc. said it is phasing out legacy routers.")
    }

    #[test]
    fn fenced_array_after_prose() {
        let text = "Let me walk through the events.\n\"said\" is reported by the author.\n\
                    ```json\n[\n  {\"source\": \"AUTHOR\", \"event\": \"said\", \"label\": \"true\"},\n  \
                    {\"source\": \"AUTHOR_Inc.\", \"event\": \"phasing\", \"label\": \"true\"}\n]\n```\n";
        let ex = extract_annotation_array(text);
        assert_eq!(ex.strategy, ExtractionStrategy::FencedBlock);
        assert_eq!(ex.records.len(), 2);
    }

    #[test]
    fn later_valid_array_beats_malformed_decoy() {
        let text = "Draft: [{\"source\": \"AUTHOR\", \"event\": \"said\" \"label\": }]\n\
                    Final answer: [{\"source\": \"AUTHOR\", \"event\": \"phasing\", \"label\": \"unknown\"}]";
        let ex = extract_annotation_array(text);
        assert_eq!(ex.strategy, ExtractionStrategy::LastArray);
        assert_eq!(ex.records.len(), 1);
        assert_eq!(ex.records[0]["event"], "phasing");
    }

    #[test]
    fn last_of_several_valid_arrays() {
        let text = "[{\"event\": \"a\"}] then [{\"event\": \"b\"}]";
        let ex = extract_annotation_array(text);
        assert_eq!(ex.records[0]["event"], "b");
    }

    #[test]
    fn prose_only() {
        let ex = extract_annotation_array("No events [citation needed] here.");
        assert_eq!(ex.strategy, ExtractionStrategy::None);
        assert!(ex.records.is_empty());
    }

    #[test]
    fn tolerates_comments_and_trailing_commas() {
        let text = "```\n[\n  {\n    \"source\": \"AUTHOR\",  // root\n    \"event\": \"said\",    /* verb */\n    \
                    \"label\": \"true\", // true/false\n  },\n]\n```";
        let ex = extract_annotation_array(text);
        assert_eq!(ex.strategy, ExtractionStrategy::FencedBlock);
        assert_eq!(ex.records[0]["label"], "true");
    }

    #[test]
    fn comment_markers_inside_strings_are_data() {
        let text = r#"[{"source": "AUTHOR", "event": "said", "label": "true", "note": "see http://x // y ]"},]"#;
        let ex = extract_annotation_array(text);
        assert_eq!(ex.records.len(), 1);
        assert_eq!(ex.records[0]["note"], "see http://x // y ]");
    }

    #[test]
    fn nested_arrays_do_not_shadow_outer_array() {
        let text = r#"[{"event": "a", "alts": [{"x": 1}]}]"#;
        let ex = extract_annotation_array(text);
        assert_eq!(ex.records.len(), 1);
        assert_eq!(ex.records[0]["event"], "a");
    }

    #[test]
    fn validation_accepts_and_rejects() {
        let raw = vec![
            json!({"source": "AUTHOR", "event": "said", "label": "true"}),
            json!({"source": "AUTHOR", "event": "phasing out", "label": "unknown"}),
            json!({"source": "Trurit", "event": "phasing", "label": "true"}),
            json!({"source": "AUTHOR", "event": "said", "label": "maybe"}),
            json!({"source": "AUTHOR", "event": "said"}),
            json!({"source": "AUTHOR", "event": 3, "label": "true"}),
            json!("not an object"),
            json!({"source": "AUTHOR", "event": "said", "label": "CT+", "why": "extra keys ignored"}),
        ];
        let v = validate_annotations(&raw, &sentence());
        assert_eq!(v.accepted.len(), 1);
        let only = v.accepted.iter().next().unwrap();
        assert_eq!(only.label, FactualityLabel::CtPlus);
        let reasons: Vec<_> = v.rejected.iter().map(|r| r.reason.clone()).collect();
        assert_eq!(reasons[0], RejectReason::MultiTokenEvent);
        assert!(matches!(
            reasons[1],
            RejectReason::MalformedSourcePath { .. }
        ));
        assert!(matches!(reasons[2], RejectReason::UnknownLabel { .. }));
        assert_eq!(
            reasons[3],
            RejectReason::MissingKey {
                key: "label".into()
            }
        );
        assert_eq!(
            reasons[4],
            RejectReason::NotAString {
                key: "event".into()
            }
        );
        assert_eq!(reasons[5], RejectReason::NotAnObject);
    }

    #[test]
    fn event_tokens() {
        let text = "```\n[\n  {\"event\": \"trading\"},\n  {\"event\": \"fell\"},\n]\n```";
        assert_eq!(extract_event_tokens(text), ["trading", "fell"]);
        assert_eq!(
            extract_event_tokens(
                r#"[{"event":"fell"},{"event":"fell"},{"event":"two words"},{"x":1}]"#
            ),
            ["fell"]
        );
        assert!(extract_event_tokens("just prose").is_empty());
    }

    #[test]
    fn reserialized_output_is_a_fixpoint() {
        let text = r#"[{"source":"author_Inc.","event":" said ","label":"True"},{"source":"AUTHOR","event":"said","label":"CT+"}]"#;
        let first = parse_annotations(text, &sentence());
        let again = parse_annotations(
            &annotations_to_json(&first.accepted).to_string(),
            &sentence(),
        );
        assert_eq!(first.accepted, again.accepted);
        assert!(again.rejected.is_empty());
    }

    proptest! {
        #[test]
        fn never_panics_on_arbitrary_bytes(bytes in proptest::collection::vec(any::<u8>(), 0..512)) {
            let text = String::from_utf8_lossy(&bytes);
            let ex = extract_annotation_array(&text);
            prop_assert!(ex.strategy == ExtractionStrategy::None || ex.records.iter().all(Value::is_object));
            let _ = parse_annotations(&text, &sentence());
            let _ = extract_event_tokens(&text);
        }

        #[test]
        fn never_panics_on_json_like_text(text in "[\\[\\]{}\",:/*a-z \n`]{0,200}") {
            let ex = extract_annotation_array(&text);
            prop_assert!(ex.strategy == ExtractionStrategy::None || ex.records.iter().all(Value::is_object));
        }
    }
}
