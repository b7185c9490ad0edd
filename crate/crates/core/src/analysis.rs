//! Error taxonomy over a scored run: source, label, false-positive and
//! false-negative errors, each with a subtype.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{AnnotationSet, BeliefAnnotation, PosHint, SentenceRecord};
use crate::score::{csv_field, text_table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ErrorCategory {
    Source,
    #[serde(rename = "FN")]
    FalseNegative,
    Label,
    #[serde(rename = "FP")]
    FalsePositive,
}

impl ErrorCategory {
    /// Presentation order of the summary table.
    pub const ALL: [ErrorCategory; 4] = [
        ErrorCategory::Source,
        ErrorCategory::FalseNegative,
        ErrorCategory::Label,
        ErrorCategory::FalsePositive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ErrorCategory::Source => "Source",
            ErrorCategory::FalseNegative => "FN",
            ErrorCategory::Label => "Label",
            ErrorCategory::FalsePositive => "FP",
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub sentence_id: String,
    pub category: ErrorCategory,
    pub subtype: String,
    pub gold: Option<BeliefAnnotation>,
    pub pred: Option<BeliefAnnotation>,
}

fn source_subtype(gold: &BeliefAnnotation, pred: &BeliefAnnotation) -> &'static str {
    if gold.source.depth() == 1 {
        "gold=AUTHOR"
    } else if gold.source.leaf().eq_ignore_ascii_case("it") {
        "gold=it"
    } else if pred.source.depth() == 1 {
        "pred=AUTHOR"
    } else {
        "gold=nested"
    }
}

fn pos_subtype(s: &SentenceRecord, event: &str) -> &'static str {
    match s.pos_of(event) {
        Some(PosHint::Noun) => "Noun",
        Some(PosHint::Verb) => "Verb",
        Some(PosHint::Other) => "Other",
        None => "Unknown",
    }
}

/// Pairs each unmatched prediction with at most one unmatched gold triple.
/// Precedence: source mismatch, then label mismatch; whatever remains is a
/// false positive or false negative.
pub fn align_and_categorize(
    gold: &AnnotationSet,
    pred: &AnnotationSet,
    s: &SentenceRecord,
) -> Vec<ErrorRecord> {
    let mut gold_left: Vec<&BeliefAnnotation> = gold.difference(pred).collect();
    let mut pred_left: Vec<&BeliefAnnotation> = pred.difference(gold).collect();
    // Smallest gold source first, by its rendered form.
    gold_left.sort_by_key(|a| (a.source.render(), a.event.clone(), a.label));
    pred_left.sort_by_key(|a| (a.source.render(), a.event.clone(), a.label));

    let mut out = Vec::new();
    let record =
        |category, subtype: String, g: Option<&BeliefAnnotation>, p: Option<&BeliefAnnotation>| {
            ErrorRecord {
                sentence_id: s.id.clone(),
                category,
                subtype,
                gold: g.cloned(),
                pred: p.cloned(),
            }
        };

    let pair_off = |pred_left: &mut Vec<&BeliefAnnotation>,
                    gold_left: &mut Vec<&BeliefAnnotation>,
                    same: &dyn Fn(&BeliefAnnotation, &BeliefAnnotation) -> bool,
                    category: ErrorCategory,
                    out: &mut Vec<ErrorRecord>| {
        let mut unpaired = Vec::new();
        for p in pred_left.drain(..) {
            match gold_left.iter().position(|g| same(g, p)) {
                Some(i) => {
                    let g = gold_left.remove(i);
                    let subtype = match category {
                        ErrorCategory::Source => source_subtype(g, p).to_string(),
                        _ => format!("Pred:{}\u{2192}Gold:{}", p.label, g.label),
                    };
                    out.push(record(category, subtype, Some(g), Some(p)));
                }
                None => unpaired.push(p),
            }
        }
        *pred_left = unpaired;
    };

    pair_off(
        &mut pred_left,
        &mut gold_left,
        &|g, p| g.event == p.event && g.label == p.label && g.source != p.source,
        ErrorCategory::Source,
        &mut out,
    );
    pair_off(
        &mut pred_left,
        &mut gold_left,
        &|g, p| g.event == p.event && g.source == p.source && g.label != p.label,
        ErrorCategory::Label,
        &mut out,
    );
    for p in pred_left {
        out.push(record(
            ErrorCategory::FalsePositive,
            pos_subtype(s, &p.event).to_string(),
            None,
            Some(p),
        ));
    }
    for g in gold_left {
        out.push(record(
            ErrorCategory::FalseNegative,
            pos_subtype(s, &g.event).to_string(),
            Some(g),
            None,
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: ErrorCategory,
    pub count: usize,
    /// Most frequent subtypes, ties broken by name.
    pub subtypes: Vec<(String, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorTable {
    pub rows: Vec<CategoryRow>,
}

impl ErrorTable {
    pub fn count(&self, category: ErrorCategory) -> usize {
        self.rows
            .iter()
            .find(|r| r.category == category)
            .map_or(0, |r| r.count)
    }

    pub fn subtype_count(&self, category: ErrorCategory, subtype: &str) -> usize {
        self.rows
            .iter()
            .find(|r| r.category == category)
            .and_then(|r| r.subtypes.iter().find(|(s, _)| s == subtype))
            .map_or(0, |(_, n)| *n)
    }

    pub fn to_text(&self) -> String {
        let mut body = Vec::new();
        for row in &self.rows {
            body.push(vec![row.category.name().to_string(), row.count.to_string()]);
            for (subtype, n) in &row.subtypes {
                body.push(vec![format!("  {subtype}"), n.to_string()]);
            }
        }
        text_table(&["Error", "Count"], &body)
    }
}

pub const DEFAULT_TOP_K: usize = 5;

pub fn tabulate(records: &[ErrorRecord], top_k: usize) -> ErrorTable {
    let mut by_cat: BTreeMap<ErrorCategory, BTreeMap<&str, usize>> = BTreeMap::new();
    for r in records {
        *by_cat
            .entry(r.category)
            .or_default()
            .entry(r.subtype.as_str())
            .or_default() += 1;
    }
    let rows = ErrorCategory::ALL
        .iter()
        .map(|&category| {
            let counts = by_cat.remove(&category).unwrap_or_default();
            let count = counts.values().sum();
            let mut subtypes: Vec<(String, usize)> = counts
                .into_iter()
                .map(|(s, n)| (s.to_string(), n))
                .collect();
            subtypes.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            subtypes.truncate(top_k);
            CategoryRow {
                category,
                count,
                subtypes,
            }
        })
        .collect();
    ErrorTable { rows }
}

/// Categorizes every sentence of a run, in the order given.
pub fn analyze_run<'a, I>(
    sentences: I,
    predictions: &BTreeMap<String, AnnotationSet>,
) -> Vec<ErrorRecord>
where
    I: IntoIterator<Item = &'a SentenceRecord>,
{
    let empty = AnnotationSet::new();
    sentences
        .into_iter()
        .flat_map(|s| {
            let pred = predictions.get(&s.id).unwrap_or(&empty);
            align_and_categorize(&s.gold, pred, s)
        })
        .collect()
}

fn triple(a: &Option<BeliefAnnotation>) -> String {
    a.as_ref()
        .map(|a| format!("({}, {}, {})", a.source, a.event, a.label))
        .unwrap_or_default()
}

pub fn errors_csv(records: &[ErrorRecord]) -> String {
    let mut out = String::from("sentence_id,category,subtype,gold,pred\n");
    for r in records {
        let fields = [
            csv_field(&r.sentence_id),
            r.category.name().to_string(),
            csv_field(&r.subtype),
            csv_field(&triple(&r.gold)),
            csv_field(&triple(&r.pred)),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Multiset of (category, subtype) pairs; order-free view of a record list.
pub fn category_multiset(records: &[ErrorRecord]) -> BTreeMap<(ErrorCategory, String), usize> {
    let mut m = BTreeMap::new();
    for r in records {
        *m.entry((r.category, r.subtype.clone())).or_insert(0) += 1;
    }
    m
}

/// Annotations that an error record covers, per side.
pub fn covered(
    records: &[ErrorRecord],
) -> (BTreeSet<&BeliefAnnotation>, BTreeSet<&BeliefAnnotation>) {
    let gold = records.iter().filter_map(|r| r.gold.as_ref()).collect();
    let pred = records.iter().filter_map(|r| r.pred.as_ref()).collect();
    (gold, pred)
}
