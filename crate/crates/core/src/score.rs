//! Exact-match micro scoring over (source, event, label) triples, split by
//! attribution scope, and Belief+Polarity scoring for composed tags.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::model::{AnnotationSet, BeliefAnnotation, ComposedAnnotation, Scope};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoreError {
    #[error("prediction for sentence {0:?}, which is not in the corpus")]
    UnknownSentenceId(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EvalScope {
    Full,
    Author,
    Nest,
}

impl EvalScope {
    pub const ALL: [EvalScope; 3] = [EvalScope::Full, EvalScope::Author, EvalScope::Nest];

    pub fn admits(self, a: &BeliefAnnotation) -> bool {
        match self {
            EvalScope::Full => true,
            EvalScope::Author => a.scope() == Scope::Author,
            EvalScope::Nest => a.scope() == Scope::Nested,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EvalScope::Full => "Full",
            EvalScope::Author => "Author",
            EvalScope::Nest => "Nest",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Counts {
    pub fn new(tp: u64, fp: u64, fn_: u64) -> Self {
        Counts { tp, fp, fn_ }
    }

    /// Counts for two sets under exact match.
    pub fn of_sets<T: Ord>(gold: &BTreeSet<T>, pred: &BTreeSet<T>) -> Self {
        let tp = gold.intersection(pred).count() as u64;
        Counts {
            tp,
            fp: pred.len() as u64 - tp,
            fn_: gold.len() as u64 - tp,
        }
    }
}

impl Add for Counts {
    type Output = Counts;

    fn add(self, o: Counts) -> Counts {
        Counts::new(self.tp + o.tp, self.fp + o.fp, self.fn_ + o.fn_)
    }
}

impl AddAssign for Counts {
    fn add_assign(&mut self, o: Counts) {
        *self = *self + o;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Prf {
    /// Precision and recall are 0 on a zero denominator; F1 is 0 when
    /// p + r = 0.
    pub fn from_counts(c: Counts) -> Self {
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            precision,
            recall,
            f1,
        }
    }

    /// As [`Prf::from_counts`], except that two empty sets score a perfect 1.
    pub fn from_counts_empty_perfect(c: Counts) -> Self {
        if c == Counts::default() {
            return Prf {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
                ..Prf::default()
            };
        }
        Self::from_counts(c)
    }

    pub fn counts(&self) -> Counts {
        Counts::new(self.tp, self.fp, self.fn_)
    }
}

pub fn score_scope(gold: &AnnotationSet, pred: &AnnotationSet, scope: EvalScope) -> Counts {
    let keep = |set: &AnnotationSet| -> BTreeSet<BeliefAnnotation> {
        set.iter().filter(|a| scope.admits(a)).cloned().collect()
    };
    if scope == EvalScope::Full {
        return Counts::of_sets(gold, pred);
    }
    Counts::of_sets(&keep(gold), &keep(pred))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScopedCounts {
    pub full: Counts,
    pub author: Counts,
    pub nest: Counts,
}

impl ScopedCounts {
    pub fn of(gold: &AnnotationSet, pred: &AnnotationSet) -> Self {
        ScopedCounts {
            full: score_scope(gold, pred, EvalScope::Full),
            author: score_scope(gold, pred, EvalScope::Author),
            nest: score_scope(gold, pred, EvalScope::Nest),
        }
    }

    pub fn get(&self, scope: EvalScope) -> Counts {
        match scope {
            EvalScope::Full => self.full,
            EvalScope::Author => self.author,
            EvalScope::Nest => self.nest,
        }
    }
}

impl Add for ScopedCounts {
    type Output = ScopedCounts;

    fn add(self, o: ScopedCounts) -> ScopedCounts {
        ScopedCounts {
            full: self.full + o.full,
            author: self.author + o.author,
            nest: self.nest + o.nest,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub full: Prf,
    pub author: Prf,
    pub nest: Prf,
    pub per_sentence: BTreeMap<String, ScopedCounts>,
}

impl ScoreReport {
    /// Micro aggregation: sum the counts, then compute PRF once per scope.
    pub fn from_sentences(per_sentence: BTreeMap<String, ScopedCounts>) -> Self {
        let total = per_sentence
            .values()
            .fold(ScopedCounts::default(), |acc, c| acc + *c);
        ScoreReport {
            full: Prf::from_counts(total.full),
            author: Prf::from_counts(total.author),
            nest: Prf::from_counts(total.nest),
            per_sentence,
        }
    }

    pub fn get(&self, scope: EvalScope) -> &Prf {
        match scope {
            EvalScope::Full => &self.full,
            EvalScope::Author => &self.author,
            EvalScope::Nest => &self.nest,
        }
    }
}

/// Scores predictions against the corpus gold. Sentences without a
/// prediction count as empty predictions.
pub fn score_run(
    corpus: &Corpus,
    predictions: &BTreeMap<String, AnnotationSet>,
) -> Result<ScoreReport, ScoreError> {
    if let Some(id) = predictions.keys().find(|id| corpus.get(id).is_none()) {
        return Err(ScoreError::UnknownSentenceId(id.clone()));
    }
    let empty = AnnotationSet::new();
    let per_sentence = corpus
        .sentences
        .iter()
        .map(|s| {
            let pred = predictions.get(&s.id).unwrap_or(&empty);
            (s.id.clone(), ScopedCounts::of(&s.gold, pred))
        })
        .collect();
    Ok(ScoreReport::from_sentences(per_sentence))
}

pub fn score_modafact(
    gold: &BTreeSet<ComposedAnnotation>,
    pred: &BTreeSet<ComposedAnnotation>,
) -> Counts {
    Counts::of_sets(gold, pred)
}

/// Micro Belief+Polarity PRF over one fold.
pub fn score_modafact_fold(
    corpus: &Corpus,
    predictions: &BTreeMap<String, BTreeSet<ComposedAnnotation>>,
) -> Result<Prf, ScoreError> {
    if let Some(id) = predictions.keys().find(|id| corpus.get(id).is_none()) {
        return Err(ScoreError::UnknownSentenceId(id.clone()));
    }
    let empty = BTreeSet::new();
    let total = corpus.sentences.iter().fold(Counts::default(), |acc, s| {
        acc + score_modafact(&s.composed_gold, predictions.get(&s.id).unwrap_or(&empty))
    });
    Ok(Prf::from_counts(total))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub folds: Vec<Prf>,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_f1: f64,
}

/// Unweighted mean of per-fold scores.
pub fn fold_average(folds: &[Prf]) -> FoldSummary {
    let n = folds.len() as f64;
    let mean = |f: fn(&Prf) -> f64| {
        if folds.is_empty() {
            0.0
        } else {
            folds.iter().map(f).sum::<f64>() / n
        }
    };
    FoldSummary {
        folds: folds.to_vec(),
        mean_precision: mean(|p| p.precision),
        mean_recall: mean(|p| p.recall),
        mean_f1: mean(|p| p.f1),
    }
}

/// A score in tenths of a percentage point, rounded half-up.
pub fn tenths_of_percent(x: f64) -> i64 {
    (x * 1000.0 + 0.5 + 1e-9).floor() as i64
}

/// `0.72` renders as `72.0`.
pub fn format_percent(x: f64) -> String {
    format_tenths(tenths_of_percent(x), false)
}

fn format_tenths(t: i64, signed: bool) -> String {
    let sign = if t < 0 {
        "-"
    } else if signed {
        "+"
    } else {
        ""
    };
    let a = t.abs();
    format!("{sign}{}.{}", a / 10, a % 10)
}

/// Signed difference in tenths of a point between two displayed scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delta(pub i64);

impl Delta {
    /// Both sides are rounded to one decimal first, so deltas agree with
    /// the displayed scores.
    pub fn between(a: f64, b: f64) -> Self {
        Delta(tenths_of_percent(b) - tenths_of_percent(a))
    }

    /// From already-rounded percentages such as `66.1` and `72.0`.
    pub fn between_percent(a: f64, b: f64) -> Self {
        Delta(tenths_of_percent(b / 100.0) - tenths_of_percent(a / 100.0))
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 10.0
    }
}

impl fmt::Display for Delta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_tenths(self.0, true))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub full: Delta,
    pub author: Delta,
    pub nest: Delta,
}

/// `b - a` per scope F1.
pub fn delta_report(a: &ScoreReport, b: &ScoreReport) -> DeltaReport {
    DeltaReport {
        full: Delta::between(a.full.f1, b.full.f1),
        author: Delta::between(a.author.f1, b.author.f1),
        nest: Delta::between(a.nest.f1, b.nest.f1),
    }
}

pub fn score_csv(rows: &[(&str, &ScoreReport)]) -> String {
    let mut out = String::from("run,scope,tp,fp,fn,precision,recall,f1\n");
    for (name, r) in rows {
        for scope in EvalScope::ALL {
            let p = r.get(scope);
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.6},{:.6},{:.6}",
                csv_field(name),
                scope.name(),
                p.tp,
                p.fp,
                p.fn_,
                p.precision,
                p.recall,
                p.f1
            );
        }
    }
    out
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Left-aligned first column, right-aligned remainder.
pub fn text_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate().take(cols) {
            widths[i] = widths[i].max(cell.chars().count());
        }
    }
    let line = |cells: &mut dyn Iterator<Item = &str>| {
        let mut s = String::new();
        for (i, cell) in cells.enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            let pad = widths[i].saturating_sub(cell.chars().count());
            if i == 0 {
                s.push_str(cell);
                s.push_str(&" ".repeat(pad));
            } else {
                s.push_str(&" ".repeat(pad));
                s.push_str(cell);
            }
        }
        s.trim_end().to_string()
    };
    let mut out = line(&mut header.iter().copied());
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (cols - 1)));
    out.push('\n');
    for row in rows {
        out.push_str(&line(&mut row.iter().map(String::as_str)));
        out.push('\n');
    }
    out
}

pub fn score_table(rows: &[(&str, &ScoreReport)]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, r)| {
            vec![
                name.to_string(),
                format_percent(r.full.f1),
                format_percent(r.author.f1),
                format_percent(r.nest.f1),
            ]
        })
        .collect();
    text_table(&["Run", "Full", "Author", "Nest"], &body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ComposedTag, SentenceRecord};
    use proptest::prelude::*;

    fn t(src: &str, ev: &str, label: &str) -> BeliefAnnotation {
        BeliefAnnotation::parse(src, ev, label).unwrap()
    }

    fn trurit_gold() -> AnnotationSet {
        [
            t("AUTHOR", "said", "CT+"),
            t("AUTHOR", "phasing", "UU"),
            t("AUTHOR_Inc.", "phasing", "CT+"),
        ]
        .into_iter()
        .collect()
    }

    #[test]
    fn missing_nested_triple() {
        let gold = trurit_gold();
        let pred: AnnotationSet = gold
            .iter()
            .filter(|a| a.source.depth() == 1)
            .cloned()
            .collect();
        assert_eq!(
            score_scope(&gold, &pred, EvalScope::Full),
            Counts::new(2, 0, 1)
        );
        assert_eq!(
            score_scope(&gold, &pred, EvalScope::Nest),
            Counts::new(0, 0, 1)
        );
        assert_eq!(
            score_scope(&gold, &pred, EvalScope::Author),
            Counts::new(2, 0, 0)
        );
    }

    #[test]
    fn label_mismatch_moves_one_tp() {
        let gold = trurit_gold();
        let mut pred = gold.clone();
        pred.remove(&t("AUTHOR", "phasing", "UU"));
        pred.insert(t("AUTHOR", "phasing", "CT+"));
        assert_eq!(
            score_scope(&gold, &pred, EvalScope::Full),
            Counts::new(2, 1, 1)
        );
    }

    #[test]
    fn zero_denominators() {
        let p = Prf::from_counts(Counts::new(0, 0, 3));
        assert_eq!((p.precision, p.recall, p.f1), (0.0, 0.0, 0.0));
        let p = Prf::from_counts(Counts::default());
        assert_eq!(p.f1, 0.0);
        assert_eq!(Prf::from_counts_empty_perfect(Counts::default()).f1, 1.0);
        let p = Prf::from_counts(Counts::new(1, 0, 1));
        assert!((p.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn run_rejects_unknown_ids_and_fills_missing() {
        let mut s = SentenceRecord::new("s1", "Trurit Inc. said it is phasing out legacy routers.");
        s.gold = trurit_gold();
        let corpus = Corpus::new("toy", vec![s]);
        let r = score_run(&corpus, &BTreeMap::new()).unwrap();
        assert_eq!(r.full.counts(), Counts::new(0, 0, 3));
        assert_eq!(r.full.f1, 0.0);
        let mut preds = BTreeMap::new();
        preds.insert("nope".to_string(), AnnotationSet::new());
        assert_eq!(
            score_run(&corpus, &preds),
            Err(ScoreError::UnknownSentenceId("nope".into()))
        );
        preds.clear();
        preds.insert("s1".to_string(), trurit_gold());
        let r = score_run(&corpus, &preds).unwrap();
        assert_eq!((r.full.f1, r.author.f1, r.nest.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn deltas_from_table_values() {
        assert_eq!(Delta::between_percent(66.1, 72.0).to_string(), "+5.9");
        assert_eq!(Delta::between_percent(65.9, 73.2).to_string(), "+7.3");
        assert_eq!(Delta::between_percent(69.5, 72.0).to_string(), "+2.5");
        assert_eq!(Delta::between_percent(72.0, 69.5).to_string(), "-2.5");
        assert_eq!(Delta::between(0.5, 0.5).to_string(), "+0.0");
        let r = ScoreReport::default();
        assert_eq!(delta_report(&r, &r).full, Delta(0));
    }

    #[test]
    fn half_up_rounding() {
        assert_eq!(format_percent(0.6615), "66.2");
        assert_eq!(format_percent(0.66149), "66.1");
        assert_eq!(format_percent(1.0), "100.0");
        assert_eq!(format_percent(0.0), "0.0");
    }

    #[test]
    fn modafact_and_folds() {
        let pair = |e: &str, b: &str, p: &str| ComposedAnnotation {
            event: e.into(),
            tag: ComposedTag::new(b, p).unwrap(),
        };
        let gold: BTreeSet<_> = [pair("vinto", "CERTAIN", "POS")].into_iter().collect();
        let pred: BTreeSet<_> = [pair("vinto", "CERTAIN", "NEG")].into_iter().collect();
        assert_eq!(score_modafact(&gold, &pred), Counts::new(0, 1, 1));
        assert_eq!(score_modafact(&gold, &gold), Counts::new(1, 0, 0));
        let folds = [
            Prf::from_counts(Counts::new(1, 0, 0)),
            Prf::from_counts(Counts::new(1, 1, 0)),
        ];
        let s = fold_average(&folds);
        assert!((s.mean_f1 - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(fold_average(&[]).mean_f1, 0.0);
    }

    #[test]
    fn tables() {
        let r = ScoreReport::from_sentences(BTreeMap::new());
        let table = score_table(&[("gpt-4o unified", &r)]);
        assert!(table.starts_with("Run             Full  Author  Nest\n"));
        let csv = score_csv(&[("a,b", &r)]);
        assert!(csv
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("\"a,b\",Full,0,0,0"));
    }

    fn arb_triple() -> impl Strategy<Value = BeliefAnnotation> {
        (
            prop::collection::vec(prop::sample::select(vec!["it", "Inc.", "officials"]), 0..3),
            prop::sample::select(vec!["said", "phasing", "buy"]),
            prop::sample::select(FactualityLabel::ALL.to_vec()),
        )
            .prop_map(|(segs, ev, label)| {
                BeliefAnnotation::new(SourcePath::nested(segs).unwrap(), ev, label).unwrap()
            })
    }

    fn arb_set() -> impl Strategy<Value = AnnotationSet> {
        prop::collection::btree_set(arb_triple(), 0..6)
    }

    use crate::model::{FactualityLabel, SourcePath};

    proptest! {
        #[test]
        fn scopes_partition(gold in arb_set(), pred in arb_set()) {
            let c = ScopedCounts::of(&gold, &pred);
            prop_assert_eq!(c.full, c.author + c.nest);
        }

        #[test]
        fn adding_correct_never_hurts(gold in arb_set(), pred in arb_set(), extra in arb_triple()) {
            let before = ScopedCounts::of(&gold, &pred);
            let mut more = pred.clone();
            more.insert(extra.clone());
            let after = ScopedCounts::of(&gold, &more);
            for scope in EvalScope::ALL {
                let b = Prf::from_counts(before.get(scope)).f1;
                let a = Prf::from_counts(after.get(scope)).f1;
                if gold.contains(&extra) {
                    prop_assert!(a >= b);
                } else {
                    prop_assert!(a <= b);
                }
            }
        }

        #[test]
        fn rechunking_is_invariant(a in (arb_set(), arb_set()), b in (arb_set(), arb_set())) {
            let split: BTreeMap<String, ScopedCounts> = [
                ("x".to_string(), ScopedCounts::of(&a.0, &a.1)),
                ("y".to_string(), ScopedCounts::of(&b.0, &b.1)),
            ].into_iter().collect();
            let merged = [("xy".to_string(), ScopedCounts::of(&a.0, &a.1) + ScopedCounts::of(&b.0, &b.1))]
                .into_iter().collect();
            let r1 = ScoreReport::from_sentences(split);
            let r2 = ScoreReport::from_sentences(merged);
            prop_assert_eq!(r1.full, r2.full);
            prop_assert_eq!(r1.nest, r2.nest);
        }
    }
}
