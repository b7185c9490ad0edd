use serde::{Deserialize, Serialize};

use super::manifest::short;
use super::{PipelineError, RunManifest, RunMode};
use crate::score::{delta_report, format_percent, text_table, Delta, DeltaReport};

/// A published reference row, in percent (e.g. `69.5`).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SotaReference {
    pub full: Option<f64>,
    pub author: Option<f64>,
    pub nest: Option<f64>,
}

impl SotaReference {
    pub fn is_empty(&self) -> bool {
        self.full.is_none() && self.author.is_none() && self.nest.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SotaDelta {
    pub full: Option<Delta>,
    pub author: Option<Delta>,
    pub nest: Option<Delta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub run: String,
    pub model_id: String,
    pub mode: RunMode,
    pub full: f64,
    pub author: f64,
    pub nest: f64,
    /// Hybrid minus the unified run of the same model and normalization.
    pub hybrid_minus_unified: Option<DeltaReport>,
    pub vs_sota: Option<SotaDelta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub corpus: String,
    pub rows: Vec<ComparisonRow>,
}

fn sota_delta(reference: &SotaReference, row: &ComparisonRow) -> SotaDelta {
    let d = |r: Option<f64>, x: f64| r.map(|r| Delta::between(r / 100.0, x));
    SotaDelta {
        full: d(reference.full, row.full),
        author: d(reference.author, row.author),
        nest: d(reference.nest, row.nest),
    }
}

/// Tabulates runs over one corpus with Hybrid-Unified and SOTA deltas.
pub fn report(
    manifests: &[RunManifest],
    sota: Option<&SotaReference>,
) -> Result<Comparison, PipelineError> {
    let first = manifests
        .first()
        .ok_or_else(|| PipelineError::Manifest("no manifests to report".into()))?;
    for m in &manifests[1..] {
        if m.corpus.digest != first.corpus.digest {
            return Err(PipelineError::ScopeMismatch {
                a: format!("{} ({})", first.corpus.name, short(&first.corpus.digest)),
                b: format!("{} ({})", m.corpus.name, short(&m.corpus.digest)),
            });
        }
    }
    let rows = manifests
        .iter()
        .map(|m| {
            let unified = (m.config.mode == RunMode::Hybrid)
                .then(|| {
                    manifests.iter().find(|u| {
                        u.config.mode == RunMode::Unified
                            && u.config.model_id == m.config.model_id
                            && u.config.normalization == m.config.normalization
                    })
                })
                .flatten();
            let mut row = ComparisonRow {
                run: m.name.clone(),
                model_id: m.config.model_id.clone(),
                mode: m.config.mode,
                full: m.scores.full.f1,
                author: m.scores.author.f1,
                nest: m.scores.nest.f1,
                hybrid_minus_unified: unified.map(|u| delta_report(&u.scores, &m.scores)),
                vs_sota: None,
            };
            row.vs_sota = sota.filter(|s| !s.is_empty()).map(|s| sota_delta(s, &row));
            row
        })
        .collect();
    Ok(Comparison {
        corpus: first.corpus.name.clone(),
        rows,
    })
}

fn opt(d: Option<Delta>) -> String {
    d.map(|d| d.to_string()).unwrap_or_else(|| "-".into())
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let with_hu = self.rows.iter().any(|r| r.hybrid_minus_unified.is_some());
        let with_sota = self.rows.iter().any(|r| r.vs_sota.is_some());
        let mut header = vec!["Run", "Full", "Author", "Nest"];
        if with_hu {
            header.extend(["dHyb-Unif Full", "Author", "Nest"]);
        }
        if with_sota {
            header.extend(["dSOTA Full", "Author", "Nest"]);
        }
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut cells = vec![
                    r.run.clone(),
                    format_percent(r.full),
                    format_percent(r.author),
                    format_percent(r.nest),
                ];
                if with_hu {
                    let d = r.hybrid_minus_unified;
                    cells.push(opt(d.map(|d| d.full)));
                    cells.push(opt(d.map(|d| d.author)));
                    cells.push(opt(d.map(|d| d.nest)));
                }
                if with_sota {
                    let d = r.vs_sota;
                    cells.push(opt(d.and_then(|d| d.full)));
                    cells.push(opt(d.and_then(|d| d.author)));
                    cells.push(opt(d.and_then(|d| d.nest)));
                }
                cells
            })
            .collect();
        text_table(&header, &body)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "run,model,mode,full,author,nest,hyb_unif_full,hyb_unif_author,hyb_unif_nest,sota_full,sota_author,sota_nest\n",
        );
        let cell = |d: Option<Delta>| d.map(|d| d.to_string()).unwrap_or_default();
        for r in &self.rows {
            let hu = r.hybrid_minus_unified;
            let s = r.vs_sota;
            let fields = [
                crate::score::csv_field(&r.run),
                crate::score::csv_field(&r.model_id),
                r.mode.to_string(),
                format_percent(r.full),
                format_percent(r.author),
                format_percent(r.nest),
                cell(hu.map(|d| d.full)),
                cell(hu.map(|d| d.author)),
                cell(hu.map(|d| d.nest)),
                cell(s.and_then(|d| d.full)),
                cell(s.and_then(|d| d.author)),
                cell(s.and_then(|d| d.nest)),
            ];
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }
}
