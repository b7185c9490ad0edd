use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{corpus_info, cost_of, io_err, score_and_analyze, PipelineError, RunConfig};
use crate::analysis::ErrorTable;
use crate::corpus::{load_corpus, Corpus, Language};
use crate::gateway::{CompletionResult, CostReport};
use crate::model::{AnnotationSet, SourcePath};
use crate::normalize::replay_rewrites;
use crate::parse::{parse_annotations, ParseOutcome};
use crate::prompt::{PromptFamily, TemplateSet};
use crate::score::{score_run, Prf, ScoreReport};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMING_FILE: &str = "timing.json";
pub const RESPONSES_DIR: &str = "responses";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusInfo {
    pub name: String,
    pub digest: String,
    pub language: Language,
    pub sentences: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SentenceTrace {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_call: Option<String>,
    /// Cache key of the prediction call; its text is in `responses/<key>.txt`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse: Option<ParseOutcome>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub normalization_calls: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub rewrites: BTreeMap<SourcePath, SourcePath>,
    pub predictions: AnnotationSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SentenceTrace {
    pub fn new(id: &str) -> Self {
        SentenceTrace {
            id: id.to_string(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub config: RunConfig,
    pub corpus: CorpusInfo,
    pub template_versions: BTreeMap<PromptFamily, String>,
    pub sentences: Vec<SentenceTrace>,
    pub scores: ScoreReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modafact: Option<Prf>,
    pub errors: ErrorTable,
    pub cost: CostReport,
}

impl RunManifest {
    pub(crate) fn assemble(
        cfg: &RunConfig,
        corpus: &Corpus,
        templates: &TemplateSet,
        sentences: Vec<SentenceTrace>,
        calls: &[CompletionResult],
    ) -> Result<Self, PipelineError> {
        let (scores, modafact, errors) = score_and_analyze(cfg, corpus, &sentences)?;
        Ok(RunManifest {
            name: cfg.run_name(),
            config: cfg.clone(),
            corpus: corpus_info(corpus),
            template_versions: templates.versions(),
            sentences,
            scores,
            modafact,
            errors,
            cost: cost_of(calls),
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn predictions(&self) -> BTreeMap<String, AnnotationSet> {
        super::predictions_of(&self.sentences)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallTiming {
    pub key: String,
    pub model_id: String,
    pub cached: bool,
    pub latency_ms: u64,
}

/// Wall-clock data kept out of the manifest so reruns compare equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub started_at: u64,
    pub finished_at: u64,
    pub elapsed_ms: u64,
    pub calls: Vec<CallTiming>,
}

/// Writes `manifest.json`, `timing.json` and `responses/<key>.txt` under `dir`.
pub fn write_run(dir: &Path, out: &super::RunOutput) -> Result<(), PipelineError> {
    let responses = dir.join(RESPONSES_DIR);
    fs::create_dir_all(&responses).map_err(io_err(&responses))?;
    for (key, text) in &out.responses {
        let path = responses.join(format!("{key}.txt"));
        fs::write(&path, text).map_err(io_err(&path))?;
    }
    let path = dir.join(TIMING_FILE);
    let timing = serde_json::to_string_pretty(&out.timing).expect("timing serializes");
    fs::write(&path, timing + "\n").map_err(io_err(&path))?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, out.manifest.to_json()).map_err(io_err(&path))?;
    Ok(())
}

/// Accepts the manifest file or the run directory holding it.
pub fn load_manifest(path: &Path) -> Result<RunManifest, PipelineError> {
    let file = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&file).map_err(io_err(&file))?;
    serde_json::from_str(&text)
        .map_err(|e| PipelineError::Manifest(format!("{}: {e}", file.display())))
}

fn check_corpus(manifest: &RunManifest, corpus: &Corpus) -> Result<(), PipelineError> {
    if manifest.corpus.digest != corpus.digest {
        return Err(PipelineError::ScopeMismatch {
            a: format!(
                "{} ({})",
                manifest.corpus.name,
                short(&manifest.corpus.digest)
            ),
            b: format!("{} ({})", corpus.name, short(&corpus.digest)),
        });
    }
    Ok(())
}

pub(crate) fn short(digest: &str) -> &str {
    &digest[..digest.len().min(12)]
}

/// Rebuilds every sentence's predictions from the stored raw responses:
/// re-parse, then replay the recorded source rewrites. No model calls.
pub fn rederive_predictions(
    manifest: &RunManifest,
    responses_dir: &Path,
    corpus: &Corpus,
) -> Result<BTreeMap<String, AnnotationSet>, PipelineError> {
    check_corpus(manifest, corpus)?;
    let mut out = BTreeMap::new();
    for t in &manifest.sentences {
        let s = corpus
            .get(&t.id)
            .ok_or_else(|| PipelineError::Manifest(format!("sentence {} not in corpus", t.id)))?;
        let preds = match &t.call {
            Some(key) => {
                let path = responses_dir.join(format!("{key}.txt"));
                let text = fs::read_to_string(&path).map_err(io_err(&path))?;
                let parsed: ParseOutcome = parse_annotations(&text, s);
                replay_rewrites(&parsed.accepted, &t.rewrites)
            }
            None => AnnotationSet::new(),
        };
        out.insert(t.id.clone(), preds);
    }
    Ok(out)
}

/// Re-derives the score report of a run directory from its raw responses,
/// loading the corpus the manifest names unless one is given.
pub fn rescore(run_dir: &Path, corpus: Option<&Corpus>) -> Result<ScoreReport, PipelineError> {
    let manifest = load_manifest(run_dir)?;
    let dir = if run_dir.is_dir() {
        run_dir.to_path_buf()
    } else {
        run_dir.parent().map(Path::to_path_buf).unwrap_or_default()
    };
    let loaded;
    let corpus = match corpus {
        Some(c) => c,
        None => {
            loaded = load_corpus(&manifest.config.corpus, manifest.config.format)?;
            &loaded
        }
    };
    let preds = rederive_predictions(&manifest, &dir.join(RESPONSES_DIR), corpus)?;
    Ok(score_run(corpus, &preds)?)
}
