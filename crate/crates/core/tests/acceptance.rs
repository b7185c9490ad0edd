//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use factbelief::analysis::{analyze_run, category_multiset, tabulate, ErrorCategory};
use factbelief::corpus::{load_factbank_corpus, Corpus};
use factbelief::events::{evaluate_strategy, get_events, EventError, EventStrategy};
use factbelief::gateway::{CacheStore, Gateway, Price, ScriptRule, ScriptedProvider};
use factbelief::model::{
    AnnotationSet, BeliefAnnotation, ComposedAnnotation, ComposedTag, FactualityLabel,
    SentenceRecord, SourcePath,
};
use factbelief::normalize::NormalizationMode;
use factbelief::parse::{extract_annotation_array, parse_annotations};
use factbelief::pipeline::{
    rescore, run_experiment, write_run, RunConfig, RunMode, RunOutput, MANIFEST_FILE,
};
use factbelief::prompt::TemplateSet;
use factbelief::score::{
    fold_average, score_modafact_fold, score_scope, Counts, EvalScope, ScopedCounts,
};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde_json::Value;

type Outcome = Result<String, String>;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

const SEGMENTS: [&str; 6] = ["Inc.", "it", "officials", "Mary", "board", "report"];
const EVENTS: [&str; 5] = ["said", "phasing", "buy", "fell", "acquisition"];

fn random_triple(rng: &mut StdRng) -> (String, String, String) {
    let depth = rng.random_range(1..=3);
    let mut source = String::from("AUTHOR");
    for _ in 1..depth {
        source.push('_');
        source.push_str(SEGMENTS[rng.random_range(0..SEGMENTS.len())]);
    }
    let event = EVENTS[rng.random_range(0..EVENTS.len())].to_string();
    let label = FactualityLabel::ALL[rng.random_range(0..5)]
        .canonical()
        .to_string();
    (source, event, label)
}

fn random_side(rng: &mut StdRng) -> Vec<(String, String, String)> {
    let n = rng.random_range(0..=6);
    let mut v: Vec<_> = Vec::new();
    while v.len() < n {
        let t = random_triple(rng);
        if !v.contains(&t) {
            v.push(t);
        }
    }
    v
}

fn to_set(v: &[(String, String, String)]) -> AnnotationSet {
    v.iter()
        .map(|(s, e, l)| BeliefAnnotation::parse(s, e, l).unwrap())
        .collect()
}

/// Double loop over gold x pred on plain strings.
fn brute_force(
    gold: &[(String, String, String)],
    pred: &[(String, String, String)],
    scope: EvalScope,
) -> Counts {
    let keep = |t: &&(String, String, String)| match scope {
        EvalScope::Full => true,
        EvalScope::Author => !t.0.contains('_'),
        EvalScope::Nest => t.0.contains('_'),
    };
    let g: Vec<_> = gold.iter().filter(keep).collect();
    let p: Vec<_> = pred.iter().filter(keep).collect();
    let mut tp = 0;
    for a in &g {
        for b in &p {
            if a == b {
                tp += 1;
            }
        }
    }
    Counts::new(tp, p.len() as u64 - tp, g.len() as u64 - tp)
}

fn scorer_oracle() -> Outcome {
    let mut rng = StdRng::seed_from_u64(20240611);
    let start = Instant::now();
    let mut mismatches = 0;
    for _ in 0..1000 {
        let (g, p) = (random_side(&mut rng), random_side(&mut rng));
        let (gs, ps) = (to_set(&g), to_set(&p));
        for scope in EvalScope::ALL {
            if score_scope(&gs, &ps, scope) != brute_force(&g, &p, scope) {
                mismatches += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(mismatches == 0, || format!("{mismatches} scope mismatches"))?;
    ensure(elapsed < Duration::from_secs(5), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "1000 instances x 3 scopes, 0 mismatches, {:.0?}",
        elapsed
    ))
}

fn scope_partition() -> Outcome {
    let mut rng = StdRng::seed_from_u64(20240611);
    let mut violations = 0;
    for _ in 0..1000 {
        let (g, p) = (random_side(&mut rng), random_side(&mut rng));
        let c = ScopedCounts::of(&to_set(&g), &to_set(&p));
        if c.full != c.author + c.nest {
            violations += 1;
        }
    }
    ensure(violations == 0, || format!("{violations} violations"))?;
    Ok("1000 runs, 0 violations".into())
}

fn parser_totality_and_fidelity() -> Outcome {
    let mut rng = StdRng::seed_from_u64(99);
    let s = SentenceRecord::new("x", "Trurit Inc. said it is phasing out legacy routers.");
    let alphabet = b"[]{}\",:/*`\n abcAUTHOR_truefalse\\";
    let mut panics = 0;
    for i in 0..10_000 {
        let len = rng.random_range(0..200);
        let bytes: Vec<u8> = (0..len)
            .map(|_| {
                if i % 2 == 0 {
                    rng.random()
                } else {
                    alphabet[rng.random_range(0..alphabet.len())]
                }
            })
            .collect();
        let text = String::from_utf8_lossy(&bytes).into_owned();
        if panic::catch_unwind(|| parse_annotations(&text, &s)).is_err() {
            panics += 1;
        }
    }
    ensure(panics == 0, || format!("{panics} fuzz inputs panicked"))?;

    let surface = ["true", "false", "ptrue", "pfalse", "unknown"];
    let mut recovered = 0;
    for i in 0..200 {
        let n = rng.random_range(1..=4);
        let mut want = AnnotationSet::new();
        let mut body = Vec::new();
        for k in 0..n {
            let depth = rng.random_range(0..3);
            let mut src = String::from("AUTHOR");
            for _ in 0..depth {
                src.push('_');
                src.push_str(SEGMENTS[rng.random_range(0..SEGMENTS.len())]);
            }
            let ev = EVENTS[rng.random_range(0..EVENTS.len())];
            let lab = surface[rng.random_range(0..5)];
            let line = format!(r#"  {{"source": "{src}", "event": "{ev}", "label": "{lab}"}}"#);
            let comment = if k == 0 { " // from the SIP" } else { "" };
            body.push(format!("{line},{comment}"));
            want.insert(BeliefAnnotation::parse(&src, ev, lab).unwrap());
        }
        let decoy = r#"[{"source": "AUTHOR_x", "event": "decoy", "label": "true"}]"#;
        let array = format!("[\n{}\n]", body.join("\n"));
        let text = match i % 4 {
            0 => format!("Step 1: consider {decoy}.\nStep 2: {decoy}\nFinal answer:\n```json\n{array}\n```\nDone."),
            1 => format!("Example: {decoy}\n/* reasoning */ Then the annotation is:\n{array}\n"),
            2 => format!("```\n{decoy}\n```\nReconsidering.\n```json\n{array}\n```"),
            _ => format!("Sources [AUTHOR, AUTHOR_it] and events [said].\n{decoy}\nSo:\n{array}"),
        };
        if parse_annotations(&text, &s).accepted == want {
            recovered += 1;
        }
    }
    ensure(recovered == 200, || format!("recovered {recovered}/200"))?;
    let _ = extract_annotation_array("");
    Ok("10000 fuzz inputs without failure; 200/200 CoT outputs recovered".into())
}

fn scripted_gateway(script: &Path) -> (Gateway, Arc<ScriptedProvider>) {
    let provider = Arc::new(ScriptedProvider::from_file(script).unwrap());
    let gw = Gateway::new(CacheStore::memory()).with_model(
        "mock",
        provider.clone(),
        Price::default(),
        false,
    );
    (gw, provider)
}

fn hybrid_config(corpus: &Path) -> RunConfig {
    let mut cfg = RunConfig::new(corpus, RunMode::Hybrid, "mock");
    cfg.events = Some(EventStrategy::Gold);
    cfg.norm_model = "mock".into();
    cfg
}

fn end_to_end_determinism() -> Outcome {
    let dir = fixtures().join("e2e");
    let cfg = hybrid_config(&dir.join("corpus.jsonl"));
    let start = Instant::now();
    let mut outputs: Vec<(RunOutput, tempfile::TempDir)> = Vec::new();
    for _ in 0..2 {
        let (gw, _) = scripted_gateway(&dir.join("mock_script.json"));
        let out = run_experiment(&cfg, &gw).map_err(|e| e.to_string())?;
        let tmp = tempfile::tempdir().unwrap();
        write_run(tmp.path(), &out).map_err(|e| e.to_string())?;
        outputs.push((out, tmp));
    }
    let elapsed = start.elapsed();
    let a = std::fs::read(outputs[0].1.path().join(MANIFEST_FILE)).unwrap();
    let b = std::fs::read(outputs[1].1.path().join(MANIFEST_FILE)).unwrap();
    ensure(a == b, || "manifests differ between runs".into())?;

    let expected: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("expected.json")).unwrap()).unwrap();
    let scores = &outputs[0].0.manifest.scores;
    for (name, prf) in [
        ("full", &scores.full),
        ("author", &scores.author),
        ("nest", &scores.nest),
    ] {
        let e = &expected[name];
        let want_f1: f64 = e["f1"].as_str().unwrap().parse().unwrap();
        let counts = (
            e["tp"].as_u64().unwrap(),
            e["fp"].as_u64().unwrap(),
            e["fn"].as_u64().unwrap(),
        );
        ensure(counts == (prf.tp, prf.fp, prf.fn_), || {
            format!("{name} counts {:?}", prf.counts())
        })?;
        ensure(prf.f1.to_bits() == want_f1.to_bits(), || {
            format!("{name} F1 {} != {want_f1}", prf.f1)
        })?;
    }
    let rederived = rescore(outputs[0].1.path(), None).map_err(|e| e.to_string())?;
    ensure(&rederived == scores, || {
        "scores re-derived from responses differ".into()
    })?;
    ensure(elapsed < Duration::from_secs(10), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "byte-identical manifests; F1 full/author/nest = {}/{}/{} exact; {:.0?}",
        scores.full.f1, scores.author.f1, scores.nest.f1, elapsed
    ))
}

fn event_label_multiset(out: &RunOutput) -> Vec<Vec<(String, FactualityLabel)>> {
    out.manifest
        .sentences
        .iter()
        .map(|t| {
            let mut v: Vec<_> = t
                .predictions
                .iter()
                .map(|a| (a.event.clone(), a.label))
                .collect();
            v.sort();
            v
        })
        .collect()
}

fn normalization_monotonicity() -> Outcome {
    let dir = fixtures().join("normalization");
    let mut cfg = hybrid_config(&dir.join("corpus.jsonl"));
    let (gw, _) = scripted_gateway(&dir.join("mock_script.json"));
    let none = run_experiment(&cfg, &gw).map_err(|e| e.to_string())?;
    cfg.normalization = NormalizationMode::FewShot;
    let few = run_experiment(&cfg, &gw).map_err(|e| e.to_string())?;
    let (n, f) = (&none.manifest.scores, &few.manifest.scores);
    ensure(f.full.f1 > n.full.f1, || {
        format!("Full {} -> {}", n.full.f1, f.full.f1)
    })?;
    ensure(f.nest.f1 > n.nest.f1, || {
        format!("Nest {} -> {}", n.nest.f1, f.nest.f1)
    })?;
    ensure(
        event_label_multiset(&none) == event_label_multiset(&few),
        || "events or labels changed under normalization".into(),
    )?;
    Ok(format!(
        "Full {:.3} -> {:.3}, Nest {:.3} -> {:.3}; events and labels unchanged",
        n.full.f1, f.full.f1, n.nest.f1, f.nest.f1
    ))
}

fn oracle_short_circuit() -> Outcome {
    let dir = fixtures().join("normalization");
    let corpus = load_factbank_corpus(&dir.join("corpus.jsonl")).map_err(|e| e.to_string())?;
    let rules = corpus
        .sentences
        .iter()
        .map(|s| {
            let records: Vec<Value> = s
                .gold
                .iter()
                .map(|a| serde_json::json!({"source": a.source.render(), "event": a.event, "label": a.label.surface()}))
                .collect();
            let reply = format!("```json\n{}\n```", serde_json::to_string_pretty(&records).unwrap());
            ScriptRule::reply(&[&format!("Sentence: {}\nEvents:", s.text)], reply)
        })
        .collect();
    let provider = Arc::new(ScriptedProvider::new(rules, None));
    let gw = Gateway::new(CacheStore::memory()).with_model(
        "mock",
        provider.clone(),
        Price::default(),
        false,
    );
    let mut cfg = hybrid_config(&dir.join("corpus.jsonl"));
    cfg.normalization = NormalizationMode::Oracle;
    let out = run_experiment(&cfg, &gw).map_err(|e| e.to_string())?;
    let prediction_calls = corpus.sentences.len() as u64;
    let norm_calls: usize = out
        .manifest
        .sentences
        .iter()
        .map(|t| t.normalization_calls.len())
        .sum();
    ensure(provider.calls() == prediction_calls, || {
        format!(
            "{} provider calls for {prediction_calls} sentences",
            provider.calls()
        )
    })?;
    ensure(norm_calls == 0, || {
        format!("{norm_calls} normalization calls")
    })?;
    ensure(out.manifest.scores.full.f1 == 1.0, || {
        "gold-matching run not perfect".into()
    })?;
    Ok(format!(
        "{prediction_calls} prediction calls, 0 normalization calls"
    ))
}

fn read_jsonl(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn error_taxonomy() -> Outcome {
    let dir = fixtures().join("taxonomy");
    let corpus = load_factbank_corpus(&dir.join("corpus.jsonl")).map_err(|e| e.to_string())?;
    let raw_preds: Vec<(String, Vec<(String, String, String)>)> =
        read_jsonl(&dir.join("predictions.jsonl"))
            .into_iter()
            .map(|v| {
                let id = v["id"].as_str().unwrap().to_string();
                let triples = v["predictions"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|p| {
                        let f = |k: &str| p[k].as_str().unwrap().to_string();
                        (f("source"), f("event"), f("label"))
                    })
                    .collect();
                (id, triples)
            })
            .collect();
    let expected: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("expected.json")).unwrap()).unwrap();

    let mut rng = StdRng::seed_from_u64(4);
    let mut reference = None;
    for round in 0..10 {
        let mut sentences: Vec<&SentenceRecord> = corpus.sentences.iter().collect();
        let mut preds = raw_preds.clone();
        if round > 0 {
            sentences.shuffle(&mut rng);
            preds.shuffle(&mut rng);
            for (_, t) in preds.iter_mut() {
                t.shuffle(&mut rng);
            }
        }
        let predictions: BTreeMap<String, AnnotationSet> = preds
            .iter()
            .map(|(id, t)| (id.clone(), to_set(t)))
            .collect();
        let records = analyze_run(sentences.iter().copied(), &predictions);
        let multiset = category_multiset(&records);
        let table = tabulate(&records, usize::MAX);
        for cat in ErrorCategory::ALL {
            let want = expected["counts"][cat.name()].as_u64().unwrap() as usize;
            ensure(table.count(cat) == want, || {
                format!("round {round}: {cat} {} != {want}", table.count(cat))
            })?;
        }
        for (key, want) in expected["subtypes"].as_object().unwrap() {
            let (cat, sub) = key.split_once('/').unwrap();
            let cat = ErrorCategory::ALL
                .into_iter()
                .find(|c| c.name() == cat)
                .unwrap();
            let got = table.subtype_count(cat, sub);
            ensure(got as u64 == want.as_u64().unwrap(), || {
                format!("{key}: {got} != {want}")
            })?;
        }
        match &reference {
            None => reference = Some(multiset),
            Some(r) => ensure(r == &multiset, || {
                format!("round {round}: output depends on order")
            })?,
        }
    }
    Ok("Source 12, FN 8, Label 7, FP 5 with expected subtypes across 10 orderings".into())
}

fn round_trips() -> Outcome {
    for label in FactualityLabel::ALL {
        ensure(
            FactualityLabel::from_surface(label.surface()) == Ok(label),
            || format!("{label} surface"),
        )?;
        ensure(
            FactualityLabel::parse_any(label.canonical()) == Ok(label),
            || format!("{label} canonical"),
        )?;
        let json = serde_json::to_string(&label).unwrap();
        ensure(
            serde_json::from_str::<FactualityLabel>(&json).unwrap() == label,
            || format!("{label} json"),
        )?;
    }
    let mut rng = StdRng::seed_from_u64(1000);
    let chars: Vec<char> = "abcdefghijklmnopqrstuvwxyzABCXYZ0123456789.-'&é"
        .chars()
        .collect();
    for _ in 0..1000 {
        let depth = rng.random_range(0..5);
        let segs: Vec<String> = (0..depth)
            .map(|_| {
                let n = rng.random_range(1..10);
                (0..n)
                    .map(|_| chars[rng.random_range(0..chars.len())])
                    .collect()
            })
            .collect();
        let path = SourcePath::nested(&segs).map_err(|e| e.to_string())?;
        let back = SourcePath::parse(&path.render()).map_err(|e| e.to_string())?;
        ensure(back == path && back.segments()[1..] == segs[..], || {
            format!("{path} round trip")
        })?;
        let json = serde_json::to_string(&path).unwrap();
        ensure(
            serde_json::from_str::<SourcePath>(&json).unwrap() == path,
            || format!("{path} json"),
        )?;
    }
    Ok("5 labels and 1000 source paths round-trip".into())
}

fn modafact_composition() -> Outcome {
    let mut rng = StdRng::seed_from_u64(500);
    let chars: Vec<char> = "ABCDEFGHIJKLMNOPQRSTUVWXYZ_-àè".chars().collect();
    let word = |rng: &mut StdRng| -> String {
        let n = rng.random_range(1..9);
        (0..n)
            .map(|_| chars[rng.random_range(0..chars.len())])
            .collect()
    };
    for _ in 0..500 {
        let (b, p) = (word(&mut rng), word(&mut rng));
        let tag = ComposedTag::new(&b, &p).map_err(|e| e.to_string())?;
        let back = ComposedTag::split(&tag.composed()).map_err(|e| e.to_string())?;
        ensure(back.belief() == b && back.polarity() == p, || {
            format!("{b}+{p}")
        })?;
    }

    // Per fold (tp, fp, fn) and F1 = 2tp / (2tp + fp + fn) by hand:
    // 1, 2/3, 1/2, 4/5, 0.
    let plan = [(2, 0, 0), (1, 1, 0), (1, 1, 1), (2, 1, 0), (0, 1, 1)];
    let hand_mean = (1.0 + 2.0 / 3.0 + 0.5 + 0.8 + 0.0) / 5.0;
    let tag = |b: &str| ComposedTag::new(b, "POS").unwrap();
    let mut folds = Vec::new();
    for (k, &(tp, fp, fn_)) in plan.iter().enumerate() {
        let mut s = SentenceRecord::new(format!("f{k}"), "x");
        let mut pred = BTreeSet::new();
        for i in 0..tp {
            let a = ComposedAnnotation {
                event: format!("tp{i}"),
                tag: tag("CERTAIN"),
            };
            s.composed_gold.insert(a.clone());
            pred.insert(a);
        }
        for i in 0..fp {
            pred.insert(ComposedAnnotation {
                event: format!("fp{i}"),
                tag: tag("PROBABLE"),
            });
        }
        for i in 0..fn_ {
            s.composed_gold.insert(ComposedAnnotation {
                event: format!("fn{i}"),
                tag: tag("POSSIBLE"),
            });
        }
        let corpus = Corpus::new(format!("fold{k}"), vec![s]);
        let preds = [(format!("f{k}"), pred)].into_iter().collect();
        folds.push(score_modafact_fold(&corpus, &preds).map_err(|e| e.to_string())?);
    }
    let mean = fold_average(&folds).mean_f1;
    ensure((mean - hand_mean).abs() < 1e-12, || {
        format!("mean {mean} != {hand_mean}")
    })?;
    Ok(format!(
        "500 tags lossless; five-fold mean F1 {mean:.12} matches hand value"
    ))
}

/// Minimal tagger stand-in: answers POST /tag with events looked up by text,
/// and 500 for any text listed in `fail`.
fn stub_tagger(events: BTreeMap<String, Vec<String>>, fail: &'static str) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            if reader.read_line(&mut request_line).is_err() {
                continue;
            }
            let mut length = 0;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line.trim().is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        length = v.trim().parse().unwrap_or(0);
                    }
                }
            }
            let mut body = vec![0; length];
            let _ = reader.read_exact(&mut body);
            let parsed: Result<Value, _> = serde_json::from_slice(&body);
            let (status, payload) = match parsed {
                Ok(v) if request_line.starts_with("POST /tag ") => {
                    let text = v["text"].as_str().unwrap_or_default();
                    if text == fail {
                        (
                            "500 Internal Server Error",
                            r#"{"error":"inference failed"}"#.to_string(),
                        )
                    } else {
                        let ev = events.get(text).cloned().unwrap_or_default();
                        ("200 OK", serde_json::json!({ "events": ev }).to_string())
                    }
                }
                _ => (
                    "400 Bad Request",
                    r#"{"error":"malformed body"}"#.to_string(),
                ),
            };
            let _ = write!(
                stream,
                "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                payload.len()
            );
        }
    });
    format!("http://{addr}")
}

fn service_strategy() -> Outcome {
    let corpus =
        load_factbank_corpus(&fixtures().join("e2e/corpus.jsonl")).map_err(|e| e.to_string())?;
    let events: BTreeMap<String, Vec<String>> = corpus
        .sentences
        .iter()
        .map(|s| (s.text.clone(), s.gold_events.clone().unwrap_or_default()))
        .collect();
    let url = stub_tagger(events, "Sales rose sharply in March.");
    let strategy =
        EventStrategy::parse(&format!("service:{url}"), "unused").map_err(|e| e.to_string())?;
    let (gw, _) = scripted_gateway(&fixtures().join("e2e/mock_script.json"));
    let templates = TemplateSet::builtin();

    let first = corpus.get("e01").unwrap();
    let got = get_events(first, &strategy, &gw, &templates).map_err(|e| e.to_string())?;
    ensure(got.events == ["said", "phasing"], || {
        format!("got {:?}", got.events)
    })?;
    let failing = corpus.get("e11").unwrap();
    ensure(
        matches!(
            get_events(failing, &strategy, &gw, &templates),
            Err(EventError::ServiceError { .. })
        ),
        || "non-200 did not map to ServiceError".into(),
    )?;
    let report = evaluate_strategy(&corpus, &strategy, &gw, &templates, 4);
    ensure(report.failures.len() == 1, || {
        format!("{} failures", report.failures.len())
    })?;
    ensure(gw.requests() == 0, || {
        "service strategy touched the gateway".into()
    })?;

    let mut cfg = hybrid_config(&fixtures().join("e2e/corpus.jsonl"));
    cfg.events = Some(strategy);
    let out = run_experiment(&cfg, &gw).map_err(|e| e.to_string())?;
    let errored = out
        .manifest
        .sentences
        .iter()
        .filter(|t| t.error.is_some())
        .count();
    ensure(errored == 1, || format!("{errored} sentences errored"))?;
    Ok(format!(
        "stub /tag served events; 500 -> ServiceError; tag F1 {:.3}",
        report.overall.f1
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("scorer oracle equivalence", scorer_oracle),
        ("scope partition invariant", scope_partition),
        ("parser totality and fidelity", parser_totality_and_fidelity),
        ("end-to-end determinism", end_to_end_determinism),
        ("normalization monotonicity", normalization_monotonicity),
        ("oracle-mode short-circuit", oracle_short_circuit),
        ("error-taxonomy fixture", error_taxonomy),
        ("label/source round-trips", round_trips),
        ("ModaFact composition", modafact_composition),
        ("service event strategy against stub", service_strategy),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    let stdout = std::io::stdout();
    for (name, check) in criteria {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        let line = match &outcome {
            Ok(detail) => format!("PASS  {name}: {detail}\n"),
            Err(detail) => {
                failed += 1;
                format!("FAIL  {name}: {detail}\n")
            }
        };
        let _ = stdout.lock().write_all(line.as_bytes());
    }
    let _ = panic::take_hook();
    if failed > 0 {
        let _ = writeln!(stdout.lock(), "{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
