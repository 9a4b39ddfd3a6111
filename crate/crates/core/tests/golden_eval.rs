use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cloze_bench::domain::{build_candidate_pool, load_dataset};
use cloze_bench::eval::{evaluate, read_run, write_run, EvalConfig};
use cloze_bench::pll::{dataset_perplexities, summarize, PromptTextMode};
use cloze_bench::scorer::{Scorer, UnigramScorer};
use serde::Deserialize;

fn probe() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/probe")
}

/// Written by `fixtures/probe/oracle.py`.
#[derive(Deserialize)]
struct Expected {
    model_id: String,
    vocab_size: usize,
    ranking: Vec<String>,
    gold_ranks: BTreeMap<String, usize>,
    acc1: f64,
    acc5: f64,
    acc10: f64,
    per_text_ppl: BTreeMap<String, f64>,
    mean_ppl: f64,
}

fn expected() -> Expected {
    serde_json::from_str(&std::fs::read_to_string(probe().join("expected.json")).unwrap()).unwrap()
}

fn scorer() -> UnigramScorer {
    let corpus = std::fs::read_to_string(probe().join("corpus.txt")).unwrap();
    UnigramScorer::from_corpus(&corpus, 1.0).unwrap()
}

#[test]
fn unigram_run_matches_python_oracle() {
    let want = expected();
    let (manifest, records) = load_dataset(&probe().join("mini.jsonl")).unwrap();
    assert_eq!(manifest.record_count, 20);
    assert_eq!(manifest.pool_size, 7);
    let pool = build_candidate_pool(&records).unwrap();
    let s = scorer();
    assert_eq!(s.vocab_size(), want.vocab_size);
    assert_eq!(s.info().unwrap().model_id, want.model_id);

    let run = evaluate("mini", &records, &pool, &s, &EvalConfig::default()).unwrap();
    assert!(run.failures.is_empty());
    for p in &run.per_record {
        assert_eq!(p.ranked_entities, want.ranking);
        assert_eq!(p.gold_rank, Some(want.gold_ranks[&p.record_id]));
    }
    assert!((run.acc.acc1 - want.acc1).abs() < 1e-12);
    assert!((run.acc.acc5 - want.acc5).abs() < 1e-12);
    assert!((run.acc.acc10 - want.acc10).abs() < 1e-12);

    let dir = tempfile::tempdir().unwrap();
    write_run(dir.path(), &run, None).unwrap();
    assert_eq!(read_run(dir.path()).unwrap(), run);
}

#[test]
fn unigram_ppl_matches_python_oracle() {
    let want = expected();
    let (_, records) = load_dataset(&probe().join("mini.jsonl")).unwrap();
    let (values, failures) = dataset_perplexities(&records, &scorer(), PromptTextMode::GoldSubstituted, 2);
    assert!(failures.is_empty());
    for (id, v) in &values {
        let w = want.per_text_ppl[id];
        assert!((v - w).abs() <= 1e-9 * w, "{id}: {v} vs {w}");
    }
    let summary = summarize("ref-unigram", "mini", &values, None).unwrap();
    assert!((summary.mean_ppl - want.mean_ppl).abs() <= 1e-9 * want.mean_ppl);
    assert_eq!(summary.n, 20);
}
