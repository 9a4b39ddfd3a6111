//! Entity-ranking evaluation of a scorer over a dataset.
//!
//! Every record is scored against the whole candidate pool in one request.
//! Candidates are ranked by mean log-probability (descending, ties broken by
//! entity string) and the gold rank is exact over the full pool, however few
//! predictions are stored.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::{
    acc_at_k, CandidatePool, ProbeRecord, Provenance, RecordFailure, RecordPrediction, RunResult,
    ScoredCandidate, Style, MAX_FAILURE_RATE,
};
use crate::exec;
use crate::jsonl::{self, JsonlError};
use crate::scorer::{CandidateScoreRequest, Scorer, ScorerError};

#[derive(Debug, Clone)]
pub struct EvalConfig {
    /// Strictly ascending, all ≥ 1.
    pub k_values: Vec<usize>,
    /// Predictions persisted per record.
    pub top_k_stored: usize,
    /// Replaces the pool passed to [`evaluate`].
    pub pool_override: Option<CandidatePool>,
    pub concurrency_limit: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k_values: vec![1, 5, 10],
            top_k_stored: 10,
            pool_override: None,
            concurrency_limit: 1,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.k_values.is_empty() || self.k_values[0] == 0 {
            return Err(EvalError::Config("k_values must be non-empty and ≥ 1".into()));
        }
        if self.k_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EvalError::Config("k_values must be strictly ascending".into()));
        }
        if self.top_k_stored == 0 {
            return Err(EvalError::Config("top_k_stored must be ≥ 1".into()));
        }
        if self.concurrency_limit == 0 {
            return Err(EvalError::Config("concurrency_limit must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid evaluation config: {0}")]
    Config(String),
    #[error("scorer unavailable: {0}")]
    Scorer(#[from] ScorerError),
}

/// Best first: descending mean log-probability, then ascending entity.
pub fn rank_candidates(mut scored: Vec<ScoredCandidate>) -> Vec<ScoredCandidate> {
    scored.sort_by(|a, b| {
        b.mean_logprob
            .total_cmp(&a.mean_logprob)
            .then_with(|| a.entity.cmp(&b.entity))
    });
    scored
}

fn score_record<S: Scorer + ?Sized>(
    record: &ProbeRecord,
    pool: &CandidatePool,
    scorer: &S,
    top_k_stored: usize,
) -> Result<RecordPrediction, RecordFailure> {
    let fail = |reason: String| RecordFailure {
        record_id: record.id.clone(),
        reason,
    };
    record.validate().map_err(|e| fail(e.to_string()))?;
    if !pool.contains(&record.gold_entity) {
        return Err(fail(format!(
            "gold entity {:?} is not in the candidate pool",
            record.gold_entity
        )));
    }
    let request = CandidateScoreRequest::new(&record.masked_text, pool.entities())
        .map_err(|e| fail(e.to_string()))?;
    let scored = scorer
        .score_candidates(&request)
        .map_err(|e| fail(e.to_string()))?;
    let ranked = rank_candidates(scored);
    let gold_rank = ranked
        .iter()
        .position(|c| c.entity == record.gold_entity)
        .map(|i| i + 1);
    if gold_rank.is_none() {
        return Err(fail("scorer response omitted the gold entity".into()));
    }
    Ok(RecordPrediction {
        record_id: record.id.clone(),
        ranked_entities: ranked.into_iter().take(top_k_stored).map(|c| c.entity).collect(),
        gold_rank,
    })
}

/// Probes `scorer` on every record. Per-record failures are collected, not
/// fatal; they are excluded from the Acc@k denominators.
pub fn evaluate<S: Scorer + ?Sized>(
    dataset: &str,
    records: &[ProbeRecord],
    pool: &CandidatePool,
    scorer: &S,
    cfg: &EvalConfig,
) -> Result<RunResult, EvalError> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let pool = cfg.pool_override.as_ref().unwrap_or(pool);
    let model_id = scorer.info()?.model_id;

    let outcomes = exec::map_ordered(records, cfg.concurrency_limit, |r| {
        score_record(r, pool, scorer, cfg.top_k_stored)
    });
    let mut per_record = Vec::with_capacity(records.len());
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(p) => per_record.push(p),
            Err(f) => failures.push(f),
        }
    }

    let mut result = RunResult {
        model_id,
        dataset: dataset.to_string(),
        per_record,
        acc: Default::default(),
        acc_at_k: BTreeMap::new(),
        failures,
        pool_size: pool.len(),
        top_k_stored: cfg.top_k_stored,
        ppl: None,
    };
    result.recompute_accuracy(&cfg.k_values);

    if !result.failures.is_empty() {
        let level = if result.is_comparable() {
            log::Level::Warn
        } else {
            log::Level::Error
        };
        log::log!(
            level,
            "{} on {}: {} of {} records failed ({:.2}%){}; first: {}: {}",
            result.model_id,
            result.dataset,
            result.failures.len(),
            records.len(),
            100.0 * result.failure_rate(),
            if result.is_comparable() {
                ""
            } else {
                " - run is NOT comparable"
            },
            result.failures[0].record_id,
            result.failures[0].reason,
        );
    }
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemplateScore {
    pub acc1: f64,
    pub acc5: f64,
    pub acc10: f64,
    pub n: usize,
}

/// Acc@k per template over the template-based records of a run.
pub fn per_template_breakdown(
    result: &RunResult,
    records: &[ProbeRecord],
) -> BTreeMap<String, TemplateScore> {
    let template_of: HashMap<&str, &str> = records
        .iter()
        .filter(|r| r.style == Style::TemplateBased)
        .filter_map(|r| Some((r.id.as_str(), r.template_id.as_deref()?)))
        .collect();
    let mut ranks: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for p in &result.per_record {
        if let (Some(t), Some(rank)) = (template_of.get(p.record_id.as_str()), p.gold_rank) {
            ranks.entry(t.to_string()).or_default().push(rank);
        }
    }
    ranks
        .into_iter()
        .map(|(t, r)| {
            let score = TemplateScore {
                acc1: acc_at_k(&r, 1),
                acc5: acc_at_k(&r, 5),
                acc10: acc_at_k(&r, 10),
                n: r.len(),
            };
            (t, score)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolExpansion {
    pub before: RunResult,
    pub after: RunResult,
    /// `after - before` for every configured k.
    pub delta: BTreeMap<usize, f64>,
}

/// Evaluates on `pool` and on `pool ∪ extra` with the same scorer and records.
pub fn expand_pool_and_reevaluate<S: Scorer + ?Sized>(
    dataset: &str,
    records: &[ProbeRecord],
    pool: &CandidatePool,
    extra: &CandidatePool,
    scorer: &S,
    cfg: &EvalConfig,
) -> Result<PoolExpansion, EvalError> {
    let cfg = EvalConfig {
        pool_override: None,
        ..cfg.clone()
    };
    let before = evaluate(dataset, records, pool, scorer, &cfg)?;
    let after = evaluate(dataset, records, &pool.union(extra), scorer, &cfg)?;
    let delta = before
        .acc_at_k
        .iter()
        .map(|(k, b)| (*k, after.acc_at_k.get(k).copied().unwrap_or(0.0) - b))
        .collect();
    Ok(PoolExpansion {
        before,
        after,
        delta,
    })
}

pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

/// The per-run summary persisted next to the predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub model_id: String,
    pub dataset: String,
    pub acc1: f64,
    pub acc5: f64,
    pub acc10: f64,
    pub acc_at_k: BTreeMap<usize, f64>,
    /// Records that were evaluated.
    pub n: usize,
    pub failures: usize,
    pub failure_rate: f64,
    pub comparable: bool,
    pub pool_size: usize,
    pub top_k_stored: usize,
    #[serde(default)]
    pub ppl: Option<f64>,
    #[serde(default)]
    pub failed_records: Vec<RecordFailure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl RunSummary {
    pub fn of(result: &RunResult, provenance: Option<Provenance>) -> Self {
        Self {
            model_id: result.model_id.clone(),
            dataset: result.dataset.clone(),
            acc1: result.acc.acc1,
            acc5: result.acc.acc5,
            acc10: result.acc.acc10,
            acc_at_k: result.acc_at_k.clone(),
            n: result.evaluated(),
            failures: result.failures.len(),
            failure_rate: result.failure_rate(),
            comparable: result.failure_rate() <= MAX_FAILURE_RATE,
            pool_size: result.pool_size,
            top_k_stored: result.top_k_stored,
            ppl: result.ppl,
            failed_records: result.failures.clone(),
            provenance,
        }
    }
}

pub fn write_run(dir: &Path, result: &RunResult, provenance: Option<Provenance>) -> Result<(), JsonlError> {
    std::fs::create_dir_all(dir).map_err(|source| JsonlError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    jsonl::write(&dir.join(PREDICTIONS_FILE), &result.per_record)?;
    jsonl::write_json(&dir.join(SUMMARY_FILE), &RunSummary::of(result, provenance))
}

pub fn read_run(dir: &Path) -> Result<RunResult, JsonlError> {
    let summary: RunSummary = jsonl::read_json(&dir.join(SUMMARY_FILE))?;
    let per_record = jsonl::read(&dir.join(PREDICTIONS_FILE))?
        .into_iter()
        .map(|(_, p)| p)
        .collect();
    Ok(RunResult {
        model_id: summary.model_id,
        dataset: summary.dataset,
        per_record,
        acc: crate::domain::Accuracy {
            acc1: summary.acc1,
            acc5: summary.acc5,
            acc10: summary.acc10,
        },
        acc_at_k: summary.acc_at_k,
        failures: summary.failed_records,
        pool_size: summary.pool_size,
        top_k_stored: summary.top_k_stored,
        ppl: summary.ppl,
    })
}

/// Every directory under `root` (inclusive, any depth) holding a run summary,
/// sorted by path.
pub fn find_runs(root: &Path) -> Result<Vec<PathBuf>, JsonlError> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        if dir.join(SUMMARY_FILE).is_file() {
            out.push(dir.clone());
        }
        let entries = std::fs::read_dir(&dir).map_err(|source| JsonlError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        for entry in entries.flatten() {
            if entry.path().is_dir() {
                stack.push(entry.path());
            }
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::{UniformScorer, UnigramScorer};

    fn rec(id: &str, text: &str, gold: &str, template: Option<&str>) -> ProbeRecord {
        ProbeRecord {
            id: id.into(),
            masked_text: text.into(),
            gold_entity: gold.into(),
            relation: None,
            subject: None,
            style: if template.is_some() {
                Style::TemplateBased
            } else {
                Style::TemplateFree
            },
            template_id: template.map(Into::into),
            provenance: None,
        }
    }

    #[test]
    fn singleton_pool_is_rank_one() {
        let r = vec![rec("1", "x [MASK]", "g", None)];
        let pool = CandidatePool::new("p", ["g"]).unwrap();
        let out = evaluate("d", &r, &pool, &UniformScorer::new(5).unwrap(), &EvalConfig::default()).unwrap();
        assert_eq!(out.per_record[0].gold_rank, Some(1));
        assert_eq!((out.acc.acc1, out.acc.acc5, out.acc.acc10), (1.0, 1.0, 1.0));
    }

    #[test]
    fn ties_break_lexicographically() {
        // Uniform scorer: every single-token candidate ties.
        let r = vec![rec("1", "x [MASK]", "c", None)];
        let pool = CandidatePool::new("p", ["d", "c", "b", "a"]).unwrap();
        let out = evaluate("d", &r, &pool, &UniformScorer::new(5).unwrap(), &EvalConfig::default()).unwrap();
        assert_eq!(out.per_record[0].ranked_entities, vec!["a", "b", "c", "d"]);
        assert_eq!(out.per_record[0].gold_rank, Some(3));
        assert_eq!((out.acc.acc1, out.acc.acc5), (0.0, 1.0));
    }

    #[test]
    fn gold_rank_is_exact_beyond_storage() {
        let r = vec![rec("1", "x [MASK]", "e", None)];
        let pool = CandidatePool::new("p", ["a", "b", "c", "d", "e"]).unwrap();
        let cfg = EvalConfig {
            top_k_stored: 2,
            ..EvalConfig::default()
        };
        let out = evaluate("d", &r, &pool, &UniformScorer::new(5).unwrap(), &cfg).unwrap();
        assert_eq!(out.per_record[0].ranked_entities.len(), 2);
        assert_eq!(out.per_record[0].gold_rank, Some(5));
    }

    #[test]
    fn gold_missing_from_pool_is_a_counted_failure() {
        let r = vec![rec("1", "x [MASK]", "a", None), rec("2", "x [MASK]", "zz", None)];
        let pool = CandidatePool::new("p", ["a"]).unwrap();
        let out = evaluate("d", &r, &pool, &UniformScorer::new(5).unwrap(), &EvalConfig::default()).unwrap();
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.acc.acc1, 1.0);
        assert!(!out.is_comparable());
    }

    #[test]
    fn empty_dataset_errors() {
        let pool = CandidatePool::new("p", ["a"]).unwrap();
        assert!(matches!(
            evaluate("d", &[], &pool, &UniformScorer::new(5).unwrap(), &EvalConfig::default()),
            Err(EvalError::EmptyDataset)
        ));
    }

    #[test]
    fn template_breakdown_extremes() {
        let scorer = UnigramScorer::from_corpus("a a a b", 1.0).unwrap();
        let mut records = Vec::new();
        for i in 0..4 {
            records.push(rec(&format!("A{i}"), "x [MASK]", "a", Some("A")));
            records.push(rec(&format!("B{i}"), "x [MASK]", "zz", Some("B")));
        }
        let pool_entities: Vec<String> = ["a", "b"]
            .into_iter()
            .map(String::from)
            .chain((0..12).map(|i| format!("w{i:02}")))
            .chain(["zz".to_string()])
            .collect();
        let pool = CandidatePool::new("p", pool_entities).unwrap();
        let run = evaluate("d", &records, &pool, &scorer, &EvalConfig::default()).unwrap();
        let t = per_template_breakdown(&run, &records);
        assert_eq!(t["A"].acc10, 1.0);
        assert_eq!(t["B"].acc10, 0.0);
        assert_eq!(run.acc.acc10, 0.5);
    }

    #[test]
    fn persistence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let r = vec![rec("1", "x [MASK]", "c", None)];
        let pool = CandidatePool::new("p", ["a", "c"]).unwrap();
        let run = evaluate("d", &r, &pool, &UniformScorer::new(5).unwrap(), &EvalConfig::default()).unwrap();
        write_run(dir.path(), &run, None).unwrap();
        assert_eq!(read_run(dir.path()).unwrap(), run);
        assert_eq!(find_runs(dir.path()).unwrap(), vec![dir.path().to_path_buf()]);
    }
}
