//! Cross-run analytics over finished [`RunResult`]s.

pub mod render;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::domain::{Accuracy, CandidatePool, RunResult};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("no results to analyse")]
    Empty,
    #[error("model {0:?} appears more than once")]
    DuplicateModel(String),
    #[error("results span several datasets: {0:?}")]
    MixedDatasets(Vec<String>),
    #[error("model sets differ: only in first {only_a:?}, only in second {only_b:?}")]
    ModelSetMismatch {
        only_a: Vec<String>,
        only_b: Vec<String>,
    },
    #[error("predictions stored to depth {stored}, need {needed}")]
    InsufficientDepth { stored: usize, needed: usize },
    #[error("correlation needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("a coordinate has zero variance")]
    ZeroVariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub model_id: String,
    pub acc1: f64,
    pub acc5: f64,
    pub acc10: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub dataset: String,
    /// Best first; `rank` is the 1-based row position.
    pub rows: Vec<RankRow>,
}

impl RankTable {
    pub fn rank_of(&self, model_id: &str) -> Option<usize> {
        self.rows.iter().find(|r| r.model_id == model_id).map(|r| r.rank)
    }
}

fn check_unique_models<'a>(ids: impl Iterator<Item = &'a str>) -> Result<(), AnalysisError> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(AnalysisError::DuplicateModel(id.to_string()));
        }
    }
    Ok(())
}

/// Orders models by Acc@1, then Acc@5, then Acc@10 (all descending), then
/// model id.
pub fn rank_models(results: &[RunResult]) -> Result<RankTable, AnalysisError> {
    let first = results.first().ok_or(AnalysisError::Empty)?;
    let datasets: BTreeSet<&str> = results.iter().map(|r| r.dataset.as_str()).collect();
    if datasets.len() > 1 {
        return Err(AnalysisError::MixedDatasets(
            datasets.into_iter().map(String::from).collect(),
        ));
    }
    check_unique_models(results.iter().map(|r| r.model_id.as_str()))?;

    let mut sorted: Vec<&RunResult> = results.iter().collect();
    sorted.sort_by(|a, b| {
        b.acc.acc1
            .total_cmp(&a.acc.acc1)
            .then(b.acc.acc5.total_cmp(&a.acc.acc5))
            .then(b.acc.acc10.total_cmp(&a.acc.acc10))
            .then_with(|| a.model_id.cmp(&b.model_id))
    });
    let rows = sorted
        .into_iter()
        .enumerate()
        .map(|(i, r)| RankRow {
            model_id: r.model_id.clone(),
            acc1: r.acc.acc1,
            acc5: r.acc.acc5,
            acc10: r.acc.acc10,
            rank: i + 1,
        })
        .collect();
    Ok(RankTable {
        dataset: first.dataset.clone(),
        rows,
    })
}

fn model_set_mismatch<'a>(
    a: impl Iterator<Item = &'a str>,
    b: impl Iterator<Item = &'a str>,
) -> Option<AnalysisError> {
    let a: BTreeSet<&str> = a.collect();
    let b: BTreeSet<&str> = b.collect();
    (a != b).then(|| AnalysisError::ModelSetMismatch {
        only_a: a.difference(&b).map(|s| s.to_string()).collect(),
        only_b: b.difference(&a).map(|s| s.to_string()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankDelta {
    pub model_id: String,
    pub rank_a: usize,
    pub rank_b: usize,
    /// `rank_b - rank_a`.
    pub delta: i64,
}

/// Rank change of every model from `a` to `b`, largest moves first.
pub fn rank_deltas(a: &RankTable, b: &RankTable) -> Result<Vec<RankDelta>, AnalysisError> {
    if let Some(e) = model_set_mismatch(
        a.rows.iter().map(|r| r.model_id.as_str()),
        b.rows.iter().map(|r| r.model_id.as_str()),
    ) {
        return Err(e);
    }
    let in_b: HashMap<&str, usize> = b.rows.iter().map(|r| (r.model_id.as_str(), r.rank)).collect();
    let mut out: Vec<RankDelta> = a
        .rows
        .iter()
        .map(|r| {
            let rank_b = in_b[r.model_id.as_str()];
            RankDelta {
                model_id: r.model_id.clone(),
                rank_a: r.rank,
                rank_b,
                delta: rank_b as i64 - r.rank as i64,
            }
        })
        .collect();
    out.sort_by(|x, y| {
        y.delta
            .abs()
            .cmp(&x.delta.abs())
            .then_with(|| x.model_id.cmp(&y.model_id))
    });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityFrequency {
    pub entity: String,
    /// Fraction of prompts with this entity in the top-k.
    pub pct_of_prompts: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniquePct {
    pub top1: f64,
    pub top5: f64,
    pub top10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverconfidenceProfile {
    pub model_id: String,
    pub dataset: String,
    pub prompts: usize,
    pub pool_size: usize,
    /// Up to 15 entities by top-10 frequency, most frequent first.
    pub top_entities: Vec<EntityFrequency>,
    /// Distinct entities seen in the top-k slice over all prompts, divided by
    /// the pool size.
    pub unique_pct: UniquePct,
}

pub const OVERCONFIDENCE_TOP_N: usize = 15;

/// Frequency of each entity in the top-`k` predictions across prompts, most
/// frequent first (ties by entity).
pub fn entity_frequencies(result: &RunResult, k: usize) -> Vec<EntityFrequency> {
    let prompts = result.per_record.len();
    if prompts == 0 {
        return Vec::new();
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for p in &result.per_record {
        let slice: BTreeSet<&str> = p.ranked_entities.iter().take(k).map(String::as_str).collect();
        for e in slice {
            *counts.entry(e).or_insert(0) += 1;
        }
    }
    let mut out: Vec<EntityFrequency> = counts
        .into_iter()
        .map(|(e, c)| EntityFrequency {
            entity: e.to_string(),
            pct_of_prompts: c as f64 / prompts as f64,
        })
        .collect();
    out.sort_by(|a, b| {
        b.pct_of_prompts
            .total_cmp(&a.pct_of_prompts)
            .then_with(|| a.entity.cmp(&b.entity))
    });
    out
}

fn unique_fraction(result: &RunResult, k: usize, pool_size: usize) -> f64 {
    let distinct: BTreeSet<&str> = result
        .per_record
        .iter()
        .flat_map(|p| p.ranked_entities.iter().take(k))
        .map(String::as_str)
        .collect();
    distinct.len() as f64 / pool_size as f64
}

pub fn overconfidence(
    result: &RunResult,
    pool: &CandidatePool,
) -> Result<OverconfidenceProfile, AnalysisError> {
    if result.per_record.is_empty() || pool.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let needed = 10.min(pool.len());
    let stored = result
        .per_record
        .iter()
        .map(|p| p.ranked_entities.len())
        .min()
        .unwrap_or(0);
    if stored < needed {
        return Err(AnalysisError::InsufficientDepth { stored, needed });
    }
    let mut top_entities = entity_frequencies(result, 10);
    top_entities.truncate(OVERCONFIDENCE_TOP_N);
    Ok(OverconfidenceProfile {
        model_id: result.model_id.clone(),
        dataset: result.dataset.clone(),
        prompts: result.per_record.len(),
        pool_size: pool.len(),
        top_entities,
        unique_pct: UniquePct {
            top1: unique_fraction(result, 1, pool.len()),
            top5: unique_fraction(result, 5, pool.len()),
            top10: unique_fraction(result, 10, pool.len()),
        },
    })
}

/// One (accuracy, perplexity) observation; `label` is a model id or a
/// dataset name depending on how the points were built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationPoint {
    pub label: String,
    pub mean_acc1: f64,
    pub mean_ppl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub pearson_r: f64,
    /// Two-sided, from Student's t with `n - 2` degrees of freedom.
    pub p_value: f64,
    pub n: usize,
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, AnalysisError> {
    let n = xs.len().min(ys.len());
    if n < 3 {
        return Err(AnalysisError::TooFewPoints(n));
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalysisError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn correlate_acc_ppl(points: &[CorrelationPoint]) -> Result<Correlation, AnalysisError> {
    let xs: Vec<f64> = points.iter().map(|p| p.mean_acc1).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mean_ppl).collect();
    let r = pearson(&xs, &ys)?;
    let n = points.len();
    let df = (n - 2) as f64;
    let p_value = if r.abs() >= 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df ≥ 1");
        (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
    };
    Ok(Correlation {
        pearson_r: r,
        p_value,
        n,
    })
}

/// Mean perplexity of one model on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PplPoint {
    pub model_id: String,
    pub dataset: String,
    pub mean_ppl: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointGrouping {
    /// One point per dataset: Acc@1 and PPL each averaged over models.
    #[default]
    PerDataset,
    /// One point per model: Acc@1 and PPL each averaged over datasets.
    PerModel,
}

/// Builds correlation points from accuracy runs and perplexity values of one
/// probing style. PPL values above `outlier_threshold` are left out of the
/// PPL average only; groups with no accuracy or no remaining PPL are dropped.
pub fn correlation_points(
    runs: &[RunResult],
    ppl: &[PplPoint],
    grouping: PointGrouping,
    outlier_threshold: Option<f64>,
) -> Vec<CorrelationPoint> {
    let key_run = |r: &RunResult| match grouping {
        PointGrouping::PerDataset => r.dataset.clone(),
        PointGrouping::PerModel => r.model_id.clone(),
    };
    let key_ppl = |p: &PplPoint| match grouping {
        PointGrouping::PerDataset => p.dataset.clone(),
        PointGrouping::PerModel => p.model_id.clone(),
    };
    let mut acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in runs {
        acc.entry(key_run(r)).or_default().push(r.acc.acc1);
    }
    let mut perp: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for p in ppl {
        if outlier_threshold.is_some_and(|t| p.mean_ppl > t) {
            continue;
        }
        perp.entry(key_ppl(p)).or_default().push(p.mean_ppl);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    acc.into_iter()
        .filter_map(|(label, a)| {
            let p = perp.get(&label)?;
            Some(CorrelationPoint {
                mean_acc1: mean(&a),
                mean_ppl: mean(p),
                label,
            })
        })
        .collect()
}

/// Unweighted mean of the runs' Acc@1/5/10.
pub fn macro_average(runs: &[RunResult]) -> Accuracy {
    if runs.is_empty() {
        return Accuracy::default();
    }
    let n = runs.len() as f64;
    Accuracy {
        acc1: runs.iter().map(|r| r.acc.acc1).sum::<f64>() / n,
        acc5: runs.iter().map(|r| r.acc.acc5).sum::<f64>() / n,
        acc10: runs.iter().map(|r| r.acc.acc10).sum::<f64>() / n,
    }
}

fn diff(b: &Accuracy, a: &Accuracy) -> Accuracy {
    Accuracy {
        acc1: b.acc1 - a.acc1,
        acc5: b.acc5 - a.acc5,
        acc10: b.acc10 - a.acc10,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelRow {
    pub model_id: String,
    pub template_free: Accuracy,
    pub template_based: Accuracy,
    /// `template_based - template_free`.
    pub delta: Accuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelReport {
    pub dataset: String,
    /// Sorted by model id.
    pub rows: Vec<ParallelRow>,
    pub average_template_free: Accuracy,
    pub average_template_based: Accuracy,
    pub average_delta: Accuracy,
    /// Model with the most negative Acc@1 delta, if any model dropped.
    pub largest_drop: Option<String>,
}

/// Compares each model's scores on a template-free dataset with its scores on
/// the parallel template-based dataset.
pub fn parallel_score_report(
    tf: &[RunResult],
    tb: &[RunResult],
) -> Result<ParallelReport, AnalysisError> {
    if tf.is_empty() || tb.is_empty() {
        return Err(AnalysisError::Empty);
    }
    check_unique_models(tf.iter().map(|r| r.model_id.as_str()))?;
    check_unique_models(tb.iter().map(|r| r.model_id.as_str()))?;
    if let Some(e) = model_set_mismatch(
        tf.iter().map(|r| r.model_id.as_str()),
        tb.iter().map(|r| r.model_id.as_str()),
    ) {
        return Err(e);
    }
    let tb_by: HashMap<&str, &RunResult> = tb.iter().map(|r| (r.model_id.as_str(), r)).collect();
    let mut rows: Vec<ParallelRow> = tf
        .iter()
        .map(|f| {
            let b = tb_by[f.model_id.as_str()];
            ParallelRow {
                model_id: f.model_id.clone(),
                template_free: f.acc,
                template_based: b.acc,
                delta: diff(&b.acc, &f.acc),
            }
        })
        .collect();
    rows.sort_by(|a, b| a.model_id.cmp(&b.model_id));
    let average_template_free = macro_average(tf);
    let average_template_based = macro_average(tb);
    let largest_drop = rows
        .iter()
        .filter(|r| r.delta.acc1 < 0.0)
        .min_by(|a, b| a.delta.acc1.total_cmp(&b.delta.acc1))
        .map(|r| r.model_id.clone());
    Ok(ParallelReport {
        dataset: tf[0].dataset.clone(),
        rows,
        average_delta: diff(&average_template_based, &average_template_free),
        average_template_free,
        average_template_based,
        largest_drop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::RecordPrediction;

    fn run(model: &str, a1: f64, a5: f64, a10: f64) -> RunResult {
        RunResult {
            model_id: model.into(),
            dataset: "d".into(),
            per_record: Vec::new(),
            acc: Accuracy {
                acc1: a1,
                acc5: a5,
                acc10: a10,
            },
            acc_at_k: BTreeMap::new(),
            failures: Vec::new(),
            pool_size: 0,
            top_k_stored: 10,
            ppl: None,
        }
    }

    #[test]
    fn tie_break_chain() {
        let t = rank_models(&[
            run("b", 0.1, 0.5, 0.9),
            run("a", 0.1, 0.5, 0.9),
            run("c", 0.1, 0.6, 0.1),
            run("d", 0.2, 0.0, 0.0),
        ])
        .unwrap();
        let order: Vec<_> = t.rows.iter().map(|r| r.model_id.as_str()).collect();
        assert_eq!(order, vec!["d", "c", "a", "b"]);
        assert_eq!(t.rank_of("b"), Some(4));
        assert_eq!(rank_models(&[run("x", 0.0, 0.0, 0.0)]).unwrap().rows[0].rank, 1);
    }

    #[test]
    fn rank_errors() {
        assert_eq!(rank_models(&[]), Err(AnalysisError::Empty));
        assert!(matches!(
            rank_models(&[run("a", 0.1, 0.1, 0.1), run("a", 0.2, 0.2, 0.2)]),
            Err(AnalysisError::DuplicateModel(_))
        ));
        let mut other = run("b", 0.1, 0.1, 0.1);
        other.dataset = "e".into();
        assert!(matches!(
            rank_models(&[run("a", 0.1, 0.1, 0.1), other]),
            Err(AnalysisError::MixedDatasets(_))
        ));
    }

    #[test]
    fn deltas() {
        let a = rank_models(&[run("x", 0.3, 0.0, 0.0), run("y", 0.2, 0.0, 0.0), run("z", 0.1, 0.0, 0.0)]).unwrap();
        let b = rank_models(&[run("x", 0.1, 0.0, 0.0), run("y", 0.2, 0.0, 0.0), run("z", 0.3, 0.0, 0.0)]).unwrap();
        let d = rank_deltas(&a, &b).unwrap();
        assert_eq!(d.iter().map(|x| x.delta).sum::<i64>(), 0);
        assert_eq!((d[0].model_id.as_str(), d[0].delta), ("x", 2));
        assert!(rank_deltas(&a, &a).unwrap().iter().all(|x| x.delta == 0));
        let c = rank_models(&[run("x", 0.1, 0.0, 0.0)]).unwrap();
        assert!(matches!(rank_deltas(&a, &c), Err(AnalysisError::ModelSetMismatch { .. })));
    }

    fn with_predictions(preds: &[&[&str]]) -> RunResult {
        let mut r = run("m", 0.0, 0.0, 0.0);
        r.per_record = preds
            .iter()
            .enumerate()
            .map(|(i, p)| RecordPrediction {
                record_id: i.to_string(),
                ranked_entities: p.iter().map(|s| s.to_string()).collect(),
                gold_rank: Some(1),
            })
            .collect();
        r
    }

    #[test]
    fn hand_counted_frequencies() {
        let r = with_predictions(&[&["a", "b"], &["a", "c"], &["b", "a"], &["a", "b"], &["c", "d"]]);
        let top1 = entity_frequencies(&r, 1);
        assert_eq!(top1[0], EntityFrequency { entity: "a".into(), pct_of_prompts: 0.6 });
        let top2 = entity_frequencies(&r, 2);
        let get = |e: &str| top2.iter().find(|f| f.entity == e).unwrap().pct_of_prompts;
        assert_eq!((get("a"), get("b"), get("c"), get("d")), (0.8, 0.6, 0.4, 0.2));
        let pool = CandidatePool::new("p", ["a", "b", "c", "d"]).unwrap();
        let prof = overconfidence(&r, &pool);
        assert!(matches!(prof, Err(AnalysisError::InsufficientDepth { stored: 2, needed: 4 })));
    }

    #[test]
    fn pearson_extremes_and_p() {
        let pts = |ys: &[f64]| -> Vec<CorrelationPoint> {
            ys.iter()
                .enumerate()
                .map(|(i, y)| CorrelationPoint {
                    label: i.to_string(),
                    mean_acc1: i as f64,
                    mean_ppl: *y,
                })
                .collect()
        };
        assert!((correlate_acc_ppl(&pts(&[1.0, 3.0, 5.0, 7.0])).unwrap().pearson_r - 1.0).abs() < 1e-12);
        assert!((correlate_acc_ppl(&pts(&[7.0, 5.0, 3.0])).unwrap().pearson_r + 1.0).abs() < 1e-12);
        assert_eq!(correlate_acc_ppl(&pts(&[1.0, 1.0, 1.0])), Err(AnalysisError::ZeroVariance));
        assert_eq!(correlate_acc_ppl(&pts(&[1.0, 2.0])), Err(AnalysisError::TooFewPoints(2)));
        // x = 0..5, y = [1, 3, 2, 5, 4]: r = 0.8, t = 0.8·sqrt(3/0.36) ≈ 2.3094,
        // two-sided p with 3 df ≈ 0.1041 (reference: scipy.stats.pearsonr).
        let c = correlate_acc_ppl(&pts(&[1.0, 3.0, 2.0, 5.0, 4.0])).unwrap();
        assert!((c.pearson_r - 0.8).abs() < 1e-12);
        assert!((c.p_value - 0.104088).abs() < 1e-5);
    }

    #[test]
    fn points_per_model_and_dataset() {
        let mut runs = vec![run("m1", 0.2, 0.0, 0.0), run("m2", 0.4, 0.0, 0.0)];
        let mut r = run("m1", 0.6, 0.0, 0.0);
        r.dataset = "e".into();
        runs.push(r);
        let ppl = vec![
            PplPoint { model_id: "m1".into(), dataset: "d".into(), mean_ppl: 10.0 },
            PplPoint { model_id: "m2".into(), dataset: "d".into(), mean_ppl: 1e9 },
            PplPoint { model_id: "m1".into(), dataset: "e".into(), mean_ppl: 30.0 },
        ];
        let per_ds = correlation_points(&runs, &ppl, PointGrouping::PerDataset, Some(1e6));
        assert_eq!(per_ds.len(), 2);
        assert!((per_ds[0].mean_acc1 - 0.3).abs() < 1e-12);
        assert_eq!(per_ds[0].mean_ppl, 10.0);
        let per_model = correlation_points(&runs, &ppl, PointGrouping::PerModel, Some(1e6));
        assert_eq!(per_model.len(), 1);
        assert_eq!((per_model[0].label.as_str(), per_model[0].mean_ppl), ("m1", 20.0));
    }

    #[test]
    fn parallel_identical_is_zero() {
        let runs = vec![run("a", 0.1, 0.2, 0.3), run("b", 0.3, 0.4, 0.5)];
        let rep = parallel_score_report(&runs, &runs).unwrap();
        assert_eq!(rep.average_delta, Accuracy::default());
        assert!(rep.largest_drop.is_none());
        assert!((rep.average_template_free.acc1 - 0.2).abs() < 1e-12);
        let fewer = vec![run("a", 0.0, 0.0, 0.0)];
        assert!(matches!(
            parallel_score_report(&runs, &fewer),
            Err(AnalysisError::ModelSetMismatch { .. })
        ));
    }
}
