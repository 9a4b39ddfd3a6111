//! Pseudo-perplexity: `exp(-(1/t) Σ ln p(x_i | x without x_i))`, natural log.

use serde::{Deserialize, Serialize};

use crate::domain::{ProbeRecord, RecordFailure};
use crate::exec;
use crate::scorer::{PllRequest, Scorer, ScorerError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PllError {
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error("no token log-likelihoods to average")]
    NoTokens,
    #[error("log-likelihoods must be finite")]
    NonFinite,
    #[error("no perplexity values to summarize")]
    Empty,
    #[error("every value exceeds the outlier threshold {0}")]
    AllExcluded(f64),
}

pub fn perplexity_from_loglikelihoods(lls: &[f64]) -> Result<f64, PllError> {
    if lls.is_empty() {
        return Err(PllError::NoTokens);
    }
    if lls.iter().any(|v| !v.is_finite()) {
        return Err(PllError::NonFinite);
    }
    let mean = lls.iter().sum::<f64>() / lls.len() as f64;
    Ok((-mean).exp())
}

pub fn pseudo_perplexity<S: Scorer + ?Sized>(text: &str, scorer: &S) -> Result<f64, PllError> {
    let lls = scorer.pseudo_loglikelihoods(&PllRequest::new(text)?)?;
    perplexity_from_loglikelihoods(&lls)
}

/// Which text of a prompt is scored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptTextMode {
    /// The complete sentence, placeholder replaced by the gold entity.
    #[default]
    GoldSubstituted,
    /// The masked prompt as stored, placeholder included.
    Placeholder,
}

pub fn prompt_perplexity<S: Scorer + ?Sized>(
    record: &ProbeRecord,
    scorer: &S,
    mode: PromptTextMode,
) -> Result<f64, PllError> {
    let lls = match mode {
        PromptTextMode::GoldSubstituted => {
            let text = record.reconstruct();
            scorer.pseudo_loglikelihoods(&PllRequest::new(&text)?)?
        }
        PromptTextMode::Placeholder => {
            scorer.pseudo_loglikelihoods(&PllRequest::allowing_placeholder(&record.masked_text)?)?
        }
    };
    perplexity_from_loglikelihoods(&lls)
}

/// Per-record PPL in input order; failing records are returned separately.
pub fn dataset_perplexities<S: Scorer + ?Sized>(
    records: &[ProbeRecord],
    scorer: &S,
    mode: PromptTextMode,
    concurrency: usize,
) -> (Vec<(String, f64)>, Vec<RecordFailure>) {
    let outcomes = exec::map_ordered(records, concurrency, |r| {
        prompt_perplexity(r, scorer, mode).map_err(|e| RecordFailure {
            record_id: r.id.clone(),
            reason: e.to_string(),
        })
    });
    let mut values = Vec::new();
    let mut failures = Vec::new();
    for (r, o) in records.iter().zip(outcomes) {
        match o {
            Ok(v) => values.push((r.id.clone(), v)),
            Err(f) => failures.push(f),
        }
    }
    (values, failures)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PplSummary {
    pub model_id: String,
    pub dataset: String,
    pub text_ids: Vec<String>,
    /// Parallel to `text_ids`; includes excluded values.
    pub per_text_ppl: Vec<f64>,
    /// Mean over the values not above `threshold`.
    pub mean_ppl: f64,
    /// Number of values in the mean.
    pub n: usize,
    pub excluded: Vec<String>,
    pub threshold: Option<f64>,
    #[serde(default)]
    pub failures: Vec<RecordFailure>,
}

/// Averages per-text PPL, dropping values strictly above `threshold`.
pub fn summarize(
    model_id: &str,
    dataset: &str,
    values: &[(String, f64)],
    threshold: Option<f64>,
) -> Result<PplSummary, PllError> {
    if values.is_empty() {
        return Err(PllError::Empty);
    }
    let mut excluded = Vec::new();
    let mut sum = 0.0;
    let mut n = 0usize;
    for (id, v) in values {
        if threshold.is_some_and(|t| *v > t) {
            excluded.push(id.clone());
        } else {
            sum += v;
            n += 1;
        }
    }
    if n == 0 {
        return Err(PllError::AllExcluded(threshold.unwrap_or(f64::NAN)));
    }
    Ok(PplSummary {
        model_id: model_id.to_string(),
        dataset: dataset.to_string(),
        text_ids: values.iter().map(|(id, _)| id.clone()).collect(),
        per_text_ppl: values.iter().map(|(_, v)| *v).collect(),
        mean_ppl: sum / n as f64,
        n,
        excluded,
        threshold,
        failures: Vec::new(),
    })
}
