//! Closed-form reference scorers with whitespace tokenisation.
//!
//! Both ignore context, so every expected output can be written down by hand.

use std::collections::HashMap;

use super::{expanded_len, whitespace_tokens, CandidateScoreRequest, PllRequest, Scorer, ScorerError, ScorerInfo};
use crate::domain::{ScoredCandidate, MASK};

pub const DEFAULT_MAX_SEQUENCE_TOKENS: usize = 512;

fn score_with<F>(
    req: &CandidateScoreRequest<'_>,
    max_tokens: usize,
    token_logprob: F,
) -> Result<Vec<ScoredCandidate>, ScorerError>
where
    F: Fn(&str) -> f64,
{
    req.candidates
        .iter()
        .map(|candidate| {
            let logprobs: Vec<f64> = whitespace_tokens(candidate).map(&token_logprob).collect();
            let len = expanded_len(req.masked_text, logprobs.len());
            if len > max_tokens {
                return Err(ScorerError::SequenceTooLong {
                    tokens: len,
                    max: max_tokens,
                });
            }
            ScoredCandidate::new(candidate.as_str(), logprobs).ok_or_else(|| {
                ScorerError::EmptyCandidate {
                    candidate: candidate.clone(),
                }
            })
        })
        .collect()
}

fn pll_with<F>(req: &PllRequest<'_>, max_tokens: usize, token_logprob: F) -> Result<Vec<f64>, ScorerError>
where
    F: Fn(&str) -> f64,
{
    let out: Vec<f64> = whitespace_tokens(req.text).map(token_logprob).collect();
    if out.is_empty() {
        return Err(ScorerError::InvalidRequest("text has no tokens".into()));
    }
    if out.len() > max_tokens {
        return Err(ScorerError::SequenceTooLong {
            tokens: out.len(),
            max: max_tokens,
        });
    }
    Ok(out)
}

/// Every token has probability `1 / vocab_size`.
#[derive(Debug, Clone)]
pub struct UniformScorer {
    vocab_size: usize,
    max_sequence_tokens: usize,
}

impl UniformScorer {
    pub fn new(vocab_size: usize) -> Result<Self, ScorerError> {
        if vocab_size == 0 {
            return Err(ScorerError::InvalidRequest("vocabulary size must be positive".into()));
        }
        Ok(Self {
            vocab_size,
            max_sequence_tokens: DEFAULT_MAX_SEQUENCE_TOKENS,
        })
    }

    fn logprob(&self) -> f64 {
        -(self.vocab_size as f64).ln()
    }
}

impl Scorer for UniformScorer {
    fn info(&self) -> Result<ScorerInfo, ScorerError> {
        Ok(ScorerInfo {
            model_id: "ref-uniform".into(),
            native_mask_token: MASK.into(),
            max_sequence_tokens: self.max_sequence_tokens,
        })
    }

    fn score_candidates(
        &self,
        req: &CandidateScoreRequest<'_>,
    ) -> Result<Vec<ScoredCandidate>, ScorerError> {
        let lp = self.logprob();
        score_with(req, self.max_sequence_tokens, |_| lp)
    }

    fn pseudo_loglikelihoods(&self, req: &PllRequest<'_>) -> Result<Vec<f64>, ScorerError> {
        let lp = self.logprob();
        pll_with(req, self.max_sequence_tokens, |_| lp)
    }
}

/// Additively smoothed unigram model over a whitespace-tokenised corpus.
///
/// `p(w) = (count(w) + α) / (N + α·V)` where `N` is the corpus token count and
/// `V` the number of corpus types plus one shared type for unseen tokens.
#[derive(Debug, Clone)]
pub struct UnigramScorer {
    counts: HashMap<String, u64>,
    total: u64,
    alpha: f64,
    max_sequence_tokens: usize,
}

pub const DEFAULT_ALPHA: f64 = 1.0;

impl UnigramScorer {
    pub fn from_corpus(corpus: &str, alpha: f64) -> Result<Self, ScorerError> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(ScorerError::InvalidRequest(format!(
                "smoothing alpha must be positive and finite, got {alpha}"
            )));
        }
        let mut counts = HashMap::new();
        let mut total = 0u64;
        for tok in whitespace_tokens(corpus) {
            *counts.entry(tok.to_string()).or_insert(0) += 1;
            total += 1;
        }
        Ok(Self {
            counts,
            total,
            alpha,
            max_sequence_tokens: DEFAULT_MAX_SEQUENCE_TOKENS,
        })
    }

    pub fn with_max_sequence_tokens(mut self, max: usize) -> Self {
        self.max_sequence_tokens = max;
        self
    }

    /// Corpus types plus the unknown-token type.
    pub fn vocab_size(&self) -> usize {
        self.counts.len() + 1
    }

    pub fn token_logprob(&self, token: &str) -> f64 {
        let count = self.counts.get(token).copied().unwrap_or(0) as f64;
        let denom = self.total as f64 + self.alpha * self.vocab_size() as f64;
        ((count + self.alpha) / denom).ln()
    }
}

impl Scorer for UnigramScorer {
    fn info(&self) -> Result<ScorerInfo, ScorerError> {
        Ok(ScorerInfo {
            model_id: "ref-unigram".into(),
            native_mask_token: MASK.into(),
            max_sequence_tokens: self.max_sequence_tokens,
        })
    }

    fn score_candidates(
        &self,
        req: &CandidateScoreRequest<'_>,
    ) -> Result<Vec<ScoredCandidate>, ScorerError> {
        score_with(req, self.max_sequence_tokens, |t| self.token_logprob(t))
    }

    fn pseudo_loglikelihoods(&self, req: &PllRequest<'_>) -> Result<Vec<f64>, ScorerError> {
        pll_with(req, self.max_sequence_tokens, |t| self.token_logprob(t))
    }
}
