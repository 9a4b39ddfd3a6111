//! The model-scoring contract.
//!
//! A [`Scorer`] answers two questions about a masked language model:
//!
//! * `score_candidates`: with the placeholder expanded to `n` mask tokens
//!   (`n` = the candidate's token count), what log-probability does the model
//!   give each candidate token at its own mask position, all in one pass?
//! * `pseudo_loglikelihoods`: for each token of a text, what is its
//!   log-probability when it alone is masked?
//!
//! Implementations: [`reference::UniformScorer`] and [`reference::UnigramScorer`]
//! (closed-form, used as test oracles), [`remote::RemoteScorer`] (HTTP wire
//! protocol) and [`cache::CachedScorer`] (on-disk memoisation of any scorer).

pub mod cache;
pub mod reference;
pub mod remote;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::domain::{placeholder_count, ScoredCandidate, MASK};

pub use cache::CachedScorer;
pub use reference::{UniformScorer, UnigramScorer};
pub use remote::{RemoteConfig, RemoteScorer};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorerInfo {
    pub model_id: String,
    #[serde(rename = "mask_token")]
    pub native_mask_token: String,
    pub max_sequence_tokens: usize,
}

impl ScorerInfo {
    pub fn validate(&self) -> Result<(), ScorerError> {
        if self.model_id.is_empty() || self.native_mask_token.is_empty() {
            return Err(ScorerError::Protocol(
                "scorer info has an empty model_id or mask_token".into(),
            ));
        }
        if self.max_sequence_tokens == 0 {
            return Err(ScorerError::Protocol(
                "scorer info has max_sequence_tokens = 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScorerError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("candidate {candidate:?} yields zero tokens")]
    EmptyCandidate { candidate: String },
    #[error("sequence of {tokens} tokens exceeds the scorer limit of {max}")]
    SequenceTooLong { tokens: usize, max: usize },
    /// A semantic rejection reported by a remote scorer (HTTP 422).
    #[error("scorer rejected request: {message}{}", candidate.as_ref().map(|c| format!(" (candidate {c:?})")).unwrap_or_default())]
    Rejected {
        message: String,
        candidate: Option<String>,
    },
    /// Network failure or 5xx; worth retrying.
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    /// The service answered, but not according to the protocol.
    #[error("protocol violation: {0}")]
    Protocol(String),
}

impl ScorerError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ScorerError::Transport { .. })
    }
}

/// A prompt with one placeholder and the candidates to score at it.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CandidateScoreRequest<'a> {
    pub masked_text: &'a str,
    pub candidates: &'a [String],
}

impl<'a> CandidateScoreRequest<'a> {
    pub fn new(masked_text: &'a str, candidates: &'a [String]) -> Result<Self, ScorerError> {
        let count = placeholder_count(masked_text);
        if count != 1 {
            return Err(ScorerError::InvalidRequest(format!(
                "masked_text must contain {MASK} exactly once, found {count}"
            )));
        }
        if candidates.is_empty() {
            return Err(ScorerError::InvalidRequest("no candidates".into()));
        }
        let mut seen = HashSet::with_capacity(candidates.len());
        if let Some(dup) = candidates.iter().find(|c| !seen.insert(c.as_str())) {
            return Err(ScorerError::InvalidRequest(format!(
                "duplicate candidate {dup:?}"
            )));
        }
        Ok(Self {
            masked_text,
            candidates,
        })
    }
}

/// A text whose tokens are each masked in turn.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PllRequest<'a> {
    pub text: &'a str,
}

impl<'a> PllRequest<'a> {
    /// Requires non-blank text without the dataset placeholder.
    pub fn new(text: &'a str) -> Result<Self, ScorerError> {
        if placeholder_count(text) > 0 {
            return Err(ScorerError::InvalidRequest(format!(
                "text must not contain {MASK}"
            )));
        }
        Self::allowing_placeholder(text)
    }

    /// Like [`PllRequest::new`] but lets the placeholder through, for measuring
    /// prompts as stored rather than with the gold entity substituted.
    pub fn allowing_placeholder(text: &'a str) -> Result<Self, ScorerError> {
        if text.trim().is_empty() {
            return Err(ScorerError::InvalidRequest("text is empty".into()));
        }
        Ok(Self { text })
    }
}

pub trait Scorer: Send + Sync {
    fn info(&self) -> Result<ScorerInfo, ScorerError>;

    /// One [`ScoredCandidate`] per request candidate, in request order.
    fn score_candidates(
        &self,
        req: &CandidateScoreRequest<'_>,
    ) -> Result<Vec<ScoredCandidate>, ScorerError>;

    /// `log p(x_i | x_{≠i})` for every token `x_i` of the text.
    fn pseudo_loglikelihoods(&self, req: &PllRequest<'_>) -> Result<Vec<f64>, ScorerError>;
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn info(&self) -> Result<ScorerInfo, ScorerError> {
        (**self).info()
    }
    fn score_candidates(
        &self,
        req: &CandidateScoreRequest<'_>,
    ) -> Result<Vec<ScoredCandidate>, ScorerError> {
        (**self).score_candidates(req)
    }
    fn pseudo_loglikelihoods(&self, req: &PllRequest<'_>) -> Result<Vec<f64>, ScorerError> {
        (**self).pseudo_loglikelihoods(req)
    }
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn info(&self) -> Result<ScorerInfo, ScorerError> {
        (**self).info()
    }
    fn score_candidates(
        &self,
        req: &CandidateScoreRequest<'_>,
    ) -> Result<Vec<ScoredCandidate>, ScorerError> {
        (**self).score_candidates(req)
    }
    fn pseudo_loglikelihoods(&self, req: &PllRequest<'_>) -> Result<Vec<f64>, ScorerError> {
        (**self).pseudo_loglikelihoods(req)
    }
}

/// Whitespace tokenisation used by the reference scorers.
pub fn whitespace_tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
}

/// Token count of the prompt once the placeholder is expanded to `candidate`.
pub(crate) fn expanded_len(masked_text: &str, candidate_tokens: usize) -> usize {
    let (before, after) = masked_text.split_once(MASK).unwrap_or((masked_text, ""));
    whitespace_tokens(before).count() + candidate_tokens + whitespace_tokens(after).count()
}
