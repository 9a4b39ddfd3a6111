//! Shared test scorer and fixture generator.
#![allow(dead_code)]

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use cloze_bench::domain::{CandidatePool, ProbeRecord, ScoredCandidate, Style};
use cloze_bench::scorer::{CandidateScoreRequest, PllRequest, Scorer, ScorerError, ScorerInfo};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Token log-probs for `entity` at the placeholder of `text`. A small value
/// range makes ties between candidates common.
pub fn logprobs(salt: u64, text: &str, entity: &str) -> Vec<f64> {
    let mut h = DefaultHasher::new();
    (salt, text, entity).hash(&mut h);
    let h = h.finish();
    let n = 1 + (h % 3) as usize;
    (0..n).map(|i| -0.5 * (((h >> (8 * (i + 1))) % 6) as f64 + 1.0)).collect()
}

/// Context-dependent scorer backed by [`logprobs`].
#[derive(Debug, Clone)]
pub struct HashScorer {
    pub salt: u64,
    pub model_id: String,
    /// Prompts containing this marker are rejected.
    pub fail_marker: Option<String>,
}

impl HashScorer {
    pub fn new(salt: u64) -> Self {
        Self {
            salt,
            model_id: format!("hash-{salt}"),
            fail_marker: None,
        }
    }
}

impl Scorer for HashScorer {
    fn info(&self) -> Result<ScorerInfo, ScorerError> {
        Ok(ScorerInfo {
            model_id: self.model_id.clone(),
            native_mask_token: "[MASK]".into(),
            max_sequence_tokens: 512,
        })
    }

    fn score_candidates(&self, req: &CandidateScoreRequest<'_>) -> Result<Vec<ScoredCandidate>, ScorerError> {
        if let Some(m) = &self.fail_marker {
            if req.masked_text.contains(m.as_str()) {
                return Err(ScorerError::Rejected {
                    message: "marked".into(),
                    candidate: None,
                });
            }
        }
        Ok(req
            .candidates
            .iter()
            .map(|c| ScoredCandidate::new(c.as_str(), logprobs(self.salt, req.masked_text, c)).unwrap())
            .collect())
    }

    fn pseudo_loglikelihoods(&self, req: &PllRequest<'_>) -> Result<Vec<f64>, ScorerError> {
        Ok(req
            .text
            .split_whitespace()
            .map(|t| logprobs(self.salt, req.text, t)[0])
            .collect())
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// 1 + the number of candidates that beat the gold: a higher mean, or an
/// equal mean and a smaller entity string.
pub fn oracle_rank(salt: u64, text: &str, gold: &str, pool: &[String]) -> usize {
    let g = mean(&logprobs(salt, text, gold));
    1 + pool
        .iter()
        .filter(|c| c.as_str() != gold)
        .filter(|c| {
            let m = mean(&logprobs(salt, text, c));
            m > g || (m == g && c.as_str() < gold)
        })
        .count()
}

pub fn oracle_acc(ranks: &[usize], k: usize) -> f64 {
    ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

pub struct Fixture {
    pub records: Vec<ProbeRecord>,
    pub pool: CandidatePool,
    pub salt: u64,
}

pub fn record(id: &str, text: &str, gold: &str) -> ProbeRecord {
    ProbeRecord {
        id: id.into(),
        masked_text: text.into(),
        gold_entity: gold.into(),
        relation: None,
        subject: None,
        style: Style::TemplateFree,
        template_id: None,
        provenance: None,
    }
}

/// Random dataset of up to 40 prompts over a pool of 2 to 30 entities, some
/// of them multi-word.
pub fn random_fixture(seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool_size = rng.gen_range(2..=30);
    let entities: Vec<String> = (0..pool_size)
        .map(|i| {
            if rng.gen_bool(0.3) {
                format!("ent{i} part")
            } else {
                format!("ent{i}")
            }
        })
        .collect();
    let n = rng.gen_range(1..=40);
    let records = (0..n)
        .map(|j| {
            let gold = &entities[rng.gen_range(0..pool_size)];
            let text = if rng.gen_bool(0.5) {
                format!("prompt {j} says [MASK] .")
            } else {
                format!("[MASK] is what prompt {j} wants")
            };
            record(&format!("r{j}"), &text, gold)
        })
        .collect();
    Fixture {
        records,
        pool: CandidatePool::new("fixture", entities).unwrap(),
        salt: rng.gen(),
    }
}
