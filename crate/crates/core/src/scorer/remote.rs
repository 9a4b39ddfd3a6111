//! HTTP client for scorers speaking the JSON wire protocol.
//!
//! ```text
//! GET  /info  → {"model_id", "mask_token", "max_sequence_tokens"}
//! POST /score {"masked_text", "candidates"} → {"scores": [{"candidate", "token_logprobs"}]}
//! POST /pll   {"text"} → {"token_logprobs"}
//! 422 {"error", "candidate"} = semantic rejection, 5xx = transient
//! ```

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use reqwest::blocking::{Client, Response};
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{CandidateScoreRequest, PllRequest, Scorer, ScorerError, ScorerInfo};
use crate::domain::ScoredCandidate;

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// Retries after the first attempt, for transient failures only.
    pub max_retries: u32,
    /// Delay before the first retry; doubles on each further retry.
    pub backoff_base: Duration,
    pub max_in_flight: usize,
    pub timeout: Duration,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            max_retries: 3,
            backoff_base: Duration::from_millis(250),
            max_in_flight: 8,
            timeout: Duration::from_secs(120),
        }
    }
}

/// Counting semaphore bounding concurrent requests.
struct Permits {
    available: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
    fn new(n: usize) -> Self {
        Self {
            available: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap_or_else(|p| p.into_inner());
        while *n == 0 {
            n = self.cv.wait(n).unwrap_or_else(|p| p.into_inner());
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.available.lock().unwrap_or_else(|p| p.into_inner());
        *n += 1;
        self.0.cv.notify_one();
    }
}

pub struct RemoteScorer {
    base: String,
    client: Client,
    config: RemoteConfig,
    permits: Permits,
    info: Mutex<Option<ScorerInfo>>,
}

#[derive(Deserialize)]
struct ScoreResponse {
    scores: Vec<WireScore>,
}

#[derive(Serialize, Deserialize)]
struct WireScore {
    candidate: String,
    token_logprobs: Vec<f64>,
}

#[derive(Deserialize)]
struct PllResponse {
    token_logprobs: Vec<f64>,
}

#[derive(Deserialize)]
struct ErrorBody {
    error: String,
    #[serde(default)]
    candidate: Option<String>,
}

impl RemoteScorer {
    pub fn new(endpoint: &str, config: RemoteConfig) -> Result<Self, ScorerError> {
        let client = Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ScorerError::InvalidRequest(format!("cannot build HTTP client: {e}")))?;
        Ok(Self {
            base: endpoint.trim_end_matches('/').to_string(),
            client,
            permits: Permits::new(config.max_in_flight),
            config,
            info: Mutex::new(None),
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    /// Runs `attempt` with retries on transient failures.
    fn with_retries<T>(&self, mut attempt: impl FnMut() -> Result<T, ScorerError>) -> Result<T, ScorerError> {
        let mut delay = self.config.backoff_base;
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            let result = {
                let _permit = self.permits.acquire();
                attempt()
            };
            match result {
                Err(ScorerError::Transport { message, .. }) => {
                    if attempts > self.config.max_retries {
                        return Err(ScorerError::Transport { message, attempts });
                    }
                    log::debug!("transient scorer failure ({message}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                    delay *= 2;
                }
                other => return other,
            }
        }
    }

    fn get_json<T: DeserializeOwned>(&self, path: &str) -> Result<T, ScorerError> {
        self.with_retries(|| {
            let resp = self.client.get(self.url(path)).send().map_err(transport)?;
            decode(resp)
        })
    }

    fn post_json<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ScorerError> {
        self.with_retries(|| {
            let resp = self
                .client
                .post(self.url(path))
                .json(body)
                .send()
                .map_err(transport)?;
            decode(resp)
        })
    }
}

fn transport(e: reqwest::Error) -> ScorerError {
    ScorerError::Transport {
        message: e.to_string(),
        attempts: 1,
    }
}

fn decode<T: DeserializeOwned>(resp: Response) -> Result<T, ScorerError> {
    let status = resp.status();
    let body = resp.text().map_err(transport)?;
    if status.is_success() {
        return serde_json::from_str(&body)
            .map_err(|e| ScorerError::Protocol(format!("malformed response body: {e}")));
    }
    if status.is_server_error() {
        return Err(ScorerError::Transport {
            message: format!("HTTP {status}"),
            attempts: 1,
        });
    }
    if status == StatusCode::UNPROCESSABLE_ENTITY {
        let err: ErrorBody = serde_json::from_str(&body).map_err(|e| {
            ScorerError::Protocol(format!("422 response without a valid error body: {e}"))
        })?;
        return Err(ScorerError::Rejected {
            message: err.error,
            candidate: err.candidate,
        });
    }
    Err(ScorerError::Protocol(format!("unexpected HTTP status {status}")))
}

fn check_logprobs(values: &[f64], what: &str) -> Result<(), ScorerError> {
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(ScorerError::Protocol(format!("{what}: non-finite log-probability {v}")));
    }
    Ok(())
}

impl Scorer for RemoteScorer {
    fn info(&self) -> Result<ScorerInfo, ScorerError> {
        if let Some(info) = self.info.lock().unwrap_or_else(|p| p.into_inner()).clone() {
            return Ok(info);
        }
        let info: ScorerInfo = self.get_json("/info")?;
        info.validate()?;
        *self.info.lock().unwrap_or_else(|p| p.into_inner()) = Some(info.clone());
        Ok(info)
    }

    fn score_candidates(
        &self,
        req: &CandidateScoreRequest<'_>,
    ) -> Result<Vec<ScoredCandidate>, ScorerError> {
        let resp: ScoreResponse = self.post_json("/score", req)?;
        if resp.scores.len() != req.candidates.len() {
            return Err(ScorerError::Protocol(format!(
                "expected {} scores, got {}",
                req.candidates.len(),
                resp.scores.len()
            )));
        }
        resp.scores
            .into_iter()
            .zip(req.candidates)
            .map(|(score, asked)| {
                if &score.candidate != asked {
                    return Err(ScorerError::Protocol(format!(
                        "response order mismatch: expected {asked:?}, got {:?}",
                        score.candidate
                    )));
                }
                check_logprobs(&score.token_logprobs, asked)?;
                ScoredCandidate::new(score.candidate, score.token_logprobs).ok_or_else(|| {
                    ScorerError::Protocol(format!("candidate {asked:?} has no token scores"))
                })
            })
            .collect()
    }

    fn pseudo_loglikelihoods(&self, req: &PllRequest<'_>) -> Result<Vec<f64>, ScorerError> {
        let resp: PllResponse = self.post_json("/pll", req)?;
        if resp.token_logprobs.is_empty() {
            return Err(ScorerError::Protocol("pll response is empty".into()));
        }
        check_logprobs(&resp.token_logprobs, "pll")?;
        Ok(resp.token_logprobs)
    }
}
