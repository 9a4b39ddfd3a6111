//! On-disk memoisation of scorer responses.
//!
//! Entries live in `<dir>/<sha256>.json`, keyed by model id, operation and the
//! canonical request JSON. A corrupt or unreadable entry is treated as a miss.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{CandidateScoreRequest, PllRequest, Scorer, ScorerError, ScorerInfo};
use crate::domain::ScoredCandidate;

pub const CACHE_ENV: &str = "CLOZE_BENCH_CACHE";

pub struct CachedScorer<S> {
    inner: S,
    dir: PathBuf,
}

impl<S: Scorer> CachedScorer<S> {
    pub fn new(inner: S, dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { inner, dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn key<R: Serialize>(&self, op: &str, req: &R) -> Result<PathBuf, ScorerError> {
        let model = self.inner.info()?.model_id;
        let body = serde_json::to_string(req).expect("request serializes");
        let mut h = Sha256::new();
        h.update(model.as_bytes());
        h.update([0]);
        h.update(op.as_bytes());
        h.update([0]);
        h.update(body.as_bytes());
        Ok(self.dir.join(format!("{}.json", hex::encode(h.finalize()))))
    }

    fn cached<R, T, F>(&self, op: &str, req: &R, compute: F) -> Result<T, ScorerError>
    where
        R: Serialize,
        T: Serialize + DeserializeOwned,
        F: FnOnce() -> Result<T, ScorerError>,
    {
        let path = self.key(op, req)?;
        if let Ok(text) = std::fs::read_to_string(&path) {
            if let Ok(v) = serde_json::from_str(&text) {
                return Ok(v);
            }
        }
        let value = compute()?;
        // Write-then-rename so concurrent readers never see a partial file.
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        let text = serde_json::to_string(&value).expect("response serializes");
        if std::fs::write(&tmp, text).is_ok() {
            let _ = std::fs::rename(&tmp, &path);
        }
        Ok(value)
    }
}

impl<S: Scorer> Scorer for CachedScorer<S> {
    fn info(&self) -> Result<ScorerInfo, ScorerError> {
        self.inner.info()
    }

    fn score_candidates(
        &self,
        req: &CandidateScoreRequest<'_>,
    ) -> Result<Vec<ScoredCandidate>, ScorerError> {
        self.cached("score", req, || self.inner.score_candidates(req))
    }

    fn pseudo_loglikelihoods(&self, req: &PllRequest<'_>) -> Result<Vec<f64>, ScorerError> {
        self.cached("pll", req, || self.inner.pseudo_loglikelihoods(req))
    }
}
