//! Run configuration: a TOML file mirroring [`RunConfig`], with command-line
//! flags taking precedence over file values.

use std::path::{Path, PathBuf};

use anyhow::Context;
use cloze_bench::domain::{CandidatePool, Provenance};
use cloze_bench::eval::EvalConfig;
use cloze_bench::scorer::cache::CACHE_ENV;
use cloze_bench::scorer::{CachedScorer, RemoteConfig, RemoteScorer, Scorer, UnigramScorer};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    Reference,
    Remote,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerSection {
    pub kind: Option<ScorerKind>,
    pub endpoint: Option<String>,
    pub corpus: Option<PathBuf>,
    pub alpha: Option<f64>,
    pub max_retries: Option<u32>,
    pub timeout_secs: Option<u64>,
    pub max_in_flight: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub k_values: Option<Vec<usize>>,
    pub top_k_stored: Option<usize>,
    pub concurrency_limit: Option<usize>,
    /// Text file with one entity per line replacing the gold pool.
    pub pool: Option<PathBuf>,
}

/// On-disk form; every field may be left to a flag.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub dataset_path: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub scorer: ScorerSection,
    #[serde(default)]
    pub eval: EvalSection,
}

impl ConfigFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())).into())
    }

    /// A file holding only the scorer table, with or without a `[scorer]` header.
    pub fn load_scorer(path: &Path) -> anyhow::Result<ScorerSection> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        #[derive(Deserialize)]
        struct Wrapped {
            scorer: ScorerSection,
        }
        if let Ok(w) = toml::from_str::<Wrapped>(&text) {
            return Ok(w.scorer);
        }
        toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())).into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ScorerConfig {
    Reference { corpus: PathBuf, alpha: f64 },
    Remote { endpoint: String, max_retries: u32, timeout_secs: u64, max_in_flight: usize },
}

/// Validated, fully resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub dataset_path: PathBuf,
    pub scorer: ScorerConfig,
    pub k_values: Vec<usize>,
    pub top_k_stored: usize,
    pub concurrency_limit: usize,
    pub pool: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

impl ScorerSection {
    /// Fields set in `over` win.
    pub fn merge(self, over: ScorerSection) -> ScorerSection {
        ScorerSection {
            kind: over.kind.or(self.kind),
            endpoint: over.endpoint.or(self.endpoint),
            corpus: over.corpus.or(self.corpus),
            alpha: over.alpha.or(self.alpha),
            max_retries: over.max_retries.or(self.max_retries),
            timeout_secs: over.timeout_secs.or(self.timeout_secs),
            max_in_flight: over.max_in_flight.or(self.max_in_flight),
        }
    }

    pub fn resolve(self) -> anyhow::Result<ScorerConfig> {
        let defaults = RemoteConfig::default();
        match self.kind {
            Some(ScorerKind::Reference) => {
                let corpus = self
                    .corpus
                    .ok_or_else(|| usage("reference scorer needs a corpus (scorer.corpus or --ref-corpus)"))?;
                let alpha = self.alpha.unwrap_or(cloze_bench::scorer::reference::DEFAULT_ALPHA);
                Ok(ScorerConfig::Reference { corpus, alpha })
            }
            Some(ScorerKind::Remote) => {
                let endpoint = self
                    .endpoint
                    .ok_or_else(|| usage("remote scorer needs an endpoint (scorer.endpoint or --endpoint)"))?;
                Ok(ScorerConfig::Remote {
                    endpoint,
                    max_retries: self.max_retries.unwrap_or(defaults.max_retries),
                    timeout_secs: self.timeout_secs.unwrap_or(defaults.timeout.as_secs()),
                    max_in_flight: self.max_in_flight.unwrap_or(defaults.max_in_flight),
                })
            }
            None => Err(usage("no scorer configured (scorer.kind or --scorer)")),
        }
    }
}

impl RunConfig {
    pub fn eval_config(&self) -> anyhow::Result<EvalConfig> {
        let pool_override = match &self.pool {
            Some(p) => Some(load_pool(p)?),
            None => None,
        };
        let cfg = EvalConfig {
            k_values: self.k_values.clone(),
            top_k_stored: self.top_k_stored,
            pool_override,
            concurrency_limit: self.concurrency_limit,
        };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }
}

/// File values overlaid with flags; missing required fields are usage errors.
pub fn resolve(file: ConfigFile, flags: ConfigFile, require_output: bool) -> anyhow::Result<RunConfig> {
    let dataset_path = flags
        .dataset_path
        .or(file.dataset_path)
        .ok_or_else(|| usage("no dataset (dataset_path or --dataset)"))?;
    let output_dir = match flags.output_dir.or(file.output_dir) {
        Some(d) => d,
        None if require_output => return Err(usage("no output directory (output_dir or --out)")),
        None => PathBuf::from("."),
    };
    let eval = EvalSection {
        k_values: flags.eval.k_values.or(file.eval.k_values),
        top_k_stored: flags.eval.top_k_stored.or(file.eval.top_k_stored),
        concurrency_limit: flags.eval.concurrency_limit.or(file.eval.concurrency_limit),
        pool: flags.eval.pool.or(file.eval.pool),
    };
    let d = EvalConfig::default();
    Ok(RunConfig {
        dataset_path,
        scorer: file.scorer.merge(flags.scorer).resolve()?,
        k_values: eval.k_values.unwrap_or(d.k_values),
        top_k_stored: eval.top_k_stored.unwrap_or(d.top_k_stored),
        concurrency_limit: eval.concurrency_limit.unwrap_or(d.concurrency_limit),
        pool: eval.pool,
        output_dir,
        seed: flags.seed.or(file.seed).unwrap_or(0),
    })
}

pub fn load_pool(path: &Path) -> anyhow::Result<CandidatePool> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading pool {}", path.display()))?;
    let entities: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    CandidatePool::new(path.display().to_string(), entities).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// SHA-256 over the canonical JSON of `value` plus the contents of `inputs`.
pub fn config_hash<T: Serialize>(value: &T, inputs: &[&Path]) -> anyhow::Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(value)?);
    for p in inputs {
        h.update([0]);
        h.update(std::fs::read(p).with_context(|| format!("hashing {}", p.display()))?);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn provenance<T: Serialize>(value: &T, inputs: &[&Path]) -> anyhow::Result<Provenance> {
    Ok(Provenance::new(config_hash(value, inputs)?))
}

/// Builds the configured scorer, wrapped in the response cache when
/// `CLOZE_BENCH_CACHE` names a directory.
pub fn make_scorer(cfg: &ScorerConfig) -> anyhow::Result<Box<dyn Scorer>> {
    let scorer: Box<dyn Scorer> = match cfg {
        ScorerConfig::Reference { corpus, alpha } => {
            let text = std::fs::read_to_string(corpus)
                .with_context(|| format!("reading reference corpus {}", corpus.display()))?;
            Box::new(UnigramScorer::from_corpus(&text, *alpha).map_err(|e| usage(e.to_string()))?)
        }
        ScorerConfig::Remote {
            endpoint,
            max_retries,
            timeout_secs,
            max_in_flight,
        } => {
            let rc = RemoteConfig {
                max_retries: *max_retries,
                timeout: std::time::Duration::from_secs(*timeout_secs),
                max_in_flight: *max_in_flight,
                ..RemoteConfig::default()
            };
            Box::new(RemoteScorer::new(endpoint, rc)?)
        }
    };
    match std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()) {
        Some(dir) => {
            log::info!("caching scorer responses in {}", Path::new(&dir).display());
            Ok(Box::new(CachedScorer::new(scorer, PathBuf::from(dir))?))
        }
        None => Ok(scorer),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file: ConfigFile = toml::from_str(
            r#"
            dataset_path = "a.jsonl"
            output_dir = "out"
            [scorer]
            kind = "reference"
            corpus = "c.txt"
            [eval]
            k_values = [1, 3]
            "#,
        )
        .unwrap();
        let flags = ConfigFile {
            dataset_path: Some("b.jsonl".into()),
            scorer: ScorerSection {
                alpha: Some(0.5),
                ..ScorerSection::default()
            },
            ..ConfigFile::default()
        };
        let cfg = resolve(file, flags, true).unwrap();
        assert_eq!(cfg.dataset_path, PathBuf::from("b.jsonl"));
        assert_eq!(cfg.k_values, vec![1, 3]);
        assert_eq!(cfg.top_k_stored, 10);
        assert_eq!(
            cfg.scorer,
            ScorerConfig::Reference {
                corpus: "c.txt".into(),
                alpha: 0.5
            }
        );
    }

    #[test]
    fn remote_without_endpoint_is_a_usage_error() {
        let flags = ConfigFile {
            dataset_path: Some("a".into()),
            output_dir: Some("o".into()),
            scorer: ScorerSection {
                kind: Some(ScorerKind::Remote),
                ..ScorerSection::default()
            },
            ..ConfigFile::default()
        };
        let err = resolve(ConfigFile::default(), flags, true).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<ConfigFile>("datset_path = 'x'").is_err());
    }
}
