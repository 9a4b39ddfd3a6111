//! Shared domain types, invariant checks, and the dataset JSONL format.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::jsonl::{self, JsonlError};

/// Canonical placeholder stored in every dataset, whatever the model's native mask token.
pub const MASK: &str = "[MASK]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Style {
    TemplateBased,
    TemplateFree,
}

impl std::fmt::Display for Style {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Style::TemplateBased => "template_based",
            Style::TemplateFree => "template_free",
        })
    }
}

/// One cloze prompt with its gold entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub id: String,
    pub masked_text: String,
    pub gold_entity: String,
    pub relation: Option<String>,
    pub subject: Option<String>,
    pub style: Style,
    pub template_id: Option<String>,
    pub provenance: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InvariantViolation {
    #[error("record id is empty")]
    EmptyId,
    #[error("masked_text must contain \"[MASK]\" exactly once, found {0}")]
    PlaceholderCount(usize),
    #[error("gold_entity is empty")]
    EmptyGold,
    #[error("gold entity {0:?} is visible in masked_text")]
    GoldLeak(String),
    #[error("template-based record has no template_id")]
    MissingTemplateId,
}

impl ProbeRecord {
    pub fn validate(&self) -> Result<(), InvariantViolation> {
        if self.id.is_empty() {
            return Err(InvariantViolation::EmptyId);
        }
        let count = placeholder_count(&self.masked_text);
        if count != 1 {
            return Err(InvariantViolation::PlaceholderCount(count));
        }
        if self.gold_entity.trim().is_empty() {
            return Err(InvariantViolation::EmptyGold);
        }
        if self.masked_text.contains(&self.gold_entity) {
            return Err(InvariantViolation::GoldLeak(self.gold_entity.clone()));
        }
        if self.style == Style::TemplateBased && self.template_id.is_none() {
            return Err(InvariantViolation::MissingTemplateId);
        }
        Ok(())
    }

    /// The prompt with the gold entity put back in place of the placeholder.
    pub fn reconstruct(&self) -> String {
        self.masked_text.replacen(MASK, &self.gold_entity, 1)
    }
}

pub fn placeholder_count(text: &str) -> usize {
    text.matches(MASK).count()
}

/// The dataset's unique gold entities in lexicographic order.
///
/// The order doubles as the tie-break order for ranking.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePool {
    entities: Vec<String>,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PoolError {
    #[error("candidate pool cannot be built from zero records")]
    NoRecords,
    #[error("candidate pool entities must be non-empty strings")]
    EmptyEntity,
}

impl CandidatePool {
    pub fn new<I, S>(source: impl Into<String>, entities: I) -> Result<Self, PoolError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = entities.into_iter().map(Into::into).collect();
        if set.iter().any(|e| e.is_empty()) {
            return Err(PoolError::EmptyEntity);
        }
        Ok(Self {
            entities: set.into_iter().collect(),
            source: source.into(),
        })
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn contains(&self, entity: &str) -> bool {
        self.entities
            .binary_search_by(|e| e.as_str().cmp(entity))
            .is_ok()
    }

    /// `self ∪ other`, labelled with both sources.
    pub fn union(&self, other: &CandidatePool) -> CandidatePool {
        let merged = self.entities.iter().chain(other.entities.iter()).cloned();
        // Both inputs already satisfy the invariants, so the union does too.
        let mut pool = CandidatePool::new(String::new(), merged).expect("union of valid pools");
        pool.source = if other.is_empty() {
            self.source.clone()
        } else {
            format!("{}+{}", self.source, other.source)
        };
        pool
    }
}

/// Sorted unique gold entities of `records`.
pub fn build_candidate_pool(records: &[ProbeRecord]) -> Result<CandidatePool, PoolError> {
    if records.is_empty() {
        return Err(PoolError::NoRecords);
    }
    CandidatePool::new("gold", records.iter().map(|r| r.gold_entity.as_str()))
}

/// Per-token log-probabilities of one candidate and their arithmetic mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub entity: String,
    pub token_logprobs: Vec<f64>,
    pub mean_logprob: f64,
}

impl ScoredCandidate {
    /// Returns `None` when `token_logprobs` is empty.
    pub fn new(entity: impl Into<String>, token_logprobs: Vec<f64>) -> Option<Self> {
        if token_logprobs.is_empty() {
            return None;
        }
        let mean_logprob = token_logprobs.iter().sum::<f64>() / token_logprobs.len() as f64;
        Some(Self {
            entity: entity.into(),
            token_logprobs,
            mean_logprob,
        })
    }
}

/// Occurrence statistics of gold entities over a dataset.
///
/// `std` is the population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct EntityStats {
    pub mean: f64,
    pub std: f64,
    pub max: u64,
    pub min: u64,
}

impl EntityStats {
    pub fn from_counts<I: IntoIterator<Item = u64>>(counts: I) -> Self {
        let counts: Vec<u64> = counts.into_iter().collect();
        if counts.is_empty() {
            return Self::default();
        }
        let n = counts.len() as f64;
        let mean = counts.iter().sum::<u64>() as f64 / n;
        let var = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        Self {
            mean,
            std: var.sqrt(),
            max: *counts.iter().max().unwrap_or(&0),
            min: *counts.iter().min().unwrap_or(&0),
        }
    }

    pub fn from_records(records: &[ProbeRecord]) -> Self {
        Self::from_counts(occurrence_counts(records).into_values())
    }
}

pub fn occurrence_counts(records: &[ProbeRecord]) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for r in records {
        *counts.entry(r.gold_entity.clone()).or_insert(0) += 1;
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetStyle {
    TemplateBased,
    TemplateFree,
    Mixed,
}

impl DatasetStyle {
    pub fn of(records: &[ProbeRecord]) -> Self {
        let styles: BTreeSet<Style> = records.iter().map(|r| r.style).collect();
        match (styles.len(), styles.iter().next()) {
            (1, Some(Style::TemplateBased)) => DatasetStyle::TemplateBased,
            (1, Some(Style::TemplateFree)) => DatasetStyle::TemplateFree,
            (0, _) => DatasetStyle::TemplateFree,
            _ => DatasetStyle::Mixed,
        }
    }
}

/// Records how an output was produced so a run can be repeated exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Self {
            tool: "cloze-bench".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub style: DatasetStyle,
    pub record_count: usize,
    pub pool_size: usize,
    pub entity_stats: EntityStats,
    pub created_at: DateTime<Utc>,
    pub cutoff_date: Option<NaiveDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl DatasetManifest {
    pub fn from_records(
        name: impl Into<String>,
        records: &[ProbeRecord],
        created_at: DateTime<Utc>,
        cutoff_date: Option<NaiveDate>,
    ) -> Self {
        let counts = occurrence_counts(records);
        Self {
            name: name.into(),
            style: DatasetStyle::of(records),
            record_count: records.len(),
            pool_size: counts.len(),
            entity_stats: EntityStats::from_counts(counts.into_values()),
            created_at,
            cutoff_date,
            provenance: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Accuracy {
    pub acc1: f64,
    pub acc5: f64,
    pub acc10: f64,
}

impl Accuracy {
    pub fn get(&self, k: usize) -> Option<f64> {
        match k {
            1 => Some(self.acc1),
            5 => Some(self.acc5),
            10 => Some(self.acc10),
            _ => None,
        }
    }
}

/// Fraction of ranks that are `<= k`. Zero when `ranks` is empty.
pub fn acc_at_k(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordPrediction {
    pub record_id: String,
    /// Top predictions, best first, truncated to the run's storage depth.
    pub ranked_entities: Vec<String>,
    pub gold_rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordFailure {
    pub record_id: String,
    pub reason: String,
}

/// Fraction of failed records above which a run is not comparable to others.
pub const MAX_FAILURE_RATE: f64 = 0.01;

/// Outcome of probing one model on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub model_id: String,
    pub dataset: String,
    pub per_record: Vec<RecordPrediction>,
    pub acc: Accuracy,
    /// Acc@k for every configured k.
    pub acc_at_k: BTreeMap<usize, f64>,
    pub failures: Vec<RecordFailure>,
    pub pool_size: usize,
    pub top_k_stored: usize,
    pub ppl: Option<f64>,
}

impl RunResult {
    pub fn gold_ranks(&self) -> Vec<usize> {
        self.per_record.iter().filter_map(|p| p.gold_rank).collect()
    }

    /// Recomputes `acc` and `acc_at_k` from the stored gold ranks.
    pub fn recompute_accuracy(&mut self, k_values: &[usize]) {
        let ranks = self.gold_ranks();
        self.acc = Accuracy {
            acc1: acc_at_k(&ranks, 1),
            acc5: acc_at_k(&ranks, 5),
            acc10: acc_at_k(&ranks, 10),
        };
        self.acc_at_k = k_values.iter().map(|&k| (k, acc_at_k(&ranks, k))).collect();
    }

    pub fn evaluated(&self) -> usize {
        self.per_record.len()
    }

    pub fn failure_rate(&self) -> f64 {
        let total = self.per_record.len() + self.failures.len();
        if total == 0 {
            return 0.0;
        }
        self.failures.len() as f64 / total as f64
    }

    pub fn is_comparable(&self) -> bool {
        self.failure_rate() <= MAX_FAILURE_RATE
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("{path}:{line}: record {id:?}: {violation}")]
    Invariant {
        path: String,
        line: usize,
        id: String,
        violation: InvariantViolation,
    },
    #[error("{path}:{line}: duplicate record id {id:?}")]
    DuplicateId { path: String, line: usize, id: String },
    #[error("dataset {0} contains no records")]
    Empty(String),
}

/// `data/foo.jsonl` → `data/foo.manifest.json`.
pub fn manifest_path(dataset: &Path) -> PathBuf {
    let stem = dataset
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    dataset.with_file_name(format!("{stem}.manifest.json"))
}

pub fn dataset_name(dataset: &Path) -> String {
    dataset
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string())
}

/// Loads and validates a dataset.
///
/// Statistics are always recomputed from the records; a sidecar manifest, when
/// present, only contributes `created_at`, `cutoff_date` and `provenance`.
pub fn load_dataset(path: &Path) -> Result<(DatasetManifest, Vec<ProbeRecord>), DatasetError> {
    let display = path.display().to_string();
    let lines: Vec<(usize, ProbeRecord)> = jsonl::read(path)?;
    if lines.is_empty() {
        return Err(DatasetError::Empty(display));
    }
    let mut seen = HashMap::with_capacity(lines.len());
    let mut records = Vec::with_capacity(lines.len());
    for (line, record) in lines {
        if let Err(violation) = record.validate() {
            return Err(DatasetError::Invariant {
                path: display,
                line,
                id: record.id,
                violation,
            });
        }
        if seen.insert(record.id.clone(), line).is_some() {
            return Err(DatasetError::DuplicateId {
                path: display,
                line,
                id: record.id,
            });
        }
        records.push(record);
    }

    let sidecar: Option<DatasetManifest> = jsonl::read_json(&manifest_path(path)).ok();
    let created_at = sidecar
        .as_ref()
        .map(|m| m.created_at)
        .or_else(|| {
            std::fs::metadata(path)
                .and_then(|m| m.modified())
                .ok()
                .map(DateTime::<Utc>::from)
        })
        .unwrap_or_default();
    let cutoff = sidecar.as_ref().and_then(|m| m.cutoff_date);
    let mut manifest = DatasetManifest::from_records(dataset_name(path), &records, created_at, cutoff);
    manifest.provenance = sidecar.and_then(|m| m.provenance);
    Ok((manifest, records))
}

/// Writes the dataset JSONL and its sidecar manifest.
pub fn write_dataset(
    path: &Path,
    manifest: &DatasetManifest,
    records: &[ProbeRecord],
) -> Result<(), JsonlError> {
    jsonl::write(path, records)?;
    jsonl::write_json(&manifest_path(path), manifest)
}
