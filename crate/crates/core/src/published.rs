//! Loaders for the bundled published result tables (`fixtures/published`).
//!
//! The tables turn into score-only [`RunResult`]s (no per-record predictions),
//! which is all the ranking, averaging and correlation code needs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::analysis::PplPoint;
use crate::domain::{Accuracy, RunResult, Style};

#[derive(Debug, thiserror::Error)]
pub enum PublishedError {
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

/// Directory holding the bundled CSV tables.
pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join("published")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishedAccuracy {
    pub style: Style,
    pub dataset: String,
    pub model_id: String,
    pub acc1: f64,
    pub acc5: f64,
    pub acc10: f64,
    pub printed_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishedAverage {
    pub style: Style,
    pub dataset: String,
    pub acc1: f64,
    pub acc5: f64,
    pub acc10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishedPerplexity {
    pub style: Style,
    pub dataset: String,
    pub model_id: String,
    pub mean_ppl: f64,
}

fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PublishedError> {
    let err = |source| PublishedError::Csv {
        path: path.display().to_string(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(err)?;
    reader.deserialize().collect::<Result<_, _>>().map_err(err)
}

pub fn load_accuracy(path: &Path) -> Result<Vec<PublishedAccuracy>, PublishedError> {
    read_csv(path)
}

pub fn load_averages(path: &Path) -> Result<Vec<PublishedAverage>, PublishedError> {
    read_csv(path)
}

pub fn load_perplexity(path: &Path) -> Result<Vec<PublishedPerplexity>, PublishedError> {
    read_csv(path)
}

/// All three bundled tables.
#[derive(Debug, Clone)]
pub struct Published {
    pub accuracy: Vec<PublishedAccuracy>,
    pub averages: Vec<PublishedAverage>,
    pub perplexity: Vec<PublishedPerplexity>,
}

impl Published {
    pub fn load(dir: &Path) -> Result<Self, PublishedError> {
        Ok(Self {
            accuracy: load_accuracy(&dir.join("accuracy.csv"))?,
            averages: load_averages(&dir.join("accuracy_averages.csv"))?,
            perplexity: load_perplexity(&dir.join("perplexity.csv"))?,
        })
    }

    pub fn bundled() -> Result<Self, PublishedError> {
        Self::load(&fixture_dir())
    }

    /// Score-only runs of one style, keyed by dataset.
    pub fn runs(&self, style: Style) -> BTreeMap<String, Vec<RunResult>> {
        let mut out: BTreeMap<String, Vec<RunResult>> = BTreeMap::new();
        for row in self.accuracy.iter().filter(|r| r.style == style) {
            out.entry(row.dataset.clone()).or_default().push(row.to_run());
        }
        out
    }

    /// Printed ranks of one style and dataset, keyed by model id.
    pub fn printed_ranks(&self, style: Style, dataset: &str) -> BTreeMap<String, usize> {
        self.accuracy
            .iter()
            .filter(|r| r.style == style && r.dataset == dataset)
            .map(|r| (r.model_id.clone(), r.printed_rank))
            .collect()
    }

    pub fn ppl_points(&self, style: Style) -> Vec<PplPoint> {
        self.perplexity
            .iter()
            .filter(|r| r.style == style)
            .map(|r| PplPoint {
                model_id: r.model_id.clone(),
                dataset: r.dataset.clone(),
                mean_ppl: r.mean_ppl,
            })
            .collect()
    }
}

impl PublishedAccuracy {
    pub fn to_run(&self) -> RunResult {
        let acc = Accuracy {
            acc1: self.acc1,
            acc5: self.acc5,
            acc10: self.acc10,
        };
        RunResult {
            model_id: self.model_id.clone(),
            dataset: self.dataset.clone(),
            per_record: Vec::new(),
            acc,
            acc_at_k: [(1, self.acc1), (5, self.acc5), (10, self.acc10)].into_iter().collect(),
            failures: Vec::new(),
            pool_size: 0,
            top_k_stored: 0,
            ppl: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_tables_have_expected_shape() {
        let p = Published::bundled().unwrap();
        assert_eq!(p.accuracy.len(), 16 * 10);
        assert_eq!(p.perplexity.len(), 16 * 10);
        assert_eq!(p.averages.len(), 10);
        let tb = p.runs(Style::TemplateBased);
        assert_eq!(tb.len(), 4);
        assert!(tb.values().all(|v| v.len() == 16));
        assert_eq!(p.runs(Style::TemplateFree).len(), 6);
    }
}
