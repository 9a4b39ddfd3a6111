//! Cloze-style knowledge probing harness.
//!
//! The crate is organised around the life cycle of a probing experiment:
//!
//! * [`domain`] holds the shared record types and their JSONL encoding.
//! * [`prompts`] turns relation triples into template-based and template-free prompts.
//! * [`builder`] mines template-free prompts from a dated text corpus.
//! * [`scorer`] defines the model-scoring contract, reference scorers and the HTTP client.
//! * [`eval`] ranks the candidate pool for every prompt and computes Acc@k.
//! * [`pll`] computes pseudo-perplexity.
//! * [`analysis`] compares runs: rank tables, overconfidence, correlations.
//!
//! Batch work (records, documents, texts) fans out through [`exec`], which uses
//! rayon when the `parallel` feature is enabled and runs sequentially otherwise.

pub mod analysis;
pub mod builder;
pub mod domain;
pub mod eval;
pub mod exec;
pub mod jsonl;
pub mod pll;
pub mod prompts;
pub mod published;
pub mod scorer;

pub use domain::{
    build_candidate_pool, Accuracy, CandidatePool, DatasetManifest, DatasetStyle, EntityStats,
    ProbeRecord, RecordPrediction, RunResult, ScoredCandidate, Style, MASK,
};
pub use scorer::{Scorer, ScorerError, ScorerInfo};
