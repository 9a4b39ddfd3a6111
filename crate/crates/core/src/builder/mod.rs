//! Corpus-to-dataset pipeline: ingest → split → select → filter → mask.
//!
//! Each stage is a pure function of one document or sentence, so documents are
//! processed in parallel and the output is merged in `(doc_id, sentence)` order.

pub mod pubmed;
pub mod sentences;

use std::collections::HashSet;
use std::io::BufRead;
use std::ops::Range;
use std::path::{Path, PathBuf};

use aho_corasick::{AhoCorasick, MatchKind};
use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::domain::{placeholder_count, DatasetManifest, ProbeRecord, Style, MASK};
use crate::exec;
use crate::scorer::whitespace_tokens;

pub use sentences::split_sentences;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDocument {
    pub doc_id: String,
    pub text: String,
    pub date: NaiveDate,
}

#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("lexicon entity on line {line} is empty or whitespace-only")]
    EmptyEntity { line: usize },
    #[error("lexicon entity {0:?} is listed twice")]
    DuplicateEntity(String),
    #[error("span {start}..{end} is not a valid range of a {len}-byte sentence")]
    SpanOutOfBounds { start: usize, end: usize, len: usize },
    #[error("invalid XML: {0}")]
    Xml(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BuildError + '_ {
    move |source| BuildError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A set of entity surface forms with a whole-word matcher.
#[derive(Debug, Clone)]
pub struct EntityLexicon {
    label: String,
    entities: Vec<String>,
    matcher: AhoCorasick,
}

/// The single entity found in a sentence, with its byte span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityMatch {
    pub entity: String,
    pub span: Range<usize>,
}

enum Scan {
    NoEntity,
    Single(EntityMatch),
    Multiple,
}

fn is_word_boundary(text: &str, span: &Range<usize>) -> bool {
    let before = text[..span.start].chars().next_back();
    let after = text[span.end..].chars().next();
    !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
}

impl EntityLexicon {
    pub fn new<I, S>(label: impl Into<String>, entities: I) -> Result<Self, BuildError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut seen = HashSet::new();
        let mut list = Vec::new();
        for (i, e) in entities.into_iter().enumerate() {
            let e: String = e.into();
            if e.trim().is_empty() {
                return Err(BuildError::EmptyEntity { line: i + 1 });
            }
            if !seen.insert(e.clone()) {
                return Err(BuildError::DuplicateEntity(e));
            }
            list.push(e);
        }
        let matcher = AhoCorasick::builder()
            .match_kind(MatchKind::Standard)
            .build(&list)
            .expect("lexicon automaton fits in memory");
        Ok(Self {
            label: label.into(),
            entities: list,
            matcher,
        })
    }

    /// One entity per line; surrounding whitespace is trimmed and blank lines
    /// are ignored.
    pub fn load(path: &Path, label: impl Into<String>) -> Result<Self, BuildError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::new(
            label,
            text.lines().map(str::trim).filter(|l| !l.is_empty()),
        )
    }

    pub fn label(&self) -> &str {
        &self.label
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

    fn scan(&self, sentence: &str) -> Scan {
        let mut found: Option<EntityMatch> = None;
        for m in self.matcher.find_overlapping_iter(sentence) {
            let span = m.start()..m.end();
            if !is_word_boundary(sentence, &span) {
                continue;
            }
            if found.is_some() {
                return Scan::Multiple;
            }
            found = Some(EntityMatch {
                entity: self.entities[m.pattern().as_usize()].clone(),
                span,
            });
        }
        match found {
            None => Scan::NoEntity,
            // A second, non-whole-word occurrence would survive masking and
            // give the answer away.
            Some(m) if sentence.matches(m.entity.as_str()).count() > 1 => Scan::Multiple,
            Some(m) => Scan::Single(m),
        }
    }
}

/// Returns the match iff exactly one lexicon entity occurs, exactly once, as
/// a whole word.
pub fn select_single_entity(sentence: &str, lexicon: &EntityLexicon) -> Option<EntityMatch> {
    match lexicon.scan(sentence) {
        Scan::Single(m) => Some(m),
        _ => None,
    }
}

pub const DEFAULT_FORBIDDEN: [&str; 11] = [
    "here",
    "we ",
    "investigate",
    "study",
    "propose",
    "outline",
    "(",
    "our ",
    "performed",
    "suggest",
    "However",
];

/// Literal substrings whose presence drops a sentence. An empty list disables
/// filtering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterPolicy {
    pub forbidden_substrings: Vec<String>,
    pub case_sensitive: bool,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self {
            forbidden_substrings: DEFAULT_FORBIDDEN.iter().map(|s| s.to_string()).collect(),
            case_sensitive: true,
        }
    }
}

impl FilterPolicy {
    pub fn disabled() -> Self {
        Self {
            forbidden_substrings: Vec::new(),
            case_sensitive: true,
        }
    }

    pub fn case_insensitive(mut self) -> Self {
        self.case_sensitive = false;
        self
    }

    pub fn is_enabled(&self) -> bool {
        !self.forbidden_substrings.is_empty()
    }

    /// The first forbidden substring found in `text`, if any.
    pub fn violation(&self, text: &str) -> Option<&str> {
        if self.case_sensitive {
            return self
                .forbidden_substrings
                .iter()
                .find(|k| text.contains(k.as_str()))
                .map(String::as_str);
        }
        let lower = text.to_lowercase();
        self.forbidden_substrings
            .iter()
            .find(|k| lower.contains(&k.to_lowercase()))
            .map(String::as_str)
    }
}

/// `true` keeps the sentence.
pub fn quality_filter(sentence: &str, policy: &FilterPolicy) -> bool {
    policy.violation(sentence).is_none()
}

/// Replaces `span` with the placeholder. The record id is
/// `"{doc_id}:{sentence_index}"` and the provenance is the document id.
pub fn mask_entity(
    sentence: &str,
    span: Range<usize>,
    doc_id: &str,
    sentence_index: usize,
) -> Result<ProbeRecord, BuildError> {
    let valid = span.start < span.end
        && span.end <= sentence.len()
        && sentence.is_char_boundary(span.start)
        && sentence.is_char_boundary(span.end);
    if !valid {
        return Err(BuildError::SpanOutOfBounds {
            start: span.start,
            end: span.end,
            len: sentence.len(),
        });
    }
    Ok(ProbeRecord {
        id: format!("{doc_id}:{sentence_index}"),
        masked_text: format!("{}{MASK}{}", &sentence[..span.start], &sentence[span.end..]),
        gold_entity: sentence[span.clone()].to_string(),
        relation: None,
        subject: None,
        style: Style::TemplateFree,
        template_id: None,
        provenance: Some(doc_id.to_string()),
    })
}

/// Documents that survived ingestion plus what was dropped on the way.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    /// Sorted by `doc_id`.
    pub documents: Vec<CorpusDocument>,
    pub cutoff: Option<NaiveDate>,
    pub excluded_by_date: usize,
    pub unparseable: usize,
    pub duplicates: usize,
}

#[derive(Deserialize)]
struct RawDocument {
    doc_id: String,
    text: String,
    date: String,
}

fn corpus_files(source: &Path) -> Result<Vec<PathBuf>, BuildError> {
    let meta = std::fs::metadata(source).map_err(io_err(source))?;
    if meta.is_file() {
        return Ok(vec![source.to_path_buf()]);
    }
    let mut files = Vec::new();
    for entry in std::fs::read_dir(source).map_err(io_err(source))? {
        let path = entry.map_err(io_err(source))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "jsonl") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Reads a JSONL file or a directory of `*.jsonl` files and keeps documents
/// dated strictly after `cutoff`. Unparseable lines and repeated doc ids are
/// skipped with a warning and counted.
pub fn ingest_corpus(source: &Path, cutoff: NaiveDate) -> Result<Corpus, BuildError> {
    let mut corpus = Corpus {
        cutoff: Some(cutoff),
        ..Corpus::default()
    };
    let mut seen = HashSet::new();
    for file in corpus_files(source)? {
        let reader = std::io::BufReader::new(std::fs::File::open(&file).map_err(io_err(&file))?);
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(io_err(&file))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str::<RawDocument>(&line)
                .map_err(|e| e.to_string())
                .and_then(|raw| {
                    let date = NaiveDate::parse_from_str(&raw.date, "%Y-%m-%d")
                        .map_err(|e| format!("date {:?}: {e}", raw.date))?;
                    if raw.doc_id.is_empty() {
                        return Err("empty doc_id".to_string());
                    }
                    Ok(CorpusDocument {
                        doc_id: raw.doc_id,
                        text: raw.text,
                        date,
                    })
                });
            let doc = match parsed {
                Ok(d) => d,
                Err(e) => {
                    log::warn!("{}:{}: skipping unparseable document: {e}", file.display(), i + 1);
                    corpus.unparseable += 1;
                    continue;
                }
            };
            if !seen.insert(doc.doc_id.clone()) {
                log::warn!("{}:{}: duplicate doc_id {:?} skipped", file.display(), i + 1, doc.doc_id);
                corpus.duplicates += 1;
                continue;
            }
            if doc.date > cutoff {
                corpus.documents.push(doc);
            } else {
                corpus.excluded_by_date += 1;
            }
        }
    }
    corpus.documents.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    Ok(corpus)
}

/// Per-stage accounting. `no_entity + multi_entity + keyword_filtered +
/// degenerate + emitted == candidate_sentences`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionReport {
    pub excluded_by_date: usize,
    pub unparseable_documents: usize,
    pub duplicate_documents: usize,
    pub documents: usize,
    pub candidate_sentences: usize,
    pub no_entity: usize,
    pub multi_entity: usize,
    pub keyword_filtered: usize,
    pub degenerate: usize,
    pub emitted: usize,
}

impl RejectionReport {
    pub fn is_balanced(&self) -> bool {
        self.no_entity + self.multi_entity + self.keyword_filtered + self.degenerate + self.emitted
            == self.candidate_sentences
    }

    fn absorb(&mut self, other: &RejectionReport) {
        self.candidate_sentences += other.candidate_sentences;
        self.no_entity += other.no_entity;
        self.multi_entity += other.multi_entity;
        self.keyword_filtered += other.keyword_filtered;
        self.degenerate += other.degenerate;
        self.emitted += other.emitted;
    }
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub name: String,
    /// Prompts with fewer whitespace tokens after masking are degenerate.
    pub min_tokens: usize,
    pub concurrency: usize,
    /// Defaults to midnight UTC of the newest ingested document, so rebuilding
    /// the same corpus gives a byte-identical manifest.
    pub created_at: Option<DateTime<Utc>>,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            name: "dataset".into(),
            min_tokens: 5,
            concurrency: 1,
            created_at: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub manifest: DatasetManifest,
    pub records: Vec<ProbeRecord>,
    pub report: RejectionReport,
}

fn is_degenerate(record: &ProbeRecord, min_tokens: usize) -> bool {
    record.masked_text.trim() == MASK
        || placeholder_count(&record.masked_text) != 1
        || whitespace_tokens(&record.masked_text).count() < min_tokens
        || record.validate().is_err()
}

fn process_document(
    doc: &CorpusDocument,
    lexicon: &EntityLexicon,
    policy: &FilterPolicy,
    min_tokens: usize,
) -> (Vec<ProbeRecord>, RejectionReport) {
    let mut report = RejectionReport::default();
    let mut out = Vec::new();
    for (idx, sentence) in split_sentences(&doc.text).into_iter().enumerate() {
        report.candidate_sentences += 1;
        let m = match lexicon.scan(sentence) {
            Scan::NoEntity => {
                report.no_entity += 1;
                continue;
            }
            Scan::Multiple => {
                report.multi_entity += 1;
                continue;
            }
            Scan::Single(m) => m,
        };
        if !quality_filter(sentence, policy) {
            report.keyword_filtered += 1;
            continue;
        }
        let record = mask_entity(sentence, m.span, &doc.doc_id, idx)
            .expect("matcher spans lie on char boundaries");
        if !quality_filter(&record.masked_text, policy) {
            report.keyword_filtered += 1;
            continue;
        }
        if is_degenerate(&record, min_tokens) {
            report.degenerate += 1;
            continue;
        }
        report.emitted += 1;
        out.push(record);
    }
    (out, report)
}

/// Runs the sentence stages over an ingested corpus.
pub fn build_documents(
    corpus: &Corpus,
    lexicon: &EntityLexicon,
    policy: &FilterPolicy,
    opts: &BuildOptions,
) -> BuildOutput {
    let mut docs: Vec<&CorpusDocument> = corpus.documents.iter().collect();
    docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    let per_doc = exec::map_ordered(&docs, opts.concurrency, |d| {
        process_document(d, lexicon, policy, opts.min_tokens)
    });

    let mut report = RejectionReport {
        excluded_by_date: corpus.excluded_by_date,
        unparseable_documents: corpus.unparseable,
        duplicate_documents: corpus.duplicates,
        documents: docs.len(),
        ..RejectionReport::default()
    };
    let mut records = Vec::new();
    for (recs, r) in per_doc {
        report.absorb(&r);
        records.extend(recs);
    }

    let created_at = opts.created_at.unwrap_or_else(|| {
        docs.iter()
            .map(|d| d.date)
            .max()
            .or(corpus.cutoff)
            .unwrap_or_default()
            .and_hms_opt(0, 0, 0)
            .expect("midnight exists")
            .and_utc()
    });
    let manifest = DatasetManifest::from_records(&opts.name, &records, created_at, corpus.cutoff);
    BuildOutput {
        manifest,
        records,
        report,
    }
}

/// Full pipeline from a corpus file or directory.
pub fn build(
    source: &Path,
    lexicon: &EntityLexicon,
    policy: &FilterPolicy,
    cutoff: NaiveDate,
    opts: &BuildOptions,
) -> Result<BuildOutput, BuildError> {
    let corpus = ingest_corpus(source, cutoff)?;
    Ok(build_documents(&corpus, lexicon, policy, opts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lex(xs: &[&str]) -> EntityLexicon {
        EntityLexicon::new("chemical", xs.iter().copied()).unwrap()
    }

    #[test]
    fn select_examples() {
        let l = lex(&["Penicillin", "Aspirin"]);
        let m = select_single_entity("Penicillin is used to treat infections", &l).unwrap();
        assert_eq!((m.entity.as_str(), m.span), ("Penicillin", 0..10));
        assert!(select_single_entity("Penicillin and Aspirin differ", &l).is_none());
        assert!(select_single_entity("Penicillins are antibiotics", &l).is_none());
        assert!(select_single_entity("Penicillin, then Penicillin again", &l).is_none());
        assert!(select_single_entity("nothing here", &l).is_none());
    }

    #[test]
    fn boundaries_are_non_alphanumeric() {
        let l = lex(&["ALB"]);
        assert!(select_single_entity("ALBUMIN levels rose", &l).is_none());
        assert_eq!(select_single_entity("ALB-1 levels rose", &l).unwrap().span, 0..3);
        assert_eq!(select_single_entity("levels of (ALB)", &l).unwrap().span, 11..14);
    }

    #[test]
    fn substring_leak_counts_as_multiple() {
        let l = lex(&["ALB"]);
        assert!(select_single_entity("ALB binds ALBUMIN", &l).is_none());
    }

    #[test]
    fn lexicon_invariants() {
        assert!(matches!(
            EntityLexicon::new("x", ["a", "a"]),
            Err(BuildError::DuplicateEntity(_))
        ));
        assert!(matches!(
            EntityLexicon::new("x", ["a", "  "]),
            Err(BuildError::EmptyEntity { line: 2 })
        ));
    }

    #[test]
    fn filter_examples() {
        let p = FilterPolicy::default();
        assert!(!quality_filter("penicillin (PCN) treats infection", &p));
        assert!(quality_filter(
            "Amyloid-β is a product of the processing of the amyloid precursor protein",
            &p
        ));
        assert!(!quality_filter("We investigate the effect", &p));
        // Case-sensitive "we " does not match "We ".
        assert!(quality_filter("We tested the effect", &p));
        assert!(!quality_filter("We tested the effect", &p.clone().case_insensitive()));
        assert!(quality_filter("anything (at all)", &FilterPolicy::disabled()));
    }

    #[test]
    fn mask_examples() {
        let s = "Penicillin is used to treat infections";
        let r = mask_entity(s, 0..10, "d1", 3).unwrap();
        assert_eq!(r.masked_text, "[MASK] is used to treat infections");
        assert_eq!(r.gold_entity, "Penicillin");
        assert_eq!(r.id, "d1:3");
        assert_eq!(r.provenance.as_deref(), Some("d1"));
        assert_eq!(r.reconstruct(), s);
        assert_eq!(mask_entity("abc", 0..3, "d", 0).unwrap().masked_text, "[MASK]");
        assert!(matches!(
            mask_entity("abc", 1..9, "d", 0),
            Err(BuildError::SpanOutOfBounds { .. })
        ));
        assert!(mask_entity("é", 0..1, "d", 0).is_err());
    }

    fn doc(id: &str, text: &str) -> CorpusDocument {
        CorpusDocument {
            doc_id: id.into(),
            text: text.into(),
            date: NaiveDate::from_ymd_opt(2022, 1, 1).unwrap(),
        }
    }

    #[test]
    fn build_accounts_for_every_sentence() {
        let corpus = Corpus {
            documents: vec![
                doc("b", "Aspirin reduces fever in most adults. Short Aspirin. It is here that Aspirin is named."),
                doc("a", "Penicillin is used to treat infections. No entity appears in this sentence. Penicillin and Aspirin together."),
            ],
            cutoff: NaiveDate::from_ymd_opt(2021, 12, 31),
            ..Corpus::default()
        };
        let out = build_documents(&corpus, &lex(&["Penicillin", "Aspirin"]), &FilterPolicy::default(), &BuildOptions::default());
        let ids: Vec<_> = out.records.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, vec!["a:0", "b:0"]);
        let r = out.report;
        assert_eq!(
            (r.candidate_sentences, r.no_entity, r.multi_entity, r.keyword_filtered, r.degenerate, r.emitted),
            (6, 1, 1, 1, 1, 2)
        );
        assert!(r.is_balanced());
        assert_eq!(out.manifest.pool_size, 2);
        assert_eq!(out.manifest.created_at.date_naive(), NaiveDate::from_ymd_opt(2022, 1, 1).unwrap());
    }
}
