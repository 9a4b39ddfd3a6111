//! Best-effort conversion of PubMed `PubmedArticleSet` XML into corpus JSONL.
//!
//! Each article becomes one document: the title followed by all abstract
//! sections. The document date is taken from the first available of the
//! `received` history date, the electronic `ArticleDate`, the `pubmed` history
//! date, the journal issue `PubDate` and `DateCompleted`. Missing months and
//! days default to 1. Articles without a PMID, a date or any text are skipped.

use std::collections::HashMap;
use std::path::Path;

use chrono::NaiveDate;
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::{io_err, BuildError, CorpusDocument};
use crate::jsonl;

const DATE_PRIORITY: [&str; 5] = ["received", "ArticleDate", "pubmed", "PubDate", "DateCompleted"];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Conversion {
    pub documents: Vec<CorpusDocument>,
    pub skipped: usize,
}

#[derive(Default)]
struct DateParts {
    year: Option<i32>,
    month: Option<u32>,
    day: Option<u32>,
}

impl DateParts {
    fn to_date(&self) -> Option<NaiveDate> {
        NaiveDate::from_ymd_opt(self.year?, self.month.unwrap_or(1), self.day.unwrap_or(1))
    }
}

fn parse_month(s: &str) -> Option<u32> {
    if let Ok(n) = s.parse::<u32>() {
        return (1..=12).contains(&n).then_some(n);
    }
    const NAMES: [&str; 12] = [
        "jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec",
    ];
    let prefix = s.get(..3)?.to_ascii_lowercase();
    NAMES.iter().position(|m| *m == prefix).map(|i| i as u32 + 1)
}

#[derive(Default)]
struct Article {
    pmid: Option<String>,
    title: String,
    sections: Vec<String>,
    dates: HashMap<String, DateParts>,
}

impl Article {
    fn finish(self) -> Option<CorpusDocument> {
        let pmid = self.pmid?;
        let date = DATE_PRIORITY
            .iter()
            .find_map(|k| self.dates.get(*k).and_then(DateParts::to_date))?;
        let text = std::iter::once(self.title.as_str())
            .chain(self.sections.iter().map(String::as_str))
            .flat_map(str::split_whitespace)
            .collect::<Vec<_>>()
            .join(" ");
        if text.is_empty() {
            return None;
        }
        Some(CorpusDocument {
            doc_id: pmid,
            text,
            date,
        })
    }
}

fn attr(e: &BytesStart<'_>, name: &[u8]) -> Option<String> {
    e.attributes()
        .flatten()
        .find(|a| a.key.as_ref() == name)
        .and_then(|a| a.unescape_value().ok().map(|v| v.into_owned()))
}

fn xml_err(e: impl std::fmt::Display) -> BuildError {
    BuildError::Xml(e.to_string())
}

pub fn parse_pubmed_xml(xml: &str) -> Result<Conversion, BuildError> {
    let mut reader = Reader::from_str(xml);
    let mut out = Conversion::default();
    let mut stack: Vec<String> = Vec::new();
    let mut article: Option<Article> = None;
    // Key of the date container currently open, if any.
    let mut date_key: Option<String> = None;

    loop {
        match reader.read_event().map_err(xml_err)? {
            Event::Start(e) => {
                let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
                match name.as_str() {
                    "PubmedArticle" => article = Some(Article::default()),
                    "AbstractText" if stack.last().is_some_and(|p| p == "Abstract") => {
                        if let Some(a) = article.as_mut() {
                            a.sections.push(String::new());
                        }
                    }
                    "PubMedPubDate" => date_key = attr(&e, b"PubStatus"),
                    "ArticleDate" | "DateCompleted" => date_key = Some(name.clone()),
                    "PubDate" if stack.last().is_some_and(|p| p == "JournalIssue") => {
                        date_key = Some(name.clone())
                    }
                    _ => {}
                }
                stack.push(name);
            }
            Event::End(e) => {
                let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
                stack.pop();
                match name.as_str() {
                    "PubmedArticle" => match article.take().and_then(Article::finish) {
                        Some(doc) => out.documents.push(doc),
                        None => out.skipped += 1,
                    },
                    "PubMedPubDate" | "ArticleDate" | "DateCompleted" | "PubDate" => date_key = None,
                    _ => {}
                }
            }
            Event::Text(t) => {
                let Some(a) = article.as_mut() else { continue };
                let text = t.unescape().map_err(xml_err)?;
                let inside = |tag: &str| stack.iter().any(|s| s == tag);
                let current = stack.last().map(String::as_str).unwrap_or("");
                if current == "PMID" && stack.len() >= 2 && stack[stack.len() - 2] == "MedlineCitation" {
                    a.pmid.get_or_insert_with(|| text.trim().to_string());
                } else if inside("ArticleTitle") {
                    a.title.push_str(&text);
                } else if inside("AbstractText") && inside("Abstract") && !inside("OtherAbstract") {
                    if let Some(s) = a.sections.last_mut() {
                        s.push_str(&text);
                    }
                } else if let Some(key) = &date_key {
                    let parts = a.dates.entry(key.clone()).or_default();
                    let v = text.trim();
                    match current {
                        "Year" => parts.year = v.parse().ok(),
                        "Month" => parts.month = parse_month(v),
                        "Day" => parts.day = v.parse().ok(),
                        "MedlineDate" => parts.year = v.get(..4).and_then(|y| y.parse().ok()),
                        _ => {}
                    }
                }
            }
            Event::CData(t) => {
                if let (Some(a), true) = (article.as_mut(), stack.iter().any(|s| s == "AbstractText")) {
                    if let Some(s) = a.sections.last_mut() {
                        s.push_str(&String::from_utf8_lossy(&t));
                    }
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(out)
}

/// Converts an XML file into corpus JSONL at `output`.
pub fn convert_file(input: &Path, output: &Path) -> Result<Conversion, BuildError> {
    let xml = std::fs::read_to_string(input).map_err(io_err(input))?;
    let conversion = parse_pubmed_xml(&xml)?;
    let lines: Vec<serde_json::Value> = conversion
        .documents
        .iter()
        .map(|d| {
            serde_json::json!({
                "doc_id": d.doc_id,
                "text": d.text,
                "date": d.date.format("%Y-%m-%d").to_string(),
            })
        })
        .collect();
    jsonl::write(output, &lines).map_err(|e| BuildError::Xml(e.to_string()))?;
    Ok(conversion)
}
