//! Template-based and template-free prompt generation from relation triples.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{placeholder_count, InvariantViolation, ProbeRecord, Style, MASK};
use crate::jsonl::{self, JsonlError};

/// Subject slot in a template pattern.
pub const SUBJECT_SLOT: &str = "[X]";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub template_id: String,
    pub relation: String,
    pub pattern: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub subject: String,
    pub relation: String,
    pub object: String,
    #[serde(default)]
    pub evidence_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("template {id:?}: pattern must contain {SUBJECT_SLOT} and {MASK} exactly once")]
    BadPattern { id: String },
    #[error("triple fields subject/relation/object must be non-empty")]
    EmptyField,
    #[error("evidence text does not contain the object {0:?}")]
    EvidenceLacksObject(String),
    #[error("template relation {template:?} does not match triple relation {triple:?}")]
    RelationMismatch { template: String, triple: String },
    #[error("object {0:?} leaks into the prompt text")]
    Leak(String),
    #[error("triple has no evidence text")]
    MissingEvidence,
    #[error("ambiguous: object {0:?} occurs more than once in the evidence text")]
    Ambiguous(String),
    #[error("generated record is invalid: {0}")]
    Invalid(#[from] InvariantViolation),
}

impl Template {
    pub fn new(
        template_id: impl Into<String>,
        relation: impl Into<String>,
        pattern: impl Into<String>,
    ) -> Result<Self, PromptError> {
        let t = Self {
            template_id: template_id.into(),
            relation: relation.into(),
            pattern: pattern.into(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.pattern.matches(SUBJECT_SLOT).count() != 1 || placeholder_count(&self.pattern) != 1 {
            return Err(PromptError::BadPattern {
                id: self.template_id.clone(),
            });
        }
        Ok(())
    }
}

impl Triple {
    pub fn validate(&self) -> Result<(), PromptError> {
        if self.subject.is_empty() || self.relation.is_empty() || self.object.is_empty() {
            return Err(PromptError::EmptyField);
        }
        if let Some(ev) = &self.evidence_text {
            if !ev.contains(&self.object) {
                return Err(PromptError::EvidenceLacksObject(self.object.clone()));
            }
        }
        Ok(())
    }
}

/// The three Google-RE relation templates used for template-based probing.
pub fn default_templates() -> Vec<Template> {
    vec![
        Template {
            template_id: "date_of_birth".into(),
            relation: "date_of_birth".into(),
            pattern: "[X] (born [MASK])".into(),
        },
        Template {
            template_id: "place_of_birth".into(),
            relation: "place_of_birth".into(),
            pattern: "[X] was born in [MASK]".into(),
        },
        Template {
            template_id: "place_of_death".into(),
            relation: "place_of_death".into(),
            pattern: "[X] died in [MASK]".into(),
        },
    ]
}

fn record_id(style: Style, triple: &Triple, template_id: Option<&str>) -> String {
    let tag = match style {
        Style::TemplateBased => "tb",
        Style::TemplateFree => "tf",
    };
    match template_id {
        Some(t) => format!("{tag}:{t}:{}:{}", triple.subject, triple.object),
        None => format!("{tag}:{}:{}:{}", triple.relation, triple.subject, triple.object),
    }
}

/// Substitutes the subject into the template; the placeholder is kept.
pub fn instantiate(template: &Template, triple: &Triple) -> Result<ProbeRecord, PromptError> {
    template.validate()?;
    if triple.subject.is_empty() || triple.relation.is_empty() || triple.object.is_empty() {
        return Err(PromptError::EmptyField);
    }
    if template.relation != triple.relation {
        return Err(PromptError::RelationMismatch {
            template: template.relation.clone(),
            triple: triple.relation.clone(),
        });
    }
    let masked_text = template.pattern.replacen(SUBJECT_SLOT, &triple.subject, 1);
    if masked_text.contains(&triple.object) {
        return Err(PromptError::Leak(triple.object.clone()));
    }
    let record = ProbeRecord {
        id: record_id(Style::TemplateBased, triple, Some(&template.template_id)),
        masked_text,
        gold_entity: triple.object.clone(),
        relation: Some(triple.relation.clone()),
        subject: Some(triple.subject.clone()),
        style: Style::TemplateBased,
        template_id: Some(template.template_id.clone()),
        provenance: None,
    };
    record.validate()?;
    Ok(record)
}

/// Masks the object's single occurrence in the triple's evidence sentence.
pub fn make_template_free(triple: &Triple) -> Result<ProbeRecord, PromptError> {
    let evidence = triple.evidence_text.as_deref().ok_or(PromptError::MissingEvidence)?;
    triple.validate()?;
    if evidence.matches(&triple.object).count() > 1 {
        return Err(PromptError::Ambiguous(triple.object.clone()));
    }
    let masked_text = evidence.replacen(&triple.object, MASK, 1);
    let record = ProbeRecord {
        id: record_id(Style::TemplateFree, triple, None),
        masked_text,
        gold_entity: triple.object.clone(),
        relation: Some(triple.relation.clone()),
        subject: Some(triple.subject.clone()),
        style: Style::TemplateFree,
        template_id: None,
        provenance: None,
    };
    record.validate()?;
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelPair {
    pub template_based: ProbeRecord,
    pub template_free: ProbeRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    /// Position of the triple in the input.
    pub index: usize,
    pub subject: String,
    pub relation: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairReport {
    pub pairs: Vec<ParallelPair>,
    pub rejections: Vec<Rejection>,
}

/// Builds aligned template-based/template-free pairs.
///
/// Each triple uses the first template with a matching relation. Triples that
/// fail either variant are reported, never dropped silently.
pub fn build_parallel_pairs(templates: &[Template], triples: &[Triple]) -> PairReport {
    let mut report = PairReport::default();
    for (index, triple) in triples.iter().enumerate() {
        let reject = |reason: String| Rejection {
            index,
            subject: triple.subject.clone(),
            relation: triple.relation.clone(),
            reason,
        };
        let Some(template) = templates.iter().find(|t| t.relation == triple.relation) else {
            report
                .rejections
                .push(reject(format!("no template for relation {:?}", triple.relation)));
            continue;
        };
        let pair = instantiate(template, triple).and_then(|tb| {
            make_template_free(triple).map(|tf| ParallelPair {
                template_based: tb,
                template_free: tf,
            })
        });
        match pair {
            Ok(p) => report.pairs.push(p),
            Err(e) => report.rejections.push(reject(e.to_string())),
        }
    }
    report
}

pub fn load_templates(path: &Path) -> Result<Vec<Template>, JsonlError> {
    Ok(jsonl::read(path)?.into_iter().map(|(_, t)| t).collect())
}

pub fn load_triples(path: &Path) -> Result<Vec<Triple>, JsonlError> {
    Ok(jsonl::read(path)?.into_iter().map(|(_, t)| t).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn born() -> Template {
        Template::new("dob", "date_of_birth", "[X] (born [MASK])").unwrap()
    }

    fn triple(subject: &str, object: &str, evidence: Option<&str>) -> Triple {
        Triple {
            subject: subject.into(),
            relation: "date_of_birth".into(),
            object: object.into(),
            evidence_text: evidence.map(Into::into),
        }
    }

    #[test]
    fn instantiate_born_template() {
        let r = instantiate(&born(), &triple("Peter F. Martin", "1941", None)).unwrap();
        assert_eq!(r.masked_text, "Peter F. Martin (born [MASK])");
        assert_eq!(r.gold_entity, "1941");
        assert_eq!(r.style, Style::TemplateBased);
        assert_eq!(r.template_id.as_deref(), Some("dob"));
    }

    #[test]
    fn subject_equal_to_object_leaks() {
        let t = Template::new("is", "r", "[X] is [MASK]").unwrap();
        let tr = Triple {
            subject: "A".into(),
            relation: "r".into(),
            object: "A".into(),
            evidence_text: None,
        };
        assert_eq!(instantiate(&t, &tr), Err(PromptError::Leak("A".into())));
    }

    #[test]
    fn relation_mismatch() {
        let mut tr = triple("A", "1", None);
        tr.relation = "place_of_birth".into();
        assert!(matches!(instantiate(&born(), &tr), Err(PromptError::RelationMismatch { .. })));
    }

    #[test]
    fn batch_differs_only_in_subject() {
        let subjects = ["Dennis B. Sullivan", "Tan Jiexi", "Tasos Neroutsos"];
        let out: Vec<_> = subjects
            .iter()
            .map(|s| instantiate(&born(), &triple(s, "1900", None)).unwrap())
            .collect();
        for (r, s) in out.iter().zip(subjects) {
            // Removing the subject span leaves the same residue for every record.
            assert_eq!(r.masked_text.replacen(s, "", 1), " (born [MASK])");
        }
    }

    #[test]
    fn bad_patterns() {
        assert!(Template::new("t", "r", "[X] [X] [MASK]").is_err());
        assert!(Template::new("t", "r", "[X] born").is_err());
    }

    #[test]
    fn template_free_masks_first_occurrence() {
        let tr = triple(
            "Tan Jiexi",
            "1989",
            Some("Tan Jiexi (born December 2, 1989 in Shenzhen, China), is a Chinese singer-songwriter"),
        );
        let r = make_template_free(&tr).unwrap();
        assert_eq!(
            r.masked_text,
            "Tan Jiexi (born December 2, [MASK] in Shenzhen, China), is a Chinese singer-songwriter"
        );
        assert_eq!(r.style, Style::TemplateFree);
        assert_eq!(r.reconstruct(), tr.evidence_text.unwrap());
    }

    #[test]
    fn template_free_errors() {
        assert_eq!(
            make_template_free(&triple("A", "1989", None)),
            Err(PromptError::MissingEvidence)
        );
        assert_eq!(
            make_template_free(&triple("A", "1989", Some("born in 1990"))),
            Err(PromptError::EvidenceLacksObject("1989".into()))
        );
        let err = make_template_free(&triple("A", "1989", Some("1989 and again 1989"))).unwrap_err();
        assert!(err.to_string().contains("ambiguous"));
    }

    #[test]
    fn pairs_single_and_missing_evidence() {
        let ts = vec![born()];
        let ok = build_parallel_pairs(&ts, &[triple("A", "1941", Some("A was born in 1941."))]);
        assert_eq!((ok.pairs.len(), ok.rejections.len()), (1, 0));
        let p = &ok.pairs[0];
        assert_eq!(p.template_based.gold_entity, p.template_free.gold_entity);
        assert_eq!(p.template_based.subject, p.template_free.subject);

        let missing = build_parallel_pairs(&ts, &[triple("A", "1941", None)]);
        assert_eq!((missing.pairs.len(), missing.rejections.len()), (0, 1));
    }
}
