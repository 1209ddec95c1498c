//! Plan validation: structure, variable hygiene and acyclicity, plus the
//! pluggable semantic audit.
//!
//! Every finding is accumulated into the report; nothing stops at the first
//! error. Nodes already marked executed are exempt from the per-node checks.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plan::{build_dependency_graph, extract_var_refs, label_for, Plan, Status, Tool, ToolSpec};
use crate::schema::GlobalSchema;
use crate::text::words;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ValidationCode {
    MissingField,
    BadTool,
    BadLabel,
    MissingAnswerDescription,
    NoExposedAnswer,
    UnknownVariable,
    UnknownColumn,
    CyclicDependency,
    EmptyPlan,
    BadQuestion,
    /// Raised by auditors, never by [`validate_plan`].
    SemanticDrift,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationError {
    pub code: ValidationCode,
    pub node_index: Option<usize>,
    pub detail: String,
    /// The offending field, label, variable or column, when there is one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
}

impl ValidationError {
    fn new(code: ValidationCode, node: Option<usize>, detail: String) -> Self {
        ValidationError {
            code,
            node_index: node,
            detail,
            subject: None,
        }
    }

    fn about(mut self, subject: impl Into<String>) -> Self {
        self.subject = Some(subject.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub is_valid: bool,
    pub errors: Vec<ValidationError>,
}

impl ValidationReport {
    pub fn from_errors(errors: Vec<ValidationError>) -> Self {
        ValidationReport {
            is_valid: errors.is_empty(),
            errors,
        }
    }

    pub fn merge(mut self, other: ValidationReport) -> Self {
        self.errors.extend(other.errors);
        self.is_valid = self.errors.is_empty();
        self
    }

    pub fn codes(&self) -> Vec<ValidationCode> {
        self.errors.iter().map(|e| e.code).collect()
    }
}

fn structural(plan: &Plan, errors: &mut Vec<ValidationError>) {
    use ValidationCode::*;
    for q in &plan.subquestions {
        if q.status == Status::Executed {
            continue;
        }
        let node = Some(q.index);
        for (present, field) in [
            (q.question.is_some(), "question"),
            (q.tool.is_some(), "tool"),
            (q.label.is_some(), "label"),
            (q.should_expose_answer.is_some(), "should_expose_answer"),
        ] {
            if !present {
                let detail = if field == "should_expose_answer"
                    && q.extra.contains_key("should_expose_answer")
                {
                    "should_expose_answer must be a JSON boolean".to_string()
                } else {
                    format!("missing required field `{field}`")
                };
                errors.push(ValidationError::new(MissingField, node, detail).about(field));
            }
        }
        if let Some(text) = &q.question {
            if text.trim().is_empty() {
                errors.push(ValidationError::new(
                    BadQuestion,
                    node,
                    "question is empty".into(),
                ));
            }
        }
        if let Some(ToolSpec::Unrecognized(name)) = &q.tool {
            errors.push(
                ValidationError::new(
                    BadTool,
                    node,
                    format!(
                        "unknown tool `{name}`; expected {} or {}",
                        Tool::Structured.canonical_name(),
                        Tool::Vector.canonical_name()
                    ),
                )
                .about(name.clone()),
            );
        }
        if let Some(label) = &q.label {
            let expected = label_for(q.index);
            if *label != expected {
                errors.push(
                    ValidationError::new(
                        BadLabel,
                        node,
                        format!("label `{label}` should be `{expected}`"),
                    )
                    .about(label.clone()),
                );
            }
        }
        if q.exposes()
            && q.answer_description
                .as_deref()
                .is_none_or(|d| d.trim().is_empty())
        {
            errors.push(ValidationError::new(
                MissingAnswerDescription,
                node,
                "exposed node needs a non-empty answer_description".into(),
            ));
        }
    }
    if !plan.subquestions.iter().any(|q| q.exposes()) {
        errors.push(ValidationError::new(
            NoExposedAnswer,
            None,
            "no sub-question has should_expose_answer = true".into(),
        ));
    }
}

fn hygiene(plan: &Plan, schema: &GlobalSchema, errors: &mut Vec<ValidationError>) {
    let n = plan.len();
    let attributes = schema.known_attributes();
    for q in &plan.subquestions {
        if q.status == Status::Executed {
            continue;
        }
        for r in extract_var_refs(q.question_text()) {
            let var = label_for(r.target_index);
            if r.target_index == 0 || r.target_index > n {
                errors.push(
                    ValidationError::new(
                        ValidationCode::UnknownVariable,
                        Some(q.index),
                        format!("{var} does not name one of the {n} sub-questions"),
                    )
                    .about(var),
                );
                continue;
            }
            let Some(col) = r.column else { continue };
            let in_partial = plan
                .node(r.target_index)
                .and_then(|d| d.partial_result_columns.as_ref())
                .is_some_and(|cols| cols.contains(&col));
            if !attributes.contains(col.as_str()) && !in_partial {
                errors.push(
                    ValidationError::new(
                        ValidationCode::UnknownColumn,
                        Some(q.index),
                        format!("{var}.{col}: `{col}` is not a known column"),
                    )
                    .about(col),
                );
            }
        }
    }
}

fn acyclic(plan: &Plan, errors: &mut Vec<ValidationError>) {
    if let Some(cycle) = build_dependency_graph(plan).find_cycle() {
        let mut path: Vec<String> = cycle.iter().map(|i| label_for(*i)).collect();
        path.push(label_for(cycle[0]));
        errors.push(ValidationError::new(
            ValidationCode::CyclicDependency,
            Some(cycle[0]),
            format!("cyclic dependency: {}", path.join(" -> ")),
        ));
    }
}

/// Structural validation of `plan` against `schema`.
pub fn validate_plan(plan: &Plan, schema: &GlobalSchema) -> ValidationReport {
    let mut errors = Vec::new();
    if plan.is_empty() {
        errors.push(ValidationError::new(
            ValidationCode::EmptyPlan,
            None,
            "plan has no sub-questions".into(),
        ));
        return ValidationReport::from_errors(errors);
    }
    structural(plan, &mut errors);
    hygiene(plan, schema, &mut errors);
    acyclic(plan, &mut errors);
    ValidationReport::from_errors(errors)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuditError {
    #[error("auditor unavailable: {0}")]
    AuditorUnavailable(String),
}

/// Semantic check of a structurally valid plan against the user's query.
pub trait Auditor: Send + Sync {
    fn audit(
        &self,
        plan: &Plan,
        query: &str,
        schema: &GlobalSchema,
    ) -> Result<Vec<ValidationError>, AuditError>;
}

/// Accepts everything.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullAuditor;

impl Auditor for NullAuditor {
    fn audit(&self, _: &Plan, _: &str, _: &GlobalSchema) -> Result<Vec<ValidationError>, AuditError> {
        Ok(Vec::new())
    }
}

pub const AGGREGATE_KEYWORDS: [&str; 5] = ["average", "sum", "count", "max", "min"];

/// Keyword heuristics for intent drift:
/// every query word naming a schema table or column must appear in some
/// sub-question, and every aggregate keyword must appear in a structured one.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicAuditor;

impl Auditor for HeuristicAuditor {
    fn audit(
        &self,
        plan: &Plan,
        query: &str,
        schema: &GlobalSchema,
    ) -> Result<Vec<ValidationError>, AuditError> {
        let names: BTreeSet<String> = schema
            .tables
            .iter()
            .flat_map(|t| {
                core::iter::once(t.name.to_lowercase())
                    .chain(t.columns.iter().map(|c| c.name.to_lowercase()))
            })
            .collect();
        let all_words: BTreeSet<String> = plan
            .subquestions
            .iter()
            .flat_map(|q| words(q.question_text()))
            .collect();
        let structured_words: BTreeSet<String> = plan
            .subquestions
            .iter()
            .filter(|q| q.known_tool() == Some(Tool::Structured))
            .flat_map(|q| words(q.question_text()))
            .collect();

        let mut findings = Vec::new();
        let mut seen = BTreeSet::new();
        for w in words(query) {
            if !seen.insert(w.clone()) {
                continue;
            }
            if names.contains(&w) && !all_words.contains(&w) {
                findings.push(
                    ValidationError::new(
                        ValidationCode::SemanticDrift,
                        None,
                        format!("query mentions `{w}` but no sub-question does"),
                    )
                    .about(w.clone()),
                );
            }
            if AGGREGATE_KEYWORDS.contains(&w.as_str()) && !structured_words.contains(&w) {
                findings.push(
                    ValidationError::new(
                        ValidationCode::SemanticDrift,
                        None,
                        format!("query asks for `{w}` but no structured sub-question computes it"),
                    )
                    .about(w.clone()),
                );
            }
        }
        Ok(findings)
    }
}

/// Runs `auditor` and wraps its findings in a report.
pub fn audit_plan(
    plan: &Plan,
    query: &str,
    schema: &GlobalSchema,
    auditor: &dyn Auditor,
) -> Result<ValidationReport, AuditError> {
    Ok(ValidationReport::from_errors(auditor.audit(plan, query, schema)?))
}
