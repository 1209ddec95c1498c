//! Diagnose, fix or replan: the remediation loop for invalid or failing
//! plans.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::exec::{ExecutionFeedback, FeedbackClass};
use crate::plan::{label_for, scan_var_refs, Plan, Status, Tool, ToolSpec};
use crate::schema::GlobalSchema;
use crate::text::{edit_distance, words};
use crate::validate::{validate_plan, ValidationCode, ValidationError, ValidationReport};

/// First recommendation when a store is down.
pub const INFRASTRUCTURE_ADVICE: &str = "store unreachable; retry or escalate";

pub const DEFAULT_MAX_ITERATIONS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum FeedbackItem {
    Validation(ValidationError),
    Execution(ExecutionFeedback),
}

impl FeedbackItem {
    pub fn node_index(&self) -> Option<usize> {
        match self {
            FeedbackItem::Validation(v) => v.node_index,
            FeedbackItem::Execution(e) => Some(e.node_index),
        }
    }

    fn subject(&self) -> Option<&str> {
        match self {
            FeedbackItem::Validation(v) => v.subject.as_deref(),
            FeedbackItem::Execution(_) => None,
        }
    }

    pub fn from_report(report: &ValidationReport) -> Vec<FeedbackItem> {
        report
            .errors
            .iter()
            .cloned()
            .map(FeedbackItem::Validation)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DiagnosisClass {
    ToolMismatch,
    UnresolvedVariable,
    SchemaDrift,
    BadLabelFormat,
    MissingAnswerDescription,
    InfrastructureDown,
    SubqueryFailure,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub class: DiagnosisClass,
    pub node_index: Option<usize>,
    pub evidence: Vec<FeedbackItem>,
}

fn classify(item: &FeedbackItem) -> DiagnosisClass {
    use DiagnosisClass::*;
    match item {
        FeedbackItem::Validation(v) => match v.code {
            ValidationCode::BadTool => ToolMismatch,
            ValidationCode::UnknownVariable => UnresolvedVariable,
            ValidationCode::UnknownColumn => SchemaDrift,
            ValidationCode::BadLabel => BadLabelFormat,
            ValidationCode::MissingAnswerDescription => MissingAnswerDescription,
            _ => Unknown,
        },
        FeedbackItem::Execution(e) => match e.error_class {
            FeedbackClass::StoreError | FeedbackClass::Timeout if e.infrastructure => InfrastructureDown,
            FeedbackClass::TranslationFailed | FeedbackClass::NoMatch => SubqueryFailure,
            FeedbackClass::UnknownVariableAtRuntime => UnresolvedVariable,
            _ => Unknown,
        },
    }
}

/// One diagnosis per feedback item.
pub fn diagnose(feedback: &[FeedbackItem]) -> Vec<Diagnosis> {
    feedback
        .iter()
        .map(|item| Diagnosis {
            class: classify(item),
            node_index: item.node_index(),
            evidence: vec![item.clone()],
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataOpsAction {
    /// Nothing in the plan can fix this; advise the operator.
    Recommend(Vec<String>),
    /// A repaired plan that passes structural validation.
    Fix { plan: Plan, edits: Vec<String> },
    Replan(Plan),
    Abort { reason: String },
}

impl DataOpsAction {
    pub fn kind(&self) -> ActionKind {
        match self {
            DataOpsAction::Recommend(_) => ActionKind::Recommend,
            DataOpsAction::Fix { .. } => ActionKind::Fix,
            DataOpsAction::Replan(_) => ActionKind::Replan,
            DataOpsAction::Abort { .. } => ActionKind::Abort,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Recommend,
    Fix,
    Replan,
    Abort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub diagnoses: Vec<(DiagnosisClass, Option<usize>)>,
    pub action: ActionKind,
    pub delta: Vec<String>,
}

/// Record of remediation iterations; never longer than the iteration budget.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EditHistory {
    pub entries: Vec<HistoryEntry>,
}

impl EditHistory {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn fixed_before(&self, node: usize) -> bool {
        self.entries.iter().any(|e| {
            e.action == ActionKind::Fix
                && e.diagnoses
                    .iter()
                    .any(|(c, n)| *c == DiagnosisClass::SubqueryFailure && *n == Some(node))
        })
    }
}

/// Produces a fresh plan from the current one and its feedback.
pub trait Replanner: Send + Sync {
    fn replan(
        &self,
        plan: &Plan,
        schema: &GlobalSchema,
        feedback: &[FeedbackItem],
    ) -> Result<Option<Plan>, String>;
}

/// Never has an alternative plan.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoopReplanner;

impl Replanner for NoopReplanner {
    fn replan(&self, _: &Plan, _: &GlobalSchema, _: &[FeedbackItem]) -> Result<Option<Plan>, String> {
        Ok(None)
    }
}

/// Replaces each whole `old` token (not followed by an identifier character
/// or a digit) with `new`.
fn replace_token(text: &str, old: &str, new: &str) -> String {
    if old.is_empty() {
        return text.to_string();
    }
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for (pos, _) in text.match_indices(old) {
        if pos < last {
            continue;
        }
        let end = pos + old.len();
        let boundary = text[end..]
            .chars()
            .next()
            .is_none_or(|c| !(c.is_alphanumeric() || c == '_'));
        if boundary {
            out.push_str(&text[last..pos]);
            out.push_str(new);
            last = end;
        }
    }
    out.push_str(&text[last..]);
    out
}

fn fix_label(plan: &mut Plan, node: usize) -> Option<String> {
    let q = plan.node_mut(node)?;
    let expected = label_for(node);
    let old = q.label.replace(expected.clone())?;
    if old == expected {
        return None;
    }
    if old.starts_with('$') && !old.starts_with("$var_") {
        for other in &mut plan.subquestions {
            if let Some(text) = &mut other.question {
                *text = replace_token(text, &old, &expected);
            }
        }
    }
    Some(format!("node {node}: label `{old}` -> `{expected}`"))
}

/// Structured when the question names a table column that is not a
/// cross-link key; vector otherwise.
fn implied_tool(question: &str, schema: &GlobalSchema) -> Tool {
    let links = schema.cross_link_keys();
    let mut columns: BTreeSet<String> = schema
        .tables
        .iter()
        .flat_map(|t| &t.columns)
        .map(|c| c.name.to_lowercase())
        .filter(|c| !links.contains(c.as_str()) && c != "document_id")
        .collect();
    columns.extend(schema.tables.iter().map(|t| t.name.to_lowercase()));
    let text: String = scan_var_refs(question)
        .into_iter()
        .rev()
        .fold(question.to_string(), |mut s, (span, _)| {
            s.replace_range(span, " ");
            s
        });
    if words(&text).iter().any(|w| columns.contains(w)) {
        Tool::Structured
    } else {
        Tool::Vector
    }
}

fn fix_tool(plan: &mut Plan, node: usize, schema: &GlobalSchema) -> Option<String> {
    let q = plan.node_mut(node)?;
    let tool = implied_tool(q.question_text(), schema);
    let before = q.tool.clone();
    if before == Some(ToolSpec::Known(tool)) {
        return None;
    }
    q.tool = Some(ToolSpec::Known(tool));
    let was = match before {
        Some(ToolSpec::Known(t)) => t.canonical_name().to_string(),
        Some(ToolSpec::Unrecognized(s)) => s,
        None => "none".into(),
    };
    Some(format!("node {node}: tool `{was}` -> `{}`", tool.canonical_name()))
}

fn fix_description(plan: &mut Plan, node: usize) -> Option<String> {
    let q = plan.node_mut(node)?;
    let question = q.question.clone().filter(|s| !s.trim().is_empty())?;
    q.answer_description = Some(question);
    Some(format!("node {node}: answer_description copied from question"))
}

fn fix_column(plan: &mut Plan, node: usize, column: &str, schema: &GlobalSchema) -> Option<String> {
    let candidates: Vec<&str> = schema
        .known_attributes()
        .into_iter()
        .filter(|a| *a != column && edit_distance(a, column) <= 2)
        .collect();
    let [replacement] = candidates.as_slice() else { return None };
    let q = plan.node_mut(node)?;
    let text = q.question.clone()?;
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    let mut changed = false;
    for (span, r) in scan_var_refs(&text) {
        if r.column.as_deref() == Some(column) {
            out.push_str(&text[last..span.start]);
            out.push_str(&format!("{}.{replacement}", label_for(r.target_index)));
            last = span.end;
            changed = true;
        }
    }
    if !changed {
        return None;
    }
    out.push_str(&text[last..]);
    q.question = Some(out);
    Some(format!("node {node}: column `{column}` -> `{replacement}`"))
}

/// Retargets `$var_{n+1}` to `$var_n` in node `node` of an `n`-node plan
/// when that is the only sensible reading.
fn fix_reference(plan: &mut Plan, node: usize, var: &str) -> Option<String> {
    let n = plan.len();
    let d: usize = var.strip_prefix("$var_")?.parse().ok()?;
    if d != n + 1 || node == n {
        return None;
    }
    let q = plan.node_mut(node)?;
    let text = q.question.clone()?;
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for (span, r) in scan_var_refs(&text) {
        if r.target_index == d {
            out.push_str(&text[last..span.start]);
            out.push_str(&label_for(n));
            if let Some(c) = &r.column {
                out.push('.');
                out.push_str(c);
            }
            last = span.end;
        }
    }
    out.push_str(&text[last..]);
    q.question = Some(out);
    Some(format!("node {node}: `{var}` -> `{}`", label_for(n)))
}

fn apply_rule(plan: &mut Plan, d: &Diagnosis, schema: &GlobalSchema, history: &EditHistory) -> Option<String> {
    let node = d.node_index?;
    let subject = d.evidence.first().and_then(FeedbackItem::subject);
    match d.class {
        DiagnosisClass::BadLabelFormat => fix_label(plan, node),
        DiagnosisClass::ToolMismatch => fix_tool(plan, node, schema),
        DiagnosisClass::MissingAnswerDescription => fix_description(plan, node),
        DiagnosisClass::SchemaDrift => fix_column(plan, node, subject?, schema),
        DiagnosisClass::UnresolvedVariable => fix_reference(plan, node, subject?),
        DiagnosisClass::SubqueryFailure if !history.fixed_before(node) => {
            let edit = fix_tool(plan, node, schema)?;
            let q = plan.node_mut(node)?;
            q.status = Status::Pending;
            Some(edit)
        }
        _ => None,
    }
}

/// Chooses one remediation for the current diagnoses and appends it to
/// `history`. Fix candidates are validated before being returned; a failed
/// fix escalates to replanning.
pub fn remediate(
    plan: &Plan,
    schema: &GlobalSchema,
    diagnoses: &[Diagnosis],
    history: &mut EditHistory,
    replanner: &dyn Replanner,
    max_iterations: usize,
) -> DataOpsAction {
    if history.len() >= max_iterations {
        return DataOpsAction::Abort {
            reason: format!("budget exhausted after {} remediation attempts", history.len()),
        };
    }
    let action = choose(plan, schema, diagnoses, history, replanner);
    let delta = match &action {
        DataOpsAction::Fix { edits, .. } => edits.clone(),
        DataOpsAction::Recommend(r) => r.clone(),
        DataOpsAction::Replan(p) => vec![format!("replanned into {} sub-questions", p.len())],
        DataOpsAction::Abort { reason } => vec![reason.clone()],
    };
    history.entries.push(HistoryEntry {
        iteration: history.len() + 1,
        diagnoses: diagnoses.iter().map(|d| (d.class, d.node_index)).collect(),
        action: action.kind(),
        delta,
    });
    action
}

fn choose(
    plan: &Plan,
    schema: &GlobalSchema,
    diagnoses: &[Diagnosis],
    history: &EditHistory,
    replanner: &dyn Replanner,
) -> DataOpsAction {
    if diagnoses.is_empty() {
        return DataOpsAction::Abort {
            reason: "nothing to remediate".into(),
        };
    }
    let down: Vec<&Diagnosis> = diagnoses
        .iter()
        .filter(|d| d.class == DiagnosisClass::InfrastructureDown)
        .collect();
    if !down.is_empty() {
        let mut advice = vec![String::from(INFRASTRUCTURE_ADVICE)];
        advice.extend(down.iter().flat_map(|d| &d.evidence).map(|e| match e {
            FeedbackItem::Execution(f) => format!(
                "node {}: {} ({})",
                f.node_index,
                f.error_class.as_str(),
                f.message
            ),
            FeedbackItem::Validation(v) => v.detail.clone(),
        }));
        advice.dedup();
        return DataOpsAction::Recommend(advice);
    }

    let mut fixed = plan.clone();
    let mut edits = Vec::new();
    let mut all_fixed = true;
    for d in diagnoses {
        match apply_rule(&mut fixed, d, schema, history) {
            Some(e) => edits.push(e),
            None => all_fixed = false,
        }
    }
    if all_fixed && validate_plan(&fixed, schema).is_valid {
        return DataOpsAction::Fix { plan: fixed, edits };
    }

    let feedback: Vec<FeedbackItem> = diagnoses.iter().flat_map(|d| d.evidence.clone()).collect();
    match replanner.replan(plan, schema, &feedback) {
        Ok(Some(p)) => DataOpsAction::Replan(p),
        Ok(None) => DataOpsAction::Abort {
            reason: "no applicable fix and the replanner produced no plan".into(),
        },
        Err(e) => DataOpsAction::Abort {
            reason: format!("replanner failed: {e}"),
        },
    }
}
