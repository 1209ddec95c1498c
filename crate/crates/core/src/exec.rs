//! Pure pieces of plan execution: wave scheduling, variable bindings,
//! slimming, question resolution and answer synthesis. The threaded
//! executor itself lives in the `adot` crate.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{Answer, NodeData, ResolvedSubQuery};
use crate::plan::{build_dependency_graph, extract_var_refs, label_for, scan_var_refs, Plan, Status, SubQuery};
use crate::schema::GlobalSchema;
use crate::value::Value;

/// Lists with at most this many distinct values are inlined into questions.
pub const INLINE_THRESHOLD: usize = 100;

/// Column name to distinct values, in first-appearance order.
pub type SlimView = BTreeMap<String, Vec<Value>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeedbackClass {
    TranslationFailed,
    UnknownVariableAtRuntime,
    EmptyDependency,
    StoreError,
    Timeout,
    NoMatch,
    /// The node never ran because a dependency failed.
    Skipped,
}

impl FeedbackClass {
    pub fn as_str(self) -> &'static str {
        match self {
            FeedbackClass::TranslationFailed => "TranslationFailed",
            FeedbackClass::UnknownVariableAtRuntime => "UnknownVariableAtRuntime",
            FeedbackClass::EmptyDependency => "EmptyDependency",
            FeedbackClass::StoreError => "StoreError",
            FeedbackClass::Timeout => "Timeout",
            FeedbackClass::NoMatch => "NoMatch",
            FeedbackClass::Skipped => "Skipped",
        }
    }
}

/// Runtime failure report for one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionFeedback {
    pub node_index: usize,
    pub error_class: FeedbackClass,
    pub message: String,
    /// The failure came from the store or transport, not from the plan.
    #[serde(default)]
    pub infrastructure: bool,
    /// What the node produced before failing, rendered.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed: Option<String>,
    /// Labels bound when the node failed.
    #[serde(default)]
    pub bound_labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Binding {
    pub label: String,
    pub full_result: NodeData,
    pub slim_view: SlimView,
    pub answer: Answer,
    pub produced_by: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BindError {
    #[error("{0} is already bound")]
    AlreadyBound(String),
}

/// Single-assignment store of node results.
#[derive(Debug, Clone, Default)]
pub struct VariableStore {
    bindings: BTreeMap<String, Arc<Binding>>,
}

impl VariableStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, binding: Binding) -> Result<Arc<Binding>, BindError> {
        if self.bindings.contains_key(&binding.label) {
            return Err(BindError::AlreadyBound(binding.label));
        }
        let b = Arc::new(binding);
        self.bindings.insert(b.label.clone(), b.clone());
        Ok(b)
    }

    pub fn get(&self, label: &str) -> Option<&Arc<Binding>> {
        self.bindings.get(label)
    }

    pub fn labels(&self) -> Vec<String> {
        self.bindings.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("dependency cycle among nodes {0:?}")]
pub struct CycleDetected(pub Vec<usize>);

/// Groups the non-executed nodes into waves; a node lands in the first wave
/// after all of its dependencies. Executed nodes count as satisfied.
/// References to indices outside the plan are ignored here.
pub fn topological_waves(plan: &Plan) -> Result<Vec<BTreeSet<usize>>, CycleDetected> {
    let graph = build_dependency_graph(plan);
    let mut remaining: BTreeSet<usize> = plan
        .subquestions
        .iter()
        .filter(|q| q.status != Status::Executed)
        .map(|q| q.index)
        .collect();
    let mut waves = Vec::new();
    while !remaining.is_empty() {
        let wave: BTreeSet<usize> = remaining
            .iter()
            .copied()
            .filter(|&u| graph.dependencies_of(u).all(|v| !remaining.contains(&v)))
            .collect();
        if wave.is_empty() {
            return Err(CycleDetected(remaining.into_iter().collect()));
        }
        for u in &wave {
            remaining.remove(u);
        }
        waves.push(wave);
    }
    Ok(waves)
}

/// Keys a producer's slim view must carry: every column that a dependent
/// references through this producer's label, plus the cross-link keys that
/// the result happens to contain.
pub fn required_keys(plan: &Plan, schema: &GlobalSchema, producer: usize, data: &NodeData) -> BTreeSet<String> {
    let mut keys: BTreeSet<String> = plan
        .subquestions
        .iter()
        .flat_map(|q| extract_var_refs(q.question_text()))
        .filter(|r| r.target_index == producer)
        .filter_map(|r| r.column)
        .collect();
    let present = data.keys();
    let mut links: BTreeSet<&str> = schema.cross_link_keys();
    links.insert("document_id");
    for k in links {
        if present.iter().any(|p| p == k) {
            keys.insert(k.to_string());
        }
    }
    keys
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("result has no column `{0}`")]
pub struct MissingKey(pub String);

fn distinct(values: Vec<Value>) -> Vec<Value> {
    let mut seen = BTreeSet::new();
    values
        .into_iter()
        .filter(|v| seen.insert(format!("{v:?}")))
        .collect()
}

/// Projects `data` onto `keys`, deduplicating each column.
pub fn slim_binding(data: &NodeData, keys: &BTreeSet<String>) -> Result<SlimView, MissingKey> {
    keys.iter()
        .map(|k| {
            data.values_of(k)
                .map(|vals| (k.clone(), distinct(vals)))
                .ok_or_else(|| MissingKey(k.clone()))
        })
        .collect()
}

/// Every key of `data` with all of its values (slimming disabled).
pub fn full_view(data: &NodeData) -> SlimView {
    data.keys()
        .into_iter()
        .filter_map(|k| data.values_of(&k).map(|v| (k, v)))
        .collect()
}

/// Comma-separated rendering of a value list; text values are quoted.
pub fn render_value_list(values: &[Value]) -> String {
    values
        .iter()
        .map(Value::render_quoted)
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResolveError {
    #[error("{0} is not bound")]
    Unbound(String),
    #[error("{label} has no column `{column}`")]
    MissingColumn { label: String, column: String },
}

/// Substitutes bound variables into a node's question.
///
/// `$var_d.c` becomes the distinct values of column `c` when there are at
/// most `inline_threshold` of them, and is left in place otherwise; the
/// adapter then reads the values from `bindings_in`. A bare `$var_d` becomes
/// the rendered answer of node `d`.
pub fn resolve_question(
    node: &SubQuery,
    store: &VariableStore,
    inline_threshold: usize,
) -> Result<ResolvedSubQuery, ResolveError> {
    let text = node.question_text();
    let mut out = String::with_capacity(text.len());
    let mut bindings_in = BTreeMap::new();
    let mut last = 0;
    for (span, r) in scan_var_refs(text) {
        let label = label_for(r.target_index);
        let binding = store
            .get(&label)
            .ok_or_else(|| ResolveError::Unbound(label.clone()))?;
        out.push_str(&text[last..span.start]);
        match &r.column {
            Some(col) => {
                let values = binding
                    .slim_view
                    .get(col)
                    .ok_or_else(|| ResolveError::MissingColumn {
                        label: label.clone(),
                        column: col.clone(),
                    })?;
                let values = distinct(values.clone());
                if values.len() <= inline_threshold {
                    out.push_str(&render_value_list(&values));
                } else {
                    out.push_str(&text[span.clone()]);
                }
            }
            None => out.push_str(&binding.answer.render()),
        }
        last = span.end;
        bindings_in
            .entry(label.clone())
            .or_insert_with(|| binding.slim_view.clone());
    }
    out.push_str(&text[last..]);
    Ok(ResolvedSubQuery {
        node_index: node.index,
        label: node.binding_label(),
        question: out,
        tool: node.known_tool(),
        bindings_in,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SynthError {
    #[error("no exposed results to synthesize")]
    NoExposedResults,
}

/// Turns exposed `(answer_description, value)` pairs into the final answer.
pub trait Synthesizer: Send + Sync {
    fn synthesize(&self, exposed: &[(String, String)]) -> Result<String, SynthError>;
}

/// One `description: value` line per exposed result, identical lines once.
#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateSynthesizer;

impl Synthesizer for TemplateSynthesizer {
    fn synthesize(&self, exposed: &[(String, String)]) -> Result<String, SynthError> {
        if exposed.is_empty() {
            return Err(SynthError::NoExposedResults);
        }
        let mut seen = BTreeSet::new();
        let lines: Vec<String> = exposed
            .iter()
            .map(|(d, v)| format!("{d}: {v}"))
            .filter(|l| seen.insert(l.clone()))
            .collect();
        Ok(lines.join("\n"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    NodeCompleted,
    NodeFailed,
    PartialAnswer,
    PlanCompleted,
}

/// Streamed progress notification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionEvent {
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl ExecutionEvent {
    pub fn node_completed(index: usize) -> Self {
        ExecutionEvent {
            kind: EventKind::NodeCompleted,
            node_index: Some(index),
            answer_description: None,
            value: None,
            message: None,
        }
    }

    pub fn node_failed(index: usize, message: String) -> Self {
        ExecutionEvent {
            message: Some(message),
            kind: EventKind::NodeFailed,
            ..Self::node_completed(index)
        }
    }

    pub fn partial_answer(index: usize, description: String, value: String) -> Self {
        ExecutionEvent {
            kind: EventKind::PartialAnswer,
            node_index: Some(index),
            answer_description: Some(description),
            value: Some(value),
            message: None,
        }
    }

    pub fn plan_completed(message: Option<String>) -> Self {
        ExecutionEvent {
            kind: EventKind::PlanCompleted,
            node_index: None,
            answer_description: None,
            value: None,
            message,
        }
    }
}
