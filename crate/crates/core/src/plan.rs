//! The DAG plan IR: sub-queries, variable references and the dependency graph.
//!
//! A plan is an ordered list of atomic sub-queries. Sub-query `i` (1-based)
//! stores its output under the label `$var_i`; later questions refer to it as
//! `$var_i` or `$var_i.column`. Edges point from a node to the nodes it
//! references, so `u -> v` means "u consumes the output of v".

use alloc::borrow::ToOwned;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};
use thiserror::Error;

use crate::hash::{push_field, sha256_hex};

/// Which store a sub-query runs against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tool {
    Structured,
    Vector,
}

impl Tool {
    /// Accepts both planner vocabularies: `sql`/`iceberg` and `vector`/`milvus`.
    pub fn parse(name: &str) -> Option<Tool> {
        match name.trim().to_ascii_lowercase().as_str() {
            "sql" | "iceberg" | "structured" => Some(Tool::Structured),
            "vector" | "milvus" => Some(Tool::Vector),
            _ => None,
        }
    }

    /// Name written by [`serialize_plan`].
    pub fn canonical_name(self) -> &'static str {
        match self {
            Tool::Structured => "iceberg",
            Tool::Vector => "milvus",
        }
    }

    pub fn other(self) -> Tool {
        match self {
            Tool::Structured => Tool::Vector,
            Tool::Vector => Tool::Structured,
        }
    }
}

/// The `tool` field as written in the plan; unrecognized names are kept so
/// the validator can report them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ToolSpec {
    Known(Tool),
    Unrecognized(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    #[default]
    Pending,
    Executed,
    Failed,
}

impl Status {
    fn parse(s: &str) -> Option<Status> {
        match s {
            "pending" => Some(Status::Pending),
            "executed" => Some(Status::Executed),
            "failed" => Some(Status::Failed),
            _ => None,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Status::Pending => "pending",
            Status::Executed => "executed",
            Status::Failed => "failed",
        }
    }
}

/// One plan node. Fields that the planner may omit are optional so that the
/// validator, not the parser, decides what is missing.
#[derive(Debug, Clone, PartialEq)]
pub struct SubQuery {
    pub index: usize,
    pub question: Option<String>,
    pub tool: Option<ToolSpec>,
    pub label: Option<String>,
    pub should_expose_answer: Option<bool>,
    pub answer_description: Option<String>,
    pub status: Status,
    pub partial_result_columns: Option<Vec<String>>,
    /// Keys this crate does not interpret, kept verbatim.
    pub extra: BTreeMap<String, Json>,
}

impl SubQuery {
    /// A well-formed pending node with the canonical label for `index`.
    pub fn new(index: usize, question: impl Into<String>, tool: Tool) -> Self {
        SubQuery {
            index,
            question: Some(question.into()),
            tool: Some(ToolSpec::Known(tool)),
            label: Some(label_for(index)),
            should_expose_answer: Some(false),
            answer_description: None,
            status: Status::Pending,
            partial_result_columns: None,
            extra: BTreeMap::new(),
        }
    }

    pub fn exposed(mut self, description: impl Into<String>) -> Self {
        self.should_expose_answer = Some(true);
        self.answer_description = Some(description.into());
        self
    }

    pub fn question_text(&self) -> &str {
        self.question.as_deref().unwrap_or("")
    }

    pub fn known_tool(&self) -> Option<Tool> {
        match &self.tool {
            Some(ToolSpec::Known(t)) => Some(*t),
            _ => None,
        }
    }

    pub fn exposes(&self) -> bool {
        self.should_expose_answer == Some(true)
    }

    /// Label the node is bound under; falls back to the canonical label.
    pub fn binding_label(&self) -> String {
        label_for(self.index)
    }
}

/// Canonical label for a 1-based index.
pub fn label_for(index: usize) -> String {
    format!("$var_{index}")
}

/// Execution context `γ`: caller role plus policy flags. Participates in
/// cache keys only.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Context {
    #[serde(default)]
    pub role: String,
    #[serde(default)]
    pub policy_flags: BTreeSet<String>,
}

impl Context {
    pub fn fingerprint(&self) -> String {
        let mut buf = String::new();
        push_field(&mut buf, &self.role);
        for flag in &self.policy_flags {
            push_field(&mut buf, flag);
        }
        sha256_hex(buf.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Plan {
    pub subquestions: Vec<SubQuery>,
    pub source_query: String,
    pub schema_signature: String,
    pub context: Context,
    pub extra: BTreeMap<String, Json>,
}

impl Plan {
    pub fn new(subquestions: Vec<SubQuery>) -> Self {
        Plan {
            subquestions,
            ..Plan::default()
        }
    }

    pub fn len(&self) -> usize {
        self.subquestions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subquestions.is_empty()
    }

    /// Node by 1-based index.
    pub fn node(&self, index: usize) -> Option<&SubQuery> {
        index.checked_sub(1).and_then(|i| self.subquestions.get(i))
    }

    pub fn node_mut(&mut self, index: usize) -> Option<&mut SubQuery> {
        index.checked_sub(1).and_then(move |i| self.subquestions.get_mut(i))
    }

    /// Copy with every node reset to pending, as stored in the plan cache.
    pub fn reset_statuses(&self) -> Plan {
        let mut p = self.clone();
        for q in &mut p.subquestions {
            q.status = Status::Pending;
            q.partial_result_columns = None;
        }
        p
    }
}

/// A parsed `$var_d[.c]` occurrence.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarRef {
    pub target_index: usize,
    pub column: Option<String>,
}

impl VarRef {
    pub fn label(&self) -> String {
        label_for(self.target_index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("malformed JSON: {0}")]
    Json(String),
    #[error("plan must be a JSON object")]
    NotAnObject,
    #[error("missing `subquestions` list")]
    MissingSubquestions,
    #[error("`subquestions` is not a list")]
    SubquestionsNotList,
    #[error("subquestion {index} is not an object")]
    NodeNotObject { index: usize },
    #[error("subquestion {index}: field `{field}` must be {expected}")]
    BadField {
        index: usize,
        field: &'static str,
        expected: &'static str,
    },
    #[error("top-level field `{field}` must be {expected}")]
    BadTopLevel {
        field: &'static str,
        expected: &'static str,
    },
}

fn opt_string(
    obj: &Map<String, Json>,
    key: &'static str,
    index: usize,
) -> Result<Option<String>, ParseError> {
    match obj.get(key) {
        None | Some(Json::Null) => Ok(None),
        Some(Json::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(ParseError::BadField {
            index,
            field: key,
            expected: "a string",
        }),
    }
}

const NODE_KEYS: [&str; 7] = [
    "question",
    "tool",
    "label",
    "should_expose_answer",
    "answer_description",
    "status",
    "partial_result_columns",
];

fn parse_node(index: usize, raw: &Json) -> Result<SubQuery, ParseError> {
    let obj = raw.as_object().ok_or(ParseError::NodeNotObject { index })?;
    let question = opt_string(obj, "question", index)?;
    let tool = opt_string(obj, "tool", index)?.map(|t| match Tool::parse(&t) {
        Some(known) => ToolSpec::Known(known),
        None => ToolSpec::Unrecognized(t),
    });
    let label = opt_string(obj, "label", index)?;
    let answer_description = opt_string(obj, "answer_description", index)?;
    let status = match opt_string(obj, "status", index)? {
        None => Status::Pending,
        Some(s) => Status::parse(&s).ok_or(ParseError::BadField {
            index,
            field: "status",
            expected: "one of pending/executed/failed",
        })?,
    };
    let partial_result_columns = match obj.get("partial_result_columns") {
        None | Some(Json::Null) => None,
        Some(Json::Array(items)) => Some(
            items
                .iter()
                .map(|c| c.as_str().map(ToOwned::to_owned))
                .collect::<Option<Vec<_>>>()
                .ok_or(ParseError::BadField {
                    index,
                    field: "partial_result_columns",
                    expected: "a list of strings",
                })?,
        ),
        Some(_) => {
            return Err(ParseError::BadField {
                index,
                field: "partial_result_columns",
                expected: "a list of strings",
            })
        }
    };

    let mut extra = BTreeMap::new();
    // A non-boolean exposure flag is kept raw; the validator reports it.
    let should_expose_answer = match obj.get("should_expose_answer") {
        Some(Json::Bool(b)) => Some(*b),
        None => None,
        Some(other) => {
            extra.insert("should_expose_answer".to_string(), other.clone());
            None
        }
    };
    for (k, v) in obj {
        if !NODE_KEYS.contains(&k.as_str()) {
            extra.insert(k.clone(), v.clone());
        }
    }
    Ok(SubQuery {
        index,
        question,
        tool,
        label,
        should_expose_answer,
        answer_description,
        status,
        partial_result_columns,
        extra,
    })
}

/// Parses plan JSON. Only shape is checked here; semantic rules belong to
/// the validator.
pub fn parse_plan(json_text: &str) -> Result<Plan, ParseError> {
    let root: Json =
        serde_json::from_str(json_text).map_err(|e| ParseError::Json(e.to_string()))?;
    let obj = root.as_object().ok_or(ParseError::NotAnObject)?;
    let list = match obj.get("subquestions") {
        None => return Err(ParseError::MissingSubquestions),
        Some(Json::Array(items)) => items,
        Some(_) => return Err(ParseError::SubquestionsNotList),
    };
    let subquestions = list
        .iter()
        .enumerate()
        .map(|(i, raw)| parse_node(i + 1, raw))
        .collect::<Result<Vec<_>, _>>()?;

    let top_string = |key: &'static str| -> Result<String, ParseError> {
        match obj.get(key) {
            None | Some(Json::Null) => Ok(String::new()),
            Some(Json::String(s)) => Ok(s.clone()),
            Some(_) => Err(ParseError::BadTopLevel {
                field: key,
                expected: "a string",
            }),
        }
    };
    let source_query = top_string("source_query")?;
    let schema_signature = top_string("schema_signature")?;
    let context = match obj.get("context") {
        None | Some(Json::Null) => Context::default(),
        Some(raw) => serde_json::from_value(raw.clone()).map_err(|_| ParseError::BadTopLevel {
            field: "context",
            expected: "an object with `role` and `policy_flags`",
        })?,
    };
    let extra = obj
        .iter()
        .filter(|(k, _)| {
            !matches!(
                k.as_str(),
                "subquestions" | "source_query" | "schema_signature" | "context"
            )
        })
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();

    Ok(Plan {
        subquestions,
        source_query,
        schema_signature,
        context,
        extra,
    })
}

fn node_to_json(q: &SubQuery) -> Json {
    let mut m = Map::new();
    for (k, v) in &q.extra {
        m.insert(k.clone(), v.clone());
    }
    if let Some(s) = &q.question {
        m.insert("question".into(), Json::String(s.clone()));
    }
    match &q.tool {
        Some(ToolSpec::Known(t)) => {
            m.insert("tool".into(), Json::String(t.canonical_name().into()));
        }
        Some(ToolSpec::Unrecognized(s)) => {
            m.insert("tool".into(), Json::String(s.clone()));
        }
        None => {}
    }
    if let Some(s) = &q.label {
        m.insert("label".into(), Json::String(s.clone()));
    }
    if let Some(b) = q.should_expose_answer {
        m.insert("should_expose_answer".into(), Json::Bool(b));
    }
    if let Some(s) = &q.answer_description {
        m.insert("answer_description".into(), Json::String(s.clone()));
    }
    if q.status != Status::Pending {
        m.insert("status".into(), Json::String(q.status.as_str().into()));
    }
    if let Some(cols) = &q.partial_result_columns {
        m.insert(
            "partial_result_columns".into(),
            Json::Array(cols.iter().cloned().map(Json::String).collect()),
        );
    }
    Json::Object(m)
}

pub fn plan_to_json(plan: &Plan) -> Json {
    let mut m = Map::new();
    for (k, v) in &plan.extra {
        m.insert(k.clone(), v.clone());
    }
    m.insert(
        "subquestions".into(),
        Json::Array(plan.subquestions.iter().map(node_to_json).collect()),
    );
    if !plan.source_query.is_empty() {
        m.insert("source_query".into(), Json::String(plan.source_query.clone()));
    }
    if !plan.schema_signature.is_empty() {
        m.insert(
            "schema_signature".into(),
            Json::String(plan.schema_signature.clone()),
        );
    }
    if plan.context != Context::default() {
        m.insert(
            "context".into(),
            serde_json::to_value(&plan.context).unwrap_or(Json::Null),
        );
    }
    Json::Object(m)
}

/// Pretty-printed plan JSON. Tools are written as `iceberg`/`milvus`.
pub fn serialize_plan(plan: &Plan) -> String {
    serde_json::to_string_pretty(&plan_to_json(plan)).unwrap_or_default()
}

/// Every `$var_<digits>[.<identifier>]` in `text` with its byte span.
pub fn scan_var_refs(text: &str) -> Vec<(Range<usize>, VarRef)> {
    const PREFIX: &str = "$var_";
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut pos = 0;
    while let Some(found) = text[pos..].find(PREFIX) {
        let start = pos + found;
        let digits_start = start + PREFIX.len();
        let mut end = digits_start;
        while end < bytes.len() && bytes[end].is_ascii_digit() {
            end += 1;
        }
        if end == digits_start {
            pos = digits_start;
            continue;
        }
        let target_index = text[digits_start..end]
            .bytes()
            .fold(0usize, |acc, d| {
                acc.saturating_mul(10).saturating_add(usize::from(d - b'0'))
            });
        let mut column = None;
        if end + 1 < bytes.len()
            && bytes[end] == b'.'
            && (bytes[end + 1].is_ascii_alphabetic() || bytes[end + 1] == b'_')
        {
            let col_start = end + 1;
            let mut col_end = col_start + 1;
            while col_end < bytes.len()
                && (bytes[col_end].is_ascii_alphanumeric() || bytes[col_end] == b'_')
            {
                col_end += 1;
            }
            column = Some(text[col_start..col_end].to_string());
            end = col_end;
        }
        out.push((
            start..end,
            VarRef {
                target_index,
                column,
            },
        ));
        pos = end;
    }
    out
}

/// Variable references in order of appearance.
pub fn extract_var_refs(question: &str) -> Vec<VarRef> {
    scan_var_refs(question).into_iter().map(|(_, r)| r).collect()
}

/// Dependency graph over 1-based node indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyGraph {
    node_count: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl DependencyGraph {
    pub fn from_edges(node_count: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        DependencyGraph {
            node_count,
            edges: edges
                .into_iter()
                .filter(|&(u, v)| (1..=node_count).contains(&u) && (1..=node_count).contains(&v))
                .collect(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    /// Nodes that `u` references.
    pub fn dependencies_of(&self, u: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.range((u, 0)..(u + 1, 0)).map(|&(_, v)| v)
    }

    /// Nodes that reference `v`.
    pub fn dependents_of(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges
            .iter()
            .filter(move |&&(_, t)| t == v)
            .map(|&(u, _)| u)
    }

    /// Depth-first search for a directed cycle; returns the nodes on the
    /// first cycle found (starting from the lowest index).
    pub fn find_cycle(&self) -> Option<Vec<usize>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            White,
            Grey,
            Black,
        }
        let n = self.node_count;
        let mut mark = alloc::vec![Mark::White; n + 1];
        let mut path: Vec<usize> = Vec::new();
        for root in 1..=n {
            if mark[root] != Mark::White {
                continue;
            }
            // Explicit stack of (node, remaining successors).
            let mut stack: Vec<(usize, Vec<usize>)> = Vec::new();
            mark[root] = Mark::Grey;
            path.push(root);
            stack.push((root, self.dependencies_of(root).collect()));
            while let Some((node, succ)) = stack.last_mut() {
                if let Some(next) = succ.pop() {
                    match mark[next] {
                        Mark::Grey => {
                            let at = path.iter().position(|&p| p == next).unwrap_or(0);
                            return Some(path[at..].to_vec());
                        }
                        Mark::White => {
                            mark[next] = Mark::Grey;
                            path.push(next);
                            let s = self.dependencies_of(next).collect();
                            stack.push((next, s));
                        }
                        Mark::Black => {}
                    }
                } else {
                    mark[*node] = Mark::Black;
                    path.pop();
                    stack.pop();
                }
            }
        }
        None
    }
}

/// Edge `u -> v` for every `$var_v` in question `u` with `1 <= v <= n`.
pub fn build_dependency_graph(plan: &Plan) -> DependencyGraph {
    let n = plan.len();
    let mut edges = BTreeSet::new();
    for q in &plan.subquestions {
        for r in extract_var_refs(q.question_text()) {
            if (1..=n).contains(&r.target_index) {
                edges.insert((q.index, r.target_index));
            }
        }
    }
    DependencyGraph {
        node_count: n,
        edges,
    }
}
