//! Tool adapters, question translation and planners.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use thiserror::Error;

use crate::cache::normalize_query;
use crate::embed::Embedder;
use crate::exec::{FeedbackClass, SlimView};
use crate::plan::{parse_plan, scan_var_refs, Plan, Tool};
use crate::query::{
    exec_structured, parse_number, parse_query, AggFunc, CmpOp, ColumnRef, Predicate, QueryError,
    SelectItem, StructuredQuery,
};
use crate::schema::{ColumnType, GlobalSchema, TableSchema};
use crate::table::{ResultSet, TableStore};
use crate::value::{SourceRef, Value};
use crate::vector::{search_vector, ChunkHit, SearchError, VectorIndex};

/// A node's question after variable substitution.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedSubQuery {
    pub node_index: usize,
    pub label: String,
    pub question: String,
    pub tool: Option<Tool>,
    /// Slim views of every binding the question referenced, by label.
    pub bindings_in: BTreeMap<String, SlimView>,
}

impl ResolvedSubQuery {
    pub fn new(node_index: usize, question: impl Into<String>, tool: Tool) -> Self {
        ResolvedSubQuery {
            node_index,
            label: crate::plan::label_for(node_index),
            question: question.into(),
            tool: Some(tool),
            bindings_in: BTreeMap::new(),
        }
    }

    fn bound_values(&self, label: &str, column: &str) -> Option<Vec<Value>> {
        self.bindings_in.get(label)?.get(column).cloned()
    }
}

/// Raw result of one node.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeData {
    Rows(ResultSet),
    Hits(Vec<ChunkHit>),
}

const HIT_FIELDS: [&str; 4] = ["chunk_id", "document_id", "text", "score"];

impl NodeData {
    pub fn len(&self) -> usize {
        match self {
            NodeData::Rows(rs) => rs.len(),
            NodeData::Hits(h) => h.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Column names, or for hits the fixed fields plus every metadata key.
    pub fn keys(&self) -> Vec<String> {
        match self {
            NodeData::Rows(rs) => rs.columns.clone(),
            NodeData::Hits(hits) => {
                let mut keys: Vec<String> = HIT_FIELDS.iter().map(|s| s.to_string()).collect();
                let meta: BTreeSet<&String> = hits.iter().flat_map(|h| h.metadata.keys()).collect();
                for k in meta {
                    if !keys.contains(k) {
                        keys.push(k.clone());
                    }
                }
                keys
            }
        }
    }

    pub fn values_of(&self, key: &str) -> Option<Vec<Value>> {
        match self {
            NodeData::Rows(rs) => rs.column_values(key),
            NodeData::Hits(hits) => {
                let field = |h: &ChunkHit| -> Value {
                    match key {
                        "chunk_id" => Value::Int(h.chunk_id as i64),
                        "document_id" => Value::Int(h.document_id),
                        "text" => Value::Text(h.text.clone()),
                        "score" => Value::Float(h.score),
                        k => h.metadata.get(k).cloned().unwrap_or(Value::Null),
                    }
                };
                let known = HIT_FIELDS.contains(&key) || hits.iter().any(|h| h.metadata.contains_key(key));
                known.then(|| hits.iter().map(field).collect())
            }
        }
    }

    pub fn provenance(&self) -> Vec<SourceRef> {
        match self {
            NodeData::Rows(rs) => rs.all_provenance(),
            NodeData::Hits(hits) => hits.iter().map(ChunkHit::source_ref).collect(),
        }
    }

    /// Up to `n` short renderings of the result.
    pub fn samples(&self, n: usize) -> Vec<String> {
        match self {
            NodeData::Rows(rs) => rs
                .rows
                .iter()
                .take(n)
                .map(|r| r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" | "))
                .collect(),
            NodeData::Hits(hits) => hits
                .iter()
                .take(n)
                .map(|h| format!("doc {} chunk {} ({:.3})", h.document_id, h.chunk_id, h.score))
                .collect(),
        }
    }
}

/// A node's answer as shown to users and substituted for bare `$var_d`.
#[derive(Debug, Clone, PartialEq)]
pub enum Answer {
    Values(Vec<Value>),
    Text(String),
}

impl Answer {
    pub fn render(&self) -> String {
        match self {
            Answer::Values(v) => {
                let mut seen = BTreeSet::new();
                v.iter()
                    .map(|x| x.to_string())
                    .filter(|s| seen.insert(s.clone()))
                    .collect::<Vec<_>>()
                    .join(", ")
            }
            Answer::Text(t) => t.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterOutput {
    pub data: NodeData,
    pub answer: Answer,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{class:?}: {message}")]
pub struct AdapterError {
    pub class: FeedbackClass,
    pub message: String,
    pub infrastructure: bool,
    pub observed: Option<Answer>,
}

impl AdapterError {
    pub fn new(class: FeedbackClass, message: impl Into<String>) -> Self {
        AdapterError {
            class,
            message: message.into(),
            infrastructure: false,
            observed: None,
        }
    }

    /// A store or transport failure, as opposed to a plan defect.
    pub fn infrastructure(class: FeedbackClass, message: impl Into<String>) -> Self {
        AdapterError {
            infrastructure: true,
            ..Self::new(class, message)
        }
    }

    pub fn with_observed(mut self, observed: Answer) -> Self {
        self.observed = Some(observed);
        self
    }
}

/// Executes one resolved sub-question against one store.
pub trait ToolAdapter: Send + Sync {
    fn run(&self, rq: &ResolvedSubQuery) -> Result<AdapterOutput, AdapterError>;
}

/// Natural language to the structured mini-language.
pub trait Translator: Send + Sync {
    fn translate(&self, question: &str) -> Result<StructuredQuery, String>;
}

/// Template-driven translator.
///
/// Understands, case-insensitively:
/// * anything between backticks, parsed as a structured query;
/// * `what is the <col> of ... with <key> in <list>`, where `<list>` is
///   comma-separated literals or a symbolic `$var_d.c`;
/// * `[what is the] <agg> of [the] <col> [where <col> = <value>]` with
///   `<agg>` one of average, sum, count, max, min.
#[derive(Debug, Clone)]
pub struct PatternTranslator {
    schema: GlobalSchema,
}

const LOOKUP_PREFIXES: [&str; 4] = ["what is the ", "what are the ", "what was the ", "what were the "];

fn lead_identifier(s: &str) -> Option<&str> {
    let end = s
        .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
        .unwrap_or(s.len());
    (end > 0).then(|| &s[..end])
}

fn strip_terminal(s: &str) -> &str {
    s.trim().trim_end_matches(['?', '.', '!']).trim_end()
}

fn split_list(s: &str) -> Vec<String> {
    let mut items = Vec::new();
    let mut cur = String::new();
    let mut quote: Option<char> = None;
    for c in s.chars() {
        match (quote, c) {
            (Some(q), c) if c == q => {
                quote = None;
                cur.push(c);
            }
            (Some(_), c) => cur.push(c),
            (None, '\'' | '"') => {
                quote = Some(c);
                cur.push(c);
            }
            (None, ',') => items.push(core::mem::take(&mut cur)),
            (None, c) => cur.push(c),
        }
    }
    items.push(cur);
    items
        .into_iter()
        .map(|i| i.trim().to_string())
        .filter(|i| !i.is_empty())
        .collect()
}

fn literal(raw: &str) -> Value {
    let raw = raw.trim();
    for q in ['\'', '"'] {
        if raw.len() >= 2 && raw.starts_with(q) && raw.ends_with(q) {
            return Value::Text(raw[1..raw.len() - 1].replace("''", "'"));
        }
    }
    match raw.to_ascii_lowercase().as_str() {
        "true" => return Value::Bool(true),
        "false" => return Value::Bool(false),
        _ => {}
    }
    parse_number(raw).unwrap_or_else(|| Value::Text(raw.to_string()))
}

fn coerce(v: Value, ty: ColumnType) -> Value {
    match (ty, v) {
        (ColumnType::Text, Value::Int(i)) => Value::Text(i.to_string()),
        (ColumnType::Text, Value::Float(f)) => Value::Text(format!("{f}")),
        (ColumnType::Int, Value::Text(t)) => t.trim().parse().map(Value::Int).unwrap_or(Value::Text(t)),
        (ColumnType::Float, Value::Text(t)) => t.trim().parse().map(Value::Float).unwrap_or(Value::Text(t)),
        (_, v) => v,
    }
}

impl PatternTranslator {
    pub fn new(schema: GlobalSchema) -> Self {
        PatternTranslator { schema }
    }

    fn column_name(&self, word: &str) -> Option<String> {
        self.schema
            .tables
            .iter()
            .flat_map(|t| &t.columns)
            .find(|c| c.name.eq_ignore_ascii_case(word))
            .map(|c| c.name.clone())
    }

    fn table_with(&self, cols: &[&str]) -> Option<&TableSchema> {
        self.schema
            .tables
            .iter()
            .find(|t| cols.iter().all(|c| t.column(c).is_some()))
    }

    fn lookup(&self, q: &str) -> Option<Result<StructuredQuery, String>> {
        let lower = q.to_ascii_lowercase();
        let prefix = LOOKUP_PREFIXES.iter().find(|p| lower.starts_with(*p))?;
        let col = self.column_name(lead_identifier(&q[prefix.len()..])?)?;
        let mut from = prefix.len();
        while let Some(pos) = lower[from..].find(" with ") {
            let at = from + pos + " with ".len();
            from = at;
            let Some(key_word) = lead_identifier(&q[at..]) else { continue };
            let after_key = at + key_word.len();
            if !lower[after_key..].starts_with(" in ") {
                continue;
            }
            let Some(key) = self.column_name(key_word) else { continue };
            let list = q[after_key + " in ".len()..].trim();
            return Some(self.build_lookup(&col, &key, list));
        }
        None
    }

    fn build_lookup(&self, col: &str, key: &str, list: &str) -> Result<StructuredQuery, String> {
        let table = self
            .table_with(&[col, key])
            .ok_or_else(|| format!("no table has both `{col}` and `{key}`"))?;
        let key_ty = table.column(key).map(|c| c.ty).unwrap_or(ColumnType::Text);
        let select = alloc::vec![SelectItem::Column(ColumnRef::bare(col))];
        let refs = scan_var_refs(list);
        let predicate = match refs.as_slice() {
            [(span, var)] if span.start == 0 && span.end == list.len() => {
                if var.column.is_none() {
                    return Err(format!("`{list}` needs a column to filter on"));
                }
                Predicate::InVar {
                    column: ColumnRef::bare(key),
                    var: var.clone(),
                }
            }
            [] => Predicate::In {
                column: ColumnRef::bare(key),
                values: split_list(list)
                    .iter()
                    .map(|i| coerce(literal(i), key_ty))
                    .collect(),
            },
            _ => return Err(format!("cannot interpret value list `{list}`")),
        };
        Ok(StructuredQuery::select(table.name.clone(), select).filter(predicate))
    }

    fn aggregate(&self, q: &str) -> Option<Result<StructuredQuery, String>> {
        let lower = q.to_ascii_lowercase();
        let mut rest = 0;
        for p in LOOKUP_PREFIXES {
            if lower.starts_with(p) {
                rest = p.len();
                break;
            }
        }
        let agg_word = lead_identifier(&lower[rest..])?;
        let func = match agg_word {
            "average" | "avg" | "mean" => AggFunc::Avg,
            "sum" | "total" => AggFunc::Sum,
            "count" => AggFunc::Count,
            "max" | "maximum" => AggFunc::Max,
            "min" | "minimum" => AggFunc::Min,
            _ => return None,
        };
        rest += agg_word.len();
        for filler in [" of", " the"] {
            if lower[rest..].starts_with(filler) {
                rest += filler.len();
            }
        }
        let tail = lower[rest..].trim_start();
        rest = lower.len() - tail.len();
        let col_word = lead_identifier(&q[rest..])?;
        let col = self.column_name(col_word)?;
        rest += col_word.len();
        let mut filter = None;
        let tail = lower[rest..].trim_start();
        if let Some(cond) = tail.strip_prefix("where ") {
            let offset = lower.len() - cond.len();
            let cond_orig = &q[offset..];
            let Some(fcol_word) = lead_identifier(cond_orig) else {
                return Some(Err("missing column after `where`".into()));
            };
            let Some(fcol) = self.column_name(fcol_word) else {
                return Some(Err(format!("unknown column `{fcol_word}`")));
            };
            let after = cond_orig[fcol_word.len()..].trim_start();
            let value = if let Some(v) = after.strip_prefix('=') {
                v
            } else if after.to_ascii_lowercase().starts_with("is ") {
                &after[3..]
            } else {
                return Some(Err(format!("cannot read condition `{cond_orig}`")));
            };
            filter = Some((fcol, value.trim().to_string()));
        } else if !tail.is_empty() {
            return None;
        }
        let mut cols: Vec<&str> = alloc::vec![col.as_str()];
        if let Some((f, _)) = &filter {
            cols.push(f);
        }
        let Some(table) = self.table_with(&cols) else {
            return Some(Err(format!("no table has columns {cols:?}")));
        };
        let mut sq = StructuredQuery::select(
            table.name.clone(),
            alloc::vec![SelectItem::Aggregate {
                func,
                column: Some(ColumnRef::bare(col.clone())),
            }],
        );
        if let Some((f, v)) = filter {
            let ty = table.column(&f).map(|c| c.ty).unwrap_or(ColumnType::Text);
            sq = sq.filter(Predicate::Cmp {
                column: ColumnRef::bare(f),
                op: CmpOp::Eq,
                value: coerce(literal(&v), ty),
            });
        }
        Some(Ok(sq))
    }
}

impl Translator for PatternTranslator {
    fn translate(&self, question: &str) -> Result<StructuredQuery, String> {
        if let Some(open) = question.find('`') {
            let rest = &question[open + 1..];
            let close = rest.find('`').ok_or("unterminated backtick query")?;
            return parse_query(&rest[..close]).map_err(|e| e.to_string());
        }
        let q = strip_terminal(question);
        if let Some(r) = self.lookup(q) {
            return r;
        }
        if let Some(r) = self.aggregate(q) {
            return r;
        }
        Err(format!("no translation template matches `{q}`"))
    }
}

/// Runs translated questions against the relational tables.
pub struct StructuredAdapter {
    tables: Arc<TableStore>,
    translator: Box<dyn Translator>,
}

impl StructuredAdapter {
    pub fn new(tables: Arc<TableStore>, translator: Box<dyn Translator>) -> Self {
        StructuredAdapter { tables, translator }
    }
}

fn rows_answer(rs: &ResultSet) -> Answer {
    if rs.columns.len() == 1 {
        return Answer::Values(rs.rows.iter().map(|r| r[0].clone()).collect());
    }
    Answer::Text(
        rs.rows
            .iter()
            .map(|r| r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" | "))
            .collect::<Vec<_>>()
            .join("; "),
    )
}

impl ToolAdapter for StructuredAdapter {
    fn run(&self, rq: &ResolvedSubQuery) -> Result<AdapterOutput, AdapterError> {
        let mut query = self
            .translator
            .translate(&rq.question)
            .map_err(|m| AdapterError::new(FeedbackClass::TranslationFailed, m))?;
        query
            .bind_vars(|var| rq.bound_values(&var.label(), var.column.as_deref()?))
            .map_err(|e| AdapterError::new(FeedbackClass::UnknownVariableAtRuntime, e.to_string()))?;
        let rs = exec_structured(&self.tables, &query).map_err(|e| match e {
            QueryError::UnknownTable(_)
            | QueryError::UnknownColumn(_)
            | QueryError::AmbiguousColumn(_)
            | QueryError::TypeMismatch(_)
            | QueryError::Invalid(_)
            | QueryError::Syntax(_) => AdapterError::new(FeedbackClass::TranslationFailed, e.to_string()),
            QueryError::UnboundVariable(_) => {
                AdapterError::new(FeedbackClass::UnknownVariableAtRuntime, e.to_string())
            }
        })?;
        Ok(AdapterOutput {
            answer: rows_answer(&rs),
            data: NodeData::Rows(rs),
        })
    }
}

pub const DEFAULT_TOP_K: usize = 5;
/// Hits scoring below this fraction of the best hit are dropped.
pub const DEFAULT_RELATIVE_CUTOFF: f64 = 0.5;

const DOC_ID_PREFIX: &str = "find the document_id of";
const YEAR_PREFIXES: [&str; 4] = ["what year", "which year", "in what year", "in which year"];

/// Semantic search over the chunk index.
///
/// `document_id` values among the referenced bindings restrict the search
/// to those documents. Questions starting with "find the document_id of"
/// answer with the distinct document ids of the hits; questions starting
/// with "what year"/"which year" answer with the first year in the top hit;
/// anything else answers with the top hit's text.
pub struct VectorAdapter {
    index: Arc<VectorIndex>,
    embedder: Arc<dyn Embedder>,
    pub top_k: usize,
    pub relative_cutoff: f64,
}

impl VectorAdapter {
    pub fn new(index: Arc<VectorIndex>, embedder: Arc<dyn Embedder>) -> Self {
        VectorAdapter {
            index,
            embedder,
            top_k: DEFAULT_TOP_K,
            relative_cutoff: DEFAULT_RELATIVE_CUTOFF,
        }
    }

    fn doc_filter(rq: &ResolvedSubQuery) -> Option<BTreeSet<i64>> {
        let mut filter: Option<BTreeSet<i64>> = None;
        for view in rq.bindings_in.values() {
            if let Some(ids) = view.get("document_id") {
                filter
                    .get_or_insert_with(BTreeSet::new)
                    .extend(ids.iter().filter_map(Value::as_i64));
            }
        }
        filter
    }
}

fn first_year(text: &str) -> Option<i64> {
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i - start == 4 {
                let y: i64 = text[start..i].parse().ok()?;
                if (1000..=2999).contains(&y) {
                    return Some(y);
                }
            }
        } else {
            i += 1;
        }
    }
    None
}

impl ToolAdapter for VectorAdapter {
    fn run(&self, rq: &ResolvedSubQuery) -> Result<AdapterOutput, AdapterError> {
        let lower = rq.question.trim_start().to_ascii_lowercase();
        let wants_ids = lower.starts_with(DOC_ID_PREFIX);
        let wants_year = YEAR_PREFIXES.iter().any(|p| lower.starts_with(p));
        let search_text = if wants_ids {
            &rq.question.trim_start()[DOC_ID_PREFIX.len()..]
        } else {
            rq.question.as_str()
        };
        let filter = Self::doc_filter(rq);
        let mut hits = search_vector(
            &self.index,
            self.embedder.as_ref(),
            search_text,
            self.top_k,
            filter.as_ref(),
        )
        .map_err(|e| match e {
            SearchError::EmptyIndex => AdapterError::infrastructure(FeedbackClass::StoreError, e.to_string()),
            SearchError::ZeroK => AdapterError::new(FeedbackClass::StoreError, e.to_string()),
        })?;
        let best = hits.first().map(|h| h.score).unwrap_or(0.0);
        if best <= 0.0 {
            return Err(AdapterError::new(
                FeedbackClass::NoMatch,
                format!("no chunk matches `{}`", search_text.trim()),
            )
            .with_observed(Answer::Values(Vec::new())));
        }
        hits.retain(|h| h.score >= self.relative_cutoff * best);
        let answer = if wants_ids {
            let mut seen = BTreeSet::new();
            Answer::Values(
                hits.iter()
                    .filter(|h| seen.insert(h.document_id))
                    .map(|h| Value::Int(h.document_id))
                    .collect(),
            )
        } else if let (true, Some(y)) = (wants_year, first_year(&hits[0].text)) {
            Answer::Values(alloc::vec![Value::Int(y)])
        } else {
            Answer::Text(hits[0].text.clone())
        };
        Ok(AdapterOutput {
            data: NodeData::Hits(hits),
            answer,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlannerError {
    #[error("planner has no plan for `{0}`")]
    Miss(String),
    #[error("planner failed: {0}")]
    Failed(String),
}

/// Produces a plan for a natural-language question.
pub trait Planner: Send + Sync {
    fn plan(&self, question: &str, schema: &GlobalSchema) -> Result<Plan, PlannerError>;
}

/// Looks plans up by normalized question.
#[derive(Debug, Clone, Default)]
pub struct ScriptedPlanner {
    plans: BTreeMap<String, Plan>,
}

impl ScriptedPlanner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, question: &str, plan: Plan) -> Self {
        self.plans.insert(normalize_query(question), plan);
        self
    }

    /// Reads `{"<question>": <plan object>, ...}`.
    pub fn from_json(text: &str) -> Result<Self, PlannerError> {
        let map: BTreeMap<String, serde_json::Value> =
            serde_json::from_str(text).map_err(|e| PlannerError::Failed(e.to_string()))?;
        let mut planner = ScriptedPlanner::new();
        for (q, v) in map {
            let plan = parse_plan(&v.to_string())
                .map_err(|e| PlannerError::Failed(format!("plan for `{q}`: {e}")))?;
            planner = planner.with(&q, plan);
        }
        Ok(planner)
    }
}

impl Planner for ScriptedPlanner {
    fn plan(&self, question: &str, _: &GlobalSchema) -> Result<Plan, PlannerError> {
        let mut plan = self
            .plans
            .get(&normalize_query(question))
            .cloned()
            .ok_or_else(|| PlannerError::Miss(question.to_string()))?;
        plan.source_query = question.to_string();
        Ok(plan)
    }
}
