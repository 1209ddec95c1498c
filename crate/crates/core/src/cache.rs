//! Plan cache with exact, template and semantic lookup and LRU eviction.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{cosine, Embedder};
use crate::plan::{parse_plan, plan_to_json, Plan};
use crate::text::is_identifier;

pub const DEFAULT_CAPACITY: usize = 256;
pub const DEFAULT_SEMANTIC_THRESHOLD: f64 = 0.85;

/// Lowercase, collapse whitespace, drop trailing `.`, `?` and `!`.
pub fn normalize_query(q: &str) -> String {
    let lower = q.to_lowercase();
    let collapsed = lower.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_end_matches(|c: char| matches!(c, '.' | '?' | '!') || c.is_whitespace())
        .to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheKey {
    pub normalized_query: String,
    pub schema_signature: String,
    pub context_fingerprint: String,
}

impl CacheKey {
    pub fn new(query: &str, schema_signature: &str, context_fingerprint: &str) -> Self {
        CacheKey {
            normalized_query: normalize_query(query),
            schema_signature: schema_signature.into(),
            context_fingerprint: context_fingerprint.into(),
        }
    }

    fn same_scope(&self, other: &CacheKey) -> bool {
        self.schema_signature == other.schema_signature
            && self.context_fingerprint == other.context_fingerprint
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotType {
    Number,
    QuotedString,
    Identifier,
}

impl SlotType {
    pub fn parse(s: &str) -> Option<SlotType> {
        match s {
            "number" => Some(SlotType::Number),
            "quoted_string" => Some(SlotType::QuotedString),
            "identifier" => Some(SlotType::Identifier),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SlotType::Number => "number",
            SlotType::QuotedString => "quoted_string",
            SlotType::Identifier => "identifier",
        }
    }

    pub fn accepts(self, token: &str) -> bool {
        match self {
            SlotType::Number => token.parse::<f64>().is_ok_and(f64::is_finite),
            SlotType::QuotedString => {
                token.len() >= 2
                    && ((token.starts_with('\'') && token.ends_with('\''))
                        || (token.starts_with('"') && token.ends_with('"')))
            }
            SlotType::Identifier => is_identifier(token),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: SlotType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum TemplateToken {
    Literal(String),
    Slot(Slot),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("bad slot `{0}`; expected {{name:number|quoted_string|identifier}}")]
    BadSlot(String),
    #[error("template has no slots")]
    NoSlots,
    #[error("value `{0}` does not occur in the query")]
    ValueNotInQuery(String),
}

/// A query pattern such as `average total_amount for {state:identifier}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    text: String,
    tokens: Vec<TemplateToken>,
}

impl Template {
    /// Parses a template; slots are whole whitespace-separated tokens of the
    /// form `{name:type}`. The literal parts are normalized like queries.
    pub fn parse(text: &str) -> Result<Self, TemplateError> {
        let norm = normalize_query(text);
        let mut tokens = Vec::new();
        for tok in norm.split(' ').filter(|t| !t.is_empty()) {
            if let Some(inner) = tok.strip_prefix('{').and_then(|t| t.strip_suffix('}')) {
                let (name, ty) = inner
                    .split_once(':')
                    .ok_or_else(|| TemplateError::BadSlot(tok.into()))?;
                let ty = SlotType::parse(ty).ok_or_else(|| TemplateError::BadSlot(tok.into()))?;
                if !is_identifier(name) {
                    return Err(TemplateError::BadSlot(tok.into()));
                }
                tokens.push(TemplateToken::Slot(Slot {
                    name: name.into(),
                    ty,
                }));
            } else {
                tokens.push(TemplateToken::Literal(tok.into()));
            }
        }
        if !tokens.iter().any(|t| matches!(t, TemplateToken::Slot(_))) {
            return Err(TemplateError::NoSlots);
        }
        Ok(Template { text: norm, tokens })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn slots(&self) -> Vec<Slot> {
        self.tokens
            .iter()
            .filter_map(|t| match t {
                TemplateToken::Slot(s) => Some(s.clone()),
                TemplateToken::Literal(_) => None,
            })
            .collect()
    }

    /// Slot values if `query` matches token for token.
    pub fn matches(&self, query: &str) -> Option<BTreeMap<String, String>> {
        let norm = normalize_query(query);
        let toks: Vec<&str> = norm.split(' ').filter(|t| !t.is_empty()).collect();
        if toks.len() != self.tokens.len() {
            return None;
        }
        let mut values = BTreeMap::new();
        for (tt, q) in self.tokens.iter().zip(&toks) {
            match tt {
                TemplateToken::Literal(l) if l == q => {}
                TemplateToken::Slot(s) if s.ty.accepts(q) => {
                    if let Some(prev) = values.insert(s.name.clone(), q.to_string()) {
                        if prev != *q {
                            return None;
                        }
                    }
                }
                _ => return None,
            }
        }
        Some(values)
    }

    /// Builds a template and a plan skeleton from a concrete query and plan:
    /// each `(value, slot name, slot type)` is replaced by `{name:type}` in
    /// the query and by `{name}` in the plan's questions and descriptions.
    pub fn derive(
        query: &str,
        plan: &Plan,
        slots: &[(&str, &str, SlotType)],
    ) -> Result<(Template, Plan), TemplateError> {
        let norm = normalize_query(query);
        let mut toks: Vec<String> = norm.split(' ').map(String::from).collect();
        let mut skeleton = plan.reset_statuses();
        for (value, name, ty) in slots {
            let needle = value.to_lowercase();
            let mut found = false;
            for t in toks.iter_mut() {
                if *t == needle {
                    *t = format!("{{{name}:{}}}", ty.as_str());
                    found = true;
                }
            }
            if !found {
                return Err(TemplateError::ValueNotInQuery((*value).into()));
            }
            let hole = format!("{{{name}}}");
            for q in &mut skeleton.subquestions {
                if let Some(text) = &mut q.question {
                    *text = replace_ignore_case(text, value, &hole);
                }
                if let Some(d) = &mut q.answer_description {
                    *d = replace_ignore_case(d, value, &hole);
                }
            }
        }
        skeleton.source_query = String::new();
        Ok((Template::parse(&toks.join(" "))?, skeleton))
    }
}

fn replace_ignore_case(text: &str, needle: &str, with: &str) -> String {
    if needle.is_empty() {
        return text.to_string();
    }
    let lower = text.to_ascii_lowercase();
    let n = needle.to_ascii_lowercase();
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for (pos, _) in lower.match_indices(&n) {
        if pos < last {
            continue;
        }
        out.push_str(&text[last..pos]);
        out.push_str(with);
        last = pos + n.len();
    }
    out.push_str(&text[last..]);
    out
}

fn instantiate(skeleton: &Plan, values: &BTreeMap<String, String>) -> Plan {
    let mut plan = skeleton.clone();
    for q in &mut plan.subquestions {
        for field in [&mut q.question, &mut q.answer_description].into_iter().flatten() {
            for (name, v) in values {
                *field = field.replace(&format!("{{{name}}}"), v);
            }
        }
    }
    plan
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheStrategy {
    Exact,
    Template,
    Semantic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheHit {
    pub plan: Plan,
    pub strategy: CacheStrategy,
    pub entry_id: u64,
    /// Cosine similarity for semantic hits.
    pub similarity: Option<f64>,
    pub slot_values: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
enum EntryKind {
    Concrete { embedding: Vec<f32> },
    Template(Template),
}

#[derive(Debug, Clone, PartialEq)]
struct CacheEntry {
    id: u64,
    key: CacheKey,
    kind: EntryKind,
    plan: Plan,
    provenance: String,
    last_used: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub capacity: usize,
    pub entries: usize,
    pub exact_hits: u64,
    pub template_hits: u64,
    pub semantic_hits: u64,
    pub misses: u64,
    pub insertions: u64,
    pub evictions: u64,
}

/// Bounded plan cache keyed on `(normalized query, schema signature,
/// context fingerprint)`. Lookups try an exact key match, then templates,
/// then the nearest concrete query by embedding cosine. The least recently
/// used entry is evicted when a new key would exceed the capacity.
#[derive(Debug, Clone)]
pub struct PlanCache {
    capacity: usize,
    threshold: f64,
    clock: u64,
    next_id: u64,
    entries: Vec<CacheEntry>,
    stats: CacheStats,
}

impl Default for PlanCache {
    fn default() -> Self {
        PlanCache::new(DEFAULT_CAPACITY, DEFAULT_SEMANTIC_THRESHOLD)
    }
}

impl PlanCache {
    pub fn new(capacity: usize, threshold: f64) -> Self {
        PlanCache {
            capacity,
            threshold,
            clock: 0,
            next_id: 1,
            entries: Vec::new(),
            stats: CacheStats {
                capacity,
                ..Default::default()
            },
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            entries: self.entries.len(),
            ..self.stats.clone()
        }
    }

    /// Normalized query texts (or template texts) currently cached, most
    /// recently used first.
    pub fn keys(&self) -> Vec<String> {
        let mut e: Vec<&CacheEntry> = self.entries.iter().collect();
        e.sort_by(|a, b| b.last_used.cmp(&a.last_used));
        e.into_iter().map(|e| e.key.normalized_query.clone()).collect()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    fn touch(&mut self, pos: usize) -> u64 {
        let t = self.tick();
        self.entries[pos].last_used = t;
        self.entries[pos].id
    }

    pub fn lookup(
        &mut self,
        query: &str,
        schema_signature: &str,
        context_fingerprint: &str,
        embedder: &dyn Embedder,
    ) -> Option<CacheHit> {
        let key = CacheKey::new(query, schema_signature, context_fingerprint);
        if key.normalized_query.is_empty() {
            self.stats.misses += 1;
            return None;
        }
        let exact = self
            .entries
            .iter()
            .position(|e| matches!(e.kind, EntryKind::Concrete { .. }) && e.key == key);
        if let Some(pos) = exact {
            let id = self.touch(pos);
            self.stats.exact_hits += 1;
            return Some(CacheHit {
                plan: self.entries[pos].plan.clone(),
                strategy: CacheStrategy::Exact,
                entry_id: id,
                similarity: None,
                slot_values: BTreeMap::new(),
            });
        }

        let templated = self
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.key.same_scope(&key))
            .filter_map(|(i, e)| match &e.kind {
                EntryKind::Template(t) => t.matches(&key.normalized_query).map(|v| (i, e.id, v)),
                EntryKind::Concrete { .. } => None,
            })
            .min_by_key(|(_, id, _)| *id);
        if let Some((pos, _, values)) = templated {
            let id = self.touch(pos);
            self.stats.template_hits += 1;
            let mut plan = instantiate(&self.entries[pos].plan, &values);
            plan.source_query = query.to_string();
            return Some(CacheHit {
                plan,
                strategy: CacheStrategy::Template,
                entry_id: id,
                similarity: None,
                slot_values: values,
            });
        }

        let q = embedder.embed(&key.normalized_query);
        let mut best: Option<(usize, u64, f64)> = None;
        for (i, e) in self.entries.iter().enumerate() {
            let EntryKind::Concrete { embedding } = &e.kind else { continue };
            if !e.key.same_scope(&key) {
                continue;
            }
            let s = cosine(&q, embedding);
            let better = match best {
                None => true,
                Some((_, id, b)) => s > b || (s == b && e.id < id),
            };
            if better {
                best = Some((i, e.id, s));
            }
        }
        match best {
            Some((pos, _, s)) if s >= self.threshold => {
                let id = self.touch(pos);
                self.stats.semantic_hits += 1;
                Some(CacheHit {
                    plan: self.entries[pos].plan.clone(),
                    strategy: CacheStrategy::Semantic,
                    entry_id: id,
                    similarity: Some(s),
                    slot_values: BTreeMap::new(),
                })
            }
            _ => {
                self.stats.misses += 1;
                None
            }
        }
    }

    fn put(&mut self, key: CacheKey, kind: EntryKind, plan: Plan, provenance: String) -> u64 {
        let is_template = matches!(kind, EntryKind::Template(_));
        let existing = self.entries.iter().position(|e| {
            e.key == key && matches!(e.kind, EntryKind::Template(_)) == is_template
        });
        let t = self.tick();
        self.stats.insertions += 1;
        if let Some(pos) = existing {
            let e = &mut self.entries[pos];
            e.kind = kind;
            e.plan = plan;
            e.provenance = provenance;
            e.last_used = t;
            return e.id;
        }
        if self.capacity == 0 {
            return 0;
        }
        while self.entries.len() >= self.capacity {
            let lru = self
                .entries
                .iter()
                .enumerate()
                .min_by_key(|(_, e)| e.last_used)
                .map(|(i, _)| i)
                .unwrap_or(0);
            self.entries.remove(lru);
            self.stats.evictions += 1;
        }
        let id = self.next_id;
        self.next_id += 1;
        self.entries.push(CacheEntry {
            id,
            key,
            kind,
            plan,
            provenance,
            last_used: t,
        });
        id
    }

    /// Caches a validated concrete plan. Statuses are reset to pending.
    pub fn insert(
        &mut self,
        query: &str,
        schema_signature: &str,
        context_fingerprint: &str,
        plan: &Plan,
        embedder: &dyn Embedder,
    ) -> Option<u64> {
        let key = CacheKey::new(query, schema_signature, context_fingerprint);
        if key.normalized_query.is_empty() {
            return None;
        }
        let embedding = embedder.embed(&key.normalized_query);
        let provenance = format!("concrete plan for `{}`", key.normalized_query);
        Some(self.put(key, EntryKind::Concrete { embedding }, plan.reset_statuses(), provenance))
    }

    /// Caches a plan skeleton whose `{name}` holes are filled from template
    /// slots on a match.
    pub fn insert_template(
        &mut self,
        template: Template,
        schema_signature: &str,
        context_fingerprint: &str,
        skeleton: &Plan,
    ) -> u64 {
        let key = CacheKey {
            normalized_query: template.text().to_string(),
            schema_signature: schema_signature.into(),
            context_fingerprint: context_fingerprint.into(),
        };
        let provenance = format!("template `{}`", template.text());
        self.put(key, EntryKind::Template(template), skeleton.reset_statuses(), provenance)
    }

    pub fn snapshot(&self) -> CacheSnapshot {
        let mut entries: Vec<SnapshotEntry> = self
            .entries
            .iter()
            .map(|e| SnapshotEntry {
                id: e.id,
                key: e.key.clone(),
                template: match &e.kind {
                    EntryKind::Template(t) => Some(t.text().to_string()),
                    EntryKind::Concrete { .. } => None,
                },
                embedding: match &e.kind {
                    EntryKind::Concrete { embedding } => embedding.clone(),
                    EntryKind::Template(_) => Vec::new(),
                },
                plan: plan_to_json(&e.plan),
                provenance: e.provenance.clone(),
                last_used: e.last_used,
            })
            .collect();
        entries.sort_by_key(|e| e.id);
        CacheSnapshot {
            capacity: self.capacity,
            threshold: self.threshold,
            clock: self.clock,
            next_id: self.next_id,
            stats: self.stats.clone(),
            entries,
        }
    }

    pub fn restore(snapshot: CacheSnapshot) -> Result<Self, SnapshotError> {
        let mut entries = Vec::with_capacity(snapshot.entries.len());
        for e in snapshot.entries {
            let plan = parse_plan(&e.plan.to_string())
                .map_err(|err| SnapshotError(format!("entry {}: {err}", e.id)))?;
            let kind = match e.template {
                Some(t) => EntryKind::Template(
                    Template::parse(&t).map_err(|err| SnapshotError(format!("entry {}: {err}", e.id)))?,
                ),
                None => EntryKind::Concrete {
                    embedding: e.embedding,
                },
            };
            entries.push(CacheEntry {
                id: e.id,
                key: e.key,
                kind,
                plan,
                provenance: e.provenance,
                last_used: e.last_used,
            });
        }
        Ok(PlanCache {
            capacity: snapshot.capacity,
            threshold: snapshot.threshold,
            clock: snapshot.clock,
            next_id: snapshot.next_id,
            stats: CacheStats {
                capacity: snapshot.capacity,
                ..snapshot.stats
            },
            entries,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("corrupt cache snapshot: {0}")]
pub struct SnapshotError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub id: u64,
    pub key: CacheKey,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub embedding: Vec<f32>,
    pub plan: serde_json::Value,
    pub provenance: String,
    pub last_used: u64,
}

/// Serializable form of a [`PlanCache`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheSnapshot {
    pub capacity: usize,
    pub threshold: f64,
    pub clock: u64,
    pub next_id: u64,
    pub stats: CacheStats,
    pub entries: Vec<SnapshotEntry>,
}
