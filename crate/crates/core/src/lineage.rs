//! Lineage records and answer tracing.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::value::SourceRef;

pub const SUMMARY_SAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Node,
    Dataops,
    Cache,
    Final,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Ok,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputSummary {
    pub row_count: usize,
    #[serde(default)]
    pub columns: Vec<String>,
    /// At most [`SUMMARY_SAMPLES`] rendered rows or hits.
    #[serde(default)]
    pub samples: Vec<String>,
}

/// One append-only lineage entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineageRecord {
    pub seq: u64,
    pub kind: RecordKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_resolved: Option<String>,
    /// Labels of the bindings this node consumed.
    #[serde(default)]
    pub inputs: Vec<String>,
    #[serde(default)]
    pub output_summary: OutputSummary,
    #[serde(default)]
    pub provenance_refs: Vec<SourceRef>,
    /// Logical clock values, monotonic within one run.
    pub started: u64,
    pub finished: u64,
    pub status: RecordStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_class: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    /// Cache strategy for cache records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<String>,
    /// Wall-clock duration; excluded from replay comparisons.
    #[serde(default)]
    pub wall_ms: u64,
}

impl LineageRecord {
    pub fn event(seq: u64, kind: RecordKind, detail: impl Into<String>) -> Self {
        LineageRecord {
            seq,
            kind,
            node_index: None,
            label: None,
            tool: None,
            question_resolved: None,
            inputs: Vec::new(),
            output_summary: OutputSummary::default(),
            provenance_refs: Vec::new(),
            started: seq,
            finished: seq,
            status: RecordStatus::Ok,
            error_class: None,
            detail: Some(detail.into()),
            strategy: None,
            wall_ms: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("no successful lineage record for {0}")]
    MissingRecord(String),
}

/// Every source row and chunk that contributed to `label`, following the
/// recorded inputs transitively. The latest successful node record per
/// label wins.
pub fn trace_answer(records: &[LineageRecord], label: &str) -> Result<BTreeSet<SourceRef>, TraceError> {
    let mut latest: BTreeMap<&str, &LineageRecord> = BTreeMap::new();
    for r in records {
        if r.kind != RecordKind::Node || r.status != RecordStatus::Ok {
            continue;
        }
        if let Some(l) = &r.label {
            match latest.get(l.as_str()) {
                Some(prev) if prev.seq > r.seq => {}
                _ => {
                    latest.insert(l.as_str(), r);
                }
            }
        }
    }
    let mut out = BTreeSet::new();
    let mut visited = BTreeSet::new();
    let mut stack = alloc::vec![String::from(label)];
    while let Some(l) = stack.pop() {
        if !visited.insert(l.clone()) {
            continue;
        }
        let rec = latest
            .get(l.as_str())
            .ok_or_else(|| TraceError::MissingRecord(l.clone()))?;
        out.extend(rec.provenance_refs.iter().cloned());
        stack.extend(rec.inputs.iter().cloned());
    }
    Ok(out)
}
