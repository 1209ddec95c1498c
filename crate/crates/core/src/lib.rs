//! Core of the adot query orchestrator.
//!
//! Everything in this crate is pure computation over in-memory data: the
//! plan IR and its validator, the reference hybrid data lake (relational
//! tables plus a dense/sparse chunk index), tool adapters, wave scheduling
//! helpers, the plan cache, the remediation rules, and lineage tracing.
//! File IO, threads and the command line live in the `adot` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod adapters;
pub mod cache;
pub mod chunking;
pub mod dataops;
pub mod embed;
pub mod exec;
pub mod lake;
pub mod lineage;
pub mod plan;
pub mod query;
pub mod schema;
pub mod table;
pub mod validate;
pub mod value;
pub mod vector;

mod hash;
mod text;

pub use adapters::{
    AdapterError, AdapterOutput, Answer, NodeData, Planner, PlannerError, ResolvedSubQuery,
    ScriptedPlanner, StructuredAdapter, ToolAdapter, Translator, VectorAdapter,
};
pub use cache::{CacheHit, CacheKey, CacheStrategy, PlanCache};
pub use dataops::{DataOpsAction, Diagnosis, DiagnosisClass, EditHistory, FeedbackItem};
pub use embed::{Embedder, HashedBowEmbedder};
pub use exec::{Binding, ExecutionEvent, ExecutionFeedback, FeedbackClass, VariableStore};
pub use lake::DataLake;
pub use lineage::{LineageRecord, RecordKind, RecordStatus};
pub use plan::{Context, Plan, Status, SubQuery, Tool, VarRef};
pub use schema::{GlobalSchema, signature_of};
pub use table::{ResultSet, Table, TableStore};
pub use validate::{ValidationCode, ValidationError, ValidationReport, validate_plan};
pub use value::{SourceRef, Value};
pub use vector::{Chunk, ChunkHit, VectorIndex};
