//! Hybrid data-lake query engine: persistence, ingestion, parallel
//! execution, lineage and the end-to-end pipeline.

pub mod config;
pub mod executor;
pub mod external;
pub mod ingest;
pub mod lineage_log;
pub mod persist;
pub mod pipeline;
