//! The hybrid data lake: schema, tables and chunk index together.

use alloc::string::String;

use thiserror::Error;

use crate::schema::{signature_of, GlobalSchema, SchemaError};
use crate::table::TableStore;
use crate::value::SourceRef;
use crate::vector::VectorIndex;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LakeError {
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("table `{0}` is not declared in the schema")]
    UndeclaredTable(String),
    #[error("schema declares table `{0}` but the lake has no such table")]
    MissingTable(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataLake {
    pub schema: GlobalSchema,
    pub tables: TableStore,
    pub index: VectorIndex,
}

impl DataLake {
    pub fn new(schema: GlobalSchema, tables: TableStore, index: VectorIndex) -> Result<Self, LakeError> {
        schema.validate()?;
        for t in tables.tables() {
            if schema.table(t.name()).is_none() {
                return Err(LakeError::UndeclaredTable(t.name().into()));
            }
        }
        for t in &schema.tables {
            if tables.get(&t.name).is_none() {
                return Err(LakeError::MissingTable(t.name.clone()));
            }
        }
        Ok(DataLake {
            schema,
            tables,
            index,
        })
    }

    pub fn signature(&self) -> String {
        signature_of(&self.schema)
    }

    /// Whether `r` names a row or chunk that exists in this lake.
    pub fn resolves(&self, r: &SourceRef) -> bool {
        self.tables.resolves(r) || self.index.resolves(r)
    }
}
