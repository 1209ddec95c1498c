//! In-memory relational tables and the result set they produce.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{ColumnType, TableSchema};
use crate::value::{SourceRef, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub row_id: u64,
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TableError {
    #[error("row has {got} values, table `{table}` has {expected} columns")]
    Arity {
        table: String,
        expected: usize,
        got: usize,
    },
    #[error("value for `{table}.{column}` does not conform to {expected}")]
    Type {
        table: String,
        column: String,
        expected: ColumnType,
    },
    #[error("duplicate primary key in `{table}`")]
    DuplicateKey { table: String },
    #[error("duplicate row id {row_id} in `{table}`")]
    DuplicateRowId { table: String, row_id: u64 },
}

fn conforms(v: &Value, ty: ColumnType) -> bool {
    matches!(
        (v, ty),
        (Value::Null, _)
            | (Value::Int(_), ColumnType::Int)
            | (Value::Int(_) | Value::Float(_), ColumnType::Float)
            | (Value::Text(_), ColumnType::Text)
            | (Value::Bool(_), ColumnType::Bool)
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub schema: TableSchema,
    rows: Vec<Row>,
    // Keys are `Value::to_string` renderings; primary keys are int or text.
    pk_seen: BTreeSet<String>,
}

impl Table {
    pub fn new(schema: TableSchema) -> Self {
        Table {
            schema,
            rows: Vec::new(),
            pk_seen: BTreeSet::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.schema.name
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn check(&self, values: &[Value]) -> Result<(), TableError> {
        if values.len() != self.schema.columns.len() {
            return Err(TableError::Arity {
                table: self.schema.name.clone(),
                expected: self.schema.columns.len(),
                got: values.len(),
            });
        }
        for (v, c) in values.iter().zip(&self.schema.columns) {
            if !conforms(v, c.ty) {
                return Err(TableError::Type {
                    table: self.schema.name.clone(),
                    column: c.name.clone(),
                    expected: c.ty,
                });
            }
        }
        Ok(())
    }

    fn pk_key(&self, values: &[Value]) -> Option<String> {
        let pk = self.schema.primary_key.as_ref()?;
        let idx = self.schema.column_index(pk)?;
        Some(alloc::format!("{:?}", values[idx]))
    }

    /// Appends a row with the next row id (1-based, one past the largest so far).
    pub fn insert(&mut self, values: Vec<Value>) -> Result<u64, TableError> {
        let row_id = self.rows.last().map_or(1, |r| r.row_id + 1);
        self.insert_with_id(row_id, values)?;
        Ok(row_id)
    }

    pub fn insert_with_id(&mut self, row_id: u64, values: Vec<Value>) -> Result<(), TableError> {
        self.check(&values)?;
        if self.rows.last().is_some_and(|r| r.row_id >= row_id) {
            return Err(TableError::DuplicateRowId {
                table: self.schema.name.clone(),
                row_id,
            });
        }
        if let Some(key) = self.pk_key(&values) {
            if !self.pk_seen.insert(key) {
                return Err(TableError::DuplicateKey {
                    table: self.schema.name.clone(),
                });
            }
        }
        self.rows.push(Row { row_id, values });
        Ok(())
    }

    /// Values of one column in row order.
    pub fn column_values(&self, column: &str) -> Option<impl Iterator<Item = &Value> + '_> {
        let idx = self.schema.column_index(column)?;
        Some(self.rows.iter().map(move |r| &r.values[idx]))
    }
}

/// All tables of a lake, by name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TableStore {
    tables: BTreeMap<String, Table>,
}

impl TableStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, table: Table) {
        self.tables.insert(table.schema.name.clone(), table);
    }

    pub fn get(&self, name: &str) -> Option<&Table> {
        self.tables.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Table> {
        self.tables.get_mut(name)
    }

    pub fn tables(&self) -> impl Iterator<Item = &Table> {
        self.tables.values()
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    /// Whether a row with this `(table, row_id)` exists.
    pub fn resolves(&self, r: &SourceRef) -> bool {
        match r {
            SourceRef::Row { table, row_id } => self
                .get(table)
                .is_some_and(|t| t.rows.binary_search_by_key(row_id, |r| r.row_id).is_ok()),
            SourceRef::Chunk { .. } => false,
        }
    }
}

/// Tabular output of a structured query. `provenance[i]` lists the source
/// rows that produced `rows[i]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultSet {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    pub provenance: Vec<Vec<SourceRef>>,
}

impl ResultSet {
    pub fn new(columns: Vec<String>) -> Self {
        ResultSet {
            columns,
            rows: Vec::new(),
            provenance: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>, provenance: Vec<SourceRef>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
        self.provenance.push(provenance);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column_values(&self, name: &str) -> Option<Vec<Value>> {
        let idx = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[idx].clone()).collect())
    }

    /// Distinct provenance refs in first-appearance order.
    pub fn all_provenance(&self) -> Vec<SourceRef> {
        let mut seen = BTreeSet::new();
        self.provenance
            .iter()
            .flatten()
            .filter(|r| seen.insert((*r).clone()))
            .cloned()
            .collect()
    }
}
