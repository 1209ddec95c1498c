//! Builds a data lake from CSV/JSON tables and a JSON Lines document file.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use adot_core::chunking::{chunk_text, ChunkParams};
use adot_core::lake::LakeError;
use adot_core::schema::{CollectionSchema, ColumnDef, ColumnType, CrossLink, TableSchema};
use adot_core::table::TableError;
use adot_core::vector::IndexError;
use adot_core::{Chunk, DataLake, Embedder, GlobalSchema, Table, TableStore, Value, VectorIndex};
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use crate::persist::{read_jsonl, PersistError};

pub const DOCUMENT_ID: &str = "document_id";
pub const COLLECTION: &str = "documents";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error("{path}: {message}")]
    BadInput { path: PathBuf, message: String },
    #[error("duplicate document_id {0} in the documents file")]
    DuplicateDocument(i64),
    #[error("row map: {table} row {row} references unknown document_id {document_id}")]
    UnknownDocument {
        table: String,
        row: u64,
        document_id: i64,
    },
    #[error("row map: unknown table `{0}`")]
    UnknownTable(String),
    #[error("row map: table `{table}` has no row {row}")]
    RowOutOfRange { table: String, row: u64 },
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Lake(#[from] LakeError),
}

fn bad(path: &Path, message: impl Into<String>) -> IngestError {
    IngestError::BadInput {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TableCount {
    pub name: String,
    pub rows: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub tables: Vec<TableCount>,
    pub documents: usize,
    pub chunks: usize,
    pub cross_links: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
struct RawTable {
    name: String,
    columns: Vec<ColumnDef>,
    primary_key: Option<String>,
    rows: Vec<Vec<Value>>,
}

fn infer_type<'a>(cells: impl Iterator<Item = &'a str>) -> ColumnType {
    let cells: Vec<&str> = cells.map(str::trim).filter(|c| !c.is_empty()).collect();
    if cells.is_empty() {
        ColumnType::Text
    } else if cells.iter().all(|c| c.parse::<i64>().is_ok()) {
        ColumnType::Int
    } else if cells.iter().all(|c| c.parse::<f64>().is_ok()) {
        ColumnType::Float
    } else if cells
        .iter()
        .all(|c| c.eq_ignore_ascii_case("true") || c.eq_ignore_ascii_case("false"))
    {
        ColumnType::Bool
    } else {
        ColumnType::Text
    }
}

fn parse_cell(cell: &str, ty: ColumnType) -> Value {
    let t = cell.trim();
    if t.is_empty() {
        return Value::Null;
    }
    match ty {
        ColumnType::Int => t.parse().map(Value::Int).unwrap_or(Value::Null),
        ColumnType::Float => t.parse().map(Value::Float).unwrap_or(Value::Null),
        ColumnType::Bool => Value::Bool(t.eq_ignore_ascii_case("true")),
        ColumnType::Text => Value::Text(cell.to_string()),
    }
}

fn table_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn default_pk(columns: &[ColumnDef]) -> Option<String> {
    columns
        .iter()
        .any(|c| c.name == DOCUMENT_ID)
        .then(|| DOCUMENT_ID.to_string())
}

fn read_csv(path: &Path) -> Result<RawTable, IngestError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(path, e.to_string()))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| bad(path, e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut records = Vec::new();
    for r in reader.records() {
        records.push(r.map_err(|e| bad(path, e.to_string()))?);
    }
    let columns: Vec<ColumnDef> = headers
        .iter()
        .enumerate()
        .map(|(i, name)| ColumnDef {
            name: name.clone(),
            ty: infer_type(records.iter().map(|r| r.get(i).unwrap_or(""))),
        })
        .collect();
    let rows = records
        .iter()
        .map(|r| {
            columns
                .iter()
                .enumerate()
                .map(|(i, c)| parse_cell(r.get(i).unwrap_or(""), c.ty))
                .collect()
        })
        .collect();
    Ok(RawTable {
        name: table_name(path),
        primary_key: default_pk(&columns),
        columns,
        rows,
    })
}

fn json_scalar(v: &Json) -> Value {
    match v {
        Json::Null => Value::Null,
        Json::Bool(b) => Value::Bool(*b),
        Json::Number(n) => n
            .as_i64()
            .map(Value::Int)
            .unwrap_or_else(|| Value::Float(n.as_f64().unwrap_or(f64::NAN))),
        Json::String(s) => Value::Text(s.clone()),
        other => Value::Text(other.to_string()),
    }
}

fn coerce(v: Value, ty: ColumnType) -> Value {
    match (v, ty) {
        (Value::Text(s), ColumnType::Int | ColumnType::Float | ColumnType::Bool) => parse_cell(&s, ty),
        (Value::Int(i), ColumnType::Text) => Value::Text(i.to_string()),
        (Value::Float(f), ColumnType::Text) => Value::Text(f.to_string()),
        (Value::Bool(b), ColumnType::Text) => Value::Text(b.to_string()),
        (v, _) => v,
    }
}

fn infer_json_type(values: &[&Json]) -> ColumnType {
    let present: Vec<&&Json> = values.iter().filter(|v| !v.is_null()).collect();
    if present.is_empty() {
        ColumnType::Text
    } else if present.iter().all(|v| v.is_i64() || v.is_u64()) {
        ColumnType::Int
    } else if present.iter().all(|v| v.is_number()) {
        ColumnType::Float
    } else if present.iter().all(|v| v.is_boolean()) {
        ColumnType::Bool
    } else {
        ColumnType::Text
    }
}

#[derive(Deserialize)]
struct JsonTable {
    name: Option<String>,
    columns: Option<Vec<ColumnDef>>,
    primary_key: Option<String>,
    #[serde(default)]
    rows: Vec<Json>,
}

fn read_json_table(path: &Path) -> Result<RawTable, IngestError> {
    let text = fs::read_to_string(path).map_err(|e| bad(path, e.to_string()))?;
    let doc: Json = serde_json::from_str(&text).map_err(|e| bad(path, e.to_string()))?;
    let spec = match doc {
        Json::Array(rows) => JsonTable {
            name: None,
            columns: None,
            primary_key: None,
            rows,
        },
        obj @ Json::Object(_) => serde_json::from_value(obj).map_err(|e| bad(path, e.to_string()))?,
        _ => return Err(bad(path, "expected a JSON array of rows or a table object")),
    };
    let columns = match spec.columns {
        Some(c) => c,
        None => {
            let mut names: Vec<String> = Vec::new();
            for r in &spec.rows {
                let Json::Object(m) = r else {
                    return Err(bad(path, "rows must be objects when no columns are declared"));
                };
                for k in m.keys() {
                    if !names.contains(k) {
                        names.push(k.clone());
                    }
                }
            }
            names
                .into_iter()
                .map(|name| {
                    let vals: Vec<&Json> = spec.rows.iter().filter_map(|r| r.get(&name)).collect();
                    ColumnDef {
                        ty: infer_json_type(&vals),
                        name,
                    }
                })
                .collect()
        }
    };
    let mut rows = Vec::with_capacity(spec.rows.len());
    for (i, r) in spec.rows.iter().enumerate() {
        let row: Vec<Value> = match r {
            Json::Object(m) => columns
                .iter()
                .map(|c| coerce(m.get(&c.name).map_or(Value::Null, json_scalar), c.ty))
                .collect(),
            Json::Array(a) if a.len() == columns.len() => a
                .iter()
                .zip(&columns)
                .map(|(v, c)| coerce(json_scalar(v), c.ty))
                .collect(),
            _ => return Err(bad(path, format!("row {} does not match the columns", i + 1))),
        };
        rows.push(row);
    }
    Ok(RawTable {
        name: spec.name.unwrap_or_else(|| table_name(path)),
        primary_key: spec.primary_key.or_else(|| default_pk(&columns)),
        columns,
        rows,
    })
}

fn table_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>, IngestError> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| bad(p, e.to_string()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| matches!(f.extension().and_then(|x| x.to_str()), Some("csv" | "json")))
                .collect();
            entries.sort();
            out.extend(entries);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn read_table(path: &Path) -> Result<RawTable, IngestError> {
    match path.extension().and_then(|x| x.to_str()) {
        Some("csv") => read_csv(path),
        Some("json") => read_json_table(path),
        _ => Err(bad(path, "tables must be .csv or .json files")),
    }
}

#[derive(Debug, Clone)]
struct Document {
    id: i64,
    text: String,
    metadata: BTreeMap<String, Value>,
}

fn read_documents(path: &Path) -> Result<Vec<Document>, IngestError> {
    let lines: Vec<Json> = read_jsonl(path)?;
    let mut seen = BTreeSet::new();
    let mut docs = Vec::with_capacity(lines.len());
    for (i, line) in lines.into_iter().enumerate() {
        let Json::Object(mut m) = line else {
            return Err(bad(path, format!("record {} is not an object", i + 1)));
        };
        let id = match m.remove(DOCUMENT_ID) {
            Some(Json::Number(n)) if n.is_i64() => n.as_i64().unwrap_or_default(),
            Some(Json::String(s)) if s.trim().parse::<i64>().is_ok() => s.trim().parse().unwrap_or_default(),
            _ => return Err(bad(path, format!("record {} needs an integer document_id", i + 1))),
        };
        let text = match m.remove("text") {
            Some(Json::String(s)) => s,
            _ => return Err(bad(path, format!("record {} needs a text field", i + 1))),
        };
        if !seen.insert(id) {
            return Err(IngestError::DuplicateDocument(id));
        }
        docs.push(Document {
            id,
            text,
            metadata: m.iter().map(|(k, v)| (k.clone(), json_scalar(v))).collect(),
        });
    }
    Ok(docs)
}

#[derive(Debug, Clone, Deserialize)]
struct RowMapEntry {
    table: String,
    row: u64,
    document_id: i64,
}

fn apply_row_map(
    tables: &mut [RawTable],
    entries: Vec<RowMapEntry>,
    documents: &BTreeSet<i64>,
) -> Result<(), IngestError> {
    for e in entries {
        let t = tables
            .iter_mut()
            .find(|t| t.name == e.table)
            .ok_or_else(|| IngestError::UnknownTable(e.table.clone()))?;
        if !documents.contains(&e.document_id) {
            return Err(IngestError::UnknownDocument {
                table: e.table,
                row: e.row,
                document_id: e.document_id,
            });
        }
        let idx = match t.columns.iter().position(|c| c.name == DOCUMENT_ID) {
            Some(i) => i,
            None => {
                t.columns.push(ColumnDef {
                    name: DOCUMENT_ID.into(),
                    ty: ColumnType::Int,
                });
                for r in &mut t.rows {
                    r.push(Value::Null);
                }
                t.columns.len() - 1
            }
        };
        let row = usize::try_from(e.row)
            .ok()
            .and_then(|r| r.checked_sub(1))
            .and_then(|r| t.rows.get_mut(r))
            .ok_or_else(|| IngestError::RowOutOfRange {
                table: t.name.clone(),
                row: e.row,
            })?;
        row[idx] = Value::Int(e.document_id);
    }
    Ok(())
}

/// Input locations for [`ingest`].
#[derive(Debug, Clone, Default)]
pub struct IngestSources {
    /// Table files, or directories scanned for `.csv` and `.json` files.
    pub tables: Vec<PathBuf>,
    pub docs: Option<PathBuf>,
    pub row_map: Option<PathBuf>,
}

pub fn ingest(
    sources: &IngestSources,
    embedder: &dyn Embedder,
    chunking: ChunkParams,
    alpha: f64,
) -> Result<(DataLake, IngestReport), IngestError> {
    let mut report = IngestReport::default();
    let mut raw: Vec<RawTable> = Vec::new();
    for path in table_files(&sources.tables)? {
        raw.push(read_table(&path)?);
    }
    let documents = match &sources.docs {
        Some(p) => read_documents(p)?,
        None => Vec::new(),
    };
    if documents.is_empty() {
        report.warnings.push("no documents ingested; the vector index is empty".into());
    }
    let doc_ids: BTreeSet<i64> = documents.iter().map(|d| d.id).collect();
    if let Some(p) = &sources.row_map {
        apply_row_map(&mut raw, read_jsonl(p)?, &doc_ids)?;
    }

    let mut schema = GlobalSchema::default();
    let mut store = TableStore::new();
    for t in raw {
        let ts = TableSchema {
            name: t.name.clone(),
            columns: t.columns,
            primary_key: t.primary_key,
            foreign_keys: Vec::new(),
        };
        let mut table = Table::new(ts.clone());
        for r in t.rows {
            table.insert(r)?;
        }
        report.tables.push(TableCount {
            name: t.name.clone(),
            rows: table.len(),
        });
        if ts.column(DOCUMENT_ID).is_some() {
            schema.cross_links.push(CrossLink {
                metadata_key: DOCUMENT_ID.into(),
                table: t.name,
                column: DOCUMENT_ID.into(),
            });
        }
        schema.tables.push(ts);
        store.add(table);
    }

    let mut index = VectorIndex::new(embedder.dim()).with_alpha(alpha);
    let mut keys: BTreeSet<String> = BTreeSet::from([DOCUMENT_ID.to_string()]);
    let mut next_chunk = 1u64;
    for d in &documents {
        keys.extend(d.metadata.keys().cloned());
        for text in chunk_text(&d.text, chunking) {
            index.add(Chunk::embedded(next_chunk, d.id, text, d.metadata.clone(), embedder))?;
            next_chunk += 1;
        }
    }
    schema.collections.push(CollectionSchema {
        name: COLLECTION.into(),
        metadata_keys: keys.into_iter().collect(),
    });
    report.documents = documents.len();
    report.chunks = index.len();
    report.cross_links = schema.cross_links.len();
    Ok((DataLake::new(schema, store, index)?, report))
}
