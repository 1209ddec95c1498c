//! Store directory layout:
//!
//! ```text
//! <dir>/schema.json          GlobalSchema
//! <dir>/tables/<name>.jsonl  one {"row_id": .., "values": [..]} per line
//! <dir>/chunks.jsonl         one Chunk (with both vectors) per line
//! ```

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use adot_core::embed::DEFAULT_DIM;
use adot_core::lake::LakeError;
use adot_core::table::{Row, TableError};
use adot_core::vector::IndexError;
use adot_core::{Chunk, DataLake, GlobalSchema, Table, TableStore, VectorIndex};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Table { path: PathBuf, source: TableError },
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Lake(#[from] LakeError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PersistError + '_ {
    move |source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), PersistError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(|source| PersistError::Json {
            path: path.to_path_buf(),
            line: 0,
            source,
        })?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads non-blank lines of a JSON Lines file.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, PersistError> {
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| PersistError::Json {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PersistError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| PersistError::Json {
        path: path.to_path_buf(),
        line: source.line(),
        source,
    })
}

pub fn save_lake(lake: &DataLake, dir: &Path) -> Result<(), PersistError> {
    let tables_dir = dir.join("tables");
    fs::create_dir_all(&tables_dir).map_err(io_err(&tables_dir))?;
    let schema_path = dir.join("schema.json");
    let schema = serde_json::to_string_pretty(&lake.schema).map_err(|source| PersistError::Json {
        path: schema_path.clone(),
        line: 0,
        source,
    })?;
    fs::write(&schema_path, schema + "\n").map_err(io_err(&schema_path))?;
    for t in lake.tables.tables() {
        write_jsonl(&tables_dir.join(format!("{}.jsonl", t.name())), t.rows())?;
    }
    write_jsonl(&dir.join("chunks.jsonl"), lake.index.chunks())
}

/// Loads a store directory. The index dimension is taken from the chunks
/// (the default dimension when there are none).
pub fn load_lake(dir: &Path, alpha: f64) -> Result<DataLake, PersistError> {
    let schema: GlobalSchema = read_json(&dir.join("schema.json"))?;
    let mut tables = TableStore::new();
    for ts in &schema.tables {
        let path = dir.join("tables").join(format!("{}.jsonl", ts.name));
        let rows: Vec<Row> = read_jsonl(&path)?;
        let mut table = Table::new(ts.clone());
        for r in rows {
            table
                .insert_with_id(r.row_id, r.values)
                .map_err(|source| PersistError::Table {
                    path: path.clone(),
                    source,
                })?;
        }
        tables.add(table);
    }
    let chunks: Vec<Chunk> = read_jsonl(&dir.join("chunks.jsonl"))?;
    let dim = chunks.first().map_or(DEFAULT_DIM, |c| c.dense_vec.len());
    let mut index = VectorIndex::new(dim).with_alpha(alpha);
    for c in chunks {
        index.add(c)?;
    }
    Ok(DataLake::new(schema, tables, index)?)
}
