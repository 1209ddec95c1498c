//! Append-only lineage log, optionally mirrored to a JSON Lines file.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use adot_core::LineageRecord;
use thiserror::Error;

use crate::persist::{read_jsonl, PersistError};

#[derive(Debug, Error)]
pub enum LineageError {
    #[error("lineage file: {0}")]
    Io(#[from] std::io::Error),
    #[error("lineage file: {0}")]
    Json(#[from] serde_json::Error),
}

struct Inner {
    records: Vec<LineageRecord>,
    file: Option<BufWriter<File>>,
}

/// Records are numbered and written under one lock, so `seq` is strictly
/// increasing in file order even when nodes finish concurrently.
pub struct LineageLog {
    inner: Mutex<Inner>,
    clock: AtomicU64,
}

impl Default for LineageLog {
    fn default() -> Self {
        LineageLog::in_memory()
    }
}

impl LineageLog {
    pub fn in_memory() -> Self {
        LineageLog {
            inner: Mutex::new(Inner {
                records: Vec::new(),
                file: None,
            }),
            clock: AtomicU64::new(0),
        }
    }

    /// Truncates `path` and mirrors every record to it.
    pub fn to_file(path: &Path) -> Result<Self, LineageError> {
        let f = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)?;
        let log = LineageLog::in_memory();
        log.inner.lock().expect("lineage lock").file = Some(BufWriter::new(f));
        Ok(log)
    }

    /// Next value of the logical clock used for `started`/`finished`.
    pub fn tick(&self) -> u64 {
        self.clock.fetch_add(1, Ordering::SeqCst) + 1
    }

    /// Assigns the next `seq` and persists the record.
    pub fn append(&self, mut record: LineageRecord) -> Result<u64, LineageError> {
        let mut inner = self.inner.lock().expect("lineage lock");
        let seq = inner.records.len() as u64 + 1;
        record.seq = seq;
        if let Some(f) = inner.file.as_mut() {
            serde_json::to_writer(&mut *f, &record)?;
            f.write_all(b"\n")?;
            f.flush()?;
        }
        inner.records.push(record);
        Ok(seq)
    }

    pub fn records(&self) -> Vec<LineageRecord> {
        self.inner.lock().expect("lineage lock").records.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("lineage lock").records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn load_lineage(path: &Path) -> Result<Vec<LineageRecord>, PersistError> {
    read_jsonl(path)
}
