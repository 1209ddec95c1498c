//! Global schema of the data lake and its content signature.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::hash::{push_field, sha256_hex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnType {
    Int,
    Float,
    Text,
    Bool,
}

impl ColumnType {
    /// Accepts common SQL spellings (`INTEGER`, `REAL`, `VARCHAR`, ...).
    pub fn parse(name: &str) -> Option<ColumnType> {
        match name.trim().to_ascii_lowercase().as_str() {
            "int" | "integer" | "bigint" | "smallint" => Some(ColumnType::Int),
            "float" | "real" | "double" | "numeric" | "decimal" => Some(ColumnType::Float),
            "text" | "string" | "varchar" | "char" => Some(ColumnType::Text),
            "bool" | "boolean" => Some(ColumnType::Bool),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ColumnType::Int => "int",
            ColumnType::Float => "float",
            ColumnType::Text => "text",
            ColumnType::Bool => "bool",
        }
    }
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ColumnType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ColumnType::parse(&s)
            .ok_or_else(|| serde::de::Error::custom(alloc::format!("unknown column type `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ColumnType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignKey {
    pub column: String,
    pub ref_table: String,
    pub ref_column: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub name: String,
    pub columns: Vec<ColumnDef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primary_key: Option<String>,
    #[serde(default)]
    pub foreign_keys: Vec<ForeignKey>,
}

impl TableSchema {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Option<&ColumnDef> {
        self.columns.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectionSchema {
    pub name: String,
    pub metadata_keys: Vec<String>,
}

/// Maps a chunk metadata key onto a relational column.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CrossLink {
    pub metadata_key: String,
    pub table: String,
    pub column: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GlobalSchema {
    #[serde(default)]
    pub tables: Vec<TableSchema>,
    #[serde(default)]
    pub collections: Vec<CollectionSchema>,
    #[serde(default)]
    pub cross_links: Vec<CrossLink>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("duplicate table `{0}`")]
    DuplicateTable(String),
    #[error("duplicate column `{column}` in table `{table}`")]
    DuplicateColumn { table: String, column: String },
    #[error("primary key `{column}` is not a column of `{table}`")]
    BadPrimaryKey { table: String, column: String },
    #[error("cross-link `{0}` references an unknown metadata key")]
    UnknownMetadataKey(String),
    #[error("cross-link references unknown column `{table}.{column}`")]
    UnknownLinkColumn { table: String, column: String },
}

impl GlobalSchema {
    pub fn table(&self, name: &str) -> Option<&TableSchema> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Whether any table declares a column with this name.
    pub fn has_column(&self, name: &str) -> bool {
        self.tables.iter().any(|t| t.column(name).is_some())
    }

    pub fn has_metadata_key(&self, key: &str) -> bool {
        self.collections
            .iter()
            .any(|c| c.metadata_keys.iter().any(|k| k == key))
    }

    /// Names a sub-question's `$var_d.c` may legitimately mention: every
    /// table column plus every chunk metadata key.
    pub fn known_attributes(&self) -> BTreeSet<&str> {
        self.tables
            .iter()
            .flat_map(|t| t.columns.iter().map(|c| c.name.as_str()))
            .chain(
                self.collections
                    .iter()
                    .flat_map(|c| c.metadata_keys.iter().map(String::as_str)),
            )
            .collect()
    }

    /// Metadata keys and columns that take part in a cross-link.
    pub fn cross_link_keys(&self) -> BTreeSet<&str> {
        self.cross_links
            .iter()
            .flat_map(|l| [l.metadata_key.as_str(), l.column.as_str()])
            .collect()
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        let mut names = BTreeSet::new();
        for t in &self.tables {
            if !names.insert(t.name.as_str()) {
                return Err(SchemaError::DuplicateTable(t.name.clone()));
            }
            let mut cols = BTreeSet::new();
            for c in &t.columns {
                if !cols.insert(c.name.as_str()) {
                    return Err(SchemaError::DuplicateColumn {
                        table: t.name.clone(),
                        column: c.name.clone(),
                    });
                }
            }
            if let Some(pk) = &t.primary_key {
                if !cols.contains(pk.as_str()) {
                    return Err(SchemaError::BadPrimaryKey {
                        table: t.name.clone(),
                        column: pk.clone(),
                    });
                }
            }
        }
        for link in &self.cross_links {
            if !self.has_metadata_key(&link.metadata_key) {
                return Err(SchemaError::UnknownMetadataKey(link.metadata_key.clone()));
            }
            let ok = self
                .table(&link.table)
                .is_some_and(|t| t.column(&link.column).is_some());
            if !ok {
                return Err(SchemaError::UnknownLinkColumn {
                    table: link.table.clone(),
                    column: link.column.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Signature of the empty schema.
pub const EMPTY_SCHEMA_SIGNATURE: &str =
    "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855";

/// Content hash of the schema, independent of declaration order.
///
/// Tables (with sorted columns and foreign keys), collections (with sorted
/// metadata keys) and cross-links are each encoded as length-prefixed
/// fields, sorted, and hashed with SHA-256. The empty schema encodes to the
/// empty string, so its signature is [`EMPTY_SCHEMA_SIGNATURE`].
pub fn signature_of(schema: &GlobalSchema) -> String {
    let mut tables: Vec<String> = schema
        .tables
        .iter()
        .map(|t| {
            let mut buf = String::new();
            push_field(&mut buf, "table");
            push_field(&mut buf, &t.name);
            let mut cols: Vec<String> = t
                .columns
                .iter()
                .map(|c| {
                    let mut s = String::new();
                    push_field(&mut s, &c.name);
                    push_field(&mut s, c.ty.as_str());
                    s
                })
                .collect();
            cols.sort();
            push_field(&mut buf, &cols.concat());
            push_field(&mut buf, t.primary_key.as_deref().unwrap_or(""));
            let mut fks: Vec<String> = t
                .foreign_keys
                .iter()
                .map(|fk| {
                    let mut s = String::new();
                    push_field(&mut s, &fk.column);
                    push_field(&mut s, &fk.ref_table);
                    push_field(&mut s, &fk.ref_column);
                    s
                })
                .collect();
            fks.sort();
            push_field(&mut buf, &fks.concat());
            buf
        })
        .collect();
    tables.sort();

    let mut collections: Vec<String> = schema
        .collections
        .iter()
        .map(|c| {
            let mut buf = String::new();
            push_field(&mut buf, "collection");
            push_field(&mut buf, &c.name);
            let mut keys: Vec<&str> = c.metadata_keys.iter().map(String::as_str).collect();
            keys.sort_unstable();
            for k in keys {
                push_field(&mut buf, k);
            }
            buf
        })
        .collect();
    collections.sort();

    let mut links: Vec<String> = schema
        .cross_links
        .iter()
        .map(|l| {
            let mut buf = String::new();
            push_field(&mut buf, "link");
            push_field(&mut buf, &l.metadata_key);
            push_field(&mut buf, &l.table);
            push_field(&mut buf, &l.column);
            buf
        })
        .collect();
    links.sort();

    let mut all = String::new();
    for part in tables.iter().chain(&collections).chain(&links) {
        push_field(&mut all, part);
    }
    sha256_hex(all.as_bytes())
}

impl fmt::Display for GlobalSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.tables {
            writeln!(f, "# Table: {}", t.name)?;
            for c in &t.columns {
                let pk = if t.primary_key.as_deref() == Some(c.name.as_str()) {
                    ", primary key"
                } else {
                    ""
                };
                writeln!(f, "  {}: {}{}", c.name, c.ty, pk)?;
            }
        }
        for c in &self.collections {
            writeln!(f, "# Collection: {} ({})", c.name, c.metadata_keys.join(", "))?;
        }
        for l in &self.cross_links {
            writeln!(f, "# Link: {} -> {}.{}", l.metadata_key, l.table, l.column)?;
        }
        Ok(())
    }
}
