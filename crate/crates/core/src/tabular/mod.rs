//! Listing tables: schema, CSV ingestion, cleaning, imputation and encoding.

mod csv_io;
mod encode;
mod preprocess;
mod schema;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use csv_io::{load_csv, load_csv_with, load_schema, save_schema, write_csv, CsvOptions};
pub use encode::{encode, ColumnOrigin, EncodedMatrix, Encoder, EncodingRole, MAX_NOMINAL_LEVELS};
pub use preprocess::{
    dedup_near, filter_rows, impute, round_half_up, Imputer, LineFit, DEDUP_TOLERANCE,
    MIN_PLOT_AREA_M2,
};
pub(crate) use preprocess::relative_gap;
pub use schema::{default_schema, names, CONDITION_LEVELS, ENERGY_LEVELS};

#[derive(Debug, Error)]
pub enum TableError {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema json error: {0}")]
    SchemaJson(#[from] serde_json::Error),
    #[error("header is missing declared column \"{0}\"")]
    MissingHeaderColumn(String),
    #[error("header contains undeclared column \"{0}\"")]
    UnexpectedHeaderColumn(String),
    #[error("target column \"{0}\" is absent from the header")]
    TargetAbsent(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("table has no column \"{0}\"")]
    MissingColumn(String),
    #[error("row {row_id}: expected {expected} cells, found {found}")]
    RowWidth {
        row_id: u64,
        expected: usize,
        found: usize,
    },
    #[error("cannot impute \"{0}\": no rows with a known number of rooms")]
    ImputationImpossible(String),
    #[error("row {row_id}: column \"{column}\" is missing")]
    MissingCell { row_id: u64, column: String },
    #[error("row {row_id}: label \"{label}\" is not a level of ordinal column \"{column}\"")]
    UnknownOrdinal {
        row_id: u64,
        column: String,
        label: String,
    },
    #[error("nominal column \"{column}\" has {levels} levels (limit {limit})")]
    TooManyLevels {
        column: String,
        levels: usize,
        limit: usize,
    },
    #[error("column \"{0}\" is not numeric")]
    NotNumeric(String),
}

pub type Result<T> = std::result::Result<T, TableError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Binary,
    Ordinal,
    Nominal,
    Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    /// Category labels from lowest to highest rank; ordinal columns only.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ordinal_levels: Vec<String>,
    #[serde(default)]
    pub unit: String,
    /// Drop the column at load time when more than 90% of its cells are missing.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub drop_if_sparse: bool,
}

impl ColumnSpec {
    pub fn new(name: &str, kind: ColumnKind, unit: &str) -> Self {
        Self {
            name: name.to_string(),
            kind,
            ordinal_levels: Vec::new(),
            unit: unit.to_string(),
            drop_if_sparse: false,
        }
    }

    pub fn ordinal(name: &str, levels: &[&str]) -> Self {
        Self {
            ordinal_levels: levels.iter().map(|s| s.to_string()).collect(),
            ..Self::new(name, ColumnKind::Ordinal, "")
        }
    }

    pub fn is_numeric_valued(&self) -> bool {
        matches!(
            self.kind,
            ColumnKind::Numeric | ColumnKind::Binary | ColumnKind::Target
        )
    }
}

/// Checks the schema invariants: unique names, exactly one target, and
/// non-empty duplicate-free levels on ordinal columns.
pub fn validate_schema(schema: &[ColumnSpec]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for c in schema {
        if !seen.insert(c.name.as_str()) {
            return Err(TableError::InvalidSchema(format!(
                "duplicate column \"{}\"",
                c.name
            )));
        }
        if c.kind == ColumnKind::Ordinal {
            if c.ordinal_levels.is_empty() {
                return Err(TableError::InvalidSchema(format!(
                    "ordinal column \"{}\" has no levels",
                    c.name
                )));
            }
            let mut lv = std::collections::HashSet::new();
            for l in &c.ordinal_levels {
                if !lv.insert(l) {
                    return Err(TableError::InvalidSchema(format!(
                        "ordinal column \"{}\" repeats level \"{l}\"",
                        c.name
                    )));
                }
            }
        }
    }
    let targets = schema
        .iter()
        .filter(|c| c.kind == ColumnKind::Target)
        .count();
    if targets != 1 {
        return Err(TableError::InvalidSchema(format!(
            "expected exactly one target column, found {targets}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Label(String),
    Missing,
}

impl Cell {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            Cell::Num(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_label(&self) -> Option<&str> {
        match self {
            Cell::Label(s) => Some(s),
            _ => None,
        }
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }
}

/// Row-major listing table. Immutable once built; every operation returns a
/// new table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    schema: Vec<ColumnSpec>,
    rows: Vec<Vec<Cell>>,
    row_ids: Vec<u64>,
}

impl Table {
    pub fn new(schema: Vec<ColumnSpec>, rows: Vec<Vec<Cell>>, row_ids: Vec<u64>) -> Result<Self> {
        assert_eq!(rows.len(), row_ids.len(), "one row id per row");
        for (row, &id) in rows.iter().zip(&row_ids) {
            if row.len() != schema.len() {
                return Err(TableError::RowWidth {
                    row_id: id,
                    expected: schema.len(),
                    found: row.len(),
                });
            }
        }
        Ok(Self {
            schema,
            rows,
            row_ids,
        })
    }

    /// Builds a table with row ids `0..n`.
    pub fn from_rows(schema: Vec<ColumnSpec>, rows: Vec<Vec<Cell>>) -> Result<Self> {
        let ids = (0..rows.len() as u64).collect();
        Self::new(schema, rows, ids)
    }

    pub fn schema(&self) -> &[ColumnSpec] {
        &self.schema
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[Cell] {
        &self.rows[i]
    }

    pub fn row_ids(&self) -> &[u64] {
        &self.row_ids
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|c| c.name == name)
    }

    pub fn require_column(&self, name: &str) -> Result<usize> {
        self.column_index(name)
            .ok_or_else(|| TableError::MissingColumn(name.to_string()))
    }

    pub fn target_index(&self) -> Option<usize> {
        self.schema.iter().position(|c| c.kind == ColumnKind::Target)
    }

    pub fn require_target(&self) -> Result<usize> {
        self.target_index()
            .ok_or_else(|| TableError::MissingColumn("<target>".to_string()))
    }

    pub fn cell(&self, row: usize, col: usize) -> &Cell {
        &self.rows[row][col]
    }

    /// Numeric view of a column; non-numeric and missing cells are `None`.
    pub fn numeric_column(&self, col: usize) -> Vec<Option<f64>> {
        self.rows.iter().map(|r| r[col].as_num()).collect()
    }

    pub fn missing_count(&self) -> usize {
        self.rows
            .iter()
            .flat_map(|r| r.iter())
            .filter(|c| c.is_missing())
            .count()
    }

    /// Keeps the rows at `indices`, in the given order, with their ids.
    pub fn select_rows(&self, indices: &[usize]) -> Table {
        Table {
            schema: self.schema.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            row_ids: indices.iter().map(|&i| self.row_ids[i]).collect(),
        }
    }

    pub(crate) fn retain_rows(&self, keep: impl Fn(usize) -> bool) -> Table {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        self.select_rows(&idx)
    }

    pub(crate) fn into_parts(self) -> (Vec<ColumnSpec>, Vec<Vec<Cell>>, Vec<u64>) {
        (self.schema, self.rows, self.row_ids)
    }
}
