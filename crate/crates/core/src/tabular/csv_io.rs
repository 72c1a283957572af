use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use super::{validate_schema, Cell, ColumnKind, ColumnSpec, Result, Table, TableError};

/// Fraction of missing cells above which a `drop_if_sparse` column is removed.
const SPARSE_DROP_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, Copy)]
pub struct CsvOptions {
    /// Fail when the target column is absent. When false, an absent target
    /// column is filled with missing cells.
    pub require_target: bool,
    /// Ignore header columns that the schema does not declare.
    pub allow_extra_columns: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            require_target: true,
            allow_extra_columns: false,
        }
    }
}

pub fn load_schema(path: &Path) -> Result<Vec<ColumnSpec>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let schema: Vec<ColumnSpec> = serde_json::from_str(&text)?;
    validate_schema(&schema)?;
    Ok(schema)
}

pub fn save_schema(schema: &[ColumnSpec], path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(schema)?;
    std::fs::write(path, text + "\n").map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, e: std::io::Error) -> TableError {
    if e.kind() == std::io::ErrorKind::NotFound {
        TableError::MissingFile(path.to_path_buf())
    } else {
        TableError::Io {
            path: path.to_path_buf(),
            source: e,
        }
    }
}

/// Reads a listing CSV whose header matches `schema` exactly (in any order).
pub fn load_csv(path: &Path, schema: &[ColumnSpec]) -> Result<Table> {
    load_csv_with(path, schema, CsvOptions::default())
}

pub fn load_csv_with(path: &Path, schema: &[ColumnSpec], opts: CsvOptions) -> Result<Table> {
    validate_schema(schema)?;
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let position: HashMap<&str, usize> = header
        .iter()
        .enumerate()
        .map(|(i, h)| (h.as_str(), i))
        .collect();

    let mut source = Vec::with_capacity(schema.len());
    for spec in schema {
        match position.get(spec.name.as_str()) {
            Some(&i) => source.push(Some(i)),
            None if spec.kind == ColumnKind::Target => {
                if opts.require_target {
                    return Err(TableError::TargetAbsent(spec.name.clone()));
                }
                source.push(None);
            }
            None => return Err(TableError::MissingHeaderColumn(spec.name.clone())),
        }
    }
    if !opts.allow_extra_columns {
        if let Some(extra) = header
            .iter()
            .find(|h| !schema.iter().any(|c| &c.name == *h))
        {
            return Err(TableError::UnexpectedHeaderColumn(extra.clone()));
        }
    }

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = schema
            .iter()
            .zip(&source)
            .map(|(spec, src)| match src {
                Some(i) => parse_cell(spec, record.get(*i).unwrap_or("")),
                None => Cell::Missing,
            })
            .collect();
        rows.push(row);
    }

    let table = Table::from_rows(schema.to_vec(), rows)?;
    Ok(drop_sparse_columns(table))
}

fn parse_cell(spec: &ColumnSpec, raw: &str) -> Cell {
    let raw = raw.trim();
    if raw.is_empty() {
        return Cell::Missing;
    }
    match spec.kind {
        ColumnKind::Numeric | ColumnKind::Target => match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => Cell::Num(v),
            _ => Cell::Missing,
        },
        ColumnKind::Binary => match raw.to_ascii_lowercase().as_str() {
            "yes" | "y" | "true" | "1" | "ja" => Cell::Num(1.0),
            "no" | "n" | "false" | "0" | "nein" => Cell::Num(0.0),
            _ => Cell::Missing,
        },
        ColumnKind::Ordinal | ColumnKind::Nominal => Cell::Label(raw.to_string()),
    }
}

fn drop_sparse_columns(table: Table) -> Table {
    let n = table.len();
    if n == 0 {
        return table;
    }
    let drop: Vec<bool> = table
        .schema()
        .iter()
        .enumerate()
        .map(|(j, spec)| {
            spec.drop_if_sparse
                && spec.kind != ColumnKind::Target
                && {
                    let missing = table.rows().iter().filter(|r| r[j].is_missing()).count();
                    missing as f64 > SPARSE_DROP_FRACTION * n as f64
                }
        })
        .collect();
    if !drop.iter().any(|&d| d) {
        return table;
    }
    let (schema, rows, ids) = table.into_parts();
    let keep = |j: &usize| !drop[*j];
    let schema = schema
        .into_iter()
        .enumerate()
        .filter(|(j, _)| keep(j))
        .map(|(_, s)| s)
        .collect();
    let rows = rows
        .into_iter()
        .map(|r| {
            r.into_iter()
                .enumerate()
                .filter(|(j, _)| keep(j))
                .map(|(_, c)| c)
                .collect()
        })
        .collect();
    Table::new(schema, rows, ids).expect("columns dropped uniformly")
}

fn format_cell(spec: &ColumnSpec, cell: &Cell) -> String {
    match cell {
        Cell::Missing => String::new(),
        Cell::Label(s) => s.clone(),
        Cell::Num(v) if spec.kind == ColumnKind::Binary => {
            if *v != 0.0 { "Yes" } else { "No" }.to_string()
        }
        Cell::Num(v) => format!("{v}"),
    }
}

/// Writes the table with a header in schema order. Row ids are not written.
pub fn write_csv<W: Write>(table: &Table, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(table.schema().iter().map(|c| c.name.as_str()))?;
    for row in table.rows() {
        w.write_record(
            table
                .schema()
                .iter()
                .zip(row)
                .map(|(spec, cell)| format_cell(spec, cell)),
        )?;
    }
    w.flush().map_err(|e| TableError::Io {
        path: "<csv writer>".into(),
        source: e,
    })?;
    Ok(())
}
