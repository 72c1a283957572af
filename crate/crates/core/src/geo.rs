//! Postal code to coordinate lookup and table geocoding.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::tabular::{names, Cell, ColumnKind, ColumnSpec, Table};

/// Germany bounding box, degrees WGS84.
pub const LAT_RANGE: (f64, f64) = (47.0, 55.1);
pub const LON_RANGE: (f64, f64) = (5.8, 15.1);

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("cannot read lookup {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("lookup line {line}: {reason}")]
    Malformed { line: u64, reason: String },
    #[error("lookup line {line}: ({lat}, {lon}) lies outside the German bounding box")]
    OutOfBounds { line: u64, lat: f64, lon: f64 },
    #[error("table already has a \"{0}\" column")]
    ColumnExists(String),
    #[error("table has no \"{0}\" column")]
    MissingColumn(String),
    #[error(transparent)]
    Table(#[from] crate::tabular::TableError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GeoLookup {
    entries: BTreeMap<String, (f64, f64)>,
}

fn in_bounds(lat: f64, lon: f64) -> bool {
    (LAT_RANGE.0..=LAT_RANGE.1).contains(&lat) && (LON_RANGE.0..=LON_RANGE.1).contains(&lon)
}

fn is_postal_code(code: &str) -> bool {
    code.len() == 5 && code.bytes().all(|b| b.is_ascii_digit())
}

/// Five-digit text form of a postal-code cell. Numeric cells are zero-padded.
pub fn postal_code_text(cell: &Cell) -> Option<String> {
    match cell {
        Cell::Num(v) if v.fract() == 0.0 && (0.0..100_000.0).contains(v) => {
            Some(format!("{:05}", *v as u32))
        }
        Cell::Label(s) if is_postal_code(s.trim()) => Some(s.trim().to_string()),
        _ => None,
    }
}

impl GeoLookup {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an entry; `line` is only used for error messages.
    pub fn insert(&mut self, code: &str, lat: f64, lon: f64, line: u64) -> Result<(), GeoError> {
        if !is_postal_code(code) {
            return Err(GeoError::Malformed {
                line,
                reason: format!("\"{code}\" is not a 5-digit postal code"),
            });
        }
        if !in_bounds(lat, lon) {
            return Err(GeoError::OutOfBounds { line, lat, lon });
        }
        self.entries.insert(code.to_string(), (lat, lon));
        Ok(())
    }

    pub fn get(&self, code: &str) -> Option<(f64, f64)> {
        self.entries.get(code).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, (f64, f64))> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Writes `plz,lat,lon` CSV, sorted by postal code.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), GeoError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["plz", "lat", "lon"])?;
        for (code, (lat, lon)) in self.iter() {
            w.write_record([code.to_string(), lat.to_string(), lon.to_string()])?;
        }
        w.flush().map_err(|e| GeoError::Io {
            path: "<lookup writer>".into(),
            source: e,
        })
    }
}

/// Loads a `plz,lat,lon` CSV. An empty file is an empty lookup.
pub fn load_lookup(path: &Path) -> Result<GeoLookup, GeoError> {
    let file = File::open(path).map_err(|e| GeoError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    let mut lookup = GeoLookup::new();
    for (i, record) in reader.records().enumerate() {
        let line = i as u64 + 1;
        let record = record.map_err(|e| GeoError::Malformed {
            line,
            reason: e.to_string(),
        })?;
        let fields: Vec<&str> = record.iter().map(str::trim).collect();
        if line == 1 {
            if fields != ["plz", "lat", "lon"] {
                return Err(GeoError::Malformed {
                    line,
                    reason: format!("expected header plz,lat,lon, found {}", fields.join(",")),
                });
            }
            continue;
        }
        if fields.len() != 3 {
            return Err(GeoError::Malformed {
                line,
                reason: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let parse = |s: &str, what: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| GeoError::Malformed {
                    line,
                    reason: format!("{what} \"{s}\" is not a number"),
                })
        };
        let lat = parse(fields[1], "lat")?;
        let lon = parse(fields[2], "lon")?;
        lookup.insert(fields[0], lat, lon, line)?;
    }
    Ok(lookup)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GeocodeTally {
    pub kept: usize,
    pub dropped_unknown: usize,
}

/// Appends `latitude` and `longitude` columns from the postal code. Rows
/// whose code is missing or unknown are dropped and counted.
pub fn geocode(g: &GeoLookup, t: &Table) -> Result<(Table, GeocodeTally), GeoError> {
    for c in [names::LATITUDE, names::LONGITUDE] {
        if t.column_index(c).is_some() {
            return Err(GeoError::ColumnExists(c.to_string()));
        }
    }
    let postal = t
        .column_index(names::POSTAL_CODE)
        .ok_or_else(|| GeoError::MissingColumn(names::POSTAL_CODE.to_string()))?;

    let mut schema = t.schema().to_vec();
    schema.push(ColumnSpec::new(names::LATITUDE, ColumnKind::Numeric, "deg"));
    schema.push(ColumnSpec::new(names::LONGITUDE, ColumnKind::Numeric, "deg"));

    let mut rows = Vec::with_capacity(t.len());
    let mut ids = Vec::with_capacity(t.len());
    let mut tally = GeocodeTally::default();
    for (row, &id) in t.rows().iter().zip(t.row_ids()) {
        match postal_code_text(&row[postal]).and_then(|c| g.get(&c)) {
            Some((lat, lon)) => {
                let mut r = row.clone();
                r.push(Cell::Num(lat));
                r.push(Cell::Num(lon));
                rows.push(r);
                ids.push(id);
                tally.kept += 1;
            }
            None => tally.dropped_unknown += 1,
        }
    }
    Ok((Table::new(schema, rows, ids)?, tally))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lookup_file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_valid_row() {
        let f = lookup_file("plz,lat,lon\n10115,52.532,13.385\n");
        let g = load_lookup(f.path()).unwrap();
        assert_eq!(g.get("10115"), Some((52.532, 13.385)));
    }

    #[test]
    fn rejects_out_of_box() {
        let f = lookup_file("plz,lat,lon\n10115,52.5,13.3\n20095,60.0,10.0\n");
        match load_lookup(f.path()) {
            Err(GeoError::OutOfBounds { line, lat, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(lat, 60.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_row_names_line() {
        let f = lookup_file("plz,lat,lon\n10115,52.5,13.3\n1011,52.5,13.3\n");
        assert!(matches!(load_lookup(f.path()), Err(GeoError::Malformed { line: 3, .. })));
        let f = lookup_file("plz,lat,lon\n10115,abc,13.3\n");
        assert!(matches!(load_lookup(f.path()), Err(GeoError::Malformed { line: 2, .. })));
    }

    #[test]
    fn empty_file_is_empty_lookup() {
        let f = lookup_file("");
        assert!(load_lookup(f.path()).unwrap().is_empty());
    }

    fn plz_table(codes: &[Cell]) -> Table {
        let schema = vec![
            ColumnSpec::new("price", ColumnKind::Target, "EUR"),
            ColumnSpec::new("postal_code", ColumnKind::Numeric, ""),
        ];
        Table::from_rows(
            schema,
            codes.iter().map(|c| vec![Cell::Num(1.0), c.clone()]).collect(),
        )
        .unwrap()
    }

    #[test]
    fn geocode_appends_and_drops() {
        let mut g = GeoLookup::new();
        g.insert("10115", 52.532, 13.385, 0).unwrap();
        g.insert("01067", 51.05, 13.73, 0).unwrap();
        let t = plz_table(&[
            Cell::Num(10115.0),
            Cell::Num(99999.0),
            Cell::Num(1067.0),
            Cell::Label("10115".into()),
        ]);
        let (out, tally) = geocode(&g, &t).unwrap();
        assert_eq!(tally.dropped_unknown, 1);
        assert_eq!(out.len() + tally.dropped_unknown, t.len());
        assert_eq!(out.row_ids(), &[0, 2, 3]);
        let lat = out.column_index("latitude").unwrap();
        let lon = out.column_index("longitude").unwrap();
        assert_eq!(out.cell(0, lat), &Cell::Num(52.532));
        assert_eq!(out.cell(0, lon), &Cell::Num(13.385));
        assert_eq!(out.cell(1, lat), &Cell::Num(51.05));
        // existing cells untouched
        assert_eq!(&out.row(0)[..2], t.row(0));
    }

    #[test]
    fn geocode_refuses_overwrite() {
        let g = GeoLookup::new();
        let t = plz_table(&[Cell::Num(10115.0)]);
        let (once, _) = geocode(&g, &t).unwrap();
        assert!(matches!(geocode(&g, &once), Err(GeoError::ColumnExists(c)) if c == "latitude"));
    }
}
