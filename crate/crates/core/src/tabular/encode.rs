use std::collections::BTreeSet;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Cell, ColumnKind, ColumnSpec, Result, Table, TableError};

pub const MAX_NOMINAL_LEVELS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum EncodingRole {
    Raw,
    Binary01,
    OrdinalRank,
    OneHot { level: String },
}

/// Where an encoded column came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnOrigin {
    /// Encoded column name: the source name, or `source=level` for one-hot.
    pub name: String,
    pub source: ColumnSpec,
    #[serde(flatten)]
    pub role: EncodingRole,
}

impl ColumnOrigin {
    /// Binary and one-hot columns take only the values 0 and 1.
    pub fn is_indicator(&self) -> bool {
        matches!(self.role, EncodingRole::Binary01 | EncodingRole::OneHot { .. })
    }
}

/// Numeric design matrix plus the mapping back to source features.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMatrix {
    pub values: Array2<f64>,
    pub columns: Vec<ColumnOrigin>,
    /// Prices; `NaN` where the source table had no target value.
    pub target: Array1<f64>,
    pub row_ids: Vec<u64>,
}

impl EncodedMatrix {
    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Recovers the categorical label of `source` for row `row`.
    pub fn decode_label(&self, row: usize, source: &str) -> Option<String> {
        decode_label(&self.columns, self.values.row(row).as_slice()?, source)
    }

    pub fn select_rows(&self, idx: &[usize]) -> EncodedMatrix {
        EncodedMatrix {
            values: self.values.select(ndarray::Axis(0), idx),
            columns: self.columns.clone(),
            target: self.target.select(ndarray::Axis(0), idx),
            row_ids: idx.iter().map(|&i| self.row_ids[i]).collect(),
        }
    }
}

/// Inverse of the encoding for one source column of one encoded row.
pub fn decode_label(columns: &[ColumnOrigin], row: &[f64], source: &str) -> Option<String> {
    let mut found = None;
    for (c, &v) in columns.iter().zip(row) {
        if c.source.name != source {
            continue;
        }
        match &c.role {
            EncodingRole::Raw => return Some(format!("{v}")),
            EncodingRole::Binary01 => return Some(if v != 0.0 { "Yes" } else { "No" }.into()),
            EncodingRole::OrdinalRank => {
                return c.source.ordinal_levels.get(v as usize).cloned();
            }
            EncodingRole::OneHot { level } => {
                if v == 1.0 {
                    found = Some(level.clone());
                }
            }
        }
    }
    found
}

/// Encoding learned from a training table: the column layout and the
/// observed nominal levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub columns: Vec<ColumnOrigin>,
    pub target: String,
}

/// Resolved source-column positions for a particular input schema.
struct Binding<'a> {
    encoder: &'a Encoder,
    source_pos: Vec<usize>,
    target_pos: Option<usize>,
}

impl Encoder {
    /// Learns the layout: raw numerics, 0/1 binaries, ordinal ranks and one
    /// one-hot column per nominal level observed in `t` (sorted).
    pub fn fit(t: &Table) -> Result<Self> {
        let target = t
            .schema()
            .iter()
            .find(|c| c.kind == ColumnKind::Target)
            .ok_or_else(|| TableError::MissingColumn("<target>".into()))?
            .name
            .clone();
        let mut columns = Vec::new();
        for (j, spec) in t.schema().iter().enumerate() {
            let origin = |name: String, role| ColumnOrigin {
                name,
                source: spec.clone(),
                role,
            };
            match spec.kind {
                ColumnKind::Target => {}
                ColumnKind::Numeric => columns.push(origin(spec.name.clone(), EncodingRole::Raw)),
                ColumnKind::Binary => {
                    columns.push(origin(spec.name.clone(), EncodingRole::Binary01))
                }
                ColumnKind::Ordinal => {
                    columns.push(origin(spec.name.clone(), EncodingRole::OrdinalRank))
                }
                ColumnKind::Nominal => {
                    let levels: BTreeSet<&str> =
                        t.rows().iter().filter_map(|r| r[j].as_label()).collect();
                    if levels.len() > MAX_NOMINAL_LEVELS {
                        return Err(TableError::TooManyLevels {
                            column: spec.name.clone(),
                            levels: levels.len(),
                            limit: MAX_NOMINAL_LEVELS,
                        });
                    }
                    for level in levels {
                        columns.push(origin(
                            format!("{}={level}", spec.name),
                            EncodingRole::OneHot {
                                level: level.to_string(),
                            },
                        ));
                    }
                }
            }
        }
        Ok(Self { columns, target })
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    fn bind<'a>(&'a self, schema: &[ColumnSpec]) -> Result<Binding<'a>> {
        let find = |name: &str| schema.iter().position(|c| c.name == name);
        let source_pos = self
            .columns
            .iter()
            .map(|c| find(&c.source.name).ok_or_else(|| TableError::MissingColumn(c.source.name.clone())))
            .collect::<Result<Vec<_>>>()?;
        Ok(Binding {
            encoder: self,
            source_pos,
            target_pos: find(&self.target),
        })
    }

    /// Encodes a table with this layout. Columns are matched by name, so the
    /// input may order them differently. A nominal level not seen at fit time
    /// encodes as all zeros in that feature's one-hot group.
    pub fn transform(&self, t: &Table) -> Result<EncodedMatrix> {
        let binding = self.bind(t.schema())?;
        let n = t.len();
        let p = self.columns.len();
        let mut values = Array2::<f64>::zeros((n, p));
        let mut target = Array1::<f64>::from_elem(n, f64::NAN);
        for i in 0..n {
            let id = t.row_ids()[i];
            let encoded = binding.encode(t.row(i), id)?;
            values.row_mut(i).assign(&Array1::from(encoded));
            if let Some(tp) = binding.target_pos {
                if let Some(v) = t.cell(i, tp).as_num() {
                    target[i] = v;
                }
            }
        }
        Ok(EncodedMatrix {
            values,
            columns: self.columns.clone(),
            target,
            row_ids: t.row_ids().to_vec(),
        })
    }

    /// Encodes a single row given the schema it follows.
    pub fn encode_row(&self, schema: &[ColumnSpec], row: &[Cell], row_id: u64) -> Result<Vec<f64>> {
        self.bind(schema)?.encode(row, row_id)
    }
}

impl Binding<'_> {
    fn encode(&self, row: &[Cell], row_id: u64) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.source_pos.len());
        for (origin, &pos) in self.encoder.columns.iter().zip(&self.source_pos) {
            let cell = &row[pos];
            let missing = || TableError::MissingCell {
                row_id,
                column: origin.source.name.clone(),
            };
            let v = match &origin.role {
                EncodingRole::Raw => cell.as_num().ok_or_else(missing)?,
                EncodingRole::Binary01 => {
                    if cell.as_num().ok_or_else(missing)? != 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                }
                EncodingRole::OrdinalRank => {
                    let label = cell.as_label().ok_or_else(missing)?;
                    origin
                        .source
                        .ordinal_levels
                        .iter()
                        .position(|l| l == label)
                        .ok_or_else(|| TableError::UnknownOrdinal {
                            row_id,
                            column: origin.source.name.clone(),
                            label: label.to_string(),
                        })? as f64
                }
                EncodingRole::OneHot { level } => {
                    let label = cell.as_label().ok_or_else(missing)?;
                    f64::from(u8::from(label == level))
                }
            };
            out.push(v);
        }
        Ok(out)
    }
}

/// Fits an encoder on `t` and encodes `t` with it.
pub fn encode(t: &Table) -> Result<EncodedMatrix> {
    Encoder::fit(t)?.transform(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schema() -> Vec<ColumnSpec> {
        vec![
            ColumnSpec::new("price", ColumnKind::Target, "EUR"),
            ColumnSpec::new("living_area", ColumnKind::Numeric, "m2"),
            ColumnSpec::new("has_garden", ColumnKind::Binary, ""),
            ColumnSpec::ordinal(
                "energy_class",
                &["H", "G", "F", "E", "D", "C", "B", "A", "A+"],
            ),
            ColumnSpec::new("heating_type", ColumnKind::Nominal, ""),
        ]
    }

    fn row(area: f64, garden: f64, energy: &str, heating: &str) -> Vec<Cell> {
        vec![
            Cell::Num(100.0),
            Cell::Num(area),
            Cell::Num(garden),
            Cell::Label(energy.into()),
            Cell::Label(heating.into()),
        ]
    }

    #[test]
    fn encoding_rules() {
        let t = Table::from_rows(
            schema(),
            vec![
                row(80.0, 1.0, "A+", "gas"),
                row(90.0, 0.0, "H", "oil"),
                row(70.0, 1.0, "C", "heat_pump"),
            ],
        )
        .unwrap();
        let m = encode(&t).unwrap();
        let names = m.column_names();
        assert_eq!(
            names,
            vec![
                "living_area",
                "has_garden",
                "energy_class",
                "heating_type=gas",
                "heating_type=heat_pump",
                "heating_type=oil"
            ]
        );
        // binary Yes -> 1
        assert_eq!(m.values[[0, 1]], 1.0);
        assert_eq!(m.values[[1, 1]], 0.0);
        // A+ is the highest rank
        assert_eq!(m.values[[0, 2]], 8.0);
        assert_eq!(m.values[[1, 2]], 0.0);
        // one-hot rows sum to 1
        for i in 0..3 {
            let s: f64 = (3..6).map(|j| m.values[[i, j]]).sum();
            assert_eq!(s, 1.0);
        }
        assert_eq!(m.target.to_vec(), vec![100.0; 3]);
    }

    #[test]
    fn unknown_ordinal_names_row_and_label() {
        let t = Table::new(schema(), vec![row(80.0, 1.0, "Z", "gas")], vec![17]).unwrap();
        let err = encode(&t).unwrap_err();
        assert!(matches!(
            &err,
            TableError::UnknownOrdinal { row_id: 17, label, .. } if label == "Z"
        ));
    }

    #[test]
    fn missing_cell_rejected() {
        let mut r = row(80.0, 1.0, "A", "gas");
        r[1] = Cell::Missing;
        let t = Table::from_rows(schema(), vec![r]).unwrap();
        assert!(matches!(encode(&t), Err(TableError::MissingCell { .. })));
    }

    #[test]
    fn too_many_levels() {
        let rows = (0..65).map(|i| row(1.0, 0.0, "A", &format!("h{i}"))).collect();
        let t = Table::from_rows(schema(), rows).unwrap();
        assert!(matches!(encode(&t), Err(TableError::TooManyLevels { levels: 65, .. })));
    }

    #[test]
    fn unseen_nominal_level_encodes_as_zeros() {
        let train = Table::from_rows(schema(), vec![row(1.0, 0.0, "A", "gas")]).unwrap();
        let enc = Encoder::fit(&train).unwrap();
        let test = Table::from_rows(schema(), vec![row(1.0, 0.0, "A", "wood")]).unwrap();
        let m = enc.transform(&test).unwrap();
        assert_eq!(m.values[[0, 3]], 0.0);
    }

    proptest! {
        #[test]
        fn labels_decode_back(
            rows in prop::collection::vec((0usize..9, 0usize..4, any::<bool>()), 1..30)
        ) {
            let levels = ["H", "G", "F", "E", "D", "C", "B", "A", "A+"];
            let heat = ["gas", "oil", "pump", "wood"];
            let table_rows: Vec<Vec<Cell>> = rows
                .iter()
                .map(|&(e, h, g)| row(50.0, f64::from(u8::from(g)), levels[e], heat[h]))
                .collect();
            let t = Table::from_rows(schema(), table_rows).unwrap();
            let m = encode(&t).unwrap();
            for (i, &(e, h, g)) in rows.iter().enumerate() {
                prop_assert_eq!(m.decode_label(i, "energy_class").unwrap(), levels[e]);
                prop_assert_eq!(m.decode_label(i, "heating_type").unwrap(), heat[h]);
                prop_assert_eq!(m.decode_label(i, "has_garden").unwrap(), if g { "Yes" } else { "No" });
            }
        }
    }
}
