use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::names;
use super::{Cell, Result, Table, TableError};

/// Plots strictly below this area are treated as data errors.
pub const MIN_PLOT_AREA_M2: f64 = 30.0;
/// Relative price and living-area gap within which listings count as the same.
pub const DEDUP_TOLERANCE: f64 = 0.05;

/// Drops rows with a missing or non-positive target and rows whose plot area
/// is strictly below `min_plot_m2`. Row ids are preserved.
pub fn filter_rows(t: &Table, min_plot_m2: f64) -> Result<Table> {
    let target = t.require_target()?;
    let plot = t.require_column(names::PLOT_AREA)?;
    Ok(t.retain_rows(|i| {
        let price_ok = matches!(t.cell(i, target), Cell::Num(p) if *p > 0.0);
        let plot_ok = match t.cell(i, plot) {
            Cell::Num(a) => *a >= min_plot_m2,
            _ => true,
        };
        price_ok && plot_ok
    }))
}

pub(crate) fn relative_gap(a: f64, b: f64) -> f64 {
    let lo = a.min(b);
    if lo <= 0.0 {
        return if a == b { 0.0 } else { f64::INFINITY };
    }
    (a - b).abs() / lo
}

fn key_part(cell: &Cell) -> String {
    match cell {
        Cell::Num(v) => format!("{v}"),
        Cell::Label(s) => s.clone(),
        Cell::Missing => String::new(),
    }
}

/// Removes re-published listings.
///
/// Two rows are near-duplicates when they share `(postal_code, property_type)`
/// and both price and living area differ by at most `tol`, measured relative
/// to the smaller value. Rows are scanned in table order and a row is dropped
/// when it is a near-duplicate of any row already kept, so the earliest row of
/// each group survives. Rows missing price or living area are always kept.
pub fn dedup_near(t: &Table, tol: f64) -> Result<Table> {
    let target = t.require_target()?;
    let area = t.require_column(names::LIVING_AREA)?;
    let postal = t.require_column(names::POSTAL_CODE)?;
    let ptype = t.column_index(names::PROPERTY_TYPE);

    let mut kept_by_key: HashMap<(String, String), Vec<(f64, f64)>> = HashMap::new();
    let mut keep = vec![true; t.len()];
    // Ascending row-id order so the smallest id of each group is retained.
    let mut order: Vec<usize> = (0..t.len()).collect();
    order.sort_by_key(|&i| t.row_ids()[i]);
    for i in order {
        let (Some(price), Some(living)) = (t.cell(i, target).as_num(), t.cell(i, area).as_num())
        else {
            continue;
        };
        let key = (
            key_part(t.cell(i, postal)),
            ptype.map(|c| key_part(t.cell(i, c))).unwrap_or_default(),
        );
        let kept = kept_by_key.entry(key).or_default();
        let dup = kept
            .iter()
            .any(|&(p, a)| relative_gap(p, price) <= tol && relative_gap(a, living) <= tol);
        if dup {
            keep[i] = false;
        } else {
            kept.push((price, living));
        }
    }
    Ok(t.retain_rows(|i| keep[i]))
}

/// Rounds half away from zero toward +inf for the non-negative counts used here.
pub fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

/// Least-squares line `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
}

impl LineFit {
    pub fn fit(points: &[(f64, f64)]) -> Option<Self> {
        if points.is_empty() {
            return None;
        }
        let n = points.len() as f64;
        let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
        let my = points.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        Some(Self {
            intercept: my - slope * mx,
            slope,
        })
    }

    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

/// Learned imputation parameters: bathroom and bedroom counts as linear
/// functions of the room count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Imputer {
    pub bathrooms: LineFit,
    pub bedrooms: LineFit,
}

const IMPUTED_COLUMNS: [&str; 6] = [
    names::RENTAL_INCOME,
    names::RENOVATION_YEAR,
    names::CONSTRUCTION_YEAR,
    names::N_BATHROOMS,
    names::N_BEDROOMS,
    names::N_ROOMS,
];

impl Imputer {
    /// Whether `t` carries every column the imputer reads or writes.
    pub fn applicable(schema: &[super::ColumnSpec]) -> bool {
        IMPUTED_COLUMNS
            .iter()
            .all(|c| schema.iter().any(|s| s.name == *c))
    }

    pub fn fit(t: &Table) -> Result<Self> {
        for c in IMPUTED_COLUMNS {
            t.require_column(c)?;
        }
        let rooms = t.require_column(names::N_ROOMS)?;
        if (0..t.len()).all(|i| t.cell(i, rooms).is_missing()) {
            return Err(TableError::ImputationImpossible(names::N_ROOMS.to_string()));
        }
        let line_for = |name: &str| -> Result<LineFit> {
            let col = t.require_column(name)?;
            let pts: Vec<(f64, f64)> = (0..t.len())
                .filter_map(|i| Some((t.cell(i, rooms).as_num()?, t.cell(i, col).as_num()?)))
                .collect();
            LineFit::fit(&pts).ok_or_else(|| TableError::ImputationImpossible(name.to_string()))
        };
        Ok(Self {
            bathrooms: line_for(names::N_BATHROOMS)?,
            bedrooms: line_for(names::N_BEDROOMS)?,
        })
    }

    /// Fills missing rental income with 0, missing renovation year with the
    /// construction year, and missing bathroom/bedroom counts with the rounded,
    /// non-negative line prediction from the room count. Other cells are left
    /// untouched.
    pub fn apply(&self, t: &Table) -> Result<Table> {
        let income = t.require_column(names::RENTAL_INCOME)?;
        let renov = t.require_column(names::RENOVATION_YEAR)?;
        let built = t.require_column(names::CONSTRUCTION_YEAR)?;
        let baths = t.require_column(names::N_BATHROOMS)?;
        let beds = t.require_column(names::N_BEDROOMS)?;
        let rooms = t.require_column(names::N_ROOMS)?;

        let rows = t
            .rows()
            .iter()
            .map(|row| {
                let mut row = row.clone();
                if row[income].is_missing() {
                    row[income] = Cell::Num(0.0);
                }
                if row[renov].is_missing() {
                    row[renov] = row[built].clone();
                }
                if let Some(r) = row[rooms].as_num() {
                    for (col, line) in [(baths, &self.bathrooms), (beds, &self.bedrooms)] {
                        if row[col].is_missing() {
                            row[col] = Cell::Num(round_half_up(line.predict(r)).max(0.0));
                        }
                    }
                }
                row
            })
            .collect();
        Table::new(t.schema().to_vec(), rows, t.row_ids().to_vec())
    }
}

/// Fits the imputer on `t` and applies it to `t`.
pub fn impute(t: &Table) -> Result<Table> {
    Imputer::fit(t)?.apply(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::{ColumnKind, ColumnSpec};

    fn dedup_schema() -> Vec<ColumnSpec> {
        vec![
            ColumnSpec::new("price", ColumnKind::Target, "EUR"),
            ColumnSpec::new("postal_code", ColumnKind::Numeric, ""),
            ColumnSpec::new("property_type", ColumnKind::Nominal, ""),
            ColumnSpec::new("living_area", ColumnKind::Numeric, "m2"),
            ColumnSpec::new("plot_area", ColumnKind::Numeric, "m2"),
        ]
    }

    fn row(price: Option<f64>, plz: f64, ty: &str, area: f64, plot: f64) -> Vec<Cell> {
        vec![
            price.map_or(Cell::Missing, Cell::Num),
            Cell::Num(plz),
            Cell::Label(ty.into()),
            Cell::Num(area),
            Cell::Num(plot),
        ]
    }

    fn table(rows: Vec<Vec<Cell>>) -> Table {
        Table::from_rows(dedup_schema(), rows).unwrap()
    }

    #[test]
    fn plot_filter_boundary() {
        let t = table(vec![
            row(Some(1.0), 1.0, "a", 10.0, 29.9),
            row(Some(1.0), 1.0, "a", 10.0, 30.0),
            row(None, 1.0, "a", 10.0, 500.0),
            row(Some(2.0), 1.0, "a", 10.0, 31.0),
        ]);
        let out = filter_rows(&t, 30.0).unwrap();
        assert_eq!(out.row_ids(), &[1, 3]);
    }

    #[test]
    fn filter_requires_plot_column() {
        let schema = vec![ColumnSpec::new("price", ColumnKind::Target, "EUR")];
        let t = Table::from_rows(schema, vec![vec![Cell::Num(1.0)]]).unwrap();
        assert!(matches!(
            filter_rows(&t, 30.0),
            Err(TableError::MissingColumn(c)) if c == "plot_area"
        ));
    }

    #[test]
    fn dedup_examples() {
        let t = table(vec![
            row(Some(100000.0), 1.0, "h", 100.0, 50.0),
            row(Some(104000.0), 1.0, "h", 102.0, 50.0),
        ]);
        assert_eq!(dedup_near(&t, 0.05).unwrap().row_ids(), &[0]);

        let t = table(vec![
            row(Some(100000.0), 1.0, "h", 100.0, 50.0),
            row(Some(105000.0), 1.0, "h", 100.0, 50.0),
        ]);
        assert_eq!(dedup_near(&t, 0.05).unwrap().row_ids(), &[0]);

        let t = table(vec![
            row(Some(100000.0), 1.0, "h", 100.0, 50.0),
            row(Some(105001.0), 1.0, "h", 100.0, 50.0),
        ]);
        assert_eq!(dedup_near(&t, 0.05).unwrap().len(), 2);
    }

    fn brute_force_dedup(rows: &[(f64, f64, f64)], tol: f64) -> Vec<usize> {
        let mut kept: Vec<usize> = Vec::new();
        for i in 0..rows.len() {
            let near = |j: usize| {
                let (pi, ki, ai) = rows[i];
                let (pj, kj, aj) = rows[j];
                ki == kj
                    && (pi - pj).abs() / pi.min(pj) <= tol
                    && (ai - aj).abs() / ai.min(aj) <= tol
            };
            if !kept.iter().any(|&j| near(j)) {
                kept.push(i);
            }
        }
        kept
    }

    #[test]
    fn dedup_matches_pairwise_oracle() {
        // (price, postal code, area)
        let rows = vec![
            (200000.0, 10115.0, 100.0),
            (200000.0, 10117.0, 100.0),
            (201000.0, 10115.0, 101.0),
            (300000.0, 10115.0, 100.0),
            (200000.0, 10117.0, 130.0),
            (310000.0, 10115.0, 104.0),
            (199000.0, 10117.0, 99.0),
            (500000.0, 80331.0, 200.0),
            (500000.0, 80333.0, 200.0),
            (520000.0, 80331.0, 205.0),
        ];
        let t = table(
            rows.iter()
                .map(|&(p, k, a)| row(Some(p), k, "h", a, 100.0))
                .collect(),
        );
        let got: Vec<usize> = dedup_near(&t, 0.05)
            .unwrap()
            .row_ids()
            .iter()
            .map(|&id| id as usize)
            .collect();
        assert_eq!(got, brute_force_dedup(&rows, 0.05));
        // distinct postal codes with identical price and area survive
        assert!(got.contains(&7) && got.contains(&8));
    }

    #[test]
    fn dedup_is_idempotent() {
        let t = table(vec![
            row(Some(100.0), 1.0, "h", 10.0, 50.0),
            row(Some(103.0), 1.0, "h", 10.2, 50.0),
            row(Some(106.0), 1.0, "h", 10.4, 50.0),
            row(Some(109.0), 1.0, "h", 10.6, 50.0),
        ]);
        let once = dedup_near(&t, 0.05).unwrap();
        let twice = dedup_near(&once, 0.05).unwrap();
        assert_eq!(once, twice);
    }

    fn impute_schema() -> Vec<ColumnSpec> {
        [
            "rental_income",
            "renovation_year",
            "construction_year",
            "n_bathrooms",
            "n_bedrooms",
            "n_rooms",
        ]
        .iter()
        .map(|n| ColumnSpec::new(n, ColumnKind::Numeric, ""))
        .chain(std::iter::once(ColumnSpec::new(
            "price",
            ColumnKind::Target,
            "EUR",
        )))
        .collect()
    }

    fn num(v: Option<f64>) -> Cell {
        v.map_or(Cell::Missing, Cell::Num)
    }

    fn irow(inc: Option<f64>, ren: Option<f64>, built: f64, bath: Option<f64>, bed: Option<f64>, rooms: Option<f64>) -> Vec<Cell> {
        vec![num(inc), num(ren), Cell::Num(built), num(bath), num(bed), num(rooms), Cell::Num(1.0)]
    }

    #[test]
    fn imputation_rules() {
        let t = Table::from_rows(
            impute_schema(),
            vec![
                irow(Some(500.0), Some(2000.0), 1970.0, Some(1.0), Some(2.0), Some(4.0)),
                irow(Some(0.0), Some(2010.0), 1990.0, Some(2.0), Some(4.0), Some(8.0)),
                irow(None, None, 1980.0, None, None, Some(6.0)),
            ],
        )
        .unwrap();
        let out = impute(&t).unwrap();
        // rental income -> 0, renovation -> construction year
        assert_eq!(out.cell(2, 0), &Cell::Num(0.0));
        assert_eq!(out.cell(2, 1), &Cell::Num(1980.0));
        // bath line through (4,1),(8,2): 6 rooms -> 1.5 -> 2
        assert_eq!(out.cell(2, 3), &Cell::Num(2.0));
        // bed line through (4,2),(8,4): 6 rooms -> 3
        assert_eq!(out.cell(2, 4), &Cell::Num(3.0));
        // complete rows unchanged
        assert_eq!(out.row(0), t.row(0));
        assert_eq!(out.row(1), t.row(1));
    }

    #[test]
    fn imputed_counts_clamp_at_zero() {
        let t = Table::from_rows(
            impute_schema(),
            vec![
                irow(None, None, 1980.0, Some(1.0), Some(1.0), Some(4.0)),
                irow(None, None, 1980.0, Some(3.0), Some(3.0), Some(5.0)),
                irow(None, None, 1980.0, None, None, Some(1.0)),
            ],
        )
        .unwrap();
        let out = impute(&t).unwrap();
        assert_eq!(out.cell(2, 3), &Cell::Num(0.0));
    }

    #[test]
    fn no_room_counts_is_an_error() {
        let t = Table::from_rows(
            impute_schema(),
            vec![irow(None, None, 1980.0, None, None, None)],
        )
        .unwrap();
        assert!(matches!(impute(&t), Err(TableError::ImputationImpossible(_))));
    }

    #[test]
    fn half_up_rounding() {
        assert_eq!(round_half_up(1.5), 2.0);
        assert_eq!(round_half_up(2.5), 3.0);
        assert_eq!(round_half_up(2.49), 2.0);
        assert_eq!(round_half_up(-0.4), 0.0);
    }
}
