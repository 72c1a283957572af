//! Error metrics, seeded k-fold cross-validation of whole pipelines, and the
//! eight-cell approach comparison.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::{DefaultHasher, Hash, Hasher};

use rayon::prelude::*;
use thiserror::Error;

use crate::pipeline::{fit_pipeline, Approach, ModelKind, PipelineConfig, PipelineError};
use crate::rng::fold_partition;
use crate::tabular::{Table, TableError};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction and actual lengths differ: {pred} vs {actual}")]
    LengthMismatch { pred: usize, actual: usize },
    #[error("no values to score")]
    Empty,
    #[error("need at least 2 folds and no more folds than rows (folds {folds}, rows {rows})")]
    InvalidFolds { folds: usize, rows: usize },
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: PipelineError,
    },
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("inconsistent metrics: {0}")]
    Inconsistent(String),
    #[error("cells saw different fold splits")]
    FoldMismatch,
}

impl EvalError {
    pub fn is_config(&self) -> bool {
        match self {
            EvalError::InvalidFolds { .. } => true,
            EvalError::Fold { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, EvalError>;

fn check_lengths<T>(pred: &[T], actual: &[T]) -> Result<()> {
    if pred.len() != actual.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            actual: actual.len(),
        });
    }
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

pub fn mae<T: Scalar>(pred: &[T], actual: &[T]) -> Result<T> {
    check_lengths(pred, actual)?;
    let mut s = T::zero();
    for (p, a) in pred.iter().zip(actual) {
        s += (*p - *a).abs();
    }
    Ok(s / T::of_usize(pred.len()))
}

pub fn rmse<T: Scalar>(pred: &[T], actual: &[T]) -> Result<T> {
    check_lengths(pred, actual)?;
    let mut s = T::zero();
    for (p, a) in pred.iter().zip(actual) {
        let d = *p - *a;
        s += d * d;
    }
    Ok((s / T::of_usize(pred.len())).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldMetrics {
    pub fold: usize,
    pub mae_eur: f64,
    pub rmse_eur: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMetrics {
    pub fold: usize,
    pub segment: usize,
    pub stage1: usize,
    pub mae_eur: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mae_eur: f64,
    pub rmse_eur: f64,
    pub n: usize,
    pub folds: Vec<FoldMetrics>,
    pub segments: Vec<SegmentMetrics>,
}

/// Relative slack for comparisons between quantities that are equal in exact
/// arithmetic.
const ROUNDING: f64 = 1e-12;

impl MetricsReport {
    /// Builds a report and checks `rmse >= mae >= 0` for the pooled and every
    /// fold entry.
    pub fn new(
        mae_eur: f64,
        rmse_eur: f64,
        n: usize,
        folds: Vec<FoldMetrics>,
        segments: Vec<SegmentMetrics>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(EvalError::Empty);
        }
        let entries = std::iter::once((mae_eur, rmse_eur)).chain(folds.iter().map(|f| (f.mae_eur, f.rmse_eur)));
        for (m, r) in entries {
            if !(m >= 0.0 && r >= m * (1.0 - ROUNDING) && r.is_finite()) {
                return Err(EvalError::Inconsistent(format!("mae {m}, rmse {r}")));
            }
        }
        Ok(Self {
            mae_eur,
            rmse_eur,
            n,
            folds,
            segments,
        })
    }

    /// Pools per-fold results; pooled MAE is the sample-weighted mean of fold
    /// MAEs.
    pub fn from_folds(folds: Vec<FoldMetrics>, segments: Vec<SegmentMetrics>) -> Result<Self> {
        let n: usize = folds.iter().map(|f| f.n).sum();
        if n == 0 {
            return Err(EvalError::Empty);
        }
        let nf = n as f64;
        let mae_eur = folds.iter().map(|f| f.mae_eur * f.n as f64).sum::<f64>() / nf;
        let mse = folds.iter().map(|f| f.rmse_eur * f.rmse_eur * f.n as f64).sum::<f64>() / nf;
        Self::new(mae_eur, mse.sqrt(), n, folds, segments)
    }
}

/// Order-sensitive digest of a fold partition.
pub fn fold_hash(folds: &[Vec<usize>]) -> u64 {
    let mut h = DefaultHasher::new();
    folds.hash(&mut h);
    h.finish()
}

fn actual_prices(t: &Table) -> Result<Vec<f64>> {
    let target = t.require_target()?;
    (0..t.len())
        .map(|i| {
            t.cell(i, target).as_num().ok_or_else(|| {
                EvalError::Table(TableError::MissingCell {
                    row_id: t.row_ids()[i],
                    column: t.schema()[target].name.clone(),
                })
            })
        })
        .collect()
}

fn check_folds(n: usize, folds: usize) -> Result<()> {
    if folds < 2 || folds > n {
        return Err(EvalError::InvalidFolds { folds, rows: n });
    }
    Ok(())
}

/// Fits on each training remainder and scores the held-out fold. Folds run
/// in parallel and are merged in fold order.
pub fn evaluate_on_folds(t: &Table, cfg: &PipelineConfig, folds: &[Vec<usize>]) -> Result<MetricsReport> {
    let actual = actual_prices(t)?;
    let n = t.len();
    let results = folds
        .par_iter()
        .enumerate()
        .map(|(f, test_idx)| {
            let mut in_test = vec![false; n];
            for &i in test_idx {
                in_test[i] = true;
            }
            let train_idx: Vec<usize> = (0..n).filter(|&i| !in_test[i]).collect();
            let wrap = |source| EvalError::Fold { fold: f, source };
            let model = fit_pipeline(&t.select_rows(&train_idx), cfg).map_err(wrap)?;
            let routed = model.predict_table(&t.select_rows(test_idx)).map_err(wrap)?;
            let pred: Vec<f64> = routed.iter().map(|(_, p)| *p).collect();
            let act: Vec<f64> = test_idx.iter().map(|&i| actual[i]).collect();
            let fold = FoldMetrics {
                fold: f,
                mae_eur: mae(&pred, &act)?,
                rmse_eur: rmse(&pred, &act)?,
                n: pred.len(),
            };
            let mut by_segment: HashMap<usize, (usize, f64, usize)> = HashMap::new();
            for ((r, p), a) in routed.iter().zip(&act) {
                let e = by_segment.entry(r.segment).or_insert((r.stage1, 0.0, 0));
                e.1 += (p - a).abs();
                e.2 += 1;
            }
            let mut segments: Vec<SegmentMetrics> = by_segment
                .into_iter()
                .map(|(segment, (stage1, abs, count))| SegmentMetrics {
                    fold: f,
                    segment,
                    stage1,
                    mae_eur: abs / count as f64,
                    n: count,
                })
                .collect();
            segments.sort_by_key(|s| s.segment);
            Ok((fold, segments))
        })
        .collect::<Result<Vec<_>>>()?;
    let (folds, segments): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    MetricsReport::from_folds(folds, segments.into_iter().flatten().collect())
}

/// Seeded k-fold evaluation. `t` must already be cleaned and geocoded;
/// imputation, encoding and scaling are learned inside each training fold.
pub fn kfold_evaluate(t: &Table, cfg: &PipelineConfig, folds: usize, seed: u64) -> Result<MetricsReport> {
    check_folds(t.len(), folds)?;
    evaluate_on_folds(t, cfg, &fold_partition(t.len(), folds, seed))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellReport {
    pub model_kind: ModelKind,
    pub approach: Approach,
    pub config: PipelineConfig,
    pub fold_hash: u64,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub cells: Vec<CellReport>,
}

/// Runs every (model kind, approach) pair on one shared fold split.
pub fn compare_approaches(t: &Table, base: &PipelineConfig, folds: usize, seed: u64) -> Result<Comparison> {
    check_folds(t.len(), folds)?;
    let split = fold_partition(t.len(), folds, seed);
    let hash = fold_hash(&split);
    let mut cells = Vec::with_capacity(8);
    for kind in ModelKind::ALL {
        for approach in Approach::ALL {
            let config = PipelineConfig {
                approach,
                model_kind: kind,
                ..base.clone()
            };
            let report = evaluate_on_folds(t, &config, &split)?;
            cells.push(CellReport {
                model_kind: kind,
                approach,
                config,
                fold_hash: fold_hash(&split),
                report,
            });
        }
    }
    if cells.iter().any(|c| c.fold_hash != hash) {
        return Err(EvalError::FoldMismatch);
    }
    Ok(Comparison { cells })
}

fn stage_labels(cfg: &PipelineConfig) -> (String, String) {
    let s1 = match cfg.approach {
        Approach::Global => "none".to_string(),
        _ => format!("kmeans(k={})", cfg.stage1.k),
    };
    let s2 = match cfg.approach {
        Approach::TwoStageKmeans => format!("kmeans(k={})", cfg.stage2.k),
        Approach::TwoStageTree => format!("tree(depth={})", cfg.stage2.max_depth),
        _ => "none".to_string(),
    };
    (s1, s2)
}

pub const CSV_HEADER: &str = "model,approach,stage1,stage2,mae_eur,rmse_eur,n,fold";

impl Comparison {
    pub fn cell(&self, kind: ModelKind, approach: Approach) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.model_kind == kind && c.approach == approach)
    }

    /// One row per fold and a pooled `fold=all` row for every cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{CSV_HEADER}").unwrap();
        for c in &self.cells {
            let (s1, s2) = stage_labels(&c.config);
            let prefix = format!("{},{},{s1},{s2}", c.model_kind.as_str(), c.approach.as_str());
            for f in &c.report.folds {
                writeln!(out, "{prefix},{:.2},{:.2},{},{}", f.mae_eur, f.rmse_eur, f.n, f.fold).unwrap();
            }
            let r = &c.report;
            writeln!(out, "{prefix},{:.2},{:.2},{},all", r.mae_eur, r.rmse_eur, r.n).unwrap();
        }
        out
    }
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    check_lengths(a, b)?;
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let pairs = |c: u64| (c * c.saturating_sub(1) / 2) as f64;
    let index: f64 = table.values().map(|&c| pairs(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| pairs(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| pairs(c)).sum();
    let total = pairs(a.len() as u64);
    let expected = sum_a * sum_b / total.max(1.0);
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}
