//! L1-penalized linear regression fitted by cyclic coordinate descent.
//!
//! Columns are standardized internally and the intercept is left unpenalized,
//! so the fitted intercept is always the mean of the training target.

use std::collections::BTreeMap;

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::Scaler;
use crate::rng::fold_partition;
use crate::Scalar;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum LinRegError {
    #[error("need at least 2 rows, found {0}")]
    TooFewRows(usize),
    #[error("lambda must be finite and non-negative")]
    InvalidLambda,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("expected {expected} values, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("lambda grid is empty")]
    EmptyGrid,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, LinRegError>;

/// Fitted lasso. Coefficients are per standardized unit of each column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    bound = "T: Scalar",
    into = "LinearModelRepr<T>",
    try_from = "LinearModelRepr<T>"
)]
pub struct LinearModel<T: Scalar> {
    pub format_version: u32,
    pub lambda: T,
    pub intercept: T,
    pub columns: Vec<String>,
    pub coefficients: Vec<T>,
    pub scaler: Scaler<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
struct LinearModelRepr<T> {
    format_version: u32,
    lambda: T,
    intercept: T,
    columns: Vec<String>,
    coefficients: BTreeMap<String, T>,
    means: Vec<T>,
    stds: Vec<T>,
}

impl<T: Scalar> From<LinearModel<T>> for LinearModelRepr<T> {
    fn from(m: LinearModel<T>) -> Self {
        Self {
            format_version: m.format_version,
            lambda: m.lambda,
            intercept: m.intercept,
            coefficients: m.columns.iter().cloned().zip(m.coefficients).collect(),
            columns: m.columns,
            means: m.scaler.means,
            stds: m.scaler.stds,
        }
    }
}

impl<T: Scalar> TryFrom<LinearModelRepr<T>> for LinearModel<T> {
    type Error = String;

    fn try_from(r: LinearModelRepr<T>) -> std::result::Result<Self, String> {
        if r.format_version > FORMAT_VERSION {
            return Err(format!(
                "linear model format_version {} is newer than supported {FORMAT_VERSION}",
                r.format_version
            ));
        }
        let p = r.columns.len();
        if r.means.len() != p || r.stds.len() != p || r.coefficients.len() != p {
            return Err("linear model column count mismatch".into());
        }
        let coefficients = r
            .columns
            .iter()
            .map(|c| r.coefficients.get(c).copied().ok_or_else(|| format!("no coefficient for \"{c}\"")))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self {
            format_version: r.format_version,
            lambda: r.lambda,
            intercept: r.intercept,
            columns: r.columns,
            coefficients,
            scaler: Scaler {
                means: r.means,
                stds: r.stds,
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iter: 10_000,
            tol: 1e-6,
        }
    }
}

#[inline]
pub fn soft_threshold<T: Scalar>(z: T, gamma: T) -> T {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        T::zero()
    }
}

/// Standardized design with its Gram matrix, reusable across penalties.
struct Problem<T> {
    n: usize,
    p: usize,
    z: Vec<T>,
    gram: Vec<T>,
    corr: Vec<T>,
    y_mean: T,
    y_centered: Vec<T>,
    scaler: Scaler<T>,
}

impl<T: Scalar> Problem<T> {
    fn new(x: ArrayView2<T>, y: &[T]) -> Result<Self> {
        let (n, p) = x.dim();
        if y.len() != n {
            return Err(LinRegError::DimensionMismatch {
                expected: n,
                found: y.len(),
            });
        }
        if n < 2 {
            return Err(LinRegError::TooFewRows(n));
        }
        if !x.iter().chain(y).all(|v| v.is_finite()) {
            return Err(LinRegError::NonFinite);
        }
        let scaler = Scaler::fit(x);
        let z = scaler.transform_flat(x);
        let y_mean = y.iter().copied().sum::<T>() / T::of_usize(n);
        let y_centered: Vec<T> = y.iter().map(|&v| v - y_mean).collect();
        let inv_n = T::one() / T::of_usize(n);
        let gram = (0..p * p)
            .into_par_iter()
            .map(|jk| {
                let (j, k) = (jk / p, jk % p);
                if k < j {
                    return T::zero();
                }
                (0..n).map(|i| z[i * p + j] * z[i * p + k]).sum::<T>() * inv_n
            })
            .collect::<Vec<T>>();
        let mut gram = gram;
        for j in 0..p {
            for k in 0..j {
                gram[j * p + k] = gram[k * p + j];
            }
        }
        let corr = (0..p)
            .map(|j| (0..n).map(|i| z[i * p + j] * y_centered[i]).sum::<T>() * inv_n)
            .collect();
        Ok(Self {
            n,
            p,
            z,
            gram,
            corr,
            y_mean,
            y_centered,
            scaler,
        })
    }

    fn lambda_max(&self) -> T {
        self.corr.iter().fold(T::zero(), |m, c| m.max(c.abs()))
    }

    fn objective(&self, beta: &[T], lambda: T) -> T {
        let mut ss = T::zero();
        for i in 0..self.n {
            let row = &self.z[i * self.p..(i + 1) * self.p];
            let mut fit = T::zero();
            for (zj, bj) in row.iter().zip(beta) {
                fit += *zj * *bj;
            }
            let r = self.y_centered[i] - fit;
            ss += r * r;
        }
        let l1: T = beta.iter().map(|b| b.abs()).sum();
        ss / (T::lit(2.0) * T::of_usize(self.n)) + lambda * l1
    }

    /// Cyclic coordinate descent from `beta`. `grad[j]` tracks
    /// `z_j'(y - Z beta)/n`, updated in O(p) per changed coordinate.
    fn solve(
        &self,
        lambda: T,
        beta: &mut [T],
        settings: SolverSettings,
        mut trace: Option<&mut Vec<T>>,
    ) -> usize {
        let p = self.p;
        let mut grad = self.corr.clone();
        for (k, &bk) in beta.iter().enumerate() {
            if bk != T::zero() {
                for j in 0..p {
                    grad[j] -= self.gram[j * p + k] * bk;
                }
            }
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(self.objective(beta, lambda));
        }
        let tol = T::lit(settings.tol);
        let mut sweeps = 0;
        while sweeps < settings.max_iter {
            sweeps += 1;
            let mut max_delta = T::zero();
            for j in 0..p {
                let gjj = self.gram[j * p + j];
                // standardized columns have unit diagonal; anything far below
                // is a constant column left with rounding noise
                if gjj < T::lit(1e-8) {
                    beta[j] = T::zero();
                    continue;
                }
                let old = beta[j];
                let new = soft_threshold(grad[j] + gjj * old, lambda) / gjj;
                let delta = new - old;
                if delta != T::zero() {
                    beta[j] = new;
                    for k in 0..p {
                        grad[k] -= self.gram[k * p + j] * delta;
                    }
                    max_delta = max_delta.max(delta.abs());
                }
            }
            if let Some(t) = trace.as_deref_mut() {
                t.push(self.objective(beta, lambda));
            }
            if max_delta < tol {
                break;
            }
        }
        sweeps
    }

    fn into_model(self, lambda: T, beta: Vec<T>, columns: &[String]) -> LinearModel<T> {
        LinearModel {
            format_version: FORMAT_VERSION,
            lambda,
            intercept: self.y_mean,
            columns: columns.to_vec(),
            coefficients: beta,
            scaler: self.scaler,
        }
    }
}

fn check_columns(p: usize, columns: &[String]) -> Result<()> {
    if columns.len() != p {
        return Err(LinRegError::DimensionMismatch {
            expected: p,
            found: columns.len(),
        });
    }
    Ok(())
}

fn check_lambda<T: Scalar>(lambda: T) -> Result<()> {
    if lambda.is_finite() && lambda >= T::zero() {
        Ok(())
    } else {
        Err(LinRegError::InvalidLambda)
    }
}

/// Minimizes `(1/2n)|y - b0 - Z b|^2 + lambda |b|_1` over standardized `Z`.
pub fn lasso_fit<T: Scalar>(
    x: ArrayView2<T>,
    columns: &[String],
    y: &[T],
    lambda: T,
    settings: SolverSettings,
) -> Result<LinearModel<T>> {
    check_columns(x.ncols(), columns)?;
    check_lambda(lambda)?;
    let problem = Problem::new(x, y)?;
    let mut beta = vec![T::zero(); problem.p];
    problem.solve(lambda, &mut beta, settings, None);
    Ok(problem.into_model(lambda, beta, columns))
}

/// As [`lasso_fit`], also returning the objective before the first sweep and
/// after every sweep.
pub fn lasso_fit_traced<T: Scalar>(
    x: ArrayView2<T>,
    columns: &[String],
    y: &[T],
    lambda: T,
    settings: SolverSettings,
) -> Result<(LinearModel<T>, Vec<T>)> {
    check_columns(x.ncols(), columns)?;
    check_lambda(lambda)?;
    let problem = Problem::new(x, y)?;
    let mut beta = vec![T::zero(); problem.p];
    let mut trace = Vec::new();
    problem.solve(lambda, &mut beta, settings, Some(&mut trace));
    Ok((problem.into_model(lambda, beta, columns), trace))
}

/// Smallest penalty at which every coefficient is zero.
pub fn lambda_max<T: Scalar>(x: ArrayView2<T>, y: &[T]) -> Result<T> {
    Ok(Problem::new(x, y)?.lambda_max())
}

/// `points` log-spaced penalties from `lambda_max` down to
/// `lambda_max * min_ratio`, largest first. A constant target gives `[0]`.
pub fn lambda_grid<T: Scalar>(
    x: ArrayView2<T>,
    y: &[T],
    points: usize,
    min_ratio: f64,
) -> Result<Vec<T>> {
    if points == 0 || !(min_ratio > 0.0 && min_ratio < 1.0) {
        return Err(LinRegError::InvalidParameter(
            "grid needs at least one point and a ratio in (0, 1)".into(),
        ));
    }
    let top = lambda_max(x, y)?.to_f64_lossy();
    if top <= 0.0 {
        return Ok(vec![T::zero()]);
    }
    if points == 1 {
        return Ok(vec![T::lit(top)]);
    }
    let step = min_ratio.ln() / (points - 1) as f64;
    Ok((0..points)
        .map(|i| T::lit(top * (step * i as f64).exp()))
        .collect())
}

/// Picks the grid value with the lowest pooled out-of-fold MAE. Ties within a
/// relative 1e-12 go to the larger penalty.
pub fn lasso_cv_lambda<T: Scalar>(
    x: ArrayView2<T>,
    y: &[T],
    lambda_grid: &[T],
    folds: usize,
    seed: u64,
    settings: SolverSettings,
) -> Result<T> {
    if lambda_grid.is_empty() {
        return Err(LinRegError::EmptyGrid);
    }
    for &l in lambda_grid {
        check_lambda(l)?;
    }
    if lambda_grid.len() == 1 {
        return Ok(lambda_grid[0]);
    }
    let n = x.nrows();
    if folds < 2 || folds > n {
        return Err(LinRegError::InvalidParameter(format!(
            "folds must lie in 2..={n}"
        )));
    }
    // descending order so each fold can warm-start from the sparser solution
    let mut order: Vec<usize> = (0..lambda_grid.len()).collect();
    order.sort_by(|&a, &b| lambda_grid[b].partial_cmp(&lambda_grid[a]).unwrap().then(a.cmp(&b)));
    let parts = fold_partition(n, folds, seed);
    let per_fold: Vec<Vec<T>> = parts
        .par_iter()
        .map(|test| {
            let mut in_test = vec![false; n];
            for &i in test {
                in_test[i] = true;
            }
            let train: Vec<usize> = (0..n).filter(|&i| !in_test[i]).collect();
            let xt = x.select(ndarray::Axis(0), &train);
            let yt: Vec<T> = train.iter().map(|&i| y[i]).collect();
            let problem = Problem::new(xt.view(), &yt)?;
            let mut beta = vec![T::zero(); problem.p];
            let mut abs_err = vec![T::zero(); lambda_grid.len()];
            for &g in &order {
                problem.solve(lambda_grid[g], &mut beta, settings, None);
                let model = LinearModel {
                    format_version: FORMAT_VERSION,
                    lambda: lambda_grid[g],
                    intercept: problem.y_mean,
                    columns: Vec::new(),
                    coefficients: beta.clone(),
                    scaler: problem.scaler.clone(),
                };
                abs_err[g] = test
                    .iter()
                    .map(|&i| (model.predict_unchecked(&x.row(i).to_vec()) - y[i]).abs())
                    .sum();
            }
            Ok(abs_err)
        })
        .collect::<Result<_>>()?;
    let pooled: Vec<T> = (0..lambda_grid.len())
        .map(|g| per_fold.iter().map(|f| f[g]).sum::<T>() / T::of_usize(n))
        .collect();
    let mut best = order[0];
    for &g in &order[1..] {
        let scale = pooled[best].abs().max(T::min_positive_value());
        if pooled[g] < pooled[best] - T::lit(1e-12) * scale {
            best = g;
        }
    }
    Ok(lambda_grid[best])
}

impl<T: Scalar> LinearModel<T> {
    pub fn n_cols(&self) -> usize {
        self.coefficients.len()
    }

    fn check_len(&self, row: &[T]) -> Result<()> {
        if row.len() != self.n_cols() {
            return Err(LinRegError::DimensionMismatch {
                expected: self.n_cols(),
                found: row.len(),
            });
        }
        Ok(())
    }

    /// Per-column terms `b_j * (x_j - mean_j) / std_j`.
    pub fn contributions(&self, row: &[T]) -> Result<Vec<T>> {
        self.check_len(row)?;
        Ok(self.terms(row).collect())
    }

    fn terms<'a>(&'a self, row: &'a [T]) -> impl Iterator<Item = T> + 'a {
        self.coefficients
            .iter()
            .enumerate()
            .map(move |(j, &b)| b * self.scaler.scale(j, row[j]))
    }

    fn predict_unchecked(&self, row: &[T]) -> T {
        let mut acc = self.intercept;
        for t in self.terms(row) {
            acc += t;
        }
        acc
    }

    /// Intercept plus the contributions, summed left to right.
    pub fn predict(&self, row: &[T]) -> Result<T> {
        self.check_len(row)?;
        Ok(self.predict_unchecked(row))
    }

    pub fn nonzero_count(&self) -> usize {
        self.coefficients.iter().filter(|b| **b != T::zero()).count()
    }

    /// Intercept and slopes on the original column scales.
    pub fn raw_coefficients(&self) -> (T, Vec<T>) {
        let slopes: Vec<T> = self
            .coefficients
            .iter()
            .zip(&self.scaler.stds)
            .map(|(&b, &s)| b / s)
            .collect();
        let shift: T = slopes.iter().zip(&self.scaler.means).map(|(&b, &m)| b * m).sum();
        (self.intercept - shift, slopes)
    }
}

pub fn lasso_predict<T: Scalar>(m: &LinearModel<T>, row: &[T]) -> Result<T> {
    m.predict(row)
}
