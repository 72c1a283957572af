use ndarray::ArrayView2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_finite, ClusterError, Result, Scaler, FORMAT_VERSION};
use crate::rng::rng_for;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KMeansConfig {
    pub k: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 2,
            restarts: 10,
            max_iter: 300,
            tol: 1e-6,
            seed: 0,
        }
    }
}

/// Fitted k-means clusterer. Centroids live in standardized feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct KMeansModel<T> {
    pub format_version: u32,
    pub k: usize,
    pub centroids: Vec<Vec<T>>,
    pub feature_columns: Vec<String>,
    pub scaler: Scaler<T>,
    pub wcss: T,
    pub seed: u64,
}

/// A fit together with its training assignments and the WCSS recorded after
/// every assignment step of the winning restart.
#[derive(Debug, Clone)]
pub struct KMeansFit<T> {
    pub model: KMeansModel<T>,
    pub labels: Vec<usize>,
    pub history: Vec<T>,
}

pub(crate) struct Points<'a, T> {
    pub data: &'a [T],
    pub n: usize,
    pub d: usize,
}

impl<T: Scalar> Points<'_, T> {
    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.d..(i + 1) * self.d]
    }
}

#[inline]
pub(crate) fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (x, y) in a.iter().zip(b) {
        let d = *x - *y;
        s += d * d;
    }
    s
}

/// Index of the nearest centroid; ties go to the lowest index.
#[inline]
pub(crate) fn nearest<T: Scalar>(p: &[T], centroids: &[Vec<T>]) -> (usize, T) {
    let mut best = 0;
    let mut best_d = sq_dist(p, &centroids[0]);
    for (c, cent) in centroids.iter().enumerate().skip(1) {
        let d = sq_dist(p, cent);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    (best, best_d)
}

/// Extends `centroids` to `k` entries by D² sampling (k-means++).
pub(crate) fn kmeanspp_extend<T: Scalar, R: Rng>(
    pts: &Points<T>,
    mut centroids: Vec<Vec<T>>,
    k: usize,
    rng: &mut R,
) -> Vec<Vec<T>> {
    if centroids.is_empty() {
        let first = rng.random_range(0..pts.n);
        centroids.push(pts.row(first).to_vec());
    }
    let mut d2: Vec<f64> = (0..pts.n)
        .map(|i| nearest(pts.row(i), &centroids).1.to_f64_lossy())
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc >= target {
                    chosen = Some(i);
                    break;
                }
            }
            chosen.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            rng.random_range(0..pts.n)
        };
        let c = pts.row(pick).to_vec();
        for (i, slot) in d2.iter_mut().enumerate() {
            let d = sq_dist(pts.row(i), &c).to_f64_lossy();
            if d < *slot {
                *slot = d;
            }
        }
        centroids.push(c);
    }
    centroids
}

pub(crate) struct LloydOutcome<T> {
    pub centroids: Vec<Vec<T>>,
    pub labels: Vec<usize>,
    pub wcss: T,
    pub history: Vec<T>,
}

fn assign_all<T: Scalar>(pts: &Points<T>, centroids: &[Vec<T>]) -> (Vec<usize>, T) {
    let mut labels = Vec::with_capacity(pts.n);
    let mut wcss = T::zero();
    for i in 0..pts.n {
        let (c, d) = nearest(pts.row(i), centroids);
        labels.push(c);
        wcss += d;
    }
    (labels, wcss)
}

fn update_centroids<T: Scalar>(
    pts: &Points<T>,
    labels: &mut [usize],
    k: usize,
) -> Vec<Vec<T>> {
    let mut sums = vec![vec![T::zero(); pts.d]; k];
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, &v) in sums[l].iter_mut().zip(pts.row(i)) {
            *s += v;
        }
    }
    let mut centroids: Vec<Vec<T>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| {
            if c == 0 {
                s
            } else {
                let n = T::of_usize(c);
                s.into_iter().map(|v| v / n).collect()
            }
        })
        .collect();
    // Re-seed empty clusters at the point farthest from its own centroid.
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let mut far = None;
        let mut far_d = T::neg_infinity();
        for (i, &l) in labels.iter().enumerate() {
            if counts[l] < 2 {
                continue;
            }
            let d = sq_dist(pts.row(i), &centroids[l]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let Some(i) = far else { break };
        counts[labels[i]] -= 1;
        labels[i] = empty;
        counts[empty] = 1;
        centroids[empty] = pts.row(i).to_vec();
    }
    centroids
}

/// Lloyd iterations from `init` until the largest centroid shift drops
/// below `tol`, assignments stop changing, or `max_iter` is reached. A step
/// that would raise WCSS is rejected and ends the run.
pub(crate) fn lloyd<T: Scalar>(
    pts: &Points<T>,
    init: Vec<Vec<T>>,
    max_iter: usize,
    tol: f64,
) -> LloydOutcome<T> {
    let k = init.len();
    let mut centroids = init;
    let (mut labels, mut wcss) = assign_all(pts, &centroids);
    let mut history = vec![wcss];
    for _ in 0..max_iter {
        let mut moved_labels = labels.clone();
        let next = update_centroids(pts, &mut moved_labels, k);
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b).sqrt().to_f64_lossy())
            .fold(0.0, f64::max);
        let (next_labels, next_wcss) = assign_all(pts, &next);
        if next_wcss > wcss {
            break;
        }
        let changed = next_labels != labels;
        centroids = next;
        labels = next_labels;
        wcss = next_wcss;
        history.push(wcss);
        if !changed || shift < tol {
            break;
        }
    }
    LloydOutcome {
        centroids,
        labels,
        wcss,
        history,
    }
}

pub(crate) fn distinct_rows<T: Scalar>(x: ArrayView2<T>) -> usize {
    let mut keys: Vec<Vec<u64>> = x
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.to_f64_lossy().to_bits()).collect())
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

/// Best-of-restarts; ties in WCSS go to the lowest restart index.
pub(crate) fn best_of<T: Scalar>(runs: Vec<LloydOutcome<T>>) -> LloydOutcome<T> {
    let mut iter = runs.into_iter();
    let mut best = iter.next().expect("at least one restart");
    for run in iter {
        if run.wcss < best.wcss {
            best = run;
        }
    }
    best
}

pub(crate) fn run_restarts<T: Scalar>(
    pts: &Points<T>,
    k: usize,
    restarts: usize,
    max_iter: usize,
    tol: f64,
    seed: u64,
) -> Vec<LloydOutcome<T>> {
    (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_for(seed, r as u64);
            let init = kmeanspp_extend(pts, Vec::new(), k, &mut rng);
            lloyd(pts, init, max_iter, tol)
        })
        .collect()
}

/// k-means on standardized columns with k-means++ seeding and
/// best-of-`restarts` selection. Restart `r` draws from sub-seed
/// `(seed, r)`, so the result does not depend on the thread count.
pub fn kmeans_fit<T: Scalar>(
    x: ArrayView2<T>,
    feature_columns: &[String],
    cfg: &KMeansConfig,
) -> Result<KMeansFit<T>> {
    if cfg.k == 0 || cfg.restarts == 0 {
        return Err(ClusterError::InvalidParameter(
            "k and restarts must be at least 1".into(),
        ));
    }
    if feature_columns.len() != x.ncols() {
        return Err(ClusterError::DimensionMismatch {
            expected: x.ncols(),
            found: feature_columns.len(),
        });
    }
    check_finite(x)?;
    let distinct = distinct_rows(x);
    if distinct < cfg.k {
        return Err(ClusterError::Degenerate { k: cfg.k, distinct });
    }
    let scaler = Scaler::fit(x);
    let flat = scaler.transform_flat(x);
    let pts = Points {
        data: &flat,
        n: x.nrows(),
        d: x.ncols(),
    };
    let runs = run_restarts(&pts, cfg.k, cfg.restarts, cfg.max_iter, cfg.tol, cfg.seed);
    let best = best_of(runs);
    Ok(KMeansFit {
        model: KMeansModel {
            format_version: FORMAT_VERSION,
            k: cfg.k,
            centroids: best.centroids,
            feature_columns: feature_columns.to_vec(),
            scaler,
            wcss: best.wcss,
            seed: cfg.seed,
        },
        labels: best.labels,
        history: best.history,
    })
}

impl<T: Scalar> KMeansModel<T> {
    pub fn n_features(&self) -> usize {
        self.feature_columns.len()
    }

    /// Nearest centroid over all features, after scaling.
    pub fn assign(&self, row: &[T]) -> Result<usize> {
        if row.len() != self.n_features() {
            return Err(ClusterError::DimensionMismatch {
                expected: self.n_features(),
                found: row.len(),
            });
        }
        Ok(nearest(&self.scaler.transform_row(row), &self.centroids).0)
    }

    /// Nearest centroid using only the `subspace` dimensions. `values` holds
    /// one raw value per subspace column, in the same order.
    pub fn assign_subspace(&self, values: &[T], subspace: &[&str]) -> Result<usize> {
        if values.len() != subspace.len() {
            return Err(ClusterError::DimensionMismatch {
                expected: subspace.len(),
                found: values.len(),
            });
        }
        let dims = subspace
            .iter()
            .map(|name| {
                self.feature_columns
                    .iter()
                    .position(|c| c == name)
                    .ok_or_else(|| ClusterError::UnknownColumn(name.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let scaled: Vec<T> = dims
            .iter()
            .zip(values)
            .map(|(&j, &v)| self.scaler.scale(j, v))
            .collect();
        let projected: Vec<Vec<T>> = self
            .centroids
            .iter()
            .map(|c| dims.iter().map(|&j| c[j]).collect())
            .collect();
        Ok(nearest(&scaled, &projected).0)
    }

    pub fn assign_matrix(&self, x: ArrayView2<T>) -> Result<Vec<usize>> {
        x.rows()
            .into_iter()
            .map(|r| self.assign(&r.to_vec()))
            .collect()
    }

    /// WCSS of `x` under `labels`, recomputed from the stored centroids.
    pub fn wcss_of(&self, x: ArrayView2<T>, labels: &[usize]) -> T {
        let mut total = T::zero();
        for (row, &l) in x.rows().into_iter().zip(labels) {
            total += sq_dist(&self.scaler.transform_row(&row.to_vec()), &self.centroids[l]);
        }
        total
    }
}
