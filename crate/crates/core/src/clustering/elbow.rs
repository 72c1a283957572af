use ndarray::ArrayView2;
use rayon::prelude::*;

use super::kmeans::{best_of, distinct_rows, kmeanspp_extend, lloyd, run_restarts, Points};
use super::{check_finite, ClusterError, Result, Scaler};
use crate::rng::{rng_for, sub_seed};
use crate::Scalar;

const MAX_ITER: usize = 300;
const TOL: f64 = 1e-6;

/// Best-of-restarts WCSS for each k in `k_min..=k_max` on standardized
/// columns.
///
/// For every k after the first, one extra run starts from the best (k-1)
/// centroids plus a single k-means++ draw. Lloyd never raises WCSS, so that
/// run alone keeps the curve non-increasing.
pub fn elbow_curve<T: Scalar>(
    x: ArrayView2<T>,
    k_min: usize,
    k_max: usize,
    restarts: usize,
    seed: u64,
) -> Result<Vec<(usize, T)>> {
    if k_min == 0 || k_min > k_max || restarts == 0 {
        return Err(ClusterError::InvalidParameter(format!(
            "need 1 <= k_min <= k_max and restarts >= 1 (got {k_min}..={k_max}, {restarts})"
        )));
    }
    check_finite(x)?;
    let distinct = distinct_rows(x);
    if distinct < k_max {
        return Err(ClusterError::Degenerate { k: k_max, distinct });
    }
    let scaler = Scaler::fit(x);
    let flat = scaler.transform_flat(x);
    let pts = Points {
        data: &flat,
        n: x.nrows(),
        d: x.ncols(),
    };
    let mut curve = Vec::new();
    let mut previous: Option<Vec<Vec<T>>> = None;
    for k in k_min..=k_max {
        let k_seed = sub_seed(seed, k as u64);
        let mut runs = run_restarts(&pts, k, restarts, MAX_ITER, TOL, k_seed);
        if let Some(prev) = previous.take() {
            let mut rng = rng_for(k_seed, u64::MAX);
            let init = kmeanspp_extend(&pts, prev, k, &mut rng);
            runs.push(lloyd(&pts, init, MAX_ITER, TOL));
        }
        let best = best_of(runs);
        curve.push((k, best.wcss));
        previous = Some(best.centroids);
    }
    Ok(curve)
}

/// Knee of a WCSS curve: the point farthest below the chord joining its
/// endpoints. Ties go to the smaller k. Needs at least three points.
pub fn knee_by_chord<T: Scalar>(curve: &[(usize, T)]) -> Option<usize> {
    if curve.len() < 3 {
        return None;
    }
    let (k0, w0) = (curve[0].0 as f64, curve[0].1.to_f64_lossy());
    let (k1, w1) = {
        let last = curve[curve.len() - 1];
        (last.0 as f64, last.1.to_f64_lossy())
    };
    let slope = (w1 - w0) / (k1 - k0);
    curve
        .par_iter()
        .map(|&(k, w)| (k, w0 + slope * (k as f64 - k0) - w.to_f64_lossy()))
        .collect::<Vec<_>>()
        .into_iter()
        .fold(None, |best: Option<(usize, f64)>, (k, gap)| match best {
            Some((_, g)) if g >= gap => best,
            _ => Some((k, gap)),
        })
        .map(|(k, _)| k)
}
