use serde::{Deserialize, Serialize};

use super::{ClusterError, Result};
use crate::Scalar;

/// Location-only price regressor whose predictions are cut into
/// equal-frequency bins; the bin index is the cluster id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct KnnBinModel<T> {
    pub n_neighbors: usize,
    /// Training rows as `[lat, lon, price]`.
    pub train: Vec<[T; 3]>,
    /// Strictly increasing interior cut points on the predicted price.
    pub bin_edges: Vec<T>,
}

impl<T: Scalar> KnnBinModel<T> {
    pub fn fit(train: &[[T; 3]], n_neighbors: usize, n_bins: usize) -> Result<Self> {
        if n_neighbors == 0 || n_neighbors > train.len() {
            return Err(ClusterError::InvalidParameter(format!(
                "n_neighbors must lie in 1..={}",
                train.len()
            )));
        }
        if n_bins < 2 {
            return Err(ClusterError::InvalidParameter("n_bins must be at least 2".into()));
        }
        if train.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ClusterError::NonFinite);
        }
        let mut model = Self {
            n_neighbors,
            train: train.to_vec(),
            bin_edges: Vec::new(),
        };
        let mut preds: Vec<T> = train
            .iter()
            .map(|p| model.predict_price(p[0], p[1]))
            .collect();
        preds.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = preds.len();
        let mut edges: Vec<T> = Vec::new();
        for b in 1..n_bins {
            let pos = b * n / n_bins;
            if pos == 0 || pos >= n {
                continue;
            }
            let edge = (preds[pos - 1] + preds[pos]) / T::lit(2.0);
            if edges.last().is_none_or(|&last| edge > last) {
                edges.push(edge);
            }
        }
        model.bin_edges = edges;
        Ok(model)
    }

    /// Mean price of the `n_neighbors` nearest training rows by Euclidean
    /// distance in (lat, lon); distance ties go to the lower training index.
    pub fn predict_price(&self, lat: T, lon: T) -> T {
        let mut d: Vec<(T, usize)> = self
            .train
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let a = p[0] - lat;
                let b = p[1] - lon;
                (a * a + b * b, i)
            })
            .collect();
        let k = self.n_neighbors;
        let cmp = |a: &(T, usize), b: &(T, usize)| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1));
        d.select_nth_unstable_by(k - 1, cmp);
        let mut nearest = d[..k].to_vec();
        nearest.sort_by(cmp);
        nearest.iter().map(|&(_, i)| self.train[i][2]).sum::<T>() / T::of_usize(k)
    }

    pub fn bin_of(&self, price: T) -> usize {
        self.bin_edges.iter().filter(|&&e| price > e).count()
    }

    pub fn assign(&self, lat: T, lon: T) -> usize {
        self.bin_of(self.predict_price(lat, lon))
    }
}

/// Fits a [`KnnBinModel`] on `train` and returns the cluster of each query.
pub fn knn_bin_cluster<T: Scalar>(
    train: &[[T; 3]],
    n_neighbors: usize,
    n_bins: usize,
    queries: &[[T; 2]],
) -> Result<Vec<usize>> {
    use rayon::prelude::*;
    let model = KnnBinModel::fit(train, n_neighbors, n_bins)?;
    Ok(queries.par_iter().map(|q| model.assign(q[0], q[1])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_neighbor_reproduces_own_price() {
        let train = [[50.0, 10.0, 1.0], [51.0, 10.0, 2.0], [52.0, 11.0, 3.0]];
        let m = KnnBinModel::fit(&train, 1, 2).unwrap();
        for p in &train {
            assert_eq!(m.predict_price(p[0], p[1]), p[2]);
        }
    }

    #[test]
    fn two_neighbor_means_match_brute_force() {
        let train = [
            [0.0f64, 0.0, 100.0],
            [1.0, 0.0, 200.0],
            [0.0, 3.0, 300.0],
            [5.0, 5.0, 400.0],
        ];
        let m = KnnBinModel::fit(&train, 2, 2).unwrap();
        for q in &train {
            let mut d: Vec<(f64, f64)> = train
                .iter()
                .map(|p| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2), p[2]))
                .collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let expected = (d[0].1 + d[1].1) / 2.0;
            assert_eq!(m.predict_price(q[0], q[1]), expected);
        }
        // hand values: (0,0) -> {(0,0),(1,0)} = 150, (5,5) -> {(5,5),(0,3)} = 350
        assert_eq!(m.predict_price(0.0, 0.0), 150.0);
        assert_eq!(m.predict_price(5.0, 5.0), 350.0);
    }

    #[test]
    fn price_regimes_become_bins() {
        let mut train = Vec::new();
        for i in 0..20 {
            let j = i as f64 * 0.01;
            train.push([48.0 + j, 11.0, 100_000.0 + 1000.0 * j]);
            train.push([52.5 + j, 13.4, 500_000.0 + 1000.0 * j]);
        }
        let queries: Vec<[f64; 2]> = train.iter().map(|p| [p[0], p[1]]).collect();
        let ids = knn_bin_cluster(&train, 5, 2, &queries).unwrap();
        for (p, id) in train.iter().zip(&ids) {
            assert_eq!(*id, usize::from(p[2] > 300_000.0));
        }
    }

    #[test]
    fn preconditions() {
        let train = [[0.0, 0.0, 1.0]];
        assert!(KnnBinModel::fit(&train, 2, 2).is_err());
        assert!(KnnBinModel::fit(&train, 1, 1).is_err());
    }
}
