//! Segmentation algorithms: k-means, regression-tree leaves, KNN price
//! binning, and the elbow diagnostic.

mod elbow;
mod kmeans;
mod knn_bin;
mod tree;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Scalar;

pub use elbow::{elbow_curve, knee_by_chord};
pub use kmeans::{kmeans_fit, KMeansConfig, KMeansFit, KMeansModel};
pub use knn_bin::{knn_bin_cluster, KnnBinModel};
pub use tree::{tree_cluster_fit, TreeClusterModel, TreeNode};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("need at least {k} distinct points, found {distinct}")]
    Degenerate { k: usize, distinct: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("column \"{0}\" is not a model feature")]
    UnknownColumn(String),
    #[error("expected {expected} values, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value in input")]
    NonFinite,
    #[error("value for split column \"{0}\" is missing")]
    MissingValue(String),
}

pub type Result<T> = std::result::Result<T, ClusterError>;

/// Per-column standardization to zero mean and unit variance. Constant
/// columns get a unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Scaler<T> {
    pub means: Vec<T>,
    pub stds: Vec<T>,
}

impl<T: Scalar> Scaler<T> {
    pub fn fit(x: ndarray::ArrayView2<T>) -> Self {
        let (means, stds) = x
            .columns()
            .into_iter()
            .map(|c| {
                let (m, s) = crate::scalar::mean_std(c.iter().copied());
                (m, if s > T::zero() { s } else { T::one() })
            })
            .unzip();
        Self { means, stds }
    }

    #[inline]
    pub fn scale(&self, j: usize, v: T) -> T {
        (v - self.means[j]) / self.stds[j]
    }

    pub fn transform_row(&self, row: &[T]) -> Vec<T> {
        row.iter().enumerate().map(|(j, &v)| self.scale(j, v)).collect()
    }

    /// Row-major flattened standardized copy of `x`.
    pub fn transform_flat(&self, x: ndarray::ArrayView2<T>) -> Vec<T> {
        let mut out = Vec::with_capacity(x.len());
        for row in x.rows() {
            for (j, &v) in row.iter().enumerate() {
                out.push(self.scale(j, v));
            }
        }
        out
    }
}

pub(crate) fn check_finite<T: Scalar>(x: ndarray::ArrayView2<T>) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ClusterError::NonFinite)
    }
}
