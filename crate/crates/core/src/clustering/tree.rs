use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::{check_finite, ClusterError, Result, FORMAT_VERSION};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", rename_all = "snake_case")]
pub enum TreeNode<T> {
    Split {
        column: usize,
        threshold: T,
        left: usize,
        right: usize,
    },
    Leaf {
        leaf_id: usize,
        count: usize,
        mean: T,
    },
}

/// Depth-limited regression tree whose leaves act as clusters. Leaves are
/// numbered left to right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TreeClusterModel<T> {
    pub format_version: u32,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub columns: Vec<String>,
    pub nodes: Vec<TreeNode<T>>,
    pub n_leaves: usize,
}

struct Builder<'a, T> {
    x: ArrayView2<'a, T>,
    y: &'a [T],
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<TreeNode<T>>,
    n_leaves: usize,
}

struct SplitChoice<T> {
    column: usize,
    threshold: T,
    gain: T,
}

impl<T: Scalar> Builder<'_, T> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let sum: T = idx.iter().map(|&i| self.y[i]).sum();
        let node = TreeNode::Leaf {
            leaf_id: self.n_leaves,
            count: idx.len(),
            mean: sum / T::of_usize(idx.len()),
        };
        self.n_leaves += 1;
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    /// Exhaustive search over columns and midpoints between adjacent distinct
    /// values, maximizing the drop in squared error. Ties keep the first
    /// candidate in (column, threshold) order.
    fn best_split(&self, idx: &[usize]) -> Option<SplitChoice<T>> {
        let n = idx.len();
        let mean = idx.iter().map(|&i| self.y[i]).sum::<T>() / T::of_usize(n);
        let total: T = idx.iter().map(|&i| self.y[i] - mean).sum();
        let base = total * total / T::of_usize(n);
        let mut best: Option<SplitChoice<T>> = None;
        let mut order = idx.to_vec();
        for col in 0..self.x.ncols() {
            order.sort_by(|&a, &b| {
                self.x[[a, col]]
                    .partial_cmp(&self.x[[b, col]])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let mut left_sum = T::zero();
            for pos in 0..n - 1 {
                left_sum += self.y[order[pos]] - mean;
                let nl = pos + 1;
                let nr = n - nl;
                let lo = self.x[[order[pos], col]];
                let hi = self.x[[order[pos + 1], col]];
                if lo == hi || nl < self.min_leaf || nr < self.min_leaf {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / T::of_usize(nl)
                    + right_sum * right_sum / T::of_usize(nr)
                    - base;
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mut threshold = (lo + hi) / T::lit(2.0);
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(SplitChoice {
                        column: col,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let first = self.y[idx[0]];
        let constant = idx.iter().all(|&i| self.y[i] == first);
        if depth >= self.max_depth || constant {
            return self.leaf(&idx);
        }
        let Some(split) = self.best_split(&idx) else {
            return self.leaf(&idx);
        };
        let (left, right): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.x[[i, split.column]] <= split.threshold);
        let slot = self.nodes.len();
        self.nodes.push(TreeNode::Split {
            column: split.column,
            threshold: split.threshold,
            left: 0,
            right: 0,
        });
        let l = self.grow(left, depth + 1);
        let r = self.grow(right, depth + 1);
        if let TreeNode::Split { left, right, .. } = &mut self.nodes[slot] {
            *left = l;
            *right = r;
        }
        slot
    }
}

/// Greedy variance-reduction tree on `x` against `y`. A node becomes a leaf
/// at `max_depth`, when its targets are constant, or when no split leaves at
/// least `min_leaf` rows on both sides.
pub fn tree_cluster_fit<T: Scalar>(
    x: ArrayView2<T>,
    columns: &[String],
    y: &[T],
    max_depth: usize,
    min_leaf: usize,
) -> Result<TreeClusterModel<T>> {
    if max_depth == 0 || min_leaf == 0 {
        return Err(ClusterError::InvalidParameter(
            "max_depth and min_leaf must be at least 1".into(),
        ));
    }
    if x.nrows() != y.len() || columns.len() != x.ncols() {
        return Err(ClusterError::DimensionMismatch {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    if x.nrows() < 2 * min_leaf {
        return Err(ClusterError::InvalidParameter(format!(
            "{} rows cannot hold two leaves of {min_leaf}",
            x.nrows()
        )));
    }
    check_finite(x)?;
    if !y.iter().all(|v| v.is_finite()) {
        return Err(ClusterError::NonFinite);
    }
    let mut b = Builder {
        x,
        y,
        max_depth,
        min_leaf,
        nodes: Vec::new(),
        n_leaves: 0,
    };
    b.grow((0..x.nrows()).collect(), 0);
    Ok(TreeClusterModel {
        format_version: FORMAT_VERSION,
        max_depth,
        min_leaf,
        columns: columns.to_vec(),
        nodes: b.nodes,
        n_leaves: b.n_leaves,
    })
}

impl<T: Scalar> TreeClusterModel<T> {
    /// Root-to-leaf traversal; values equal to a threshold go left.
    pub fn assign(&self, row: &[T]) -> Result<usize> {
        let mut node = 0;
        loop {
            match &self.nodes[node] {
                TreeNode::Leaf { leaf_id, .. } => return Ok(*leaf_id),
                TreeNode::Split {
                    column,
                    threshold,
                    left,
                    right,
                } => {
                    let v = row
                        .get(*column)
                        .copied()
                        .filter(|v| !v.is_nan())
                        .ok_or_else(|| ClusterError::MissingValue(self.columns[*column].clone()))?;
                    node = if v <= *threshold { *left } else { *right };
                }
            }
        }
    }

    /// Leaves in id order as `(count, mean)`.
    pub fn leaves(&self) -> Vec<(usize, T)> {
        let mut out = vec![(0, T::zero()); self.n_leaves];
        for n in &self.nodes {
            if let TreeNode::Leaf {
                leaf_id,
                count,
                mean,
            } = n
            {
                out[*leaf_id] = (*count, *mean);
            }
        }
        out
    }
}
