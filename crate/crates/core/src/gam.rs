//! Additive model trained by cyclic boosting of per-feature binned shapes.
//!
//! Each boosting step fits the current residuals of one feature with the best
//! piecewise-constant function of at most `max_leaves` contiguous segments
//! over that feature's bins, found by exhaustive dynamic programming.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{shuffled_indices, sub_seed};
use crate::Scalar;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum GamError {
    #[error("need at least {min} rows, found {found}")]
    TooFewRows { min: usize, found: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("non-finite value in input")]
    NonFinite,
    #[error("expected {expected} values, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("unknown feature \"{0}\"")]
    UnknownFeature(String),
}

pub type Result<T> = std::result::Result<T, GamError>;

pub const MIN_ROWS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EbmConfig {
    pub max_bins: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub max_leaves: usize,
    /// Epochs without validation improvement before stopping. Ignored when
    /// `validation_fraction` is 0.
    pub early_stop_patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
    /// Number of independently split fits whose shapes are averaged.
    pub outer_bags: usize,
}

impl Default for EbmConfig {
    fn default() -> Self {
        Self {
            max_bins: 256,
            learning_rate: 0.01,
            epochs: 2000,
            max_leaves: 3,
            early_stop_patience: 50,
            validation_fraction: 0.15,
            seed: 0,
            outer_bags: 1,
        }
    }
}

impl EbmConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GamError::InvalidConfig(m.into()));
        if self.max_bins < 2 || self.max_bins > u16::MAX as usize {
            return bad("max_bins must lie in 2..=65535");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must lie in (0, 1]");
        }
        if self.max_leaves < 1 {
            return bad("max_leaves must be at least 1");
        }
        if !(0.0..0.5).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 0.5)");
        }
        if self.outer_bags < 1 {
            return bad("outer_bags must be at least 1");
        }
        Ok(())
    }
}

/// Bins of one feature. A value `v` falls in bin `#{cut : cut < v}`, so values
/// outside the training range land in the first or last bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
pub struct FeatureBins<T> {
    pub cuts: Vec<T>,
    /// Smallest and largest training value seen in each bin.
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Scalar> FeatureBins<T> {
    /// Features whose values are all 0 or 1 get the single cut 0.5. Otherwise
    /// each distinct value gets its own bin when there are at most `max_bins`
    /// of them, and quantile cuts are used beyond that. Cuts sit at midpoints
    /// between neighbouring training values.
    pub fn fit(values: &[T], max_bins: usize) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut distinct = sorted.clone();
        distinct.dedup();
        let half = T::lit(0.5);
        let cuts: Vec<T> = if distinct.iter().all(|&v| v == T::zero() || v == T::one()) {
            vec![half]
        } else if distinct.len() <= max_bins {
            distinct.windows(2).map(|w| midpoint(w[0], w[1])).collect()
        } else {
            let n = sorted.len();
            let mut cuts: Vec<T> = Vec::with_capacity(max_bins - 1);
            for b in 1..max_bins {
                let pos = b * n / max_bins;
                let (lo, hi) = (sorted[pos - 1], sorted[pos]);
                if lo == hi {
                    continue;
                }
                let c = midpoint(lo, hi);
                if cuts.last().is_none_or(|&last| c > last) {
                    cuts.push(c);
                }
            }
            cuts
        };
        let nb = cuts.len() + 1;
        let mut lower = vec![T::infinity(); nb];
        let mut upper = vec![T::neg_infinity(); nb];
        let probe = Self {
            cuts,
            lower: Vec::new(),
            upper: Vec::new(),
        };
        for &v in &sorted {
            let b = probe.bin_of(v);
            lower[b] = lower[b].min(v);
            upper[b] = upper[b].max(v);
        }
        // bins with no training value (a fixed 0/1 cut on a constant column)
        // report their cut-side bound
        for b in 0..nb {
            if lower[b] > upper[b] {
                let edge = if b == 0 { probe.cuts[0] } else { probe.cuts[b - 1] };
                lower[b] = edge;
                upper[b] = edge;
            }
        }
        Self {
            cuts: probe.cuts,
            lower,
            upper,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.cuts.len() + 1
    }

    #[inline]
    pub fn bin_of(&self, v: T) -> usize {
        self.cuts.partition_point(|&c| c < v)
    }
}

fn midpoint<T: Scalar>(lo: T, hi: T) -> T {
    let m = lo + (hi - lo) / T::lit(2.0);
    if m >= hi {
        lo
    } else {
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
pub struct BinLayout<T> {
    pub features: Vec<FeatureBins<T>>,
}

impl<T: Scalar> BinLayout<T> {
    pub fn fit(x: ArrayView2<T>, max_bins: usize) -> Self {
        Self {
            features: x
                .columns()
                .into_iter()
                .map(|c| FeatureBins::fit(&c.to_vec(), max_bins))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
pub struct ShapeFunction<T> {
    pub feature: String,
    pub contributions: Vec<T>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
pub struct AdditiveModel<T> {
    pub format_version: u32,
    pub intercept: T,
    pub layout: BinLayout<T>,
    pub shapes: Vec<ShapeFunction<T>>,
    pub config: EbmConfig,
}

/// One row of a shape export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ShapeBin<T> {
    pub bin_lower: T,
    pub bin_upper: T,
    pub contribution_eur: T,
    pub count: usize,
}

/// Per-epoch diagnostics of a fit. With bagging, the first bag's run.
#[derive(Debug, Clone, PartialEq)]
pub struct EbmTrace<T> {
    /// Training-portion MSE before the first epoch and after each epoch.
    pub train_mse: Vec<T>,
    /// Same layout as `train_mse`; empty without a validation split.
    pub validation_mse: Vec<T>,
    pub best_epoch: usize,
}

/// Column-major bin indices.
struct Binned {
    n: usize,
    cols: Vec<Vec<u16>>,
}

fn mse<T: Scalar>(y: &[T], pred: &[T], rows: &[usize]) -> T {
    if rows.is_empty() {
        return T::zero();
    }
    rows.iter()
        .map(|&i| {
            let r = y[i] - pred[i];
            r * r
        })
        .sum::<T>()
        / T::of_usize(rows.len())
}

/// Best split of the non-empty bins (given as prefix sums of residual sums and
/// counts) into at most `max_leaves` contiguous segments, maximizing
/// `sum S^2/N`. Returns the segment start positions. Ties keep fewer segments
/// and earlier cuts.
fn best_segments<T: Scalar>(sum: &[T], cnt: &[T], max_leaves: usize) -> Vec<usize> {
    let m = sum.len() - 1;
    let gain = |a: usize, b: usize| {
        let s = sum[b] - sum[a];
        s * s / (cnt[b] - cnt[a])
    };
    let leaves = max_leaves.min(m);
    // score[l][e]: best value of covering positions 0..e with l+1 segments
    let mut score = vec![vec![T::neg_infinity(); m + 1]; leaves];
    let mut from = vec![vec![0usize; m + 1]; leaves];
    for e in 1..=m {
        score[0][e] = gain(0, e);
    }
    for l in 1..leaves {
        for e in (l + 1)..=m {
            let mut best = T::neg_infinity();
            let mut arg = 0;
            for s in l..e {
                let v = score[l - 1][s] + gain(s, e);
                if v > best {
                    best = v;
                    arg = s;
                }
            }
            score[l][e] = best;
            from[l][e] = arg;
        }
    }
    let mut used = 0;
    for l in 1..leaves {
        if score[l][m] > score[used][m] {
            used = l;
        }
    }
    let mut starts = vec![0; used + 1];
    let mut e = m;
    for l in (1..=used).rev() {
        let s = from[l][e];
        starts[l] = s;
        e = s;
    }
    starts
}

struct Booster<'a, T> {
    binned: &'a Binned,
    n_bins: Vec<usize>,
    y: &'a [T],
    cfg: &'a EbmConfig,
}

struct BoostOutcome<T> {
    intercept: T,
    shapes: Vec<Vec<T>>,
    trace: EbmTrace<T>,
}

impl<T: Scalar> Booster<'_, T> {
    /// Residual fit for feature `j` over the training rows, scaled by the
    /// learning rate, as a per-bin delta.
    fn step(&self, j: usize, train: &[usize], pred: &[T]) -> Vec<T> {
        let nb = self.n_bins[j];
        let col = &self.binned.cols[j];
        let mut s = vec![T::zero(); nb];
        let mut c = vec![0usize; nb];
        for &i in train {
            let b = col[i] as usize;
            s[b] += self.y[i] - pred[i];
            c[b] += 1;
        }
        let occupied: Vec<usize> = (0..nb).filter(|&b| c[b] > 0).collect();
        let mut delta = vec![T::zero(); nb];
        if occupied.is_empty() {
            return delta;
        }
        let mut ps = vec![T::zero(); occupied.len() + 1];
        let mut pc = vec![T::zero(); occupied.len() + 1];
        for (k, &b) in occupied.iter().enumerate() {
            ps[k + 1] = ps[k] + s[b];
            pc[k + 1] = pc[k] + T::of_usize(c[b]);
        }
        let starts = best_segments(&ps, &pc, self.cfg.max_leaves);
        let lr = T::lit(self.cfg.learning_rate);
        let m = occupied.len();
        for (seg, &a) in starts.iter().enumerate() {
            let e = starts.get(seg + 1).copied().unwrap_or(m);
            let value = lr * (ps[e] - ps[a]) / (pc[e] - pc[a]);
            // empty bins before the next occupied one share this segment
            let lo = if seg == 0 { 0 } else { occupied[a] };
            let hi = if e == m { nb } else { occupied[e] };
            for d in &mut delta[lo..hi] {
                *d = value;
            }
        }
        delta
    }

    fn run(&self, split_seed: u64) -> BoostOutcome<T> {
        let n = self.binned.n;
        let n_val = (self.cfg.validation_fraction * n as f64).round() as usize;
        let order = shuffled_indices(n, split_seed);
        let mut val: Vec<usize> = order[..n_val].to_vec();
        let mut train: Vec<usize> = order[n_val..].to_vec();
        val.sort_unstable();
        train.sort_unstable();
        let intercept = self.y.iter().copied().sum::<T>() / T::of_usize(n);
        let p = self.n_bins.len();
        let mut shapes: Vec<Vec<T>> = self.n_bins.iter().map(|&nb| vec![T::zero(); nb]).collect();
        let mut pred = vec![intercept; n];
        let mut trace = EbmTrace {
            train_mse: vec![mse(self.y, &pred, &train)],
            validation_mse: Vec::new(),
            best_epoch: 0,
        };
        let early = !val.is_empty();
        let mut best_val = T::infinity();
        if early {
            best_val = mse(self.y, &pred, &val);
            trace.validation_mse.push(best_val);
        }
        let mut best_shapes = shapes.clone();
        let mut stale = 0;
        for epoch in 1..=self.cfg.epochs {
            for j in 0..p {
                let delta = self.step(j, &train, &pred);
                let col = &self.binned.cols[j];
                for (i, pv) in pred.iter_mut().enumerate() {
                    *pv += delta[col[i] as usize];
                }
                for (sv, d) in shapes[j].iter_mut().zip(&delta) {
                    *sv += *d;
                }
            }
            trace.train_mse.push(mse(self.y, &pred, &train));
            if early {
                let v = mse(self.y, &pred, &val);
                trace.validation_mse.push(v);
                if v < best_val {
                    best_val = v;
                    best_shapes.clone_from(&shapes);
                    trace.best_epoch = epoch;
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= self.cfg.early_stop_patience {
                        break;
                    }
                }
            } else {
                trace.best_epoch = epoch;
            }
        }
        if early {
            shapes = best_shapes;
        }
        BoostOutcome {
            intercept,
            shapes,
            trace,
        }
    }
}

fn fit_inner<T: Scalar>(
    x: ArrayView2<T>,
    columns: &[String],
    y: &[T],
    cfg: &EbmConfig,
) -> Result<(AdditiveModel<T>, EbmTrace<T>)> {
    cfg.validate()?;
    let (n, p) = x.dim();
    if n < MIN_ROWS {
        return Err(GamError::TooFewRows {
            min: MIN_ROWS,
            found: n,
        });
    }
    if y.len() != n {
        return Err(GamError::DimensionMismatch {
            expected: n,
            found: y.len(),
        });
    }
    if columns.len() != p {
        return Err(GamError::DimensionMismatch {
            expected: p,
            found: columns.len(),
        });
    }
    if !x.iter().chain(y).all(|v| v.is_finite()) {
        return Err(GamError::NonFinite);
    }
    let layout = BinLayout::fit(x, cfg.max_bins);
    let binned = Binned {
        n,
        cols: layout
            .features
            .iter()
            .zip(x.columns())
            .map(|(fb, c)| c.iter().map(|&v| fb.bin_of(v) as u16).collect())
            .collect(),
    };
    let n_bins: Vec<usize> = layout.features.iter().map(|f| f.n_bins()).collect();
    let booster = Booster {
        binned: &binned,
        n_bins: n_bins.clone(),
        y,
        cfg,
    };
    let mut first_trace = None;
    let mut intercept = T::zero();
    let mut shapes: Vec<Vec<T>> = n_bins.iter().map(|&nb| vec![T::zero(); nb]).collect();
    let bags = T::of_usize(cfg.outer_bags);
    for bag in 0..cfg.outer_bags {
        let out = booster.run(sub_seed(cfg.seed, bag as u64));
        intercept += out.intercept / bags;
        for (acc, s) in shapes.iter_mut().zip(&out.shapes) {
            for (a, v) in acc.iter_mut().zip(s) {
                *a += *v / bags;
            }
        }
        first_trace.get_or_insert(out.trace);
    }

    let counts: Vec<Vec<usize>> = binned
        .cols
        .iter()
        .zip(&n_bins)
        .map(|(col, &nb)| {
            let mut c = vec![0usize; nb];
            for &b in col {
                c[b as usize] += 1;
            }
            c
        })
        .collect();
    let n_t = T::of_usize(n);
    for (s, c) in shapes.iter_mut().zip(&counts) {
        let mean = s.iter().zip(c).map(|(&v, &k)| v * T::of_usize(k)).sum::<T>() / n_t;
        for v in s.iter_mut() {
            *v -= mean;
        }
        intercept += mean;
    }
    let mut model = AdditiveModel {
        format_version: FORMAT_VERSION,
        intercept,
        layout,
        shapes: columns
            .iter()
            .zip(shapes)
            .zip(counts)
            .map(|((name, contributions), counts)| ShapeFunction {
                feature: name.clone(),
                contributions,
                counts,
            })
            .collect(),
        config: cfg.clone(),
    };
    // boosting only saw the training portion; re-anchor so the mean
    // prediction over all rows matches the mean target
    let mut offset = T::zero();
    for (i, &yi) in y.iter().enumerate() {
        let row: Vec<usize> = binned.cols.iter().map(|c| c[i] as usize).collect();
        offset += yi - model.predict_binned(&row);
    }
    model.intercept += offset / n_t;
    Ok((model, first_trace.expect("at least one bag")))
}

pub fn ebm_fit<T: Scalar>(
    x: ArrayView2<T>,
    columns: &[String],
    y: &[T],
    cfg: &EbmConfig,
) -> Result<AdditiveModel<T>> {
    fit_inner(x, columns, y, cfg).map(|(m, _)| m)
}

pub fn ebm_fit_traced<T: Scalar>(
    x: ArrayView2<T>,
    columns: &[String],
    y: &[T],
    cfg: &EbmConfig,
) -> Result<(AdditiveModel<T>, EbmTrace<T>)> {
    fit_inner(x, columns, y, cfg)
}

impl<T: Scalar> AdditiveModel<T> {
    pub fn n_cols(&self) -> usize {
        self.shapes.len()
    }

    fn predict_binned(&self, bins: &[usize]) -> T {
        let mut acc = self.intercept;
        for (s, &b) in self.shapes.iter().zip(bins) {
            acc += s.contributions[b];
        }
        acc
    }

    fn check_len(&self, row: &[T]) -> Result<()> {
        if row.len() != self.n_cols() {
            return Err(GamError::DimensionMismatch {
                expected: self.n_cols(),
                found: row.len(),
            });
        }
        Ok(())
    }

    /// Shape lookup for every feature of `row`.
    pub fn contributions(&self, row: &[T]) -> Result<Vec<T>> {
        self.check_len(row)?;
        Ok(self
            .shapes
            .iter()
            .zip(&self.layout.features)
            .zip(row)
            .map(|((s, fb), &v)| s.contributions[fb.bin_of(v)])
            .collect())
    }

    /// Intercept plus the contributions, summed left to right.
    pub fn predict(&self, row: &[T]) -> Result<T> {
        let mut acc = self.intercept;
        for c in self.contributions(row)? {
            acc += c;
        }
        Ok(acc)
    }

    pub fn feature_index(&self, feature: &str) -> Option<usize> {
        self.shapes.iter().position(|s| s.feature == feature)
    }

    pub fn shape_export(&self, feature: &str) -> Result<Vec<ShapeBin<T>>> {
        let j = self
            .feature_index(feature)
            .ok_or_else(|| GamError::UnknownFeature(feature.to_string()))?;
        let fb = &self.layout.features[j];
        let s = &self.shapes[j];
        Ok((0..fb.n_bins())
            .map(|b| ShapeBin {
                bin_lower: fb.lower[b],
                bin_upper: fb.upper[b],
                contribution_eur: s.contributions[b],
                count: s.counts[b],
            })
            .collect())
    }
}

pub fn ebm_predict<T: Scalar>(m: &AdditiveModel<T>, row: &[T]) -> Result<T> {
    m.predict(row)
}

pub fn shape_export<T: Scalar>(m: &AdditiveModel<T>, feature: &str) -> Result<Vec<ShapeBin<T>>> {
    m.shape_export(feature)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|j| format!("f{j}")).collect()
    }

    #[test]
    fn distinct_values_get_own_bins() {
        let fb = FeatureBins::fit(&[3.0, 1.0, 2.0, 2.0, 5.0], 256);
        assert_eq!(fb.cuts, vec![1.5, 2.5, 4.0]);
        assert_eq!(fb.lower, vec![1.0, 2.0, 3.0, 5.0]);
        assert_eq!(fb.bin_of(-100.0), 0);
        assert_eq!(fb.bin_of(1.5), 0);
        assert_eq!(fb.bin_of(1e9), 3);
    }

    #[test]
    fn indicators_get_two_bins() {
        assert_eq!(FeatureBins::fit(&[0.0, 1.0, 1.0], 256).cuts, vec![0.5]);
        let constant = FeatureBins::fit(&[0.0; 4], 256);
        assert_eq!(constant.n_bins(), 2);
        assert_eq!(constant.bin_of(1.0), 1);
    }

    #[test]
    fn quantile_bins_balance_counts() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64).powi(3)).collect();
        let fb = FeatureBins::fit(&v, 10);
        assert_eq!(fb.n_bins(), 10);
        let mut counts = [0; 10];
        for &x in &v {
            counts[fb.bin_of(x)] += 1;
        }
        assert!(counts.iter().all(|&c| c == 100), "{counts:?}");
        assert!(fb.cuts.windows(2).all(|w| w[0] < w[1]));
    }

    /// Brute force over every way to cut `m` positions into at most three
    /// contiguous segments.
    fn brute_force_gain(s: &[f64], c: &[f64]) -> f64 {
        let m = s.len();
        let g = |a: usize, b: usize| {
            let ss: f64 = s[a..b].iter().sum();
            let cc: f64 = c[a..b].iter().sum();
            ss * ss / cc
        };
        let mut best = g(0, m);
        for a in 1..m {
            best = best.max(g(0, a) + g(a, m));
            for b in a + 1..m {
                best = best.max(g(0, a) + g(a, b) + g(b, m));
            }
        }
        best
    }

    #[test]
    fn segment_search_is_exhaustive() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let m = rng.random_range(1..12);
            let s: Vec<f64> = (0..m).map(|_| rng.random_range(-5.0..5.0)).collect();
            let c: Vec<f64> = (0..m).map(|_| rng.random_range(1..6) as f64).collect();
            let mut ps = vec![0.0];
            let mut pc = vec![0.0];
            for k in 0..m {
                ps.push(ps[k] + s[k]);
                pc.push(pc[k] + c[k]);
            }
            let starts = best_segments(&ps, &pc, 3);
            assert!(starts.len() <= 3 && starts[0] == 0);
            let mut got = 0.0;
            for (i, &a) in starts.iter().enumerate() {
                let e = starts.get(i + 1).copied().unwrap_or(m);
                got += (ps[e] - ps[a]).powi(2) / (pc[e] - pc[a]);
            }
            assert!((got - brute_force_gain(&s, &c)).abs() < 1e-9);
        }
    }

    fn small_cfg() -> EbmConfig {
        EbmConfig {
            epochs: 300,
            learning_rate: 0.1,
            ..EbmConfig::default()
        }
    }

    #[test]
    fn constant_target() {
        let x = Array2::from_shape_fn((50, 2), |(i, j)| (i * (j + 1)) as f64);
        let m = ebm_fit(x.view(), &names(2), &[7.0; 50], &small_cfg()).unwrap();
        assert!((m.intercept - 7.0).abs() < 1e-8);
        for s in &m.shapes {
            assert!(s.contributions.iter().all(|c| c.abs() < 1e-8));
        }
    }

    #[test]
    fn step_function_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<f64> = (0..2000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = xs.iter().map(|&v| if v > 0.0 { 10.0 } else { 0.0 }).collect();
        let x = Array2::from_shape_vec((2000, 1), xs).unwrap();
        let cfg = EbmConfig {
            epochs: 1000,
            ..EbmConfig::default()
        };
        let m = ebm_fit(x.view(), &names(1), &y, &cfg).unwrap();
        let export = m.shape_export("f0").unwrap();
        // centered step: -10 * share of positives below zero, 10 * share above
        let pos = y.iter().filter(|&&v| v > 0.0).count() as f64 / 2000.0;
        for b in export.iter().filter(|b| b.count > 0) {
            let truth = if b.bin_lower > 0.0 { 10.0 * (1.0 - pos) } else { -10.0 * pos };
            assert!((b.contribution_eur - truth).abs() < 0.5, "{b:?}");
        }
    }

    #[test]
    fn additive_components_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 3000;
        let x = Array2::from_shape_fn((n, 2), |_| rng.random_range(0.0..10.0));
        let f1 = |v: f64| 5.0 * (v - 5.0).abs();
        let f2 = |v: f64| if v < 3.0 { -8.0 } else { 2.0 * v };
        let y: Vec<f64> = (0..n).map(|i| 100.0 + f1(x[[i, 0]]) + f2(x[[i, 1]])).collect();
        let cfg = EbmConfig {
            max_bins: 32,
            epochs: 3000,
            learning_rate: 0.05,
            ..EbmConfig::default()
        };
        let m = ebm_fit(x.view(), &names(2), &y, &cfg).unwrap();
        for (j, f) in [(0usize, &f1 as &dyn Fn(f64) -> f64), (1, &f2)] {
            let export = m.shape_export(&format!("f{j}")).unwrap();
            // truth averaged over each bin's training values, then centered
            let col = x.column(j);
            let fb = &m.layout.features[j];
            let mut sum = vec![0.0; fb.n_bins()];
            let mut cnt = vec![0.0; fb.n_bins()];
            for &v in col {
                sum[fb.bin_of(v)] += f(v);
                cnt[fb.bin_of(v)] += 1.0;
            }
            let overall = sum.iter().sum::<f64>() / n as f64;
            for (b, row) in export.iter().enumerate() {
                let truth = sum[b] / cnt[b] - overall;
                assert!((row.contribution_eur - truth).abs() < 1.0, "f{j} bin {b}: {} vs {truth}", row.contribution_eur);
            }
        }
    }

    #[test]
    fn edge_bins_and_hand_sum() {
        let m = AdditiveModel {
            format_version: FORMAT_VERSION,
            intercept: 100.0,
            layout: BinLayout {
                features: vec![
                    FeatureBins { cuts: vec![1.5, 2.5], lower: vec![1.0, 2.0, 3.0], upper: vec![1.0, 2.0, 3.0] },
                    FeatureBins { cuts: vec![0.5], lower: vec![0.0, 1.0], upper: vec![0.0, 1.0] },
                ],
            },
            shapes: vec![
                ShapeFunction { feature: "a".into(), contributions: vec![-4.0, 1.0, 3.0], counts: vec![1, 2, 1] },
                ShapeFunction { feature: "b".into(), contributions: vec![-2.0, 2.0], counts: vec![1, 1] },
            ],
            config: EbmConfig::default(),
        };
        assert_eq!(m.predict(&[2.0, 1.0]).unwrap(), 103.0);
        assert_eq!(m.predict(&[-50.0, 0.0]).unwrap(), 94.0);
        assert_eq!(m.predict(&[99.0, 7.0]).unwrap(), 105.0);
        assert!(matches!(m.predict(&[1.0]), Err(GamError::DimensionMismatch { .. })));
        assert_eq!(m.shape_export("zz"), Err(GamError::UnknownFeature("zz".into())));
    }

    #[test]
    fn centering_and_mean_prediction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::<f64>::from_shape_fn((400, 3), |_| rng.random_range(0.0..5.0));
        let y: Vec<f64> = (0..400).map(|i| x[[i, 0]].powi(2) - 3.0 * x[[i, 2]] + rng.random_range(0.0..1.0)).collect();
        let m = ebm_fit(x.view(), &names(3), &y, &small_cfg()).unwrap();
        for s in &m.shapes {
            let w: f64 = s.contributions.iter().zip(&s.counts).map(|(c, &k)| c * k as f64).sum();
            assert!((w / 400.0).abs() < 1e-8);
            assert_eq!(s.counts.iter().sum::<usize>(), 400);
        }
        let mean_pred = (0..400).map(|i| m.predict(&x.row(i).to_vec()).unwrap()).sum::<f64>() / 400.0;
        let mean_y = y.iter().sum::<f64>() / 400.0;
        assert!((mean_pred - mean_y).abs() < 1e-6);
    }

    #[test]
    fn deterministic_bytes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array2::from_shape_fn((100, 2), |_| rng.random_range(0.0..5.0));
        let y: Vec<f64> = (0..100).map(|i| x[[i, 0]] * x[[i, 1]]).collect();
        let a = serde_json::to_string(&ebm_fit(x.view(), &names(2), &y, &small_cfg()).unwrap()).unwrap();
        let b = serde_json::to_string(&ebm_fit(x.view(), &names(2), &y, &small_cfg()).unwrap()).unwrap();
        assert_eq!(a, b);
        let back: AdditiveModel<f64> = serde_json::from_str(&a).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), a);
    }

    #[test]
    fn early_stopping_keeps_best_epoch() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((200, 4), |_| rng.random_range(0.0..1.0));
        let y: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..1.0)).collect();
        let cfg = EbmConfig {
            learning_rate: 0.5,
            epochs: 500,
            early_stop_patience: 5,
            ..EbmConfig::default()
        };
        let (_, trace) = ebm_fit_traced(x.view(), &names(4), &y, &cfg).unwrap();
        assert!(trace.validation_mse.len() < 501);
        let best = trace.validation_mse[trace.best_epoch];
        assert!(trace.validation_mse.iter().all(|&v| v >= best));
    }

    #[test]
    fn bagging_averages() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Array2::<f64>::from_shape_fn((100, 1), |_| rng.random_range(0.0..5.0));
        let y: Vec<f64> = (0..100).map(|i| x[[i, 0]].sin()).collect();
        let cfg = EbmConfig {
            outer_bags: 3,
            ..small_cfg()
        };
        let m = ebm_fit(x.view(), &names(1), &y, &cfg).unwrap();
        let w: f64 = m.shapes[0].contributions.iter().zip(&m.shapes[0].counts).map(|(c, &k)| c * k as f64).sum();
        assert!(w.abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_config() {
        let x = Array2::<f64>::zeros((30, 1));
        let y = vec![0.0; 30];
        let bad = EbmConfig { max_bins: 1, ..EbmConfig::default() };
        assert!(matches!(ebm_fit(x.view(), &names(1), &y, &bad), Err(GamError::InvalidConfig(_))));
        let few = Array2::<f64>::zeros((5, 1));
        assert!(matches!(ebm_fit(few.view(), &names(1), &[0.0; 5], &EbmConfig::default()), Err(GamError::TooFewRows { .. })));
    }

    #[test]
    fn runs_in_f32() {
        let x = Array2::from_shape_fn((60, 1), |(i, _)| i as f32);
        let y: Vec<f32> = (0..60).map(|i| if i < 30 { 1.0 } else { 3.0 }).collect();
        let m = ebm_fit(x.view(), &names(1), &y, &small_cfg()).unwrap();
        assert!((m.predict(&[50.0]).unwrap() - 3.0).abs() < 0.1);
    }
}
