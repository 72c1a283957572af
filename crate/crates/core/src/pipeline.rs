//! Two-stage segmentation with one interpretable predictor per segment.
//!
//! Stage 1 clusters listings on location plus price. Because price is unknown
//! for new listings, rows are routed to stage-1 clusters by their nearest
//! centroid in the location dimensions only, and training rows are labelled
//! the same way so every row trains the predictor it is later routed to.
//! Stage 2 splits each stage-1 cluster by k-means on the encoded features or
//! by a shallow regression tree on price. Segments below `min_cluster_size`
//! fall back to a parent predictor for their stage-1 cluster.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{kmeans_fit, tree_cluster_fit, ClusterError, KMeansConfig, KMeansModel, TreeClusterModel};
use crate::gam::{ebm_fit, AdditiveModel, EbmConfig, GamError, ShapeBin};
use crate::geo::{geocode, GeoError, GeoLookup};
use crate::linreg::{lambda_grid, lasso_cv_lambda, lasso_fit, LinRegError, LinearModel, SolverSettings};
use crate::rng::sub_seed;
use crate::tabular::{
    dedup_near, filter_rows, names, ColumnSpec, EncodedMatrix, Encoder, Imputer, Table, TableError,
    DEDUP_TOLERANCE, MIN_PLOT_AREA_M2,
};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("{context}: {source}")]
    Cluster {
        context: String,
        source: ClusterError,
    },
    #[error("{context}: {source}")]
    Linear {
        context: String,
        source: LinRegError,
    },
    #[error("{context}: {source}")]
    Additive {
        context: String,
        source: GamError,
    },
    #[error("row {row_id}: {message}")]
    Row { row_id: u64, message: String },
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("model file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("model format_version {found} is newer than supported {supported}")]
    UnsupportedVersion { found: u64, supported: u32 },
    #[error("segment {0} uses a linear predictor; shape functions need model_kind \"additive\"")]
    LinearShapes(usize),
    #[error("no segment {0}")]
    UnknownSegment(usize),
    #[error("feature \"{0}\" is not a model column")]
    UnknownFeature(String),
}

impl PipelineError {
    /// True for errors caused by the configuration rather than the data.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            PipelineError::Config(_)
                | PipelineError::LinearShapes(_)
                | PipelineError::UnknownFeature(_)
                | PipelineError::UnknownSegment(_)
        ) || matches!(
            self,
            PipelineError::Cluster {
                source: ClusterError::InvalidParameter(_) | ClusterError::UnknownColumn(_),
                ..
            }
        ) || matches!(
            self,
            PipelineError::Additive {
                source: GamError::InvalidConfig(_),
                ..
            }
        )
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    Global,
    Location,
    TwoStageTree,
    TwoStageKmeans,
}

impl Approach {
    pub const ALL: [Approach; 4] = [
        Approach::Global,
        Approach::Location,
        Approach::TwoStageTree,
        Approach::TwoStageKmeans,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Approach::Global => "global",
            Approach::Location => "location",
            Approach::TwoStageTree => "two_stage_tree",
            Approach::TwoStageKmeans => "two_stage_kmeans",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Additive,
}

impl ModelKind {
    pub const ALL: [ModelKind; 2] = [ModelKind::Linear, ModelKind::Additive];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::Additive => "additive",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage1Config {
    pub k: usize,
    /// Encoded column names; the target name selects the price.
    pub features: Vec<String>,
    pub restarts: usize,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            k: 2,
            features: vec![
                names::LATITUDE.into(),
                names::LONGITUDE.into(),
                names::PRICE.into(),
            ],
            restarts: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage2Config {
    pub k: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub min_cluster_size: usize,
    pub restarts: usize,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            k: 8,
            max_depth: 3,
            min_leaf: 1,
            min_cluster_size: 200,
            restarts: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearConfig {
    /// Fixed penalty; `None` picks one by cross-validation.
    pub lambda: Option<f64>,
    pub cv_folds: usize,
    pub grid_points: usize,
    pub grid_min_ratio: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            cv_folds: 5,
            grid_points: 20,
            grid_min_ratio: 1e-4,
            max_iter: 10_000,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub approach: Approach,
    pub model_kind: ModelKind,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub linear: LinearConfig,
    pub additive: EbmConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            approach: Approach::TwoStageKmeans,
            model_kind: ModelKind::Additive,
            stage1: Stage1Config::default(),
            stage2: Stage2Config::default(),
            linear: LinearConfig::default(),
            additive: EbmConfig::default(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PipelineError::Config(m.into()));
        if self.stage1.k < 1 || self.stage2.k < 1 {
            return bad("k values must be at least 1");
        }
        if self.stage1.restarts < 1 || self.stage2.restarts < 1 {
            return bad("restarts must be at least 1");
        }
        if self.stage2.max_depth < 1 || self.stage2.min_leaf < 1 {
            return bad("max_depth and min_leaf must be at least 1");
        }
        if self.stage1.features.is_empty() {
            return bad("stage1.features is empty");
        }
        if let Some(l) = self.linear.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return bad("linear.lambda must be finite and non-negative");
            }
        }
        if self.linear.cv_folds < 2 {
            return bad("linear.cv_folds must be at least 2");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predictor {
    Linear(LinearModel<f64>),
    Additive(AdditiveModel<f64>),
}

impl Predictor {
    pub fn intercept(&self) -> f64 {
        match self {
            Predictor::Linear(m) => m.intercept,
            Predictor::Additive(m) => m.intercept,
        }
    }

    pub fn contributions(&self, row: &[f64]) -> Result<Vec<f64>> {
        match self {
            Predictor::Linear(m) => m.contributions(row).map_err(|source| PipelineError::Linear {
                context: "predict".into(),
                source,
            }),
            Predictor::Additive(m) => m.contributions(row).map_err(|source| PipelineError::Additive {
                context: "predict".into(),
                source,
            }),
        }
    }

    pub fn predict(&self, row: &[f64]) -> Result<f64> {
        let mut acc = self.intercept();
        for c in self.contributions(row)? {
            acc += c;
        }
        Ok(acc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Stage2 {
    None,
    Kmeans(KMeansModel<f64>),
    Tree(TreeClusterModel<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Cluster {
    pub stage2: Stage2,
    /// Terminal segment for each stage-2 label.
    pub segment_of_label: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub stage1: usize,
    /// Stage-2 labels routed here. More than one, or any label of an
    /// undersized group, marks a parent segment.
    pub labels: Vec<usize>,
    pub is_parent: bool,
    /// Training rows routed to this segment.
    pub n_rows: usize,
    /// Rows the predictor was fitted on. A parent whose merged rows are still
    /// too few is fitted on its whole stage-1 cluster.
    pub n_fit_rows: usize,
    pub predictor: Predictor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalModel {
    pub format_version: u32,
    pub config: PipelineConfig,
    pub schema: Vec<ColumnSpec>,
    pub imputer: Option<Imputer>,
    pub encoder: Encoder,
    pub stage1: Option<KMeansModel<f64>>,
    pub clusters: Vec<Stage1Cluster>,
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    pub stage1: usize,
    pub stage2: Option<usize>,
    pub segment: usize,
    pub merged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub route: Route,
    pub intercept: f64,
    pub columns: Vec<String>,
    pub contributions: Vec<f64>,
    /// `intercept` plus `contributions`, summed left to right; equal to the
    /// prediction.
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentShape {
    pub segment: usize,
    pub stage1: usize,
    pub bins: Vec<ShapeBin<f64>>,
}

/// Row-level cleaning that learns nothing from the data: drops invalid rows
/// and re-published duplicates, then appends coordinates from `lookup` when
/// the table has none. Imputation and encoding happen inside the fit.
pub fn prepare_listings(t: &Table, lookup: Option<&GeoLookup>) -> Result<Table> {
    let t = if t.column_index(names::PLOT_AREA).is_some() {
        filter_rows(t, MIN_PLOT_AREA_M2)?
    } else {
        t.clone()
    };
    let t = if t.column_index(names::POSTAL_CODE).is_some() && t.column_index(names::LIVING_AREA).is_some() {
        dedup_near(&t, DEDUP_TOLERANCE)?
    } else {
        t
    };
    match lookup {
        Some(g) if t.column_index(names::LATITUDE).is_none() => Ok(geocode(g, &t)?.0),
        _ => Ok(t),
    }
}

struct Prepared {
    x: EncodedMatrix,
    imputer: Option<Imputer>,
    encoder: Encoder,
}

fn prepare_training(t: &Table) -> Result<Prepared> {
    let imputer = if Imputer::applicable(t.schema()) {
        Some(Imputer::fit(t)?)
    } else {
        None
    };
    let imputed = match &imputer {
        Some(imp) => imp.apply(t)?,
        None => t.clone(),
    };
    let encoder = Encoder::fit(&imputed)?;
    let x = encoder.transform(&imputed)?;
    if let Some(i) = x.target.iter().position(|v| !v.is_finite()) {
        return Err(PipelineError::Row {
            row_id: x.row_ids[i],
            message: format!("target \"{}\" is missing", encoder.target),
        });
    }
    Ok(Prepared { x, imputer, encoder })
}

fn column_matrix(x: &EncodedMatrix, target: &str, features: &[String]) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((x.n_rows(), features.len()));
    for (k, f) in features.iter().enumerate() {
        if f == target {
            out.column_mut(k).assign(&x.target);
        } else {
            let j = x
                .column_index(f)
                .ok_or_else(|| PipelineError::Config(format!("stage-1 feature \"{f}\" is not an encoded column")))?;
            out.column_mut(k).assign(&x.values.column(j));
        }
    }
    Ok(out)
}

fn cluster_err(context: impl Into<String>) -> impl FnOnce(ClusterError) -> PipelineError {
    let context = context.into();
    move |source| PipelineError::Cluster { context, source }
}

fn train_predictor(
    cfg: &PipelineConfig,
    x: ArrayView2<f64>,
    columns: &[String],
    y: &[f64],
    seed: u64,
    context: &str,
) -> Result<Predictor> {
    match cfg.model_kind {
        ModelKind::Linear => {
            let lin = &cfg.linear;
            let settings = SolverSettings {
                max_iter: lin.max_iter,
                tol: lin.tol,
            };
            let wrap = |source| PipelineError::Linear {
                context: context.to_string(),
                source,
            };
            let lambda = match lin.lambda {
                Some(l) => l,
                None => {
                    let grid = lambda_grid(x, y, lin.grid_points, lin.grid_min_ratio).map_err(wrap)?;
                    let folds = lin.cv_folds.min(x.nrows());
                    lasso_cv_lambda(x, y, &grid, folds, seed, settings).map_err(wrap)?
                }
            };
            Ok(Predictor::Linear(lasso_fit(x, columns, y, lambda, settings).map_err(wrap)?))
        }
        ModelKind::Additive => {
            let ebm = EbmConfig {
                seed,
                ..cfg.additive.clone()
            };
            Ok(Predictor::Additive(ebm_fit(x, columns, y, &ebm).map_err(|source| {
                PipelineError::Additive {
                    context: context.to_string(),
                    source,
                }
            })?))
        }
    }
}

/// Location features of the stage-1 model (its features minus the target).
fn location_features(stage1_features: &[String], target: &str) -> Vec<String> {
    stage1_features.iter().filter(|f| *f != target).cloned().collect()
}

struct SegmentJob {
    stage1: usize,
    labels: Vec<usize>,
    is_parent: bool,
    rows: Vec<usize>,
    fit_rows: Vec<usize>,
}

pub fn fit_pipeline(t: &Table, cfg: &PipelineConfig) -> Result<HierarchicalModel> {
    cfg.validate()?;
    let Prepared { x, imputer, encoder } = prepare_training(t)?;
    let n = x.n_rows();
    let p = x.n_cols();
    let columns = x.column_names();
    if cfg.approach != Approach::Global && cfg.stage2.min_cluster_size < 2 * p {
        return Err(PipelineError::Config(format!(
            "min_cluster_size {} is below twice the {p} encoded columns",
            cfg.stage2.min_cluster_size
        )));
    }
    let target = encoder.target.clone();
    let y: Vec<f64> = x.target.to_vec();

    // stage 1
    let (stage1, stage1_labels, n_clusters) = if cfg.approach == Approach::Global {
        (None, vec![0usize; n], 1)
    } else {
        let location = location_features(&cfg.stage1.features, &target);
        if location.is_empty() {
            return Err(PipelineError::Config("stage1.features has no location column".into()));
        }
        let m = column_matrix(&x, &target, &cfg.stage1.features)?;
        let kcfg = KMeansConfig {
            k: cfg.stage1.k,
            restarts: cfg.stage1.restarts,
            seed: sub_seed(cfg.seed, 1),
            ..KMeansConfig::default()
        };
        let fit = kmeans_fit(m.view(), &cfg.stage1.features, &kcfg).map_err(cluster_err("stage 1"))?;
        let loc = column_matrix(&x, &target, &location)?;
        let names_ref: Vec<&str> = location.iter().map(String::as_str).collect();
        let labels = loc
            .rows()
            .into_iter()
            .map(|r| fit.model.assign_subspace(&r.to_vec(), &names_ref))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(cluster_err("stage 1 routing"))?;
        (Some(fit.model), labels, cfg.stage1.k)
    };
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    for (i, &c) in stage1_labels.iter().enumerate() {
        members[c].push(i);
    }
    if cfg.approach != Approach::Global {
        for (c, m) in members.iter().enumerate() {
            if m.len() < cfg.stage2.min_cluster_size {
                return Err(PipelineError::Config(format!(
                    "stage-1 cluster {c} has {} rows, below min_cluster_size {}; k is too large for the data",
                    m.len(),
                    cfg.stage2.min_cluster_size
                )));
            }
        }
    }

    // stage 2
    let mut clusters = Vec::with_capacity(n_clusters);
    let mut jobs: Vec<SegmentJob> = Vec::new();
    for (c, rows) in members.iter().enumerate() {
        let xs = x.values.select(Axis(0), rows);
        let (stage2, labels) = match cfg.approach {
            Approach::Global | Approach::Location => (Stage2::None, vec![0usize; rows.len()]),
            Approach::TwoStageKmeans => {
                let kcfg = KMeansConfig {
                    k: cfg.stage2.k,
                    restarts: cfg.stage2.restarts,
                    seed: sub_seed(cfg.seed, 100 + c as u64),
                    ..KMeansConfig::default()
                };
                let fit = kmeans_fit(xs.view(), &columns, &kcfg)
                    .map_err(cluster_err(format!("stage 2 in cluster {c}")))?;
                (Stage2::Kmeans(fit.model), fit.labels)
            }
            Approach::TwoStageTree => {
                let ys: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
                let tree = tree_cluster_fit(xs.view(), &columns, &ys, cfg.stage2.max_depth, cfg.stage2.min_leaf)
                    .map_err(cluster_err(format!("stage 2 in cluster {c}")))?;
                let labels = xs
                    .rows()
                    .into_iter()
                    .map(|r| tree.assign(&r.to_vec()))
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(cluster_err(format!("stage 2 in cluster {c}")))?;
                (Stage2::Tree(tree), labels)
            }
        };
        let n_labels = match &stage2 {
            Stage2::None => 1,
            Stage2::Kmeans(m) => m.k,
            Stage2::Tree(t) => t.n_leaves,
        };
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n_labels];
        for (&i, &l) in rows.iter().zip(&labels) {
            groups[l].push(i);
        }
        let has_stage2 = !matches!(stage2, Stage2::None);
        let small = |g: &Vec<usize>| has_stage2 && g.len() < cfg.stage2.min_cluster_size;
        let mut segment_of_label = vec![usize::MAX; n_labels];
        for (l, g) in groups.iter().enumerate() {
            if !small(g) {
                segment_of_label[l] = jobs.len();
                jobs.push(SegmentJob {
                    stage1: c,
                    labels: vec![l],
                    is_parent: false,
                    rows: g.clone(),
                    fit_rows: g.clone(),
                });
            }
        }
        let merged: Vec<usize> = (0..n_labels).filter(|&l| small(&groups[l])).collect();
        if !merged.is_empty() {
            let mut merged_rows: Vec<usize> = merged.iter().flat_map(|&l| groups[l].iter().copied()).collect();
            merged_rows.sort_unstable();
            let fit_rows = if merged_rows.len() >= cfg.stage2.min_cluster_size {
                merged_rows.clone()
            } else {
                rows.clone()
            };
            for &l in &merged {
                segment_of_label[l] = jobs.len();
            }
            jobs.push(SegmentJob {
                stage1: c,
                labels: merged,
                is_parent: true,
                rows: merged_rows,
                fit_rows,
            });
        }
        clusters.push(Stage1Cluster {
            stage2,
            segment_of_label,
        });
    }

    let segments = jobs
        .par_iter()
        .enumerate()
        .map(|(s, job)| {
            let xs = x.values.select(Axis(0), &job.fit_rows);
            let ys: Vec<f64> = job.fit_rows.iter().map(|&i| y[i]).collect();
            let predictor = train_predictor(cfg, xs.view(), &columns, &ys, sub_seed(cfg.seed, 1000 + s as u64), &format!("segment {s}"))?;
            Ok(Segment {
                stage1: job.stage1,
                labels: job.labels.clone(),
                is_parent: job.is_parent,
                n_rows: job.rows.len(),
                n_fit_rows: job.fit_rows.len(),
                predictor,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(HierarchicalModel {
        format_version: FORMAT_VERSION,
        config: cfg.clone(),
        schema: t.schema().to_vec(),
        imputer,
        encoder,
        stage1,
        clusters,
        segments,
    })
}

impl HierarchicalModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Parses a model, refusing files written by a newer format.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| PipelineError::Config("model file has no format_version".into()))?;
        if found > FORMAT_VERSION as u64 {
            return Err(PipelineError::UnsupportedVersion {
                found,
                supported: FORMAT_VERSION,
            });
        }
        Ok(serde_json::from_str(text)?)
    }

    pub fn column_names(&self) -> Vec<String> {
        self.encoder.column_names()
    }

    /// Imputes with the training-time imputer and encodes with the training
    /// layout.
    pub fn prepare(&self, t: &Table) -> Result<EncodedMatrix> {
        let imputed = match &self.imputer {
            Some(imp) => imp.apply(t)?,
            None => t.clone(),
        };
        Ok(self.encoder.transform(&imputed)?)
    }

    fn location_dims(&self) -> Result<(Vec<usize>, Vec<String>)> {
        let loc = location_features(&self.config.stage1.features, &self.encoder.target);
        let dims = loc
            .iter()
            .map(|f| {
                self.encoder
                    .columns
                    .iter()
                    .position(|c| &c.name == f)
                    .ok_or_else(|| PipelineError::UnknownFeature(f.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((dims, loc))
    }

    /// Routes one encoded row: stage 1 by location only, then stage 2.
    pub fn route(&self, row: &[f64]) -> Result<Route> {
        let c = match &self.stage1 {
            None => 0,
            Some(m) => {
                let (dims, loc) = self.location_dims()?;
                let values: Vec<f64> = dims.iter().map(|&j| row[j]).collect();
                let refs: Vec<&str> = loc.iter().map(String::as_str).collect();
                m.assign_subspace(&values, &refs).map_err(cluster_err("stage 1 routing"))?
            }
        };
        let cluster = &self.clusters[c];
        let label = match &cluster.stage2 {
            Stage2::None => None,
            Stage2::Kmeans(m) => Some(m.assign(row).map_err(cluster_err("stage 2 routing"))?),
            Stage2::Tree(t) => Some(t.assign(row).map_err(cluster_err("stage 2 routing"))?),
        };
        let segment = cluster.segment_of_label[label.unwrap_or(0)];
        Ok(Route {
            stage1: c,
            stage2: label,
            segment,
            merged: self.segments[segment].is_parent,
        })
    }

    pub fn predict_row(&self, row: &[f64]) -> Result<(Route, f64)> {
        let r = self.route(row)?;
        Ok((r, self.segments[r.segment].predictor.predict(row)?))
    }

    pub fn explain_row(&self, row: &[f64]) -> Result<Explanation> {
        let route = self.route(row)?;
        let predictor = &self.segments[route.segment].predictor;
        let contributions = predictor.contributions(row)?;
        let intercept = predictor.intercept();
        let mut price = intercept;
        for &c in &contributions {
            price += c;
        }
        Ok(Explanation {
            route,
            intercept,
            columns: self.column_names(),
            contributions,
            price,
        })
    }

    /// Routes and prices every row of `t`.
    pub fn predict_table(&self, t: &Table) -> Result<Vec<(Route, f64)>> {
        let x = self.prepare(t)?;
        self.predict_encoded(&x)
    }

    pub fn predict_encoded(&self, x: &EncodedMatrix) -> Result<Vec<(Route, f64)>> {
        (0..x.n_rows())
            .into_par_iter()
            .map(|i| {
                self.predict_row(&x.values.row(i).to_vec())
                    .map_err(|e| with_row(e, x.row_ids[i]))
            })
            .collect()
    }

    pub fn explain_table(&self, t: &Table) -> Result<Vec<Explanation>> {
        let x = self.prepare(t)?;
        (0..x.n_rows())
            .into_par_iter()
            .map(|i| {
                self.explain_row(&x.values.row(i).to_vec())
                    .map_err(|e| with_row(e, x.row_ids[i]))
            })
            .collect()
    }

    /// Shape export of `feature` for each listed segment, each over its own
    /// bin ranges.
    pub fn compare_shapes(&self, feature: &str, segments: &[usize]) -> Result<Vec<SegmentShape>> {
        if !self.column_names().iter().any(|c| c == feature) {
            return Err(PipelineError::UnknownFeature(feature.to_string()));
        }
        segments
            .iter()
            .map(|&s| {
                let seg = self.segments.get(s).ok_or(PipelineError::UnknownSegment(s))?;
                match &seg.predictor {
                    Predictor::Linear(_) => Err(PipelineError::LinearShapes(s)),
                    Predictor::Additive(m) => Ok(SegmentShape {
                        segment: s,
                        stage1: seg.stage1,
                        bins: m.shape_export(feature).map_err(|source| PipelineError::Additive {
                            context: format!("segment {s}"),
                            source,
                        })?,
                    }),
                }
            })
            .collect()
    }
}

fn with_row(e: PipelineError, row_id: u64) -> PipelineError {
    match e {
        PipelineError::Table(_) | PipelineError::Row { .. } => e,
        other => PipelineError::Row {
            row_id,
            message: other.to_string(),
        },
    }
}

pub fn route(m: &HierarchicalModel, row: &[f64]) -> Result<Route> {
    m.route(row)
}

pub fn predict_price(m: &HierarchicalModel, row: &[f64]) -> Result<f64> {
    m.predict_row(row).map(|(_, p)| p)
}

pub fn explain(m: &HierarchicalModel, row: &[f64]) -> Result<Explanation> {
    m.explain_row(row)
}

pub fn compare_shapes(m: &HierarchicalModel, feature: &str, segments: &[usize]) -> Result<Vec<SegmentShape>> {
    m.compare_shapes(feature, segments)
}
