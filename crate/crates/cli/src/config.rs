use std::path::{Path, PathBuf};

use hedonic::gam::EbmConfig;
use hedonic::geo::load_lookup;
use hedonic::pipeline::{
    prepare_listings, Approach, LinearConfig, ModelKind, PipelineConfig, Stage1Config, Stage2Config,
};
use hedonic::tabular::{default_schema, load_csv, load_schema, ColumnSpec, Table};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

fn default_folds() -> usize {
    5
}

/// One experiment: input paths plus every pipeline setting. Relative paths
/// resolve against the directory holding the config file. Unknown keys are
/// rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geo_lookup: Option<PathBuf>,
    /// Where `train` writes the model unless `--out` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    /// Where `evaluate` writes its CSV unless `--out` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_approach")]
    pub approach: Approach,
    #[serde(default = "default_kind")]
    pub model_kind: ModelKind,
    #[serde(default)]
    pub stage1: Stage1Config,
    #[serde(default)]
    pub stage2: Stage2Config,
    #[serde(default)]
    pub linear: LinearConfig,
    #[serde(default)]
    pub additive: EbmConfig,
}

fn default_approach() -> Approach {
    PipelineConfig::default().approach
}

fn default_kind() -> ModelKind {
    PipelineConfig::default().model_kind
}

impl RunConfig {
    pub fn new(data: PathBuf) -> Self {
        let p = PipelineConfig::default();
        Self {
            data,
            schema: None,
            geo_lookup: None,
            model: None,
            report: None,
            folds: default_folds(),
            seed: 0,
            approach: p.approach,
            model_kind: p.model_kind,
            stage1: p.stage1,
            stage2: p.stage2,
            linear: p.linear,
            additive: p.additive,
        }
    }

    /// Parses `path` strictly, resolves relative paths and checks that every
    /// input file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut rc: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut rc.data);
        for p in [&mut rc.schema, &mut rc.geo_lookup, &mut rc.model, &mut rc.report]
            .into_iter()
            .flatten()
        {
            resolve(p);
        }
        let inputs = [Some(&rc.data), rc.schema.as_ref(), rc.geo_lookup.as_ref()];
        for p in inputs.into_iter().flatten() {
            if !p.is_file() {
                return Err(CliError::Config(format!("referenced file {} does not exist", p.display())));
            }
        }
        Ok(rc)
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            approach: self.approach,
            model_kind: self.model_kind,
            stage1: self.stage1.clone(),
            stage2: self.stage2.clone(),
            linear: self.linear.clone(),
            additive: self.additive.clone(),
            seed: self.seed,
        }
    }

    pub fn schema(&self) -> Result<Vec<ColumnSpec>> {
        match &self.schema {
            Some(p) => Ok(load_schema(p)?),
            None => Ok(default_schema()),
        }
    }

    /// Loads the data file, drops invalid and duplicate rows, and geocodes
    /// when a lookup is configured.
    pub fn load_table(&self) -> Result<Table> {
        let t = load_csv(&self.data, &self.schema()?)?;
        let lookup = self.geo_lookup.as_deref().map(load_lookup).transpose()?;
        let t = prepare_listings(&t, lookup.as_ref())?;
        if t.is_empty() {
            return Err(CliError::Data(format!("{} has no usable rows", self.data.display())));
        }
        Ok(t)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}
