mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "hedonic", version, about = "Two-stage clustered, interpretable house-price models")]
pub struct Cli {
    /// Run config JSON (train, evaluate, elbow, cluster-map).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed (or the synth seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output file (directory for `synth`); standard output when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model and write it as JSON.
    Train,
    /// Cross-validate all approach and model-kind pairs into a CSV.
    Evaluate,
    /// Price listings with a trained model.
    Predict(PredictArgs),
    /// Per-row contributions, or per-segment shape functions with --feature.
    Explain(ExplainArgs),
    /// WCSS for a range of k, with the knee as a hint.
    Elbow(ElbowArgs),
    /// Location clusters per row.
    ClusterMap(ClusterMapArgs),
    /// Write a synthetic data set with its config files.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Postal-code lookup, for inputs without coordinates.
    #[arg(long)]
    pub geo_lookup: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Listings to explain; not needed with --feature.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub geo_lookup: Option<PathBuf>,
    /// Export this feature's shape function for each segment instead.
    #[arg(long)]
    pub feature: Option<String>,
    /// Segments for --feature; all when omitted.
    #[arg(long, value_delimiter = ',')]
    pub segments: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct ElbowArgs {
    #[arg(long, default_value_t = 1)]
    pub k_min: usize,
    #[arg(long, default_value_t = 12)]
    pub k_max: usize,
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    /// Encoded columns to cluster; location plus price by default.
    #[arg(long, value_delimiter = ',')]
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Algorithm {
    Kmeans,
    KnnBin,
    Tree,
}

#[derive(Debug, Args)]
pub struct ClusterMapArgs {
    #[arg(long, value_enum, default_value_t = Algorithm::Kmeans)]
    pub algorithm: Algorithm,
    /// Clusters for kmeans.
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    /// Price bins for knn-bin.
    #[arg(long, default_value_t = 2)]
    pub bins: usize,
    #[arg(long, default_value_t = 10)]
    pub neighbors: usize,
    #[arg(long, default_value_t = 15)]
    pub depth: usize,
    #[arg(long, default_value_t = 1)]
    pub min_leaf: usize,
    /// Tree leaves with a mean price above this form cluster 1, the rest
    /// cluster 0. Defaults to the overall mean price.
    #[arg(long)]
    pub leaf_threshold: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    Benchmark,
    EightBlobs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = Preset::Benchmark)]
    pub preset: Preset,
    /// Listings for the benchmark, points per blob for eight-blobs.
    #[arg(long)]
    pub rows: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return report(CliError::Config(format!("--threads: {e}")));
        }
    }
    match std::panic::catch_unwind(|| commands::run(&cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => report(e),
        Err(_) => ExitCode::from(3),
    }
}

fn report(e: CliError) -> ExitCode {
    eprintln!("hedonic: {e}");
    ExitCode::from(e.exit_code())
}
