pub mod clustering;
pub mod evalkit;
pub mod gam;
pub mod geo;
pub mod linreg;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod tabular;

pub use scalar::Scalar;

pub type KMeansModel = clustering::KMeansModel<f64>;
pub type TreeClusterModel = clustering::TreeClusterModel<f64>;
pub type KnnBinModel = clustering::KnnBinModel<f64>;
pub type LinearModel = linreg::LinearModel<f64>;
pub type AdditiveModel = gam::AdditiveModel<f64>;
pub type ShapeBin = gam::ShapeBin<f64>;
