//! Clustering toolkit for tabular cohorts.
//!
//! The crate covers the full pipeline used to compare traditional, hybrid and
//! deep clustering on EHR-style data:
//!
//! * [`data`]: CSV loading, plausibility bounds, missing-rate filtering,
//!   median imputation, z-scoring, stratified subsampling and a synthetic
//!   cohort generator.
//! * [`traditional`]: k-means (Lloyd + k-means++) and Gaussian mixture EM.
//! * [`autoencoder`]: a fully-connected autoencoder with hand-written
//!   backpropagation and Adam.
//! * [`deepcluster`]: joint reconstruction + KL fine-tuning with Student-t or
//!   Gaussian soft assignments.
//! * [`ensemble`]: label alignment, the embedding-dimension ensemble and
//!   majority voting.
//! * [`metrics`]: ACC (Hungarian), NMI, ARI and cross-method average ranks.

pub mod autoencoder;
pub mod data;
pub mod deepcluster;
pub mod ensemble;
pub mod labels;
pub mod linalg;
pub mod metrics;
pub mod seed;
mod serde_arrays;
pub mod traditional;

pub use autoencoder::{Activation, AutoencoderModel, TrainConfig};
pub use data::{Dataset, FeatureSpec, SyntheticSpec};
pub use deepcluster::{DeepClusterConfig, DeepClusterModel, Variant};
pub use labels::{LabelMatrix, LabelVector};
pub use metrics::ScoreReport;
pub use traditional::{GmmModel, KMeansModel};
