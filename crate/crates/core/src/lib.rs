//! Sparse autoencoders over precomputed embedding matrices, with the tooling
//! to measure and name what their latents learn.
//!
//! - [`embedding_io`]: SAEM matrix files, label CSVs, center-and-scale normalization
//! - [`sae`]: ReLU autoencoder, analytic gradients, Adam training, diagnostics
//! - [`metrics`]: neuron/label Pearson correlation, concept entropy, top activations
//! - [`autonaming`]: vision-language naming of latents and detection scoring
//! - [`synthgen`]: sparse superposition data with known ground truth

pub mod autonaming;
pub mod embedding_io;
pub mod matrix;
pub mod metrics;
pub mod sae;
pub mod seed;
pub mod synthgen;

pub use embedding_io::{LabelMatrix, NormalizationStats};
pub use matrix::Matrix;
pub use sae::{SaeParams, TrainConfig};
