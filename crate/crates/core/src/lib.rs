//! Shared-manifold metric learning for heterogeneous sensors: per-sensor
//! autoencoders trained with a multimodal triplet objective, offline triplet
//! mining, classification in the shared latent space, and missing-sensor
//! translation.

// `!(x > 0.0)` style checks deliberately reject NaN along with the bound.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod error;
pub mod inference;
pub mod losses;
pub mod mining;
pub mod model;
pub mod numerics;
pub mod training;
pub mod translation;

pub use config::ExperimentConfig;
pub use data::{MultimodalDataset, SensorData, Split};
pub use error::{Error, ErrorKind, Result};
pub use inference::MetricsReport;
pub use losses::{LossBreakdown, LossConfig};
pub use mining::{MiningConfig, Strategy, TripletBatch};
pub use model::{AutoencoderConfig, EmbeddingSet, SensorAutoencoder};
pub use numerics::Tensor;
pub use training::{TrainingPlan, TrainingReport, TripletSensor};
pub use translation::LatentRegressor;
