//! Probabilistic forecasting of sparse, irregularly sampled vital-sign
//! streams.
//!
//! Events are encoded as (feature, time, value, mask) triplets, a
//! conditional denoising-diffusion model with a Transformer backbone is
//! trained to predict the noise added to target values, and forecasts
//! are scored with quantile-based probabilistic metrics.

pub mod catalog;
pub mod dataset;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod events;
pub mod forecast;
pub mod hash;
pub mod metrics;
pub mod pipeline;
pub mod schedule;
pub mod synth;
pub mod train;
pub mod triplet;

pub use catalog::{Feature, FeatureCatalog, FeatureKind};
pub use denoiser::{Denoiser, DenoiserConfig, Topology};
pub use error::CoreError;
pub use schedule::{DiffusionSchedule, ScheduleKind};
pub use triplet::{IcuSample, Triplet};
