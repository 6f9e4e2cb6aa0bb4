//! Hypernetwork-generated final layers for multivariate time-series forecasting.
//!
//! A base forecaster maps each channel's lookback window to a hidden state and
//! finishes with a per-channel linear layer. Here that last layer is produced
//! by a small generator fed with one learnable embedding per channel, so
//! channels with similar embeddings share statistical strength. After
//! training the generator is evaluated once and its output is baked into a
//! plain linear layer, leaving inference cost unchanged.

pub mod backbones;
pub mod bench;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod hypernet;
pub mod model;
pub mod normalization;
pub mod numcore;
pub mod params;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{ForecastModel, ModelConfig, ModelForm, Variant};
pub use numcore::Tensor;
