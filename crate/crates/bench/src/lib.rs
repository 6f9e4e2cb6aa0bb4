//! Shared fixtures for the criterion benches in `benches/`.

use hnmvts::backbones::BackboneConfig;
use hnmvts::data::{gen_synthetic, SeriesTable, SyntheticSpec, WindowSet};
use hnmvts::numcore::set_seed;
use hnmvts::{ForecastModel, ModelConfig, Tensor, Variant};

/// Channel count, lookback and horizon of the ETTm2 H=96 setting.
pub const N: usize = 7;
pub const LOOKBACK: usize = 336;
pub const HORIZON: usize = 96;

pub fn series(len: usize) -> SeriesTable {
    gen_synthetic(&SyntheticSpec::two_groups(N, len, 0.9, 0.2), 0).expect("valid synthetic spec")
}

pub fn config(variant: Variant) -> ModelConfig {
    ModelConfig {
        n_channels: N,
        lookback: LOOKBACK,
        horizon: HORIZON,
        backbone: BackboneConfig::dlinear(),
        variant,
        hyper: Default::default(),
        revin: true,
        shared_final: false,
    }
}

pub fn model(variant: Variant, train: &SeriesTable) -> ForecastModel {
    ForecastModel::new(config(variant), train, &mut set_seed(0)).expect("valid model config")
}

/// Windows over a series just long enough for `count` of them.
pub fn windows(count: usize) -> WindowSet {
    WindowSet::new(series(LOOKBACK + HORIZON + count - 1), LOOKBACK, HORIZON).expect("long enough")
}

pub fn window() -> Tensor {
    set_seed(1).normal_tensor([N, LOOKBACK], 1.0)
}
