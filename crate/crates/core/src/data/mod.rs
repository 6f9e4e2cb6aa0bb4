//! Series ingestion, chronological splits, supervised windows and
//! cross-channel statistics.

mod corr;
mod csv;
mod scale;
mod split;
mod synth;
mod window;

pub use self::csv::{load_csv, read_csv, write_csv};
pub use corr::pearson_corr;
pub use scale::Standardizer;
pub use split::{chrono_split, SplitSpec};
pub use synth::{gen_synthetic, SyntheticSpec};
pub use window::{make_windows, WindowPair, WindowSet};

use crate::error::{contract, Result};
use crate::numcore::Tensor;

/// A multivariate series stored time-major: row `i` holds all channels at step `i`.
///
/// Tables produced by splitting may be empty; tables produced by loading
/// always have at least two rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesTable {
    values: Vec<f64>,
    channel_names: Vec<String>,
    pub granularity: Option<String>,
}

impl SeriesTable {
    pub fn new(values: Vec<f64>, channel_names: Vec<String>) -> Result<Self> {
        let n = channel_names.len();
        if n == 0 {
            return Err(contract("a series needs at least one channel"));
        }
        if !values.len().is_multiple_of(n) {
            return Err(contract(format!(
                "{} values do not fill rows of {n} channels",
                values.len()
            )));
        }
        for (i, name) in channel_names.iter().enumerate() {
            if channel_names[..i].contains(name) {
                return Err(contract(format!("duplicate channel name `{name}`")));
            }
        }
        Ok(Self {
            values,
            channel_names,
            granularity: None,
        })
    }

    /// Builds a table from per-channel columns of equal length.
    pub fn from_columns(columns: &[Vec<f64>], channel_names: Vec<String>) -> Result<Self> {
        let len = columns.first().map_or(0, Vec::len);
        if columns.len() != channel_names.len() || columns.iter().any(|c| c.len() != len) {
            return Err(contract(
                "columns must match the channel names and share one length",
            ));
        }
        let mut values = Vec::with_capacity(len * columns.len());
        for t in 0..len {
            values.extend(columns.iter().map(|c| c[t]));
        }
        Self::new(values, channel_names)
    }

    /// Number of timesteps.
    pub fn len(&self) -> usize {
        self.values.len() / self.channel_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn at(&self, t: usize, channel: usize) -> f64 {
        self.values[t * self.n_channels() + channel]
    }

    pub fn column(&self, channel: usize) -> Vec<f64> {
        self.values
            .iter()
            .skip(channel)
            .step_by(self.n_channels())
            .copied()
            .collect()
    }

    /// The `t×N` value matrix.
    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::new([self.len(), self.n_channels()], self.values.clone())
    }

    /// Rows `start..end` as a new table.
    pub fn rows(&self, start: usize, end: usize) -> SeriesTable {
        let n = self.n_channels();
        SeriesTable {
            values: self.values[start * n..end * n].to_vec(),
            channel_names: self.channel_names.clone(),
            granularity: self.granularity.clone(),
        }
    }
}
