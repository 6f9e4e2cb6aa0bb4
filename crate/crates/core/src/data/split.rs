use serde::{Deserialize, Serialize};

use super::SeriesTable;
use crate::error::{contract, Result};

/// Train/validation/test proportions plus optional leading truncation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    #[serde(default = "default_ratios")]
    pub ratios: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncate_to: Option<usize>,
}

fn default_ratios() -> [f64; 3] {
    [0.7, 0.2, 0.1]
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            ratios: default_ratios(),
            truncate_to: None,
        }
    }
}

impl SplitSpec {
    pub fn new(ratios: [f64; 3], truncate_to: Option<usize>) -> Result<Self> {
        let spec = Self {
            ratios,
            truncate_to,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Normalises arbitrary nonnegative weights, e.g. `[7, 2, 1]`.
    pub fn from_weights(weights: [f64; 3], truncate_to: Option<usize>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || total <= 0.0 {
            return Err(contract(format!("invalid split weights {weights:?}")));
        }
        Self::new(weights.map(|w| w / total), truncate_to)
    }

    pub fn validate(&self) -> Result<()> {
        let total: f64 = self.ratios.iter().sum();
        if self.ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(contract(format!(
                "split ratios must be nonnegative and sum to 1, got {:?}",
                self.ratios
            )));
        }
        if self.truncate_to == Some(0) {
            return Err(contract("truncate_to must be positive"));
        }
        Ok(())
    }

    /// Row boundaries `(train_end, val_end, len)` for a table of `len` rows.
    pub fn boundaries(&self, len: usize) -> (usize, usize, usize) {
        let len = self.truncate_to.map_or(len, |cap| cap.min(len));
        // Guards against 0.7 + 0.2 landing a hair below 0.9.
        let cut = |frac: f64| ((frac * len as f64 + 1e-7).floor() as usize).min(len);
        let train_end = cut(self.ratios[0]);
        let val_end = cut(self.ratios[0] + self.ratios[1]).max(train_end);
        (train_end, val_end, len)
    }
}

/// Contiguous chronological train/validation/test segments.
pub fn chrono_split(
    table: &SeriesTable,
    spec: &SplitSpec,
) -> Result<(SeriesTable, SeriesTable, SeriesTable)> {
    spec.validate()?;
    let (a, b, len) = spec.boundaries(table.len());
    Ok((table.rows(0, a), table.rows(a, b), table.rows(b, len)))
}
