use serde::{Deserialize, Serialize};

use super::SeriesTable;
use crate::error::{contract, Result};

/// Per-channel z-scoring with statistics fitted on one table (the train split).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population statistics of each channel; a constant channel gets std 1.
    pub fn fit(table: &SeriesTable) -> Result<Self> {
        if table.is_empty() {
            return Err(contract("cannot fit a standardizer on an empty table"));
        }
        let n = table.n_channels();
        let t = table.len() as f64;
        let mut mean = vec![0.0; n];
        for row in table.values().chunks_exact(n) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= t);
        let mut var = vec![0.0; n];
        for row in table.values().chunks_exact(n) {
            for c in 0..n {
                var[c] += (row[c] - mean[c]).powi(2);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / t).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn transform(&self, table: &SeriesTable) -> Result<SeriesTable> {
        let n = table.n_channels();
        if n != self.mean.len() {
            return Err(contract(format!(
                "standardizer fitted on {} channels, table has {n}",
                self.mean.len()
            )));
        }
        let mut out = table.clone();
        for row in out.values_mut().chunks_exact_mut(n) {
            for ((v, m), sd) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / sd;
            }
        }
        Ok(out)
    }
}
