use log::warn;

use super::SeriesTable;
use crate::error::{contract, Result};
use crate::numcore::Tensor;

/// Pearson correlation matrix across channels (two-pass).
///
/// A constant channel has no defined correlation; it gets zeros off the
/// diagonal and a one on it, and a warning is logged.
pub fn pearson_corr(table: &SeriesTable) -> Result<Tensor> {
    let n = table.n_channels();
    let t = table.len();
    if t < 2 {
        return Err(contract("correlation needs at least two rows"));
    }
    let vals = table.values();
    let mut means = vec![0.0; n];
    for row in vals.chunks_exact(n) {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= t as f64);

    let mut cov = vec![0.0; n * n];
    let mut centered = vec![0.0; n];
    for row in vals.chunks_exact(n) {
        for c in 0..n {
            centered[c] = row[c] - means[c];
        }
        for a in 0..n {
            let ca = centered[a];
            for b in a..n {
                cov[a * n + b] += ca * centered[b];
            }
        }
    }
    let sd: Vec<f64> = (0..n).map(|c| cov[c * n + c].sqrt()).collect();
    for (c, s) in sd.iter().enumerate() {
        if *s == 0.0 {
            warn!(
                "channel `{}` is constant; its correlations are set to 0",
                table.channel_names()[c]
            );
        }
    }

    let mut out = vec![0.0; n * n];
    for a in 0..n {
        out[a * n + a] = 1.0;
        for b in a + 1..n {
            let r = if sd[a] == 0.0 || sd[b] == 0.0 {
                0.0
            } else {
                (cov[a * n + b] / (sd[a] * sd[b])).clamp(-1.0, 1.0)
            };
            out[a * n + b] = r;
            out[b * n + a] = r;
        }
    }
    Tensor::new([n, n], out)
}
