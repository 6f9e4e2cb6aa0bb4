use serde::{Deserialize, Serialize};

use super::SeriesTable;
use crate::error::{contract, Result};
use crate::numcore::SeededRng;

fn default_ar() -> f64 {
    0.7
}

/// Grouped channels sharing latent AR(1) drivers.
///
/// Channel `n` in group `g` is
/// `sqrt(rho) * s_g + sqrt(1 - rho) * u_n + sigma * e_n`, where `s_g` and
/// `u_n` are independent unit-variance AR(1) processes with coefficient `ar`
/// and `e_n` is white noise. Two channels of one group therefore correlate
/// at about `rho / (1 + sigma^2)`; channels of different groups are
/// independent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub length: usize,
    /// Group id of each channel; the channel count is `groups.len()`.
    pub groups: Vec<usize>,
    pub rho: f64,
    pub sigma: f64,
    #[serde(default = "default_ar")]
    pub ar: f64,
}

impl SyntheticSpec {
    /// `n` channels split into two contiguous halves.
    pub fn two_groups(n: usize, length: usize, rho: f64, sigma: f64) -> Self {
        Self {
            length,
            groups: (0..n).map(|c| usize::from(c >= n / 2)).collect(),
            rho,
            sigma,
            ar: default_ar(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(contract(format!(
                "rho must lie in [0, 1], got {}",
                self.rho
            )));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(contract(format!(
                "sigma must be nonnegative, got {}",
                self.sigma
            )));
        }
        if self.ar.is_nan() || self.ar.abs() >= 1.0 {
            return Err(contract(format!("ar must lie in (-1, 1), got {}", self.ar)));
        }
        if self.groups.is_empty() || self.length < 2 {
            return Err(contract(
                "synthetic series needs channels and at least two steps",
            ));
        }
        Ok(())
    }
}

fn ar1(rng: &mut SeededRng, len: usize, ar: f64) -> Vec<f64> {
    let innov = (1.0 - ar * ar).sqrt();
    let mut out = Vec::with_capacity(len);
    let mut s = rng.normal();
    for _ in 0..len {
        out.push(s);
        s = ar * s + innov * rng.normal();
    }
    out
}

/// Generates the series described by `spec`; bit-reproducible per `seed`.
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SeriesTable> {
    spec.validate()?;
    let root = SeededRng::new(seed);
    let n_groups = spec.groups.iter().max().map_or(0, |g| g + 1);
    let latents: Vec<Vec<f64>> = (0..n_groups)
        .map(|g| ar1(&mut root.fork(g as u64), spec.length, spec.ar))
        .collect();
    let (shared, own) = (spec.rho.sqrt(), (1.0 - spec.rho).sqrt());
    let columns: Vec<Vec<f64>> = spec
        .groups
        .iter()
        .enumerate()
        .map(|(c, &g)| {
            let mut rng = root.fork(1_000_000 + c as u64);
            let idio = ar1(&mut rng, spec.length, spec.ar);
            (0..spec.length)
                .map(|t| {
                    let noise = if spec.sigma > 0.0 {
                        spec.sigma * rng.normal()
                    } else {
                        0.0
                    };
                    shared * latents[g][t] + own * idio[t] + noise
                })
                .collect()
        })
        .collect();
    let names = (0..spec.groups.len()).map(|c| format!("c{c}")).collect();
    let mut table = SeriesTable::from_columns(&columns, names)?;
    table.granularity = Some("synthetic".into());
    Ok(table)
}
