//! Reversible instance normalisation.
//!
//! Each series (the last axis of the input) is standardised by its own mean
//! and population standard deviation before entering the model, and the
//! forecast is mapped back with the same statistics. There are no learnable
//! affine parameters.

use crate::error::Result;
use crate::numcore::{Tape, Tensor, Var};

pub const REVIN_EPS: f64 = 1e-5;

/// Per-series statistics over the lookback axis.
///
/// `mean` and `std` keep the input's shape with the last axis reduced to 1,
/// e.g. `[N, 1]` for an `N×T` window or `[N, B, 1]` for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceStats {
    pub mean: Tensor,
    pub std: Tensor,
    pub eps: f64,
}

/// Tape-side statistics; `denom` is `std + eps`.
#[derive(Debug, Clone, Copy)]
pub struct RevinVars<'t> {
    pub mean: Var<'t>,
    pub std: Var<'t>,
    pub denom: Var<'t>,
}

impl<'t> RevinVars<'t> {
    pub fn to_stats(&self) -> InstanceStats {
        InstanceStats {
            mean: self.mean.value(),
            std: self.std.value(),
            eps: REVIN_EPS,
        }
    }
}

/// `(x - mean) / (std + eps)` along the last axis, recorded on the tape.
pub fn normalize<'t>(x: Var<'t>) -> Result<(Var<'t>, RevinVars<'t>)> {
    let axis = x.shape().len() - 1;
    let mean = x.mean_axis(axis)?;
    let centered = x.sub(mean)?;
    let std = centered.square().mean_axis(axis)?.sqrt();
    let denom = std.add_scalar(REVIN_EPS);
    Ok((centered.div(denom)?, RevinVars { mean, std, denom }))
}

/// `y * (std + eps) + mean`, recorded on the tape.
pub fn denormalize<'t>(y: Var<'t>, stats: &RevinVars<'t>) -> Result<Var<'t>> {
    y.mul(stats.denom)?.add(stats.mean)
}

pub fn revin_forward(x: &Tensor) -> Result<(Tensor, InstanceStats)> {
    let tape = Tape::new();
    let (norm, vars) = normalize(tape.constant(x.clone()))?;
    Ok((norm.value(), vars.to_stats()))
}

pub fn revin_reverse(y_norm: &Tensor, stats: &InstanceStats) -> Result<Tensor> {
    y_norm
        .mul(&stats.std.map(|s| s + stats.eps))?
        .add(&stats.mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{finite_diff_check, set_seed, DEFAULT_STEP};

    #[test]
    fn constant_channel() {
        let x = Tensor::new([1, 4], vec![2.5; 4]).unwrap();
        let (z, stats) = revin_forward(&x).unwrap();
        assert_eq!(z.data(), &[0.0; 4]);
        assert_eq!(stats.mean.data(), &[2.5]);
        assert_eq!(stats.std.data(), &[0.0]);
    }

    #[test]
    fn symmetric_pair() {
        let x = Tensor::new([1, 2], vec![-1.0, 1.0]).unwrap();
        let (z, stats) = revin_forward(&x).unwrap();
        assert_eq!(stats.mean.data(), &[0.0]);
        assert_eq!(stats.std.data(), &[1.0]);
        let expect = 1.0 / (1.0 + REVIN_EPS);
        assert!((z.data()[0] + expect).abs() < 1e-15 && (z.data()[1] - expect).abs() < 1e-15);
    }

    #[test]
    fn random_window_is_standardised() {
        let x = set_seed(4)
            .normal_tensor([3, 64], 5.0)
            .add(&Tensor::scalar(7.0))
            .unwrap();
        let (z, _) = revin_forward(&x).unwrap();
        for row in z.data().chunks(64) {
            let m = row.iter().sum::<f64>() / 64.0;
            let s = (row.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 64.0).sqrt();
            assert!(m.abs() < 1e-9);
            assert!((s - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn zero_forecast_maps_to_means() {
        let x = set_seed(8).normal_tensor([2, 10], 1.0);
        let (_, stats) = revin_forward(&x).unwrap();
        let y = revin_reverse(&Tensor::zeros([2, 3]), &stats).unwrap();
        for c in 0..2 {
            for h in 0..3 {
                assert_eq!(y.get(&[c, h]), stats.mean.get(&[c, 0]));
            }
        }
    }

    #[test]
    fn reverse_undoes_forward() {
        let x = set_seed(12).normal_tensor([4, 20], 3.0);
        let (z, stats) = revin_forward(&x).unwrap();
        assert!(revin_reverse(&z, &stats).unwrap().max_abs_diff(&x).unwrap() < 1e-10);
        let head = z.slice_axis(1, 0, 6).unwrap();
        let back = revin_reverse(&head, &stats).unwrap();
        assert!(back.max_abs_diff(&x.slice_axis(1, 0, 6).unwrap()).unwrap() < 1e-10);
    }

    #[test]
    fn reverse_matches_hand_formula() {
        let mut rng = set_seed(21);
        let stats = InstanceStats {
            mean: rng.normal_tensor([3, 1], 2.0),
            std: rng.uniform_tensor([3, 1], 1.0).map(f64::abs),
            eps: REVIN_EPS,
        };
        let y = rng.normal_tensor([3, 5], 1.0);
        let out = revin_reverse(&y, &stats).unwrap();
        for c in 0..3 {
            for h in 0..5 {
                let want =
                    y.get(&[c, h]) * (stats.std.get(&[c, 0]) + REVIN_EPS) + stats.mean.get(&[c, 0]);
                assert_eq!(out.get(&[c, h]), want);
            }
        }
    }

    #[test]
    fn shift_invariance() {
        let x = set_seed(30).normal_tensor([2, 32], 1.0);
        let shifted = x
            .add(&Tensor::new([2, 1], vec![100.0, -3.0]).unwrap())
            .unwrap();
        let (a, _) = revin_forward(&x).unwrap();
        let (b, _) = revin_forward(&shifted).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-6);
    }

    #[test]
    fn gradients_flow_both_ways() {
        let mut rng = set_seed(31);
        let x = rng.normal_tensor([2, 8], 2.0);
        let w = rng.normal_tensor([8, 3], 0.5);
        let target = rng.normal_tensor([2, 3], 1.0);
        let err = finite_diff_check(
            |tape, v| {
                let (z, stats) = normalize(v[0])?;
                let y = z.matmul(v[1])?;
                let back = denormalize(y, &stats)?;
                Ok(back.sub(tape.constant(target.clone()))?.square().mean())
            },
            &[x, w],
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
