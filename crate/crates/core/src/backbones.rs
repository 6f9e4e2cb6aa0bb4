//! Base forecasters: a per-channel hidden state followed by a per-channel,
//! bias-free linear map from the hidden state to the horizon.
//!
//! Two backbones are provided:
//!
//! * **DLinear** splits the (normalised) lookback into a moving-average trend
//!   and the seasonal remainder. Both branches are identity hidden maps with
//!   `D = T`, so the model has two final layers, one per branch, whose
//!   outputs are summed.
//! * **MLP** passes every channel through the same fully connected ReLU
//!   trunk `T -> D1 -> ... -> D` and finishes with one final layer.
//!
//! Batches are channel-major: inputs are `[N, B, T]`, hidden states
//! `[N, B, D]` and forecasts `[N, B, H]`.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::numcore::{SeededRng, Tape, Tensor, Var};
use crate::params::{Bound, ParamMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    Dlinear,
    Mlp,
}

impl BackboneKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackboneKind::Dlinear => "dlinear",
            BackboneKind::Mlp => "mlp",
        }
    }
}

fn default_kernel() -> usize {
    25
}

fn default_mlp_hidden() -> Vec<usize> {
    vec![128]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    /// DLinear moving-average window (odd).
    pub kernel: usize,
    /// MLP trunk widths after the input; the last one is `D`.
    pub mlp_hidden: Vec<usize>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self::dlinear()
    }
}

impl BackboneConfig {
    pub fn dlinear() -> Self {
        Self {
            kind: BackboneKind::Dlinear,
            kernel: default_kernel(),
            mlp_hidden: default_mlp_hidden(),
        }
    }

    pub fn mlp(hidden: Vec<usize>) -> Self {
        Self {
            kind: BackboneKind::Mlp,
            kernel: default_kernel(),
            mlp_hidden: hidden,
        }
    }

    pub fn validate(&self, lookback: usize) -> Result<()> {
        match self.kind {
            BackboneKind::Dlinear => {
                if self.kernel.is_multiple_of(2) || self.kernel > lookback {
                    return Err(contract(format!(
                        "DLinear kernel must be odd and at most the lookback {lookback}, got {}",
                        self.kernel
                    )));
                }
            }
            BackboneKind::Mlp => {
                if self.mlp_hidden.is_empty() || self.mlp_hidden.contains(&0) {
                    return Err(contract("MLP trunk needs at least one positive width"));
                }
            }
        }
        Ok(())
    }

    /// Hidden width `D` seen by the final layer(s).
    pub fn hidden_dim(&self, lookback: usize) -> usize {
        match self.kind {
            BackboneKind::Dlinear => lookback,
            BackboneKind::Mlp => *self.mlp_hidden.last().expect("validated"),
        }
    }

    /// Names of the final-layer slots, one per hidden state.
    pub fn slots(&self) -> &'static [&'static str] {
        match self.kind {
            BackboneKind::Dlinear => &["trend", "seasonal"],
            BackboneKind::Mlp => &["out"],
        }
    }

    /// Trunk parameters (empty for DLinear).
    pub fn init_params(&self, lookback: usize, rng: &mut SeededRng) -> ParamMap {
        let mut params = ParamMap::new();
        if self.kind == BackboneKind::Mlp {
            let mut fan_in = lookback;
            for (i, &width) in self.mlp_hidden.iter().enumerate() {
                let bound = 1.0 / (fan_in as f64).sqrt();
                params.insert(trunk_weight(i), rng.uniform_tensor([fan_in, width], bound));
                params.insert(trunk_bias(i), rng.uniform_tensor([width], bound));
                fan_in = width;
            }
        }
        params
    }
}

pub(crate) fn trunk_weight(i: usize) -> String {
    format!("backbone.layer{i}.weight")
}

pub(crate) fn trunk_bias(i: usize) -> String {
    format!("backbone.layer{i}.bias")
}

/// Name of the plain final-layer weight for a slot.
pub fn final_weight(slot: &str) -> String {
    format!("final.{slot}.weight")
}

/// Trend (centred moving average, replicate padding) and seasonal remainder.
pub fn decompose(x: &Tensor, kernel: usize) -> Result<(Tensor, Tensor)> {
    let tape = Tape::new();
    let (trend, seasonal) = decompose_var(tape.constant(x.clone()), kernel)?;
    Ok((trend.value(), seasonal.value()))
}

pub fn decompose_var<'t>(x: Var<'t>, kernel: usize) -> Result<(Var<'t>, Var<'t>)> {
    let trend = x.moving_average(kernel)?;
    let seasonal = x.sub(trend)?;
    Ok((trend, seasonal))
}

/// Hidden state(s) of a `[N, B, T]` batch, paired with their slot names.
pub fn forward_hidden<'t>(
    cfg: &BackboneConfig,
    params: &Bound<'t>,
    x: Var<'t>,
) -> Result<Vec<(&'static str, Var<'t>)>> {
    let shape = x.shape();
    if shape.len() != 3 {
        return Err(contract(format!(
            "backbone input must be [N, B, T], got {shape:?}"
        )));
    }
    match cfg.kind {
        BackboneKind::Dlinear => {
            let (trend, seasonal) = decompose_var(x, cfg.kernel)?;
            Ok(vec![("trend", trend), ("seasonal", seasonal)])
        }
        BackboneKind::Mlp => {
            let (n, b, t) = (shape[0], shape[1], shape[2]);
            let mut h = x.reshape([n * b, t])?;
            for i in 0..cfg.mlp_hidden.len() {
                h = h
                    .matmul(params.get(&trunk_weight(i))?)?
                    .add(params.get(&trunk_bias(i))?)?
                    .relu();
            }
            let d = cfg.hidden_dim(t);
            Ok(vec![("out", h.reshape([n, b, d])?)])
        }
    }
}

/// Applies one final layer to a `[N, B, D]` hidden batch.
///
/// `weight` is either per-channel `[N, H, D]` or shared `[H, D]`.
pub fn apply_final_var<'t>(weight: Var<'t>, hidden: Var<'t>) -> Result<Var<'t>> {
    let ws = weight.shape();
    let hs = hidden.shape();
    let mismatch = || Error::Dimension {
        op: "apply_final",
        lhs: ws.clone(),
        rhs: hs.clone(),
    };
    if hs.len() != 3 {
        return Err(mismatch());
    }
    let (n, b, d) = (hs[0], hs[1], hs[2]);
    match ws.len() {
        3 if ws[0] == n && ws[2] == d => hidden.bmm_nt(weight),
        2 if ws[1] == d => {
            let h = ws[0];
            hidden
                .reshape([n * b, d])?
                .matmul_nt(weight)?
                .reshape([n, b, h])
        }
        _ => Err(mismatch()),
    }
}

/// Per-channel final layer `W_K ∈ R^{N×H×D}` without bias.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalLayer {
    pub weights: Tensor,
}

impl FinalLayer {
    pub fn new(weights: Tensor) -> Result<Self> {
        if weights.ndim() != 3 {
            return Err(contract(format!(
                "final-layer weights must be [N, H, D], got {:?}",
                weights.shape()
            )));
        }
        Ok(Self { weights })
    }

    /// `ŷ[n] = W_K[n] · h[n]` for a single `N×D` hidden state.
    pub fn apply(&self, hidden: &Tensor) -> Result<Tensor> {
        apply_final(&[self], &[hidden])
    }
}

/// Sum of final-layer outputs over slots, for single `N×D` hidden states.
pub fn apply_final(layers: &[&FinalLayer], hidden: &[&Tensor]) -> Result<Tensor> {
    if layers.len() != hidden.len() || layers.is_empty() {
        return Err(contract("one hidden state per final layer required"));
    }
    let tape = Tape::new();
    let mut total: Option<Var<'_>> = None;
    for (layer, h) in layers.iter().zip(hidden) {
        let hs = h.shape();
        if hs.len() != 2 {
            return Err(Error::Dimension {
                op: "apply_final",
                lhs: layer.weights.shape().to_vec(),
                rhs: hs.to_vec(),
            });
        }
        let hb = tape.constant(h.reshape([hs[0], 1, hs[1]])?);
        let y = apply_final_var(tape.constant(layer.weights.clone()), hb)?;
        total = Some(match total {
            Some(acc) => acc.add(y)?,
            None => y,
        });
    }
    let y = total.expect("non-empty").value();
    let s = y.shape().to_vec();
    y.reshape([s[0], s[2]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::set_seed;

    #[test]
    fn unit_kernel_and_constant_series() {
        let x = set_seed(1).normal_tensor([2, 9], 1.0);
        let (trend, seasonal) = decompose(&x, 1).unwrap();
        assert_eq!(trend, x);
        assert!(seasonal.data().iter().all(|&v| v == 0.0));

        let c = Tensor::full([3, 11], 4.25);
        let (trend, seasonal) = decompose(&c, 5).unwrap();
        assert_eq!(trend, c);
        assert!(seasonal.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ramp_with_kernel_three() {
        let ramp = Tensor::new([1, 10], (0..10).map(f64::from).collect()).unwrap();
        let (trend, _) = decompose(&ramp, 3).unwrap();
        // Hand enumeration over the padded ramp 0,0,1,...,9,9.
        let want = [
            1.0 / 3.0,
            1.0,
            2.0,
            3.0,
            4.0,
            5.0,
            6.0,
            7.0,
            8.0,
            26.0 / 3.0,
        ];
        for (got, want) in trend.data().iter().zip(want) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(decompose(&Tensor::zeros([1, 8]), 4).is_err());
        assert!(BackboneConfig {
            kernel: 24,
            ..BackboneConfig::dlinear()
        }
        .validate(336)
        .is_err());
    }

    #[test]
    fn branches_sum_to_input() {
        let x = set_seed(2).normal_tensor([4, 48], 3.0);
        let (trend, seasonal) = decompose(&x, 25).unwrap();
        assert!(trend.add(&seasonal).unwrap().max_abs_diff(&x).unwrap() < 1e-10);
    }

    #[test]
    fn zero_and_identity_final_layers() {
        let h = set_seed(3).normal_tensor([2, 4], 1.0);
        let zero = FinalLayer::new(Tensor::zeros([2, 3, 4])).unwrap();
        assert!(zero.apply(&h).unwrap().data().iter().all(|&v| v == 0.0));

        let eye = Tensor::eye(4);
        let both = Tensor::concat(
            &[
                eye.reshape([1, 4, 4]).unwrap(),
                eye.reshape([1, 4, 4]).unwrap(),
            ],
            0,
        )
        .unwrap();
        let ident = FinalLayer::new(both).unwrap();
        assert_eq!(ident.apply(&h).unwrap(), h);
    }

    #[test]
    fn final_layer_matches_loop_oracle() {
        let mut rng = set_seed(4);
        let (n, hz, d) = (2, 3, 4);
        let w = rng.normal_tensor([n, hz, d], 1.0);
        let h = rng.normal_tensor([n, d], 1.0);
        let y = FinalLayer::new(w.clone()).unwrap().apply(&h).unwrap();
        for c in 0..n {
            for i in 0..hz {
                let want: f64 = (0..d).map(|j| w.get(&[c, i, j]) * h.get(&[c, j])).sum();
                assert!((y.get(&[c, i]) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_a_dimension_error() {
        let layer = FinalLayer::new(Tensor::zeros([2, 3, 4])).unwrap();
        assert!(matches!(
            layer.apply(&Tensor::zeros([2, 5])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn identity_mlp_passes_nonnegative_input() {
        let cfg = BackboneConfig::mlp(vec![6, 6]);
        let mut params = ParamMap::new();
        for i in 0..2 {
            params.insert(trunk_weight(i), Tensor::eye(6));
            params.insert(trunk_bias(i), Tensor::zeros([6]));
        }
        let tape = Tape::new();
        let bound = Bound::new(&tape, &params, &ParamMap::new());
        let x = set_seed(5).uniform_tensor([3, 2, 6], 1.0).map(f64::abs);
        let hidden = forward_hidden(&cfg, &bound, tape.constant(x.clone())).unwrap();
        assert_eq!(hidden.len(), 1);
        assert_eq!(hidden[0].1.value(), x);
    }

    #[test]
    fn dlinear_hidden_on_constant_input() {
        let cfg = BackboneConfig {
            kernel: 5,
            ..BackboneConfig::dlinear()
        };
        let tape = Tape::new();
        let bound = Bound::new(&tape, &ParamMap::new(), &ParamMap::new());
        let x = Tensor::full([2, 3, 12], -1.5);
        let hidden = forward_hidden(&cfg, &bound, tape.constant(x.clone())).unwrap();
        assert_eq!(hidden[0].1.value(), x);
        assert!(hidden[1].1.value().data().iter().all(|&v| v == 0.0));
    }
}
