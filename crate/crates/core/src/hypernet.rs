//! Channel embeddings and the generator that turns them into final-layer
//! weights.
//!
//! Every channel `n` owns an embedding `z[n] ∈ R^d`. A generator maps the
//! embedding matrix `Z ∈ R^{N×d}` to `W_K ∈ R^{N×H×D}`, the weights of the
//! backbone's last linear layer. Channels with nearby embeddings receive
//! nearby weights, so their training signals reinforce each other; distant
//! embeddings leave channels effectively independent.
//!
//! Two generators are available:
//!
//! * [`GeneratorMode::PerChannelLinear`]: `W_K[n] = W_φ[n] · z[n]` with a
//!   separate `H×D×d` tensor per channel and no bias. Adds `N·H·D·d`
//!   parameters per head.
//! * [`GeneratorMode::SharedMlp`]: one MLP `R^d -> R^{H·D}` applied to every
//!   row of `Z`, ReLU hidden layers with biases and a bias-free output layer.
//!
//! Because the generated weights do not depend on the input window they can
//! be computed once after training and baked into a plain final layer.

use serde::{Deserialize, Serialize};

use crate::data::{pearson_corr, SeriesTable};
use crate::error::{contract, Result};
use crate::numcore::{pca_project, SeededRng, Tape, Tensor, Var};
use crate::params::{Bound, ParamMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorMode {
    PerChannelLinear,
    SharedMlp,
}

fn default_generator_hidden() -> Vec<usize> {
    vec![64]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperConfig {
    pub mode: GeneratorMode,
    /// Embedding width `d`; `None` means one dimension per channel.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedding_dim: Option<usize>,
    pub learnable_embeddings: bool,
    /// Hidden widths of the shared MLP generator.
    pub generator_hidden: Vec<usize>,
}

impl Default for HyperConfig {
    fn default() -> Self {
        Self {
            mode: GeneratorMode::PerChannelLinear,
            embedding_dim: None,
            learnable_embeddings: true,
            generator_hidden: default_generator_hidden(),
        }
    }
}

impl HyperConfig {
    pub fn embedding_dim_for(&self, n_channels: usize) -> usize {
        self.embedding_dim.unwrap_or(n_channels)
    }
}

pub const EMBEDDING: &str = "hyper.z";

pub fn w_phi_name(slot: &str) -> String {
    format!("hyper.{slot}.w_phi")
}

pub fn mlp_weight_name(slot: &str, layer: usize) -> String {
    format!("hyper.{slot}.layer{layer}.weight")
}

pub fn mlp_bias_name(slot: &str, layer: usize) -> String {
    format!("hyper.{slot}.layer{layer}.bias")
}

/// The `N×d` embedding matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub z: Tensor,
    pub learnable: bool,
}

/// Embeddings from the train split: channel correlation rows projected onto
/// their top-`d` principal components.
pub fn init_embeddings(train: &SeriesTable, d: usize) -> Result<EmbeddingMatrix> {
    let n = train.n_channels();
    if d == 0 || d > n {
        return Err(contract(format!(
            "embedding dimension {d} must lie in 1..={n}"
        )));
    }
    let corr = pearson_corr(train)?;
    Ok(EmbeddingMatrix {
        z: pca_project(&corr, d)?,
        learnable: true,
    })
}

/// Generator parameters for one head, in either mode.
#[derive(Debug, Clone, PartialEq)]
pub enum GeneratorParams {
    /// `W_φ ∈ R^{N×H×D×d}`.
    PerChannelLinear { w_phi: Tensor },
    /// `(weight [in, out], bias [out] on hidden layers only)`.
    SharedMlp {
        layers: Vec<(Tensor, Option<Tensor>)>,
    },
}

impl GeneratorParams {
    pub fn mode(&self) -> GeneratorMode {
        match self {
            GeneratorParams::PerChannelLinear { .. } => GeneratorMode::PerChannelLinear,
            GeneratorParams::SharedMlp { .. } => GeneratorMode::SharedMlp,
        }
    }

    /// Initial parameters for a head generating `[N, H, D]` from `z`.
    ///
    /// Per-channel mode draws every entry of channel `n`'s slice from
    /// `U(-1/√D, 1/√D)` and divides it by `‖z[n]‖`, so each generated weight
    /// has the variance of a fan-in initialised `H×D` layer. The shared MLP
    /// uses fan-in bounds for its hidden layers and rescales the output layer
    /// the same way using the RMS norm of the last hidden activations.
    pub fn init(
        mode: GeneratorMode,
        z: &Tensor,
        horizon: usize,
        hidden_dim: usize,
        generator_hidden: &[usize],
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let (n, d) = embedding_shape(z)?;
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        match mode {
            GeneratorMode::PerChannelLinear => {
                let slice = horizon * hidden_dim * d;
                let mut data = rng
                    .uniform_tensor([n, horizon, hidden_dim, d], bound)
                    .into_vec();
                for (c, chunk) in data.chunks_exact_mut(slice).enumerate() {
                    let norm = z.data()[c * d..(c + 1) * d]
                        .iter()
                        .map(|v| v * v)
                        .sum::<f64>()
                        .sqrt();
                    let norm = if norm < 1e-8 { 1.0 } else { norm };
                    chunk.iter_mut().for_each(|v| *v /= norm);
                }
                Ok(GeneratorParams::PerChannelLinear {
                    w_phi: Tensor::new([n, horizon, hidden_dim, d], data)?,
                })
            }
            GeneratorMode::SharedMlp => {
                let mut layers = Vec::with_capacity(generator_hidden.len() + 1);
                let mut fan_in = d;
                let mut act = z.clone();
                for &width in generator_hidden {
                    let b = 1.0 / (fan_in as f64).sqrt();
                    let w = rng.uniform_tensor([fan_in, width], b);
                    let bias = rng.uniform_tensor([width], b);
                    act = crate::numcore::matmul(&act, &w)?
                        .add(&bias)?
                        .map(|v| v.max(0.0));
                    layers.push((w, Some(bias)));
                    fan_in = width;
                }
                let rms = (act.data().iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
                let rms = if rms < 1e-8 { 1.0 } else { rms };
                layers.push((
                    rng.uniform_tensor([fan_in, horizon * hidden_dim], bound / rms),
                    None,
                ));
                Ok(GeneratorParams::SharedMlp { layers })
            }
        }
    }

    pub(crate) fn insert_into(&self, slot: &str, params: &mut ParamMap) {
        match self {
            GeneratorParams::PerChannelLinear { w_phi } => {
                params.insert(w_phi_name(slot), w_phi.clone());
            }
            GeneratorParams::SharedMlp { layers } => {
                for (i, (w, b)) in layers.iter().enumerate() {
                    params.insert(mlp_weight_name(slot, i), w.clone());
                    if let Some(b) = b {
                        params.insert(mlp_bias_name(slot, i), b.clone());
                    }
                }
            }
        }
    }

    pub(crate) fn extract(mode: GeneratorMode, slot: &str, params: &ParamMap) -> Result<Self> {
        let missing = |name: &str| contract(format!("missing generator parameter `{name}`"));
        match mode {
            GeneratorMode::PerChannelLinear => {
                let name = w_phi_name(slot);
                let w_phi = params.get(&name).ok_or_else(|| missing(&name))?.clone();
                Ok(GeneratorParams::PerChannelLinear { w_phi })
            }
            GeneratorMode::SharedMlp => {
                let mut layers = Vec::new();
                for i in 0.. {
                    let Some(w) = params.get(&mlp_weight_name(slot, i)) else {
                        break;
                    };
                    layers.push((w.clone(), params.get(&mlp_bias_name(slot, i)).cloned()));
                }
                if layers.is_empty() {
                    return Err(missing(&mlp_weight_name(slot, 0)));
                }
                Ok(GeneratorParams::SharedMlp { layers })
            }
        }
    }
}

fn embedding_shape(z: &Tensor) -> Result<(usize, usize)> {
    match z.shape() {
        &[n, d] => Ok((n, d)),
        other => Err(contract(format!(
            "embeddings must be [N, d], got {other:?}"
        ))),
    }
}

/// One generator head feeding one final-layer slot.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperHead {
    pub z: EmbeddingMatrix,
    pub gen: GeneratorParams,
    pub target: String,
    pub horizon: usize,
    pub hidden_dim: usize,
}

impl HyperHead {
    /// Materialises `W_K ∈ R^{N×H×D}`.
    pub fn generate_weights(&self) -> Result<Tensor> {
        let tape = Tape::new();
        let mut params = ParamMap::new();
        self.gen.insert_into(&self.target, &mut params);
        let bound = Bound::new(&tape, &ParamMap::new(), &params);
        let z = tape.constant(self.z.z.clone());
        let w = generate_weights(
            self.gen.mode(),
            &bound,
            &self.target,
            z,
            self.horizon,
            self.hidden_dim,
        )?;
        Ok(w.value())
    }
}

/// Records the generator of `slot` on the tape: `Z -> W_K`, shape `[N, H, D]`.
pub fn generate_weights<'t>(
    mode: GeneratorMode,
    params: &Bound<'t>,
    slot: &str,
    z: Var<'t>,
    horizon: usize,
    hidden_dim: usize,
) -> Result<Var<'t>> {
    let zs = z.shape();
    let (n, d) = match zs.as_slice() {
        &[n, d] => (n, d),
        other => {
            return Err(contract(format!(
                "embeddings must be [N, d], got {other:?}"
            )))
        }
    };
    let out = horizon * hidden_dim;
    match mode {
        GeneratorMode::PerChannelLinear => {
            let w_phi = params.get(&w_phi_name(slot))?;
            let expected = [n, horizon, hidden_dim, d];
            if w_phi.shape() != expected {
                return Err(contract(format!(
                    "W_phi for `{slot}` has shape {:?}, expected {expected:?}",
                    w_phi.shape()
                )));
            }
            w_phi
                .reshape([n, out, d])?
                .bmm(z.reshape([n, d, 1])?)?
                .reshape([n, horizon, hidden_dim])
        }
        GeneratorMode::SharedMlp => {
            let mut h = z;
            let mut layer = 0;
            loop {
                let w = params.get(&mlp_weight_name(slot, layer))?;
                h = h.matmul(w)?;
                match params.get(&mlp_bias_name(slot, layer)) {
                    Ok(b) => h = h.add(b)?.relu(),
                    Err(_) => break,
                }
                layer += 1;
            }
            if h.shape() != [n, out] {
                return Err(contract(format!(
                    "shared generator for `{slot}` outputs {:?}, expected [{n}, {out}]",
                    h.shape()
                )));
            }
            h.reshape([n, horizon, hidden_dim])
        }
    }
}

/// Trainable parameters added by the hypernetwork.
///
/// Per-channel mode: `heads·N·H·D·d`. Shared-MLP mode: per head, the hidden
/// layers' weights and biases plus the bias-free `h_last·H·D` output layer.
/// Either way `N·d` more when the embeddings are learnable.
#[allow(clippy::too_many_arguments)]
pub fn param_count(
    n: usize,
    horizon: usize,
    hidden_dim: usize,
    d: usize,
    learnable_z: bool,
    mode: GeneratorMode,
    heads: usize,
    generator_hidden: &[usize],
) -> usize {
    let per_head = match mode {
        GeneratorMode::PerChannelLinear => n * horizon * hidden_dim * d,
        GeneratorMode::SharedMlp => {
            let mut total = 0;
            let mut fan_in = d;
            for &w in generator_hidden {
                total += fan_in * w + w;
                fan_in = w;
            }
            total + fan_in * horizon * hidden_dim
        }
    };
    heads * per_head + if learnable_z { n * d } else { 0 }
}
