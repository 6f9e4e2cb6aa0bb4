//! A backbone plus its final layer(s), in one of three forms.
//!
//! * **Baseline**: final-layer weights are ordinary parameters.
//! * **Hyper**: final-layer weights are generated from channel embeddings on
//!   every forward pass (the training form of the hypernetwork variant).
//! * **Baked**: a hyper model whose generated weights were computed once and
//!   stored as plain final-layer parameters. Its parameter set is exactly
//!   that of the per-channel baseline.

use serde::{Deserialize, Serialize};

use crate::backbones::{apply_final_var, final_weight, forward_hidden, BackboneConfig};
use crate::data::SeriesTable;
use crate::error::{contract, Result};
use crate::hypernet::{
    generate_weights, init_embeddings, EmbeddingMatrix, GeneratorParams, HyperConfig, HyperHead,
    EMBEDDING,
};
use crate::normalization::{denormalize, normalize, RevinVars};
use crate::numcore::{SeededRng, Tape, Tensor, Var};
use crate::params::{numel, Bound, ParamMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    HnMvts,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::HnMvts => "hn_mvts",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelForm {
    Baseline,
    Hyper,
    Baked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_channels: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub backbone: BackboneConfig,
    pub variant: Variant,
    #[serde(default)]
    pub hyper: HyperConfig,
    pub revin: bool,
    /// Baseline only: one final layer shared by all channels.
    #[serde(default)]
    pub shared_final: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_channels == 0 || self.lookback == 0 || self.horizon == 0 {
            return Err(contract("channels, lookback and horizon must be positive"));
        }
        self.backbone.validate(self.lookback)?;
        if self.variant == Variant::HnMvts {
            if self.shared_final {
                return Err(contract(
                    "shared_final applies to the baseline variant only",
                ));
            }
            let d = self.embedding_dim();
            if d == 0 || d > self.n_channels {
                return Err(contract(format!(
                    "embedding dimension {d} must lie in 1..={}",
                    self.n_channels
                )));
            }
            if self.hyper.generator_hidden.contains(&0) {
                return Err(contract("generator hidden widths must be positive"));
            }
        }
        Ok(())
    }

    pub fn hidden_dim(&self) -> usize {
        self.backbone.hidden_dim(self.lookback)
    }

    pub fn embedding_dim(&self) -> usize {
        self.hyper.embedding_dim_for(self.n_channels)
    }

    pub fn slots(&self) -> &'static [&'static str] {
        self.backbone.slots()
    }
}

/// Output of one forward pass over a `[N, B, T]` batch.
pub struct Forecast<'t> {
    /// Forecast before RevIN reversal (equal to `raw` without RevIN).
    pub normalized: Var<'t>,
    /// Forecast in the input's scale.
    pub raw: Var<'t>,
    pub stats: Option<RevinVars<'t>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastModel {
    config: ModelConfig,
    form: ModelForm,
    channel_names: Vec<String>,
    params: ParamMap,
    buffers: ParamMap,
}

impl ForecastModel {
    /// Fresh model; the hypernetwork variant initialises its embeddings from
    /// `train` (correlation rows projected on principal components).
    pub fn new(config: ModelConfig, train: &SeriesTable, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        if train.n_channels() != config.n_channels {
            return Err(contract(format!(
                "model expects {} channels, training data has {}",
                config.n_channels,
                train.n_channels()
            )));
        }
        let embeddings = match config.variant {
            Variant::Baseline => None,
            Variant::HnMvts => {
                let mut z = init_embeddings(train, config.embedding_dim())?;
                z.learnable = config.hyper.learnable_embeddings;
                Some(z)
            }
        };
        Self::with_embeddings(config, train.channel_names().to_vec(), embeddings, rng)
    }

    /// Like [`ForecastModel::new`] with caller-supplied embeddings.
    pub fn with_embeddings(
        config: ModelConfig,
        channel_names: Vec<String>,
        embeddings: Option<EmbeddingMatrix>,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        config.validate()?;
        if channel_names.len() != config.n_channels {
            return Err(contract("one channel name per channel required"));
        }
        let (n, h, d) = (config.n_channels, config.horizon, config.hidden_dim());
        let mut params = config.backbone.init_params(config.lookback, rng);
        let mut buffers = ParamMap::new();
        let form = match config.variant {
            Variant::Baseline => {
                let bound = 1.0 / (d as f64).sqrt();
                for slot in config.slots() {
                    let w = if config.shared_final {
                        rng.uniform_tensor([h, d], bound)
                    } else {
                        rng.uniform_tensor([n, h, d], bound)
                    };
                    params.insert(final_weight(slot), w);
                }
                ModelForm::Baseline
            }
            Variant::HnMvts => {
                let z =
                    embeddings.ok_or_else(|| contract("hypernetwork variant needs embeddings"))?;
                let expected = [n, config.embedding_dim()];
                if z.z.shape() != expected {
                    return Err(contract(format!(
                        "embeddings have shape {:?}, expected {expected:?}",
                        z.z.shape()
                    )));
                }
                if z.learnable {
                    params.insert(EMBEDDING.into(), z.z.clone());
                } else {
                    buffers.insert(EMBEDDING.into(), z.z.clone());
                }
                for slot in config.slots() {
                    let gen = GeneratorParams::init(
                        config.hyper.mode,
                        &z.z,
                        h,
                        d,
                        &config.hyper.generator_hidden,
                        rng,
                    )?;
                    gen.insert_into(slot, &mut params);
                }
                ModelForm::Hyper
            }
        };
        Ok(Self {
            config,
            form,
            channel_names,
            params,
            buffers,
        })
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        form: ModelForm,
        channel_names: Vec<String>,
        params: ParamMap,
        buffers: ParamMap,
    ) -> Result<Self> {
        config.validate()?;
        let model = Self {
            config,
            form,
            channel_names,
            params,
            buffers,
        };
        // A dry run over one zero window checks every shape.
        let probe = Tensor::zeros([model.config.n_channels, 1, model.config.lookback]);
        model.predict(&probe)?;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn form(&self) -> ModelForm {
        self.form
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn params(&self) -> &ParamMap {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamMap {
        &mut self.params
    }

    pub fn buffers(&self) -> &ParamMap {
        &self.buffers
    }

    pub fn n_trainable(&self) -> usize {
        numel(&self.params)
    }

    /// Embedding matrix of a hyper-form model.
    pub fn embeddings(&self) -> Option<&Tensor> {
        self.params
            .get(EMBEDDING)
            .or_else(|| self.buffers.get(EMBEDDING))
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound::new(tape, &self.params, &self.buffers)
    }

    /// Final-layer weight of `slot` as it enters the forward pass.
    pub fn final_weight_var<'t>(&self, bound: &Bound<'t>, slot: &str) -> Result<Var<'t>> {
        match self.form {
            ModelForm::Baseline | ModelForm::Baked => bound.get(&final_weight(slot)),
            ModelForm::Hyper => generate_weights(
                self.config.hyper.mode,
                bound,
                slot,
                bound.get(EMBEDDING)?,
                self.config.horizon,
                self.config.hidden_dim(),
            ),
        }
    }

    /// Records a forward pass of a `[N, B, T]` batch.
    pub fn forward<'t>(&self, bound: &Bound<'t>, x: Var<'t>) -> Result<Forecast<'t>> {
        let shape = x.shape();
        if shape.len() != 3
            || shape[0] != self.config.n_channels
            || shape[2] != self.config.lookback
        {
            return Err(contract(format!(
                "input must be [{}, B, {}], got {shape:?}",
                self.config.n_channels, self.config.lookback
            )));
        }
        let (input, stats) = if self.config.revin {
            let (z, stats) = normalize(x)?;
            (z, Some(stats))
        } else {
            (x, None)
        };
        let hidden = forward_hidden(&self.config.backbone, bound, input)?;
        let mut total: Option<Var<'t>> = None;
        for (slot, h) in hidden {
            let w = self.final_weight_var(bound, slot)?;
            let y = apply_final_var(w, h)?;
            total = Some(match total {
                Some(acc) => acc.add(y)?,
                None => y,
            });
        }
        let normalized = total.ok_or_else(|| contract("backbone produced no hidden state"))?;
        let raw = match &stats {
            Some(s) => denormalize(normalized, s)?,
            None => normalized,
        };
        Ok(Forecast {
            normalized,
            raw,
            stats,
        })
    }

    /// Raw-scale forecast `[N, B, H]` for a `[N, B, T]` batch.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let bound = Bound::frozen(&tape, &self.params, &self.buffers);
        Ok(self.forward(&bound, tape.constant(x.clone()))?.raw.value())
    }

    /// Forecast `N×H` for one `N×T` window.
    pub fn predict_window(&self, x: &Tensor) -> Result<Tensor> {
        let (n, t) = (self.config.n_channels, self.config.lookback);
        if x.shape() != [n, t] {
            return Err(contract(format!(
                "window must be [{n}, {t}], got {:?}",
                x.shape()
            )));
        }
        let y = self.predict(&x.reshape([n, 1, t])?)?;
        y.reshape([n, self.config.horizon])
    }

    /// Generator heads of a hyper-form model.
    pub fn hyper_heads(&self) -> Result<Vec<HyperHead>> {
        if self.form != ModelForm::Hyper {
            return Err(contract("only hyper-form models have generator heads"));
        }
        let z = EmbeddingMatrix {
            z: self
                .embeddings()
                .cloned()
                .ok_or_else(|| contract("missing embeddings"))?,
            learnable: self.params.contains_key(EMBEDDING),
        };
        let all: ParamMap = self
            .params
            .iter()
            .chain(&self.buffers)
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        self.config
            .slots()
            .iter()
            .map(|slot| {
                Ok(HyperHead {
                    z: z.clone(),
                    gen: GeneratorParams::extract(self.config.hyper.mode, slot, &all)?,
                    target: slot.to_string(),
                    horizon: self.config.horizon,
                    hidden_dim: self.config.hidden_dim(),
                })
            })
            .collect()
    }

    /// Replaces the hypernetwork by the weights it currently generates.
    ///
    /// Baseline and already-baked models are returned unchanged.
    pub fn bake(&self) -> Result<ForecastModel> {
        if self.form != ModelForm::Hyper {
            return Ok(self.clone());
        }
        let heads = self.hyper_heads()?;
        let mut params: ParamMap = self
            .params
            .iter()
            .filter(|(k, _)| !k.starts_with("hyper."))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        for head in heads {
            params.insert(final_weight(&head.target), head.generate_weights()?);
        }
        let buffers = self
            .buffers
            .iter()
            .filter(|(k, _)| !k.starts_with("hyper."))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Ok(ForecastModel {
            config: self.config.clone(),
            form: ModelForm::Baked,
            channel_names: self.channel_names.clone(),
            params,
            buffers,
        })
    }
}
