//! Self-describing model files.
//!
//! A checkpoint is one JSON document holding the model configuration, its
//! form, channel names and every tensor. Tensor values are stored as base64
//! of little-endian `f64` bytes so a save/load round trip is bit-exact. The
//! `echo` field carries whatever run configuration the caller wants to keep
//! next to the weights.

use std::io::Write;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::data::Standardizer;
use crate::error::{Error, Result};
use crate::model::{ForecastModel, ModelConfig, ModelForm};
use crate::numcore::Tensor;
use crate::params::ParamMap;

pub const FORMAT: &str = "hnmvts-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ForecastModel,
    /// Scaling applied to the data before windowing, if any.
    pub scaler: Option<Standardizer>,
    pub echo: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct StoredTensor {
    name: String,
    shape: Vec<usize>,
    data: String,
}

#[derive(Serialize, Deserialize)]
struct File {
    format: String,
    version: u32,
    config: ModelConfig,
    form: ModelForm,
    channel_names: Vec<String>,
    params: Vec<StoredTensor>,
    buffers: Vec<StoredTensor>,
    #[serde(default)]
    scaler: Option<Standardizer>,
    #[serde(default)]
    echo: serde_json::Value,
}

fn encode(map: &ParamMap) -> Vec<StoredTensor> {
    map.iter()
        .map(|(name, t)| {
            let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            StoredTensor {
                name: name.clone(),
                shape: t.shape().to_vec(),
                data: STANDARD.encode(bytes),
            }
        })
        .collect()
}

fn decode(stored: Vec<StoredTensor>) -> Result<ParamMap> {
    let mut map = ParamMap::with_capacity(stored.len());
    for s in stored {
        let bytes = STANDARD
            .decode(&s.data)
            .map_err(|e| Error::Checkpoint(format!("tensor `{}`: {e}", s.name)))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Checkpoint(format!(
                "tensor `{}`: {} bytes is not a whole number of f64 values",
                s.name,
                bytes.len()
            )));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let t = Tensor::new(s.shape, values)
            .map_err(|e| Error::Checkpoint(format!("tensor `{}`: {e}", s.name)))?;
        if map.insert(s.name.clone(), t).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor `{}`", s.name)));
        }
    }
    Ok(map)
}

impl Checkpoint {
    pub fn new(model: ForecastModel) -> Self {
        Self {
            model,
            scaler: None,
            echo: serde_json::Value::Null,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = File {
            format: FORMAT.to_string(),
            version: VERSION,
            config: self.model.config().clone(),
            form: self.model.form(),
            channel_names: self.model.channel_names().to_vec(),
            params: encode(self.model.params()),
            buffers: encode(self.model.buffers()),
            scaler: self.scaler.clone(),
            echo: self.echo.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: File = serde_json::from_str(text)?;
        if file.format != FORMAT {
            return Err(Error::Checkpoint(format!(
                "expected format `{FORMAT}`, found `{}`",
                file.format
            )));
        }
        if file.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (this build reads {VERSION})",
                file.version
            )));
        }
        let model = ForecastModel::from_parts(
            file.config,
            file.form,
            file.channel_names,
            decode(file.params)?,
            decode(file.buffers)?,
        )
        .map_err(|e| Error::Checkpoint(format!("inconsistent model: {e}")))?;
        Ok(Self {
            model,
            scaler: file.scaler,
            echo: file.echo,
        })
    }

    /// Writes through a temporary file and renames, so readers never see a
    /// half-written checkpoint.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(self.to_json()?.as_bytes())?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbones::BackboneConfig;
    use crate::data::{gen_synthetic, SyntheticSpec};
    use crate::model::Variant;
    use crate::numcore::set_seed;

    fn model(variant: Variant) -> ForecastModel {
        let table = gen_synthetic(&SyntheticSpec::two_groups(3, 60, 0.5, 0.1), 0).unwrap();
        let cfg = ModelConfig {
            n_channels: 3,
            lookback: 10,
            horizon: 3,
            backbone: BackboneConfig::mlp(vec![6]),
            variant,
            hyper: Default::default(),
            revin: true,
            shared_final: false,
        };
        ForecastModel::new(cfg, &table, &mut set_seed(9)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for variant in [Variant::Baseline, Variant::HnMvts] {
            let mut ck = Checkpoint::new(model(variant));
            ck.scaler = Some(Standardizer {
                mean: vec![0.1, 0.2, 0.3],
                std: vec![1.0, 2.0, 3.0],
            });
            ck.echo = serde_json::json!({"seed": 9});
            let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
            assert_eq!(back, ck);
        }
    }

    #[test]
    fn baked_round_trip() {
        let baked = model(Variant::HnMvts).bake().unwrap();
        let ck = Checkpoint::new(baked);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }

    #[test]
    fn rejects_wrong_version_and_shapes() {
        let ck = Checkpoint::new(model(Variant::Baseline));
        let mut v: serde_json::Value = serde_json::from_str(&ck.to_json().unwrap()).unwrap();
        v["version"] = 2.into();
        assert!(matches!(
            Checkpoint::from_json(&v.to_string()),
            Err(Error::Checkpoint(_))
        ));

        let mut v: serde_json::Value = serde_json::from_str(&ck.to_json().unwrap()).unwrap();
        v["params"][0]["shape"] = serde_json::json!([1, 60]);
        assert!(Checkpoint::from_json(&v.to_string()).is_err());
    }
}
