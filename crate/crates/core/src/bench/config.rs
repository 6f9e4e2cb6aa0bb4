//! Experiment description read from TOML.
//!
//! Every field has a default, so an empty file is a valid (synthetic) run
//! and `ExperimentConfig::default().to_toml()` documents the full schema.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbones::BackboneConfig;
use crate::data::{
    chrono_split, gen_synthetic, load_csv, SeriesTable, SplitSpec, Standardizer, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::hypernet::HyperConfig;
use crate::model::{ModelConfig, Variant};
use crate::trainer::TrainConfig;

/// Environment variable that overrides `[bench] output_dir`.
pub const OUT_DIR_ENV: &str = "HNMVTS_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    pub length: usize,
    pub groups: Vec<usize>,
    pub rho: f64,
    pub sigma: f64,
    #[serde(default = "default_ar")]
    pub ar: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_ar() -> f64 {
    0.7
}

impl SyntheticSource {
    pub fn spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            length: self.length,
            groups: self.groups.clone(),
            rho: self.rho,
            sigma: self.sigma,
            ar: self.ar,
        }
    }
}

impl Default for SyntheticSource {
    fn default() -> Self {
        let s = SyntheticSpec::two_groups(8, 8000, 0.9, 0.1);
        Self {
            length: s.length,
            groups: s.groups,
            rho: s.rho,
            sigma: s.sigma,
            ar: s.ar,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Label used in result records.
    pub name: String,
    /// CSV file; when absent the `synthetic` section generates the data.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp_column: Option<String>,
    /// Z-score every channel with statistics of the train split.
    pub standardize: bool,
    pub synthetic: SyntheticSource,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            path: None,
            timestamp_column: None,
            standardize: true,
            synthetic: SyntheticSource::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Variant trained by the single-run `train` command.
    pub variant: Variant,
    pub shared_final: bool,
    pub backbone: BackboneConfig,
    pub hyper: HyperConfig,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            variant: Variant::HnMvts,
            shared_final: false,
            backbone: BackboneConfig::dlinear(),
            hyper: HyperConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub horizons: Vec<usize>,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    pub output_dir: PathBuf,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            horizons: vec![96],
            seeds: (0..5).collect(),
            variants: vec![Variant::Baseline, Variant::HnMvts],
            output_dir: PathBuf::from("runs"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub split: SplitSpec,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub bench: BenchSection,
}

/// Train/validation/test tables after splitting and optional scaling.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: SeriesTable,
    pub val: SeriesTable,
    pub test: SeriesTable,
    pub scaler: Option<Standardizer>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative data paths resolve against the file's
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        if let (Some(p), Some(dir)) = (&cfg.data.path, path.parent()) {
            if p.is_relative() {
                cfg.data.path = Some(dir.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        self.split.validate()?;
        self.train.validate()?;
        if self.bench.seeds.is_empty() {
            return bad("[bench] seeds must not be empty".into());
        }
        if self.bench.horizons.is_empty() || self.bench.horizons.contains(&0) {
            return bad("[bench] horizons must be a nonempty list of positive integers".into());
        }
        if self.bench.variants.is_empty() {
            return bad("[bench] variants must not be empty".into());
        }
        if self.data.path.is_none() {
            self.data.synthetic.spec().validate()?;
        }
        self.model.backbone.validate(self.train.lookback)?;
        Ok(())
    }

    /// Output directory, honouring the environment override.
    pub fn output_dir(&self) -> PathBuf {
        self.output_dir_with(std::env::var_os(OUT_DIR_ENV))
    }

    pub fn output_dir_with(&self, env: Option<OsString>) -> PathBuf {
        match env {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.bench.output_dir.clone(),
        }
    }

    pub fn load_table(&self) -> Result<SeriesTable> {
        match &self.data.path {
            Some(path) => load_csv(path, self.data.timestamp_column.as_deref()),
            None => gen_synthetic(&self.data.synthetic.spec(), self.data.synthetic.seed),
        }
    }

    pub fn prepare(&self) -> Result<PreparedData> {
        self.prepare_table(&self.load_table()?)
    }

    pub fn prepare_table(&self, table: &SeriesTable) -> Result<PreparedData> {
        let (train, val, test) = chrono_split(table, &self.split)?;
        if !self.data.standardize {
            return Ok(PreparedData {
                train,
                val,
                test,
                scaler: None,
            });
        }
        let scaler = Standardizer::fit(&train)?;
        let scale = |t: &SeriesTable| -> Result<SeriesTable> {
            if t.is_empty() {
                Ok(t.clone())
            } else {
                scaler.transform(t)
            }
        };
        Ok(PreparedData {
            val: scale(&val)?,
            test: scale(&test)?,
            train: scaler.transform(&train)?,
            scaler: Some(scaler),
        })
    }

    pub fn model_config(&self, n_channels: usize, horizon: usize, variant: Variant) -> ModelConfig {
        ModelConfig {
            n_channels,
            lookback: self.train.lookback,
            horizon,
            backbone: self.model.backbone.clone(),
            variant,
            hyper: self.model.hyper.clone(),
            revin: self.train.revin,
            shared_final: self.model.shared_final && variant == Variant::Baseline,
        }
    }

    pub fn train_config(&self, horizon: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            horizon,
            seed,
            ..self.train.clone()
        }
    }
}
