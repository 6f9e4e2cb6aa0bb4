//! Minibatch training with Adam and validation-based model selection.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::data::WindowSet;
use crate::error::{contract, Error, Result};
use crate::model::ForecastModel;
use crate::numcore::{backward, AdamConfig, AdamState, SeededRng, Tape};

pub use crate::numcore::set_seed;

/// Windows per forward pass during evaluation. Only affects speed and memory.
const EVAL_BATCH: usize = 256;

/// Stream id of the shuffling generator, kept apart from initialisation.
const SHUFFLE_STREAM: u64 = 0x5348_5546;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub shuffle: bool,
    pub revin: bool,
    pub early_stop_patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lookback: 336,
            horizon: 96,
            batch_size: 64,
            lr: 1e-4,
            max_epochs: 20,
            seed: 0,
            shuffle: true,
            revin: true,
            early_stop_patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lookback == 0 || self.horizon == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(contract(
                "lookback, horizon, batch_size and max_epochs must be positive",
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(contract(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.early_stop_patience == Some(0) {
            return Err(contract("early_stop_patience must be positive when set"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: f64,
    /// Wall-clock time of the training pass, validation excluded.
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.get(self.best_epoch)
    }

    /// Mean and population standard deviation of per-epoch seconds.
    pub fn epoch_seconds(&self) -> (f64, f64) {
        let secs: Vec<f64> = self.epochs.iter().map(|e| e.seconds).collect();
        mean_std(&secs)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_mse,seconds\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{:?},{:?},{:?}",
                e.epoch, e.train_loss, e.val_mse, e.seconds
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
}

pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn check_shapes(model: &ForecastModel, windows: &WindowSet, what: &str) -> Result<()> {
    let c = model.config();
    if windows.n_channels() != c.n_channels
        || windows.lookback() != c.lookback
        || windows.horizon() != c.horizon
    {
        return Err(contract(format!(
            "{what} windows are N={} T={} H={}, model expects N={} T={} H={}",
            windows.n_channels(),
            windows.lookback(),
            windows.horizon(),
            c.n_channels,
            c.lookback,
            c.horizon
        )));
    }
    Ok(())
}

fn param_norms(model: &ForecastModel) -> String {
    model
        .params()
        .iter()
        .map(|(k, v)| format!("{k}={:.4e}", v.norm()))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Mean loss of one minibatch and the gradient of every trainable parameter.
fn batch_step(
    model: &ForecastModel,
    windows: &WindowSet,
    origins: &[usize],
) -> Result<(f64, IndexMap<String, crate::Tensor>)> {
    let (x, y) = windows.batch(origins)?;
    let tape = Tape::new();
    let bound = model.bind(&tape);
    let forecast = model.forward(&bound, tape.constant(x))?;
    let target = tape.constant(y);
    let (pred, target) = match &forecast.stats {
        Some(stats) => (
            forecast.normalized,
            target.sub(stats.mean)?.div(stats.denom)?,
        ),
        None => (forecast.raw, target),
    };
    let loss = pred.sub(target)?.square().mean();
    let value = loss.value().item()?;
    if !value.is_finite() {
        return Ok((value, IndexMap::new()));
    }
    let grads = backward(loss)?;
    let mut out = IndexMap::with_capacity(model.params().len());
    for (name, var) in bound.iter() {
        if var.requires_grad() {
            out.insert(name.clone(), grads.wrt(*var));
        }
    }
    Ok((value, out))
}

/// Trains `model` and returns the parameters of the epoch with the lowest
/// validation MSE together with the full history.
pub fn train(
    model: ForecastModel,
    train_windows: &WindowSet,
    val_windows: &WindowSet,
    cfg: &TrainConfig,
) -> Result<(ForecastModel, TrainHistory)> {
    cfg.validate()?;
    if train_windows.is_empty() {
        return Err(contract("training set has no windows"));
    }
    let mc = model.config();
    if mc.lookback != cfg.lookback || mc.horizon != cfg.horizon || mc.revin != cfg.revin {
        return Err(contract(format!(
            "train config (T={}, H={}, revin={}) disagrees with model (T={}, H={}, revin={})",
            cfg.lookback, cfg.horizon, cfg.revin, mc.lookback, mc.horizon, mc.revin
        )));
    }
    check_shapes(&model, train_windows, "training")?;
    check_shapes(&model, val_windows, "validation")?;

    let mut model = model;
    let mut adam = AdamState::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut shuffler: SeededRng = SeededRng::new(cfg.seed).fork(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train_windows.len()).collect();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, ForecastModel)> = None;
    let mut since_best = 0usize;

    for epoch in 0..cfg.max_epochs {
        let started = Instant::now();
        if cfg.shuffle {
            shuffler.shuffle(&mut order);
        }
        let mut weighted = 0.0;
        for (batch_idx, origins) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grads) = batch_step(&model, train_windows, origins)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    norms: param_norms(&model),
                });
            }
            adam.step(model.params_mut(), &grads)?;
            weighted += loss * origins.len() as f64;
        }
        let seconds = started.elapsed().as_secs_f64();
        let train_loss = weighted / order.len() as f64;
        let val_mse = evaluate(&model, val_windows)?.mse;
        log::info!(
            "epoch {epoch}: train_loss={train_loss:.6} val_mse={val_mse:.6} ({seconds:.2}s)"
        );
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_mse,
            seconds,
        });
        let improved = match &best {
            Some((b, _)) => val_mse < *b,
            None => true,
        };
        if improved {
            best = Some((val_mse, model.clone()));
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.early_stop_patience.is_some_and(|p| since_best >= p) {
                log::info!("early stop after epoch {epoch}");
                break;
            }
        }
    }
    let (_, best_model) = best.expect("at least one epoch ran");
    Ok((best_model, history))
}

/// Raw-scale MSE and MAE over every window, channel and horizon step.
pub fn evaluate(model: &ForecastModel, windows: &WindowSet) -> Result<Metrics> {
    if windows.is_empty() {
        return Err(contract("cannot evaluate on an empty window set"));
    }
    check_shapes(model, windows, "evaluation")?;
    let origins: Vec<usize> = (0..windows.len()).collect();
    let (mut se, mut ae, mut count) = (0.0, 0.0, 0usize);
    for chunk in origins.chunks(EVAL_BATCH) {
        let (x, y) = windows.batch(chunk)?;
        let pred = model.predict(&x)?;
        for (p, t) in pred.data().iter().zip(y.data()) {
            let d = p - t;
            se += d * d;
            ae += d.abs();
        }
        count += y.numel();
    }
    Ok(Metrics {
        mse: se / count as f64,
        mae: ae / count as f64,
    })
}
