//! Grid runner: every (horizon, seed, variant) job trains, bakes and scores
//! one model and lands as one line of a JSON-lines results file.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, PreparedData};
use crate::backbones::BackboneKind;
use crate::data::WindowSet;
use crate::error::{Error, Result};
use crate::model::{ForecastModel, Variant};
use crate::numcore::set_seed;
use crate::trainer::{evaluate, train, TrainHistory};

pub const RESULTS_FILE: &str = "results.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// One finished (or failed) job. Field order is the on-disk key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub dataset: String,
    pub backbone: BackboneKind,
    pub variant: Variant,
    pub horizon: usize,
    pub seed: u64,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub test_mse: Option<f64>,
    pub test_mae: Option<f64>,
    pub best_val_mse: Option<f64>,
    pub best_epoch: Option<usize>,
    pub epochs_run: usize,
    /// Mean and population std of wall-clock seconds per training epoch.
    pub sec_per_epoch: Option<f64>,
    pub sec_per_epoch_std: Option<f64>,
    /// Trainable parameters during training.
    pub params_train: usize,
    /// Parameters of the model used at inference (after baking).
    pub params_inference: usize,
}

pub type RecordKey = (String, BackboneKind, Variant, usize, u64);

impl ResultRecord {
    pub fn key(&self) -> RecordKey {
        (
            self.dataset.clone(),
            self.backbone,
            self.variant,
            self.horizon,
            self.seed,
        )
    }

    fn failed(
        cfg: &ExperimentConfig,
        variant: Variant,
        horizon: usize,
        seed: u64,
        reason: String,
    ) -> Self {
        Self {
            dataset: cfg.data.name.clone(),
            backbone: cfg.model.backbone.kind,
            variant,
            horizon,
            seed,
            status: RunStatus::Failed,
            reason: Some(reason),
            test_mse: None,
            test_mae: None,
            best_val_mse: None,
            best_epoch: None,
            epochs_run: 0,
            sec_per_epoch: None,
            sec_per_epoch_std: None,
            params_train: 0,
            params_inference: 0,
        }
    }
}

/// Reads a results file; a missing file is an empty result set.
pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultRecord>> {
    let path = path.as_ref();
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// Merges `records` into the file, replacing lines with the same key and
/// keeping the rest in their original order. The file is rewritten through
/// a temporary sibling and a rename.
pub fn upsert_results(path: impl AsRef<Path>, records: &[ResultRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut all = read_results(path)?;
    for rec in records {
        match all.iter_mut().find(|r| r.key() == rec.key()) {
            Some(slot) => *slot = rec.clone(),
            None => all.push(rec.clone()),
        }
    }
    let mut body = String::new();
    for r in &all {
        body.push_str(&serde_json::to_string(r)?);
        body.push('\n');
    }
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(body.as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Output of one training job.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub record: ResultRecord,
    /// Best-validation model in its training form.
    pub trained: ForecastModel,
    /// `trained` after baking; what the test metrics were computed with.
    pub deployed: ForecastModel,
    pub history: TrainHistory,
}

/// Trains one variant at one horizon and seed on prepared data.
pub fn run_single(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    variant: Variant,
    horizon: usize,
    seed: u64,
) -> Result<RunOutcome> {
    let tcfg = cfg.train_config(horizon, seed);
    let windows = |t: &crate::data::SeriesTable, what: &str| {
        WindowSet::new(t.clone(), tcfg.lookback, horizon)
            .map_err(|e| Error::Config(format!("{what} split: {e}")))
    };
    let train_w = windows(&data.train, "train")?;
    let val_w = windows(&data.val, "validation")?;
    let test_w = windows(&data.test, "test")?;

    let mcfg = cfg.model_config(data.train.n_channels(), horizon, variant);
    let mut rng = set_seed(seed);
    let model = ForecastModel::new(mcfg, &data.train, &mut rng)?;
    let params_train = model.n_trainable();
    let (best, history) = train(model, &train_w, &val_w, &tcfg)?;
    let deployed = best.bake()?;
    let metrics = evaluate(&deployed, &test_w)?;
    let (sec, sec_std) = history.epoch_seconds();
    let record = ResultRecord {
        dataset: cfg.data.name.clone(),
        backbone: cfg.model.backbone.kind,
        variant,
        horizon,
        seed,
        status: RunStatus::Ok,
        reason: None,
        test_mse: Some(metrics.mse),
        test_mae: Some(metrics.mae),
        best_val_mse: history.best().map(|e| e.val_mse),
        best_epoch: Some(history.best_epoch),
        epochs_run: history.epochs.len(),
        sec_per_epoch: Some(sec),
        sec_per_epoch_std: Some(sec_std),
        params_train,
        params_inference: deployed.n_trainable(),
    };
    Ok(RunOutcome {
        record,
        trained: best,
        deployed,
        history,
    })
}

/// Runs the whole grid, writing each record to `out_dir/results.jsonl` as
/// soon as it exists and each history to `out_dir/histories/`.
///
/// A job that fails becomes a failed record and the grid carries on.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<ResultRecord>> {
    cfg.validate()?;
    let data = cfg.prepare()?;
    run_experiment_on(cfg, &data, out_dir)
}

pub fn run_experiment_on(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    out_dir: &Path,
) -> Result<Vec<ResultRecord>> {
    let hist_dir = out_dir.join("histories");
    std::fs::create_dir_all(&hist_dir)?;
    let results = out_dir.join(RESULTS_FILE);
    let mut out = Vec::new();
    for &h in &cfg.bench.horizons {
        for &seed in &cfg.bench.seeds {
            for &variant in &cfg.bench.variants {
                log::info!(
                    "{} {} {} H={h} seed={seed}",
                    cfg.data.name,
                    cfg.model.backbone.kind.as_str(),
                    variant.as_str()
                );
                let record = match run_single(cfg, data, variant, h, seed) {
                    Ok(run) => {
                        run.history
                            .write_csv(hist_dir.join(history_name(&run.record)))?;
                        run.record
                    }
                    Err(e) => {
                        log::warn!("job failed: {e}");
                        ResultRecord::failed(cfg, variant, h, seed, e.to_string())
                    }
                };
                upsert_results(&results, std::slice::from_ref(&record))?;
                out.push(record);
            }
        }
    }
    Ok(out)
}

pub fn history_name(r: &ResultRecord) -> PathBuf {
    PathBuf::from(format!(
        "{}_{}_{}_H{}_s{}.csv",
        r.dataset,
        r.backbone.as_str(),
        r.variant.as_str(),
        r.horizon,
        r.seed
    ))
}

/// Records grouped by (dataset, backbone, horizon), then by variant.
pub(crate) fn group_cells(
    records: &[ResultRecord],
) -> BTreeMap<(String, String, usize), BTreeMap<Variant, Vec<&ResultRecord>>> {
    let mut cells: BTreeMap<_, BTreeMap<Variant, Vec<&ResultRecord>>> = BTreeMap::new();
    for r in records {
        cells
            .entry((
                r.dataset.clone(),
                r.backbone.as_str().to_string(),
                r.horizon,
            ))
            .or_default()
            .entry(r.variant)
            .or_default()
            .push(r);
    }
    cells
}
