//! Baseline vs. hypernetwork comparison table.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::experiment::{group_cells, ResultRecord, RunStatus};
use super::wilcoxon::{wilcoxon_signed_rank, WilcoxonResult};
use crate::error::Result;
use crate::model::Variant;
use crate::trainer::mean_std;

pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and population standard deviation; `None` for no values.
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let (mean, std) = mean_std(xs);
        Some(Self { mean, std })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VariantStats {
    pub mse: Option<MeanStd>,
    pub mae: Option<MeanStd>,
    pub sec_per_epoch: Option<MeanStd>,
    pub runs: usize,
}

/// One (dataset, backbone, horizon) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub backbone: String,
    pub horizon: usize,
    pub baseline: VariantStats,
    pub hn_mvts: VariantStats,
    /// Seeds with a successful run of both variants.
    pub pairs: usize,
    pub wilcoxon: Option<WilcoxonResult>,
    /// `(hn - baseline) / baseline` on mean test MSE.
    pub relative_mse_change: Option<f64>,
    /// Hypernetwork over baseline mean seconds per epoch.
    pub timing_ratio: Option<f64>,
    /// False when some seed lacks a successful run of either variant.
    pub complete: bool,
}

fn stats(runs: &[&ResultRecord]) -> VariantStats {
    let pick = |f: fn(&ResultRecord) -> Option<f64>| -> Vec<f64> {
        runs.iter().filter_map(|r| f(r)).collect()
    };
    VariantStats {
        mse: MeanStd::of(&pick(|r| r.test_mse)),
        mae: MeanStd::of(&pick(|r| r.test_mae)),
        sec_per_epoch: MeanStd::of(&pick(|r| r.sec_per_epoch)),
        runs: runs.len(),
    }
}

pub fn summarize(records: &[ResultRecord]) -> Result<Vec<SummaryRow>> {
    let mut rows = Vec::new();
    for ((dataset, backbone, horizon), by_variant) in group_cells(records) {
        let ok = |v: Variant| -> Vec<&ResultRecord> {
            let mut runs: Vec<&ResultRecord> = by_variant
                .get(&v)
                .map(|rs| {
                    rs.iter()
                        .copied()
                        .filter(|r| r.status == RunStatus::Ok)
                        .collect()
                })
                .unwrap_or_default();
            runs.sort_by_key(|r| r.seed);
            runs
        };
        let base = ok(Variant::Baseline);
        let hyper = ok(Variant::HnMvts);
        let all_seeds: std::collections::BTreeSet<u64> =
            by_variant.values().flatten().map(|r| r.seed).collect();

        let mut a = Vec::new();
        let mut b = Vec::new();
        for h in &hyper {
            if let Some(bl) = base.iter().find(|r| r.seed == h.seed) {
                if let (Some(x), Some(y)) = (h.test_mse, bl.test_mse) {
                    a.push(x);
                    b.push(y);
                }
            }
        }
        let pairs = a.len();
        let wilcoxon = if pairs > 0 {
            Some(wilcoxon_signed_rank(&a, &b, ALPHA)?)
        } else {
            None
        };
        let baseline = stats(&base);
        let hn_mvts = stats(&hyper);
        let relative_mse_change = match (baseline.mse, hn_mvts.mse) {
            (Some(bm), Some(hm)) if bm.mean != 0.0 => Some((hm.mean - bm.mean) / bm.mean),
            _ => None,
        };
        let timing_ratio = match (baseline.sec_per_epoch, hn_mvts.sec_per_epoch) {
            (Some(bs), Some(hs)) if bs.mean > 0.0 => Some(hs.mean / bs.mean),
            _ => None,
        };
        rows.push(SummaryRow {
            dataset,
            backbone,
            horizon,
            complete: pairs > 0 && pairs == all_seeds.len(),
            baseline,
            hn_mvts,
            pairs,
            wilcoxon,
            relative_mse_change,
            timing_ratio,
        });
    }
    Ok(rows)
}

fn fmt_ms(x: Option<MeanStd>, prec: usize) -> String {
    match x {
        Some(m) => format!("{:.prec$}±{:.prec$}", m.mean, m.std),
        None => "-".into(),
    }
}

fn fmt_opt(x: Option<f64>, f: impl Fn(f64) -> String) -> String {
    x.map(f).unwrap_or_else(|| "-".into())
}

/// Fixed-width plain-text table.
pub fn render_text(rows: &[SummaryRow]) -> String {
    let header = [
        "dataset",
        "backbone",
        "H",
        "baseline MSE",
        "hn_mvts MSE",
        "baseline MAE",
        "hn_mvts MAE",
        "dMSE",
        "p",
        "sig",
        "s/epoch base",
        "s/epoch hn",
        "ratio",
        "note",
    ];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.dataset.clone(),
                r.backbone.clone(),
                r.horizon.to_string(),
                fmt_ms(r.baseline.mse, 4),
                fmt_ms(r.hn_mvts.mse, 4),
                fmt_ms(r.baseline.mae, 4),
                fmt_ms(r.hn_mvts.mae, 4),
                fmt_opt(r.relative_mse_change, |c| format!("{:+.2}%", 100.0 * c)),
                fmt_opt(r.wilcoxon.map(|w| w.p_value), |p| format!("{p:.4}")),
                r.wilcoxon
                    .map_or("-", |w| if w.significant { "yes" } else { "no" })
                    .to_string(),
                fmt_ms(r.baseline.sec_per_epoch, 2),
                fmt_ms(r.hn_mvts.sec_per_epoch, 2),
                fmt_opt(r.timing_ratio, |t| format!("{t:.3}")),
                if r.complete {
                    String::new()
                } else {
                    "incomplete".into()
                },
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<String>, out: &mut String| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}", w = *w))
            .collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(header.iter().map(|s| s.to_string()).collect(), &mut out);
    for row in body {
        line(row, &mut out);
    }
    out
}

/// Machine-readable table; empty fields for missing values.
pub fn render_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(
        "dataset,backbone,horizon,baseline_mse_mean,baseline_mse_std,hn_mvts_mse_mean,hn_mvts_mse_std,\
baseline_mae_mean,baseline_mae_std,hn_mvts_mae_mean,hn_mvts_mae_std,pairs,wilcoxon_statistic,\
wilcoxon_p,significant,relative_mse_change,baseline_sec_per_epoch,hn_mvts_sec_per_epoch,timing_ratio,complete\n",
    );
    let num = |x: Option<f64>| x.map(|v| format!("{v:?}")).unwrap_or_default();
    for r in rows {
        let ms = |m: Option<MeanStd>| [num(m.map(|m| m.mean)), num(m.map(|m| m.std))];
        let mut cells = vec![r.dataset.clone(), r.backbone.clone(), r.horizon.to_string()];
        cells.extend(ms(r.baseline.mse));
        cells.extend(ms(r.hn_mvts.mse));
        cells.extend(ms(r.baseline.mae));
        cells.extend(ms(r.hn_mvts.mae));
        cells.push(r.pairs.to_string());
        cells.push(num(r.wilcoxon.map(|w| w.statistic)));
        cells.push(num(r.wilcoxon.map(|w| w.p_value)));
        cells.push(
            r.wilcoxon
                .map(|w| w.significant.to_string())
                .unwrap_or_default(),
        );
        cells.push(num(r.relative_mse_change));
        cells.push(num(r.baseline.sec_per_epoch.map(|m| m.mean)));
        cells.push(num(r.hn_mvts.sec_per_epoch.map(|m| m.mean)));
        cells.push(num(r.timing_ratio));
        cells.push(r.complete.to_string());
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}
