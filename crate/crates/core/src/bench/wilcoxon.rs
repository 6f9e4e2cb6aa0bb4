//! Wilcoxon signed-rank test on paired samples.
//!
//! Small samples use the exact null distribution of the signed-rank sum,
//! built by dynamic programming over doubled ranks (so tied half-ranks stay
//! integral). The result equals enumerating every sign assignment. Larger
//! samples fall back to the tie-corrected normal approximation.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{contract, Result};

/// Largest number of nonzero differences handled exactly.
pub const EXACT_MAX: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(W+, W-)` over the nonzero differences.
    pub statistic: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    pub significant: bool,
    /// Differences left after dropping exact zeros.
    pub n_used: usize,
    pub exact: bool,
}

/// Average ranks of `|d|`, doubled so ties stay integers.
fn doubled_ranks(abs: &[f64]) -> Vec<u64> {
    let mut idx: Vec<usize> = (0..abs.len()).collect();
    idx.sort_by(|&a, &b| abs[a].total_cmp(&abs[b]));
    let mut ranks = vec![0u64; abs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && abs[idx[j + 1]] == abs[idx[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 averaged, times two.
        let doubled = (i + 1 + j + 1) as u64;
        for &k in &idx[i..=j] {
            ranks[k] = doubled;
        }
        i = j + 1;
    }
    ranks
}

/// Number of sign assignments giving each doubled positive-rank sum.
fn null_counts(ranks: &[u64]) -> Vec<u128> {
    let total: u64 = ranks.iter().sum();
    let mut counts = vec![0u128; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    counts
}

pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64], alpha: f64) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(contract(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(contract("wilcoxon needs at least one pair"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(contract(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(contract("wilcoxon inputs must be finite"));
    }
    let n = diffs.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            statistic: 0.0,
            p_value: 1.0,
            significant: false,
            n_used: 0,
            exact: true,
        });
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = doubled_ranks(&abs);
    let total: u64 = ranks.iter().sum();
    let plus: u64 = ranks
        .iter()
        .zip(&diffs)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, _)| r)
        .sum();
    let statistic = plus.min(total - plus) as f64 / 2.0;

    let (p_value, exact) = if n <= EXACT_MAX {
        let counts = null_counts(&ranks);
        // |2S - total| in doubled units measures distance from the null mean.
        let observed = (2 * plus).abs_diff(total);
        let extreme: u128 = counts
            .iter()
            .enumerate()
            .filter(|(s, _)| (2 * *s as u64).abs_diff(total) >= observed)
            .map(|(_, c)| c)
            .sum();
        (extreme as f64 / (1u128 << n) as f64, true)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let mut var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0;
        // Tie correction: each group of t equal |d| removes (t^3 - t) / 48.
        let mut sorted = ranks.clone();
        sorted.sort_unstable();
        for group in sorted.chunk_by(|x, y| x == y) {
            let t = group.len() as f64;
            var -= (t * t * t - t) / 48.0;
        }
        let z = (plus as f64 / 2.0 - mean) / var.sqrt();
        let normal = Normal::standard();
        ((2.0 * normal.sf(z.abs())).min(1.0), false)
    };
    Ok(WilcoxonResult {
        statistic,
        p_value,
        significant: p_value < alpha,
        n_used: n,
        exact,
    })
}

/// Reference implementation: walks all `2^k` sign flips of the nonzero
/// differences. Exponential; meant for cross-checking small samples.
pub fn wilcoxon_enumerate(a: &[f64], b: &[f64]) -> (f64, f64) {
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    if n == 0 {
        return (0.0, 1.0);
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    // Plain O(n^2) average ranks, independent of the sorting code above.
    let rank: Vec<f64> = abs
        .iter()
        .map(|x| {
            let below = abs.iter().filter(|y| *y < x).count() as f64;
            let equal = abs.iter().filter(|y| *y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect();
    let total: f64 = rank.iter().sum();
    let w_plus: f64 = rank
        .iter()
        .zip(&diffs)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, _)| r)
        .sum();
    let observed = (w_plus - total / 2.0).abs();
    let mut extreme = 0u64;
    for mask in 0u64..(1 << n) {
        let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| rank[i]).sum();
        // Half-integer sums are exact in f64, so this comparison is exact.
        if (s - total / 2.0).abs() >= observed {
            extreme += 1;
        }
    }
    (
        w_plus.min(total - w_plus),
        extreme as f64 / (1u64 << n) as f64,
    )
}
