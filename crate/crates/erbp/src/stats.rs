//! Paired significance testing (Wilcoxon signed-rank) and summary statistics.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// Paired metric values, e.g. per-seed accuracies of two models.
#[derive(Debug, Clone)]
pub struct PairedSamples {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl PairedSamples {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.is_empty() || a.len() != b.len() {
            return Err(Error::Config(format!(
                "paired samples need equal non-zero lengths, got {} and {}",
                a.len(),
                b.len()
            )));
        }
        Ok(PairedSamples { a, b })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sided {
    Two,
    /// Tests whether A exceeds B (large positive-rank sum).
    One,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    NormalApprox,
    /// Every difference was zero; p is 1 by convention.
    Degenerate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of the positive differences (W+).
    pub statistic: f64,
    pub p_value: f64,
    pub method: Method,
    /// Pairs remaining after zero differences are dropped.
    pub n_effective: usize,
}

/// Largest n for which the exact sign-assignment distribution is enumerated.
const EXACT_LIMIT: usize = 20;

/// Average ranks of |d|, with ties sharing their mean rank. Returns ranks
/// doubled so every value is an exact integer even with .5 ties.
fn doubled_ranks(abs_diffs: &[f64]) -> Vec<u64> {
    let n = abs_diffs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| abs_diffs[i].partial_cmp(&abs_diffs[j]).expect("finite"));
    let mut ranks2 = vec![0u64; n];
    let mut pos = 0;
    while pos < n {
        let mut end = pos + 1;
        while end < n && abs_diffs[order[end]] == abs_diffs[order[pos]] {
            end += 1;
        }
        // Ranks pos+1 ..= end averaged; doubled sum over the tie group is
        // (pos+1 + end)·(end-pos), so the doubled average is pos+1+end.
        let avg2 = (pos + 1 + end) as u64;
        for &idx in &order[pos..end] {
            ranks2[idx] = avg2;
        }
        pos = end;
    }
    ranks2
}

/// Exact upper-tail probability P(W+ ≥ w) over all 2^n equiprobable sign
/// assignments, computed by dynamic programming over the doubled rank sums.
fn exact_upper_tail(ranks2: &[u64], w2: u64) -> f64 {
    let total: u64 = ranks2.iter().sum();
    let mut counts = vec![0.0f64; total as usize + 1];
    counts[0] = 1.0;
    for &r in ranks2 {
        for s in (r..=total).rev() {
            counts[s as usize] += counts[(s - r) as usize];
        }
    }
    let favourable: f64 = counts[w2.min(total) as usize..].iter().sum();
    favourable / 2f64.powi(ranks2.len() as i32)
}

/// Wilcoxon signed-rank test on paired samples.
///
/// Zero differences are dropped; tied absolute differences get average ranks.
/// Exact enumeration for up to [`EXACT_LIMIT`] effective pairs, a normal
/// approximation with continuity and tie corrections above.
pub fn wilcoxon_signed_rank(s: &PairedSamples, sided: Sided) -> Result<WilcoxonResult> {
    let diffs: Vec<f64> = s
        .a
        .iter()
        .zip(&s.b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::Config("non-finite difference in paired samples".into()));
    }
    let n = diffs.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            statistic: 0.0,
            p_value: 1.0,
            method: Method::Degenerate,
            n_effective: 0,
        });
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks2 = doubled_ranks(&abs);
    let w_plus2: u64 = diffs
        .iter()
        .zip(&ranks2)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, &r)| r)
        .sum();
    let statistic = w_plus2 as f64 / 2.0;

    let (p_value, method) = if n <= EXACT_LIMIT {
        let upper = exact_upper_tail(&ranks2, w_plus2);
        let total2: u64 = ranks2.iter().sum();
        let p = match sided {
            Sided::One => upper,
            Sided::Two => {
                // Lower tail via the mirror statistic W- = total − W+.
                let lower = exact_upper_tail(&ranks2, total2 - w_plus2);
                (2.0 * upper.min(lower)).min(1.0)
            }
        };
        (p, Method::Exact)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let mut var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0;
        // Tie correction: subtract Σ(t³ − t)/48 over tie groups.
        let mut sorted = abs.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        let mut i = 0;
        while i < n {
            let mut j = i + 1;
            while j < n && sorted[j] == sorted[i] {
                j += 1;
            }
            let t = (j - i) as f64;
            var -= (t * t * t - t) / 48.0;
            i = j;
        }
        let sd = var.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        let p = match sided {
            Sided::One => 1.0 - normal.cdf((statistic - mean - 0.5) / sd),
            Sided::Two => {
                let z = ((statistic - mean).abs() - 0.5).max(0.0) / sd;
                (2.0 * (1.0 - normal.cdf(z))).min(1.0)
            }
        };
        (p, Method::NormalApprox)
    };
    Ok(WilcoxonResult {
        statistic,
        p_value,
        method,
        n_effective: n,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample (n−1) standard deviation; 0 for a single value.
    pub std: f64,
    /// True when only one value was supplied, so the std is vacuous.
    pub single: bool,
}

/// Mean and sample standard deviation of a non-empty slice.
pub fn mean_std(values: &[f64]) -> Result<MeanStd> {
    if values.is_empty() {
        return Err(Error::Config("mean_std of an empty slice".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok(MeanStd {
            mean,
            std: 0.0,
            single: true,
        });
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(MeanStd {
        mean,
        std: var.sqrt(),
        single: false,
    })
}
