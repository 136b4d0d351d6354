use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::correlation::ranks;
use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.05;

fn sample_mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var)
}

/// Two-sided Welch t-test: `(mean(a) - mean(b), p-value)`.
///
/// Two zero-variance samples give p = 1 when their means agree and p = 0
/// otherwise.
pub fn welch_test(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::usage("Welch test needs at least two values per sample"));
    }
    let (ma, va) = sample_mean_var(a);
    let (mb, vb) = sample_mean_var(b);
    let diff = ma - mb;
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if se2 == 0.0 {
        return Ok((diff, if diff == 0.0 { 1.0 } else { 0.0 }));
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::numeric(e.to_string()))?;
    let p = 2.0 * dist.cdf(-t.abs());
    Ok((diff, p.clamp(0.0, 1.0)))
}

/// Compares two sets of per-run scores: 1 when `a` is significantly greater,
/// -1 when significantly smaller, 0 otherwise.
pub fn ttest_runs(a: &[f64], b: &[f64], alpha: f64) -> Result<i8> {
    if a.len() != b.len() {
        return Err(Error::dim("run lists differ in length"));
    }
    let (diff, p) = welch_test(a, b)?;
    Ok(if p < alpha && diff != 0.0 {
        diff.signum() as i8
    } else {
        0
    })
}

/// Probability that a positive outranks a negative (ties count one half),
/// from the Mann-Whitney rank sum.
pub fn rank_sum_auc(positives: &[f64], negatives: &[f64]) -> Option<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return None;
    }
    let all: Vec<f64> = positives.iter().chain(negatives).copied().collect();
    let r = ranks(&all);
    let np = positives.len() as f64;
    let rank_sum: f64 = r[..positives.len()].iter().sum();
    let u = rank_sum - np * (np + 1.0) / 2.0;
    Some(u / (np * negatives.len() as f64))
}

/// Pair-classification analysis of an objective metric.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KrasulaReport {
    /// Separation of significantly different pairs from similar ones by |delta|.
    pub auc_ds: Option<f64>,
    /// Separation of better from worse among the different pairs.
    pub auc_bw: Option<f64>,
    /// Share of different pairs whose predicted order matches the subjective one.
    pub cc: Option<f64>,
    pub different_pairs: usize,
    pub similar_pairs: usize,
}

/// Krasula-style analysis over every unordered stimulus pair.
///
/// Predictions and observer scores must share orientation (higher is better
/// for both, or lower is better for both).
pub fn krasula_analysis(pred: &[f64], observers: &[Vec<f64>], alpha: f64) -> Result<KrasulaReport> {
    if pred.len() != observers.len() {
        return Err(Error::dim("one observer list per prediction is required"));
    }
    if pred.len() < 2 {
        return Err(Error::usage("pair analysis needs at least two stimuli"));
    }
    if observers.iter().any(|o| o.len() < 2) {
        return Err(Error::usage("every stimulus needs at least two observer scores"));
    }
    let mut different = Vec::new();
    let mut similar = Vec::new();
    let mut oriented = Vec::new();
    for i in 0..pred.len() {
        for j in i + 1..pred.len() {
            let (diff, p) = welch_test(&observers[i], &observers[j])?;
            let delta = pred[i] - pred[j];
            if p < alpha && diff != 0.0 {
                different.push(delta.abs());
                oriented.push(if diff > 0.0 { delta } else { -delta });
            } else {
                similar.push(delta.abs());
            }
        }
    }
    let negated: Vec<f64> = oriented.iter().map(|d| -d).collect();
    let cc =
        (!oriented.is_empty()).then(|| oriented.iter().filter(|&&d| d > 0.0).count() as f64 / oriented.len() as f64);
    Ok(KrasulaReport {
        auc_ds: rank_sum_auc(&different, &similar),
        auc_bw: rank_sum_auc(&oriented, &negated),
        cc,
        different_pairs: different.len(),
        similar_pairs: similar.len(),
    })
}
