//! Pure metric computations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sandbox::Status;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("k={k} must satisfy 1 <= k <= n={n}")]
    KOutOfRange { n: u64, k: u64 },
    #[error("count {c} exceeds sample size n={n}")]
    CountOutOfRange { n: u64, c: u64 },
    #[error("{0}")]
    Domain(&'static str),
}

/// Unbiased estimate of the chance that at least one of `k` draws out of `n`
/// samples (without replacement) is among the `c` good ones.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64, MetricError> {
    if k == 0 || k > n {
        return Err(MetricError::KOutOfRange { n, k });
    }
    if c > n {
        return Err(MetricError::CountOutOfRange { n, c });
    }
    if n - c < k {
        return Ok(1.0);
    }
    // C(n-c, k) / C(n, k) = prod_{i=n-c+1}^{n} (1 - k/i)
    let miss: f64 = ((n - c + 1)..=n).map(|i| 1.0 - k as f64 / i as f64).product();
    Ok((1.0 - miss).clamp(0.0, 1.0))
}

/// [`pass_at_k`] over samples that are correct and strictly faster than the best reference.
pub fn efficient_at_k(n: u64, c_f: u64, k: u64) -> Result<f64, MetricError> {
    pass_at_k(n, c_f, k)
}

pub fn speedup(gt_ic: f64, o_ic: f64) -> Result<f64, MetricError> {
    if !(gt_ic > 0.0 && o_ic > 0.0) {
        return Err(MetricError::Domain("speedup needs positive instruction counts"));
    }
    Ok(gt_ic / o_ic)
}

/// Relative standard deviation (population) as a percentage.
pub fn rsd(samples: &[f64]) -> Result<f64, MetricError> {
    if samples.len() < 2 {
        return Err(MetricError::Domain("rsd needs at least two samples"));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return Err(MetricError::Domain("rsd is undefined for a zero mean"));
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok(var.sqrt() / mean.abs() * 100.0)
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, MetricError> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(MetricError::Domain("pearson needs two equal-length series of at least two points"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::Domain("pearson is undefined for a constant series"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Fraction of executions that finished ok.
pub fn accuracy(outcomes: &[Status]) -> Result<f64, MetricError> {
    if outcomes.is_empty() {
        return Err(MetricError::Domain("accuracy needs at least one outcome"));
    }
    let ok = outcomes.iter().filter(|s| **s == Status::Ok).count();
    Ok(ok as f64 / outcomes.len() as f64)
}

/// Mean executed-line ratio over the payloads that produced a measurement.
pub fn mean_coverage(ratios: &[Option<f64>]) -> Option<f64> {
    let got: Vec<f64> = ratios.iter().flatten().copied().collect();
    (!got.is_empty()).then(|| got.iter().sum::<f64>() / got.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distinguishability {
    pub per_problem: BTreeMap<String, f64>,
    pub mean: Option<f64>,
    /// Problems with fewer than two correct solutions.
    pub skipped: Vec<String>,
}

/// Spread of per-solution aggregate counts; `None` marks a failing solution.
pub fn distinguishability_rsd(problems: &BTreeMap<String, Vec<Option<f64>>>) -> Distinguishability {
    let mut per_problem = BTreeMap::new();
    let mut skipped = Vec::new();
    for (id, counts) in problems {
        let ok: Vec<f64> = counts.iter().flatten().copied().collect();
        match (ok.len() >= 2).then(|| rsd(&ok)) {
            Some(Ok(v)) => {
                per_problem.insert(id.clone(), v);
            }
            _ => skipped.push(id.clone()),
        }
    }
    let mean = (!per_problem.is_empty())
        .then(|| per_problem.values().sum::<f64>() / per_problem.len() as f64);
    Distinguishability { per_problem, mean, skipped }
}

/// Per-problem counts feeding pass@k and efficient@k.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub problem_id: String,
    pub n: u64,
    pub c: u64,
    pub c_f: u64,
}

impl SampleOutcome {
    pub fn new(problem_id: impl Into<String>, n: u64, c: u64, c_f: u64) -> Result<Self, MetricError> {
        if c > n {
            return Err(MetricError::CountOutOfRange { n, c });
        }
        if c_f > c {
            return Err(MetricError::Domain("c_f cannot exceed c"));
        }
        Ok(Self { problem_id: problem_id.into(), n, c, c_f })
    }
}
