//! Download-count analytics: concentration at the top, threshold counts,
//! the empirical CCDF and a continuous power-law tail fit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::snapshot::{Ecosystem, Snapshot};

/// Lower bound of the power-law fit used when the caller does not pick one.
pub const DEFAULT_XMIN: f64 = 1e4;

/// Download count at or above which a package is considered non-negligible.
pub const NON_NEGLIGIBLE_DOWNLOADS: u64 = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum PopularityError {
    #[error("snapshot has no packages")]
    EmptySnapshot,
    #[error("total download count is zero")]
    ZeroTotal,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("xmin must be a positive finite number, got {0}")]
    InvalidXmin(f64),
    #[error("power-law fit needs at least 2 samples at or above xmin, found {n_tail}")]
    InsufficientTail { n_tail: usize },
    #[error("every tail sample equals xmin; the exponent is unbounded")]
    DegenerateTail,
    #[error("sample is empty")]
    EmptySample,
    #[error("sample values must be positive and finite, got {0}")]
    InvalidSample(f64),
}

/// Positive download counts, one per package.
#[derive(Debug, Clone, PartialEq)]
pub struct DownloadSample {
    values: Vec<f64>,
    pub ecosystem: Ecosystem,
}

impl DownloadSample {
    pub fn new(ecosystem: Ecosystem, values: Vec<f64>) -> Result<Self, PopularityError> {
        if let Some(&bad) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(PopularityError::InvalidSample(bad));
        }
        Ok(DownloadSample { values, ecosystem })
    }

    /// Download counts of every snapshot record; zero-download packages are left out.
    pub fn from_snapshot(snapshot: &Snapshot) -> Self {
        DownloadSample {
            values: snapshot
                .records()
                .filter(|r| r.downloads > 0)
                .map(|r| r.downloads as f64)
                .collect(),
            ecosystem: snapshot.ecosystem(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Packages ordered by downloads descending, ties by name ascending.
pub fn ranked_by_downloads(snapshot: &Snapshot) -> Vec<(&str, u64)> {
    let mut ranked: Vec<(&str, u64)> = snapshot
        .records()
        .map(|r| (r.name.as_str(), r.downloads))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked
}

/// Share of all downloads that go to the `k` most downloaded packages.
pub fn top_share(snapshot: &Snapshot, k: usize) -> Result<f64, PopularityError> {
    if k == 0 {
        return Err(PopularityError::InvalidK);
    }
    if snapshot.is_empty() {
        return Err(PopularityError::EmptySnapshot);
    }
    let ranked = ranked_by_downloads(snapshot);
    let total: u128 = ranked.iter().map(|(_, d)| *d as u128).sum();
    if total == 0 {
        return Err(PopularityError::ZeroTotal);
    }
    let top: u128 = ranked.iter().take(k).map(|(_, d)| *d as u128).sum();
    Ok(top as f64 / total as f64)
}

/// Packages with at least `threshold` downloads (inclusive).
pub fn count_at_least(snapshot: &Snapshot, threshold: u64) -> usize {
    snapshot
        .records()
        .filter(|r| r.downloads >= threshold)
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub alpha: f64,
    pub xmin: f64,
    pub n_tail: usize,
}

impl PowerLawFit {
    /// Model probability of a tail sample being at least `x` (`x >= xmin`).
    pub fn tail_ccdf(&self, x: f64) -> f64 {
        (x / self.xmin).powf(1.0 - self.alpha)
    }
}

/// Continuous maximum-likelihood estimate of the tail exponent:
/// `alpha = 1 + n / sum(ln(x / xmin))` over samples `x >= xmin`.
pub fn fit_power_law(sample: &DownloadSample, xmin: f64) -> Result<PowerLawFit, PopularityError> {
    if !(xmin.is_finite() && xmin > 0.0) {
        return Err(PopularityError::InvalidXmin(xmin));
    }
    let mut n_tail = 0usize;
    let mut log_sum = 0.0f64;
    for &x in sample.values.iter().filter(|&&x| x >= xmin) {
        n_tail += 1;
        log_sum += (x / xmin).ln();
    }
    if n_tail < 2 {
        return Err(PopularityError::InsufficientTail { n_tail });
    }
    if log_sum <= 0.0 {
        return Err(PopularityError::DegenerateTail);
    }
    Ok(PowerLawFit {
        alpha: 1.0 + n_tail as f64 / log_sum,
        xmin,
        n_tail,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcdfPoint {
    pub value: f64,
    /// Samples at or above `value`.
    pub count: usize,
    pub fraction: f64,
}

/// Empirical CCDF with one point per distinct value, ascending.
pub fn ccdf(sample: &DownloadSample) -> Result<Vec<CcdfPoint>, PopularityError> {
    if sample.is_empty() {
        return Err(PopularityError::EmptySample);
    }
    let mut sorted = sample.values.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut points = Vec::new();
    for (i, &v) in sorted.iter().enumerate() {
        if i == 0 || sorted[i - 1] != v {
            let count = n - i;
            points.push(CcdfPoint {
                value: v,
                count,
                fraction: count as f64 / n as f64,
            });
        }
    }
    Ok(points)
}

/// Fitted CCDF evaluated at the distinct sample values `>= xmin`, scaled by
/// the tail's share of the sample so it overlays the empirical curve.
pub fn fit_overlay(sample: &DownloadSample, fit: &PowerLawFit) -> Result<Vec<(f64, f64)>, PopularityError> {
    let points = ccdf(sample)?;
    let share = fit.n_tail as f64 / sample.len() as f64;
    Ok(points
        .iter()
        .filter(|p| p.value >= fit.xmin)
        .map(|p| (p.value, share * fit.tail_ccdf(p.value)))
        .collect())
}
