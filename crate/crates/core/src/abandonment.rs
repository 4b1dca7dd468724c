//! Release-recency abandonment: a package with no release in the window
//! before the reference time is treated as abandoned.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::snapshot::{PackageRecord, Snapshot, Timestamp, SECONDS_PER_DAY};

/// Twelve months, fixed as a day count.
pub const DEFAULT_WINDOW_DAYS: u32 = 365;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AbandonmentError {
    #[error("`{name}` was released at {released}, after the reference time {reference}")]
    FutureRelease {
        name: String,
        released: Timestamp,
        reference: Timestamp,
    },
    #[error("snapshot has no packages")]
    EmptySnapshot,
}

/// True iff strictly more than `window_days` days separate the last release
/// from `reference`. A release exactly `window_days` old is still active.
pub fn is_abandoned_within(
    record: &PackageRecord,
    reference: Timestamp,
    window_days: u32,
) -> Result<bool, AbandonmentError> {
    let age = reference.seconds_since(record.last_release);
    if age < 0 {
        return Err(AbandonmentError::FutureRelease {
            name: record.name.clone(),
            released: record.last_release,
            reference,
        });
    }
    Ok(age > i64::from(window_days) * SECONDS_PER_DAY)
}

pub fn is_abandoned(record: &PackageRecord, reference: Timestamp) -> Result<bool, AbandonmentError> {
    is_abandoned_within(record, reference, DEFAULT_WINDOW_DAYS)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbandonedPackage {
    pub name: String,
    pub downloads: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbandonmentReport {
    pub total: usize,
    pub abandoned: usize,
    pub fraction: f64,
    /// Most downloaded abandoned packages; downloads descending, then name.
    pub top_abandoned: Vec<AbandonedPackage>,
    pub cumulative_abandoned_downloads: u64,
}

pub fn abandonment_report(
    snapshot: &Snapshot,
    reference: Timestamp,
    top_n: usize,
) -> Result<AbandonmentReport, AbandonmentError> {
    abandonment_report_within(snapshot, reference, top_n, DEFAULT_WINDOW_DAYS)
}

pub fn abandonment_report_within(
    snapshot: &Snapshot,
    reference: Timestamp,
    top_n: usize,
    window_days: u32,
) -> Result<AbandonmentReport, AbandonmentError> {
    if snapshot.is_empty() {
        return Err(AbandonmentError::EmptySnapshot);
    }
    let mut abandoned = Vec::new();
    for record in snapshot.records() {
        if is_abandoned_within(record, reference, window_days)? {
            abandoned.push(AbandonedPackage {
                name: record.name.clone(),
                downloads: record.downloads,
            });
        }
    }
    let cumulative = abandoned
        .iter()
        .fold(0u64, |acc, p| acc.saturating_add(p.downloads));
    let count = abandoned.len();
    abandoned.sort_by(|a, b| b.downloads.cmp(&a.downloads).then_with(|| a.name.cmp(&b.name)));
    abandoned.truncate(top_n);
    Ok(AbandonmentReport {
        total: snapshot.len(),
        abandoned: count,
        fraction: count as f64 / snapshot.len() as f64,
        top_abandoned: abandoned,
        cumulative_abandoned_downloads: cumulative,
    })
}
