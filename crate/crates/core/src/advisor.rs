//! Install-time obscurity alerts.
//!
//! Every check is advisory: alerts ask for confirmation, they never forbid
//! an install on their own.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abandonment::{is_abandoned_within, AbandonmentError};
use crate::snapshot::{PackageRecord, Snapshot, Timestamp, SECONDS_PER_DAY};
use crate::squatting::normalize_import_name;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("policy field `{0}` must be positive")]
    NonPositive(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvisorPolicy {
    /// Packages below this many downloads count as obscure.
    pub obscure_download_threshold: u64,
    /// How many times more downloads a neighbour needs to be the likely intent.
    pub popularity_ratio_threshold: f64,
    pub max_alert_distance: usize,
    /// Names at least this long use `long_name_max_distance` instead.
    pub long_name_length: usize,
    pub long_name_max_distance: usize,
    pub abandonment_window_days: u32,
    /// The k most downloaded packages never raise a typosquat alert.
    pub exempt_top_k: usize,
    /// Raise every alert as block-by-default instead of a warning.
    pub strict: bool,
}

impl Default for AdvisorPolicy {
    fn default() -> Self {
        AdvisorPolicy {
            obscure_download_threshold: 1000,
            popularity_ratio_threshold: 100.0,
            max_alert_distance: 1,
            long_name_length: 10,
            long_name_max_distance: 2,
            abandonment_window_days: 365,
            exempt_top_k: 0,
            strict: false,
        }
    }
}

impl AdvisorPolicy {
    pub fn strict() -> Self {
        AdvisorPolicy {
            strict: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.obscure_download_threshold == 0 {
            return Err(PolicyError::NonPositive("obscure_download_threshold"));
        }
        if !(self.popularity_ratio_threshold.is_finite() && self.popularity_ratio_threshold > 0.0) {
            return Err(PolicyError::NonPositive("popularity_ratio_threshold"));
        }
        if self.max_alert_distance == 0 {
            return Err(PolicyError::NonPositive("max_alert_distance"));
        }
        if self.long_name_length == 0 {
            return Err(PolicyError::NonPositive("long_name_length"));
        }
        if self.long_name_max_distance == 0 {
            return Err(PolicyError::NonPositive("long_name_max_distance"));
        }
        if self.abandonment_window_days == 0 {
            return Err(PolicyError::NonPositive("abandonment_window_days"));
        }
        Ok(())
    }

    pub fn alert_distance(&self, name: &str) -> usize {
        if name.chars().count() >= self.long_name_length {
            self.long_name_max_distance
        } else {
            self.max_alert_distance
        }
    }

    fn severity(&self) -> Severity {
        if self.strict {
            Severity::BlockByDefault
        } else {
            Severity::Warn
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertKind {
    PossibleTyposquat,
    AbandonedPackage,
    ImportNameCollision,
    UnknownPackage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warn,
    BlockByDefault,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requested_downloads: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suggestion_downloads: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_release_age_days: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alert {
    pub kind: AlertKind,
    pub severity: Severity,
    pub subject: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suggestion: Option<String>,
    pub evidence: Evidence,
}

impl Alert {
    fn possible_typosquat(severity: Severity, subject: &str, suggestion: &str, evidence: Evidence) -> Self {
        Alert {
            kind: AlertKind::PossibleTyposquat,
            severity,
            subject: subject.to_string(),
            suggestion: Some(suggestion.to_string()),
            evidence,
        }
    }
}

impl fmt::Display for Alert {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let e = &self.evidence;
        match self.kind {
            AlertKind::PossibleTyposquat => write!(
                f,
                "`{}` is obscure ({} downloads) and {} edit(s) away from `{}` ({} downloads)",
                self.subject,
                e.requested_downloads.unwrap_or(0),
                e.distance.unwrap_or(0),
                self.suggestion.as_deref().unwrap_or("?"),
                e.suggestion_downloads.unwrap_or(0),
            )?,
            AlertKind::AbandonedPackage => write!(
                f,
                "`{}` has had no release for {} days",
                self.subject,
                e.last_release_age_days.unwrap_or(0)
            )?,
            AlertKind::ImportNameCollision => write!(
                f,
                "`{}` is a module provided by `{}`, but `{}` is a different package",
                self.subject,
                self.suggestion.as_deref().unwrap_or("?"),
                self.subject
            )?,
            AlertKind::UnknownPackage => {
                write!(f, "`{}` is not in the snapshot", self.subject)?;
                if let Some(s) = &self.suggestion {
                    write!(f, "; did you mean `{s}`?")?;
                }
            }
        }
        Ok(())
    }
}

/// Name, popularity and module lookups built once from a snapshot.
pub struct AdvisorIndex<'s> {
    snapshot: &'s Snapshot,
    folded: Vec<(Vec<char>, &'s PackageRecord)>,
    rank: BTreeMap<&'s str, usize>,
    providers: BTreeMap<String, Vec<&'s PackageRecord>>,
}

impl<'s> AdvisorIndex<'s> {
    pub fn new(snapshot: &'s Snapshot) -> Self {
        let folded = snapshot
            .records()
            .map(|r| (r.name.chars().flat_map(char::to_lowercase).collect(), r))
            .collect();
        let mut by_downloads: Vec<&PackageRecord> = snapshot.records().collect();
        by_downloads.sort_by(|a, b| b.downloads.cmp(&a.downloads).then_with(|| a.name.cmp(&b.name)));
        let rank = by_downloads
            .iter()
            .enumerate()
            .map(|(i, r)| (r.name.as_str(), i))
            .collect();
        let mut providers: BTreeMap<String, Vec<&PackageRecord>> = BTreeMap::new();
        for r in snapshot.records() {
            for m in &r.modules {
                let list = providers.entry(normalize_import_name(m)).or_default();
                if !list.iter().any(|p| p.name == r.name) {
                    list.push(r);
                }
            }
        }
        AdvisorIndex {
            snapshot,
            folded,
            rank,
            providers,
        }
    }

    pub fn snapshot(&self) -> &'s Snapshot {
        self.snapshot
    }

    /// Zero-based download rank; ties broken by name.
    pub fn rank(&self, name: &str) -> Option<usize> {
        self.rank.get(name).copied()
    }

    /// Packages within `1..=max` edits of `name`, as `(record, distance)`.
    pub fn neighbours(&self, name: &str, max: usize) -> Vec<(&'s PackageRecord, usize)> {
        let query: Vec<char> = name.chars().flat_map(char::to_lowercase).collect();
        self.folded
            .iter()
            .filter(|(f, _)| f.len().abs_diff(query.len()) <= max)
            .filter_map(|(f, r)| {
                let d = bounded(&query, f, max)?;
                (d >= 1).then_some((*r, d))
            })
            .collect()
    }

    fn best_neighbour(&self, name: &str, max: usize, min_downloads: f64) -> Option<(&'s PackageRecord, usize)> {
        self.neighbours(name, max)
            .into_iter()
            .filter(|(r, _)| r.downloads as f64 >= min_downloads)
            .min_by(|(a, da), (b, db)| {
                b.downloads
                    .cmp(&a.downloads)
                    .then(da.cmp(db))
                    .then_with(|| a.name.cmp(&b.name))
            })
    }
}

fn bounded(a: &[char], b: &[char], max: usize) -> Option<usize> {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            cur[j + 1] = (prev[j] + usize::from(ca != cb)).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        if cur.iter().min().is_some_and(|&m| m > max) {
            return None;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Some(prev[b.len()]).filter(|&d| d <= max)
}

fn age_days(record: &PackageRecord, reference: Timestamp) -> i64 {
    reference.seconds_since(record.last_release) / SECONDS_PER_DAY
}

/// Alerts for a request to install `requested`.
pub fn check_install(index: &AdvisorIndex<'_>, requested: &str, policy: &AdvisorPolicy) -> Vec<Alert> {
    let severity = policy.severity();
    let max = policy.alert_distance(requested);
    let Some(record) = index.snapshot.lookup(requested) else {
        let suggestion = index
            .best_neighbour(requested, max, 0.0)
            .map(|(r, _)| r.name.clone());
        return vec![Alert {
            kind: AlertKind::UnknownPackage,
            severity,
            subject: requested.to_string(),
            suggestion,
            evidence: Evidence::default(),
        }];
    };

    let mut alerts = Vec::new();
    let exempt = index.rank(&record.name).is_some_and(|r| r < policy.exempt_top_k);
    if record.downloads < policy.obscure_download_threshold && !exempt {
        let needed = policy.popularity_ratio_threshold * record.downloads.max(1) as f64;
        if let Some((popular, distance)) = index.best_neighbour(&record.name, max, needed) {
            alerts.push(Alert::possible_typosquat(
                severity,
                &record.name,
                &popular.name,
                Evidence {
                    distance: Some(distance),
                    requested_downloads: Some(record.downloads),
                    suggestion_downloads: Some(popular.downloads),
                    last_release_age_days: None,
                },
            ));
        }
    }
    let reference = index.snapshot.captured_at();
    if let Ok(true) = is_abandoned_within(record, reference, policy.abandonment_window_days) {
        alerts.push(abandoned_alert(record, reference, severity));
    }
    alerts
}

fn abandoned_alert(record: &PackageRecord, reference: Timestamp, severity: Severity) -> Alert {
    Alert {
        kind: AlertKind::AbandonedPackage,
        severity,
        subject: record.name.clone(),
        suggestion: None,
        evidence: Evidence {
            requested_downloads: Some(record.downloads),
            last_release_age_days: Some(age_days(record, reference)),
            ..Evidence::default()
        },
    }
}

/// Alerts for pulling an update of an already installed package.
pub fn check_update(
    record: &PackageRecord,
    reference: Timestamp,
    policy: &AdvisorPolicy,
) -> Result<Vec<Alert>, AbandonmentError> {
    Ok(
        if is_abandoned_within(record, reference, policy.abandonment_window_days)? {
            vec![abandoned_alert(record, reference, policy.severity())]
        } else {
            vec![]
        },
    )
}

/// Alerts when `requested` is an import name provided by some other package.
pub fn check_import(index: &AdvisorIndex<'_>, requested: &str, policy: &AdvisorPolicy) -> Vec<Alert> {
    let norm = normalize_import_name(requested);
    let Some(providers) = index.providers.get(&norm) else {
        return vec![];
    };
    let provider = providers
        .iter()
        .filter(|p| normalize_import_name(&p.name) != norm)
        .max_by(|a, b| a.downloads.cmp(&b.downloads).then_with(|| b.name.cmp(&a.name)));
    let Some(provider) = provider else {
        return vec![];
    };
    let registered = index.snapshot.lookup(requested);
    vec![Alert {
        kind: if registered.is_some() {
            AlertKind::ImportNameCollision
        } else {
            AlertKind::UnknownPackage
        },
        severity: policy.severity(),
        subject: registered.map_or_else(|| requested.to_string(), |r| r.name.clone()),
        suggestion: Some(provider.name.clone()),
        evidence: Evidence {
            requested_downloads: registered.map(|r| r.downloads),
            suggestion_downloads: Some(provider.downloads),
            ..Evidence::default()
        },
    }]
}

/// Install and import checks together. An import-based unknown-package alert
/// replaces the plain one, since it names the providing package.
pub fn check(index: &AdvisorIndex<'_>, requested: &str, policy: &AdvisorPolicy) -> Vec<Alert> {
    let import = check_import(index, requested, policy);
    let mut alerts: Vec<Alert> = check_install(index, requested, policy);
    if import.iter().any(|a| a.kind == AlertKind::UnknownPackage) {
        alerts.retain(|a| a.kind != AlertKind::UnknownPackage);
    }
    alerts.splice(0..0, import);
    alerts
}
