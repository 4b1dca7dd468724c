//! Normalized registry snapshot model and its line-delimited file format.
//!
//! A snapshot file is UTF-8 text. The first line is a header object carrying
//! the ecosystem and the capture time; every following non-blank line is one
//! JSON-encoded [`PackageRecord`]:
//!
//! ```text
//! {"ecosystem":"npm","captured_at":1546300800}
//! {"name":"cross-env","ecosystem":"npm","latest_version":"5.2.0","dependencies":["cross-spawn"],"last_release":1530000000,"downloads":10000000,"modules":[]}
//! ```

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ecosystem {
    Npm,
    #[serde(rename = "pypi")]
    PyPI,
}

impl fmt::Display for Ecosystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ecosystem::Npm => f.write_str("npm"),
            Ecosystem::PyPI => f.write_str("pypi"),
        }
    }
}

impl std::str::FromStr for Ecosystem {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "npm" => Ok(Ecosystem::Npm),
            "pypi" => Ok(Ecosystem::PyPI),
            other => Err(format!("unknown ecosystem `{other}` (expected npm or pypi)")),
        }
    }
}

/// UTC time in whole seconds since the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn now() -> Self {
        Timestamp(chrono::Utc::now().timestamp())
    }

    /// Parses an RFC 3339 / ISO 8601 date-time. A missing offset is read as UTC,
    /// which is what PyPI's `upload_time` field uses.
    pub fn parse_iso8601(s: &str) -> Option<Self> {
        if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(s) {
            return Some(Timestamp(dt.timestamp()));
        }
        chrono::NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f")
            .ok()
            .map(|dt| Timestamp(dt.and_utc().timestamp()))
    }

    pub fn days_before(self, days: i64) -> Self {
        Timestamp(self.0 - days * SECONDS_PER_DAY)
    }

    /// Whole seconds elapsed from `earlier` to `self`; negative if `earlier` is later.
    pub fn seconds_since(self, earlier: Timestamp) -> i64 {
        self.0 - earlier.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Metadata for one package, taken from its latest version.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PackageRecord {
    pub name: String,
    pub ecosystem: Ecosystem,
    pub latest_version: String,
    #[serde(default)]
    pub dependencies: Vec<String>,
    pub last_release: Timestamp,
    pub downloads: u64,
    /// Top-level importable modules (PyPI only).
    #[serde(default)]
    pub modules: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file_hashes: Option<BTreeSet<String>>,
}

impl PackageRecord {
    pub fn new(name: impl Into<String>, ecosystem: Ecosystem) -> Self {
        PackageRecord {
            name: name.into(),
            ecosystem,
            latest_version: "0.0.0".to_string(),
            dependencies: Vec::new(),
            last_release: Timestamp(0),
            downloads: 0,
            modules: Vec::new(),
            file_hashes: None,
        }
    }

    pub fn with_dependencies<I, S>(mut self, deps: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.dependencies = deps.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_downloads(mut self, downloads: u64) -> Self {
        self.downloads = downloads;
        self
    }

    pub fn with_last_release(mut self, at: Timestamp) -> Self {
        self.last_release = at;
        self
    }

    pub fn with_modules<I, S>(mut self, modules: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.modules = modules.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_file_hashes<I, S>(mut self, hashes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.file_hashes = Some(hashes.into_iter().map(Into::into).collect());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    ecosystem: Ecosystem,
    captured_at: Timestamp,
}

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("snapshot header line (ecosystem, captured_at) is missing")]
    MissingHeader,
    #[error("line {line}: duplicate package name `{name}`")]
    DuplicateName { name: String, line: usize },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WarningKind {
    SelfDependency,
    DuplicateDependency(String),
}

/// A normalization applied while ingesting a record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestWarning {
    pub line: usize,
    pub package: String,
    pub kind: WarningKind,
}

impl fmt::Display for IngestWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            WarningKind::SelfDependency => write!(
                f,
                "line {}: `{}` lists itself as a dependency; dropped",
                self.line, self.package
            ),
            WarningKind::DuplicateDependency(dep) => write!(
                f,
                "line {}: `{}` lists dependency `{}` more than once; deduplicated",
                self.line, self.package, dep
            ),
        }
    }
}

/// Immutable collection of package records from one ecosystem at one point in time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    ecosystem: Ecosystem,
    captured_at: Timestamp,
    records: BTreeMap<String, PackageRecord>,
    folded: BTreeMap<String, String>,
}

pub struct ParsedSnapshot {
    pub snapshot: Snapshot,
    pub warnings: Vec<IngestWarning>,
}

impl Snapshot {
    fn empty(ecosystem: Ecosystem, captured_at: Timestamp) -> Self {
        Snapshot {
            ecosystem,
            captured_at,
            records: BTreeMap::new(),
            folded: BTreeMap::new(),
        }
    }

    /// Builds a snapshot from in-memory records, applying the same validation
    /// and dependency normalization as [`parse_snapshot`]. Positions in errors
    /// are 1-based record indices.
    pub fn from_records(
        ecosystem: Ecosystem,
        captured_at: Timestamp,
        records: impl IntoIterator<Item = PackageRecord>,
    ) -> Result<Self, SnapshotError> {
        Self::from_records_with_warnings(ecosystem, captured_at, records).map(|p| p.snapshot)
    }

    pub fn from_records_with_warnings(
        ecosystem: Ecosystem,
        captured_at: Timestamp,
        records: impl IntoIterator<Item = PackageRecord>,
    ) -> Result<ParsedSnapshot, SnapshotError> {
        let mut snapshot = Snapshot::empty(ecosystem, captured_at);
        let mut warnings = Vec::new();
        for (i, record) in records.into_iter().enumerate() {
            snapshot.insert(record, i + 1, &mut warnings)?;
        }
        Ok(ParsedSnapshot { snapshot, warnings })
    }

    fn insert(
        &mut self,
        mut record: PackageRecord,
        line: usize,
        warnings: &mut Vec<IngestWarning>,
    ) -> Result<(), SnapshotError> {
        let malformed = |reason: String| SnapshotError::Malformed { line, reason };
        if record.name.trim().is_empty() {
            return Err(malformed("package name is empty".into()));
        }
        if record.ecosystem != self.ecosystem {
            return Err(malformed(format!(
                "record `{}` is tagged {} but the snapshot is {}",
                record.name, record.ecosystem, self.ecosystem
            )));
        }
        if record.last_release > self.captured_at {
            return Err(malformed(format!(
                "record `{}` was released at {} after the capture time {}",
                record.name, record.last_release, self.captured_at
            )));
        }
        if self.records.contains_key(&record.name) {
            return Err(SnapshotError::DuplicateName {
                name: record.name,
                line,
            });
        }

        let own = record.name.to_lowercase();
        let mut seen = HashSet::new();
        let mut deps = Vec::with_capacity(record.dependencies.len());
        for dep in record.dependencies.drain(..) {
            let dep = dep.trim().to_string();
            if dep.is_empty() {
                continue;
            }
            if dep.to_lowercase() == own {
                warnings.push(IngestWarning {
                    line,
                    package: record.name.clone(),
                    kind: WarningKind::SelfDependency,
                });
                continue;
            }
            if !seen.insert(dep.clone()) {
                warnings.push(IngestWarning {
                    line,
                    package: record.name.clone(),
                    kind: WarningKind::DuplicateDependency(dep),
                });
                continue;
            }
            deps.push(dep);
        }
        record.dependencies = deps;

        self.folded
            .entry(own)
            .or_insert_with(|| record.name.clone());
        self.records.insert(record.name.clone(), record);
        Ok(())
    }

    pub fn ecosystem(&self) -> Ecosystem {
        self.ecosystem
    }

    pub fn captured_at(&self) -> Timestamp {
        self.captured_at
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records in ascending name order.
    pub fn records(&self) -> impl Iterator<Item = &PackageRecord> + '_ {
        self.records.values()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> + '_ {
        self.records.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Option<&PackageRecord> {
        self.records.get(name)
    }

    /// Exact lookup first, then a case-insensitive one. When several records
    /// fold to the same lowercase name the lexicographically first wins.
    pub fn lookup(&self, name: &str) -> Option<&PackageRecord> {
        self.records.get(name).or_else(|| {
            self.folded
                .get(&name.to_lowercase())
                .and_then(|n| self.records.get(n))
        })
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header = Header {
            ecosystem: self.ecosystem,
            captured_at: self.captured_at,
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for record in self.records.values() {
            serde_json::to_writer(&mut out, record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }
}

/// Reads a snapshot file. Blank lines are ignored; line numbers in errors and
/// warnings are 1-based physical lines.
pub fn parse_snapshot<R: BufRead>(input: R) -> Result<ParsedSnapshot, SnapshotError> {
    let mut snapshot: Option<Snapshot> = None;
    let mut warnings = Vec::new();

    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        match snapshot.as_mut() {
            None => {
                let value: serde_json::Value =
                    serde_json::from_str(text).map_err(|e| SnapshotError::Malformed {
                        line: line_no,
                        reason: e.to_string(),
                    })?;
                let header: Header =
                    serde_json::from_value(value).map_err(|_| SnapshotError::MissingHeader)?;
                snapshot = Some(Snapshot::empty(header.ecosystem, header.captured_at));
            }
            Some(snap) => {
                let record: PackageRecord =
                    serde_json::from_str(text).map_err(|e| SnapshotError::Malformed {
                        line: line_no,
                        reason: e.to_string(),
                    })?;
                snap.insert(record, line_no, &mut warnings)?;
            }
        }
    }

    let snapshot = snapshot.ok_or(SnapshotError::MissingHeader)?;
    Ok(ParsedSnapshot { snapshot, warnings })
}

pub fn parse_snapshot_str(text: &str) -> Result<ParsedSnapshot, SnapshotError> {
    parse_snapshot(text.as_bytes())
}
