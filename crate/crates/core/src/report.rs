//! Structured text output: one JSON object per line, tagged by `record`.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abandonment::AbandonmentReport;
use crate::advisor::Alert;
use crate::depgraph::{CdfPoint, GraphStats, Unresolved};
use crate::incidents::{IncidentRecord, SummaryStats};
use crate::popularity::{CcdfPoint, PowerLawFit};
use crate::snapshot::Ecosystem;
use crate::squatting::SquatCandidate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum Record {
    IngestSummary {
        ecosystem: Ecosystem,
        packages: usize,
        failures: usize,
        warnings: usize,
    },
    IngestFailure {
        package: String,
        reason: String,
    },
    Warning {
        message: String,
    },
    GraphStats(GraphStats),
    Unresolved(Unresolved),
    ClosureCdf(CdfPoint),
    TopShare {
        k: usize,
        share: f64,
    },
    ThresholdCount {
        threshold: u64,
        count: usize,
    },
    Ccdf(CcdfPoint),
    PowerLawFit(PowerLawFit),
    FitOverlay {
        value: f64,
        fraction: f64,
    },
    FitUnavailable {
        reason: String,
    },
    Abandonment(AbandonmentReport),
    SquatCandidate(SquatCandidate),
    ShortNameSaturation {
        length: usize,
        fraction: f64,
    },
    Incident(IncidentRecord),
    IncidentSummary(SummaryStats),
    Alert(Alert),
    Decision {
        subject: String,
        proceed: bool,
    },
}

#[derive(Debug, Error)]
#[error("line {line}: {source}")]
pub struct ReportError {
    pub line: usize,
    pub source: serde_json::Error,
}

pub fn write_record<W: Write>(mut out: W, record: &Record) -> io::Result<()> {
    serde_json::to_writer(&mut out, record)?;
    out.write_all(b"\n")
}

/// Parses structured output; blank lines are skipped.
pub fn parse_records(text: &str) -> Result<Vec<Record>, ReportError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|source| ReportError { line: i + 1, source }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abandonment::AbandonedPackage;
    use crate::advisor::{AlertKind, Evidence, Severity};
    use crate::incidents::{incident_summary, load_incidents};
    use crate::squatting::{ImportStatus, SquatKind};

    fn round_trip(records: &[Record]) {
        let mut buf = Vec::new();
        for r in records {
            write_record(&mut buf, r).unwrap();
        }
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), records.len());
        assert_eq!(parse_records(&text).unwrap(), records);
    }

    #[test]
    fn every_variant_round_trips() {
        let incidents = load_incidents();
        round_trip(&[
            Record::IngestSummary {
                ecosystem: Ecosystem::PyPI,
                packages: 3,
                failures: 1,
                warnings: 0,
            },
            Record::IngestFailure {
                package: "x".into(),
                reason: "not found".into(),
            },
            Record::Warning { message: "m".into() },
            Record::GraphStats(GraphStats {
                node_count: 4,
                avg_outdegree: 0.75,
                avg_tree_size: 1.0 / 3.0,
                avg_tree_depth: 2.0,
                disconnected_removed: 1,
            }),
            Record::Unresolved(Unresolved {
                depender: "a".into(),
                missing: "b".into(),
            }),
            Record::ClosureCdf(CdfPoint {
                size: 2,
                cumulative: 3,
                fraction: 0.1,
            }),
            Record::TopShare { k: 2, share: 0.6 },
            Record::ThresholdCount {
                threshold: 1000,
                count: 7,
            },
            Record::Ccdf(CcdfPoint {
                value: 12.0,
                count: 5,
                fraction: 0.5,
            }),
            Record::PowerLawFit(PowerLawFit {
                alpha: 1.83,
                xmin: 1e4,
                n_tail: 12,
            }),
            Record::FitOverlay {
                value: 2e4,
                fraction: 0.01,
            },
            Record::FitUnavailable { reason: "r".into() },
            Record::Abandonment(AbandonmentReport {
                total: 30,
                abandoned: 11,
                fraction: 11.0 / 30.0,
                top_abandoned: vec![AbandonedPackage {
                    name: "old".into(),
                    downloads: u64::MAX,
                }],
                cumulative_abandoned_downloads: u64::MAX,
            }),
            Record::SquatCandidate(SquatCandidate {
                kind: SquatKind::ImportSquat,
                subject: "bs4".into(),
                target: "beautifulsoup4".into(),
                distance: None,
                subject_downloads: 0,
                target_downloads: 9,
                popularity_ratio: 9.0,
                content_similarity: Some(0.25),
                import_status: Some(ImportStatus::OpenSlot),
                evidence: "e".into(),
            }),
            Record::ShortNameSaturation {
                length: 3,
                fraction: 0.5,
            },
            Record::Incident(incidents[0].clone()),
            Record::IncidentSummary(incident_summary(&incidents).unwrap()),
            Record::Alert(Alert {
                kind: AlertKind::PossibleTyposquat,
                severity: Severity::Warn,
                subject: "crossenv".into(),
                suggestion: Some("cross-env".into()),
                evidence: Evidence {
                    distance: Some(1),
                    ..Evidence::default()
                },
            }),
            Record::Decision {
                subject: "crossenv".into(),
                proceed: false,
            },
        ]);
    }

    #[test]
    fn tag_field_name() {
        let mut buf = Vec::new();
        write_record(&mut buf, &Record::TopShare { k: 2, share: 0.5 }).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "{\"record\":\"top_share\",\"k\":2,\"share\":0.5}\n");
    }

    #[test]
    fn parse_error_reports_line() {
        let err = parse_records("{\"record\":\"warning\",\"message\":\"x\"}\n\nnot json\n").unwrap_err();
        assert_eq!(err.line, 3);
    }
}
