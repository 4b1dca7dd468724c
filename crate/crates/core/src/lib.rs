//! Risk analytics for language-based package ecosystems (npm, PyPI).
//!
//! The crate works over an immutable [`Snapshot`] of registry metadata and
//! provides:
//!
//! - dependency-graph structure metrics ([`depgraph`]),
//! - download popularity statistics and power-law fitting ([`popularity`]),
//! - release-recency abandonment classification ([`abandonment`]),
//! - typosquatting and import-squatting candidate scans ([`squatting`]),
//! - install-time obscurity alerts ([`advisor`]),
//! - a bundled dataset of historical ecosystem attacks ([`incidents`]).
//!
//! Snapshots are built with the registry clients in [`registry`] and stored in
//! the line-delimited format handled by [`snapshot`].

pub mod abandonment;
pub mod advisor;
pub mod depgraph;
pub mod incidents;
pub mod manifest;
pub mod popularity;
pub mod registry;
pub mod report;
pub mod snapshot;
pub mod squatting;

pub use snapshot::{Ecosystem, PackageRecord, Snapshot, Timestamp};
