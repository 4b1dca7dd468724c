//! Registry API clients used to build snapshots.
//!
//! HTTP goes through the [`Transport`] trait so that clients can be driven by
//! a scripted transport in tests. [`HttpTransport`] is the real one.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::manifest::requirement_name;
use crate::snapshot::{Ecosystem, PackageRecord, Timestamp};

/// Endpoint settings for one registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistryConfig {
    pub base_url: String,
    /// Endpoint serving download counts; `None` leaves counts at zero.
    #[serde(default)]
    pub counts_url: Option<String>,
    /// Requests per second, shared by every client using the same limiter.
    pub rate_limit: f64,
    pub timeout_secs: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_initial_ms")]
    pub backoff_initial_ms: u64,
    #[serde(default = "default_backoff_max_ms")]
    pub backoff_max_ms: u64,
}

fn default_max_retries() -> u32 {
    5
}

fn default_backoff_initial_ms() -> u64 {
    500
}

fn default_backoff_max_ms() -> u64 {
    30_000
}

impl RegistryConfig {
    pub fn npm() -> Self {
        RegistryConfig {
            base_url: "https://registry.npmjs.org".into(),
            counts_url: Some("https://api.npmjs.org/downloads/point/last-year".into()),
            rate_limit: 10.0,
            timeout_secs: 30.0,
            max_retries: default_max_retries(),
            backoff_initial_ms: default_backoff_initial_ms(),
            backoff_max_ms: default_backoff_max_ms(),
        }
    }

    pub fn pypi() -> Self {
        RegistryConfig {
            base_url: "https://pypi.org".into(),
            counts_url: Some("https://pypistats.org/api/packages".into()),
            rate_limit: 5.0,
            timeout_secs: 30.0,
            max_retries: default_max_retries(),
            backoff_initial_ms: default_backoff_initial_ms(),
            backoff_max_ms: default_backoff_max_ms(),
        }
    }

    pub fn for_ecosystem(ecosystem: Ecosystem) -> Self {
        match ecosystem {
            Ecosystem::Npm => Self::npm(),
            Ecosystem::PyPI => Self::pypi(),
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64.checked_shl(attempt).unwrap_or(u64::MAX);
        Duration::from_millis(
            self.backoff_initial_ms
                .saturating_mul(factor)
                .min(self.backoff_max_ms),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connection(String),
}

pub trait Transport: Send + Sync {
    fn get(&self, url: &str, timeout: Duration) -> Result<HttpResponse, TransportError>;
}

impl<T: Transport + ?Sized> Transport for Arc<T> {
    fn get(&self, url: &str, timeout: Duration) -> Result<HttpResponse, TransportError> {
        (**self).get(url, timeout)
    }
}

/// Blocking HTTP transport.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new() -> Result<Self, RegistryError> {
        let client = reqwest::blocking::Client::builder()
            .user_agent(concat!("ecoscope/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| RegistryError::Transport(e.to_string()))?;
        Ok(HttpTransport { client })
    }
}

impl Transport for HttpTransport {
    fn get(&self, url: &str, timeout: Duration) -> Result<HttpResponse, TransportError> {
        let resp = self
            .client
            .get(url)
            .timeout(timeout)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    TransportError::Timeout
                } else {
                    TransportError::Connection(e.to_string())
                }
            })?;
        let status = resp.status().as_u16();
        let body = resp
            .text()
            .map_err(|e| TransportError::Connection(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

/// Spaces requests at least `1 / rate` seconds apart across all holders.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next_slot: Mutex<Instant>,
}

impl RateLimiter {
    pub fn per_second(rate: f64) -> Self {
        let interval = if rate > 0.0 && rate.is_finite() {
            Duration::from_secs_f64(1.0 / rate)
        } else {
            Duration::ZERO
        };
        RateLimiter {
            interval,
            next_slot: Mutex::new(Instant::now()),
        }
    }

    /// Blocks until the caller may issue its request.
    pub fn acquire(&self) {
        let wait = {
            let mut next = self.next_slot.lock().unwrap_or_else(|e| e.into_inner());
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.interval;
            slot - now
        };
        if !wait.is_zero() {
            thread::sleep(wait);
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("package `{0}` not found in registry")]
    NotFound(String),
    #[error("rate limited while fetching `{0}`; retries exhausted")]
    RateLimited(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("unexpected response for `{name}`: {reason}")]
    InvalidResponse { name: String, reason: String },
}

pub struct RegistryClient<T> {
    ecosystem: Ecosystem,
    config: RegistryConfig,
    transport: T,
    metadata_limiter: Arc<RateLimiter>,
    counts_limiter: Arc<RateLimiter>,
    retries: AtomicU64,
}

enum Fetched {
    Body(String),
    Missing,
}

impl<T: Transport> RegistryClient<T> {
    pub fn new(ecosystem: Ecosystem, config: RegistryConfig, transport: T) -> Self {
        let metadata_limiter = Arc::new(RateLimiter::per_second(config.rate_limit));
        let counts_limiter = Arc::new(RateLimiter::per_second(config.rate_limit));
        RegistryClient {
            ecosystem,
            config,
            transport,
            metadata_limiter,
            counts_limiter,
            retries: AtomicU64::new(0),
        }
    }

    /// Shares existing limiters, e.g. between clients hitting the same endpoints.
    pub fn with_limiters(mut self, metadata: Arc<RateLimiter>, counts: Arc<RateLimiter>) -> Self {
        self.metadata_limiter = metadata;
        self.counts_limiter = counts;
        self
    }

    pub fn limiters(&self) -> (Arc<RateLimiter>, Arc<RateLimiter>) {
        (self.metadata_limiter.clone(), self.counts_limiter.clone())
    }

    pub fn ecosystem(&self) -> Ecosystem {
        self.ecosystem
    }

    /// Total retries performed by this client so far.
    pub fn retries(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }

    fn get_with_retry(
        &self,
        url: &str,
        limiter: &RateLimiter,
        name: &str,
    ) -> Result<Fetched, RegistryError> {
        let timeout = Duration::from_secs_f64(self.config.timeout_secs.max(0.001));
        let mut attempt = 0u32;
        loop {
            limiter.acquire();
            let failure = match self.transport.get(url, timeout) {
                Ok(resp) if (200..300).contains(&resp.status) => return Ok(Fetched::Body(resp.body)),
                Ok(resp) if resp.status == 404 => return Ok(Fetched::Missing),
                Ok(resp) if resp.status == 429 => RegistryError::RateLimited(name.to_string()),
                Ok(resp) if resp.status >= 500 => {
                    RegistryError::Transport(format!("HTTP {} from {url}", resp.status))
                }
                Ok(resp) => {
                    return Err(RegistryError::Transport(format!(
                        "HTTP {} from {url}",
                        resp.status
                    )))
                }
                Err(e) => RegistryError::Transport(format!("{e} ({url})")),
            };
            if attempt >= self.config.max_retries {
                return Err(failure);
            }
            let delay = self.config.backoff(attempt);
            attempt += 1;
            self.retries.fetch_add(1, Ordering::Relaxed);
            log::warn!("{failure}; retry {attempt}/{} in {delay:?}", self.config.max_retries);
            thread::sleep(delay);
        }
    }

    /// Fetches the latest-version metadata and the download count of `name`.
    pub fn fetch_package_metadata(&self, name: &str) -> Result<PackageRecord, RegistryError> {
        let url = match self.ecosystem {
            Ecosystem::Npm => format!(
                "{}/{}",
                self.config.base_url.trim_end_matches('/'),
                encode_npm_name(name)
            ),
            Ecosystem::PyPI => format!(
                "{}/pypi/{}/json",
                self.config.base_url.trim_end_matches('/'),
                name
            ),
        };
        let body = match self.get_with_retry(&url, &self.metadata_limiter, name)? {
            Fetched::Body(body) => body,
            Fetched::Missing => return Err(RegistryError::NotFound(name.to_string())),
        };
        let doc: Value = serde_json::from_str(&body).map_err(|e| RegistryError::InvalidResponse {
            name: name.to_string(),
            reason: e.to_string(),
        })?;
        let mut record = match self.ecosystem {
            Ecosystem::Npm => parse_npm_document(name, &doc)?,
            Ecosystem::PyPI => parse_pypi_document(name, &doc)?,
        };
        record.downloads = self.fetch_downloads(name)?;
        Ok(record)
    }

    fn fetch_downloads(&self, name: &str) -> Result<u64, RegistryError> {
        let Some(counts) = self.config.counts_url.as_deref() else {
            return Ok(0);
        };
        let counts = counts.trim_end_matches('/');
        let url = match self.ecosystem {
            Ecosystem::Npm => format!("{counts}/{}", encode_npm_name(name)),
            Ecosystem::PyPI => format!("{counts}/{}/overall?mirrors=false", name.to_lowercase()),
        };
        let body = match self.get_with_retry(&url, &self.counts_limiter, name)? {
            Fetched::Body(body) => body,
            // no recorded downloads
            Fetched::Missing => return Ok(0),
        };
        let doc: Value = serde_json::from_str(&body).map_err(|e| RegistryError::InvalidResponse {
            name: name.to_string(),
            reason: e.to_string(),
        })?;
        Ok(parse_download_count(self.ecosystem, &doc))
    }
}

/// Scoped npm names need `/` escaped to address the package document.
pub fn encode_npm_name(name: &str) -> String {
    if name.starts_with('@') {
        name.replacen('/', "%2f", 1)
    } else {
        name.to_string()
    }
}

fn invalid(name: &str, reason: &str) -> RegistryError {
    RegistryError::InvalidResponse {
        name: name.to_string(),
        reason: reason.to_string(),
    }
}

/// Reads an npm registry package document (`GET /<name>`).
pub fn parse_npm_document(requested: &str, doc: &Value) -> Result<PackageRecord, RegistryError> {
    let name = doc
        .get("name")
        .and_then(Value::as_str)
        .unwrap_or(requested)
        .to_string();
    let latest = doc
        .pointer("/dist-tags/latest")
        .and_then(Value::as_str)
        .ok_or_else(|| invalid(requested, "no dist-tags.latest (unpublished?)"))?
        .to_string();
    let version = doc
        .get("versions")
        .and_then(|v| v.get(&latest))
        .ok_or_else(|| invalid(requested, "latest version missing from versions"))?;
    let mut dependencies: Vec<String> = version
        .get("dependencies")
        .and_then(Value::as_object)
        .map(|deps| deps.keys().cloned().collect())
        .unwrap_or_default();
    dependencies.retain(|d| d != &name);

    let times = doc.get("time").and_then(Value::as_object);
    let release_times = times.into_iter().flatten().filter_map(|(key, value)| {
        if key == "created" || key == "modified" {
            return None;
        }
        value.as_str().and_then(Timestamp::parse_iso8601)
    });
    let last_release = release_times
        .max()
        .or_else(|| {
            times
                .and_then(|t| t.get("modified"))
                .and_then(Value::as_str)
                .and_then(Timestamp::parse_iso8601)
        })
        .ok_or_else(|| invalid(requested, "no release times"))?;

    Ok(PackageRecord {
        name,
        ecosystem: Ecosystem::Npm,
        latest_version: latest,
        dependencies,
        last_release,
        downloads: 0,
        modules: Vec::new(),
        file_hashes: None,
    })
}

/// Reads a PyPI JSON API document (`GET /pypi/<name>/json`). Requirements
/// guarded by an `extra` marker are optional and not counted as dependencies.
pub fn parse_pypi_document(requested: &str, doc: &Value) -> Result<PackageRecord, RegistryError> {
    let info = doc
        .get("info")
        .ok_or_else(|| invalid(requested, "missing info object"))?;
    let name = info
        .get("name")
        .and_then(Value::as_str)
        .unwrap_or(requested)
        .to_string();
    let latest = info
        .get("version")
        .and_then(Value::as_str)
        .ok_or_else(|| invalid(requested, "missing info.version"))?
        .to_string();

    let mut seen = BTreeSet::new();
    let mut dependencies = Vec::new();
    let requires = info.get("requires_dist").and_then(Value::as_array);
    for spec in requires.into_iter().flatten().filter_map(Value::as_str) {
        let marker = spec.split_once(';').map(|(_, m)| m).unwrap_or("");
        if marker.contains("extra") {
            continue;
        }
        if let Some(dep) = requirement_name(spec) {
            if !dep.eq_ignore_ascii_case(&name) && seen.insert(dep.to_lowercase()) {
                dependencies.push(dep);
            }
        }
    }

    let upload_time = |file: &Value| {
        file.get("upload_time_iso_8601")
            .or_else(|| file.get("upload_time"))
            .and_then(Value::as_str)
            .and_then(Timestamp::parse_iso8601)
    };
    let from_releases = doc
        .get("releases")
        .and_then(Value::as_object)
        .into_iter()
        .flat_map(|r| r.values())
        .filter_map(Value::as_array)
        .flatten()
        .filter_map(upload_time)
        .max();
    let from_urls = doc
        .get("urls")
        .and_then(Value::as_array)
        .into_iter()
        .flatten()
        .filter_map(upload_time)
        .max();
    let last_release = from_releases
        .max(from_urls)
        .ok_or_else(|| invalid(requested, "no uploaded files"))?;

    Ok(PackageRecord {
        name,
        ecosystem: Ecosystem::PyPI,
        latest_version: latest,
        dependencies,
        last_release,
        downloads: 0,
        modules: Vec::new(),
        file_hashes: None,
    })
}

/// Download total from an npm point endpoint (`{"downloads": N}`) or a
/// pypistats `overall` response (sum of daily counts without mirrors).
pub fn parse_download_count(ecosystem: Ecosystem, doc: &Value) -> u64 {
    match ecosystem {
        Ecosystem::Npm => doc.get("downloads").and_then(Value::as_u64).unwrap_or(0),
        Ecosystem::PyPI => doc
            .get("data")
            .and_then(Value::as_array)
            .into_iter()
            .flatten()
            .filter(|row| {
                row.get("category")
                    .and_then(Value::as_str)
                    .is_none_or(|c| c == "without_mirrors")
            })
            .filter_map(|row| row.get("downloads").and_then(Value::as_u64))
            .sum(),
    }
}
