//! The `ecoscope` command line.
//!
//! [`run`] takes its streams through [`Io`] so the whole program can be
//! driven in-process by tests.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ecoscope_core::abandonment::{abandonment_report_within, DEFAULT_WINDOW_DAYS};
use ecoscope_core::advisor::{self, AdvisorIndex, AdvisorPolicy, Alert};
use ecoscope_core::depgraph::{build_graph, closure_size_distribution, graph_summary, prune_disconnected};
use ecoscope_core::incidents::{incident_summary, load_incidents, parse_incidents};
use ecoscope_core::popularity::{
    ccdf, count_at_least, fit_overlay, fit_power_law, top_share, DownloadSample, DEFAULT_XMIN,
};
use ecoscope_core::registry::{HttpTransport, RegistryClient, RegistryConfig, RegistryError, Transport};
use ecoscope_core::report::{write_record, Record};
use ecoscope_core::snapshot::{parse_snapshot, Ecosystem, Snapshot, Timestamp};
use ecoscope_core::squatting::{
    candidate_pairs, import_squat_candidates, rank_typo_candidates, short_name_saturation, SquatCandidate,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DECLINED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Download thresholds reported by `popularity`.
const THRESHOLDS: [u64; 4] = [1_000, 10_000, 100_000, 1_000_000];

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Human,
    Structured,
}

#[derive(Debug, Parser)]
#[command(name = "ecoscope", version, about = "Package ecosystem risk analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Snapshot file to analyse.
    #[arg(long, env = "ECOSCOPE_SNAPSHOT")]
    snapshot: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "human")]
    format: Format,
}

#[derive(Debug, Args)]
struct Prompt {
    /// Advisor policy overrides (TOML).
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Proceed without asking when alerts are raised.
    #[arg(long)]
    yes: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a snapshot from registry metadata.
    Ingest {
        #[arg(value_parser = parse_ecosystem)]
        ecosystem: Ecosystem,
        /// File with one package name per line.
        #[arg(long)]
        packages: PathBuf,
        /// Registry endpoint overrides (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Where to write the snapshot; standard output if absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Dependency graph statistics.
    GraphStats {
        #[command(flatten)]
        common: Common,
        /// Keep packages with neither dependencies nor dependents.
        #[arg(long)]
        keep_disconnected: bool,
    },
    /// Download concentration, CCDF and power-law fit.
    Popularity {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = DEFAULT_XMIN)]
        xmin: f64,
        /// k for the top-k download share.
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Packages without a release in the last year.
    Abandonment {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        top: usize,
        #[arg(long, default_value_t = DEFAULT_WINDOW_DAYS)]
        window_days: u32,
    },
    /// Name pairs within a small edit distance.
    SquatScan {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        min_length: usize,
        #[arg(long, default_value_t = 1)]
        max_distance: usize,
        /// Print only the first N candidates.
        #[arg(long)]
        top: Option<usize>,
        /// Also report how saturated names of this length are.
        #[arg(long)]
        saturation: Option<usize>,
    },
    /// Modules whose import name differs from their package name.
    ImportSquatScan {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        top: Option<usize>,
    },
    /// Known supply-chain incidents and their taxonomy.
    Incidents {
        #[arg(long, value_enum, default_value = "human")]
        format: Format,
        /// Incident records to use instead of the bundled ones.
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Check a package before installing it.
    Check {
        name: String,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        prompt: Prompt,
    },
    /// Check a package before pulling an update.
    CheckUpdate {
        name: String,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        prompt: Prompt,
    },
}

fn parse_ecosystem(s: &str) -> Result<Ecosystem, String> {
    s.parse::<Ecosystem>().map_err(|e| e.to_string())
}

/// Streams and collaborators for one invocation.
pub struct Io<'a> {
    pub stdin: &'a mut dyn BufRead,
    pub stdout: &'a mut dyn Write,
    pub stderr: &'a mut dyn Write,
    /// Whether a person can answer prompts on `stdin`.
    pub interactive: bool,
    /// Registry transport for `ingest`; real HTTP if absent.
    pub transport: Option<Arc<dyn Transport>>,
}

/// A failure that ends the command with a usage/config exit code.
struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

type Outcome = Result<i32, Failure>;

pub fn run<I, T>(args: I, io: &mut Io<'_>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { io.stderr } else { io.stdout };
            let _ = sink.write_all(text.as_bytes());
            return code;
        }
    };
    match dispatch(cli.command, io) {
        Ok(code) => code,
        Err(Failure(msg)) => {
            let _ = writeln!(io.stderr, "error: {msg}");
            EXIT_USAGE
        }
    }
}

fn dispatch(command: Command, io: &mut Io<'_>) -> Outcome {
    match command {
        Command::Ingest {
            ecosystem,
            packages,
            config,
            output,
        } => ingest(ecosystem, &packages, config.as_deref(), output.as_deref(), io),
        Command::GraphStats {
            common,
            keep_disconnected,
        } => graph_stats(&common, keep_disconnected, io),
        Command::Popularity { common, xmin, top } => popularity(&common, xmin, top, io),
        Command::Abandonment {
            common,
            top,
            window_days,
        } => abandonment(&common, top, window_days, io),
        Command::SquatScan {
            common,
            min_length,
            max_distance,
            top,
            saturation,
        } => squat_scan(&common, min_length, max_distance, top, saturation, io),
        Command::ImportSquatScan { common, top } => import_squat_scan(&common, top, io),
        Command::Incidents { format, file } => incidents(format, file.as_deref(), io),
        Command::Check {
            name,
            common,
            prompt,
        } => check(&name, &common, &prompt, false, io),
        Command::CheckUpdate {
            name,
            common,
            prompt,
        } => check(&name, &common, &prompt, true, io),
    }
}

fn load_snapshot(common: &Common, io: &mut Io<'_>) -> Result<Snapshot, Failure> {
    let path = common
        .snapshot
        .as_ref()
        .ok_or_else(|| Failure("no snapshot given; use --snapshot or ECOSCOPE_SNAPSHOT".into()))?;
    let file = File::open(path).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
    let parsed = parse_snapshot(BufReader::new(file)).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
    for w in &parsed.warnings {
        writeln!(io.stderr, "warning: {w}")?;
    }
    Ok(parsed.snapshot)
}

fn load_policy(path: Option<&Path>) -> Result<AdvisorPolicy, Failure> {
    let policy = match path {
        None => AdvisorPolicy::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| Failure(format!("{}: {e}", p.display())))?
        }
    };
    policy.validate()?;
    Ok(policy)
}

/// Registry settings for `ecosystem`, with any keys from `path` laid over the defaults.
fn load_registry_config(ecosystem: Ecosystem, path: Option<&Path>) -> Result<RegistryConfig, Failure> {
    let defaults = RegistryConfig::for_ecosystem(ecosystem);
    let Some(path) = path else {
        return Ok(defaults);
    };
    let text = std::fs::read_to_string(path).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
    let overrides: toml::Table = toml::from_str(&text).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
    let mut merged = toml::Table::try_from(&defaults)?;
    merged.extend(overrides);
    merged
        .try_into()
        .map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn emit(io: &mut Io<'_>, record: &Record) -> io::Result<()> {
    write_record(&mut *io.stdout, record)
}

fn ingest(
    ecosystem: Ecosystem,
    packages: &Path,
    config: Option<&Path>,
    output: Option<&Path>,
    io: &mut Io<'_>,
) -> Outcome {
    let config = load_registry_config(ecosystem, config)?;
    let list = std::fs::read_to_string(packages).map_err(|e| Failure(format!("{}: {e}", packages.display())))?;
    let names: Vec<&str> = list
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect();
    let transport: Arc<dyn Transport> = match &io.transport {
        Some(t) => Arc::clone(t),
        None => Arc::new(HttpTransport::new()?),
    };
    let client = RegistryClient::new(ecosystem, config, transport);

    let mut records = Vec::new();
    let mut failures = 0;
    for name in &names {
        match client.fetch_package_metadata(name) {
            Ok(r) => records.push(r),
            Err(e @ RegistryError::NotFound(_)) | Err(e @ RegistryError::InvalidResponse { .. }) => {
                failures += 1;
                writeln!(io.stderr, "skipped `{name}`: {e}")?;
            }
            Err(e) => return Err(Failure(format!("`{name}`: {e}"))),
        }
    }
    let parsed = Snapshot::from_records_with_warnings(ecosystem, Timestamp::now(), records)?;
    for w in &parsed.warnings {
        writeln!(io.stderr, "warning: {w}")?;
    }
    match output {
        Some(path) => {
            let file = File::create(path).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
            let mut out = io::BufWriter::new(file);
            parsed.snapshot.write_to(&mut out)?;
            out.flush()?;
        }
        None => parsed.snapshot.write_to(&mut *io.stdout)?,
    }
    writeln!(
        io.stderr,
        "ingested {} {} packages ({} skipped, {} warnings, {} retries)",
        parsed.snapshot.len(),
        ecosystem,
        failures,
        parsed.warnings.len(),
        client.retries()
    )?;
    Ok(EXIT_OK)
}

fn graph_stats(common: &Common, keep_disconnected: bool, io: &mut Io<'_>) -> Outcome {
    let snapshot = load_snapshot(common, io)?;
    let mut graph = build_graph(&snapshot);
    for u in graph.unresolved() {
        writeln!(io.stderr, "warning: `{}` depends on unknown package `{}`", u.depender, u.missing)?;
    }
    if !keep_disconnected {
        graph = prune_disconnected(&graph).0;
    }
    let stats = graph_summary(&graph)?;
    let cdf = closure_size_distribution(&graph)?;
    match common.format {
        Format::Structured => {
            emit(io, &Record::GraphStats(stats))?;
            for p in cdf {
                emit(io, &Record::ClosureCdf(p))?;
            }
        }
        Format::Human => {
            let out = &mut *io.stdout;
            writeln!(out, "packages:            {}", stats.node_count)?;
            writeln!(out, "disconnected removed: {}", stats.disconnected_removed)?;
            writeln!(out, "avg dependencies:    {:.2}", stats.avg_outdegree)?;
            writeln!(out, "avg tree size:       {:.2}", stats.avg_tree_size)?;
            writeln!(out, "avg tree depth:      {:.2}", stats.avg_tree_depth)?;
            writeln!(out, "tree size  packages  cumulative")?;
            for p in cdf {
                writeln!(out, "{:>9}  {:>8}  {:>9.1}%", p.size, p.cumulative, p.fraction * 100.0)?;
            }
        }
    }
    Ok(EXIT_OK)
}

fn popularity(common: &Common, xmin: f64, top: usize, io: &mut Io<'_>) -> Outcome {
    let snapshot = load_snapshot(common, io)?;
    let share = top_share(&snapshot, top)?;
    let counts: Vec<(u64, usize)> = THRESHOLDS
        .iter()
        .map(|&t| (t, count_at_least(&snapshot, t)))
        .collect();
    let sample = DownloadSample::from_snapshot(&snapshot);
    let points = if sample.is_empty() { vec![] } else { ccdf(&sample)? };
    let fit = fit_power_law(&sample, xmin);
    let overlay = match &fit {
        Ok(f) => fit_overlay(&sample, f)?,
        Err(_) => vec![],
    };

    match common.format {
        Format::Structured => {
            emit(io, &Record::TopShare { k: top, share })?;
            for (threshold, count) in counts {
                emit(io, &Record::ThresholdCount { threshold, count })?;
            }
            for p in points {
                emit(io, &Record::Ccdf(p))?;
            }
            match fit {
                Ok(f) => emit(io, &Record::PowerLawFit(f))?,
                Err(e) => emit(io, &Record::FitUnavailable { reason: e.to_string() })?,
            }
            for (value, fraction) in overlay {
                emit(io, &Record::FitOverlay { value, fraction })?;
            }
        }
        Format::Human => {
            let out = &mut *io.stdout;
            writeln!(out, "top {top} share of downloads: {:.2}%", share * 100.0)?;
            for (threshold, count) in counts {
                writeln!(out, "packages with >= {threshold} downloads: {count}")?;
            }
            match fit {
                Ok(f) => writeln!(out, "power-law fit: alpha = {:.3} (xmin {}, {} tail samples)", f.alpha, f.xmin, f.n_tail)?,
                Err(e) => writeln!(out, "power-law fit unavailable: {e}")?,
            }
            writeln!(out, "downloads  ccdf")?;
            for p in points {
                writeln!(out, "{:>9}  {:.6}", p.value, p.fraction)?;
            }
        }
    }
    Ok(EXIT_OK)
}

fn abandonment(common: &Common, top: usize, window_days: u32, io: &mut Io<'_>) -> Outcome {
    let snapshot = load_snapshot(common, io)?;
    let report = abandonment_report_within(&snapshot, snapshot.captured_at(), top, window_days)?;
    match common.format {
        Format::Structured => emit(io, &Record::Abandonment(report))?,
        Format::Human => {
            let out = &mut *io.stdout;
            writeln!(
                out,
                "{} of {} packages ({:.1}%) have had no release in {window_days} days",
                report.abandoned,
                report.total,
                report.fraction * 100.0
            )?;
            writeln!(out, "their downloads add up to {}", report.cumulative_abandoned_downloads)?;
            for p in &report.top_abandoned {
                writeln!(out, "{:>12}  {}", p.downloads, p.name)?;
            }
        }
    }
    Ok(EXIT_OK)
}

fn print_candidates(io: &mut Io<'_>, format: Format, candidates: &[SquatCandidate]) -> io::Result<()> {
    for c in candidates {
        match format {
            Format::Structured => emit(io, &Record::SquatCandidate(c.clone()))?,
            Format::Human => {
                write!(
                    io.stdout,
                    "{} -> {}  ratio {:.1}  ({})",
                    c.subject, c.target, c.popularity_ratio, c.evidence
                )?;
                if let Some(s) = c.content_similarity {
                    write!(io.stdout, "  content similarity {s:.2}")?;
                }
                writeln!(io.stdout)?;
            }
        }
    }
    Ok(())
}

fn squat_scan(
    common: &Common,
    min_length: usize,
    max_distance: usize,
    top: Option<usize>,
    saturation: Option<usize>,
    io: &mut Io<'_>,
) -> Outcome {
    let snapshot = load_snapshot(common, io)?;
    let names: Vec<&str> = snapshot.names().collect();
    let pairs = candidate_pairs(&names, max_distance, min_length)?;
    let mut ranked = rank_typo_candidates(&pairs, &snapshot);
    ranked.truncate(top.unwrap_or(usize::MAX));
    print_candidates(io, common.format, &ranked)?;
    if let Some(length) = saturation {
        let fraction = short_name_saturation(&names, length)?;
        match common.format {
            Format::Structured => emit(io, &Record::ShortNameSaturation { length, fraction })?,
            Format::Human => writeln!(
                io.stdout,
                "{:.1}% of {length}-character names are one edit from another name",
                fraction * 100.0
            )?,
        }
    }
    Ok(EXIT_OK)
}

fn import_squat_scan(common: &Common, top: Option<usize>, io: &mut Io<'_>) -> Outcome {
    let snapshot = load_snapshot(common, io)?;
    let mut candidates = import_squat_candidates(&snapshot)?;
    candidates.truncate(top.unwrap_or(usize::MAX));
    print_candidates(io, common.format, &candidates)?;
    Ok(EXIT_OK)
}

fn incidents(format: Format, file: Option<&Path>, io: &mut Io<'_>) -> Outcome {
    let records = match file {
        None => load_incidents(),
        Some(path) => {
            let file = File::open(path).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
            let parsed = parse_incidents(BufReader::new(file))?;
            for w in &parsed.warnings {
                writeln!(io.stderr, "warning: {w}")?;
            }
            parsed.records
        }
    };
    let summary = incident_summary(&records)?;
    match format {
        Format::Structured => {
            for r in &records {
                emit(io, &Record::Incident(r.clone()))?;
            }
            emit(io, &Record::IncidentSummary(summary))?;
        }
        Format::Human => {
            let out = &mut *io.stdout;
            for r in &records {
                writeln!(
                    out,
                    "{:<24} {:<10} {:>6} days  {}",
                    r.id,
                    format!("{:?}", r.attack_type).to_lowercase(),
                    r.time_to_discovery_days.to_string(),
                    r.description
                )?;
            }
            writeln!(out, "{} incidents", summary.total)?;
            write!(out, "attack types:")?;
            for (t, n) in &summary.attack_type.counts {
                write!(out, " {}={n}", format!("{t:?}").to_lowercase())?;
            }
            writeln!(out)?;
            writeln!(out, "median time to discovery: {} days", summary.median_ttd)?;
            writeln!(out, "mean time to discovery:   {} days", summary.mean_ttd)?;
        }
    }
    Ok(EXIT_OK)
}

fn check(name: &str, common: &Common, prompt: &Prompt, update: bool, io: &mut Io<'_>) -> Outcome {
    let snapshot = load_snapshot(common, io)?;
    let policy = load_policy(prompt.policy.as_deref())?;
    let alerts: Vec<Alert> = if update {
        let record = snapshot
            .lookup(name)
            .ok_or_else(|| Failure(format!("`{name}` is not in the snapshot")))?;
        advisor::check_update(record, snapshot.captured_at(), &policy)?
    } else {
        let index = AdvisorIndex::new(&snapshot);
        advisor::check(&index, name, &policy)
    };

    for a in &alerts {
        match common.format {
            Format::Structured => emit(io, &Record::Alert(a.clone()))?,
            Format::Human => writeln!(io.stdout, "{}: {a}", severity_label(a))?,
        }
    }
    let proceed = alerts.is_empty() || confirm(name, update, prompt.yes, io)?;
    match common.format {
        Format::Structured => emit(
            io,
            &Record::Decision {
                subject: name.to_string(),
                proceed,
            },
        )?,
        Format::Human if alerts.is_empty() => writeln!(io.stdout, "no alerts for `{name}`")?,
        Format::Human => {}
    }
    Ok(if proceed { EXIT_OK } else { EXIT_DECLINED })
}

fn severity_label(alert: &Alert) -> &'static str {
    match alert.severity {
        advisor::Severity::Warn => "warning",
        advisor::Severity::BlockByDefault => "blocked",
    }
}

/// Asks on stderr, reads the answer from stdin. Anything but yes declines.
fn confirm(name: &str, update: bool, assume_yes: bool, io: &mut Io<'_>) -> io::Result<bool> {
    if assume_yes {
        return Ok(true);
    }
    if !io.interactive {
        writeln!(io.stderr, "not proceeding: confirmation needed; pass --yes to proceed")?;
        return Ok(false);
    }
    let action = if update { "Update" } else { "Install" };
    write!(io.stderr, "{action} `{name}` anyway? [y/N] ")?;
    io.stderr.flush()?;
    let mut answer = String::new();
    io.stdin.read_line(&mut answer)?;
    Ok(matches!(answer.trim().to_lowercase().as_str(), "y" | "yes"))
}
