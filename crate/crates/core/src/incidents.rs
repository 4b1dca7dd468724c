//! Attack taxonomy and the bundled dataset of historical ecosystem incidents.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// How the attacker gets malicious code in front of victims.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackType {
    /// A new, appealing package (e.g. a typosquat) lures installs.
    Bait,
    /// The target package itself is compromised.
    Direct,
    /// A dependency of the target package is compromised.
    Influencer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    SocialEngineering,
    CredentialStealing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vector {
    PackageCode,
    InstallationScript,
    NotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Victims {
    FirstParty,
    SecondParty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Goal {
    DryRun,
    CryptoTheft,
    CredentialTheft,
    Unknown,
}

/// Closed set of values of a taxonomy dimension.
pub trait Dimension: Copy + Ord + Serialize + 'static {
    const NAME: &'static str;
    const ALL: &'static [Self];
}

impl Dimension for AttackType {
    const NAME: &'static str = "attack_type";
    const ALL: &'static [Self] = &[AttackType::Bait, AttackType::Direct, AttackType::Influencer];
}

impl Dimension for Strategy {
    const NAME: &'static str = "strategy";
    const ALL: &'static [Self] = &[Strategy::SocialEngineering, Strategy::CredentialStealing];
}

impl Dimension for Vector {
    const NAME: &'static str = "vector";
    const ALL: &'static [Self] = &[
        Vector::PackageCode,
        Vector::InstallationScript,
        Vector::NotApplicable,
    ];
}

impl Dimension for Victims {
    const NAME: &'static str = "victims";
    const ALL: &'static [Self] = &[Victims::FirstParty, Victims::SecondParty];
}

impl Dimension for Goal {
    const NAME: &'static str = "goal";
    const ALL: &'static [Self] = &[
        Goal::DryRun,
        Goal::CryptoTheft,
        Goal::CredentialTheft,
        Goal::Unknown,
    ];
}

/// A non-negative number of days, kept exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Days(pub Ratio<u64>);

impl Days {
    pub fn whole(days: u64) -> Self {
        Days(Ratio::from_integer(days))
    }

    pub fn new(numer: u64, denom: u64) -> Self {
        Days(Ratio::new(numer, denom))
    }

    pub fn to_f64(self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }
}

impl fmt::Display for Days {
    /// Terminating decimals print as decimals ("1.5"); others as "n/d".
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (numer, denom) = (*self.0.numer(), *self.0.denom());
        let mut d = denom;
        let mut places = 0u32;
        let (mut twos, mut fives) = (0u32, 0u32);
        while d % 2 == 0 {
            d /= 2;
            twos += 1;
        }
        while d % 5 == 0 {
            d /= 5;
            fives += 1;
        }
        if d != 1 {
            return write!(f, "{numer}/{denom}");
        }
        places += twos.max(fives);
        if places == 0 {
            return write!(f, "{numer}");
        }
        let scale = 10u128.pow(places);
        let scaled = numer as u128 * scale / denom as u128;
        let int = scaled / scale;
        let frac = scaled % scale;
        write!(f, "{int}.{frac:0width$}", width = places as usize)
    }
}

impl FromStr for Days {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || format!("invalid day count `{s}`");
        if let Some((n, d)) = s.split_once('/') {
            let n: u64 = n.trim().parse().map_err(|_| bad())?;
            let d: u64 = d.trim().parse().map_err(|_| bad())?;
            if d == 0 {
                return Err(bad());
            }
            return Ok(Days::new(n, d));
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if int.is_empty() || !int.bytes().all(|b| b.is_ascii_digit()) || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let denom = 10u64.checked_pow(frac.len() as u32).ok_or_else(bad)?;
        let numer = format!("{int}{frac}").parse::<u64>().map_err(|_| bad())?;
        Ok(Days::new(numer, denom))
    }
}

impl Serialize for Days {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Days {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(n) => Ok(Days::whole(n)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncidentRecord {
    pub id: String,
    pub description: String,
    pub attack_type: AttackType,
    pub strategy: Strategy,
    pub vector: Vector,
    pub victims: Victims,
    pub goal: Goal,
    /// "Same day" discoveries are 0.
    pub time_to_discovery_days: Days,
}

impl IncidentRecord {
    /// Bait attacks rely on luring installs and so involve social engineering.
    pub fn is_consistent(&self) -> bool {
        self.attack_type != AttackType::Bait || self.strategy == Strategy::SocialEngineering
    }
}

#[allow(clippy::too_many_arguments)]
fn incident(
    id: &str,
    description: &str,
    attack_type: AttackType,
    strategy: Strategy,
    vector: Vector,
    victims: Victims,
    goal: Goal,
    ttd: Days,
) -> IncidentRecord {
    IncidentRecord {
        id: id.to_string(),
        description: description.to_string(),
        attack_type,
        strategy,
        vector,
        victims,
        goal,
        time_to_discovery_days: ttd,
    }
}

/// The eight bundled incidents, in a fixed order.
pub fn load_incidents() -> Vec<IncidentRecord> {
    use AttackType::*;
    use Goal::*;
    use Strategy::*;
    use Vector::*;
    use Victims::*;

    let records = vec![
        incident(
            "event-stream",
            "npm: maintainer access to event-stream obtained by volunteering; an injected flatmap-stream dependency targeted the copay wallet build",
            Influencer, SocialEngineering, PackageCode, SecondParty, CryptoTheft,
            Days::whole(46),
        ),
        incident(
            "go-bindata",
            "Go: deleted GitHub account of the go-bindata author re-registered and the repository re-created",
            Direct, SocialEngineering, NotApplicable, FirstParty, Unknown,
            Days::whole(0),
        ),
        incident(
            "mailparser",
            "npm: dependency chain added to the unmaintained mailparser package, ending in a backdoored package",
            Influencer, CredentialStealing, PackageCode, SecondParty, CredentialTheft,
            Days::whole(20),
        ),
        incident(
            "eslint-scope",
            "npm: credential-stealing install script published in eslint-scope, a dependency of eslint",
            Direct, CredentialStealing, InstallationScript, FirstParty, CredentialTheft,
            Days::whole(0),
        ),
        incident(
            "conventional-changelog",
            "npm: cryptominer inserted into the actively maintained conventional-changelog package",
            Direct, CredentialStealing, PackageCode, FirstParty, CryptoTheft,
            Days::new(3, 2),
        ),
        incident(
            "npm-typosquatting",
            "npm: about 40 packages with names close to popular ones (e.g. crossenv for cross-env) exfiltrating environment variables",
            Bait, SocialEngineering, InstallationScript, FirstParty, CredentialTheft,
            Days::whole(12),
        ),
        incident(
            "pypi-backdoor",
            "PyPI: credential-collecting code inserted into ssh-decorate",
            Direct, CredentialStealing, PackageCode, SecondParty, CredentialTheft,
            Days::whole(3),
        ),
        incident(
            "pypi-typosquatting",
            "PyPI: ten packages with names close to popular ones, payload reporting installs only",
            Bait, SocialEngineering, InstallationScript, FirstParty, DryRun,
            Days::whole(99),
        ),
    ];
    assert!(records.iter().all(IncidentRecord::is_consistent));
    records
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IncidentError {
    #[error("no incidents to summarize")]
    EmptyInput,
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: duplicate incident id `{id}`")]
    DuplicateId { id: String, line: usize },
}

/// Per-value counts for one taxonomy dimension, in declaration order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionCounts<T: Dimension> {
    pub counts: Vec<(T, usize)>,
}

impl<T: Dimension> DimensionCounts<T> {
    fn tally(records: &[IncidentRecord], pick: impl Fn(&IncidentRecord) -> T) -> Self {
        let counts = T::ALL
            .iter()
            .map(|&v| (v, records.iter().filter(|r| pick(r) == v).count()))
            .collect();
        DimensionCounts { counts }
    }

    pub fn get(&self, value: T) -> usize {
        self.counts
            .iter()
            .find(|(v, _)| *v == value)
            .map_or(0, |(_, c)| *c)
    }

    pub fn total(&self) -> usize {
        self.counts.iter().map(|(_, c)| c).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub total: usize,
    pub attack_type: DimensionCounts<AttackType>,
    pub strategy: DimensionCounts<Strategy>,
    pub vector: DimensionCounts<Vector>,
    pub victims: DimensionCounts<Victims>,
    pub goal: DimensionCounts<Goal>,
    pub median_ttd: Days,
    pub mean_ttd: Days,
}

pub fn incident_summary(records: &[IncidentRecord]) -> Result<SummaryStats, IncidentError> {
    if records.is_empty() {
        return Err(IncidentError::EmptyInput);
    }
    let mut ttd: Vec<Ratio<u64>> = records.iter().map(|r| r.time_to_discovery_days.0).collect();
    ttd.sort();
    let n = ttd.len();
    let median = if n % 2 == 1 {
        ttd[n / 2]
    } else {
        (ttd[n / 2 - 1] + ttd[n / 2]) / 2
    };
    let sum: Ratio<u64> = ttd.iter().copied().sum();
    let mean = sum / n as u64;

    Ok(SummaryStats {
        total: n,
        attack_type: DimensionCounts::tally(records, |r| r.attack_type),
        strategy: DimensionCounts::tally(records, |r| r.strategy),
        vector: DimensionCounts::tally(records, |r| r.vector),
        victims: DimensionCounts::tally(records, |r| r.victims),
        goal: DimensionCounts::tally(records, |r| r.goal),
        median_ttd: Days(median),
        mean_ttd: Days(mean),
    })
}

pub fn write_incidents<W: Write>(records: &[IncidentRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub struct ParsedIncidents {
    pub records: Vec<IncidentRecord>,
    /// Records that break the taxonomy's consistency rule (kept, not rejected).
    pub warnings: Vec<String>,
}

/// Reads user-supplied incidents, one JSON object per line. Values outside
/// the closed taxonomy are rejected.
pub fn parse_incidents<R: BufRead>(input: R) -> Result<ParsedIncidents, IncidentError> {
    let mut records: Vec<IncidentRecord> = Vec::new();
    let mut warnings = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| IncidentError::Malformed {
            line: line_no,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: IncidentRecord =
            serde_json::from_str(&line).map_err(|e| IncidentError::Malformed {
                line: line_no,
                reason: e.to_string(),
            })?;
        if records.iter().any(|r| r.id == record.id) {
            return Err(IncidentError::DuplicateId {
                id: record.id,
                line: line_no,
            });
        }
        if !record.is_consistent() {
            warnings.push(format!(
                "line {line_no}: incident `{}` is a bait attack without social engineering",
                record.id
            ));
        }
        records.push(record);
    }
    Ok(ParsedIncidents { records, warnings })
}
