//! Typosquatting and import-squatting candidate scans.
//!
//! Candidates are leads for manual triage. Nothing here decides that a
//! package is malicious.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::hash::{Hash, Hasher};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::snapshot::{Ecosystem, Snapshot};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SquatError {
    #[error("pair scan supports max distance 1 or 2, got {0}")]
    UnsupportedDistance(usize),
    #[error("no names of length {0}")]
    NoNamesOfLength(usize),
    #[error("content similarity needs non-empty hash sets on both sides")]
    EmptyArchive,
    #[error("import-squatting scan needs a PyPI snapshot, got {0}")]
    WrongEcosystem(Ecosystem),
}

fn fold(s: &str) -> Vec<char> {
    s.chars().flat_map(char::to_lowercase).collect()
}

/// Levenshtein distance over lowercase-folded names.
pub fn edit_distance(a: &str, b: &str) -> usize {
    edit_distance_with(a, b, false)
}

/// Like [`edit_distance`]; with `transpositions` an adjacent swap counts as
/// one edit (optimal string alignment).
pub fn edit_distance_with(a: &str, b: &str, transpositions: bool) -> usize {
    let (a, b) = (fold(a), fold(b));
    if transpositions {
        osa(&a, &b)
    } else {
        bounded_levenshtein(&a, &b, usize::MAX).expect("unbounded")
    }
}

/// Levenshtein distance if it is at most `max`, otherwise `None`.
fn bounded_levenshtein(a: &[char], b: &[char], max: usize) -> Option<usize> {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    if a.len() - b.len() > max {
        return None;
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        let mut row_min = cur[0];
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
            row_min = row_min.min(cur[j + 1]);
        }
        if row_min > max {
            return None;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let d = prev[b.len()];
    (d <= max).then_some(d)
}

fn osa(a: &[char], b: &[char]) -> usize {
    let (n, m) = (a.len(), b.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            let mut v = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
            if i > 1 && j > 1 && a[i - 1] == b[j - 2] && a[i - 2] == b[j - 1] {
                v = v.min(d[i - 2][j - 2] + 1);
            }
            d[i][j] = v;
        }
    }
    d[n][m]
}

/// Distance between `a` and `b` if it lies in `1..=max`.
pub fn within_distance(a: &str, b: &str, max: usize) -> Option<usize> {
    bounded_levenshtein(&fold(a), &fold(b), max).filter(|&d| d >= 1)
}

/// Two distinct names at a small edit distance; `a < b`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NamePair {
    pub a: String,
    pub b: String,
    pub distance: usize,
}

fn key_hash(chars: &[char]) -> u64 {
    let mut h = DefaultHasher::new();
    chars.hash(&mut h);
    h.finish()
}

/// Hashes of every string reachable from `name` by deleting up to `depth` characters.
fn deletion_keys(name: &[char], depth: usize) -> Vec<u64> {
    let mut seen: HashSet<Vec<char>> = HashSet::new();
    let mut frontier = vec![name.to_vec()];
    seen.insert(name.to_vec());
    for _ in 0..depth {
        let mut next = Vec::new();
        for s in &frontier {
            for i in 0..s.len() {
                let mut t = s.clone();
                t.remove(i);
                if seen.insert(t.clone()) {
                    next.push(t);
                }
            }
        }
        frontier = next;
    }
    let mut keys: Vec<u64> = seen.iter().map(|k| key_hash(k)).collect();
    keys.sort_unstable();
    keys.dedup();
    keys
}

/// All unordered pairs of distinct names whose folded edit distance is in
/// `1..=max_distance`, restricted to names with at least `min_length`
/// characters.
///
/// Each name is keyed by itself and every variant with up to `max_distance`
/// characters deleted. Two names within that distance always share a key, so
/// only names sharing a bucket are compared.
pub fn candidate_pairs<S: AsRef<str>>(
    names: &[S],
    max_distance: usize,
    min_length: usize,
) -> Result<Vec<NamePair>, SquatError> {
    if !(1..=2).contains(&max_distance) {
        return Err(SquatError::UnsupportedDistance(max_distance));
    }
    let mut unique: Vec<&str> = names
        .iter()
        .map(AsRef::as_ref)
        .filter(|n| n.chars().count() >= min_length)
        .collect();
    unique.sort_unstable();
    unique.dedup();
    let folded: Vec<Vec<char>> = unique.iter().map(|n| fold(n)).collect();

    let mut keyed: Vec<(u64, u32)> = folded
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, f)| {
            deletion_keys(f, max_distance)
                .into_iter()
                .map(move |k| (k, i as u32))
        })
        .collect();
    keyed.par_sort_unstable();

    let mut candidates: Vec<(u32, u32)> = Vec::new();
    let mut start = 0;
    while start < keyed.len() {
        let mut end = start + 1;
        while end < keyed.len() && keyed[end].0 == keyed[start].0 {
            end += 1;
        }
        let bucket = &keyed[start..end];
        for (x, &(_, i)) in bucket.iter().enumerate() {
            for &(_, j) in &bucket[x + 1..] {
                candidates.push((i.min(j), i.max(j)));
            }
        }
        start = end;
    }
    candidates.par_sort_unstable();
    candidates.dedup();

    let mut pairs: Vec<NamePair> = candidates
        .par_iter()
        .filter_map(|&(i, j)| {
            let (i, j) = (i as usize, j as usize);
            bounded_levenshtein(&folded[i], &folded[j], max_distance)
                .filter(|&d| d >= 1)
                .map(|distance| NamePair {
                    a: unique[i].to_string(),
                    b: unique[j].to_string(),
                    distance,
                })
        })
        .collect();
    pairs.sort_unstable();
    Ok(pairs)
}

/// Fraction of the names of exactly `length` characters that have at least
/// one other name at distance 1.
pub fn short_name_saturation<S: AsRef<str>>(names: &[S], length: usize) -> Result<f64, SquatError> {
    let mut of_length: Vec<&str> = names
        .iter()
        .map(AsRef::as_ref)
        .filter(|n| n.chars().count() == length)
        .collect();
    of_length.sort_unstable();
    of_length.dedup();
    if of_length.is_empty() {
        return Err(SquatError::NoNamesOfLength(length));
    }
    let pairs = candidate_pairs(names, 1, 0)?;
    let paired: HashSet<&str> = pairs
        .iter()
        .flat_map(|p| [p.a.as_str(), p.b.as_str()])
        .collect();
    let hit = of_length.iter().filter(|n| paired.contains(*n)).count();
    Ok(hit as f64 / of_length.len() as f64)
}

/// Jaccard index of two sets of file digests.
pub fn content_similarity(a: &BTreeSet<String>, b: &BTreeSet<String>) -> Result<f64, SquatError> {
    if a.is_empty() || b.is_empty() {
        return Err(SquatError::EmptyArchive);
    }
    let common = a.intersection(b).count();
    let union = a.len() + b.len() - common;
    Ok(common as f64 / union as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SquatKind {
    TypoPair,
    ImportSquat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportStatus {
    /// A different package is registered under the module's name.
    Collision,
    /// Nobody has registered the module's name yet.
    OpenSlot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquatCandidate {
    pub kind: SquatKind,
    /// The confusable name: the less downloaded package of a typo pair, or
    /// the module name a user might try to install.
    pub subject: String,
    /// The package the user most likely wanted.
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<usize>,
    pub subject_downloads: u64,
    pub target_downloads: u64,
    /// `target_downloads / subject_downloads`, each raised to at least 1.
    pub popularity_ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_similarity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub import_status: Option<ImportStatus>,
    pub evidence: String,
}

pub fn popularity_ratio(target_downloads: u64, subject_downloads: u64) -> f64 {
    target_downloads.max(1) as f64 / subject_downloads.max(1) as f64
}

/// PyPI-style name normalization: lowercase, `_` and `-` equivalent.
pub fn normalize_import_name(name: &str) -> String {
    name.to_lowercase().replace('_', "-")
}

/// Every provided module whose name differs from its package's name, noting
/// whether the module name is itself a registered package.
pub fn import_squat_candidates(snapshot: &Snapshot) -> Result<Vec<SquatCandidate>, SquatError> {
    if snapshot.ecosystem() != Ecosystem::PyPI {
        return Err(SquatError::WrongEcosystem(snapshot.ecosystem()));
    }
    let mut by_normalized: BTreeMap<String, &str> = BTreeMap::new();
    for name in snapshot.names() {
        by_normalized.entry(normalize_import_name(name)).or_insert(name);
    }

    let mut out = Vec::new();
    for record in snapshot.records() {
        let own = normalize_import_name(&record.name);
        let mut seen = HashSet::new();
        for module in &record.modules {
            let norm = normalize_import_name(module);
            if norm == own || !seen.insert(norm.clone()) {
                continue;
            }
            let holder = by_normalized
                .get(&norm)
                .and_then(|n| snapshot.get(n));
            let (subject, subject_downloads, status, evidence) = match holder {
                Some(h) => (
                    h.name.clone(),
                    h.downloads,
                    ImportStatus::Collision,
                    format!(
                        "module `{module}` of `{}` is also registered as package `{}`; module list from static listing only",
                        record.name, h.name
                    ),
                ),
                None => (
                    module.clone(),
                    0,
                    ImportStatus::OpenSlot,
                    format!(
                        "module `{module}` of `{}` has no package of that name; module list from static listing only",
                        record.name
                    ),
                ),
            };
            out.push(SquatCandidate {
                kind: SquatKind::ImportSquat,
                subject,
                target: record.name.clone(),
                distance: None,
                subject_downloads,
                target_downloads: record.downloads,
                popularity_ratio: popularity_ratio(record.downloads, subject_downloads),
                content_similarity: None,
                import_status: Some(status),
                evidence,
            });
        }
    }
    Ok(out)
}

/// Orients each pair so the subject is the less downloaded name (ties: the
/// name that sorts first) and orders by popularity ratio, highest first.
pub fn rank_typo_candidates(pairs: &[NamePair], snapshot: &Snapshot) -> Vec<SquatCandidate> {
    let downloads = |n: &str| snapshot.get(n).map_or(0, |r| r.downloads);
    let mut out: Vec<SquatCandidate> = pairs
        .iter()
        .map(|p| {
            let (da, db) = (downloads(&p.a), downloads(&p.b));
            let a_is_subject = da < db || (da == db && p.a <= p.b);
            let (subject, target) = if a_is_subject { (&p.a, &p.b) } else { (&p.b, &p.a) };
            let (sd, td) = if a_is_subject { (da, db) } else { (db, da) };
            let similarity = match (
                snapshot.get(subject).and_then(|r| r.file_hashes.as_ref()),
                snapshot.get(target).and_then(|r| r.file_hashes.as_ref()),
            ) {
                (Some(x), Some(y)) => content_similarity(x, y).ok(),
                _ => None,
            };
            SquatCandidate {
                kind: SquatKind::TypoPair,
                subject: subject.clone(),
                target: target.clone(),
                distance: Some(p.distance),
                subject_downloads: sd,
                target_downloads: td,
                popularity_ratio: popularity_ratio(td, sd),
                content_similarity: similarity,
                import_status: None,
                evidence: format!(
                    "edit distance {}; downloads {} vs {}",
                    p.distance, sd, td
                ),
            }
        })
        .collect();
    out.sort_by(|x, y| {
        y.popularity_ratio
            .total_cmp(&x.popularity_ratio)
            .then_with(|| x.subject.cmp(&y.subject))
            .then_with(|| x.target.cmp(&y.target))
    });
    out
}
