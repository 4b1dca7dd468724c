//! Brute-force oracles shared by the golden and acceptance tests. None of
//! them call into the analysis code they check.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Cursor;
use std::path::PathBuf;

use ecoscope_cli::{run, Io};
use ecoscope_core::abandonment::{AbandonedPackage, AbandonmentReport};
use ecoscope_core::depgraph::{CdfPoint, GraphStats};
use ecoscope_core::popularity::{CcdfPoint, PowerLawFit};
use ecoscope_core::report::{write_record, Record};
use ecoscope_core::squatting::{ImportStatus, SquatCandidate, SquatKind};
use serde_json::Value;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the CLI in-process with `stdin` as the user's input.
pub fn run_cli(args: &[&str], stdin: &str, interactive: bool) -> Output {
    let mut input = Cursor::new(stdin.as_bytes().to_vec());
    let mut stdout = Vec::new();
    let mut stderr = Vec::new();
    let code = {
        let mut io = Io {
            stdin: &mut input,
            stdout: &mut stdout,
            stderr: &mut stderr,
            interactive,
            transport: None,
        };
        run(std::iter::once("ecoscope").chain(args.iter().copied()), &mut io)
    };
    Output {
        code,
        stdout: String::from_utf8(stdout).unwrap(),
        stderr: String::from_utf8(stderr).unwrap(),
    }
}

pub fn render(records: &[Record]) -> String {
    let mut buf = Vec::new();
    for r in records {
        write_record(&mut buf, r).unwrap();
    }
    String::from_utf8(buf).unwrap()
}

// ---------------------------------------------------------------- graphs

/// Nodes reachable from `v`, not counting `v` itself.
pub fn bfs_closure(adj: &[Vec<usize>], v: usize) -> u64 {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([v]);
    seen[v] = true;
    let mut count = 0;
    while let Some(u) = queue.pop_front() {
        for &w in &adj[u] {
            if !seen[w] {
                seen[w] = true;
                count += 1;
                queue.push_back(w);
            }
        }
    }
    count
}

/// Longest path (in edges) from `v` in a DAG, by memoised recursion.
pub fn longest_path(adj: &[Vec<usize>], v: usize, memo: &mut Vec<Option<u64>>) -> u64 {
    if let Some(d) = memo[v] {
        return d;
    }
    let d = adj[v]
        .iter()
        .map(|&w| 1 + longest_path(adj, w, memo))
        .max()
        .unwrap_or(0);
    memo[v] = Some(d);
    d
}

// ---------------------------------------------------------------- names

pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.to_lowercase().chars().collect();
    let b: Vec<char> = b.to_lowercase().chars().collect();
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let c = usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + c);
        }
    }
    d[a.len()][b.len()]
}

/// Exactly one substitution, insertion or deletion apart (case-folded).
pub fn one_edit_apart(a: &str, b: &str) -> bool {
    let a: Vec<char> = a.to_lowercase().chars().collect();
    let b: Vec<char> = b.to_lowercase().chars().collect();
    let (s, l) = if a.len() <= b.len() { (&a, &b) } else { (&b, &a) };
    match l.len() - s.len() {
        0 => s.iter().zip(l.iter()).filter(|(x, y)| x != y).count() == 1,
        1 => {
            let p = s.iter().zip(l.iter()).take_while(|(x, y)| x == y).count();
            s[p..] == l[p + 1..]
        }
        _ => false,
    }
}

/// Every pair at distance exactly 1, by comparing all pairs.
pub fn brute_pairs(names: &[String]) -> Vec<(String, String)> {
    let set: BTreeSet<&String> = names.iter().collect();
    let v: Vec<&String> = set.into_iter().collect();
    let mut out = Vec::new();
    for i in 0..v.len() {
        for j in i + 1..v.len() {
            if one_edit_apart(v[i], v[j]) {
                out.push((v[i].clone(), v[j].clone()));
            }
        }
    }
    out
}

// ---------------------------------------------------------------- sampling

/// Inverse-transform sample of a continuous power law.
pub fn power_law_sample(alpha: f64, xmin: f64, u: f64) -> f64 {
    xmin * (1.0 - u).powf(-1.0 / (alpha - 1.0))
}

// ---------------------------------------------------------------- fixture oracles

pub struct Pkg {
    pub name: String,
    pub deps: Vec<String>,
    pub downloads: u64,
    pub last_release: i64,
    pub modules: Vec<String>,
    pub hashes: Option<BTreeSet<String>>,
}

pub struct Fixture {
    pub captured_at: i64,
    pub pkgs: Vec<Pkg>,
}

/// Reads a snapshot file as plain JSON, sorted by name.
pub fn read_fixture(name: &str) -> Fixture {
    let text = std::fs::read_to_string(fixture(name)).unwrap();
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    let strings = |v: &Value| -> Vec<String> {
        v.as_array()
            .map(|a| a.iter().map(|s| s.as_str().unwrap().to_string()).collect())
            .unwrap_or_default()
    };
    let mut pkgs: Vec<Pkg> = lines
        .map(|l| {
            let v: Value = serde_json::from_str(l).unwrap();
            Pkg {
                name: v["name"].as_str().unwrap().to_string(),
                deps: strings(&v["dependencies"]),
                downloads: v["downloads"].as_u64().unwrap(),
                last_release: v["last_release"].as_i64().unwrap(),
                modules: strings(&v["modules"]),
                hashes: v.get("file_hashes").map(|h| strings(h).into_iter().collect()),
            }
        })
        .collect();
    pkgs.sort_by(|a, b| a.name.cmp(&b.name));
    Fixture {
        captured_at: header["captured_at"].as_i64().unwrap(),
        pkgs,
    }
}

pub fn graph_stats_oracle(f: &Fixture) -> Vec<Record> {
    let index: BTreeMap<&str, usize> = f.pkgs.iter().enumerate().map(|(i, p)| (p.name.as_str(), i)).collect();
    let n_all = f.pkgs.len();
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n_all];
    for (i, p) in f.pkgs.iter().enumerate() {
        for d in &p.deps {
            if let Some(&j) = index.get(d.as_str()) {
                if j != i {
                    adj[i].insert(j);
                }
            }
        }
    }
    let connected: Vec<usize> = (0..n_all)
        .filter(|&i| !adj[i].is_empty() || adj.iter().any(|s| s.contains(&i)))
        .collect();
    let remap: BTreeMap<usize, usize> = connected.iter().enumerate().map(|(k, &i)| (i, k)).collect();
    let adj: Vec<Vec<usize>> = connected
        .iter()
        .map(|&i| adj[i].iter().map(|j| remap[j]).collect())
        .collect();
    let n = adj.len();
    let edges: usize = adj.iter().map(Vec::len).sum();
    let closures: Vec<u64> = (0..n).map(|v| bfs_closure(&adj, v)).collect();
    let mut memo = vec![None; n];
    let depths: Vec<u64> = (0..n).map(|v| longest_path(&adj, v, &mut memo)).collect();

    let mut out = vec![Record::GraphStats(GraphStats {
        node_count: n,
        avg_outdegree: edges as f64 / n as f64,
        avg_tree_size: closures.iter().sum::<u64>() as f64 / n as f64,
        avg_tree_depth: depths.iter().sum::<u64>() as f64 / n as f64,
        disconnected_removed: n_all - n,
    })];
    let distinct: BTreeSet<u64> = closures.iter().copied().collect();
    for size in distinct {
        let cumulative = closures.iter().filter(|&&c| c <= size).count();
        out.push(Record::ClosureCdf(CdfPoint {
            size,
            cumulative,
            fraction: cumulative as f64 / n as f64,
        }));
    }
    out
}

pub fn popularity_oracle(f: &Fixture, k: usize, xmin: f64) -> Vec<Record> {
    let mut desc: Vec<u64> = f.pkgs.iter().map(|p| p.downloads).collect();
    desc.sort_unstable_by(|a, b| b.cmp(a));
    let total: u64 = desc.iter().sum();
    let top: u64 = desc.iter().take(k).sum();
    let mut out = vec![Record::TopShare {
        k,
        share: top as f64 / total as f64,
    }];
    for threshold in [1_000, 10_000, 100_000, 1_000_000] {
        out.push(Record::ThresholdCount {
            threshold,
            count: f.pkgs.iter().filter(|p| p.downloads >= threshold).count(),
        });
    }
    let sample: Vec<f64> = f.pkgs.iter().filter(|p| p.downloads > 0).map(|p| p.downloads as f64).collect();
    let n = sample.len();
    let distinct: BTreeSet<u64> = f.pkgs.iter().filter(|p| p.downloads > 0).map(|p| p.downloads).collect();
    for &v in &distinct {
        let count = sample.iter().filter(|&&x| x >= v as f64).count();
        out.push(Record::Ccdf(CcdfPoint {
            value: v as f64,
            count,
            fraction: count as f64 / n as f64,
        }));
    }
    let tail: Vec<f64> = sample.iter().copied().filter(|&x| x >= xmin).collect();
    let log_sum: f64 = tail.iter().map(|x| (x / xmin).ln()).sum();
    let alpha = 1.0 + tail.len() as f64 / log_sum;
    out.push(Record::PowerLawFit(PowerLawFit {
        alpha,
        xmin,
        n_tail: tail.len(),
    }));
    let share = tail.len() as f64 / n as f64;
    for &v in distinct.iter().filter(|&&v| v as f64 >= xmin) {
        out.push(Record::FitOverlay {
            value: v as f64,
            fraction: share * (v as f64 / xmin).powf(1.0 - alpha),
        });
    }
    out
}

pub fn abandonment_oracle(f: &Fixture, top: usize) -> Vec<Record> {
    let year = 365 * 86_400;
    let mut stale: Vec<&Pkg> = f.pkgs.iter().filter(|p| f.captured_at - p.last_release > year).collect();
    let count = stale.len();
    let cumulative = stale.iter().map(|p| p.downloads).sum();
    stale.sort_by(|a, b| b.downloads.cmp(&a.downloads).then(a.name.cmp(&b.name)));
    vec![Record::Abandonment(AbandonmentReport {
        total: f.pkgs.len(),
        abandoned: count,
        fraction: count as f64 / f.pkgs.len() as f64,
        top_abandoned: stale
            .iter()
            .take(top)
            .map(|p| AbandonedPackage {
                name: p.name.clone(),
                downloads: p.downloads,
            })
            .collect(),
        cumulative_abandoned_downloads: cumulative,
    })]
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    a.intersection(b).count() as f64 / a.union(b).count() as f64
}

pub fn squat_scan_oracle(f: &Fixture) -> Vec<Record> {
    let by_name: BTreeMap<&str, &Pkg> = f.pkgs.iter().map(|p| (p.name.as_str(), p)).collect();
    let mut cands = Vec::new();
    for (i, x) in f.pkgs.iter().enumerate() {
        for y in &f.pkgs[i + 1..] {
            let d = levenshtein(&x.name, &y.name);
            if d != 1 {
                continue;
            }
            let (s, t) = if x.downloads < y.downloads || (x.downloads == y.downloads && x.name < y.name) {
                (x, y)
            } else {
                (y, x)
            };
            let similarity = match (&by_name[s.name.as_str()].hashes, &by_name[t.name.as_str()].hashes) {
                (Some(a), Some(b)) if !a.is_empty() && !b.is_empty() => Some(jaccard(a, b)),
                _ => None,
            };
            cands.push(SquatCandidate {
                kind: SquatKind::TypoPair,
                subject: s.name.clone(),
                target: t.name.clone(),
                distance: Some(d),
                subject_downloads: s.downloads,
                target_downloads: t.downloads,
                popularity_ratio: t.downloads.max(1) as f64 / s.downloads.max(1) as f64,
                content_similarity: similarity,
                import_status: None,
                evidence: format!("edit distance {d}; downloads {} vs {}", s.downloads, t.downloads),
            });
        }
    }
    cands.sort_by(|a, b| {
        b.popularity_ratio
            .partial_cmp(&a.popularity_ratio)
            .unwrap()
            .then(a.subject.cmp(&b.subject))
            .then(a.target.cmp(&b.target))
    });
    cands.into_iter().map(Record::SquatCandidate).collect()
}

pub fn import_squat_oracle(f: &Fixture) -> Vec<Record> {
    let norm = |s: &str| s.to_lowercase().replace('_', "-");
    let mut out = Vec::new();
    for p in &f.pkgs {
        let mut done = BTreeSet::new();
        for m in &p.modules {
            if norm(m) == norm(&p.name) || !done.insert(norm(m)) {
                continue;
            }
            let holder = f.pkgs.iter().find(|q| norm(&q.name) == norm(m));
            let (subject, sd, status, evidence) = match holder {
                Some(h) => (
                    h.name.clone(),
                    h.downloads,
                    ImportStatus::Collision,
                    format!(
                        "module `{m}` of `{}` is also registered as package `{}`; module list from static listing only",
                        p.name, h.name
                    ),
                ),
                None => (
                    m.clone(),
                    0,
                    ImportStatus::OpenSlot,
                    format!(
                        "module `{m}` of `{}` has no package of that name; module list from static listing only",
                        p.name
                    ),
                ),
            };
            out.push(Record::SquatCandidate(SquatCandidate {
                kind: SquatKind::ImportSquat,
                subject,
                target: p.name.clone(),
                distance: None,
                subject_downloads: sd,
                target_downloads: p.downloads,
                popularity_ratio: p.downloads.max(1) as f64 / sd.max(1) as f64,
                content_similarity: None,
                import_status: Some(status),
                evidence,
            }));
        }
    }
    out
}

/// The five golden commands on the PyPI fixture, with their oracle output.
pub fn golden_cases() -> Vec<(&'static str, Vec<&'static str>, String)> {
    let f = read_fixture("pypi30.snap");
    vec![
        ("graph-stats", vec!["graph-stats"], render(&graph_stats_oracle(&f))),
        (
            "popularity",
            vec!["popularity", "--top", "2"],
            render(&popularity_oracle(&f, 2, 1e4)),
        ),
        ("abandonment", vec!["abandonment"], render(&abandonment_oracle(&f, 10))),
        ("squat-scan", vec!["squat-scan"], render(&squat_scan_oracle(&f))),
        (
            "import-squat-scan",
            vec!["import-squat-scan"],
            render(&import_squat_oracle(&f)),
        ),
    ]
}

pub fn golden_path(name: &str) -> PathBuf {
    fixture(&format!("golden/{name}.jsonl"))
}
