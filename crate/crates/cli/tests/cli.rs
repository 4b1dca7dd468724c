mod common;

use std::collections::HashMap;
use std::io::{self, BufRead, Read};
use std::process::{Command, Stdio};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use common::{fixture, render, run_cli};
use ecoscope_cli::{run, Io, EXIT_DECLINED, EXIT_OK, EXIT_USAGE};
use ecoscope_core::registry::{HttpResponse, Transport, TransportError};
use ecoscope_core::report::{parse_records, Record};
use ecoscope_core::snapshot::parse_snapshot_str;

fn npm() -> String {
    fixture("npm-crossenv.snap").to_str().unwrap().to_string()
}

fn pypi() -> String {
    fixture("pypi30.snap").to_str().unwrap().to_string()
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = run_cli(&["frobnicate"], "", false);
    assert_eq!(out.code, EXIT_USAGE);
    assert!(out.stderr.contains("Usage:"), "{}", out.stderr);
    assert!(out.stdout.is_empty());
}

#[test]
fn help_goes_to_stdout() {
    let out = run_cli(&["--help"], "", false);
    assert_eq!(out.code, EXIT_OK);
    assert!(out.stdout.contains("squat-scan"));
}

#[test]
fn declined_typosquat_prompt() {
    let out = run_cli(&["check", "crossenv", "--snapshot", &npm()], "n\n", true);
    assert_eq!(out.code, EXIT_DECLINED);
    assert!(out.stdout.contains("`cross-env`"), "{}", out.stdout);
    assert!(out.stderr.contains("Install `crossenv` anyway? [y/N]"));
}

#[test]
fn empty_answer_declines() {
    let out = run_cli(&["check", "crossenv", "--snapshot", &npm()], "\n", true);
    assert_eq!(out.code, EXIT_DECLINED);
    let out = run_cli(&["check", "crossenv", "--snapshot", &npm()], "", true);
    assert_eq!(out.code, EXIT_DECLINED);
}

#[test]
fn confirmed_install() {
    let out = run_cli(&["check", "crossenv", "--snapshot", &npm()], "yes\n", true);
    assert_eq!(out.code, EXIT_OK);
}

#[test]
fn non_interactive_without_yes_declines() {
    let out = run_cli(&["check", "crossenv", "--snapshot", &npm()], "y\n", false);
    assert_eq!(out.code, EXIT_DECLINED);
    assert!(!out.stderr.contains("[y/N]"));
}

#[test]
fn popular_package_needs_no_prompt() {
    let out = run_cli(&["check", "cross-env", "--snapshot", &npm()], "", true);
    assert_eq!(out.code, EXIT_OK);
    assert!(out.stderr.is_empty(), "{}", out.stderr);
    assert!(out.stdout.contains("no alerts"));
}

struct ForbiddenStdin;

impl Read for ForbiddenStdin {
    fn read(&mut self, _: &mut [u8]) -> io::Result<usize> {
        panic!("stdin was read");
    }
}

impl BufRead for ForbiddenStdin {
    fn fill_buf(&mut self) -> io::Result<&[u8]> {
        panic!("stdin was read");
    }
    fn consume(&mut self, _: usize) {}
}

#[test]
fn yes_never_reads_stdin() {
    for args in [
        vec!["check", "crossenv"],
        vec!["check", "bs4"],
        vec!["check-update", "left-pad"],
    ] {
        let snap = if args[1] == "bs4" { pypi() } else { npm() };
        let mut stdout = Vec::new();
        let mut stderr = Vec::new();
        let mut stdin = ForbiddenStdin;
        let mut io = Io {
            stdin: &mut stdin,
            stdout: &mut stdout,
            stderr: &mut stderr,
            interactive: true,
            transport: None,
        };
        let argv = ["ecoscope"].into_iter().chain(args.iter().copied()).chain(["--snapshot", &snap, "--yes"]);
        assert_eq!(run(argv, &mut io), EXIT_OK);
    }
}

#[test]
fn check_update_flags_stale_packages() {
    let out = run_cli(&["check-update", "left-pad", "--snapshot", &npm(), "--format", "structured"], "", false);
    assert_eq!(out.code, EXIT_DECLINED);
    let records = parse_records(&out.stdout).unwrap();
    assert!(matches!(&records[0], Record::Alert(a) if a.evidence.last_release_age_days == Some(900)));
    let out = run_cli(&["check-update", "lodash", "--snapshot", &npm()], "", false);
    assert_eq!(out.code, EXIT_OK);
    let out = run_cli(&["check-update", "nope", "--snapshot", &npm()], "", false);
    assert_eq!(out.code, EXIT_USAGE);
}

#[test]
fn missing_snapshot_is_a_usage_error() {
    let out = run_cli(&["graph-stats"], "", false);
    assert_eq!(out.code, EXIT_USAGE);
    assert!(out.stderr.contains("ECOSCOPE_SNAPSHOT"));
    let out = run_cli(&["graph-stats", "--snapshot", "/nonexistent/x.snap"], "", false);
    assert_eq!(out.code, EXIT_USAGE);
}

#[test]
fn malformed_snapshot_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.snap");
    std::fs::write(&path, "{\"ecosystem\":\"npm\",\"captured_at\":1}\nnot json\n").unwrap();
    let out = run_cli(&["abandonment", "--snapshot", path.to_str().unwrap()], "", false);
    assert_eq!(out.code, EXIT_USAGE);
    assert!(out.stderr.contains("line 2"), "{}", out.stderr);
}

#[test]
fn bad_scan_parameters() {
    let out = run_cli(&["squat-scan", "--snapshot", &pypi(), "--max-distance", "3"], "", false);
    assert_eq!(out.code, EXIT_USAGE);
    let out = run_cli(&["import-squat-scan", "--snapshot", &npm()], "", false);
    assert_eq!(out.code, EXIT_USAGE);
    assert!(out.stderr.contains("PyPI"));
    let out = run_cli(&["squat-scan", "--snapshot", &pypi(), "--max-distance", "x"], "", false);
    assert_eq!(out.code, EXIT_USAGE);
}

#[test]
fn policy_file_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let lenient = dir.path().join("lenient.toml");
    std::fs::write(&lenient, "popularity_ratio_threshold = 1e9\n").unwrap();
    let out = run_cli(
        &["check", "crossenv", "--snapshot", &npm(), "--policy", lenient.to_str().unwrap()],
        "",
        false,
    );
    assert_eq!(out.code, EXIT_OK);

    let strict = dir.path().join("strict.toml");
    std::fs::write(&strict, "strict = true\n").unwrap();
    let out = run_cli(
        &["check", "crossenv", "--snapshot", &npm(), "--policy", strict.to_str().unwrap()],
        "",
        false,
    );
    assert!(out.stdout.starts_with("blocked:"), "{}", out.stdout);

    for bad in ["popularity_ratio_threshold = 0\n", "no_such_field = 1\n"] {
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, bad).unwrap();
        let out = run_cli(
            &["check", "crossenv", "--snapshot", &npm(), "--policy", path.to_str().unwrap()],
            "",
            false,
        );
        assert_eq!(out.code, EXIT_USAGE, "{bad}");
    }
}

#[test]
fn structured_output_round_trips() {
    let p = pypi();
    let n = npm();
    let commands: Vec<Vec<&str>> = vec![
        vec!["graph-stats", "--snapshot", &p, "--keep-disconnected"],
        vec!["popularity", "--snapshot", &n],
        vec!["popularity", "--snapshot", &p, "--xmin", "1e9"],
        vec!["abandonment", "--snapshot", &p, "--top", "3"],
        vec!["squat-scan", "--snapshot", &p, "--max-distance", "2", "--saturation", "4"],
        vec!["import-squat-scan", "--snapshot", &p, "--top", "2"],
        vec!["incidents"],
        vec!["check", "bs4", "--snapshot", &p, "--yes"],
        vec!["check-update", "bs4", "--snapshot", &p, "--yes"],
    ];
    for mut args in commands {
        args.extend(["--format", "structured"]);
        let out = run_cli(&args, "", false);
        assert_eq!(out.code, EXIT_OK, "{args:?}: {}", out.stderr);
        let records = parse_records(&out.stdout).unwrap_or_else(|e| panic!("{args:?}: {e}"));
        assert!(!records.is_empty(), "{args:?}");
        assert_eq!(render(&records), out.stdout, "{args:?}");
    }
}

#[test]
fn fit_unavailable_is_reported_not_fatal() {
    let out = run_cli(&["popularity", "--snapshot", &pypi(), "--xmin", "1e9", "--format", "structured"], "", false);
    let records = parse_records(&out.stdout).unwrap();
    assert!(records.iter().any(|r| matches!(r, Record::FitUnavailable { .. })));
}

#[test]
fn human_output_for_every_command() {
    let p = pypi();
    for args in [
        vec!["graph-stats", "--snapshot", &p],
        vec!["popularity", "--snapshot", &p],
        vec!["abandonment", "--snapshot", &p],
        vec!["squat-scan", "--snapshot", &p, "--saturation", "3"],
        vec!["import-squat-scan", "--snapshot", &p],
        vec!["incidents"],
    ] {
        let out = run_cli(&args, "", false);
        assert_eq!(out.code, EXIT_OK, "{args:?}: {}", out.stderr);
        assert!(!out.stdout.is_empty());
        assert!(!out.stdout.starts_with('{'), "{args:?}");
    }
}

#[test]
fn snapshot_from_environment() {
    let out = Command::new(env!("CARGO_BIN_EXE_ecoscope"))
        .args(["check", "crossenv", "--format", "structured"])
        .env("ECOSCOPE_SNAPSHOT", npm())
        .stdin(Stdio::null())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_DECLINED));
    let records = parse_records(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert!(matches!(&records[0], Record::Alert(a) if a.suggestion.as_deref() == Some("cross-env")));
}

#[test]
fn binary_exit_code_for_usage_errors() {
    let out = Command::new(env!("CARGO_BIN_EXE_ecoscope"))
        .arg("frobnicate")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
}

/// Serves canned bodies by URL; anything else is a 404.
struct Canned {
    bodies: HashMap<String, (u16, String)>,
    seen: Mutex<Vec<String>>,
}

impl Transport for Canned {
    fn get(&self, url: &str, _: Duration) -> Result<HttpResponse, TransportError> {
        self.seen.lock().unwrap().push(url.to_string());
        let (status, body) = self.bodies.get(url).cloned().unwrap_or((404, String::new()));
        Ok(HttpResponse { status, body })
    }
}

fn npm_doc(name: &str, deps: &[&str], released: &str) -> String {
    let deps: serde_json::Map<String, serde_json::Value> =
        deps.iter().map(|d| (d.to_string(), serde_json::json!("^1.0.0"))).collect();
    serde_json::json!({
        "name": name,
        "dist-tags": {"latest": "1.0.0"},
        "versions": {"1.0.0": {"dependencies": deps}},
        "time": {"created": "2015-01-01T00:00:00Z", "1.0.0": released},
    })
    .to_string()
}

#[test]
fn ingest_through_registry_transport() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("registry.toml");
    std::fs::write(
        &config,
        "base_url = \"http://registry.test\"\ncounts_url = \"http://counts.test\"\nrate_limit = 1000.0\n",
    )
    .unwrap();
    let packages = dir.path().join("names.txt");
    std::fs::write(&packages, "# seed list\ncross-env\n\ncrossenv\nghost\n").unwrap();
    let output = dir.path().join("out.snap");

    let mut bodies = HashMap::new();
    bodies.insert(
        "http://registry.test/cross-env".to_string(),
        (200, npm_doc("cross-env", &["cross-spawn", "cross-env"], "2018-12-01T00:00:00Z")),
    );
    bodies.insert(
        "http://registry.test/crossenv".to_string(),
        (200, npm_doc("crossenv", &["cross-spawn"], "2017-07-19T00:00:00Z")),
    );
    bodies.insert("http://counts.test/cross-env".to_string(), (200, "{\"downloads\":10000000}".to_string()));
    bodies.insert("http://counts.test/crossenv".to_string(), (200, "{\"downloads\":50}".to_string()));
    let transport = Arc::new(Canned {
        bodies,
        seen: Mutex::new(Vec::new()),
    });

    let mut stdin = io::empty();
    let mut stdout = Vec::new();
    let mut stderr = Vec::new();
    let code = {
        let mut env = Io {
            stdin: &mut stdin,
            stdout: &mut stdout,
            stderr: &mut stderr,
            interactive: false,
            transport: Some(transport.clone()),
        };
        run(
            [
                "ecoscope",
                "ingest",
                "npm",
                "--packages",
                packages.to_str().unwrap(),
                "--config",
                config.to_str().unwrap(),
                "--output",
                output.to_str().unwrap(),
            ],
            &mut env,
        )
    };
    let stderr = String::from_utf8(stderr).unwrap();
    assert_eq!(code, EXIT_OK, "{stderr}");
    assert!(stderr.contains("skipped `ghost`"), "{stderr}");
    assert!(stderr.contains("ingested 2 npm packages (1 skipped"), "{stderr}");

    let parsed = parse_snapshot_str(&std::fs::read_to_string(&output).unwrap()).unwrap();
    let snap = parsed.snapshot;
    assert_eq!(snap.len(), 2);
    let env = snap.get("cross-env").unwrap();
    assert_eq!(env.downloads, 10_000_000);
    assert_eq!(env.dependencies, vec!["cross-spawn"]);
    assert_eq!(snap.get("crossenv").unwrap().downloads, 50);
    assert!(transport.seen.lock().unwrap().iter().all(|u| u.starts_with("http://")));
}

#[test]
fn ingest_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("registry.toml");
    std::fs::write(&config, "bogus = 1\n").unwrap();
    let packages = dir.path().join("names.txt");
    std::fs::write(&packages, "x\n").unwrap();
    let out = run_cli(
        &[
            "ingest",
            "pypi",
            "--packages",
            packages.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
        ],
        "",
        false,
    );
    assert_eq!(out.code, EXIT_USAGE);
    let out = run_cli(&["ingest", "cargo", "--packages", packages.to_str().unwrap()], "", false);
    assert_eq!(out.code, EXIT_USAGE);
}
