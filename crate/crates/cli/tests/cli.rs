#[allow(dead_code)]
#[path = "../../core/tests/common/tls.rs"]
mod tls;

use std::process::{Command, Output};

use serde_json::Value;

fn ivote(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ivote")).args(args).output().unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

const FAST: &[&str] = &["--iterations", "16", "--json"];

fn with(base: &[&str], extra: &[&str]) -> Vec<String> {
    extra.iter().chain(base).map(|s| s.to_string()).collect()
}

fn run(base: &[&str], extra: &[&str]) -> Output {
    let args = with(base, extra);
    ivote(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

#[test]
fn simulate_hundred_voters() {
    let out = run(FAST, &["simulate", "--voters", "100", "--seed", "9"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&out);
    assert_eq!(r["receipts"], 100);
    assert_eq!(r["unique_receipts"], 100);
    assert_eq!(r["verified"], 100);
}

#[test]
fn same_seed_same_bytes() {
    let a = run(FAST, &["simulate", "--voters", "20", "--seed", "4"]);
    let b = run(FAST, &["simulate", "--voters", "20", "--seed", "4"]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn passive_proxy_keeps_the_outcome() {
    let a = json(&run(FAST, &["simulate", "--voters", "20"]));
    let b = json(&run(FAST, &["simulate", "--voters", "20", "--proxy", "passive"]));
    assert_eq!(a["tally"], b["tally"]);
    assert_eq!(a["outcomes"], b["outcomes"]);
}

#[test]
fn inject_harvests_every_session() {
    let out = run(FAST, &["attack", "inject", "--voters", "10"]);
    assert_eq!(out.status.code(), Some(0));
    let m = &json(&out)["metrics"];
    assert_eq!(m["harvested"], 10);
    assert_eq!(m["correct"], 10);
}

#[test]
fn substitute_mismatches_equal_substitutions() {
    let out = run(FAST, &["attack", "substitute", "--voters", "12", "--targets", "4"]);
    assert_eq!(out.status.code(), Some(0));
    let m = &json(&out)["metrics"];
    assert_eq!(m["substituted"], 4);
    assert_eq!(m["readback_mismatches"], 4);
}

#[test]
fn crack_out_of_time_exits_one() {
    let out = ivote(&[
        "attack",
        "crack",
        "--voters",
        "1",
        "--targets",
        "1",
        "--budget-secs",
        "0.05",
        "--json",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let r = json(&out);
    assert_eq!(r["success"], false);
    assert_eq!(r["metrics"]["timed_out"], 1);
    assert!(r["metrics"]["tried"].as_u64().unwrap() < 1_000_000);
}

#[test]
fn bench_reports_all_conventions() {
    let out = ivote(&["bench", "--sample", "40", "--iterations", "100", "--json"]);
    assert_eq!(out.status.code(), Some(0));
    let r = json(&out);
    for key in ["candidates_per_sec", "hashes_per_second", "sha1_compressions_per_sec"] {
        assert!(r[key].as_f64().unwrap() > 0.0, "{key}");
    }
    assert!(r["extrapolation"]["known_id_secs"].as_f64().unwrap() > 0.0);
}

#[test]
fn config_file_wins_and_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "voters = 3\niterations = 16\n").unwrap();
    let out = ivote(&["simulate", "--voters", "50", "--config", cfg.to_str().unwrap(), "--json"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["voters"], 3);

    std::fs::write(&cfg, "voters = 3\n\nworkers = 0\n").unwrap();
    let out = ivote(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run.toml:3: workers"));

    assert_eq!(ivote(&["simulate", "--proxy", "loud"]).status.code(), Some(2));
    assert_eq!(ivote(&["attack", "nothing"]).status.code(), Some(2));
}

#[test]
fn out_file_holds_the_json() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    let out = ivote(&["simulate", "--voters", "2", "--iterations", "16", "--out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("receipts"));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(r["voters"], 2);
}

#[test]
fn scan_fixtures() {
    let shared = tls::make_cert("incapsula.com", tls::SHARED_SANS, false);
    let other = tls::make_cert("other.test", &["other.test"], false);
    let fx = [
        tls::TlsFixture::start(&shared),
        tls::TlsFixture::start(&shared),
        tls::TlsFixture::start(&other),
    ];
    let dir = tempfile::tempdir().unwrap();
    let list = dir.path().join("endpoints.txt");
    let lines: Vec<String> = fx.iter().map(|f| f.addr().to_string()).collect();
    std::fs::write(&list, format!("# fixtures\n{}\n", lines.join("\n"))).unwrap();
    let path = list.to_str().unwrap();

    let out = ivote(&["scan", path, "--target", "ivote-cvs.elections.wa.gov.au", "--json"]);
    assert_eq!(out.status.code(), Some(0));
    let r = json(&out);
    assert_eq!(r["clusters"].as_object().unwrap().len(), 2);
    assert_eq!(r["coverage"].as_array().unwrap().len(), 2);

    let out = ivote(&["scan", path, "--target", "ivote-cvs.elections.wa.gov.au", "--forbid-coverage"]);
    assert_eq!(out.status.code(), Some(1));
    let out = ivote(&["scan", path, "--target", "elsewhere.example", "--forbid-coverage"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(ivote(&["scan", path]).status.code(), Some(2));
}

#[test]
fn transcripts_round_trip_through_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    let p = path.to_str().unwrap();
    let small = ["--iterations", "8", "--pin-digits", "2", "--id-digits", "2", "--json"];
    let out = run(
        &small,
        &[
            "attack",
            "partials",
            "--voters",
            "3",
            "--targets",
            "1",
            "--recovery",
            "crack",
            "--transcripts",
            p,
            "--progress",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let progress: Vec<Value> = String::from_utf8_lossy(&out.stderr)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(progress
        .iter()
        .all(|p| p["who"] == "voter-0000" || p["who"] == "voter-0001" || p["who"] == "voter-0002"));
    assert!(!progress.is_empty());

    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.lines().count() > 10);
    for line in text.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert!(v["session_id"].is_u64() && v["endpoint"].is_string());
    }

    let r = json(&run(&small, &["analyze", p]));
    assert_eq!(r["login_ids"], 3);
    assert_eq!(r["cracked"], 0);
    assert_eq!(r["linked"].as_object().unwrap().len(), 3);

    let r = json(&run(&small, &["analyze", p, "--crack"]));
    assert_eq!(r["cracked"], 3);
    assert_eq!(r["partials"], 6);
}

#[test]
fn analyze_reports_harvested_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    let p = path.to_str().unwrap();
    assert_eq!(
        run(FAST, &["attack", "inject", "--voters", "4", "--transcripts", p]).status.code(),
        Some(0)
    );
    let r = json(&run(FAST, &["analyze", p]));
    assert_eq!(r["harvested"], 4);
}

#[test]
fn analyze_rejects_garbage() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    std::fs::write(&path, "not json\n").unwrap();
    let out = ivote(&["analyze", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}
