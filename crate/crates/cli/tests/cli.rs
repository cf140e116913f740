use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use save_core::bench::from_csv;
use save_core::experiments::{Rq1Report, Timeline, RQ1_CSV_HEADER};
use save_core::property::load_properties;
use save_core::runtime::{log_from_jsonl, trace_from_jsonl, KnowledgeBase};
use save_core::sim::GroundTruth;
use save_core::{AugmentedScg, CriticalityReport, Directive};
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn save(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_save")).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn check_exit_codes() {
    let scg = fixture("two_state.json");
    let ok = save(&["check", "--scg", path(&scg), "--properties", path(&fixture("loose.json"))]);
    assert_eq!(ok.status.code(), Some(0));

    let bad = save(&["check", "--scg", path(&scg), "--properties", path(&fixture("strict.json"))]);
    assert_eq!(bad.status.code(), Some(1));
    let text = stdout(&bad);
    assert!(text.contains("worst situation: s1"), "{text}");
    assert!(text.contains("violated: [safe]"), "{text}");

    // s0 alone complies with the strict bound
    let one = save(&[
        "check",
        "--scg",
        path(&scg),
        "--properties",
        path(&fixture("strict.json")),
        "--situation",
        "s0",
    ]);
    assert_eq!(one.status.code(), Some(0));

    let missing = save(&["check", "--scg", "/nonexistent.json", "--properties", path(&fixture("loose.json"))]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent.json"));

    let unknown = save(&[
        "check",
        "--scg",
        path(&scg),
        "--properties",
        path(&fixture("loose.json")),
        "--situation",
        "s9",
    ]);
    assert_eq!(unknown.status.code(), Some(2));
}

#[test]
fn check_json_round_trips() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("report.json");
    let res = save(&[
        "check",
        "--scg",
        path(&fixture("two_state.json")),
        "--properties",
        path(&fixture("strict.json")),
        "--format",
        "json",
        "--out",
        path(&out),
    ]);
    assert_eq!(res.status.code(), Some(1));
    let report: CriticalityReport = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report.worst_situation.as_deref(), Some("s1"));
    let printed: CriticalityReport = serde_json::from_str(&stdout(&res)).unwrap();
    assert_eq!(printed, report);
}

#[test]
fn prism_export_matches_golden_files() {
    let dir = TempDir::new().unwrap();
    let res = save(&[
        "export-prism",
        "--scg",
        path(&fixture("two_state.json")),
        "--situation",
        "s0",
        "--properties",
        path(&fixture("strict.json")),
        "--out",
        path(dir.path()),
    ]);
    assert!(res.status.success());
    for (written, golden) in [("model.pm", "two_state.pm"), ("properties.props", "strict.props")] {
        assert_eq!(
            fs::read_to_string(dir.path().join(written)).unwrap(),
            fs::read_to_string(fixture(golden)).unwrap(),
            "{written}"
        );
    }
    let failure = save(&[
        "export-prism",
        "--scg",
        path(&fixture("two_state.json")),
        "--situation",
        "f1",
        "--properties",
        path(&fixture("strict.json")),
    ]);
    assert_eq!(failure.status.code(), Some(2));
}

/// Runs the exported model through PRISM when it is installed.
#[test]
fn prism_agrees_when_available() {
    let Ok(found) = Command::new("prism").arg("-version").output() else {
        eprintln!("prism not on PATH, skipping");
        return;
    };
    if !found.status.success() {
        return;
    }
    let res = Command::new("prism")
        .args([path(&fixture("two_state.pm")), path(&fixture("strict.props"))])
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&res.stdout);
    let value: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("Result: "))
        .and_then(|r| r.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert!((value - 0.2292).abs() < 1e-6, "{value}");
}

#[test]
fn rq1_writes_csv_and_json() {
    let dir = TempDir::new().unwrap();
    let res = save(&["experiment-rq1", "--out", path(dir.path())]);
    assert_eq!(res.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("rq1.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(RQ1_CSV_HEADER));
    assert_eq!(lines.count(), 20);
    let report: Rq1Report = serde_json::from_str(&fs::read_to_string(dir.path().join("rq1.json")).unwrap()).unwrap();
    assert_eq!(report.records.len(), 20);
    assert!(stdout(&res).contains(&report.summary()));
}

#[test]
fn rq2_is_deterministic() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    for dir in [&a, &b] {
        assert!(save(&["experiment-rq2", "--out", path(dir.path())]).status.success());
    }
    for file in ["baseline.jsonl", "save.jsonl", "timeline.json"] {
        let first = fs::read_to_string(a.path().join(file)).unwrap();
        assert_eq!(first, fs::read_to_string(b.path().join(file)).unwrap(), "{file}");
    }
    let save_log = log_from_jsonl(&fs::read_to_string(a.path().join("save.jsonl")).unwrap()).unwrap();
    let timeline: Timeline = serde_json::from_str(&fs::read_to_string(a.path().join("timeline.json")).unwrap()).unwrap();
    assert!(timeline.shows_rescue());
    assert!(save_log.iter().any(|e| e.directive.is_adaptation()));
}

#[test]
fn bench_csv_parses() {
    let res = save(&["bench", "--n", "5,10", "--k", "10"]);
    assert!(res.status.success());
    let records = from_csv(&stdout(&res)).unwrap();
    let sizes: Vec<usize> = records.iter().map(|r| r.n).collect();
    assert_eq!(sizes, [5, 10]);
}

#[test]
fn scenario_then_run_with_resume() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let res = save(&["scenario", "--seed", "3", "--steps", "300", "--out", path(d)]);
    assert!(res.status.success());
    let truth: GroundTruth = serde_json::from_str(&fs::read_to_string(d.join("truth.json")).unwrap()).unwrap();
    let belief = AugmentedScg::from_json(&fs::read_to_string(d.join("belief.json")).unwrap()).unwrap();
    assert_eq!(truth.scg.situation_ids().count(), belief.situation_ids().count());
    load_properties(&fs::read_to_string(d.join("properties.json")).unwrap()).unwrap();
    let trace = trace_from_jsonl(&fs::read_to_string(d.join("trace.jsonl")).unwrap()).unwrap();

    let (belief_path, props_path) = (d.join("belief.json"), d.join("properties.json"));
    let run = |events: &str, extra: &[&str], log: &str| {
        let mut args = vec!["run", "--scg", path(&belief_path), "--properties", path(&props_path)];
        args.extend_from_slice(&["--trace", events, "--out", log]);
        args.extend_from_slice(extra);
        let res = save(&args);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        log_from_jsonl(&fs::read_to_string(log).unwrap()).unwrap()
    };

    let whole = run(path(&d.join("trace.jsonl")), &[], path(&d.join("whole.jsonl")));
    assert_eq!(whole.len(), trace.len());

    // the snapshot carries the cursor, so any split point resumes exactly
    let cut = trace.len() / 2;
    let text = fs::read_to_string(d.join("trace.jsonl")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    fs::write(d.join("a.jsonl"), lines[..cut].join("\n")).unwrap();
    fs::write(d.join("b.jsonl"), lines[cut..].join("\n")).unwrap();
    let snap = d.join("kb.json");
    let first = run(path(&d.join("a.jsonl")), &["--snapshot", path(&snap)], path(&d.join("la.jsonl")));
    KnowledgeBase::load(&fs::read_to_string(&snap).unwrap()).unwrap();
    let second = run(path(&d.join("b.jsonl")), &["--resume", path(&snap)], path(&d.join("lb.jsonl")));
    let resumed: Vec<_> = first.into_iter().chain(second).collect();
    assert_eq!(resumed, whole);

    let baseline = run(path(&d.join("trace.jsonl")), &["--baseline"], path(&d.join("base.jsonl")));
    assert!(baseline.iter().all(|e| e.directive == Directive::Continue));
}

#[test]
fn bad_arguments_exit_with_usage_error() {
    assert_eq!(save(&["bench", "--density", "nope"]).status.code(), Some(2));
    assert_eq!(save(&["frobnicate"]).status.code(), Some(2));
}
