use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

const BIN: &str = env!("CARGO_BIN_EXE_flowsheet");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, rows: &str) -> std::path::PathBuf {
    let p = dir.join("corpus.tsv");
    let out = run(&["gen", "--seed", "7", "--rows", rows, "--out", s(&p)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    p
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["validate", "--mapping", "default"]).status.code(), Some(0));

    let exported = dir.path().join("mapping.tsv");
    assert!(run(&["export-mapping", "--out", s(&exported)]).status.success());
    let out = run(&["validate", "--mapping", s(&exported)]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok: 28 rule(s)"));

    // the same row name under two concepts
    let mut text = fs::read_to_string(&exported).unwrap();
    text.push_str("9999\t1-1\tLOINC\tDuplicate\tTemp\t\t\t\n");
    let bad = dir.path().join("bad.tsv");
    fs::write(&bad, text).unwrap();
    let out = run(&["validate", "--mapping", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("duplicate row_name \"Temp\""));

    assert_eq!(run(&["validate", "--mapping", s(&dir.path().join("missing.tsv"))]).status.code(), Some(2));
}

#[test]
fn transform_and_summarize() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gen(dir.path(), "5000");
    let meas = dir.path().join("meas.tsv");
    let report = dir.path().join("report.json");
    let out = run(&["transform", "--in", s(&corpus), "--meas-out", s(&meas), "--report", s(&report)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("records in:            5000"));
    assert!(fs::read_to_string(&report).unwrap().contains("\"records_in\": 5000"));

    let table = dir.path().join("summary.tsv");
    let out = run(&["summarize", "--meas", s(&meas), "--out", s(&table)]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("LOINC code"));
    assert!(text.contains("8310-5"));
    assert!(fs::read_to_string(&table).unwrap().starts_with("concept_code\tconcept_name\tcount\n"));
}

#[test]
fn transform_reads_stdin() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gen(dir.path(), "500");
    let from_file = dir.path().join("a.tsv");
    let from_stdin = dir.path().join("b.tsv");
    assert!(run(&["transform", "--in", s(&corpus), "--obs-out", s(&from_file)]).status.success());
    let mut child = Command::new(BIN)
        .args(["transform", "--in", "-", "--obs-out", s(&from_stdin)])
        .stdin(Stdio::piped())
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(&fs::read(&corpus).unwrap()).unwrap();
    assert!(child.wait().unwrap().success());
    assert_eq!(fs::read(from_file).unwrap(), fs::read(from_stdin).unwrap());
}

#[test]
fn transform_failures() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gen(dir.path(), "200");
    let obs = dir.path().join("obs.tsv");

    let missing = dir.path().join("nope.tsv");
    assert_eq!(run(&["transform", "--in", s(&missing), "--obs-out", s(&obs)]).status.code(), Some(2));
    assert_eq!(run(&["transform", "--in", s(&corpus)]).status.code(), Some(2));
    assert_eq!(run(&["transform", "--in", s(&corpus), "--obs-out", s(&obs), "--workers", "0"]).status.code(), Some(2));
    assert_eq!(run(&["transform", "--in", s(&corpus), "--obs-out", s(&obs), "--mode", "anon"]).status.code(), Some(2));

    // one output directory is missing: nothing may be left behind
    let meas = dir.path().join("meas.tsv");
    let unwritable = dir.path().join("no_such_dir").join("report.json");
    let out = run(&["transform", "--in", s(&corpus), "--meas-out", s(&meas), "--report", s(&unwritable)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!meas.exists());
    assert!(!obs.exists());
}

#[test]
fn gen_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    fs::write(&spec, "total_rows = 10\nbogus_key = 1\n").unwrap();
    assert_eq!(run(&["gen", "--spec", s(&spec)]).status.code(), Some(2));
    assert_eq!(run(&["gen", "--rows", "0"]).status.code(), Some(2));

    fs::write(&spec, "total_rows = 3\nseed = 11\n").unwrap();
    let out = run(&["gen", "--spec", s(&spec)]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 4);
}

#[test]
fn gen_is_reproducible() {
    let a = run(&["gen", "--seed", "3", "--rows", "300"]).stdout;
    let b = run(&["gen", "--seed", "3", "--rows", "300"]).stdout;
    let c = run(&["gen", "--seed", "4", "--rows", "300"]).stdout;
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn profile_discovery() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gen(dir.path(), "20000");
    let out = run(&["profile", "--in", s(&corpus), "--contains", "temp", "--exclude", "attempt"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    let names: Vec<&str> = text.lines().skip(1).map(|l| l.split('\t').next().unwrap()).collect();
    assert!(names.contains(&"Temp"));
    assert!(names.contains(&"TEMP"));
    assert!(!names.contains(&"Tcore"));
    assert!(names.iter().all(|n| n.to_lowercase().contains("temp") && !n.to_lowercase().contains("attempt")));

    let out = run(&["profile", "--in", s(&corpus), "--contains", "TEMP", "--case-sensitive", "--contexts", "--top", "1"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("row_name\tcount\nTEMP\t"));
    assert!(text.contains("TEMP\tDialysis\tHD Machine Check\t"));

    assert_eq!(run(&["profile", "--in", s(&corpus), "--top", "0"]).status.code(), Some(2));
}
