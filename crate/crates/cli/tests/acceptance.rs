//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line per criterion and exits non-zero if any failed.
//!
//! Reference counts below are computed by small independent readers of the
//! corpus files (csv + regex), never by the pipeline under test.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::Read;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use regex::Regex;
use sha2::{Digest, Sha256};

use flowsheet_core::ingest::{self, InputFormat};
use flowsheet_core::mapcfg::{self, default_mapping};
use flowsheet_core::profiler::{self, FrequencyReport};
use flowsheet_core::synth_gen::{self, GeneratorSpec};
use flowsheet_core::transform::{self, infer_temperature_unit, PipelineOutputs, TransformConfig, UnitInference};

const BIN: &str = env!("CARGO_BIN_EXE_flowsheet");
const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn(&mut Workspace) -> Outcome);

fn check(cond: bool, what: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn run_cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(BIN).args(args).output().map_err(|e| format!("spawn: {e}"))?;
    if !out.status.success() {
        return Err(format!("flowsheet {:?} exited {:?}: {}", args, out.status.code(), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn sha256(path: &Path) -> Result<String, String> {
    let mut f = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| e.to_string())?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn corpus_reader(path: &Path) -> csv::Reader<File> {
    csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .flexible(true)
        .from_path(path)
        .expect("corpus readable")
}

/// Shared million-row corpus, generated once through the CLI.
struct Workspace {
    dir: tempfile::TempDir,
    million: Option<PathBuf>,
}

impl Workspace {
    fn million(&mut self) -> Result<PathBuf, String> {
        if let Some(p) = &self.million {
            return Ok(p.clone());
        }
        let p = self.dir.path().join("corpus_1m.tsv");
        run_cli(&["gen", "--seed", "7", "--rows", "1000000", "--out", p.to_str().unwrap()])?;
        self.million = Some(p.clone());
        Ok(p)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

// 1 ---------------------------------------------------------------------

fn mapping_fidelity(_: &mut Workspace) -> Outcome {
    let text = fs::read_to_string(Path::new(FIXTURES).join("loinc_concepts.tsv")).map_err(|e| e.to_string())?;
    let mut expected: Vec<(i64, String, String)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (f[0].parse().unwrap(), f[1].to_owned(), f[2].to_owned())
        })
        .collect();
    let mapping = default_mapping();
    let mut got: Vec<(i64, String, String)> =
        mapping.rules().iter().map(|r| (r.concept_id, r.concept_code.clone(), r.concept_name.clone())).collect();
    check(expected.len() == 28, format!("fixture has {} rows", expected.len()))?;
    check(got.len() == 28, format!("default mapping has {} rules", got.len()))?;
    expected.sort();
    got.sort();
    for (e, g) in expected.iter().zip(&got) {
        check(e == g, format!("expected {e:?}, got {g:?}"))?;
    }
    Ok("28/28 (concept_id, concept_code, concept_name) triples match".into())
}

// 2 ---------------------------------------------------------------------

fn case_sensitivity(_: &mut Workspace) -> Outcome {
    let m = default_mapping();
    let hits = ["Temp", "Temperature", "Temp (in Celsius)", "Tcore"];
    let misses = ["temp", "TEMP", "Temp src", "(Retired) Temp", "Humidifier Temperature", "Air Temp"];
    for name in hits {
        let id = mapcfg::lookup(&m, name).map(|r| r.concept_id);
        check(id == Some(3020891), format!("lookup({name:?}) = {id:?}"))?;
    }
    for name in misses {
        let id = mapcfg::lookup(&m, name).map(|r| r.concept_id);
        check(id.is_none(), format!("lookup({name:?}) = {id:?}, expected miss"))?;
    }
    Ok(format!("{} assertions", hits.len() + misses.len()))
}

// 3 ---------------------------------------------------------------------

#[derive(Debug, Default, PartialEq)]
struct Reference {
    valid: u64,
    measurements: u64,
    unmapped: u64,
    nonnumeric: u64,
    per_concept: BTreeMap<i64, u64>,
}

/// Straight filter-and-count over the corpus file.
fn reference_counts(path: &Path) -> Reference {
    let numeric = Regex::new(r"^[-+]?[0-9]+(\.[0-9]+)?$").unwrap();
    let rules: Vec<(i64, Vec<String>)> =
        default_mapping().rules().iter().map(|r| (r.concept_id, r.row_names.clone())).collect();
    let mut reference = Reference::default();
    for rec in corpus_reader(path).records() {
        let rec = rec.unwrap();
        if rec.len() < 7 || rec[0].trim().is_empty() || rec[5].trim().is_empty() {
            continue;
        }
        reference.valid += 1;
        let row = rec[5].trim();
        let concept = rules.iter().find(|(_, names)| names.iter().any(|n| n == row)).map(|(id, _)| *id);
        match concept {
            None => reference.unmapped += 1,
            Some(_) if !numeric.is_match(rec[6].trim()) => reference.nonnumeric += 1,
            Some(id) => {
                reference.measurements += 1;
                *reference.per_concept.entry(id).or_default() += 1;
            }
        }
    }
    reference
}

fn oracle_equivalence(ws: &mut Workspace) -> Outcome {
    let started = Instant::now();
    let corpus = ws.path("corpus_10k.tsv");
    let spec = GeneratorSpec { total_rows: 10_000, ..GeneratorSpec::default() };
    synth_gen::write_corpus(&spec, File::create(&corpus).unwrap(), InputFormat::Delimited).map_err(|e| e.to_string())?;

    let reference = reference_counts(&corpus);
    let mut config = TransformConfig::new(default_mapping());
    config.emit_observations = false;
    let outputs = PipelineOutputs { measurements: Some(ws.path("meas_10k.tsv")), ..Default::default() };
    let stream = ingest::open_path(&corpus, InputFormat::Delimited).map_err(|e| e.to_string())?;
    let report = transform::run_pipeline(stream, &config, &outputs).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();

    let got = Reference {
        valid: report.valid_records(),
        measurements: report.measurements_emitted,
        unmapped: report.skipped_unmapped,
        nonnumeric: report.skipped_nonnumeric,
        per_concept: report.per_concept_counts.clone(),
    };
    check(got == reference, format!("pipeline {got:?} != reference {reference:?}"))?;
    check(elapsed < Duration::from_secs(10), format!("took {elapsed:?}"))?;
    Ok(format!(
        "measurements {} unmapped {} nonnumeric {} over {} concepts, {:.2}s",
        got.measurements,
        got.unmapped,
        got.nonnumeric,
        got.per_concept.len(),
        elapsed.as_secs_f64()
    ))
}

// 4 ---------------------------------------------------------------------

fn count_lines(path: &Path) -> u64 {
    let mut r = csv::ReaderBuilder::new().delimiter(b'\t').has_headers(true).flexible(true).from_path(path).unwrap();
    r.records().count() as u64
}

fn conservation_and_censoring(ws: &mut Workspace) -> Outcome {
    let corpus = ws.path("corpus_100k.tsv");
    let corpus_s = corpus.to_str().unwrap();
    run_cli(&["gen", "--seed", "7", "--rows", "100000", "--out", corpus_s])?;
    let reference = reference_counts(&corpus);

    let id_obs = ws.path("id_obs.tsv");
    let id_report = ws.path("id_report.json");
    run_cli(&[
        "transform", "--in", corpus_s, "--mode", "identified",
        "--obs-out", id_obs.to_str().unwrap(), "--report", id_report.to_str().unwrap(),
    ])?;
    let report: report_json::Report = report_json::read(&id_report)?;
    check(
        report.observations_emitted == reference.valid,
        format!("observations_emitted {} != valid records {}", report.observations_emitted, reference.valid),
    )?;
    let rows = count_lines(&id_obs);
    check(rows == reference.valid, format!("observation file has {rows} rows, expected {}", reference.valid))?;

    // planted free text: every non-numeric value of 12+ characters
    let numeric = Regex::new(r"^[-+]?[0-9]+(\.[0-9]+)?$").unwrap();
    let mut planted: HashSet<String> = HashSet::new();
    for rec in corpus_reader(&corpus).records() {
        let rec = rec.unwrap();
        let v = rec[6].trim();
        if v.len() >= 12 && !numeric.is_match(v) {
            planted.insert(v.to_owned());
        }
    }
    check(!planted.is_empty(), "generator planted no free text")?;

    let de_obs = ws.path("de_obs.tsv");
    let de_meas = ws.path("de_meas.tsv");
    run_cli(&[
        "transform", "--in", corpus_s, "--mode", "deidentified",
        "--obs-out", de_obs.to_str().unwrap(), "--meas-out", de_meas.to_str().unwrap(),
    ])?;
    let de_rows = count_lines(&de_obs);
    check(de_rows == 0, format!("de-identified observation file has {de_rows} data rows"))?;
    let mut leaked = 0;
    for file in [&de_obs, &de_meas] {
        let text = fs::read_to_string(file).map_err(|e| e.to_string())?;
        leaked += planted.iter().filter(|p| text.contains(p.as_str())).count();
    }
    check(leaked == 0, format!("{leaked} planted strings found in de-identified outputs"))?;
    Ok(format!(
        "{} observations for {} valid records; de-identified: 0 rows, 0 of {} planted strings",
        report.observations_emitted,
        reference.valid,
        planted.len()
    ))
}

/// Minimal JSON report reader so the suite does not trust the crate's own
/// deserializer.
mod report_json {
    use std::path::Path;

    pub struct Report {
        pub observations_emitted: u64,
    }

    pub fn read(path: &Path) -> Result<Report, String> {
        let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
        let re = regex::Regex::new(r#""observations_emitted"\s*:\s*([0-9]+)"#).unwrap();
        let caps = re.captures(&text).ok_or("observations_emitted missing from report")?;
        Ok(Report { observations_emitted: caps[1].parse().unwrap() })
    }
}

// 5 ---------------------------------------------------------------------

fn determinism(ws: &mut Workspace) -> Outcome {
    let corpus = ws.million()?;
    let mut digests = Vec::new();
    for workers in ["1", "4"] {
        let dir = ws.path(&format!("workers_{workers}"));
        fs::create_dir_all(&dir).unwrap();
        let files = [dir.join("obs.tsv"), dir.join("meas.tsv"), dir.join("report.json")];
        run_cli(&[
            "transform", "--in", corpus.to_str().unwrap(), "--workers", workers,
            "--obs-out", files[0].to_str().unwrap(),
            "--meas-out", files[1].to_str().unwrap(),
            "--report", files[2].to_str().unwrap(),
        ])?;
        let sums: Vec<String> = files.iter().map(|f| sha256(f)).collect::<Result<_, _>>()?;
        for f in &files[..2] {
            fs::remove_file(f).ok();
        }
        digests.push(sums);
    }
    for (i, name) in ["observations", "measurements", "report"].iter().enumerate() {
        check(digests[0][i] == digests[1][i], format!("{name} differ: {} vs {}", digests[0][i], digests[1][i]))?;
    }
    Ok(format!("sha256 obs {} meas {} report {}", &digests[0][0][..12], &digests[0][1][..12], &digests[0][2][..12]))
}

// 6 ---------------------------------------------------------------------

fn profiler_fidelity(_: &mut Workspace) -> Outcome {
    let text = fs::read_to_string(Path::new(FIXTURES).join("temperature_row_names.tsv")).map_err(|e| e.to_string())?;
    let fixture: Vec<(String, u64)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let (name, count) = l.rsplit_once('\t').unwrap();
            (name.to_owned(), count.replace(',', "").parse().unwrap())
        })
        .collect();
    check(fixture.len() == 30, format!("fixture has {} names", fixture.len()))?;
    let report = FrequencyReport::from_counts(fixture.iter().map(|(n, c)| (n.as_str(), *c)));

    let top: Vec<String> = profiler::top_n(&report, 4).into_iter().map(|(n, _)| n).collect();
    check(top == ["Temp", "Temp src", "Temp (in Celsius)", "Tcore"], format!("top_n(4) = {top:?}"))?;

    let hits: HashSet<String> =
        profiler::substring_query(&report, "temp", &["attempt".to_string()], true).into_iter().map(|(n, _)| n).collect();
    let with_attempt: Vec<&String> = hits.iter().filter(|n| n.to_lowercase().contains("attempt")).collect();
    check(with_attempt.is_empty(), format!("names containing \"attempt\" returned: {with_attempt:?}"))?;
    let missing: Vec<&str> =
        fixture.iter().map(|(n, _)| n.as_str()).filter(|n| !hits.contains(*n)).collect();
    check(
        missing.is_empty(),
        format!("top_n ok; substring_query returned {}/30 names, missing {missing:?}", hits.len()),
    )?;
    Ok("top_n order ok; substring_query returned all 30 names, none containing \"attempt\"".into())
}

// 7 ---------------------------------------------------------------------

fn frequency_realism(ws: &mut Workspace) -> Outcome {
    let corpus = ws.million()?;
    let (mut hr, mut fetal) = (0u64, 0u64);
    for rec in corpus_reader(&corpus).records() {
        let rec = rec.unwrap();
        match &rec[5] {
            "Heart Rate" => hr += 1,
            "Fetal Heart Rate" => fetal += 1,
            _ => {}
        }
    }
    check(fetal > 0, "no Fetal Heart Rate rows")?;
    let target = 84_587_071.0 / 146_895.0;
    let ratio = hr as f64 / fetal as f64;
    let rel = (ratio - target) / target;
    check(
        rel.abs() <= 0.10,
        format!("ratio {hr}/{fetal} = {ratio:.1}, target {target:.1}, off by {:+.1}%", rel * 100.0),
    )?;
    Ok(format!("ratio {hr}/{fetal} = {ratio:.1} vs {target:.1} ({:+.1}%)", rel * 100.0))
}

// 8 ---------------------------------------------------------------------

fn unit_bands(_: &mut Workspace) -> Outcome {
    let mapping = default_mapping();
    let spec = GeneratorSpec { total_rows: 2_000_000, ..GeneratorSpec::default() };
    let mut values: Vec<f64> = Vec::new();
    let mut thousands: Vec<f64> = Vec::new();
    for rec in synth_gen::generate(&spec).map_err(|e| e.to_string())? {
        if values.len() >= 1000 && thousands.len() >= 100 {
            break;
        }
        let Ok(v) = rec.value.trim().parse::<f64>() else { continue };
        if rec.row_name == "TEMP" && v >= 1000.0 {
            if thousands.len() < 100 {
                thousands.push(v);
            }
        } else if values.len() < 1000 && mapping.lookup(&rec.row_name).is_some_and(|r| r.concept_id == 3020891) {
            values.push(v);
        }
    }
    check(values.len() == 1000, format!("only {} temperature values generated", values.len()))?;
    check(!thousands.is_empty(), "no thousands-scale TEMP values generated")?;

    let (mut c, mut f) = (0, 0);
    for v in &values {
        let expected = if (35.0..=40.0).contains(v) {
            c += 1;
            UnitInference::Celsius
        } else if (95.0..=104.0).contains(v) {
            f += 1;
            UnitInference::Fahrenheit
        } else {
            return Err(format!("generated temperature {v} outside both ranges"));
        };
        let got = infer_temperature_unit(*v);
        check(got == expected, format!("{v} classified {got:?}, expected {expected:?}"))?;
    }
    check(c > 0 && f > 0, format!("split is {c} C / {f} F"))?;
    for v in &thousands {
        let got = infer_temperature_unit(*v);
        check(got == UnitInference::Ambiguous, format!("TEMP {v} classified {got:?}"))?;
    }
    Ok(format!("{c} celsius, {f} fahrenheit, {} thousands-scale ambiguous", thousands.len()))
}

// 9 ---------------------------------------------------------------------

/// Runs the CLI and returns (wall time, peak RSS in KiB) of that child alone.
fn run_measured(args: &[&str]) -> Result<(Duration, u64), String> {
    let started = Instant::now();
    let child = Command::new(BIN).args(args).stdout(Stdio::null()).stderr(Stdio::piped()).spawn().map_err(|e| e.to_string())?;
    let pid = child.id() as libc::pid_t;
    let mut status = 0;
    // SAFETY: rusage is plain data and `pid` is our own unreaped child.
    let mut usage: libc::rusage = unsafe { std::mem::zeroed() };
    let rc = unsafe { libc::wait4(pid, &mut status, 0, &mut usage) };
    let elapsed = started.elapsed();
    if rc != pid {
        return Err(format!("wait4 failed: {}", std::io::Error::last_os_error()));
    }
    if !(libc::WIFEXITED(status) && libc::WEXITSTATUS(status) == 0) {
        let mut err = String::new();
        if let Some(mut s) = child.stderr {
            let _ = s.read_to_string(&mut err);
        }
        return Err(format!("transform failed (status {status}): {err}"));
    }
    Ok((elapsed, usage.ru_maxrss as u64))
}

fn performance(ws: &mut Workspace) -> Outcome {
    let corpus = ws.million()?;
    let dir = ws.path("perf");
    fs::create_dir_all(&dir).unwrap();
    let (elapsed, rss_kib) = run_measured(&[
        "transform", "--in", corpus.to_str().unwrap(), "--workers", "1",
        "--obs-out", dir.join("obs.tsv").to_str().unwrap(),
        "--meas-out", dir.join("meas.tsv").to_str().unwrap(),
        "--report", dir.join("report.json").to_str().unwrap(),
    ])?;
    let rss_mb = rss_kib as f64 / 1024.0;
    let summary = format!("{:.1}s, peak RSS {rss_mb:.0} MiB", elapsed.as_secs_f64());
    check(elapsed < Duration::from_secs(60), format!("too slow: {summary}"))?;
    check(rss_mb < 512.0, format!("too much memory: {summary}"))?;
    Ok(summary)
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("mapping fidelity", mapping_fidelity),
        ("case sensitivity", case_sensitivity),
        ("oracle equivalence", oracle_equivalence),
        ("conservation and censoring", conservation_and_censoring),
        ("determinism", determinism),
        ("profiler fidelity", profiler_fidelity),
        ("frequency realism", frequency_realism),
        ("unit inference bands", unit_bands),
        ("performance bound", performance),
    ];
    let mut ws = Workspace { dir: tempfile::tempdir().expect("tempdir"), million: None };
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = match panic::catch_unwind(AssertUnwindSafe(|| f(&mut ws))) {
            Ok(o) => o,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({detail})", i + 1);
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
