//! `flowsheet`: generate, profile, validate, transform and summarize
//! flowsheet extracts.
//!
//! Exit codes: 0 success, 1 validation failure, 2 usage or configuration
//! error, 3 runtime I/O failure.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use flowsheet_core::ingest::{self, InputFormat, IngestError, Source};
use flowsheet_core::mapcfg::{self, MappingTable, ValidationError};
use flowsheet_core::profiler;
use flowsheet_core::report::{self, ReportError};
use flowsheet_core::synth_gen::{self, GeneratorError, GeneratorSpec};
use flowsheet_core::transform::{self, Mode, PipelineOutputs, TransformConfig, TransformError};

#[derive(Parser)]
#[command(name = "flowsheet", version, about = "Flowsheet to OMOP CDM ETL")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic flowsheet corpus.
    Gen {
        /// Generator config (TOML). Flags below override it.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        rows: Option<i64>,
        #[arg(long)]
        patients: Option<i64>,
        /// Output file; `-` or absent writes to stdout.
        #[arg(long)]
        out: Option<String>,
        #[arg(long, default_value = "delimited")]
        format: InputFormat,
        /// Print the effective generator config and exit.
        #[arg(long)]
        print_spec: bool,
    },
    /// Count row names, search them by substring, show their contexts.
    Profile {
        /// Input file, or `-` for stdin.
        #[arg(long = "in")]
        input: String,
        #[arg(long, default_value = "delimited")]
        format: InputFormat,
        #[arg(long)]
        top: Option<usize>,
        /// Keep names containing this substring.
        #[arg(long)]
        contains: Option<String>,
        /// Drop names containing this substring (repeatable).
        #[arg(long)]
        exclude: Vec<String>,
        /// Match substrings without folding case.
        #[arg(long)]
        case_sensitive: bool,
        /// Collect and print (template, group) contexts for listed names.
        #[arg(long)]
        contexts: bool,
    },
    /// Check a mapping file (or `default`) against the table invariants.
    Validate {
        #[arg(long)]
        mapping: String,
    },
    /// Write the built-in mapping table in the mapping file format.
    ExportMapping {
        #[arg(long)]
        out: Option<String>,
    },
    /// Run the observation and measurement paths.
    Transform {
        #[arg(long = "in")]
        input: String,
        #[arg(long, default_value = "delimited")]
        format: InputFormat,
        /// Mapping file, or `default` for the built-in table.
        #[arg(long, default_value = "default")]
        mapping: String,
        #[arg(long, default_value = "identified")]
        mode: Mode,
        /// Observation output; omit to skip the JSON path.
        #[arg(long)]
        obs_out: Option<PathBuf>,
        /// Measurement output; omit to skip the curated path.
        #[arg(long)]
        meas_out: Option<PathBuf>,
        /// Machine-readable counters (JSON).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Side file listing skipped row names with counts.
        #[arg(long)]
        skipped_out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// In-memory sort budget per output, in MiB.
        #[arg(long, default_value_t = 64)]
        sort_buffer_mb: usize,
    },
    /// Per-concept counts and patient coverage of a measurement file.
    Summarize {
        #[arg(long)]
        meas: PathBuf,
        #[arg(long, default_value = "default")]
        mapping: String,
        /// Also write the per-concept table as TSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn validation(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }
    fn usage(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }
    fn io(message: impl Into<String>) -> Self {
        Failure { code: 3, message: message.into() }
    }
}

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::NotFound(_) | IngestError::Header { .. } => Failure::usage(e.to_string()),
            IngestError::Io { .. } => Failure::io(e.to_string()),
        }
    }
}

impl From<GeneratorError> for Failure {
    fn from(e: GeneratorError) -> Self {
        Failure::usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen { spec, seed, rows, patients, out, format, print_spec } => {
            cmd_gen(spec.as_deref(), seed, rows, patients, out.as_deref(), format, print_spec)
        }
        Command::Profile { input, format, top, contains, exclude, case_sensitive, contexts } => {
            cmd_profile(&input, format, top, contains.as_deref(), &exclude, case_sensitive, contexts)
        }
        Command::Validate { mapping } => cmd_validate(&mapping),
        Command::ExportMapping { out } => cmd_export_mapping(out.as_deref()),
        Command::Transform {
            input,
            format,
            mapping,
            mode,
            obs_out,
            meas_out,
            report,
            skipped_out,
            workers,
            sort_buffer_mb,
        } => cmd_transform(
            &input,
            format,
            &mapping,
            mode,
            PipelineOutputs { observations: obs_out, measurements: meas_out, report, skipped: skipped_out },
            workers,
            sort_buffer_mb,
        ),
        Command::Summarize { meas, mapping, out } => cmd_summarize(&meas, &mapping, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("flowsheet: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn open_output(out: Option<&str>) -> Result<Box<dyn Write>, Failure> {
    match out {
        None | Some("-") => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
        Some(p) => File::create(p)
            .map(|f| Box::new(BufWriter::with_capacity(256 * 1024, f)) as Box<dyn Write>)
            .map_err(|e| Failure::io(format!("cannot create {p}: {e}"))),
    }
}

fn cmd_gen(
    spec_path: Option<&Path>,
    seed: Option<u64>,
    rows: Option<i64>,
    patients: Option<i64>,
    out: Option<&str>,
    format: InputFormat,
    print_spec: bool,
) -> Result<(), Failure> {
    let mut spec = match spec_path {
        Some(p) => GeneratorSpec::from_toml_file(p)?,
        None => GeneratorSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(r) = rows {
        spec.total_rows = u64::try_from(r).map_err(|_| Failure::usage("--rows must be positive"))?;
    }
    if let Some(p) = patients {
        spec.patients = u64::try_from(p).map_err(|_| Failure::usage("--patients must be positive"))?;
    }
    spec.validate()?;
    if print_spec {
        let mut w = open_output(out)?;
        return w.write_all(spec.to_toml_string().as_bytes()).and_then(|_| w.flush()).map_err(|e| Failure::io(e.to_string()));
    }
    let w = open_output(out)?;
    match synth_gen::write_corpus(&spec, w, format) {
        Ok(_) => Ok(()),
        Err(GeneratorError::Io { err, .. }) => {
            if let Some(p) = out.filter(|p| *p != "-") {
                let _ = std::fs::remove_file(p);
            }
            Err(Failure::io(format!("write failed: {err}")))
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_profile(
    input: &str,
    format: InputFormat,
    top: Option<usize>,
    contains: Option<&str>,
    exclude: &[String],
    case_sensitive: bool,
    contexts: bool,
) -> Result<(), Failure> {
    if top == Some(0) {
        return Err(Failure::usage("--top must be at least 1"));
    }
    if contains == Some("") {
        return Err(Failure::usage("--contains must not be empty"));
    }
    let stream = ingest::open_stream(&Source::from_arg(input), format)?;
    let report = profiler::count_row_names(stream, contexts)?;
    let mut rows = match contains {
        Some(s) => profiler::substring_query(&report, s, exclude, !case_sensitive),
        None if exclude.is_empty() => profiler::top_n(&report, report.distinct()),
        None => profiler::substring_query(&report, "", exclude, !case_sensitive),
    };
    if let Some(n) = top {
        rows.truncate(n);
    }
    if report.rejected > 0 {
        eprintln!("flowsheet: {} malformed row(s) skipped", report.rejected);
    }
    let mut out = BufWriter::new(io::stdout().lock());
    profiler::write_report(&mut out, &rows, &report, contexts).map_err(|e| Failure::io(e.to_string()))
}

fn load_table(arg: &str) -> Result<MappingTable, ValidationError> {
    if arg == "default" {
        Ok(mapcfg::default_mapping())
    } else {
        mapcfg::load_mapping(arg)
    }
}

fn mapping_failure(e: ValidationError) -> Failure {
    match e {
        ValidationError::NotFound(_) => Failure::usage(e.to_string()),
        ValidationError::Io { .. } => Failure::io(e.to_string()),
        ValidationError::Invalid(v) => {
            let listing: Vec<String> = v.iter().map(|x| format!("  {x}")).collect();
            Failure::validation(format!("invalid mapping:\n{}", listing.join("\n")))
        }
    }
}

fn cmd_validate(mapping: &str) -> Result<(), Failure> {
    let table = load_table(mapping).map_err(mapping_failure)?;
    println!("ok: {} rule(s), {} row name(s)", table.rules().len(), table.row_name_count());
    Ok(())
}

fn cmd_export_mapping(out: Option<&str>) -> Result<(), Failure> {
    let w = open_output(out)?;
    mapcfg::default_mapping().write_tsv(w).map_err(|e| Failure::io(e.to_string()))
}

fn cmd_transform(
    input: &str,
    format: InputFormat,
    mapping: &str,
    mode: Mode,
    outputs: PipelineOutputs,
    workers: usize,
    sort_buffer_mb: usize,
) -> Result<(), Failure> {
    if workers == 0 {
        return Err(Failure::usage("--workers must be at least 1"));
    }
    if outputs.observations.is_none() && outputs.measurements.is_none() {
        return Err(Failure::usage("nothing to do: give --obs-out and/or --meas-out"));
    }
    let table = load_table(mapping).map_err(|e| match e {
        ValidationError::Invalid(_) => Failure::usage(mapping_failure(e).message),
        other => mapping_failure(other),
    })?;
    let mut config = TransformConfig::new(table);
    config.mode = mode;
    config.emit_observations = outputs.observations.is_some();
    config.emit_measurements = outputs.measurements.is_some();
    config.workers = workers;
    config.sort_buffer_bytes = sort_buffer_mb.max(1) << 20;

    let stream = ingest::open_stream(&Source::from_arg(input), format)?;
    let report = transform::run_pipeline(stream, &config, &outputs).map_err(|e| match e {
        TransformError::Config(m) => Failure::usage(m),
        TransformError::Ingest(e) => Failure::io(e.to_string()),
        TransformError::Io { .. } => Failure::io(e.to_string()),
    })?;

    let mut text = String::new();
    text.push_str(&format!("records in:            {}\n", report.records_in));
    text.push_str(&format!("rejected (parse):      {}\n", report.records_rejected_parse));
    text.push_str(&format!("observations emitted:  {}\n", report.observations_emitted));
    text.push_str(&format!("measurements emitted:  {}\n", report.measurements_emitted));
    text.push_str(&format!("skipped (unmapped):    {}\n", report.skipped_unmapped));
    text.push_str(&format!("skipped (nonnumeric):  {}\n", report.skipped_nonnumeric));
    text.push_str(&format!("flagged:               {}\n", report.flagged_count));
    text.push_str(&format!("distinct patients:     {}\n", report.distinct_patients));
    print!("{text}");
    Ok(())
}

fn cmd_summarize(meas: &Path, mapping: &str, out: Option<&Path>) -> Result<(), Failure> {
    let table = load_table(mapping).map_err(mapping_failure)?;
    let summary = report::summarize_path(meas, &table).map_err(|e| match e {
        ReportError::Open { ref err, .. } if err.kind() == io::ErrorKind::NotFound => Failure::usage(e.to_string()),
        ReportError::Open { .. } => Failure::io(e.to_string()),
        ReportError::Malformed { .. } | ReportError::UnknownConcept { .. } => Failure::validation(e.to_string()),
    })?;
    print!("{}", summary.render_text());
    if let Some(p) = out {
        let f = File::create(p).map_err(|e| Failure::io(format!("cannot create {}: {e}", p.display())))?;
        summary.write_tsv(BufWriter::new(f)).map_err(|e| Failure::io(e.to_string()))?;
    }
    Ok(())
}
