use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crossbeam_channel::bounded;
use tempfile::{NamedTempFile, TempDir};
use thiserror::Error;

use super::sorter::{ExternalSorter, SortEntry};
use super::{censor, to_json_observation, to_measurement, MeasurementOutcome, Mode};
use crate::flow_model::{format_timestamp, FlowsheetRecord, MeasurementRow, ObservationRow, TransformReport};
use crate::ingest::{IngestError, Ingested};
use crate::mapcfg::MappingTable;
use crate::tsv;

pub const OBSERVATION_HEADER: [&str; 6] = [
    "person_id",
    "observation_concept_id",
    "observation_datetime",
    "provider_id",
    "observation_source_value",
    "value_as_string",
];

pub const MEASUREMENT_HEADER: [&str; 10] = [
    "person_id",
    "measurement_concept_id",
    "measurement_datetime",
    "provider_id",
    "value_as_number",
    "unit_inferred",
    "unit_source_value",
    "measurement_source_value",
    "value_source_value",
    "flags",
];

const BATCH: usize = 2048;

#[derive(Debug, Clone)]
pub struct TransformConfig {
    pub mode: Mode,
    pub mapping: Arc<MappingTable>,
    pub emit_observations: bool,
    pub emit_measurements: bool,
    /// Map/filter fan-out. Output bytes do not depend on it.
    pub workers: usize,
    /// In-memory budget per output before sorted runs spill to disk.
    pub sort_buffer_bytes: usize,
}

impl TransformConfig {
    pub fn new(mapping: MappingTable) -> Self {
        TransformConfig {
            mode: Mode::Identified,
            mapping: Arc::new(mapping),
            emit_observations: true,
            emit_measurements: true,
            workers: 1,
            sort_buffer_bytes: 64 << 20,
        }
    }
}

/// Destination files. An output whose path is `None` is not written.
#[derive(Debug, Clone, Default)]
pub struct PipelineOutputs {
    pub observations: Option<PathBuf>,
    pub measurements: Option<PathBuf>,
    /// Machine-readable counters (JSON).
    pub report: Option<PathBuf>,
    /// Skipped row names with counts, for curation feedback.
    pub skipped: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("invalid transform config: {0}")]
    Config(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("I/O error on {path}: {err}")]
    Io { path: PathBuf, err: io::Error },
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> TransformError + '_ {
    move |err| TransformError::Io { path: path.to_path_buf(), err }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum SkipReason {
    Unmapped,
    Nonnumeric,
}

impl SkipReason {
    fn as_str(self) -> &'static str {
        match self {
            SkipReason::Unmapped => "unmapped",
            SkipReason::Nonnumeric => "nonnumeric",
        }
    }
}

/// Per-worker accumulator; merged by addition at the end.
#[derive(Default)]
struct Partial {
    report: TransformReport,
    patients: HashSet<String>,
    skipped: HashMap<(SkipReason, String), u64>,
}

type Encoded = (Option<SortEntry>, Option<SortEntry>);

impl Partial {
    fn process(&mut self, r: &FlowsheetRecord, cfg: &TransformConfig, track_skips: bool) -> Encoded {
        let obs = if cfg.emit_observations {
            censor(to_json_observation(r), cfg.mode).map(|row| {
                self.report.observations_emitted += 1;
                observation_entry(&row)
            })
        } else {
            None
        };
        let meas = if cfg.emit_measurements {
            let skip = |p: &mut Partial, reason: SkipReason| {
                if track_skips {
                    *p.skipped.entry((reason, r.row_name.clone())).or_default() += 1;
                }
                None
            };
            match to_measurement(r, &cfg.mapping) {
                MeasurementOutcome::Emitted(m) => {
                    self.report.measurements_emitted += 1;
                    *self.report.per_concept_counts.entry(m.measurement_concept_id).or_default() += 1;
                    if !m.flags.is_empty() {
                        self.report.flagged_count += 1;
                    }
                    if !self.patients.contains(&m.person_id) {
                        self.patients.insert(m.person_id.clone());
                    }
                    Some(measurement_entry(&m))
                }
                MeasurementOutcome::SkippedUnmapped => {
                    self.report.skipped_unmapped += 1;
                    skip(self, SkipReason::Unmapped)
                }
                MeasurementOutcome::SkippedNonnumeric => {
                    self.report.skipped_nonnumeric += 1;
                    skip(self, SkipReason::Nonnumeric)
                }
            }
        } else {
            None
        };
        (obs, meas)
    }

    fn absorb(&mut self, other: Partial) {
        self.report.absorb(&other.report);
        self.patients.extend(other.patients);
        for (k, n) in other.skipped {
            *self.skipped.entry(k).or_default() += n;
        }
    }
}

fn observation_entry(row: &ObservationRow) -> SortEntry {
    let ts = format_timestamp(&row.observation_datetime);
    let concept = row.observation_concept_id.to_string();
    let line = tsv::encode_line([
        row.person_id.as_str(),
        &concept,
        &ts,
        &row.provider_id,
        &row.observation_source_value,
        row.value_as_string.as_deref().unwrap_or(""),
    ]);
    SortEntry {
        patient: row.person_id.clone(),
        time: row.observation_datetime.timestamp(),
        row: row.observation_source_value.clone(),
        line,
    }
}

fn measurement_entry(m: &MeasurementRow) -> SortEntry {
    let ts = format_timestamp(&m.measurement_datetime);
    let concept = m.measurement_concept_id.to_string();
    let flags: Vec<&str> = m.flags.iter().map(|f| f.as_str()).collect();
    let flags = flags.join("|");
    let line = tsv::encode_line([
        m.person_id.as_str(),
        &concept,
        &ts,
        &m.provider_id,
        m.value_as_number.as_str(),
        m.unit_inferred.map(|u| u.as_str()).unwrap_or(""),
        m.unit_source_value.as_deref().unwrap_or(""),
        &m.measurement_source_value,
        &m.value_source_value,
        &flags,
    ]);
    SortEntry {
        patient: m.person_id.clone(),
        time: m.measurement_datetime.timestamp(),
        row: m.measurement_source_value.clone(),
        line,
    }
}

struct Sorters {
    obs: Option<ExternalSorter>,
    meas: Option<ExternalSorter>,
}

impl Sorters {
    fn push(&mut self, (o, m): Encoded) -> io::Result<()> {
        if let (Some(s), Some(e)) = (self.obs.as_mut(), o) {
            s.push(e)?;
        }
        if let (Some(s), Some(e)) = (self.meas.as_mut(), m) {
            s.push(e)?;
        }
        Ok(())
    }
}

/// Runs both transformation paths over `stream` in one pass and writes the
/// requested outputs.
///
/// Outputs are sorted by (patient, recorded time, row name) before being
/// written, so identical input and config give byte-identical files for any
/// worker count. Files only appear at their final paths once every output has
/// been written; on failure nothing is left behind.
pub fn run_pipeline<I>(
    stream: I,
    config: &TransformConfig,
    outputs: &PipelineOutputs,
) -> Result<TransformReport, TransformError>
where
    I: IntoIterator<Item = Result<Ingested, IngestError>>,
{
    if !config.emit_observations && !config.emit_measurements {
        return Err(TransformError::Config("at least one of observations/measurements must be emitted".into()));
    }
    if config.emit_observations && outputs.observations.is_none() {
        return Err(TransformError::Config("observation output path missing".into()));
    }
    if config.emit_measurements && outputs.measurements.is_none() {
        return Err(TransformError::Config("measurement output path missing".into()));
    }

    let anchor = outputs.observations.as_ref().or(outputs.measurements.as_ref()).expect("checked above");
    let out_dir = parent_dir(anchor);
    let spill = TempDir::new_in(&out_dir)
        .or_else(|_| TempDir::new())
        .map_err(io_at(&out_dir))?;

    let sorters = Sorters {
        obs: config.emit_observations.then(|| ExternalSorter::new(spill.path(), config.sort_buffer_bytes)),
        meas: config.emit_measurements.then(|| ExternalSorter::new(spill.path(), config.sort_buffer_bytes)),
    };
    let track_skips = outputs.skipped.is_some();

    let (partial, sorters) = if config.workers <= 1 {
        run_inline(stream, config, sorters, track_skips, spill.path())?
    } else {
        run_parallel(stream, config, sorters, track_skips, spill.path())?
    };

    let mut report = partial.report;
    report.distinct_patients = partial.patients.len() as u64;

    let mut staged = Vec::new();
    if let (Some(path), Some(sorter)) = (&outputs.observations, sorters.obs) {
        staged.push((stage(path, &OBSERVATION_HEADER, |w| sorter.finish(w).map(drop))?, path));
    }
    if let (Some(path), Some(sorter)) = (&outputs.measurements, sorters.meas) {
        staged.push((stage(path, &MEASUREMENT_HEADER, |w| sorter.finish(w).map(drop))?, path));
    }
    if let Some(path) = &outputs.skipped {
        staged.push((stage(path, &["reason", "row_name", "count"], |w| write_skipped(w, &partial.skipped))?, path));
    }
    if let Some(path) = &outputs.report {
        let tmp = stage(path, &[], |w| {
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            w.write_all(json.as_bytes())?;
            w.write_all(b"\n")
        })?;
        staged.push((tmp, path));
    }
    for (tmp, path) in staged {
        tmp.persist(path).map_err(|e| TransformError::Io { path: path.clone(), err: e.error })?;
    }
    Ok(report)
}

fn parent_dir(p: &Path) -> PathBuf {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Writes into a temp file next to `path`; the caller persists it.
fn stage<F>(path: &Path, header: &[&str], body: F) -> Result<NamedTempFile, TransformError>
where
    F: FnOnce(&mut BufWriter<&File>) -> io::Result<()>,
{
    let tmp = NamedTempFile::new_in(parent_dir(path)).map_err(io_at(path))?;
    {
        let mut w = BufWriter::with_capacity(256 * 1024, tmp.as_file());
        if !header.is_empty() {
            w.write_all(tsv::encode_line(header.iter().copied()).as_bytes()).map_err(io_at(path))?;
        }
        body(&mut w).map_err(io_at(path))?;
        w.flush().map_err(io_at(path))?;
    }
    Ok(tmp)
}

fn write_skipped<W: Write>(w: &mut W, skipped: &HashMap<(SkipReason, String), u64>) -> io::Result<()> {
    let mut rows: Vec<_> = skipped.iter().collect();
    rows.sort_by(|((ra, na), ca), ((rb, nb), cb)| ra.cmp(rb).then(cb.cmp(ca)).then(na.cmp(nb)));
    for ((reason, name), count) in rows {
        let count = count.to_string();
        w.write_all(tsv::encode_line([reason.as_str(), name.as_str(), &count]).as_bytes())?;
    }
    Ok(())
}

fn run_inline<I>(
    stream: I,
    config: &TransformConfig,
    mut sorters: Sorters,
    track_skips: bool,
    spill: &Path,
) -> Result<(Partial, Sorters), TransformError>
where
    I: IntoIterator<Item = Result<Ingested, IngestError>>,
{
    let mut acc = Partial::default();
    for item in stream {
        acc.report.records_in += 1;
        match item? {
            Ingested::Rejected(_) => acc.report.records_rejected_parse += 1,
            Ingested::Record(r) => {
                let encoded = acc.process(&r, config, track_skips);
                sorters.push(encoded).map_err(io_at(spill))?;
            }
        }
    }
    Ok((acc, sorters))
}

fn run_parallel<I>(
    stream: I,
    config: &TransformConfig,
    mut sorters: Sorters,
    track_skips: bool,
    spill: &Path,
) -> Result<(Partial, Sorters), TransformError>
where
    I: IntoIterator<Item = Result<Ingested, IngestError>>,
{
    let workers = config.workers;
    std::thread::scope(|s| {
        let (job_tx, job_rx) = bounded::<Vec<FlowsheetRecord>>(workers * 2);
        let (res_tx, res_rx) = bounded::<Vec<Encoded>>(workers * 2);

        let handles: Vec<_> = (0..workers)
            .map(|_| {
                let job_rx = job_rx.clone();
                let res_tx = res_tx.clone();
                s.spawn(move || {
                    let mut acc = Partial::default();
                    for batch in job_rx {
                        let out: Vec<Encoded> = batch.iter().map(|r| acc.process(r, config, track_skips)).collect();
                        if res_tx.send(out).is_err() {
                            break;
                        }
                    }
                    acc
                })
            })
            .collect();
        drop(job_rx);
        drop(res_tx);

        let collector = s.spawn(move || -> io::Result<Sorters> {
            for batch in res_rx {
                for encoded in batch {
                    sorters.push(encoded)?;
                }
            }
            Ok(sorters)
        });

        let mut reader_acc = Partial::default();
        let mut batch = Vec::with_capacity(BATCH);
        let mut failure = None;
        for item in stream {
            reader_acc.report.records_in += 1;
            match item {
                Err(e) => {
                    failure = Some(TransformError::from(e));
                    break;
                }
                Ok(Ingested::Rejected(_)) => reader_acc.report.records_rejected_parse += 1,
                Ok(Ingested::Record(r)) => {
                    batch.push(r);
                    if batch.len() == BATCH {
                        let full = std::mem::replace(&mut batch, Vec::with_capacity(BATCH));
                        if job_tx.send(full).is_err() {
                            // collector died; its error surfaces below
                            break;
                        }
                    }
                }
            }
        }
        if !batch.is_empty() && failure.is_none() {
            let _ = job_tx.send(batch);
        }
        drop(job_tx);

        for h in handles {
            reader_acc.absorb(h.join().expect("transform worker panicked"));
        }
        let sorters = collector.join().expect("output collector panicked").map_err(io_at(spill))?;
        match failure {
            Some(e) => Err(e),
            None => Ok((reader_acc, sorters)),
        }
    })
}
