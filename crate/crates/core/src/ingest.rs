//! Streaming reader and writer for the flowsheet interchange format.
//!
//! Two encodings carry the same eight fields:
//!
//! * tab-delimited with a header line, fields quoted RFC-4180 style when they
//!   contain tabs, quotes or line breaks;
//! * JSON lines, one object per line keyed by the same field names.
//!
//! Gzip input is detected by its magic bytes and decompressed transparently.
//! A [`RecordStream`] holds one record at a time; a malformed row yields an
//! [`Ingested::Rejected`] item and the stream carries on.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use flate2::read::MultiGzDecoder;
use serde::Deserialize;
use thiserror::Error;

use crate::flow_model::{format_timestamp, parse_timestamp, FlowsheetRecord};
use crate::tsv;

/// Column names of the interchange format, in canonical order.
pub const HEADER: [&str; 8] = [
    "patient_id",
    "recorded_time",
    "provider_id",
    "template_name",
    "group_name",
    "row_name",
    "value",
    "unit_source",
];

const UNIT_SOURCE_COL: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputFormat {
    #[default]
    Delimited,
    JsonLines,
}

impl FromStr for InputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "delimited" | "tsv" => Ok(InputFormat::Delimited),
            "json-lines" | "jsonl" => Ok(InputFormat::JsonLines),
            other => Err(format!("unknown format {other:?} (expected delimited or json-lines)")),
        }
    }
}

/// Where records come from. `-` on the command line means standard input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Path(PathBuf),
    Stdin,
}

impl Source {
    pub fn from_arg(arg: &str) -> Self {
        if arg == "-" {
            Source::Stdin
        } else {
            Source::Path(PathBuf::from(arg))
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Path(p) => write!(f, "{}", p.display()),
            Source::Stdin => f.write_str("<stdin>"),
        }
    }
}

/// Fatal stream failures. Per-row problems are [`ParseError`]s instead.
#[derive(Debug, Error)]
pub enum IngestError {
    #[error("input not found: {0}")]
    NotFound(PathBuf),
    #[error("unreadable header in {source_name}: {reason}")]
    Header { source_name: String, reason: String },
    #[error("I/O error reading {source_name}: {err}")]
    Io { source_name: String, err: io::Error },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    BadTimestamp(String),
    EmptyPatientId,
    EmptyRowName,
    FieldCount { expected: usize, found: usize },
    InvalidUtf8,
    Malformed(String),
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::BadTimestamp(raw) => write!(f, "bad timestamp {raw:?}"),
            ParseErrorKind::EmptyPatientId => f.write_str("empty patient_id"),
            ParseErrorKind::EmptyRowName => f.write_str("empty row_name"),
            ParseErrorKind::FieldCount { expected, found } => {
                write!(f, "expected {expected} fields, found {found}")
            }
            ParseErrorKind::InvalidUtf8 => f.write_str("invalid UTF-8"),
            ParseErrorKind::Malformed(msg) => write!(f, "malformed record: {msg}"),
        }
    }
}

/// A rejected row. `line` is the 1-based physical line where the row starts.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {kind}")]
pub struct ParseError {
    pub line: u64,
    pub kind: ParseErrorKind,
}

/// One item of a record stream.
#[derive(Debug, Clone, PartialEq)]
pub enum Ingested {
    Record(FlowsheetRecord),
    Rejected(ParseError),
}

/// Builds a record from fields in [`HEADER`] order. `unit_source` may be
/// missing (seven fields).
///
/// Every field is trimmed of surrounding whitespace; interior bytes are kept
/// as-is and case is never touched.
pub fn parse_record(fields: &[&str], line: u64) -> Result<FlowsheetRecord, ParseError> {
    let err = |kind| ParseError { line, kind };
    if fields.len() != HEADER.len() && fields.len() != HEADER.len() - 1 {
        return Err(err(ParseErrorKind::FieldCount { expected: HEADER.len(), found: fields.len() }));
    }
    let patient_id = fields[0].trim();
    if patient_id.is_empty() {
        return Err(err(ParseErrorKind::EmptyPatientId));
    }
    let raw_time = fields[1].trim();
    let recorded_time =
        parse_timestamp(raw_time).ok_or_else(|| err(ParseErrorKind::BadTimestamp(raw_time.to_owned())))?;
    let row_name = fields[5].trim();
    if row_name.is_empty() {
        return Err(err(ParseErrorKind::EmptyRowName));
    }
    let unit_source = fields
        .get(UNIT_SOURCE_COL)
        .map(|u| u.trim())
        .filter(|u| !u.is_empty())
        .map(str::to_owned);
    Ok(FlowsheetRecord {
        patient_id: patient_id.to_owned(),
        recorded_time,
        provider_id: fields[2].trim().to_owned(),
        template_name: fields[3].trim().to_owned(),
        group_name: fields[4].trim().to_owned(),
        row_name: row_name.to_owned(),
        value: fields[6].trim().to_owned(),
        unit_source,
    })
}

/// Opens `source` for streaming.
pub fn open_stream(source: &Source, format: InputFormat) -> Result<RecordStream, IngestError> {
    let name = source.to_string();
    let raw: Box<dyn Read + Send> = match source {
        Source::Path(p) => Box::new(open_file(p)?),
        Source::Stdin => Box::new(io::stdin()),
    };
    let reader = maybe_gunzip(raw).map_err(|err| IngestError::Io { source_name: name.clone(), err })?;
    RecordStream::from_reader(reader, format, name)
}

/// Convenience for the common file case.
pub fn open_path(path: impl AsRef<Path>, format: InputFormat) -> Result<RecordStream, IngestError> {
    open_stream(&Source::Path(path.as_ref().to_path_buf()), format)
}

fn open_file(path: &Path) -> Result<File, IngestError> {
    File::open(path).map_err(|err| match err.kind() {
        io::ErrorKind::NotFound => IngestError::NotFound(path.to_path_buf()),
        _ => IngestError::Io { source_name: path.display().to_string(), err },
    })
}

fn maybe_gunzip(raw: Box<dyn Read + Send>) -> io::Result<Box<dyn Read + Send>> {
    let mut buffered = BufReader::with_capacity(64 * 1024, raw);
    let head = buffered.fill_buf()?;
    if head.len() >= 2 && head[0] == 0x1f && head[1] == 0x8b {
        Ok(Box::new(MultiGzDecoder::new(buffered)))
    } else {
        Ok(Box::new(buffered))
    }
}

/// Single-consumer iterator over [`Ingested`] items.
pub struct RecordStream {
    inner: Inner,
    source_name: String,
    done: bool,
}

enum Inner {
    Delimited {
        reader: csv::Reader<Box<dyn Read + Send>>,
        // positions of HEADER columns in the file; unit_source may be absent
        columns: [Option<usize>; 8],
        width: usize,
        buf: csv::ByteRecord,
    },
    JsonLines {
        reader: BufReader<Box<dyn Read + Send>>,
        line: u64,
        buf: Vec<u8>,
    },
}

impl RecordStream {
    pub fn from_reader(
        reader: Box<dyn Read + Send>,
        format: InputFormat,
        source_name: impl Into<String>,
    ) -> Result<Self, IngestError> {
        let source_name = source_name.into();
        let inner = match format {
            InputFormat::Delimited => {
                let mut reader = tsv::reader_builder().has_headers(true).from_reader(reader);
                let header_err = |reason: String| IngestError::Header { source_name: source_name.clone(), reason };
                let headers = reader.byte_headers().map_err(|e| header_err(e.to_string()))?.clone();
                if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
                    return Err(header_err("missing header line".into()));
                }
                let names: Vec<&str> = headers
                    .iter()
                    .map(|h| std::str::from_utf8(h).map(str::trim))
                    .collect::<Result<_, _>>()
                    .map_err(|_| header_err("header is not UTF-8".into()))?;
                let mut columns = [None; 8];
                for (slot, want) in columns.iter_mut().zip(HEADER) {
                    *slot = names.iter().position(|n| *n == want);
                }
                let missing: Vec<&str> = HEADER[..UNIT_SOURCE_COL]
                    .iter()
                    .zip(&columns)
                    .filter(|(_, c)| c.is_none())
                    .map(|(h, _)| *h)
                    .collect();
                if !missing.is_empty() {
                    return Err(header_err(format!("missing column(s): {}", missing.join(", "))));
                }
                Inner::Delimited { reader, columns, width: names.len(), buf: csv::ByteRecord::new() }
            }
            InputFormat::JsonLines => Inner::JsonLines {
                reader: BufReader::with_capacity(64 * 1024, reader),
                line: 0,
                buf: Vec::new(),
            },
        };
        Ok(RecordStream { inner, source_name, done: false })
    }

    pub fn source_name(&self) -> &str {
        &self.source_name
    }

    fn io_err(&self, err: io::Error) -> IngestError {
        IngestError::Io { source_name: self.source_name.clone(), err }
    }

    fn next_item(&mut self) -> Result<Option<Ingested>, IngestError> {
        match &mut self.inner {
            Inner::Delimited { reader, columns, width, buf } => {
                let read = reader.read_byte_record(buf);
                let line = buf.position().map(|p| p.line()).unwrap_or(0);
                match read {
                    Ok(false) => Ok(None),
                    Ok(true) => Ok(Some(delimited_item(buf, columns, *width, line))),
                    Err(e) => match e.into_kind() {
                        csv::ErrorKind::Io(err) => Err(self.io_err(err)),
                        other => Ok(Some(Ingested::Rejected(ParseError {
                            line,
                            kind: ParseErrorKind::Malformed(format!("{other:?}")),
                        }))),
                    },
                }
            }
            Inner::JsonLines { reader, line, buf } => loop {
                buf.clear();
                let n = match reader.read_until(b'\n', buf) {
                    Ok(n) => n,
                    Err(err) => return Err(IngestError::Io { source_name: self.source_name.clone(), err }),
                };
                if n == 0 {
                    return Ok(None);
                }
                *line += 1;
                if buf.iter().all(u8::is_ascii_whitespace) {
                    continue;
                }
                return Ok(Some(json_item(buf, *line)));
            },
        }
    }
}

fn delimited_item(buf: &csv::ByteRecord, columns: &[Option<usize>; 8], width: usize, line: u64) -> Ingested {
    if buf.len() != width {
        return Ingested::Rejected(ParseError {
            line,
            kind: ParseErrorKind::FieldCount { expected: width, found: buf.len() },
        });
    }
    let mut fields = [""; 8];
    for (slot, col) in fields.iter_mut().zip(columns) {
        if let Some(i) = col {
            match std::str::from_utf8(&buf[*i]) {
                Ok(s) => *slot = s,
                Err(_) => return Ingested::Rejected(ParseError { line, kind: ParseErrorKind::InvalidUtf8 }),
            }
        }
    }
    match parse_record(&fields, line) {
        Ok(r) => Ingested::Record(r),
        Err(e) => Ingested::Rejected(e),
    }
}

#[derive(Deserialize)]
struct JsonRecord {
    patient_id: String,
    recorded_time: String,
    #[serde(default)]
    provider_id: String,
    #[serde(default)]
    template_name: String,
    #[serde(default)]
    group_name: String,
    row_name: String,
    #[serde(default)]
    value: String,
    #[serde(default)]
    unit_source: Option<String>,
}

fn json_item(bytes: &[u8], line: u64) -> Ingested {
    let Ok(text) = std::str::from_utf8(bytes) else {
        return Ingested::Rejected(ParseError { line, kind: ParseErrorKind::InvalidUtf8 });
    };
    let raw: JsonRecord = match serde_json::from_str(text) {
        Ok(r) => r,
        Err(e) => return Ingested::Rejected(ParseError { line, kind: ParseErrorKind::Malformed(e.to_string()) }),
    };
    let fields = [
        raw.patient_id.as_str(),
        raw.recorded_time.as_str(),
        raw.provider_id.as_str(),
        raw.template_name.as_str(),
        raw.group_name.as_str(),
        raw.row_name.as_str(),
        raw.value.as_str(),
        raw.unit_source.as_deref().unwrap_or(""),
    ];
    match parse_record(&fields, line) {
        Ok(r) => Ingested::Record(r),
        Err(e) => Ingested::Rejected(e),
    }
}

impl Iterator for RecordStream {
    type Item = Result<Ingested, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_item() {
            Ok(Some(item)) => Some(Ok(item)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

/// Writes records in either interchange encoding.
pub struct RecordWriter<W: Write> {
    out: W,
    format: InputFormat,
}

impl<W: Write> RecordWriter<W> {
    pub fn new(mut out: W, format: InputFormat) -> io::Result<Self> {
        if format == InputFormat::Delimited {
            out.write_all(tsv::encode_line(HEADER).as_bytes())?;
        }
        Ok(RecordWriter { out, format })
    }

    pub fn write(&mut self, r: &FlowsheetRecord) -> io::Result<()> {
        match self.format {
            InputFormat::Delimited => {
                let ts = format_timestamp(&r.recorded_time);
                let line = tsv::encode_line([
                    r.patient_id.as_str(),
                    ts.as_str(),
                    r.provider_id.as_str(),
                    r.template_name.as_str(),
                    r.group_name.as_str(),
                    r.row_name.as_str(),
                    r.value.as_str(),
                    r.unit_source.as_deref().unwrap_or(""),
                ]);
                self.out.write_all(line.as_bytes())
            }
            InputFormat::JsonLines => {
                serde_json::to_writer(&mut self.out, r)?;
                self.out.write_all(b"\n")
            }
        }
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}
