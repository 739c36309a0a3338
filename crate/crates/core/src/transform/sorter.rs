//! Bounded-memory external sort of encoded output lines.
//!
//! Entries are ordered by (patient, time, row name, encoded line). The line is
//! the final key, so the order is total and the merged output does not depend
//! on the order entries arrived in.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) struct SortEntry {
    pub patient: String,
    pub time: i64,
    pub row: String,
    pub line: String,
}

impl SortEntry {
    fn weight(&self) -> usize {
        self.patient.len() + self.row.len() + self.line.len() + std::mem::size_of::<Self>()
    }
}

pub(crate) struct ExternalSorter {
    buf: Vec<SortEntry>,
    buf_bytes: usize,
    limit_bytes: usize,
    runs: Vec<File>,
    spill_dir: PathBuf,
}

impl ExternalSorter {
    pub fn new(spill_dir: &Path, limit_bytes: usize) -> Self {
        ExternalSorter {
            buf: Vec::new(),
            buf_bytes: 0,
            limit_bytes: limit_bytes.max(1),
            runs: Vec::new(),
            spill_dir: spill_dir.to_path_buf(),
        }
    }

    pub fn push(&mut self, entry: SortEntry) -> io::Result<()> {
        self.buf_bytes += entry.weight();
        self.buf.push(entry);
        if self.buf_bytes >= self.limit_bytes {
            self.spill()?;
        }
        Ok(())
    }

    fn spill(&mut self) -> io::Result<()> {
        if self.buf.is_empty() {
            return Ok(());
        }
        self.buf.sort_unstable();
        let file = tempfile::tempfile_in(&self.spill_dir)?;
        let mut w = BufWriter::with_capacity(256 * 1024, file);
        for e in self.buf.drain(..) {
            write_entry(&mut w, &e)?;
        }
        let mut file = w.into_inner().map_err(|e| e.into_error())?;
        file.seek(SeekFrom::Start(0))?;
        self.runs.push(file);
        self.buf_bytes = 0;
        Ok(())
    }

    #[cfg(test)]
    pub fn run_count(&self) -> usize {
        self.runs.len()
    }

    /// Writes every entry's line to `out` in sorted order. Returns the count.
    pub fn finish<W: Write>(mut self, out: &mut W) -> io::Result<u64> {
        self.buf.sort_unstable();
        if self.runs.is_empty() {
            let n = self.buf.len() as u64;
            for e in &self.buf {
                out.write_all(e.line.as_bytes())?;
            }
            return Ok(n);
        }
        self.spill()?;
        let mut readers: Vec<BufReader<File>> =
            self.runs.drain(..).map(|f| BufReader::with_capacity(64 * 1024, f)).collect();
        let mut heap = BinaryHeap::with_capacity(readers.len());
        for (i, r) in readers.iter_mut().enumerate() {
            if let Some(e) = read_entry(r)? {
                heap.push(Reverse((e, i)));
            }
        }
        let mut n = 0;
        while let Some(Reverse((e, i))) = heap.pop() {
            out.write_all(e.line.as_bytes())?;
            n += 1;
            if let Some(next) = read_entry(&mut readers[i])? {
                heap.push(Reverse((next, i)));
            }
        }
        Ok(n)
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn write_entry<W: Write>(w: &mut W, e: &SortEntry) -> io::Result<()> {
    write_str(w, &e.patient)?;
    w.write_all(&e.time.to_le_bytes())?;
    write_str(w, &e.row)?;
    write_str(w, &e.line)
}

fn read_str<R: Read>(r: &mut R) -> io::Result<String> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut bytes = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut bytes)?;
    String::from_utf8(bytes).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

fn read_entry<R: Read>(r: &mut R) -> io::Result<Option<SortEntry>> {
    let patient = match read_str(r) {
        Ok(s) => s,
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    };
    let mut t = [0u8; 8];
    r.read_exact(&mut t)?;
    let row = read_str(r)?;
    let line = read_str(r)?;
    Ok(Some(SortEntry { patient, time: i64::from_le_bytes(t), row, line }))
}
