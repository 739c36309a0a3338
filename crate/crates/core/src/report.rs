//! Summaries over a measurement output file: per-concept counts and
//! distinct-patient coverage.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::mapcfg::MappingTable;
use crate::transform::MEASUREMENT_HEADER;
use crate::tsv;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot open {path}: {err}")]
    Open { path: String, err: io::Error },
    #[error("malformed measurement file at line {line}: {reason}")]
    Malformed { line: u64, reason: String },
    #[error("concept {concept_id} at line {line} is not in the mapping table")]
    UnknownConcept { concept_id: i64, line: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptCount {
    pub concept_id: i64,
    pub concept_code: String,
    pub concept_name: String,
    pub count: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MeasurementSummary {
    /// Ordered by concept name.
    pub concepts: Vec<ConceptCount>,
    pub distinct_patients: u64,
    pub rows: u64,
}

fn malformed(line: u64, reason: impl Into<String>) -> ReportError {
    ReportError::Malformed { line, reason: reason.into() }
}

/// One pass over a measurement file. Patient counting is exact.
pub fn summarize<R: Read>(input: R, mapping: &MappingTable) -> Result<MeasurementSummary, ReportError> {
    let mut reader = tsv::reader_builder().has_headers(false).from_reader(input);
    let mut records = reader.records();
    match records.next() {
        None => return Ok(MeasurementSummary::default()),
        Some(Err(e)) => return Err(malformed(1, e.to_string())),
        Some(Ok(h)) if h.iter().eq(MEASUREMENT_HEADER) => {}
        Some(Ok(h)) => return Err(malformed(1, format!("unexpected header {:?}", h.iter().collect::<Vec<_>>()))),
    }

    let mut per_concept: BTreeMap<i64, u64> = BTreeMap::new();
    let mut patients: HashSet<String> = HashSet::new();
    let mut rows = 0;
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            malformed(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != MEASUREMENT_HEADER.len() {
            return Err(malformed(line, format!("expected {} fields, found {}", MEASUREMENT_HEADER.len(), rec.len())));
        }
        let concept_id: i64 = rec[1].parse().map_err(|_| malformed(line, format!("bad concept id {:?}", &rec[1])))?;
        if mapping.rule_for_concept(concept_id).is_none() {
            return Err(ReportError::UnknownConcept { concept_id, line });
        }
        *per_concept.entry(concept_id).or_default() += 1;
        if !patients.contains(&rec[0]) {
            patients.insert(rec[0].to_owned());
        }
        rows += 1;
    }

    let mut concepts: Vec<ConceptCount> = per_concept
        .into_iter()
        .map(|(concept_id, count)| {
            let rule = mapping.rule_for_concept(concept_id).expect("checked above");
            ConceptCount {
                concept_id,
                concept_code: rule.concept_code.clone(),
                concept_name: rule.concept_name.clone(),
                count,
            }
        })
        .collect();
    concepts.sort_by(|a, b| a.concept_name.cmp(&b.concept_name).then(a.concept_id.cmp(&b.concept_id)));
    Ok(MeasurementSummary { concepts, distinct_patients: patients.len() as u64, rows })
}

pub fn per_concept_summary<R: Read>(input: R, mapping: &MappingTable) -> Result<Vec<ConceptCount>, ReportError> {
    summarize(input, mapping).map(|s| s.concepts)
}

/// Exact distinct `person_id` count. Concept ids are not checked.
pub fn patient_coverage<R: Read>(input: R) -> Result<u64, ReportError> {
    let mut reader = tsv::reader_builder().has_headers(true).from_reader(input);
    let mut patients: HashSet<String> = HashSet::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| malformed(e.position().map(|p| p.line()).unwrap_or(0), e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        match rec.get(0) {
            Some(p) if rec.len() == MEASUREMENT_HEADER.len() => {
                patients.insert(p.to_owned());
            }
            _ => return Err(malformed(line, "wrong field count")),
        }
    }
    Ok(patients.len() as u64)
}

pub fn summarize_path(path: impl AsRef<Path>, mapping: &MappingTable) -> Result<MeasurementSummary, ReportError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|err| ReportError::Open { path: path.display().to_string(), err })?;
    summarize(io::BufReader::new(file), mapping)
}

impl MeasurementSummary {
    /// Tab-delimited `concept_code  concept_name  count`.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> io::Result<()> {
        out.write_all(tsv::encode_line(["concept_code", "concept_name", "count"]).as_bytes())?;
        for c in &self.concepts {
            out.write_all(tsv::encode_line([c.concept_code.as_str(), &c.concept_name, &c.count.to_string()]).as_bytes())?;
        }
        out.flush()
    }

    /// Aligned columns for terminals, followed by totals.
    pub fn render_text(&self) -> String {
        let count_strs: Vec<String> = self.concepts.iter().map(|c| group_digits(c.count)).collect();
        let code_w = self.concepts.iter().map(|c| c.concept_code.len()).max().unwrap_or(0).max("LOINC code".len());
        let name_w = self.concepts.iter().map(|c| c.concept_name.chars().count()).max().unwrap_or(0).max("Concept Name".len());
        let count_w = count_strs.iter().map(String::len).max().unwrap_or(0).max("Count".len());
        let mut s = format!("{:<code_w$}  {:<name_w$}  {:>count_w$}\n", "LOINC code", "Concept Name", "Count");
        for (c, n) in self.concepts.iter().zip(&count_strs) {
            s.push_str(&format!("{:<code_w$}  {:<name_w$}  {:>count_w$}\n", c.concept_code, c.concept_name, n));
        }
        s.push_str(&format!("\nmeasurement rows: {}\n", group_digits(self.rows)));
        s.push_str(&format!("distinct patients: {}\n", group_digits(self.distinct_patients)));
        s
    }
}

/// 1234567 → "1,234,567"
pub fn group_digits(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}
