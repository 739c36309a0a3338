//! Curated row-name → concept mapping table.
//!
//! Lookup is exact and case-sensitive: `"Temp"` maps to body temperature,
//! `"temp"` and `"TEMP"` do not. The built-in table is the 28-rule LOINC
//! crosswalk; curators can extend it through the tab-delimited file format
//! handled by [`load_mapping`] and [`MappingTable::write_tsv`].

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::flow_model::{AdvisoryRange, MappingRule, UnitRule};
use crate::tsv;

/// Columns of the mapping file, in order.
pub const MAPPING_HEADER: [&str; 8] = [
    "concept_id",
    "concept_code",
    "vocabulary_id",
    "concept_name",
    "row_names",
    "range_min",
    "range_max",
    "unit_rule",
];

/// Separator between row names inside the `row_names` column.
pub const ROW_NAME_SEPARATOR: char = '|';

/// Immutable after construction; lookups are a function of the row name.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingTable {
    rules: Vec<MappingRule>,
    index: HashMap<String, usize>,
}

/// Which rule a violation belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleId {
    /// 1-based position among rules (file line for loaded tables).
    pub position: usize,
    pub concept_id: String,
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rule at {} (concept_id {})", self.position, self.concept_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DuplicateRowName { row_name: String, first: RuleId, second: RuleId },
    DuplicateWithinRule { rule: RuleId, row_name: String },
    NonPositiveConceptId { rule: RuleId },
    EmptyRowNames { rule: RuleId },
    MalformedRange { rule: RuleId, reason: String },
    UnknownUnitRule { rule: RuleId, tag: String },
    FieldCount { rule: RuleId, found: usize },
    BadHeader { found: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateRowName { row_name, first, second } => {
                write!(f, "duplicate row_name {row_name:?}: {first} and {second}")
            }
            Violation::DuplicateWithinRule { rule, row_name } => {
                write!(f, "{rule}: row_name {row_name:?} listed twice")
            }
            Violation::NonPositiveConceptId { rule } => write!(f, "{rule}: concept_id must be a positive integer"),
            Violation::EmptyRowNames { rule } => write!(f, "{rule}: no row_names"),
            Violation::MalformedRange { rule, reason } => write!(f, "{rule}: malformed range: {reason}"),
            Violation::UnknownUnitRule { rule, tag } => write!(f, "{rule}: unknown unit_rule {tag:?}"),
            Violation::FieldCount { rule, found } => {
                write!(f, "{rule}: expected {} fields, found {found}", MAPPING_HEADER.len())
            }
            Violation::BadHeader { found } => write!(f, "unexpected header {found:?}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error("mapping file not found: {0}")]
    NotFound(PathBuf),
    #[error("cannot read mapping file {path}: {err}")]
    Io { path: PathBuf, err: io::Error },
    #[error("{} mapping violation(s); first: {}", .0.len(), .0[0])]
    Invalid(Vec<Violation>),
}

impl ValidationError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            ValidationError::Invalid(v) => v,
            _ => &[],
        }
    }
}

impl MappingTable {
    /// Validates the rules and builds the row-name index. All violations are
    /// collected rather than stopping at the first.
    pub fn new(rules: Vec<MappingRule>) -> Result<Self, ValidationError> {
        let ids: Vec<RuleId> = rules
            .iter()
            .enumerate()
            .map(|(i, r)| RuleId { position: i + 1, concept_id: r.concept_id.to_string() })
            .collect();
        Self::build(rules, &ids)
    }

    fn build(rules: Vec<MappingRule>, ids: &[RuleId]) -> Result<Self, ValidationError> {
        let mut violations = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        for (i, rule) in rules.iter().enumerate() {
            let id = &ids[i];
            if rule.concept_id <= 0 {
                violations.push(Violation::NonPositiveConceptId { rule: id.clone() });
            }
            if rule.row_names.is_empty() {
                violations.push(Violation::EmptyRowNames { rule: id.clone() });
            }
            if let Some(r) = rule.advisory_range {
                if !(r.min.is_finite() && r.max.is_finite() && r.min < r.max) {
                    violations.push(Violation::MalformedRange {
                        rule: id.clone(),
                        reason: format!("need finite min < max, got {}..{}", r.min, r.max),
                    });
                }
            }
            let mut seen = HashSet::new();
            for name in &rule.row_names {
                if !seen.insert(name.as_str()) {
                    violations.push(Violation::DuplicateWithinRule { rule: id.clone(), row_name: name.clone() });
                    continue;
                }
                if let Some(&owner) = index.get(name) {
                    violations.push(Violation::DuplicateRowName {
                        row_name: name.clone(),
                        first: ids[owner].clone(),
                        second: id.clone(),
                    });
                } else {
                    index.insert(name.clone(), i);
                }
            }
        }
        if violations.is_empty() {
            Ok(MappingTable { rules, index })
        } else {
            Err(ValidationError::Invalid(violations))
        }
    }

    pub fn empty() -> Self {
        MappingTable { rules: Vec::new(), index: HashMap::new() }
    }

    pub fn rules(&self) -> &[MappingRule] {
        &self.rules
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Number of distinct mapped row names.
    pub fn row_name_count(&self) -> usize {
        self.index.len()
    }

    /// Exact, whole-string, case-sensitive match. No trimming or folding.
    pub fn lookup(&self, row_name: &str) -> Option<&MappingRule> {
        self.index.get(row_name).map(|&i| &self.rules[i])
    }

    pub fn rule_for_concept(&self, concept_id: i64) -> Option<&MappingRule> {
        self.rules.iter().find(|r| r.concept_id == concept_id)
    }

    /// Serializes the table in the mapping file format.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> io::Result<()> {
        out.write_all(tsv::encode_line(MAPPING_HEADER).as_bytes())?;
        for r in &self.rules {
            let (min, max) = match r.advisory_range {
                Some(range) => (range.min.to_string(), range.max.to_string()),
                None => (String::new(), String::new()),
            };
            let names = r.row_names.join(&ROW_NAME_SEPARATOR.to_string());
            let line = tsv::encode_line([
                r.concept_id.to_string().as_str(),
                &r.concept_code,
                &r.vocabulary_id,
                &r.concept_name,
                &names,
                &min,
                &max,
                r.unit_rule.map(|u| u.as_str()).unwrap_or(""),
            ]);
            out.write_all(line.as_bytes())?;
        }
        out.flush()
    }
}

/// Convenience: [`lookup`](MappingTable::lookup) as a free function.
pub fn lookup<'a>(table: &'a MappingTable, row_name: &str) -> Option<&'a MappingRule> {
    table.lookup(row_name)
}

/// Loads and validates a mapping file.
///
/// An empty file, or a header with no rules, is a valid empty table. Lines
/// starting with `#` are comments.
pub fn load_mapping(path: impl AsRef<Path>) -> Result<MappingTable, ValidationError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|err| match err.kind() {
        io::ErrorKind::NotFound => ValidationError::NotFound(path.to_path_buf()),
        _ => ValidationError::Io { path: path.to_path_buf(), err },
    })?;
    parse_mapping(&text)
}

/// Parses mapping-file text. See [`load_mapping`].
pub fn parse_mapping(text: &str) -> Result<MappingTable, ValidationError> {
    if text.trim().is_empty() {
        return Ok(MappingTable::empty());
    }
    let mut reader = tsv::reader_builder().has_headers(false).comment(Some(b'#')).from_reader(text.as_bytes());
    let mut records = reader.records();
    let mut violations = Vec::new();

    let header = match records.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(ValidationError::Invalid(vec![Violation::BadHeader { found: e.to_string() }])),
        None => return Ok(MappingTable::empty()),
    };
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    if found != MAPPING_HEADER {
        return Err(ValidationError::Invalid(vec![Violation::BadHeader { found: found.join("\t") }]));
    }

    let mut rules = Vec::new();
    let mut ids = Vec::new();
    for rec in records {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                violations.push(Violation::FieldCount { rule: RuleId { position: line, concept_id: "?".into() }, found: 0 });
                continue;
            }
        };
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let raw_id = rec.get(0).unwrap_or("").trim().to_owned();
        let id = RuleId { position: line, concept_id: raw_id.clone() };
        if rec.len() != MAPPING_HEADER.len() {
            violations.push(Violation::FieldCount { rule: id, found: rec.len() });
            continue;
        }
        let field = |i: usize| rec[i].trim();
        let concept_id = match raw_id.parse::<i64>() {
            Ok(v) => v,
            Err(_) => {
                violations.push(Violation::NonPositiveConceptId { rule: id });
                continue;
            }
        };
        let row_names: Vec<String> = field(4)
            .split(ROW_NAME_SEPARATOR)
            .filter(|n| !n.is_empty())
            .map(str::to_owned)
            .collect();
        let advisory_range = match parse_range(field(5), field(6)) {
            Ok(r) => r,
            Err(reason) => {
                violations.push(Violation::MalformedRange { rule: id, reason });
                continue;
            }
        };
        let unit_rule = match field(7) {
            "" => None,
            tag => match UnitRule::from_tag(tag) {
                Some(u) => Some(u),
                None => {
                    violations.push(Violation::UnknownUnitRule { rule: id, tag: tag.to_owned() });
                    continue;
                }
            },
        };
        rules.push(MappingRule {
            concept_id,
            concept_code: field(1).to_owned(),
            vocabulary_id: field(2).to_owned(),
            concept_name: field(3).to_owned(),
            row_names,
            advisory_range,
            unit_rule,
        });
        ids.push(id);
    }

    match MappingTable::build(rules, &ids) {
        Ok(table) if violations.is_empty() => Ok(table),
        Ok(_) => Err(ValidationError::Invalid(violations)),
        Err(ValidationError::Invalid(more)) => {
            violations.extend(more);
            Err(ValidationError::Invalid(violations))
        }
        Err(other) => Err(other),
    }
}

fn parse_range(min: &str, max: &str) -> Result<Option<AdvisoryRange>, String> {
    match (min.is_empty(), max.is_empty()) {
        (true, true) => Ok(None),
        (false, false) => {
            let lo: f64 = min.parse().map_err(|_| format!("range_min {min:?} is not a number"))?;
            let hi: f64 = max.parse().map_err(|_| format!("range_max {max:?} is not a number"))?;
            Ok(Some(AdvisoryRange { min: lo, max: hi }))
        }
        _ => Err("range_min and range_max must both be set or both be empty".into()),
    }
}

// (concept_id, concept_code, vocabulary_id, concept_name, row names)
// Row names come from the crosswalk's abbreviation column, except where the
// curation notes narrowed them: body temperature, pain and heart rate.
const DEFAULT_RULES: [(i64, &str, &str, &str, &[&str]); 28] = [
    (3005424, "8277-6", "LOINC", "Body surface area", &["BSA"]),
    (3020891, "8310-5", "LOINC", "Body temperature", &["Temp", "Temperature", "Temp (in Celsius)", "Tcore"]),
    (3025315, "29463-7", "LOINC", "Body weight", &["Weight"]),
    (21490675, "60985-9", "LOINC", "Central venous pressure (CVP)", &["CVP"]),
    (3012888, "8462-4", "LOINC", "Diastolic blood pressure", &["Diastolic BP", "ARTD", "Arterial Diastolic BP"]),
    (21490565, "60802-6", "LOINC", "Dynamic plateau pressure", &["Pplat"]),
    (3032652, "35088-4", "LOINC", "Glasgow coma scale", &["Glasgow"]),
    (3027018, "8867-4", "LOINC", "Heart rate", &["Heart Rate", "HR"]),
    (3036277, "8302-2", "LOINC", "Height", &["Height"]),
    (3005629, "3151-8", "LOINC", "Inhaled oxygen flow rate", &["O2"]),
    // Not a LOINC-shaped code, carried as published.
    (45876241, "IO_OUT", "LOINC", "Input/Output", &["Urine", "Urine Output"]),
    (21490581, "60826-5", "LOINC", "Lung compliance", &["COMP"]),
    (42527086, "60949-5", "LOINC", "Mean airway pressure", &["MnAwP"]),
    (3027598, "8478-0", "LOINC", "Mean blood pressure", &["ARTM", "Mean Arterial Pressure"]),
    (21490566, "60804-2", "LOINC", "Minimum alveolar concentration (MAC) for anesthesia", &["etMAC"]),
    (3045410, "33425-0", "LOINC", "Minute volume setting Ventilator", &["MV"]),
    (21490615, "60860-4", "LOINC", "Nitrous oxide [VFr/PPres] Gas delivery system", &["N2O"]),
    (3024882, "19994-3", "LOINC", "Oxygen/Inspired gas setting [Volume Fraction] Ventilator", &["FiO2"]),
    (21490855, "76248-4", "LOINC", "PEEP Respiratory system --on ventilator", &["PEEP"]),
    (3036453, "38214-3", "LOINC", "Pain severity [Score] Visual analog score", &["Pain Level - 1st Site"]),
    (3011557, "19931-5", "LOINC", "Peak inspiratory gas flow setting Ventilator", &["PIP"]),
    (3025809, "8634-8", "LOINC", "Q-T interval", &["QT Interval"]),
    (3026258, "8636-3", "LOINC", "Q-T interval corrected", &["QTc Interval"]),
    (3024171, "9279-1", "LOINC", "Respiratory rate", &["Resp", "Resp rate"]),
    (
        21490553,
        "60782-0",
        "LOINC",
        "Sevoflurane gas delivered during case [Volume] from Gas delivery system",
        &["Sevoflurane"],
    ),
    (3004249, "8480-6", "LOINC", "Systolic blood pressure", &["Systolic BP", "ARTS", "Arterial Systolic BP"]),
    (3012410, "20112-9", "LOINC", "Tidal volume setting Ventilator", &["TV"]),
    (3025853, "20140-0", "LOINC", "Volume expired", &["VO2"]),
];

pub const BODY_TEMPERATURE: i64 = 3020891;
pub const HEART_RATE: i64 = 3027018;
pub const PAIN_SEVERITY: i64 = 3036453;

/// The built-in 28-rule crosswalk.
///
/// Pain carries the 0–10 advisory range and body temperature the
/// Celsius/Fahrenheit unit rule; no other rule has a range.
pub fn default_mapping() -> MappingTable {
    let rules = DEFAULT_RULES
        .iter()
        .map(|&(concept_id, code, vocab, name, names)| MappingRule {
            concept_id,
            concept_code: code.to_owned(),
            vocabulary_id: vocab.to_owned(),
            concept_name: name.to_owned(),
            row_names: names.iter().map(|n| (*n).to_owned()).collect(),
            advisory_range: (concept_id == PAIN_SEVERITY).then_some(AdvisoryRange { min: 0.0, max: 10.0 }),
            unit_rule: (concept_id == BODY_TEMPERATURE).then_some(UnitRule::TemperatureCelsiusOrFahrenheit),
        })
        .collect();
    MappingTable::new(rules).expect("built-in mapping is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule(concept_id: i64, names: &[&str]) -> MappingRule {
        MappingRule {
            concept_id,
            concept_code: "x".into(),
            vocabulary_id: "LOINC".into(),
            concept_name: "n".into(),
            row_names: names.iter().map(|s| s.to_string()).collect(),
            advisory_range: None,
            unit_rule: None,
        }
    }

    #[test]
    fn default_lookups() {
        let t = default_mapping();
        let r = t.lookup("Tcore").unwrap();
        assert_eq!((r.concept_id, r.concept_code.as_str()), (3020891, "8310-5"));
        let r = t.lookup("Pain Level - 1st Site").unwrap();
        assert_eq!((r.concept_id, r.concept_code.as_str()), (3036453, "38214-3"));
        let r = t.lookup("Heart Rate").unwrap();
        assert_eq!((r.concept_id, r.concept_code.as_str()), (3027018, "8867-4"));
        assert!(t.lookup("temp").is_none());
        assert!(t.lookup("TEMP").is_none());
        assert!(t.lookup("Temp ").is_none());
        assert!(t.lookup("Pulse").is_none());
        assert!(t.lookup("Pain Level").is_none());
    }

    #[test]
    fn exact_as_is_names() {
        let t = default_mapping();
        for (name, id) in [("Height", 3036277), ("Weight", 3025315), ("O2", 3005629), ("N2O", 21490615)] {
            assert_eq!(t.lookup(name).map(|r| r.concept_id), Some(id), "{name}");
        }
    }

    #[test]
    fn default_ranges_and_unit_rules() {
        let t = default_mapping();
        for r in t.rules() {
            match r.concept_id {
                PAIN_SEVERITY => assert_eq!(r.advisory_range, Some(AdvisoryRange { min: 0.0, max: 10.0 })),
                _ => assert_eq!(r.advisory_range, None),
            }
            assert_eq!(r.unit_rule.is_some(), r.concept_id == BODY_TEMPERATURE);
        }
    }

    #[test]
    fn duplicate_across_rules_rejected() {
        let err = MappingTable::new(vec![rule(1, &["Temp"]), rule(2, &["Temp", "X"])]).unwrap_err();
        assert!(matches!(
            &err.violations()[0],
            Violation::DuplicateRowName { row_name, first, second }
                if row_name == "Temp" && first.position == 1 && second.position == 2
        ));
    }

    #[test]
    fn rule_invariants() {
        let mut bad_range = rule(3, &["A"]);
        bad_range.advisory_range = Some(AdvisoryRange { min: 5.0, max: 5.0 });
        let err = MappingTable::new(vec![rule(0, &["Z"]), rule(4, &[]), bad_range, rule(5, &["B", "B"])]).unwrap_err();
        let v = err.violations();
        assert_eq!(v.len(), 4);
        assert!(matches!(v[0], Violation::NonPositiveConceptId { .. }));
        assert!(matches!(v[1], Violation::EmptyRowNames { .. }));
        assert!(matches!(v[2], Violation::MalformedRange { .. }));
        assert!(matches!(v[3], Violation::DuplicateWithinRule { .. }));
    }

    #[test]
    fn file_round_trip() {
        let t = default_mapping();
        let mut buf = Vec::new();
        t.write_tsv(&mut buf).unwrap();
        let back = parse_mapping(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn empty_file_is_empty_table() {
        assert!(parse_mapping("").unwrap().is_empty());
        let header = tsv::encode_line(MAPPING_HEADER);
        assert!(parse_mapping(&header).unwrap().is_empty());
    }

    #[test]
    fn duplicate_in_file_reports_line() {
        let mut text = tsv::encode_line(MAPPING_HEADER);
        text.push_str("3020891\t8310-5\tLOINC\tBody temperature\tTemp|Tcore\t\t\t\n");
        text.push_str("# comment\n");
        text.push_str("3027018\t8867-4\tLOINC\tHeart rate\tTemp\t\t\t\n");
        let err = parse_mapping(&text).unwrap_err();
        match &err.violations()[0] {
            Violation::DuplicateRowName { row_name, second, .. } => {
                assert_eq!(row_name, "Temp");
                assert_eq!(second.concept_id, "3027018");
            }
            v => panic!("unexpected {v:?}"),
        }
        assert!(err.to_string().contains("duplicate row_name \"Temp\""));
    }

    #[test]
    fn file_level_errors_are_collected() {
        let mut text = tsv::encode_line(MAPPING_HEADER);
        text.push_str("-4\tc\tLOINC\tn\tA\t\t\t\n");
        text.push_str("abc\tc\tLOINC\tn\tB\t\t\t\n");
        text.push_str("7\tc\tLOINC\tn\tC\t1\t\t\n");
        text.push_str("8\tc\tLOINC\tn\tD\t\t\tkelvin\n");
        text.push_str("9\tc\tLOINC\tn\n");
        text.push_str("10\tc\tLOINC\tn\t\t\t\t\n");
        let err = parse_mapping(&text).unwrap_err();
        let v = err.violations();
        assert_eq!(v.len(), 6, "{v:?}");
        assert!(v.iter().any(|x| matches!(x, Violation::UnknownUnitRule { tag, .. } if tag == "kelvin")));
        assert!(v.iter().any(|x| matches!(x, Violation::FieldCount { found: 4, .. })));
        assert!(v.iter().any(|x| matches!(x, Violation::EmptyRowNames { .. })));
    }

    #[test]
    fn bad_header() {
        let err = parse_mapping("id\tname\n").unwrap_err();
        assert!(matches!(err.violations()[0], Violation::BadHeader { .. }));
    }

    #[test]
    fn missing_file() {
        assert!(matches!(load_mapping("/nope/mapping.tsv"), Err(ValidationError::NotFound(_))));
    }
}
