//! Domain types shared across the pipeline. No I/O happens here.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

/// OMOP "No matching concept". Anchors every verbatim JSON observation row.
pub const NO_MATCHING_CONCEPT: i64 = 0;

/// Canonical textual form of a timestamp: UTC, second precision.
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

/// One raw flowsheet entry as exported from the EHR.
///
/// `row_name` and `value` keep their original case. Nothing downstream
/// folds them.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FlowsheetRecord {
    pub patient_id: String,
    #[serde(with = "timestamp_serde")]
    pub recorded_time: DateTime<Utc>,
    pub provider_id: String,
    pub template_name: String,
    pub group_name: String,
    pub row_name: String,
    pub value: String,
    pub unit_source: Option<String>,
}

/// Formats a timestamp in the canonical `YYYY-MM-DDTHH:MM:SSZ` form.
pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.format(TIMESTAMP_FORMAT).to_string()
}

/// Parses an ISO-8601 timestamp and truncates it to whole seconds in UTC.
///
/// Accepts RFC 3339 with any offset, and naive `YYYY-MM-DDTHH:MM:SS` /
/// `YYYY-MM-DD HH:MM:SS` forms which are taken as UTC.
pub fn parse_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    let parsed = if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        dt.with_timezone(&Utc)
    } else {
        let naive = NaiveDateTime::parse_from_str(raw, "%Y-%m-%dT%H:%M:%S%.f")
            .or_else(|_| NaiveDateTime::parse_from_str(raw, "%Y-%m-%d %H:%M:%S%.f"))
            .ok()?;
        Utc.from_utc_datetime(&naive)
    };
    Utc.timestamp_opt(parsed.timestamp(), 0).single()
}

mod timestamp_serde {
    use super::{format_timestamp, parse_timestamp};
    use chrono::{DateTime, Utc};
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ts: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_timestamp(ts))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        parse_timestamp(raw.trim()).ok_or_else(|| D::Error::custom(format!("bad timestamp {raw:?}")))
    }
}

/// Plausibility band. Values outside it are flagged, never dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvisoryRange {
    pub min: f64,
    pub max: f64,
}

impl AdvisoryRange {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

/// Named unit-inference procedure attached to a mapping rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UnitRule {
    #[serde(rename = "temperature_c_or_f")]
    TemperatureCelsiusOrFahrenheit,
}

impl UnitRule {
    pub fn as_str(&self) -> &'static str {
        match self {
            UnitRule::TemperatureCelsiusOrFahrenheit => "temperature_c_or_f",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "temperature_c_or_f" => Some(UnitRule::TemperatureCelsiusOrFahrenheit),
            _ => None,
        }
    }
}

impl fmt::Display for UnitRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Curated crosswalk entry: a set of exact row names mapped to one concept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingRule {
    pub concept_id: i64,
    pub concept_code: String,
    pub vocabulary_id: String,
    pub concept_name: String,
    /// Case-sensitive, whole-string match keys. Order is kept for stable output.
    pub row_names: Vec<String>,
    pub advisory_range: Option<AdvisoryRange>,
    pub unit_rule: Option<UnitRule>,
}

/// Verbatim OBSERVATION row carrying the canonical JSON payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationRow {
    pub person_id: String,
    pub observation_concept_id: i64,
    #[serde(with = "timestamp_serde")]
    pub observation_datetime: DateTime<Utc>,
    pub provider_id: String,
    pub value_as_string: Option<String>,
    pub observation_source_value: String,
}

/// A decimal value that keeps the exact text it was parsed from.
///
/// Re-emission writes the text back unchanged, so no float formatting ever
/// touches the stored number.
#[derive(Debug, Clone, PartialEq)]
pub struct DecimalValue {
    text: String,
    value: f64,
}

impl DecimalValue {
    /// Caller guarantees `text` already matched the numeric grammar.
    pub(crate) fn from_validated(text: &str) -> Self {
        // Every grammar match is a valid Rust float literal.
        let value = text.parse::<f64>().expect("grammar-validated decimal");
        DecimalValue { text: text.to_owned(), value }
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn as_f64(&self) -> f64 {
        self.value
    }
}

impl fmt::Display for DecimalValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemperatureUnit {
    Celsius,
    Fahrenheit,
}

impl TemperatureUnit {
    pub fn as_str(&self) -> &'static str {
        match self {
            TemperatureUnit::Celsius => "celsius",
            TemperatureUnit::Fahrenheit => "fahrenheit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementFlag {
    OutOfAdvisoryRange,
    UnitAmbiguous,
}

impl MeasurementFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            MeasurementFlag::OutOfAdvisoryRange => "out_of_advisory_range",
            MeasurementFlag::UnitAmbiguous => "unit_ambiguous",
        }
    }
}

/// Curated MEASUREMENT row produced by the mapping path.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRow {
    pub person_id: String,
    pub measurement_datetime: DateTime<Utc>,
    pub provider_id: String,
    pub measurement_concept_id: i64,
    pub value_as_number: DecimalValue,
    pub unit_inferred: Option<TemperatureUnit>,
    pub unit_source_value: Option<String>,
    pub measurement_source_value: String,
    pub value_source_value: String,
    pub flags: BTreeSet<MeasurementFlag>,
}

/// Per-run accounting. Counters merge by addition, so partial reports from
/// independent workers combine in any order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformReport {
    pub records_in: u64,
    pub records_rejected_parse: u64,
    pub observations_emitted: u64,
    pub measurements_emitted: u64,
    pub skipped_unmapped: u64,
    pub skipped_nonnumeric: u64,
    pub flagged_count: u64,
    pub per_concept_counts: BTreeMap<i64, u64>,
    pub distinct_patients: u64,
}

impl TransformReport {
    pub fn valid_records(&self) -> u64 {
        self.records_in - self.records_rejected_parse
    }

    /// Adds another partial report's counters. `distinct_patients` is not
    /// additive and must be recomputed by the caller.
    pub fn absorb(&mut self, other: &TransformReport) {
        self.records_in += other.records_in;
        self.records_rejected_parse += other.records_rejected_parse;
        self.observations_emitted += other.observations_emitted;
        self.measurements_emitted += other.measurements_emitted;
        self.skipped_unmapped += other.skipped_unmapped;
        self.skipped_nonnumeric += other.skipped_nonnumeric;
        self.flagged_count += other.flagged_count;
        for (concept, n) in &other.per_concept_counts {
            *self.per_concept_counts.entry(*concept).or_default() += n;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamp_forms() {
        let a = parse_timestamp("2019-03-04T10:00:00Z").unwrap();
        assert_eq!(format_timestamp(&a), "2019-03-04T10:00:00Z");
        assert_eq!(parse_timestamp("2019-03-04 10:00:00"), Some(a));
        assert_eq!(parse_timestamp("2019-03-04T02:00:00-08:00"), Some(a));
        // sub-second precision is truncated
        assert_eq!(parse_timestamp("2019-03-04T10:00:00.750Z"), Some(a));
        assert_eq!(parse_timestamp("not-a-date"), None);
        assert_eq!(parse_timestamp("2019-02-30T10:00:00Z"), None);
    }

    #[test]
    fn unit_rule_tag_round_trip() {
        let r = UnitRule::TemperatureCelsiusOrFahrenheit;
        assert_eq!(UnitRule::from_tag(r.as_str()), Some(r));
        assert_eq!(UnitRule::from_tag("Temperature_C_or_F"), None);
    }

    #[test]
    fn absorb_adds_counters() {
        let mut a = TransformReport { records_in: 2, measurements_emitted: 1, ..Default::default() };
        a.per_concept_counts.insert(3020891, 1);
        let mut b = TransformReport { records_in: 3, measurements_emitted: 2, ..Default::default() };
        b.per_concept_counts.insert(3020891, 1);
        b.per_concept_counts.insert(3027018, 1);
        a.absorb(&b);
        assert_eq!(a.records_in, 5);
        assert_eq!(a.measurements_emitted, 3);
        assert_eq!(a.per_concept_counts[&3020891], 2);
        assert_eq!(a.per_concept_counts.values().sum::<u64>(), a.measurements_emitted);
    }
}
