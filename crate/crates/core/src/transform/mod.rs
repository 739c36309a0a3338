//! The two transformation paths.
//!
//! Every valid record becomes a verbatim OBSERVATION row whose payload is a
//! canonical JSON object; de-identified runs suppress those rows outright.
//! Records whose row name hits the mapping table and whose value is numeric
//! additionally become MEASUREMENT rows. Flags annotate measurements but never
//! drop them, and values are never rescaled.

mod pipeline;
mod sorter;

use std::collections::BTreeSet;
use std::str::FromStr;

use serde::Serialize;

use crate::flow_model::{
    DecimalValue, FlowsheetRecord, MeasurementFlag, MeasurementRow, ObservationRow, TemperatureUnit, UnitRule,
    NO_MATCHING_CONCEPT,
};
use crate::mapcfg::MappingTable;

pub use pipeline::{
    run_pipeline, PipelineOutputs, TransformConfig, TransformError, MEASUREMENT_HEADER, OBSERVATION_HEADER,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Identified,
    Deidentified,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "identified" => Ok(Mode::Identified),
            "deidentified" => Ok(Mode::Deidentified),
            other => Err(format!("unknown mode {other:?} (expected identified or deidentified)")),
        }
    }
}

#[derive(Serialize)]
struct Payload<'a> {
    template: &'a str,
    group: &'a str,
    row: &'a str,
    value: &'a str,
    unit: Option<&'a str>,
}

/// Canonical JSON for one record: keys `template`, `group`, `row`, `value`,
/// `unit` in that order, no whitespace, only quote, backslash and control
/// characters escaped.
pub fn canonical_payload(record: &FlowsheetRecord) -> String {
    let payload = Payload {
        template: &record.template_name,
        group: &record.group_name,
        row: &record.row_name,
        value: &record.value,
        unit: record.unit_source.as_deref(),
    };
    serde_json::to_string(&payload).expect("string-only payload always serializes")
}

pub fn to_json_observation(record: &FlowsheetRecord) -> ObservationRow {
    ObservationRow {
        person_id: record.patient_id.clone(),
        observation_concept_id: NO_MATCHING_CONCEPT,
        observation_datetime: record.recorded_time,
        provider_id: record.provider_id.clone(),
        value_as_string: Some(canonical_payload(record)),
        observation_source_value: record.row_name.clone(),
    }
}

/// Identified mode passes the row through; de-identified mode suppresses it.
pub fn censor(row: ObservationRow, mode: Mode) -> Option<ObservationRow> {
    match mode {
        Mode::Identified => Some(row),
        Mode::Deidentified => None,
    }
}

/// Parses `[-+]?digits[.digits]?` after trimming surrounding whitespace.
///
/// Thousands separators, exponents, bare or trailing decimal points and
/// words such as "Yes" are all rejected.
pub fn parse_numeric(value: &str) -> Option<DecimalValue> {
    let text = value.trim();
    let bytes = text.as_bytes();
    let mut i = 0;
    if matches!(bytes.first(), Some(b'+' | b'-')) {
        i = 1;
    }
    let int_start = i;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    if i == int_start {
        return None;
    }
    if i < bytes.len() && bytes[i] == b'.' {
        i += 1;
        let frac_start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i == frac_start {
            return None;
        }
    }
    (i == bytes.len()).then(|| DecimalValue::from_validated(text))
}

/// Inclusive band read as body temperature in Celsius.
pub const CELSIUS_BAND: (f64, f64) = (30.0, 45.0);
/// Inclusive band read as body temperature in Fahrenheit.
pub const FAHRENHEIT_BAND: (f64, f64) = (86.0, 113.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitInference {
    Celsius,
    Fahrenheit,
    Ambiguous,
}

/// Assigns a temperature scale from the magnitude alone.
pub fn infer_temperature_unit(v: f64) -> UnitInference {
    let within = |(lo, hi): (f64, f64)| v >= lo && v <= hi;
    if within(CELSIUS_BAND) {
        UnitInference::Celsius
    } else if within(FAHRENHEIT_BAND) {
        UnitInference::Fahrenheit
    } else {
        UnitInference::Ambiguous
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeasurementOutcome {
    Emitted(MeasurementRow),
    SkippedUnmapped,
    SkippedNonnumeric,
}

pub fn to_measurement(record: &FlowsheetRecord, mapping: &MappingTable) -> MeasurementOutcome {
    let Some(rule) = mapping.lookup(&record.row_name) else {
        return MeasurementOutcome::SkippedUnmapped;
    };
    let Some(number) = parse_numeric(&record.value) else {
        return MeasurementOutcome::SkippedNonnumeric;
    };
    let v = number.as_f64();
    let mut flags = BTreeSet::new();
    if rule.advisory_range.is_some_and(|r| !r.contains(v)) {
        flags.insert(MeasurementFlag::OutOfAdvisoryRange);
    }
    let unit_inferred = match rule.unit_rule {
        Some(UnitRule::TemperatureCelsiusOrFahrenheit) => match infer_temperature_unit(v) {
            UnitInference::Celsius => Some(TemperatureUnit::Celsius),
            UnitInference::Fahrenheit => Some(TemperatureUnit::Fahrenheit),
            UnitInference::Ambiguous => {
                flags.insert(MeasurementFlag::UnitAmbiguous);
                None
            }
        },
        None => None,
    };
    MeasurementOutcome::Emitted(MeasurementRow {
        person_id: record.patient_id.clone(),
        measurement_datetime: record.recorded_time,
        provider_id: record.provider_id.clone(),
        measurement_concept_id: rule.concept_id,
        value_as_number: number,
        unit_inferred,
        unit_source_value: record.unit_source.clone(),
        measurement_source_value: record.row_name.clone(),
        value_source_value: record.value.clone(),
        flags,
    })
}
