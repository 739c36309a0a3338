//! Seeded synthetic flowsheet corpus generator.
//!
//! Row names are drawn with probability proportional to their weights. The
//! default weights are the published occurrence counts of the top
//! temperature- and heart-rate-related row names, plus the remaining mapped
//! names and a few deliberately confusable ones (`TEMP`, `temp`,
//! `(Retired) Temp`). Two data-quality scenarios are planted on purpose:
//! PEWS scores leaking into `Heart Rate` and dialysis-machine readings in the
//! thousands under `TEMP`.
//!
//! The RNG is ChaCha8, so a given spec reproduces the same corpus on every
//! platform.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow_model::FlowsheetRecord;
use crate::ingest::{InputFormat, RecordWriter};

/// Top 30 temperature-related row names with their occurrence counts.
pub const TEMPERATURE_ROW_NAMES: [(&str, u64); 30] = [
    ("Temp", 43_163_193),
    ("Temp src", 25_256_950),
    ("Temp (in Celsius)", 12_952_769),
    ("Tcore", 4_506_680),
    ("Temp Source", 4_050_492),
    ("In last 6 hours temperature < 36 C or > 38.3 C", 2_252_506),
    ("RLE Temperature/Condition", 1_881_329),
    ("LLE Temperature/Condition", 1_846_976),
    ("LUE Temperature/Condition", 1_834_203),
    ("Temperature RLE", 1_832_733),
    ("Temperature LLE", 1_825_700),
    ("Temperature RUE", 1_812_643),
    ("Temperature LUE", 1_810_598),
    ("RUE Temperature/Condition", 1_779_112),
    ("Skin Temp, Distal to Site", 1_290_322),
    ("Temp < 36 C (96.8 F) or >38.3 C (100.9 F)", 1_092_763),
    ("Humidifier Temperature", 730_136),
    ("Temperature", 706_614),
    ("Temp 2", 545_497),
    ("Bed Set Temp", 494_263),
    ("Humidifier Temperature (C)", 488_507),
    ("Temperature (Blood - PA line)", 428_304),
    ("Temperature Skin", 389_905),
    ("Temperature greater than 35.5 C Ax. or 36 C oral within 45 minutes of discharge", 375_659),
    ("Temp Control", 320_951),
    ("Air Temp", 315_910),
    ("Circuit Water Temperature", 168_098),
    ("Temp Pacer Ventricular mA", 140_225),
    ("Temperature > 37.8 C", 129_706),
    ("Patient Core Temperature", 98_642),
];

const ACTIVITY_QUESTION: &str = "In the last month, how many times a week do you usually do 30 minutes or more of \
moderate-intensity physical activity that increases your heart rate or makes you breathe harder than normal? \
(e.g., carrying light loads, bicycling at a regular pace, or doubles tennis)";

/// Top 22 heart-rate-related row names with their occurrence counts.
pub const HEART_RATE_ROW_NAMES: [(&str, u64); 22] = [
    ("Heart Rate", 84_587_071),
    ("PEWS Heart Rate Score", 10_377_491),
    ("Post RT Treatment Heart Rate", 1_128_175),
    ("Heart Rate Score", 915_259),
    ("Fetal Heart Rate", 146_895),
    ("Heart Rate Source", 71_183),
    ("2.Heart Rate greater than 110 beats/minute", 30_267),
    ("Max Heart Rate (bpm)", 3_008),
    ("Resting Heart Rate (bpm)", 3_007),
    ("Heart Rate Recovery at 1 minute (bpm)", 3_005),
    ("Measured Heart Rate Max", 2_443),
    ("Fetal Heart Rate (FHR)", 1_845),
    ("Fetal Heart Rate auscultated for more than 60 seconds", 1_124),
    ("Heart Rate Used", 878),
    ("6 Minutes Heart Rate", 816),
    ("Baseline Heart Rate", 810),
    ("Heart Rate (b/min)", 337),
    (ACTIVITY_QUESTION, 282),
    ("Fetal Heart Rate Monitoring", 201),
    ("Beginning O2 Heart Rate", 200),
    ("Ending O2 Heart Rate", 199),
    ("Heart Rate > 100?", 75),
];

/// Mapped names beyond the two published tables, and confusable near-misses.
/// Weights are synthetic.
pub const SUPPLEMENTARY_ROW_NAMES: [(&str, u64); 39] = [
    ("Pain Level - 1st Site", 5_000_000),
    ("Pain Level - 2nd Site", 400_000),
    ("Height", 2_000_000),
    ("Weight", 2_000_000),
    ("O2", 2_000_000),
    ("N2O", 500_000),
    ("TEMP", 400_000),
    ("(Retired) Temp", 150_000),
    ("temp", 60_000),
    ("BSA", 1_000_000),
    ("CVP", 500_000),
    ("Diastolic BP", 2_000_000),
    ("ARTD", 500_000),
    ("Arterial Diastolic BP", 250_000),
    ("Pplat", 250_000),
    ("Glasgow", 250_000),
    ("HR", 250_000),
    ("Urine", 500_000),
    ("Urine Output", 500_000),
    ("COMP", 250_000),
    ("MnAwP", 250_000),
    ("ARTM", 500_000),
    ("Mean Arterial Pressure", 500_000),
    ("etMAC", 250_000),
    ("MV", 250_000),
    ("FiO2", 500_000),
    ("PEEP", 500_000),
    ("PIP", 250_000),
    ("QT Interval", 250_000),
    ("QTc Interval", 250_000),
    ("Resp", 2_000_000),
    ("Resp rate", 250_000),
    ("Sevoflurane", 250_000),
    ("Systolic BP", 2_000_000),
    ("ARTS", 500_000),
    ("Arterial Systolic BP", 250_000),
    ("TV", 250_000),
    ("VO2", 250_000),
    ("Pulse", 500_000),
];

/// Row name that receives PEWS score contamination.
pub const PEWS_TARGET: &str = "Heart Rate";
/// Row name that receives thousands-scale machine readings.
pub const THOUSANDS_TARGET: &str = "TEMP";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NameWeight {
    pub name: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextWeight {
    pub template: String,
    pub group: String,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub model: ValueModel,
}

/// How values for one row name are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ValueModel {
    NumericRange { min: f64, max: f64, decimals: u32 },
    IntegerRange { min: i64, max: i64 },
    Categorical { values: Vec<String>, #[serde(default)] weights: Option<Vec<f64>> },
    FreeText,
    Mixture { components: Vec<MixtureComponent> },
}

impl ValueModel {
    fn numeric(min: f64, max: f64, decimals: u32) -> Self {
        ValueModel::NumericRange { min, max, decimals }
    }

    fn integer(min: i64, max: i64) -> Self {
        ValueModel::IntegerRange { min, max }
    }

    fn categorical(values: &[&str]) -> Self {
        ValueModel::Categorical { values: values.iter().map(|v| (*v).to_owned()).collect(), weights: None }
    }

    fn mixture(parts: Vec<(f64, ValueModel)>) -> Self {
        ValueModel::Mixture {
            components: parts.into_iter().map(|(weight, model)| MixtureComponent { weight, model }).collect(),
        }
    }
}

/// Everything that determines a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub seed: u64,
    pub total_rows: u64,
    pub patients: u64,
    pub name_weights: Vec<NameWeight>,
    /// Per-name overrides; names without an entry produce free text.
    pub value_models: BTreeMap<String, ValueModel>,
    /// Per-name (template, group) distributions.
    pub contexts: BTreeMap<String, Vec<ContextWeight>>,
    pub default_context: ContextWeight,
    /// Share of rows given a free-text noise name instead of a weighted name.
    pub noise_fraction: f64,
    pub noise_names: u32,
    /// Share of `Heart Rate` rows carrying a PEWS sub-score (mode 2).
    pub pews_fraction: f64,
    /// Share of `TEMP` rows carrying readings in the thousands.
    pub thousands_fraction: f64,
    pub provider_missing_fraction: f64,
    pub providers: u32,
    /// Share of rows carrying a recorded unit, for names with a known unit.
    pub unit_fraction: f64,
    pub units: BTreeMap<String, String>,
    pub start: String,
    pub span_days: u32,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            seed: 7,
            total_rows: 100_000,
            patients: 500,
            name_weights: default_name_weights(),
            value_models: default_value_models(),
            contexts: default_contexts(),
            default_context: ContextWeight { template: "Flowsheet".into(), group: "General".into(), weight: 1.0 },
            noise_fraction: 0.02,
            noise_names: 200,
            pews_fraction: 0.08,
            thousands_fraction: 0.95,
            provider_missing_fraction: 0.05,
            providers: 400,
            unit_fraction: 0.1,
            units: [("Weight", "kg"), ("Height", "cm"), ("O2", "L/min"), ("Temp (in Celsius)", "C"), ("Urine Output", "mL")]
                .into_iter()
                .map(|(k, v)| (k.to_owned(), v.to_owned()))
                .collect(),
            start: "2008-01-01T00:00:00Z".into(),
            span_days: 4_930,
        }
    }
}

/// Config-file view of [`GeneratorSpec`]: every key optional. Present keys
/// override the defaults; `value_models`, `contexts` and `units` merge per name.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    seed: Option<u64>,
    total_rows: Option<u64>,
    patients: Option<u64>,
    name_weights: Option<Vec<NameWeight>>,
    #[serde(default)]
    value_models: BTreeMap<String, ValueModel>,
    #[serde(default)]
    contexts: BTreeMap<String, Vec<ContextWeight>>,
    default_context: Option<ContextWeight>,
    noise_fraction: Option<f64>,
    noise_names: Option<u32>,
    pews_fraction: Option<f64>,
    thousands_fraction: Option<f64>,
    provider_missing_fraction: Option<f64>,
    providers: Option<u32>,
    unit_fraction: Option<f64>,
    #[serde(default)]
    units: BTreeMap<String, String>,
    start: Option<String>,
    span_days: Option<u32>,
}

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("total_rows must be positive")]
    ZeroRows,
    #[error("patients must be positive")]
    ZeroPatients,
    #[error("name_weights is empty")]
    EmptyWeights,
    #[error("weight for {name:?} must be positive and finite, got {weight}")]
    BadWeight { name: String, weight: f64 },
    #[error("{field} must lie in [0, 1], got {value}")]
    BadFraction { field: &'static str, value: f64 },
    #[error("invalid value model for {name:?}: {reason}")]
    BadModel { name: String, reason: String },
    #[error("invalid context for {name:?}: {reason}")]
    BadContext { name: String, reason: String },
    #[error("bad start timestamp {0:?}")]
    BadStart(String),
    #[error("cannot parse generator config: {0}")]
    Config(String),
    #[error("cannot read generator config {path}: {err}")]
    Io { path: String, err: io::Error },
}

impl GeneratorSpec {
    /// Replaces the name weights with `pairs`.
    pub fn with_weights<'a, I>(mut self, pairs: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, f64)>,
    {
        self.name_weights = pairs.into_iter().map(|(n, w)| NameWeight { name: n.to_owned(), weight: w }).collect();
        self
    }

    pub fn from_toml_str(text: &str) -> Result<Self, GeneratorError> {
        let file: SpecFile = toml::from_str(text).map_err(|e| GeneratorError::Config(e.to_string()))?;
        let mut spec = GeneratorSpec::default();
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = file.$f { spec.$f = v; } )* };
        }
        take!(
            seed,
            total_rows,
            patients,
            name_weights,
            default_context,
            noise_fraction,
            noise_names,
            pews_fraction,
            thousands_fraction,
            provider_missing_fraction,
            providers,
            unit_fraction,
            start,
            span_days
        );
        spec.value_models.extend(file.value_models);
        spec.contexts.extend(file.contexts);
        spec.units.extend(file.units);
        Ok(spec)
    }

    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self, GeneratorError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|err| GeneratorError::Io { path: path.display().to_string(), err })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("generator spec serializes")
    }

    pub fn validate(&self) -> Result<(), GeneratorError> {
        if self.total_rows == 0 {
            return Err(GeneratorError::ZeroRows);
        }
        if self.patients == 0 {
            return Err(GeneratorError::ZeroPatients);
        }
        if self.name_weights.is_empty() {
            return Err(GeneratorError::EmptyWeights);
        }
        for nw in &self.name_weights {
            if !(nw.weight.is_finite() && nw.weight > 0.0) {
                return Err(GeneratorError::BadWeight { name: nw.name.clone(), weight: nw.weight });
            }
        }
        for (field, value) in [
            ("noise_fraction", self.noise_fraction),
            ("pews_fraction", self.pews_fraction),
            ("thousands_fraction", self.thousands_fraction),
            ("provider_missing_fraction", self.provider_missing_fraction),
            ("unit_fraction", self.unit_fraction),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(GeneratorError::BadFraction { field, value });
            }
        }
        if self.noise_fraction > 0.0 && self.noise_names == 0 {
            return Err(GeneratorError::Config("noise_fraction > 0 needs noise_names > 0".into()));
        }
        for (name, model) in &self.value_models {
            check_model(model).map_err(|reason| GeneratorError::BadModel { name: name.clone(), reason })?;
        }
        for (name, ctxs) in self.contexts.iter().chain([(&"default_context".to_owned(), &vec![self.default_context.clone()])]) {
            if ctxs.is_empty() || ctxs.iter().any(|c| !(c.weight.is_finite() && c.weight > 0.0)) {
                return Err(GeneratorError::BadContext { name: name.clone(), reason: "need positive weights".into() });
            }
        }
        crate::flow_model::parse_timestamp(&self.start).ok_or_else(|| GeneratorError::BadStart(self.start.clone()))?;
        Ok(())
    }
}

fn check_model(model: &ValueModel) -> Result<(), String> {
    match model {
        ValueModel::NumericRange { min, max, decimals } => {
            if !(min.is_finite() && max.is_finite() && min <= max) {
                return Err(format!("numeric range {min}..{max}"));
            }
            if *decimals > 6 {
                return Err("at most 6 decimals".into());
            }
        }
        ValueModel::IntegerRange { min, max } if min > max => return Err(format!("integer range {min}..{max}")),
        ValueModel::IntegerRange { .. } | ValueModel::FreeText => {}
        ValueModel::Categorical { values, weights } => {
            if values.is_empty() {
                return Err("no categorical values".into());
            }
            if let Some(w) = weights {
                if w.len() != values.len() || w.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                    return Err("categorical weights must be positive and match values".into());
                }
            }
        }
        ValueModel::Mixture { components } => {
            if components.is_empty() || components.iter().any(|c| !(c.weight.is_finite() && c.weight > 0.0)) {
                return Err("mixture needs components with positive weights".into());
            }
            for c in components {
                check_model(&c.model)?;
            }
        }
    }
    Ok(())
}

/// Published table counts plus the supplementary names.
pub fn default_name_weights() -> Vec<NameWeight> {
    TEMPERATURE_ROW_NAMES
        .iter()
        .chain(HEART_RATE_ROW_NAMES.iter())
        .chain(SUPPLEMENTARY_ROW_NAMES.iter())
        .map(|(n, w)| NameWeight { name: (*n).to_owned(), weight: *w as f64 })
        .collect()
}

fn temperature_c() -> ValueModel {
    ValueModel::numeric(35.0, 40.0, 1)
}

fn temperature_c_or_f() -> ValueModel {
    ValueModel::mixture(vec![(1.0, temperature_c()), (1.0, ValueModel::numeric(95.0, 104.0, 1))])
}

pub fn default_value_models() -> BTreeMap<String, ValueModel> {
    let yes_no = ValueModel::categorical(&["Yes", "No"]);
    let limb_condition = ValueModel::categorical(&["Warm", "Cool", "Cold", "Hot"]);
    let site = ValueModel::categorical(&["Oral", "Axillary", "Tympanic", "Temporal", "Rectal", "Core"]);
    let mut m = BTreeMap::new();
    let mut put = |names: &[&str], model: ValueModel| {
        for n in names {
            m.insert((*n).to_owned(), model.clone());
        }
    };

    put(&["Temp", "Temperature", "Temp 2"], temperature_c_or_f());
    put(&["Temp (in Celsius)", "Tcore", "Patient Core Temperature", "Temperature (Blood - PA line)"], temperature_c());
    put(&["Temp src", "Temp Source"], site);
    put(
        &["RLE Temperature/Condition", "LLE Temperature/Condition", "LUE Temperature/Condition", "RUE Temperature/Condition"],
        limb_condition.clone(),
    );
    put(&["Temperature RLE", "Temperature LLE", "Temperature RUE", "Temperature LUE", "Skin Temp, Distal to Site"], limb_condition);
    put(
        &[
            "In last 6 hours temperature < 36 C or > 38.3 C",
            "Temp < 36 C (96.8 F) or >38.3 C (100.9 F)",
            "Temperature greater than 35.5 C Ax. or 36 C oral within 45 minutes of discharge",
            "Temperature > 37.8 C",
            "2.Heart Rate greater than 110 beats/minute",
            "Fetal Heart Rate auscultated for more than 60 seconds",
            "Heart Rate > 100?",
        ],
        yes_no.clone(),
    );
    put(&["Humidifier Temperature", "Humidifier Temperature (C)", "Circuit Water Temperature"], ValueModel::numeric(30.0, 41.0, 1));
    put(&["Bed Set Temp"], ValueModel::numeric(30.0, 38.0, 1));
    put(&["Air Temp"], ValueModel::numeric(20.0, 37.0, 1));
    put(&["Temperature Skin"], ValueModel::numeric(33.0, 38.0, 1));
    put(&["Temp Control"], ValueModel::categorical(&["Servo", "Manual", "Off"]));
    put(&["Temp Pacer Ventricular mA"], ValueModel::integer(0, 25));
    put(&["TEMP"], ValueModel::integer(35, 40));
    put(&["(Retired) Temp"], ValueModel::numeric(32.0, 37.0, 1));

    put(
        &[
            "Heart Rate",
            "HR",
            "Post RT Treatment Heart Rate",
            "Heart Rate (b/min)",
            "Baseline Heart Rate",
            "Heart Rate Used",
            "Beginning O2 Heart Rate",
            "Ending O2 Heart Rate",
            "6 Minutes Heart Rate",
            "Resting Heart Rate (bpm)",
            "Pulse",
        ],
        ValueModel::integer(45, 180),
    );
    put(&["Max Heart Rate (bpm)", "Measured Heart Rate Max", "Heart Rate Recovery at 1 minute (bpm)"], ValueModel::integer(90, 200));
    put(&["Fetal Heart Rate", "Fetal Heart Rate (FHR)"], ValueModel::integer(100, 180));
    put(&["PEWS Heart Rate Score", "Heart Rate Score"], ValueModel::integer(0, 3));
    put(&["Heart Rate Source", "Fetal Heart Rate Monitoring"], ValueModel::categorical(&["Monitor", "Apical", "Radial", "Doppler"]));
    put(&[ACTIVITY_QUESTION], ValueModel::categorical(&["0", "1", "2", "3", "4", "5 or more"]));

    put(
        &["Pain Level - 1st Site", "Pain Level - 2nd Site"],
        ValueModel::mixture(vec![(0.97, ValueModel::integer(0, 10)), (0.03, yes_no)]),
    );
    put(&["Height"], ValueModel::numeric(45.0, 200.0, 1));
    put(&["Weight"], ValueModel::numeric(2.0, 150.0, 1));
    put(&["O2"], ValueModel::numeric(0.5, 15.0, 1));
    put(&["N2O"], ValueModel::integer(0, 70));
    put(&["BSA"], ValueModel::numeric(0.2, 2.5, 2));
    put(&["CVP"], ValueModel::integer(0, 20));
    put(&["Diastolic BP", "ARTD", "Arterial Diastolic BP"], ValueModel::integer(35, 110));
    put(&["Systolic BP", "ARTS", "Arterial Systolic BP"], ValueModel::integer(70, 200));
    put(&["ARTM", "Mean Arterial Pressure"], ValueModel::integer(45, 130));
    put(&["Pplat", "PIP", "MnAwP"], ValueModel::integer(5, 40));
    put(&["PEEP"], ValueModel::integer(0, 20));
    put(&["Glasgow"], ValueModel::integer(3, 15));
    put(&["Urine", "Urine Output"], ValueModel::integer(0, 1500));
    put(&["COMP"], ValueModel::numeric(5.0, 80.0, 1));
    put(&["etMAC"], ValueModel::numeric(0.0, 2.0, 2));
    put(&["MV"], ValueModel::numeric(1.0, 15.0, 1));
    put(&["FiO2"], ValueModel::integer(21, 100));
    put(&["QT Interval", "QTc Interval"], ValueModel::integer(300, 520));
    put(&["Resp", "Resp rate"], ValueModel::integer(8, 60));
    put(&["Sevoflurane"], ValueModel::numeric(0.0, 8.0, 1));
    put(&["TV"], ValueModel::integer(30, 800));
    put(&["VO2"], ValueModel::integer(50, 900));
    put(&["temp"], ValueModel::integer(0, 400));
    m
}

pub fn default_contexts() -> BTreeMap<String, Vec<ContextWeight>> {
    let ctx = |t: &str, g: &str, w: f64| ContextWeight { template: t.into(), group: g.into(), weight: w };
    let mut m = BTreeMap::new();
    let mut put = |names: &[&str], c: Vec<ContextWeight>| {
        for n in names {
            m.insert((*n).to_owned(), c.clone());
        }
    };
    put(
        &[
            "Temp", "Temperature", "Temp (in Celsius)", "Tcore", "Temp src", "Temp Source", "Heart Rate", "HR", "Pulse",
            "Resp", "Resp rate", "Diastolic BP", "Systolic BP", "Height", "Weight", "BSA", "O2",
        ],
        vec![ctx("Vitals", "Vital Signs", 8.0), ctx("ED Triage", "Triage Vitals", 2.0)],
    );
    put(&["TEMP"], vec![ctx("Dialysis", "HD Machine Check", 9.0), ctx("Dialysis", "HD Treatment", 1.0)]);
    put(&["(Retired) Temp"], vec![ctx("Special Equipment", "Targeted Temperature Management", 1.0)]);
    put(&["temp"], vec![ctx("Dialysis", "HD Machine Check", 1.0)]);
    put(
        &["Pplat", "PIP", "MnAwP", "PEEP", "MV", "FiO2", "TV", "VO2", "COMP", "Humidifier Temperature", "Humidifier Temperature (C)", "Circuit Water Temperature"],
        vec![ctx("Respiratory", "Ventilator Settings", 1.0)],
    );
    put(&["etMAC", "N2O", "Sevoflurane"], vec![ctx("Anesthesia", "Gas Monitoring", 1.0)]);
    put(&["ARTD", "ARTS", "ARTM", "Arterial Diastolic BP", "Arterial Systolic BP", "Mean Arterial Pressure", "CVP"], vec![ctx("ICU Hemodynamics", "Arterial Line", 1.0)]);
    put(&["Pain Level - 1st Site", "Pain Level - 2nd Site"], vec![ctx("Pain Assessment", "Pain", 1.0)]);
    put(&["PEWS Heart Rate Score"], vec![ctx("PEWS", "Paediatric Early Warning Score", 1.0)]);
    put(&["Fetal Heart Rate", "Fetal Heart Rate (FHR)", "Fetal Heart Rate Monitoring"], vec![ctx("Labor and Delivery", "Fetal Assessment", 1.0)]);
    put(&["Bed Set Temp", "Temp Control", "Air Temp"], vec![ctx("NICU", "Isolette", 1.0)]);
    put(&["Urine", "Urine Output"], vec![ctx("Intake/Output", "Output", 1.0)]);
    put(&["Glasgow"], vec![ctx("Neuro", "Glasgow Coma Scale", 1.0)]);
    put(&["QT Interval", "QTc Interval"], vec![ctx("Cardiac", "ECG Intervals", 1.0)]);
    m
}

const PEWS_CONTEXT: (&str, &str) = ("PEWS", "Paediatric Early Warning Score");
const NOISE_PREFIXES: [&str; 8] = [
    "Driver Name",
    "Contact Phone",
    "Discharge Ride",
    "Family Contact",
    "Bedrail Order",
    "Care Comment",
    "Home Address",
    "Visitor Note",
];
const FIRST: [&str; 12] = ["Maria", "James", "Aiko", "Daniel", "Priya", "Omar", "Grace", "Luis", "Hannah", "Wei", "Fatima", "Noah"];
const LAST: [&str; 12] = ["Lopez", "Nguyen", "Smith", "Patel", "Kim", "Garcia", "Okafor", "Cohen", "Rossi", "Chen", "Haddad", "Brown"];
const STREETS: [&str; 8] = ["Alma St", "Oak Ave", "Page Mill Rd", "El Camino Real", "Bryant St", "Cedar Ln", "Hillview Dr", "Main St"];

enum Sampler {
    Decimal { lo: i64, hi: i64, decimals: u32 },
    Integer { lo: i64, hi: i64 },
    Categorical { values: Vec<String>, index: Option<WeightedIndex<f64>> },
    FreeText,
    Mixture { parts: Vec<Sampler>, index: WeightedIndex<f64> },
}

impl Sampler {
    fn compile(model: &ValueModel) -> Sampler {
        match model {
            ValueModel::NumericRange { min, max, decimals } => {
                let scale = 10f64.powi(*decimals as i32);
                Sampler::Decimal { lo: (min * scale).ceil() as i64, hi: (max * scale).floor() as i64, decimals: *decimals }
            }
            ValueModel::IntegerRange { min, max } => Sampler::Integer { lo: *min, hi: *max },
            ValueModel::Categorical { values, weights } => Sampler::Categorical {
                values: values.clone(),
                index: weights.as_ref().map(|w| WeightedIndex::new(w).expect("validated weights")),
            },
            ValueModel::FreeText => Sampler::FreeText,
            ValueModel::Mixture { components } => Sampler::Mixture {
                parts: components.iter().map(|c| Sampler::compile(&c.model)).collect(),
                index: WeightedIndex::new(components.iter().map(|c| c.weight)).expect("validated weights"),
            },
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> String {
        match self {
            Sampler::Decimal { lo, hi, decimals } => format_scaled(rng.gen_range(*lo..=(*hi).max(*lo)), *decimals),
            Sampler::Integer { lo, hi } => rng.gen_range(*lo..=*hi).to_string(),
            Sampler::Categorical { values, index } => {
                let i = match index {
                    Some(w) => w.sample(rng),
                    None => rng.gen_range(0..values.len()),
                };
                values[i].clone()
            }
            Sampler::FreeText => free_text(rng),
            Sampler::Mixture { parts, index } => parts[index.sample(rng)].sample(rng),
        }
    }
}

/// `k / 10^decimals` rendered exactly, without float formatting.
fn format_scaled(k: i64, decimals: u32) -> String {
    if decimals == 0 {
        return k.to_string();
    }
    let scale = 10i64.pow(decimals);
    let sign = if k < 0 { "-" } else { "" };
    let a = k.unsigned_abs();
    format!("{sign}{}.{:0width$}", a / scale as u64, a % scale as u64, width = decimals as usize)
}

fn free_text(rng: &mut ChaCha8Rng) -> String {
    let first = FIRST[rng.gen_range(0..FIRST.len())];
    let last = LAST[rng.gen_range(0..LAST.len())];
    let phone = format!("{}-555-{:04}", rng.gen_range(200..999), rng.gen_range(0..10_000));
    match rng.gen_range(0..3) {
        0 => format!("{first} {last} picking up, call {phone}"),
        1 => format!("{} {}, contact {first} {last}", rng.gen_range(10..9_999), STREETS[rng.gen_range(0..STREETS.len())]),
        _ => format!("Spoke with {first} {last} ({phone})"),
    }
}

struct NameSlot {
    name: String,
    value: usize,
    context: usize,
    unit: Option<String>,
}

struct ContextSampler {
    pairs: Vec<(String, String)>,
    index: WeightedIndex<f64>,
}

/// Deterministic record iterator. Build with [`generate`].
pub struct Generator {
    rng: ChaCha8Rng,
    remaining: u64,
    patients: u64,
    providers: u32,
    start: DateTime<Utc>,
    span_secs: i64,
    slots: Vec<NameSlot>,
    name_index: WeightedIndex<f64>,
    noise: Vec<NameSlot>,
    samplers: Vec<Sampler>,
    contexts: Vec<ContextSampler>,
    noise_fraction: f64,
    pews_fraction: f64,
    thousands_fraction: f64,
    provider_missing_fraction: f64,
    unit_fraction: f64,
    pews: Sampler,
    thousands: Sampler,
}

/// Validates `spec` and returns an iterator yielding exactly `total_rows` records.
pub fn generate(spec: &GeneratorSpec) -> Result<Generator, GeneratorError> {
    spec.validate()?;
    let mut samplers = vec![Sampler::FreeText];
    let mut model_slot: BTreeMap<&str, usize> = BTreeMap::new();
    let mut contexts = vec![ContextSampler::new(std::slice::from_ref(&spec.default_context))];
    let mut context_slot: BTreeMap<&str, usize> = BTreeMap::new();

    let mut slot_for = |name: &str| -> NameSlot {
        let value = match spec.value_models.get_key_value(name) {
            Some((k, model)) => *model_slot.entry(k.as_str()).or_insert_with(|| {
                samplers.push(Sampler::compile(model));
                samplers.len() - 1
            }),
            None => 0,
        };
        let context = match spec.contexts.get_key_value(name) {
            Some((k, ctxs)) => *context_slot.entry(k.as_str()).or_insert_with(|| {
                contexts.push(ContextSampler::new(ctxs));
                contexts.len() - 1
            }),
            None => 0,
        };
        NameSlot { name: name.to_owned(), value, context, unit: spec.units.get(name).cloned() }
    };

    let slots: Vec<NameSlot> = spec.name_weights.iter().map(|nw| slot_for(&nw.name)).collect();
    let noise: Vec<NameSlot> = (0..spec.noise_names)
        .map(|i| {
            let prefix = NOISE_PREFIXES[i as usize % NOISE_PREFIXES.len()];
            NameSlot { name: format!("{prefix} {:03}", i), value: 0, context: 0, unit: None }
        })
        .collect();
    let name_index = WeightedIndex::new(spec.name_weights.iter().map(|nw| nw.weight)).expect("validated weights");
    let start = crate::flow_model::parse_timestamp(&spec.start).expect("validated start");

    Ok(Generator {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        remaining: spec.total_rows,
        patients: spec.patients,
        providers: spec.providers.max(1),
        start,
        span_secs: i64::from(spec.span_days.max(1)) * 86_400,
        slots,
        name_index,
        noise,
        samplers,
        contexts,
        noise_fraction: spec.noise_fraction,
        pews_fraction: spec.pews_fraction,
        thousands_fraction: spec.thousands_fraction,
        provider_missing_fraction: spec.provider_missing_fraction,
        unit_fraction: spec.unit_fraction,
        pews: Sampler::Categorical {
            values: ["0", "1", "2", "3"].map(String::from).to_vec(),
            index: Some(WeightedIndex::new([2.0, 3.0, 6.0, 2.0]).expect("static weights")),
        },
        thousands: Sampler::Integer { lo: 1_000, hi: 3_999 },
    })
}

impl ContextSampler {
    fn new(ctxs: &[ContextWeight]) -> Self {
        ContextSampler {
            pairs: ctxs.iter().map(|c| (c.template.clone(), c.group.clone())).collect(),
            index: WeightedIndex::new(ctxs.iter().map(|c| c.weight)).expect("validated context weights"),
        }
    }
}

impl Iterator for Generator {
    type Item = FlowsheetRecord;

    fn next(&mut self) -> Option<FlowsheetRecord> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let rng = &mut self.rng;

        let patient = rng.gen_range(1..=self.patients);
        let offset = rng.gen_range(0..self.span_secs);
        let provider_id = if rng.gen_bool(self.provider_missing_fraction) {
            String::new()
        } else {
            format!("RN{:04}", rng.gen_range(1..=self.providers))
        };
        let slot = if !self.noise.is_empty() && rng.gen_bool(self.noise_fraction) {
            &self.noise[rng.gen_range(0..self.noise.len())]
        } else {
            &self.slots[self.name_index.sample(rng)]
        };
        let (mut template, mut group) = {
            let c = &self.contexts[slot.context];
            c.pairs[c.index.sample(rng)].clone()
        };

        let value = if slot.name == PEWS_TARGET && rng.gen_bool(self.pews_fraction) {
            template = PEWS_CONTEXT.0.to_owned();
            group = PEWS_CONTEXT.1.to_owned();
            self.pews.sample(rng)
        } else if slot.name == THOUSANDS_TARGET && rng.gen_bool(self.thousands_fraction) {
            self.thousands.sample(rng)
        } else {
            self.samplers[slot.value].sample(rng)
        };
        let unit_source = match &slot.unit {
            Some(u) if rng.gen_bool(self.unit_fraction) => Some(u.clone()),
            _ => None,
        };

        Some(FlowsheetRecord {
            patient_id: format!("P{patient:07}"),
            recorded_time: self.start + chrono::Duration::seconds(offset),
            provider_id,
            template_name: template,
            group_name: group,
            row_name: slot.name.clone(),
            value,
            unit_source,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.remaining as usize;
        (n, Some(n))
    }
}

/// Generates the corpus straight into `out`. Returns the row count.
pub fn write_corpus<W: Write>(spec: &GeneratorSpec, out: W, format: InputFormat) -> Result<u64, GeneratorError> {
    let gen = generate(spec)?;
    let io_err = |err| GeneratorError::Io { path: "<output>".into(), err };
    let mut w = RecordWriter::new(out, format).map_err(io_err)?;
    let mut n = 0;
    for r in gen {
        w.write(&r).map_err(io_err)?;
        n += 1;
    }
    w.finish().map_err(io_err)?;
    Ok(n)
}
