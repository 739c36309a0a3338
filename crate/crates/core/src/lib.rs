//! Streaming ETL that turns raw EHR flowsheet exports into OMOP CDM rows.
//!
//! Two output paths run in one pass:
//!
//! * every valid record becomes an OBSERVATION row carrying a canonical JSON
//!   payload (suppressed entirely in de-identified mode);
//! * records whose row name is in the curated mapping table and whose value
//!   is numeric become LOINC-coded MEASUREMENT rows.
//!
//! Alongside sit a row-name profiler for mapping curation, a seeded synthetic
//! corpus generator, and summary reports over the measurement output.

pub mod flow_model;
pub mod ingest;
pub mod mapcfg;
pub mod profiler;
pub mod report;
pub mod synth_gen;
pub mod transform;
mod tsv;

pub use flow_model::{
    FlowsheetRecord, MappingRule, MeasurementFlag, MeasurementRow, ObservationRow, TemperatureUnit, TransformReport,
};
pub use ingest::{open_path, open_stream, InputFormat, Ingested, RecordStream, Source};
pub use mapcfg::{default_mapping, load_mapping, MappingTable};
pub use transform::{run_pipeline, Mode, PipelineOutputs, TransformConfig};
