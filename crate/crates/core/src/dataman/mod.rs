//! Sample metadata, age labels, subject-exclusive splits, manifests and the
//! synthetic two-sensor eye renderer.

pub mod age;
pub mod manifest;
pub mod record;
pub mod sensor;
pub mod split;
pub mod synth;

pub use age::{assign_age_group, compute_age, AgeGroup, MAX_AGE, MIN_AGE};
pub use manifest::{parse_manifest, read_manifest, validate_manifest, write_manifest, MANIFEST_HEADER};
pub use record::{EyeSide, Modality, SampleRecord, Sensor};
pub use sensor::{apply_sensor_model, apply_sensor_model_with, SENSOR_B_GAIN, SENSOR_B_NOISE};
pub use split::{subject_exclusive_split, Split, SplitAssignment, DEFAULT_RATIOS};
pub use synth::{plan, render, synth_generate, EyeGeometry, EyeSpec, SynthParams};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DataError {
    #[error("age {0} outside the 4..=16 study range")]
    OutOfStudyRange(i64),
    #[error("need at least 3 subjects, got {0}")]
    InsufficientSubjects(usize),
    #[error("manifest line {line}: {message}")]
    ManifestParse { line: usize, message: String },
    #[error("manifest schema: {0}")]
    Schema(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("missing image {0}")]
    MissingImage(String),
    #[error("i/o: {0}")]
    Io(String),
}
