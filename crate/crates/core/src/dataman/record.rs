use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::age::{assign_age_group, compute_age, AgeGroup};
use super::DataError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sensor {
    #[serde(rename = "A")]
    SensorA,
    #[serde(rename = "B")]
    SensorB,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EyeSide {
    #[serde(rename = "L")]
    Left,
    #[serde(rename = "R")]
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Eye,
    Iris,
}

macro_rules! code_enum {
    ($t:ty, $($v:path => $s:literal),+) => {
        impl $t {
            pub fn code(self) -> &'static str {
                match self { $($v => $s),+ }
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.code())
            }
        }
        impl FromStr for $t {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($s => Ok($v),)+
                    other => Err(format!("unknown {} {other:?}", stringify!($t))),
                }
            }
        }
    };
}

code_enum!(Sensor, Sensor::SensorA => "A", Sensor::SensorB => "B");
code_enum!(EyeSide, EyeSide::Left => "L", EyeSide::Right => "R");
code_enum!(Modality, Modality::Eye => "eye", Modality::Iris => "iris");

/// Metadata of one image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub subject_id: String,
    pub birth_year: i32,
    pub capture_year: i32,
    pub age: u32,
    pub sensor: Sensor,
    pub eye_side: EyeSide,
    pub modality: Modality,
    pub image_path: String,
}

impl SampleRecord {
    pub fn new(
        subject_id: impl Into<String>,
        birth_year: i32,
        capture_year: i32,
        sensor: Sensor,
        eye_side: EyeSide,
        modality: Modality,
        image_path: impl Into<String>,
    ) -> Result<Self, DataError> {
        Ok(Self {
            subject_id: subject_id.into(),
            birth_year,
            capture_year,
            age: compute_age(birth_year, capture_year)?,
            sensor,
            eye_side,
            modality,
            image_path: image_path.into(),
        })
    }

    pub fn group(&self) -> AgeGroup {
        assign_age_group(self.age).expect("age validated on construction")
    }

    /// File stem of the image path, unique per image within a manifest.
    pub fn id(&self) -> String {
        std::path::Path::new(&self.image_path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.image_path.clone())
    }
}
