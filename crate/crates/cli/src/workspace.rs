//! On-disk layout shared by the subcommands: manifest, cached rasters,
//! exclusions and the split assignment.

use std::collections::BTreeSet;
use std::path::Path;

use ocularage_core::dataman::{read_manifest, Modality, SampleRecord, Sensor, Split, SplitAssignment};
use ocularage_core::multitask::{Dataset, Example};
use ocularage_core::par;
use ocularage_core::preproc::{load_strip, GrayImage};
use serde::{Deserialize, Serialize};

use crate::{io_err, CliError, RunConfig};

pub const EXCLUSIONS_HEADER: &str = "id,subject_id,image_path,reason";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFile {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub image_fractions: [f64; 3],
    pub assignment: SplitAssignment,
}

pub fn write_text(path: &Path, body: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(path, body).map_err(|e| io_err(path, e))
}

pub fn records(cfg: &RunConfig) -> Result<Vec<SampleRecord>, CliError> {
    Ok(read_manifest(&cfg.manifest_path())?)
}

pub fn excluded_ids(cfg: &RunConfig) -> Result<BTreeSet<String>, CliError> {
    let path = cfg.exclusions_path();
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Data(format!("{}: {e} (run preprocess first)", path.display())))?;
    Ok(text
        .lines()
        .skip(1)
        .filter_map(|l| l.split(',').next())
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect())
}

/// Manifest records that survived preprocessing.
pub fn usable_records(cfg: &RunConfig) -> Result<Vec<SampleRecord>, CliError> {
    let excluded = excluded_ids(cfg)?;
    Ok(records(cfg)?.into_iter().filter(|r| !excluded.contains(&r.id())).collect())
}

pub fn read_split(cfg: &RunConfig) -> Result<SplitFile, CliError> {
    let path = cfg.split_path();
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Data(format!("{}: {e} (run split first)", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Loads the cached rasters of one split, keeping records whose sensor
/// passes `keep_sensor`.
pub fn load_dataset(
    cfg: &RunConfig,
    modality: Modality,
    split: Split,
    keep_sensor: impl Fn(Sensor) -> bool,
) -> Result<Dataset, CliError> {
    let assignment = read_split(cfg)?.assignment;
    let subjects = assignment.get(split);
    let selected: Vec<SampleRecord> = usable_records(cfg)?
        .into_iter()
        .filter(|r| subjects.contains(&r.subject_id) && keep_sensor(r.sensor))
        .collect();
    let dir = cfg.cache_dir(modality);
    let loaded = par::map_slice(&selected, |r| -> Result<Example, CliError> {
        let id = r.id();
        match modality {
            Modality::Eye => {
                let p = dir.join(format!("{id}.png"));
                Ok(Example::from_eye(r, &GrayImage::load_png(&p)?))
            }
            Modality::Iris => Ok(Example::from_iris(r, &load_strip(&dir, &id)?)),
        }
    });
    let mut data = Dataset::new(modality);
    for ex in loaded {
        data.push(ex?)?;
    }
    Ok(data)
}
