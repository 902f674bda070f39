use std::path::{Path, PathBuf};

use ocularage_core::dataman::{Modality, Sensor, SynthParams, DEFAULT_RATIOS};
use ocularage_core::multitask::TrainConfig;
use ocularage_core::preproc::{AugmentPolicy, SegmentationConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const WORKSPACE_ENV: &str = "OCULARAGE_WORKSPACE";

/// Which capture device's records a model is trained on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum SensorFilter {
    #[default]
    A,
    B,
    #[serde(rename = "all")]
    All,
}

impl SensorFilter {
    pub fn accepts(self, sensor: Sensor) -> bool {
        match self {
            Self::A => sensor == Sensor::SensorA,
            Self::B => sensor == Sensor::SensorB,
            Self::All => true,
        }
    }

    /// The sensor not used for training, if there is exactly one.
    pub fn other(self) -> Option<Sensor> {
        match self {
            Self::A => Some(Sensor::SensorB),
            Self::B => Some(Sensor::SensorA),
            Self::All => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            ratios: DEFAULT_RATIOS,
            seed: 42,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub warmup: usize,
    pub iterations: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            warmup: 100,
            iterations: 1000,
        }
    }
}

/// Everything a pipeline run needs, read from one TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Relative paths resolve against the config file's directory.
    pub workspace: PathBuf,
    /// Relative to the workspace.
    pub manifest: PathBuf,
    /// Relative to the workspace; defaults to `models/<modality>/model.ocag`.
    pub checkpoint: Option<PathBuf>,
    /// Overrides `train.modality` when set.
    pub modality: Option<Modality>,
    /// Thread count for data-parallel work; 0 uses every core.
    pub workers: usize,
    pub train_sensor: SensorFilter,
    pub synth: SynthParams,
    pub segmentation: SegmentationConfig,
    pub augment: AugmentPolicy,
    pub split: SplitSection,
    pub train: TrainConfig,
    pub bench: BenchSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            workspace: PathBuf::from("workspace"),
            manifest: PathBuf::from("manifest.csv"),
            checkpoint: None,
            modality: None,
            workers: 1,
            train_sensor: SensorFilter::A,
            synth: SynthParams::default(),
            segmentation: SegmentationConfig::default(),
            augment: AugmentPolicy::default(),
            split: SplitSection::default(),
            train: TrainConfig::default(),
            bench: BenchSection::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and resolves the workspace against its directory
    /// unless `OCULARAGE_WORKSPACE` is set.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        match std::env::var_os(WORKSPACE_ENV) {
            Some(ws) if !ws.is_empty() => cfg.workspace = PathBuf::from(ws),
            _ => {
                if cfg.workspace.is_relative() {
                    let base = path.parent().unwrap_or(Path::new("."));
                    cfg.workspace = base.join(&cfg.workspace);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: &dyn std::fmt::Display| CliError::Config(e.to_string());
        self.synth.validate().map_err(|e| cfg(&e))?;
        self.augment.validate().map_err(|e| cfg(&e))?;
        self.train.validate().map_err(|e| cfg(&e))?;
        let r = self.split.ratios;
        if r.iter().any(|&x| !(x >= 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(CliError::Config(format!("split.ratios {r:?} must be non-negative and sum to 1")));
        }
        if self.bench.iterations == 0 {
            return Err(CliError::Config("bench.iterations must be positive".into()));
        }
        Ok(())
    }

    pub fn modality(&self) -> Modality {
        self.modality.unwrap_or(self.train.modality)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.workspace.join(&self.manifest)
    }

    pub fn checkpoint_path(&self, modality: Modality) -> PathBuf {
        match &self.checkpoint {
            Some(p) => self.workspace.join(p),
            None => self.model_dir(modality).join("model.ocag"),
        }
    }

    pub fn model_dir(&self, modality: Modality) -> PathBuf {
        self.workspace.join("models").join(modality.to_string())
    }

    pub fn report_dir(&self, modality: Modality) -> PathBuf {
        self.workspace.join("reports").join(modality.to_string())
    }

    pub fn cache_dir(&self, modality: Modality) -> PathBuf {
        self.workspace.join("cache").join(modality.to_string())
    }

    pub fn exclusions_path(&self) -> PathBuf {
        self.workspace.join("exclusions.csv")
    }

    pub fn split_path(&self) -> PathBuf {
        self.workspace.join("split.json")
    }
}
