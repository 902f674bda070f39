use std::path::{Path, PathBuf};

use ocularage_core::dataman::{
    apply_sensor_model, plan, render, subject_exclusive_split, validate_manifest, write_manifest, Modality,
    SampleRecord, Split,
};
use ocularage_core::eval::{cross_sensor_eval, evaluate, saliency_map, EvalDocument, EvalError};
use ocularage_core::multitask::{checkpoint_modality, checkpoint_norm_stats, train_with, Dataset, TrainHistory};
use ocularage_core::nnet::Checkpoint;
use ocularage_core::par;
use ocularage_core::preproc::{prepare_eye, prepare_iris, save_strip, GrayImage, NormStats};

use crate::workspace::{load_dataset, read_split, records, write_text, SplitFile, EXCLUSIONS_HEADER};
use crate::{io_err, CliError, RunConfig};

const CHUNK: usize = 64;
const SENSOR_SEED_SALT: u64 = 0x5e05_0b1a_5000_0001;
const SALIENCY_SAMPLES: usize = 2;

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// Renders the synthetic corpus, applies each record's sensor model and
/// writes images plus the manifest. Returns the manifest path.
pub fn cmd_synth(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let specs = plan(&cfg.synth)?;
    create_dir(&cfg.workspace.join("images"))?;
    par::with_workers(cfg.workers, || -> Result<(), CliError> {
        for chunk in specs.chunks(CHUNK) {
            let written = par::map_slice(chunk, |s| {
                let img = apply_sensor_model(&render(s), s.record.sensor, s.noise_seed ^ SENSOR_SEED_SALT);
                img.save_png(&cfg.workspace.join(&s.record.image_path))
            });
            written.into_iter().collect::<Result<Vec<_>, _>>()?;
        }
        Ok(())
    })?;
    let records: Vec<SampleRecord> = specs.into_iter().map(|s| s.record).collect();
    let path = cfg.manifest_path();
    write_manifest(&path, &records)?;
    Ok(path)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessSummary {
    pub total: usize,
    pub excluded: usize,
}

impl PreprocessSummary {
    pub fn exclusion_rate(&self) -> f64 {
        self.excluded as f64 / self.total.max(1) as f64
    }
}

fn csv_field(s: &str) -> String {
    s.replace([',', '\n', '\r'], " ")
}

/// Caches 320x240 eye rasters and normalized iris strips. Images whose
/// boundaries cannot be located go to `exclusions.csv` and are dropped from
/// both modalities.
pub fn cmd_preprocess(cfg: &RunConfig) -> Result<PreprocessSummary, CliError> {
    let records = records(cfg)?;
    validate_manifest(&records, &cfg.workspace)?;
    let eye_dir = cfg.cache_dir(Modality::Eye);
    let iris_dir = cfg.cache_dir(Modality::Iris);
    create_dir(&eye_dir)?;
    create_dir(&iris_dir)?;
    let mut exclusions = String::from(EXCLUSIONS_HEADER);
    exclusions.push('\n');
    let mut excluded = 0;
    par::with_workers(cfg.workers, || -> Result<(), CliError> {
        for chunk in records.chunks(CHUNK) {
            let outcomes = par::map_slice(chunk, |r| -> Result<Option<String>, CliError> {
                let id = r.id();
                let frame = GrayImage::load_png(&cfg.workspace.join(&r.image_path))?;
                let eye = prepare_eye(&frame).quantized();
                match prepare_iris(&eye, &cfg.segmentation) {
                    Ok(iris) => {
                        eye.save_png(&eye_dir.join(format!("{id}.png")))?;
                        save_strip(&iris_dir, &id, &iris)?;
                        Ok(None)
                    }
                    Err(e) => Ok(Some(e.to_string())),
                }
            });
            for (r, outcome) in chunk.iter().zip(outcomes) {
                if let Some(reason) = outcome? {
                    excluded += 1;
                    exclusions.push_str(&format!(
                        "{},{},{},{}\n",
                        r.id(),
                        r.subject_id,
                        csv_field(&r.image_path),
                        csv_field(&reason)
                    ));
                }
            }
        }
        Ok(())
    })?;
    write_text(&cfg.exclusions_path(), &exclusions)?;
    Ok(PreprocessSummary {
        total: records.len(),
        excluded,
    })
}

/// Subject-exclusive split over the images that survived preprocessing.
pub fn cmd_split(cfg: &RunConfig) -> Result<SplitFile, CliError> {
    let usable = crate::workspace::usable_records(cfg)?;
    let assignment = subject_exclusive_split(&usable, cfg.split.ratios, cfg.split.seed)?;
    let file = SplitFile {
        seed: cfg.split.seed,
        ratios: cfg.split.ratios,
        image_fractions: assignment.image_fractions(&usable),
        assignment,
    };
    let json = serde_json::to_string_pretty(&file).expect("split serializes");
    write_text(&cfg.split_path(), &(json + "\n"))?;
    Ok(file)
}

pub fn training_sets(cfg: &RunConfig, modality: Modality) -> Result<(Dataset, Dataset), CliError> {
    let keep = |s| cfg.train_sensor.accepts(s);
    Ok((
        load_dataset(cfg, modality, Split::Train, keep)?,
        load_dataset(cfg, modality, Split::Val, keep)?,
    ))
}

/// Trains one modality and writes the best checkpoint and `history.csv`.
pub fn cmd_train(
    cfg: &RunConfig,
    modality: Modality,
    on_epoch: &mut (dyn FnMut(&ocularage_core::multitask::EpochRecord) + Send),
) -> Result<(PathBuf, TrainHistory), CliError> {
    let (train_set, val_set) = training_sets(cfg, modality)?;
    let mut tc = cfg.train.clone();
    tc.modality = modality;
    let (ckpt, history) = par::with_workers(cfg.workers, || {
        train_with(&tc, &cfg.augment, &train_set, &val_set, on_epoch)
    })?;
    let path = cfg.checkpoint_path(modality);
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    ckpt.save(&path).map_err(|e| CliError::Train(format!("{}: {e}", path.display())))?;
    history
        .write_csv(&cfg.model_dir(modality).join("history.csv"))
        .map_err(CliError::from)?;
    Ok((path, history))
}

pub fn load_checkpoint(path: &Path, modality: Modality) -> Result<Checkpoint, CliError> {
    let ckpt = Checkpoint::load(path).map_err(|e| CliError::Eval(format!("{}: {e}", path.display())))?;
    match checkpoint_modality(&ckpt) {
        Some(m) if m != modality => Err(CliError::Config(format!(
            "checkpoint {} was trained on {m} input, not {modality}",
            path.display()
        ))),
        _ => Ok(ckpt),
    }
}

fn model_id(path: &Path, modality: Modality) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    format!("{modality}/{stem}")
}

/// Evaluates on the test split and writes JSON, CSV, SVG and saliency
/// artifacts. With `cross_sensor` the other sensor's test images are scored
/// too and a delta summary is added.
pub fn cmd_eval(
    cfg: &RunConfig,
    modality: Modality,
    checkpoint: &Path,
    cross_sensor: bool,
) -> Result<EvalDocument, CliError> {
    let ckpt = load_checkpoint(checkpoint, modality)?;
    let split = read_split(cfg)?;
    let train_subjects = &split.assignment.train;
    let train_sensor = cfg.train_sensor;
    let same = load_dataset(cfg, modality, Split::Test, |s| train_sensor.accepts(s))?;
    if same.is_empty() {
        return Err(EvalError::EmptyInput.into());
    }
    let doc = par::with_workers(cfg.workers, || -> Result<EvalDocument, CliError> {
        let id = model_id(checkpoint, modality);
        if cross_sensor {
            let other_sensor = train_sensor
                .other()
                .ok_or_else(|| CliError::Config("--cross-sensor needs train_sensor = \"A\" or \"B\"".into()))?;
            let other = load_dataset(cfg, modality, Split::Test, |s| s == other_sensor)?;
            if other.is_empty() {
                return Err(CliError::Data(format!("no {other_sensor} images in the test split")));
            }
            let pair = cross_sensor_eval(&ckpt, &same, &other, train_subjects)?;
            Ok(EvalDocument::new(&id, &modality.to_string(), pair.same_sensor.clone(), Some(pair)))
        } else {
            let report = evaluate(&ckpt, &same, train_subjects)?;
            Ok(EvalDocument::new(&id, &modality.to_string(), report, None))
        }
    })?;
    doc.validate()?;
    let dir = cfg.report_dir(modality);
    doc.write_all(&dir)?;
    write_saliency(&ckpt, &same, &dir.join("saliency"))?;
    Ok(doc)
}

fn write_saliency(ckpt: &Checkpoint, data: &Dataset, dir: &Path) -> Result<(), CliError> {
    create_dir(dir)?;
    let stats = checkpoint_norm_stats(ckpt).unwrap_or(match data.modality {
        Modality::Eye => NormStats::EYE,
        Modality::Iris => NormStats::IRIS,
    });
    for i in 0..data.len().min(SALIENCY_SAMPLES) {
        let ex = &data.examples[i];
        let x = data.batch(&[i], stats, None)?;
        let heat = saliency_map(&ckpt.net, &x, ex.group())?;
        heat.save_png(&dir.join(format!("{}_{:?}.png", ex.id, ex.group()).to_lowercase()))?;
    }
    Ok(())
}
