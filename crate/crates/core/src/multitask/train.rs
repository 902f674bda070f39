use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Normalization, TrainConfig};
use super::data::Dataset;
use super::loss::{inverse_frequency_weights, multitask_loss, update_alpha, FocalConfig, LossWeights};
use super::TrainError;
use crate::dataman::Modality;
use crate::nnet::{
    adam_step, scheduled_lr, AdamConfig, AdamState, Checkpoint, Mode, OcularNet, RngState, ScheduleState, Tensor,
    Topology,
};
use crate::preproc::{AugmentPolicy, NormStats};

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_loss,val_cls_loss,val_reg_loss,lr,alpha";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_cls_loss: f64,
    pub val_reg_loss: f64,
    pub lr: f64,
    pub alpha: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were kept.
    pub best_epoch: u32,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(HISTORY_HEADER);
        s.push('\n');
        for r in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.epoch, r.train_loss, r.val_loss, r.val_cls_loss, r.val_reg_loss, r.lr, r.alpha
            ));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), TrainError> {
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(self.to_csv().as_bytes()))
            .map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))
    }
}

/// Patience counter over a monitored loss.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: u32,
    pub best: f64,
    pub bad_epochs: u32,
}

impl EarlyStopping {
    pub fn new(patience: u32) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Records one epoch's loss; returns `true` when training should stop.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        self.bad_epochs >= self.patience
    }
}

/// Network topology for a modality.
pub fn topology_for(modality: Modality, widths: &crate::nnet::Widths) -> Topology {
    let d = Dataset::new(modality).input_shape();
    Topology::ocular_with(d[0], d[1], d[2], widths)
}

/// Normalization constants recorded in a checkpoint by [`train`].
pub fn checkpoint_norm_stats(ckpt: &Checkpoint) -> Option<NormStats> {
    serde_json::from_value(ckpt.meta.get("norm_stats")?.clone()).ok()
}

pub fn checkpoint_modality(ckpt: &Checkpoint) -> Option<Modality> {
    serde_json::from_value(ckpt.meta.get("modality")?.clone()).ok()
}

pub fn train(
    config: &TrainConfig,
    policy: &AugmentPolicy,
    train_set: &Dataset,
    val_set: &Dataset,
) -> Result<(Checkpoint, TrainHistory), TrainError> {
    train_with(config, policy, train_set, val_set, &mut |_| {})
}

fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| f64::from(v)).collect()
}

fn to_tensor(shape: &[usize], v: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), v.iter().map(|&x| x as f32).collect()).expect("gradient matches output shape")
}

/// Mean classification and regression losses over a dataset in eval mode.
fn evaluate_losses(
    net: &OcularNet,
    data: &Dataset,
    stats: NormStats,
    focal: &FocalConfig,
    batch_size: usize,
) -> Result<(f64, f64), TrainError> {
    let groups = data.groups();
    let ages = data.ages();
    let indices: Vec<usize> = (0..data.len()).collect();
    let (mut cls, mut reg) = (0.0, 0.0);
    for chunk in indices.chunks(batch_size) {
        let out = net.infer(data.batch(chunk, stats, None)?)?;
        let g: Vec<_> = chunk.iter().map(|&i| groups[i]).collect();
        let a: Vec<_> = chunk.iter().map(|&i| ages[i]).collect();
        let l = multitask_loss(&to_f64(&out.logits), &to_f64(&out.ages), &g, &a, 1.0, focal)?;
        cls += l.cls * chunk.len() as f64;
        reg += l.reg * chunk.len() as f64;
    }
    Ok((cls / data.len() as f64, reg / data.len() as f64))
}

/// Trains with early stopping and returns the checkpoint of the epoch with
/// the lowest validation loss. `on_epoch` sees every finished epoch.
pub fn train_with(
    config: &TrainConfig,
    policy: &AugmentPolicy,
    train_set: &Dataset,
    val_set: &Dataset,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(Checkpoint, TrainHistory), TrainError> {
    config.validate()?;
    policy.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    if train_set.modality != config.modality || val_set.modality != config.modality {
        return Err(TrainError::InvalidConfig(format!(
            "config modality {:?} does not match the datasets",
            config.modality
        )));
    }

    let stats = match config.normalization {
        Normalization::Computed => train_set.compute_stats()?,
        Normalization::Preset => match config.modality {
            Modality::Eye => NormStats::EYE,
            Modality::Iris => NormStats::IRIS,
        },
    };
    stats.check()?;
    let groups = train_set.groups();
    let ages = train_set.ages();
    let class_weights = if config.class_weighting {
        inverse_frequency_weights(&groups)?
    } else {
        [1.0, 1.0]
    };
    let focal = FocalConfig {
        gamma: config.focal_gamma,
        smoothing: config.label_smoothing,
        class_weights,
    };
    let adam_cfg = AdamConfig {
        weight_decay: config.weight_decay,
        ..AdamConfig::default()
    };

    let mut net = OcularNet::<f32>::init(topology_for(config.modality, &config.widths), config.seed)?;
    let mut adam = AdamState::for_params(&net.params());
    let mut schedule = ScheduleState::new(config.lr, config.min_lr, config.cycle_len, config.cycle_mult);
    let mut weights = LossWeights::new(config.alpha0);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut history = TrainHistory::default();
    let mut best: Option<Checkpoint> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.epochs {
        let lr = scheduled_lr(&schedule);
        let alpha = weights.alpha;
        order.shuffle(&mut rng);
        let (mut sum_total, mut sum_cls, mut sum_reg) = (0.0, 0.0, 0.0);
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let seeds: Vec<u64> = batch.iter().map(|_| rng.random()).collect();
            let augment_with = config.augment.then_some((policy, seeds.as_slice()));
            let x = train_set.batch(batch, stats, augment_with)?;
            let (out, cache) = net.forward(x, Mode::Train)?;
            let g: Vec<_> = batch.iter().map(|&i| groups[i]).collect();
            let a: Vec<_> = batch.iter().map(|&i| ages[i]).collect();
            let loss = multitask_loss(&to_f64(&out.logits), &to_f64(&out.ages), &g, &a, alpha, &focal)?;
            if !loss.total.is_finite() {
                return Err(TrainError::DivergedLoss {
                    epoch,
                    batch: b,
                    cls: loss.cls,
                    reg: loss.reg,
                });
            }
            let grads = net.backward(
                &cache,
                to_tensor(out.logits.shape(), &loss.d_logits),
                to_tensor(out.ages.shape(), &loss.d_ages),
            )?;
            net.commit_running_stats(&cache);
            adam_step(&mut net.params_mut(), &grads, &mut adam, lr, &adam_cfg)?;
            let n = batch.len() as f64;
            sum_total += loss.total * n;
            sum_cls += loss.cls * n;
            sum_reg += loss.reg * n;
        }
        let n = train_set.len() as f64;
        let (val_cls, val_reg) = evaluate_losses(&net, val_set, stats, &focal, config.batch_size)?;
        let val_loss = val_cls + alpha * val_reg;
        if !val_loss.is_finite() {
            return Err(TrainError::DivergedLoss {
                epoch,
                batch: usize::MAX,
                cls: val_cls,
                reg: val_reg,
            });
        }
        let record = EpochRecord {
            epoch,
            train_loss: sum_total / n,
            val_loss,
            val_cls_loss: val_cls,
            val_reg_loss: val_reg,
            lr,
            alpha,
        };
        history.epochs.push(record);
        on_epoch(&record);

        weights = update_alpha(weights, sum_cls / n, sum_reg / n);
        schedule.advance();
        if val_loss < stopper.best {
            history.best_epoch = epoch;
            best = Some(Checkpoint {
                net: net.clone(),
                adam: Some(adam.clone()),
                epoch,
                rng: Some(RngState::capture(&rng)),
                meta: serde_json::json!({
                    "modality": config.modality,
                    "norm_stats": stats,
                    "class_weights": class_weights,
                    "loss_weights": weights,
                    "schedule": schedule,
                    "config": config,
                }),
            });
        }
        if stopper.observe(val_loss) {
            break;
        }
    }
    let best = best.expect("the first epoch always improves on an infinite best");
    Ok((best, history))
}
