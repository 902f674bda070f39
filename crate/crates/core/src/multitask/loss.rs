use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::dataman::AgeGroup;

const P_MIN: f64 = 1e-7;
const P_MAX: f64 = 1.0 - 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocalConfig {
    pub gamma: f64,
    pub smoothing: f64,
    /// Per-class weights indexed like the logits.
    pub class_weights: [f64; 2],
}

impl Default for FocalConfig {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            smoothing: 0.05,
            class_weights: [1.0, 1.0],
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean over both classes of `w_c |t_c - p_c|^gamma BCE(p_c, t_c)` with
/// sigmoid probabilities and smoothed one-hot targets.
pub fn focal_loss(logits: [f64; 2], target: AgeGroup, gamma: f64, class_weights: [f64; 2], smoothing: f64) -> f64 {
    focal_loss_grad(logits, target, gamma, class_weights, smoothing).0
}

/// Focal loss and its gradient with respect to both logits.
pub fn focal_loss_grad(
    logits: [f64; 2],
    target: AgeGroup,
    gamma: f64,
    class_weights: [f64; 2],
    smoothing: f64,
) -> (f64, [f64; 2]) {
    let mut loss = 0.0;
    let mut grad = [0.0; 2];
    for c in 0..2 {
        let raw = sigmoid(logits[c]);
        let p = raw.clamp(P_MIN, P_MAX);
        let dp = if raw == p { p * (1.0 - p) } else { 0.0 };
        let t = if c == target.index() { 1.0 - smoothing } else { smoothing };
        let bce = -(t * p.ln() + (1.0 - t) * (1.0 - p).ln());
        let u = (t - p).abs();
        let mod_factor = u.powf(gamma);
        loss += class_weights[c] * mod_factor * bce;

        let d_bce = if dp == 0.0 { 0.0 } else { p - t };
        let d_mod = if gamma == 0.0 || u == 0.0 {
            0.0
        } else {
            gamma * u.powf(gamma - 1.0) * (p - t).signum() * dp
        };
        grad[c] = class_weights[c] * (d_mod * bce + mod_factor * d_bce) / 2.0;
    }
    (loss / 2.0, grad)
}

pub fn mse_loss(pred: &[f64], truth: &[f64]) -> Result<f64, TrainError> {
    if pred.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    if pred.len() != truth.len() {
        return Err(TrainError::LengthMismatch(format!("{} predictions, {} targets", pred.len(), truth.len())));
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

pub fn total_loss(cls: f64, reg: f64, alpha: f64) -> f64 {
    cls + alpha * reg
}

/// Balancer that keeps the weighted regression loss at a fixed fraction of
/// the classification loss, tracked through exponential moving averages.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub ema_cls: f64,
    pub ema_reg: f64,
    pub ema_decay: f64,
    pub target_ratio: f64,
    pub clamp: (f64, f64),
    /// False until the first update, which seeds the averages directly.
    pub primed: bool,
}

impl LossWeights {
    pub fn new(alpha0: f64) -> Self {
        Self {
            alpha: alpha0,
            ema_cls: 0.0,
            ema_reg: 0.0,
            ema_decay: 0.9,
            target_ratio: 0.25,
            clamp: (0.01, 10.0),
            primed: false,
        }
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::new(0.25)
    }
}

pub fn update_alpha(weights: LossWeights, batch_cls: f64, batch_reg: f64) -> LossWeights {
    let mut w = weights;
    if w.primed {
        w.ema_cls = w.ema_decay * w.ema_cls + (1.0 - w.ema_decay) * batch_cls.max(0.0);
        w.ema_reg = w.ema_decay * w.ema_reg + (1.0 - w.ema_decay) * batch_reg.max(0.0);
    } else {
        w.ema_cls = batch_cls.max(0.0);
        w.ema_reg = batch_reg.max(0.0);
        w.primed = true;
    }
    w.alpha = (w.target_ratio * w.ema_cls / w.ema_reg.max(1e-8)).clamp(w.clamp.0, w.clamp.1);
    w
}

/// `N / (2 N_c)` per class, indexed young then old.
pub fn inverse_frequency_weights(labels: &[AgeGroup]) -> Result<[f64; 2], TrainError> {
    let mut counts = [0usize; 2];
    for l in labels {
        counts[l.index()] += 1;
    }
    for g in AgeGroup::ALL {
        if counts[g.index()] == 0 {
            return Err(TrainError::MissingClass(g));
        }
    }
    let n = labels.len() as f64;
    Ok(counts.map(|c| n / (2.0 * c as f64)))
}

/// Batch objective with gradients at both heads.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchLoss {
    pub cls: f64,
    pub reg: f64,
    pub total: f64,
    /// `[N * 2]` gradient of `total` with respect to the logits.
    pub d_logits: Vec<f64>,
    /// `[N]` gradient of `total` with respect to the age estimates.
    pub d_ages: Vec<f64>,
}

/// Batch-mean focal loss plus `alpha` times the batch MSE.
pub fn multitask_loss(
    logits: &[f64],
    ages: &[f64],
    groups: &[AgeGroup],
    true_ages: &[f64],
    alpha: f64,
    focal: &FocalConfig,
) -> Result<BatchLoss, TrainError> {
    let n = groups.len();
    if n == 0 {
        return Err(TrainError::EmptyBatch);
    }
    if logits.len() != 2 * n || ages.len() != n || true_ages.len() != n {
        return Err(TrainError::LengthMismatch(format!(
            "{} logits, {} ages, {} groups, {} targets",
            logits.len(),
            ages.len(),
            n,
            true_ages.len()
        )));
    }
    let mut cls = 0.0;
    let mut d_logits = Vec::with_capacity(2 * n);
    for (i, &g) in groups.iter().enumerate() {
        let (l, d) = focal_loss_grad(
            [logits[2 * i], logits[2 * i + 1]],
            g,
            focal.gamma,
            focal.class_weights,
            focal.smoothing,
        );
        cls += l;
        d_logits.extend(d.map(|v| v / n as f64));
    }
    cls /= n as f64;
    let reg = mse_loss(ages, true_ages)?;
    let d_ages = ages
        .iter()
        .zip(true_ages)
        .map(|(p, t)| alpha * 2.0 * (p - t) / n as f64)
        .collect();
    Ok(BatchLoss {
        cls,
        reg,
        total: total_loss(cls, reg, alpha),
        d_logits,
        d_ages,
    })
}
