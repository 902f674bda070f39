use serde::{Deserialize, Serialize};

/// Cosine annealing with warm restarts, stepped once per epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub base_lr: f64,
    pub min_lr: f64,
    /// Length of the current cycle in epochs.
    pub cycle_len: f64,
    pub cycle_mult: f64,
    pub epoch_in_cycle: u32,
}

impl Default for ScheduleState {
    fn default() -> Self {
        Self {
            base_lr: 1e-3,
            min_lr: 1e-5,
            cycle_len: 10.0,
            cycle_mult: 2.0,
            epoch_in_cycle: 0,
        }
    }
}

impl ScheduleState {
    pub fn new(base_lr: f64, min_lr: f64, cycle_len: f64, cycle_mult: f64) -> Self {
        Self {
            base_lr,
            min_lr,
            cycle_len,
            cycle_mult,
            epoch_in_cycle: 0,
        }
    }

    /// Moves to the next epoch, restarting the cycle (and stretching it by the
    /// multiplier) once the current one is exhausted.
    pub fn advance(&mut self) {
        self.epoch_in_cycle += 1;
        if f64::from(self.epoch_in_cycle) >= self.cycle_len {
            self.epoch_in_cycle = 0;
            self.cycle_len *= self.cycle_mult;
        }
    }
}

pub fn scheduled_lr(state: &ScheduleState) -> f64 {
    let frac = (f64::from(state.epoch_in_cycle) / state.cycle_len).min(1.0);
    let lr = state.min_lr
        + 0.5 * (state.base_lr - state.min_lr) * (1.0 + (std::f64::consts::PI * frac).cos());
    lr.clamp(state.min_lr, state.base_lr)
}
