use serde::{Deserialize, Serialize};

/// Minimum gain over the best objective that counts as an improvement.
pub const PLATEAU_THRESHOLD: f64 = 1e-3;
pub const LR_FLOOR: f64 = 1e-6;

/// Reduce-on-plateau learning-rate schedule for a maximized objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrPlateau {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    best: f64,
    stale: usize,
}

impl LrPlateau {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        LrPlateau { lr, factor, patience: patience.max(1), best: f64::NEG_INFINITY, stale: 0 }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Records one objective value and returns the learning rate to use next.
    pub fn step(&mut self, objective: f64) -> f64 {
        if objective > self.best + PLATEAU_THRESHOLD {
            self.best = objective;
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                self.lr = (self.lr * self.factor).max(LR_FLOOR);
                self.stale = 0;
            }
        }
        self.lr
    }
}

/// Functional form of [`LrPlateau::step`].
pub fn lr_plateau_step(state: &mut LrPlateau, objective: f64) -> f64 {
    state.step(objective)
}
