use serde::{Deserialize, Serialize};

/// Multiplies the learning rate by `factor` once the watched metric has gone
/// `patience` observations without rising by at least `min_delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub min_delta: f64,
    best: Option<f64>,
    stale: usize,
    scale: f64,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize, min_delta: f64) -> Self {
        Self {
            factor,
            patience,
            min_delta,
            best: None,
            stale: 0,
            scale: 1.0,
        }
    }

    /// Current multiplier on the base learning rate.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// Records one evaluation; true when it triggered a decay.
    pub fn observe(&mut self, metric: f64) -> bool {
        match self.best {
            Some(b) if metric < b + self.min_delta => {
                self.stale += 1;
                if self.stale >= self.patience {
                    self.scale *= self.factor;
                    self.stale = 0;
                    return true;
                }
            }
            _ => {
                self.best = Some(metric);
                self.stale = 0;
            }
        }
        false
    }
}
