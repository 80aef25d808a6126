use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::mat::Mat;
use super::params::{ParamId, ParamStore};
use super::tape::Gradients;

/// Adam with optional global-norm gradient clipping.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    step: u64,
    moments: HashMap<ParamId, (Mat, Mat)>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(5.0),
            step: 0,
            moments: HashMap::new(),
        }
    }
}

impl Adam {
    /// Applies one update to every parameter in `trainable` that received a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, trainable: &[ParamId], lr: f64) {
        self.step += 1;
        let mut scale = 1.0;
        if let Some(max) = self.clip_norm {
            let sq: f64 = trainable
                .iter()
                .filter_map(|&id| grads.param(id))
                .map(|g| g.data.iter().map(|x| x * x).sum::<f64>())
                .sum();
            let n = sq.sqrt();
            if n > max {
                scale = max / n;
            }
        }
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for &id in trainable {
            let Some(g) = grads.param(id) else { continue };
            let p = store.get_mut(id);
            let (m, v) = self
                .moments
                .entry(id)
                .or_insert_with(|| (Mat::zeros(p.rows, p.cols), Mat::zeros(p.rows, p.cols)));
            for (((pi, &gi), mi), vi) in p
                .data
                .iter_mut()
                .zip(&g.data)
                .zip(m.data.iter_mut())
                .zip(v.data.iter_mut())
            {
                let gi = gi * scale;
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *pi -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Halves the learning rate once validation loss has failed to improve
/// for `patience` consecutive epochs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        PlateauScheduler {
            lr,
            factor,
            patience,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Records one epoch's validation loss and returns the lr for the next epoch.
    pub fn observe(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                self.lr *= self.factor;
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

impl Default for PlateauScheduler {
    fn default() -> Self {
        PlateauScheduler::new(2e-3, 0.5, 10)
    }
}
