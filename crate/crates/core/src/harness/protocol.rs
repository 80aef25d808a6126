//! Evaluation protocols: fixed availability patterns and random missingness.

use serde::{Deserialize, Serialize};

use super::config::{EvalConfig, ProtocolKind};
use super::metrics::{evaluate, Metrics};
use crate::error::{Error, Result};
use crate::objectives::Model;
use crate::par::Mode;
use crate::syndata::{
    apply_fixed_mask, apply_random_mask, availability_patterns, max_missing_rate, missing_rate, offsets, pattern_label,
    Dataset, MultimodalSample,
};

/// Mean squared error over the missing coordinates only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionErrors {
    pub model: f64,
    pub zero: f64,
    /// Per-coordinate training-set mean.
    pub dataset_mean: f64,
    pub coordinates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    /// Mask seed for random runs, or the availability label for fixed ones.
    pub label: String,
    pub metrics: Metrics,
    pub realized_mr: f64,
    pub reconstruction: Option<ReconstructionErrors>,
    pub fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub kind: ProtocolKind,
    pub requested_mr: f64,
    /// Requested rate after capping.
    pub effective_mr: f64,
    pub runs: Vec<RunResult>,
    pub mean: Metrics,
    pub mean_realized_mr: f64,
}

/// Largest achievable rate not above `requested`.
pub fn effective_mr(requested: f64, num_modalities: usize) -> f64 {
    requested.min(max_missing_rate(num_modalities))
}

fn mean_metrics(runs: &[RunResult]) -> Metrics {
    let n = runs.len() as f64;
    Metrics {
        acc2: runs.iter().map(|r| r.metrics.acc2).sum::<f64>() / n,
        f1: runs.iter().map(|r| r.metrics.f1).sum::<f64>() / n,
        acc7: runs.iter().map(|r| r.metrics.acc7).sum::<f64>() / n,
    }
}

/// Per-coordinate mean of the fully observed training features.
pub fn feature_means(train: &Dataset) -> Result<Vec<f64>> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dim: usize = train.modality_dims.iter().sum();
    let mut mean = vec![0.0; dim];
    for s in &train.samples {
        for (m, x) in mean.iter_mut().zip(s.concat_features()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= train.len() as f64);
    Ok(mean)
}

/// Errors of `completed` against the unmasked `truth` on every coordinate
/// that `masked` hides. `None` when nothing is missing.
pub fn reconstruction_errors(
    masked: &Dataset,
    truth: &Dataset,
    completed: &[Vec<f64>],
    means: &[f64],
) -> Option<ReconstructionErrors> {
    let offs = offsets(&masked.modality_dims);
    let (mut model, mut zero, mut mean, mut n) = (0.0, 0.0, 0.0, 0usize);
    for ((s, t), c) in masked.samples.iter().zip(&truth.samples).zip(completed) {
        let y = t.concat_features();
        for m in s.missing() {
            for j in offs[m]..offs[m] + masked.modality_dims[m] {
                model += (c[j] - y[j]).powi(2);
                zero += y[j].powi(2);
                mean += (means[j] - y[j]).powi(2);
                n += 1;
            }
        }
    }
    (n > 0).then(|| ReconstructionErrors {
        model: model / n as f64,
        zero: zero / n as f64,
        dataset_mean: mean / n as f64,
        coordinates: n,
    })
}

fn run_one(
    model: &Model,
    masked: &Dataset,
    truth: &Dataset,
    means: &[f64],
    label: String,
    seed: u64,
    eval: &EvalConfig,
) -> Result<RunResult> {
    let mode = if eval.parallel { Mode::Parallel } else { Mode::Sequential };
    let refs: Vec<&MultimodalSample> = masked.samples.iter().collect();
    let inf = model.infer(&refs, seed, mode)?;
    let scores: Vec<f64> = truth.samples.iter().map(|s| s.score).collect();
    Ok(RunResult {
        label,
        metrics: evaluate(&inf.predictions, &scores, eval.acc2_mode)?,
        realized_mr: missing_rate(masked)?,
        reconstruction: reconstruction_errors(masked, truth, &inf.completed, means),
        fallbacks: inf.fallbacks,
    })
}

/// Masks `test` per the protocol, completes it through the model and scores
/// the predictions. `train` supplies the mean-imputation baseline.
pub fn run_protocol(model: &Model, test: &Dataset, train: &Dataset, eval: &EvalConfig) -> Result<ProtocolReport> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let means = feature_means(train)?;
    let m = test.num_modalities();
    let eff = effective_mr(eval.missing_rate, m);
    let seed = model.base.seed;
    let mut runs = Vec::new();
    match eval.protocol {
        ProtocolKind::Fixed => {
            for removed in availability_patterns(m) {
                let masked = apply_fixed_mask(test, &removed)?;
                runs.push(run_one(model, &masked, test, &means, pattern_label(&removed, m), seed, eval)?);
            }
        }
        ProtocolKind::Random => {
            for &r in &eval.runs {
                let masked = apply_random_mask(test, eff, r)?;
                runs.push(run_one(model, &masked, test, &means, r.to_string(), seed ^ r, eval)?);
            }
        }
    }
    Ok(ProtocolReport {
        kind: eval.protocol,
        requested_mr: eval.missing_rate,
        effective_mr: eff,
        mean: mean_metrics(&runs),
        mean_realized_mr: runs.iter().map(|r| r.realized_mr).sum::<f64>() / runs.len() as f64,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_cap() {
        assert_eq!(effective_mr(0.7, 3), 2.0 / 3.0);
        assert_eq!(effective_mr(0.3, 3), 0.3);
        assert_eq!(effective_mr(0.0, 3), 0.0);
    }

    #[test]
    fn reconstruction_baselines() {
        let cfg = crate::syndata::SyntheticConfig {
            n_train: 20,
            n_val: 2,
            n_test: 10,
            ..Default::default()
        };
        let b = crate::syndata::generate_dataset(&cfg).unwrap();
        let masked = apply_fixed_mask(&b.test, &[1, 2]).unwrap();
        let truth: Vec<Vec<f64>> = b.test.samples.iter().map(|s| s.concat_features()).collect();
        let means = feature_means(&b.train).unwrap();
        let r = reconstruction_errors(&masked, &b.test, &truth, &means).unwrap();
        assert_eq!(r.model, 0.0);
        assert_eq!(r.coordinates, 10 * 16);
        let zeros = vec![vec![0.0; 32]; 10];
        let z = reconstruction_errors(&masked, &b.test, &zeros, &means).unwrap();
        assert!((z.model - z.zero).abs() < 1e-15);
        assert!(reconstruction_errors(&b.test, &b.test, &truth, &means).is_none());
    }
}
