//! Scalar loss terms, the path cost and the trajectory utility.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::cosine;
use crate::planner::SemanticPlan;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Plan consistency in the reconstruction loss.
    pub lambda_p: f64,
    /// Evidence consistency; also weights `C_evi` in the utility.
    pub lambda_e: f64,
    pub lambda_task: f64,
    pub lambda_s: f64,
    /// Path-cost weight in the utility.
    pub lambda_path: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_p: 0.1,
            lambda_e: 0.1,
            lambda_task: 0.1,
            lambda_s: 0.3,
            lambda_path: 0.1,
            gamma: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("lambda_p", self.lambda_p),
            ("lambda_e", self.lambda_e),
            ("lambda_task", self.lambda_task),
            ("lambda_s", self.lambda_s),
            ("lambda_path", self.lambda_path),
            ("gamma", self.gamma),
        ];
        for (name, v) in all {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        Ok(())
    }
}

/// `1 − cos(g_y(Ŷ), c_S)`.
pub fn loss_plan(g_y_hat: &[f64], c_s: &[f64]) -> Result<f64> {
    if g_y_hat.len() != c_s.len() {
        return Err(Error::ShapeMismatch(format!("plan embeddings {} vs {}", g_y_hat.len(), c_s.len())));
    }
    cosine(g_y_hat, c_s).map(|c| 1.0 - c).ok_or(Error::ZeroVector)
}

/// `‖φ(Ŷ) − A(E)‖₁`.
pub fn loss_evi(phi_hat: &[f64], aligned_evidence: &[f64]) -> Result<f64> {
    if phi_hat.len() != aligned_evidence.len() {
        return Err(Error::ShapeMismatch(format!(
            "evidence features {} vs {}",
            phi_hat.len(),
            aligned_evidence.len()
        )));
    }
    Ok(phi_hat.iter().zip(aligned_evidence).map(|(a, b)| (a - b).abs()).sum())
}

/// Separately logged parts of the reconstruction objective.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RecTerms {
    pub noise_mse: f64,
    pub plan: f64,
    pub evidence: f64,
}

impl RecTerms {
    pub fn loss_rec(&self, w: &LossWeights) -> f64 {
        self.noise_mse + w.lambda_p * self.plan + w.lambda_e * self.evidence
    }

    pub fn loss_total(&self, task: f64, w: &LossWeights) -> f64 {
        self.loss_rec(w) + w.lambda_task * task
    }
}

/// Mean squared norm of the differences between consecutive estimates.
pub fn path_cost(estimates: &[Vec<f64>]) -> Result<f64> {
    if estimates.len() < 2 {
        return Err(Error::TooShort(estimates.len()));
    }
    let total: f64 = estimates
        .windows(2)
        .map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum();
    Ok(total / (estimates.len() - 1) as f64)
}

/// Everything one planning → retrieval → execution pass produced.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub plan: Option<SemanticPlan>,
    pub plan_log_prob: Option<f64>,
    pub c_sem: Option<f64>,
    pub indices: Vec<usize>,
    pub alpha: Vec<f64>,
    pub evidence: Vec<f64>,
    pub c_evi: Option<f64>,
    pub states: Vec<Vec<f64>>,
    pub tweedie_estimates: Vec<Vec<f64>>,
    pub y_hat: Vec<f64>,
    pub rec_terms: Option<RecTerms>,
    pub task: Option<f64>,
    pub c_path: Option<f64>,
}

impl TrajectoryRecord {
    fn need(v: Option<f64>, what: &'static str) -> Result<f64> {
        v.ok_or(Error::IncompleteRecord(what))
    }

    pub fn loss_rec(&self, w: &LossWeights) -> Result<f64> {
        self.rec_terms.map(|t| t.loss_rec(w)).ok_or(Error::IncompleteRecord("rec_terms"))
    }
}

/// `U = −L_rec − λ_s C_sem − λ_e C_evi − λ_path C_path`.
pub fn trajectory_utility(record: &TrajectoryRecord, w: &LossWeights) -> Result<f64> {
    let l_rec = record.loss_rec(w)?;
    let c_sem = TrajectoryRecord::need(record.c_sem, "c_sem")?;
    let c_evi = TrajectoryRecord::need(record.c_evi, "c_evi")?;
    let c_path = TrajectoryRecord::need(record.c_path, "c_path")?;
    Ok(-l_rec - w.lambda_s * c_sem - w.lambda_e * c_evi - w.lambda_path * c_path)
}

/// Utility plus the plan log-likelihood, i.e. the re-ranking objective
/// embedded in a whole-trajectory score.
pub fn planning_utility(record: &TrajectoryRecord, w: &LossWeights) -> Result<f64> {
    Ok(trajectory_utility(record, w)? + TrajectoryRecord::need(record.plan_log_prob, "plan_log_prob")?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn plan_loss_examples() {
        assert!(loss_plan(&[2.0, 0.0], &[1.0, 0.0]).unwrap().abs() < 1e-15);
        assert!((loss_plan(&[-1.0, 0.0], &[3.0, 0.0]).unwrap() - 2.0).abs() < 1e-15);
        // cos = 0.6
        assert!((loss_plan(&[3.0, 4.0], &[1.0, 0.0]).unwrap() - 0.4).abs() < 1e-12);
        assert!(matches!(loss_plan(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroVector)));
    }

    #[test]
    fn evidence_loss_examples() {
        assert_eq!(loss_evi(&[0.5, -1.0], &[0.5, -1.0]).unwrap(), 0.0);
        assert_eq!(loss_evi(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 3.0);
        assert!(matches!(loss_evi(&[1.0], &[1.0, 2.0]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn rec_and_total_combination() {
        let t = RecTerms { noise_mse: 0.7, plan: 0.3, evidence: 2.0 };
        let w = LossWeights::default();
        assert!((t.loss_rec(&w) - (0.7 + 0.03 + 0.2)).abs() < 1e-12);
        let zero = LossWeights { lambda_p: 0.0, lambda_e: 0.0, ..w.clone() };
        assert_eq!(t.loss_rec(&zero), 0.7);
        let no_task = LossWeights { lambda_task: 0.0, ..w.clone() };
        assert_eq!(t.loss_total(1.9, &no_task), t.loss_rec(&no_task));
        assert!((t.loss_total(1.9, &w) - t.loss_total(0.0, &w) - 0.1 * 1.9).abs() < 1e-9);
    }

    #[test]
    fn path_cost_examples() {
        assert_eq!(path_cost(&vec![vec![1.0, 2.0]; 4]).unwrap(), 0.0);
        assert_eq!(path_cost(&[vec![0.0], vec![1.0], vec![1.0]]).unwrap(), 0.5);
        assert!(matches!(path_cost(&[vec![0.0]]), Err(Error::TooShort(1))));
    }

    fn full_record(l: f64, sem: f64, evi: f64, path: f64) -> TrajectoryRecord {
        TrajectoryRecord {
            c_sem: Some(sem),
            c_evi: Some(evi),
            c_path: Some(path),
            rec_terms: Some(RecTerms { noise_mse: l, plan: 0.0, evidence: 0.0 }),
            plan_log_prob: Some(-1.0),
            ..Default::default()
        }
    }

    #[test]
    fn utility_examples() {
        let w = LossWeights::default();
        assert_eq!(trajectory_utility(&full_record(0.0, 0.0, 0.0, 0.0), &w).unwrap(), 0.0);
        let u = trajectory_utility(&full_record(1.0, 1.0, 1.0, 1.0), &w).unwrap();
        assert!((u + 1.5).abs() < 1e-12);
        let base = full_record(0.4, 0.8, 0.2, 0.5);
        let w2 = LossWeights { lambda_s: 0.6, ..w.clone() };
        let d1 = trajectory_utility(&base, &w).unwrap() - trajectory_utility(&full_record(0.4, 0.0, 0.2, 0.5), &w).unwrap();
        let d2 = trajectory_utility(&base, &w2).unwrap() - trajectory_utility(&full_record(0.4, 0.0, 0.2, 0.5), &w2).unwrap();
        assert!((d2 - 2.0 * d1).abs() < 1e-12);
        let mut missing = base.clone();
        missing.c_path = None;
        assert!(matches!(trajectory_utility(&missing, &w), Err(Error::IncompleteRecord("c_path"))));
    }

    proptest! {
        #[test]
        fn evidence_loss_matches_loop(pairs in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..32)) {
            let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let mut oracle = 0.0;
            for i in 0..a.len() {
                oracle += if a[i] > b[i] { a[i] - b[i] } else { b[i] - a[i] };
            }
            prop_assert!((loss_evi(&a, &b).unwrap() - oracle).abs() < 1e-12);
        }

        #[test]
        fn path_cost_matches_loop(path in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 3), 2..12)) {
            let mut oracle = 0.0;
            for i in 1..path.len() {
                for j in 0..3 {
                    let d = path[i][j] - path[i - 1][j];
                    oracle += d * d;
                }
            }
            oracle /= (path.len() - 1) as f64;
            prop_assert!((path_cost(&path).unwrap() - oracle).abs() < 1e-12);
        }

        #[test]
        fn plan_loss_in_range(a in proptest::collection::vec(-3.0f64..3.0, 4), b in proptest::collection::vec(-3.0f64..3.0, 4)) {
            if let Ok(l) = loss_plan(&a, &b) {
                prop_assert!((0.0..=2.0).contains(&l));
            }
        }
    }
}
