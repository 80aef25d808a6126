//! ACC2, F1 and ACC7 over continuous sentiment scores in [-3, 3].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How ACC2 and F1 split scores into two classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Acc2Mode {
    /// Positive (> 0) against negative (< 0); zero-score samples are dropped.
    #[default]
    PosNeg,
    /// Non-negative against negative; nothing is dropped.
    NonNegNeg,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc2: f64,
    pub f1: f64,
    pub acc7: f64,
}

fn check(preds: &[f64], scores: &[f64]) -> Result<()> {
    if preds.len() != scores.len() {
        return Err(Error::ShapeMismatch(format!("{} predictions for {} scores", preds.len(), scores.len())));
    }
    if preds.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

/// Binary labels of the retained pairs, as (predicted, true).
fn binary_pairs(preds: &[f64], scores: &[f64], mode: Acc2Mode) -> Result<Vec<(bool, bool)>> {
    check(preds, scores)?;
    let pairs: Vec<(bool, bool)> = match mode {
        Acc2Mode::PosNeg => preds
            .iter()
            .zip(scores)
            .filter(|(_, &s)| s != 0.0)
            .map(|(&p, &s)| (p > 0.0, s > 0.0))
            .collect(),
        Acc2Mode::NonNegNeg => preds.iter().zip(scores).map(|(&p, &s)| (p >= 0.0, s >= 0.0)).collect(),
    };
    if pairs.is_empty() {
        return Err(Error::AllExcluded);
    }
    Ok(pairs)
}

pub fn acc2(preds: &[f64], scores: &[f64], mode: Acc2Mode) -> Result<f64> {
    let pairs = binary_pairs(preds, scores, mode)?;
    Ok(pairs.iter().filter(|(p, t)| p == t).count() as f64 / pairs.len() as f64)
}

/// F1 of the positive class; 0 when there are no true or predicted positives.
pub fn f1(preds: &[f64], scores: &[f64], mode: Acc2Mode) -> Result<f64> {
    let pairs = binary_pairs(preds, scores, mode)?;
    let tp = pairs.iter().filter(|&&(p, t)| p && t).count();
    let fp = pairs.iter().filter(|&&(p, t)| p && !t).count();
    let fne = pairs.iter().filter(|&&(p, t)| !p && t).count();
    let denom = 2 * tp + fp + fne;
    Ok(if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 })
}

/// Round to the nearest integer, then clamp to [-3, 3].
pub fn bin7(x: f64) -> i32 {
    x.round().clamp(-3.0, 3.0) as i32
}

pub fn acc7(preds: &[f64], scores: &[f64]) -> Result<f64> {
    check(preds, scores)?;
    let hits = preds.iter().zip(scores).filter(|(&p, &s)| bin7(p) == bin7(s)).count();
    Ok(hits as f64 / preds.len() as f64)
}

pub fn evaluate(preds: &[f64], scores: &[f64], mode: Acc2Mode) -> Result<Metrics> {
    Ok(Metrics {
        acc2: acc2(preds, scores, mode)?,
        f1: f1(preds, scores, mode)?,
        acc7: acc7(preds, scores)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const M: Acc2Mode = Acc2Mode::PosNeg;

    #[test]
    fn perfect_predictions() {
        let s = [-2.6, -0.4, 0.7, 1.2, 3.0];
        let m = evaluate(&s, &s, M).unwrap();
        assert_eq!((m.acc2, m.f1, m.acc7), (1.0, 1.0, 1.0));
    }

    #[test]
    fn always_negative_predictor() {
        let s = [1.0, 2.0, -1.0, -2.0];
        let p = [-1.0; 4];
        assert_eq!(acc2(&p, &s, M).unwrap(), 0.5);
        assert_eq!(f1(&p, &s, M).unwrap(), 0.0);
    }

    #[test]
    fn f1_from_confusion_counts() {
        // TP=3, FP=1, FN=2, TN=1
        let p = [1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0];
        let s = [1.0, 1.0, 1.0, -1.0, 1.0, 1.0, -1.0];
        assert!((f1(&p, &s, M).unwrap() - 6.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn zero_scores_and_modes() {
        let p = [0.5, -0.5, 0.1];
        let s = [0.0, -1.0, 0.0];
        assert_eq!(acc2(&p, &s, M).unwrap(), 1.0);
        assert_eq!(acc2(&p, &s, Acc2Mode::NonNegNeg).unwrap(), 1.0);
        assert!(matches!(acc2(&p, &[0.0; 3], M), Err(Error::AllExcluded)));
        assert!(acc2(&p, &[0.0; 3], Acc2Mode::NonNegNeg).is_ok());
        assert!(matches!(acc7(&[], &[]), Err(Error::EmptyInput)));
        assert!(matches!(acc7(&[1.0], &[]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn seven_class_bins() {
        assert_eq!(bin7(-3.4), -3);
        assert_eq!(bin7(2.5), 3);
        assert_eq!(bin7(-0.49), 0);
        assert_eq!(bin7(7.0), 3);
        assert_eq!(acc7(&[0.4, 1.6], &[-0.4, 2.4]).unwrap(), 1.0);
    }
}
