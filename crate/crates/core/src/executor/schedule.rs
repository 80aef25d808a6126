//! Variance schedule and the closed-form diffusion steps.
//!
//! The step functions are generic over the float width so the inversion
//! identities can be checked in single precision as well as double.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this, `1/√ᾱ` is treated as undefined.
pub const ALPHA_BAR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            steps: 100,
            beta_start: 1e-4,
            beta_end: 0.07,
        }
    }
}

/// Index `t` runs over `0..=T`; entry 0 is the clean-data convention
/// (`β_0 = 0`, `ᾱ_0 = 1`, `σ_0 = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
    pub sigmas: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(cfg: &ScheduleConfig) -> Result<Self> {
        let t = cfg.steps;
        if t == 0 {
            return Err(Error::InvalidConfig("diffusion needs at least one step".into()));
        }
        let betas: Vec<f64> = (0..t)
            .map(|i| {
                if t == 1 {
                    cfg.beta_start
                } else {
                    cfg.beta_start + (cfg.beta_end - cfg.beta_start) * i as f64 / (t - 1) as f64
                }
            })
            .collect();
        Self::from_betas(&betas)
    }

    /// `betas[i]` is `β_{i+1}`.
    pub fn from_betas(betas: &[f64]) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidConfig("empty beta schedule".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::InvalidConfig(format!("beta {b} outside (0, 1)")));
        }
        let mut all_betas = vec![0.0];
        all_betas.extend_from_slice(betas);
        let alphas: Vec<f64> = all_betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for &a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        let mut sigmas = vec![0.0; alphas.len()];
        for t in 2..alphas.len() {
            let var = all_betas[t] * (1.0 - alpha_bars[t - 1]) / (1.0 - alpha_bars[t]);
            sigmas[t] = var.max(0.0).sqrt();
        }
        Ok(NoiseSchedule {
            betas: all_betas,
            alphas,
            alpha_bars,
            sigmas,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len() - 1
    }

    fn check(&self, t: usize, min: usize) -> Result<()> {
        if t < min || t > self.steps() {
            Err(Error::BadStep { t, max: self.steps() })
        } else {
            Ok(())
        }
    }

    /// `z_t = √ᾱ_t z_0 + √(1−ᾱ_t) ε`, for `t` in `0..=T`.
    pub fn forward_diffuse<F: Float>(&self, z0: &[F], t: usize, eps: &[F]) -> Result<Vec<F>> {
        self.check(t, 0)?;
        Ok(diffuse_with(z0, eps, self.alpha_bars[t]))
    }

    /// One ancestral step from `z_t` to `z_{t−1}`, `t` in `1..=T`.
    pub fn reverse_step<F: Float>(&self, z_t: &[F], t: usize, eps_hat: &[F], xi: &[F]) -> Result<Vec<F>> {
        self.check(t, 1)?;
        Ok(reverse_with(z_t, eps_hat, self.alphas[t], self.alpha_bars[t], self.sigmas[t], xi))
    }

    /// Posterior-mean estimate of `z_0` from `z_t` and predicted noise.
    pub fn tweedie<F: Float>(&self, z_t: &[F], t: usize, eps_hat: &[F]) -> Result<Vec<F>> {
        self.check(t, 0)?;
        tweedie_with(z_t, eps_hat, self.alpha_bars[t])
    }

    /// Coefficients `(1/√ᾱ_t, √(1−ᾱ_t)/√ᾱ_t)` of the estimate.
    pub fn tweedie_coeffs(&self, t: usize) -> Result<(f64, f64)> {
        self.check(t, 0)?;
        let ab = self.alpha_bars[t];
        if ab <= ALPHA_BAR_FLOOR {
            return Err(Error::DegenerateAlpha(ab));
        }
        Ok((1.0 / ab.sqrt(), (1.0 - ab).sqrt() / ab.sqrt()))
    }
}

fn cast<F: Float>(x: f64) -> F {
    F::from(x).expect("schedule coefficient representable")
}

pub fn diffuse_with<F: Float>(z0: &[F], eps: &[F], alpha_bar: f64) -> Vec<F> {
    let a: F = cast(alpha_bar.sqrt());
    let s: F = cast((1.0 - alpha_bar).sqrt());
    z0.iter().zip(eps).map(|(&z, &e)| a * z + s * e).collect()
}

pub fn reverse_with<F: Float>(z_t: &[F], eps_hat: &[F], alpha: f64, alpha_bar: f64, sigma: f64, xi: &[F]) -> Vec<F> {
    let inv: F = cast(1.0 / alpha.sqrt());
    let c: F = cast((1.0 - alpha) / (1.0 - alpha_bar).sqrt());
    let sg: F = cast(sigma);
    z_t.iter()
        .zip(eps_hat)
        .zip(xi)
        .map(|((&z, &e), &x)| inv * (z - c * e) + sg * x)
        .collect()
}

pub fn tweedie_with<F: Float>(z_t: &[F], eps_hat: &[F], alpha_bar: f64) -> Result<Vec<F>> {
    if alpha_bar <= ALPHA_BAR_FLOOR {
        return Err(Error::DegenerateAlpha(alpha_bar));
    }
    let s: F = cast((1.0 - alpha_bar).sqrt());
    let a: F = cast(alpha_bar.sqrt());
    Ok(z_t.iter().zip(eps_hat).map(|(&z, &e)| (z - s * e) / a).collect())
}

/// Sinusoidal embedding of the step index, `dim/2` sines then `dim/2` cosines.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let freq = (-(k as f64) * (1000.0f64).ln() / half.max(1) as f64).exp();
        let arg = t as f64 * freq;
        out[k] = arg.sin();
        out[half + k] = arg.cos();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_vec, stream, Domain};
    use proptest::prelude::*;

    fn default_schedule() -> NoiseSchedule {
        NoiseSchedule::linear(&ScheduleConfig::default()).unwrap()
    }

    #[test]
    fn schedule_shape() {
        let s = default_schedule();
        assert_eq!(s.steps(), 100);
        assert_eq!(s.alpha_bars[0], 1.0);
        assert!(s.alpha_bars.windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bars[100] < 0.05);
        assert_eq!(s.sigmas[1], 0.0);
        assert!(s.sigmas[2..].iter().all(|&x| x > 0.0));
        assert!((s.betas[1] - 1e-4).abs() < 1e-18 && (s.betas[100] - 0.07).abs() < 1e-15);
        // posterior variance never exceeds beta
        for t in 2..=100 {
            assert!(s.sigmas[t].powi(2) <= s.betas[t] + 1e-15);
        }
    }

    #[test]
    fn invalid_schedules() {
        assert!(NoiseSchedule::from_betas(&[0.1, 1.0]).is_err());
        assert!(NoiseSchedule::from_betas(&[0.0]).is_err());
        assert!(NoiseSchedule::linear(&ScheduleConfig { steps: 0, ..Default::default() }).is_err());
        let s = default_schedule();
        assert!(matches!(s.forward_diffuse(&[0.0], 101, &[0.0]), Err(Error::BadStep { .. })));
        assert!(matches!(s.reverse_step(&[0.0], 0, &[0.0], &[0.0]), Err(Error::BadStep { .. })));
    }

    #[test]
    fn forward_examples() {
        let s = default_schedule();
        assert_eq!(s.forward_diffuse(&[1.5, -2.0], 0, &[9.0, 9.0]).unwrap(), vec![1.5, -2.0]);
        let z = diffuse_with(&[0.0, 0.0], &[1.0, 0.0], 0.75);
        assert!((z[0] - 0.5).abs() < 1e-15 && z[1] == 0.0);
    }

    #[test]
    fn forward_moments() {
        let s = default_schedule();
        let t = 40;
        let ab = s.alpha_bars[t];
        let mut rng = stream(3, Domain::Test, 0);
        let n = 10_000;
        let var_z0 = 4.0;
        let draws: Vec<f64> = (0..n)
            .map(|_| {
                let e = normal_vec(&mut rng, 2);
                s.forward_diffuse(&[2.0 * e[0]], t, &[e[1]]).unwrap()[0]
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let expect = ab * var_z0 + (1.0 - ab);
        assert!((var - expect).abs() / expect < 0.05, "{var} vs {expect}");
    }

    #[test]
    fn reverse_examples() {
        assert_eq!(reverse_with(&[0.7], &[0.3], 1.0, 0.5, 0.0, &[0.0]), vec![0.7]);
        let z = reverse_with(&[1.0], &[0.2], 0.99, 0.5, 0.0, &[0.0])[0];
        let oracle = (1.0 / 0.99f64.sqrt()) * (1.0 - (0.01 / 0.5f64.sqrt()) * 0.2);
        assert!((z - oracle).abs() < 1e-15);
        assert!((z - 1.002_195_139).abs() < 1e-9);
        // final step carries no noise
        let s = default_schedule();
        let a = s.reverse_step(&[0.4], 1, &[0.1], &[0.0]).unwrap();
        let b = s.reverse_step(&[0.4], 1, &[0.1], &[5.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tweedie_examples() {
        let z = tweedie_with(&[1.0], &[0.5], 0.64).unwrap()[0];
        assert!((z - 0.875).abs() < 1e-15);
        assert_eq!(tweedie_with(&[0.3, -1.0], &[2.0, 2.0], 1.0).unwrap(), vec![0.3, -1.0]);
        assert!(matches!(tweedie_with(&[1.0], &[0.0], 1e-9), Err(Error::DegenerateAlpha(_))));
    }

    #[test]
    fn time_embedding_is_bounded_and_distinct() {
        let a = time_embedding(3, 16);
        let b = time_embedding(4, 16);
        assert_eq!(a.len(), 16);
        assert!(a.iter().all(|x| x.abs() <= 1.0));
        assert_ne!(a, b);
        assert_eq!(time_embedding(0, 4), vec![0.0, 0.0, 1.0, 1.0]);
    }

    proptest! {
        #[test]
        fn tweedie_inverts_forward_f32(z0 in proptest::collection::vec(-3.0f32..3.0, 8), eps in proptest::collection::vec(-3.0f32..3.0, 8), t in 0usize..=100) {
            let s = default_schedule();
            let zt = s.forward_diffuse(&z0, t, &eps).unwrap();
            let back = s.tweedie(&zt, t, &eps).unwrap();
            for (a, b) in back.iter().zip(&z0) {
                prop_assert!((a - b).abs() < 1e-5);
            }
        }

        #[test]
        fn deterministic_reverse_is_pure(z in -2.0f64..2.0, e in -2.0f64..2.0, t in 1usize..=100) {
            let s = default_schedule();
            prop_assert_eq!(s.reverse_step(&[z], t, &[e], &[0.0]).unwrap(), s.reverse_step(&[z], t, &[e], &[0.0]).unwrap());
        }
    }
}
