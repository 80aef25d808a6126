//! Ancestral sampling from `z_T ~ N(0, I)` down to `z_0`.

use serde::{Deserialize, Serialize};

use super::denoiser::{Conditions, Denoiser};
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::nn::{Mat, ParamStore};
use crate::par::{map_chunks, Mode};
use crate::rng::{normal_vec, stream, Domain, Rng};

/// States `z_T … z_0`, with the noise prediction and Tweedie estimate made
/// at each of the `T` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionTrajectory {
    pub states: Vec<Vec<f64>>,
    pub noise_predictions: Vec<Vec<f64>>,
    pub tweedie_estimates: Vec<Vec<f64>>,
    pub decoded: Vec<f64>,
}

impl DiffusionTrajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_finite(&self) -> bool {
        self.states
            .iter()
            .chain(&self.noise_predictions)
            .chain(&self.tweedie_estimates)
            .chain(std::iter::once(&self.decoded))
            .flatten()
            .all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Sampler<'a> {
    pub store: &'a ParamStore,
    pub denoiser: &'a Denoiser,
    pub schedule: &'a NoiseSchedule,
    /// Drop the `σ_t ξ` term so the chain is a deterministic map of `z_T`.
    pub deterministic: bool,
}

/// Rows per network call inside one worker.
const CHUNK: usize = 32;

impl<'a> Sampler<'a> {
    fn row_rng(seed: u64, key: u64) -> Rng {
        stream(seed, Domain::Diffusion, key)
    }

    /// Final states `z_0*` for every row of `cond`. Row `r` draws all of its
    /// noise from the stream keyed by `keys[r]`, so results do not depend on
    /// batching or on `mode`.
    pub fn sample_batch(&self, cond: &Conditions, keys: &[u64], seed: u64, mode: Mode) -> Result<Mat> {
        if keys.len() != cond.rows() {
            return Err(Error::ShapeMismatch(format!("{} keys for {} rows", keys.len(), cond.rows())));
        }
        let d = self.denoiser.latent_dim;
        let parts = map_chunks(mode, keys.len(), CHUNK, |range| {
            let idx: Vec<usize> = range.collect();
            let sub = cond.select(&idx);
            let mut rngs: Vec<Rng> = idx.iter().map(|&r| Self::row_rng(seed, keys[r])).collect();
            self.run(&sub, &mut rngs, |_, _, _, _| {})
        });
        let mut out = Mat::zeros(keys.len(), d);
        let mut row = 0;
        for part in parts {
            let part = part?;
            for r in 0..part.rows {
                out.row_mut(row).copy_from_slice(part.row(r));
                row += 1;
            }
        }
        Ok(out)
    }

    /// One sample with its full trajectory; `decode` maps `z_0*` to target features.
    pub fn sample(
        &self,
        u: &[f64],
        c: &[f64],
        e: &[f64],
        seed: u64,
        key: u64,
        decode: impl Fn(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<DiffusionTrajectory> {
        let cond = Conditions {
            u: Mat::row_vector(u.to_vec()),
            c: Mat::row_vector(c.to_vec()),
            e: Mat::row_vector(e.to_vec()),
        };
        let mut rngs = vec![Self::row_rng(seed, key)];
        let mut traj = DiffusionTrajectory {
            states: Vec::new(),
            noise_predictions: Vec::new(),
            tweedie_estimates: Vec::new(),
            decoded: Vec::new(),
        };
        let z0 = self.run(&cond, &mut rngs, |t, zt, eps, next| {
            if traj.states.is_empty() {
                traj.states.push(zt.row(0).to_vec());
            }
            traj.noise_predictions.push(eps.row(0).to_vec());
            traj.tweedie_estimates.push(
                self.schedule
                    .tweedie(zt.row(0), t, eps.row(0))
                    .unwrap_or_else(|_| vec![f64::NAN; zt.cols]),
            );
            traj.states.push(next.row(0).to_vec());
        })?;
        traj.decoded = decode(z0.row(0))?;
        Ok(traj)
    }

    fn step_noise(&self, rng: &mut Rng, d: usize) -> Vec<f64> {
        let xi = normal_vec(rng, d);
        if self.deterministic {
            vec![0.0; d]
        } else {
            xi
        }
    }

    fn run(
        &self,
        cond: &Conditions,
        rngs: &mut [Rng],
        mut observe: impl FnMut(usize, &Mat, &Mat, &Mat),
    ) -> Result<Mat> {
        let n = cond.rows();
        let d = self.denoiser.latent_dim;
        let mut z = Mat::zeros(n, d);
        for (r, rng) in rngs.iter_mut().enumerate() {
            z.row_mut(r).copy_from_slice(&normal_vec(rng, d));
        }
        for t in (1..=self.schedule.steps()).rev() {
            let eps = self.denoiser.predict(self.store, &z, &vec![t; n], cond)?;
            let mut next = Mat::zeros(n, d);
            for (r, rng) in rngs.iter_mut().enumerate() {
                let xi = self.step_noise(rng, d);
                let zr = self.schedule.reverse_step(z.row(r), t, eps.row(r), &xi)?;
                next.row_mut(r).copy_from_slice(&zr);
            }
            if !next.all_finite() {
                return Err(Error::NonFiniteLoss {
                    stage: "sampling".into(),
                    epoch: t,
                    detail: "non-finite latent state".into(),
                });
            }
            observe(t, &z, &eps, &next);
            z = next;
        }
        Ok(z)
    }
}
