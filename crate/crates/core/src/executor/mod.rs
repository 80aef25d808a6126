//! Conditional latent diffusion: schedule, noise predictor and sampler.

pub mod denoiser;
pub mod sampler;
pub mod schedule;

pub use denoiser::{BlockVars, Conditions, Denoiser, DenoiserConfig, InjectionMode};
pub use sampler::{DiffusionTrajectory, Sampler};
pub use schedule::{diffuse_with, reverse_with, time_embedding, tweedie_with, NoiseSchedule, ScheduleConfig};

use rand::Rng as _;

use crate::nn::Mat;
use crate::rng::{normal_vec, Rng};

/// A corrupted training batch: `z_t` for uniformly drawn steps.
#[derive(Debug, Clone)]
pub struct NoisyBatch {
    pub z_t: Mat,
    pub steps: Vec<usize>,
    pub noise: Mat,
}

/// Draws `t ~ U{1..T}` and `ε ~ N(0, I)` for each row of `z0`.
pub fn corrupt_batch(schedule: &NoiseSchedule, z0: &Mat, rng: &mut Rng) -> NoisyBatch {
    let (n, d) = z0.shape();
    let mut z_t = Mat::zeros(n, d);
    let mut noise = Mat::zeros(n, d);
    let mut steps = Vec::with_capacity(n);
    for r in 0..n {
        let t = rng.random_range(1..=schedule.steps());
        let eps = normal_vec(rng, d);
        z_t.row_mut(r).copy_from_slice(&diffuse_with(z0.row(r), &eps, schedule.alpha_bars[t]));
        noise.row_mut(r).copy_from_slice(&eps);
        steps.push(t);
    }
    NoisyBatch { z_t, steps, noise }
}
