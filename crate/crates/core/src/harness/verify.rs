//! Self-checks run by `verify`: algebraic identities and gradient checks
//! that must hold for any build, trained or not.

use std::sync::Arc;

use rand::Rng as _;

use crate::error::Result;
use crate::executor::{Conditions, NoiseSchedule, ScheduleConfig};
use crate::nn::{Mat, ParamId, ParamStore, Tape};
use crate::objectives::chain_rule::{verify_chain_rule, JointTable};
use crate::objectives::model::{labels, Stage3Batch};
use crate::objectives::{untrained_base, Model, ModelConfig, Variant};
use crate::retriever::{aggregate, topk};
use crate::rng::{normal_vec, stream, Domain, Rng};
use crate::syndata::{generate_dataset, MultimodalSample, SyntheticConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Property {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for Property {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

/// Largest |tweedie(forward(z0, t, ε), t, ε) − z0| over `n` draws, in f32.
pub fn tweedie_identity_error(schedule: &NoiseSchedule, n: usize, seed: u64) -> Result<f64> {
    let mut rng = stream(seed, Domain::Test, 1);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let t = rng.random_range(1..=schedule.steps());
        let z0: Vec<f32> = normal_vec(&mut rng, 8).into_iter().map(|x| x as f32).collect();
        let eps: Vec<f32> = normal_vec(&mut rng, 8).into_iter().map(|x| x as f32).collect();
        let zt = schedule.forward_diffuse(&z0, t, &eps)?;
        let back = schedule.tweedie(&zt, t, &eps)?;
        for (a, b) in back.iter().zip(&z0) {
            worst = worst.max((a - b).abs() as f64);
        }
    }
    Ok(worst)
}

/// Worst chain-rule error over `n` Dirichlet tables of four 4-valued variables.
pub fn chain_rule_error(n: usize, seed: u64) -> f64 {
    let mut rng = stream(seed, Domain::Test, 2);
    (0..n)
        .map(|_| verify_chain_rule(&JointTable::dirichlet([4, 4, 4, 4], &mut rng)).max_abs_error)
        .fold(0.0, f64::max)
}

/// A small untrained model, enough to exercise every graph path.
pub fn probe_model(variant: Variant, seed: u64) -> Result<(Model, Vec<MultimodalSample>)> {
    let data = SyntheticConfig {
        n_train: 48,
        n_val: 4,
        n_test: 8,
        seed,
        ..Default::default()
    };
    let bench = generate_dataset(&data)?;
    let base = untrained_base(&bench, &ModelConfig::default(), seed)?;
    let model = Model::new(Arc::new(base), variant)?;
    Ok((model, bench.test.samples))
}

/// Largest change in the denoiser output when E is redrawn, `n` times.
pub fn zero_adapter_diff(model: &Model, n: usize, seed: u64) -> Result<f64> {
    let mut rng = stream(seed, Domain::Test, 3);
    let rows = 4;
    let dims = &model.config().dims;
    let rand_mat = |rng: &mut Rng, c: usize| Mat::from_vec(rows, c, normal_vec(rng, rows * c));
    let z = rand_mat(&mut rng, dims.latent);
    let ts: Vec<usize> = (0..rows).map(|_| rng.random_range(1..=model.schedule.steps())).collect();
    let mut cond = Conditions {
        u: rand_mat(&mut rng, dims.obs),
        c: rand_mat(&mut rng, dims.plan),
        e: rand_mat(&mut rng, dims.latent),
    };
    let reference = model.denoiser.predict(&model.store, &z, &ts, &cond)?;
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        cond.e = rand_mat(&mut rng, dims.latent).map(|x| 10.0 * x);
        let out = model.denoiser.predict(&model.store, &z, &ts, &cond)?;
        for (a, b) in out.data.iter().zip(&reference.data) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

/// A fixed stage-3 batch for gradient checks.
pub fn probe_batch(model: &Model, samples: &[MultimodalSample], seed: u64) -> Result<Stage3Batch> {
    let refs: Vec<&MultimodalSample> = samples.iter().collect();
    let prep = model.prepare(&refs, false, seed)?;
    let y = Mat::from_rows(&samples.iter().map(|s| s.concat_features()).collect::<Vec<_>>());
    let z0 = model.encoders().vae_encode_batch(&model.store, &y);
    let mut rng = stream(seed, Domain::Test, 4);
    Ok(model.make_batch(z0, prep.cond, labels(&refs), &mut rng))
}

fn task_loss(model: &Model, store: &ParamStore, batch: &Stage3Batch) -> f64 {
    let mut tape = Tape::new(store);
    let vars = model.objective(&mut tape, batch, &model.config().weights);
    tape.value(vars.task).scalar()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub param: ParamId,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheck {
    pub fn rel_error(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.analytic - self.numeric).abs() / scale
        }
    }
}

/// Backpropagated ∂L_task/∂θ against central differences for `n` random
/// denoiser weights with a non-vanishing gradient.
pub fn task_gradient_checks(model: &Model, batch: &Stage3Batch, n: usize, seed: u64) -> Vec<GradCheck> {
    let grads = {
        let mut tape = Tape::new(&model.store);
        let vars = model.objective(&mut tape, batch, &model.config().weights);
        tape.backward(vars.task)
    };
    let mut candidates = Vec::new();
    for id in model.denoiser.params() {
        if let Some(g) = grads.param(id) {
            candidates.extend(g.data.iter().enumerate().filter(|(_, v)| v.abs() > 1e-8).map(|(i, &v)| (id, i, v)));
        }
    }
    let mut rng = stream(seed, Domain::Test, 5);
    let h = 1e-5;
    let mut store = model.store.clone();
    (0..n.min(candidates.len()))
        .map(|_| {
            let (id, i, analytic) = candidates[rng.random_range(0..candidates.len())];
            let orig = store.get(id).data[i];
            store.get_mut(id).data[i] = orig + h;
            let up = task_loss(model, &store, batch);
            store.get_mut(id).data[i] = orig - h;
            let down = task_loss(model, &store, batch);
            store.get_mut(id).data[i] = orig;
            GradCheck {
                param: id,
                index: i,
                analytic,
                numeric: (up - down) / (2.0 * h),
            }
        })
        .collect()
}

/// Top-K against a full sort and weight normalisation, on fuzzed scores
/// with deliberate ties.
pub fn retrieval_mismatches(n: usize, seed: u64) -> Result<usize> {
    let mut rng = stream(seed, Domain::Test, 6);
    let mut bad = 0;
    for _ in 0..n {
        let len = rng.random_range(1..40);
        let k = rng.random_range(1..=len);
        let scores: Vec<f64> = (0..len).map(|_| (rng.random_range(-20..20) as f64) / 4.0).collect();
        let mut order: Vec<usize> = (0..len).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        let got = topk(&scores, k)?;
        let values = Mat::zeros(len, 1);
        let (alpha, _) = aggregate(&scores, &got, &values);
        if got != order[..k] || (alpha.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            bad += 1;
        }
    }
    Ok(bad)
}

/// Runs every property and reports each one.
pub fn run_all(seed: u64) -> Result<Vec<Property>> {
    let mut out = Vec::new();
    let schedule = NoiseSchedule::linear(&ScheduleConfig::default())?;
    let e = tweedie_identity_error(&schedule, 1000, seed)?;
    out.push(Property {
        name: "tweedie_identity",
        passed: e < 1e-5,
        detail: format!("max abs error {e:.3e} over 1000 f32 draws"),
    });
    let e = chain_rule_error(100, seed);
    out.push(Property {
        name: "chain_rule",
        passed: e < 1e-12,
        detail: format!("max abs error {e:.3e} over 100 tables"),
    });
    let (model, samples) = probe_model(Variant::default(), seed)?;
    let d = zero_adapter_diff(&model, 100, seed)?;
    out.push(Property {
        name: "zero_adapter",
        passed: d == 0.0,
        detail: format!("max output change {d:e} over 100 evidence draws"),
    });
    let batch = probe_batch(&model, &samples, seed)?;
    let checks = task_gradient_checks(&model, &batch, 10, seed);
    let worst = checks.iter().map(GradCheck::rel_error).fold(0.0, f64::max);
    out.push(Property {
        name: "task_gradient",
        passed: checks.len() == 10 && worst < 1e-3,
        detail: format!("{} weights, worst relative error {worst:.3e}", checks.len()),
    });
    let bad = retrieval_mismatches(10_000, seed)?;
    out.push(Property {
        name: "retrieval_topk",
        passed: bad == 0,
        detail: format!("{bad} mismatches in 10000 fuzzed arrays"),
    });
    Ok(out)
}
