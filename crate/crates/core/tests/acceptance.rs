//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! Criteria 7 to 10 share one training suite: five seeds, each training the
//! shared stages once and then every compared variant on top of them.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng as _;

use mmrecon::executor::{Conditions, NoiseSchedule, ScheduleConfig};
use mmrecon::harness::ablation::ablation_variant;
use mmrecon::harness::experiment::prepare;
use mmrecon::harness::metrics::{acc2, acc7, f1, Acc2Mode};
use mmrecon::harness::protocol::run_protocol;
use mmrecon::harness::verify::{probe_batch, probe_model};
use mmrecon::harness::{EvalConfig, ExperimentConfig};
use mmrecon::nn::{Mat, PlateauScheduler, Tape};
use mmrecon::objectives::chain_rule::{verify_chain_rule, JointTable};
use mmrecon::objectives::{TrainLog, Variant};
use mmrecon::retriever::{aggregate, topk};
use mmrecon::rng::{normal_vec, stream, Domain};

struct Outcome {
    id: u32,
    title: &'static str,
    passed: bool,
    detail: String,
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn c1_tweedie_identity() -> Outcome {
    let start = Instant::now();
    let schedule = NoiseSchedule::linear(&ScheduleConfig::default()).unwrap();
    let mut rng = stream(101, Domain::Test, 0);
    let mut worst: f32 = 0.0;
    for _ in 0..1000 {
        let t = rng.random_range(1..=schedule.steps());
        let z0: Vec<f32> = (0..8).map(|_| rng.random_range(-3.0f32..3.0)).collect();
        let eps: Vec<f32> = normal_vec(&mut rng, 8).into_iter().map(|x| x as f32).collect();
        let zt = schedule.forward_diffuse(&z0, t, &eps).unwrap();
        let back = schedule.tweedie(&zt, t, &eps).unwrap();
        for (a, b) in back.iter().zip(&z0) {
            worst = worst.max((a - b).abs());
        }
    }
    let el = start.elapsed();
    Outcome {
        id: 1,
        title: "Tweedie identity (f32)",
        passed: (worst as f64) < 1e-5 && el < Duration::from_secs(1),
        detail: format!("max abs error {worst:.3e} over 1000 triples, {:.3} s", secs(el)),
    }
}

fn c2_chain_rule() -> Outcome {
    let start = Instant::now();
    let mut rng = stream(102, Domain::Test, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let table = JointTable::dirichlet([4, 4, 4, 4], &mut rng);
        worst = worst.max(verify_chain_rule(&table).max_abs_error);
    }
    let el = start.elapsed();
    Outcome {
        id: 2,
        title: "chain-rule decomposition",
        passed: worst < 1e-12 && el < Duration::from_secs(5),
        detail: format!("max abs error {worst:.3e} over 100 Dirichlet tables, {:.3} s", secs(el)),
    }
}

fn c3_zero_adapter() -> Outcome {
    let (model, _) = probe_model(Variant::default(), 103).unwrap();
    let start = Instant::now();
    let mut rng = stream(103, Domain::Test, 0);
    let dims = model.config().dims.clone();
    let n = 8;
    let mut draw = |c: usize, scale: f64| Mat::from_vec(n, c, normal_vec(&mut rng, n * c).into_iter().map(|x| scale * x).collect());
    let z = draw(dims.latent, 1.0);
    let cond = Conditions {
        u: draw(dims.obs, 1.0),
        c: draw(dims.plan, 1.0),
        e: draw(dims.latent, 1.0),
    };
    let ts: Vec<usize> = (0..n).map(|i| 1 + 12 * i).collect();
    let reference = model.denoiser.predict(&model.store, &z, &ts, &cond).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let perturbed = Conditions { e: draw(dims.latent, 5.0), ..cond.clone() };
        let out = model.denoiser.predict(&model.store, &z, &ts, &perturbed).unwrap();
        for (a, b) in out.data.iter().zip(&reference.data) {
            worst = worst.max((a - b).abs());
        }
    }
    let el = start.elapsed();
    Outcome {
        id: 3,
        title: "zero-adapter contract",
        passed: worst == 0.0 && el < Duration::from_secs(1),
        detail: format!("max abs output change {worst:e} over 100 evidence perturbations, {:.3} s", secs(el)),
    }
}

fn c4_task_gradient() -> Outcome {
    let (model, samples) = probe_model(Variant::default(), 104).unwrap();
    let batch = probe_batch(&model, &samples, 104).unwrap();
    let weights = model.config().weights.clone();
    let task_at = |store: &mmrecon::nn::ParamStore| {
        let mut tape = Tape::new(store);
        let v = model.objective(&mut tape, &batch, &weights);
        tape.value(v.task).scalar()
    };
    let grads = {
        let mut tape = Tape::new(&model.store);
        let v = model.objective(&mut tape, &batch, &weights);
        tape.backward(v.task)
    };
    // every denoiser scalar the loss actually depends on
    let mut pool = Vec::new();
    for id in model.denoiser.params() {
        if let Some(g) = grads.param(id) {
            for (i, &v) in g.data.iter().enumerate() {
                if v.abs() > 1e-7 {
                    pool.push((id, i, v));
                }
            }
        }
    }
    let mut rng = stream(104, Domain::Test, 0);
    let mut store = model.store.clone();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let (id, i, analytic) = pool[rng.random_range(0..pool.len())];
        let orig = store.get(id).data[i];
        store.get_mut(id).data[i] = orig + h;
        let up = task_at(&store);
        store.get_mut(id).data[i] = orig - h;
        let down = task_at(&store);
        store.get_mut(id).data[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()));
    }
    Outcome {
        id: 4,
        title: "Tweedie gradient path",
        passed: worst < 1e-3,
        detail: format!("worst relative error {worst:.3e} over 10 denoiser weights ({} candidates)", pool.len()),
    }
}

fn c5_retrieval() -> Outcome {
    let mut rng = stream(105, Domain::Test, 0);
    let (mut order_bad, mut worst_sum, mut worst_shift): (usize, f64, f64) = (0, 0.0, 0.0);
    for case in 0..10_000 {
        let n = rng.random_range(1..64);
        let k = rng.random_range(1..=n);
        // coarse grid so ties are frequent
        let scores: Vec<f64> = if case % 2 == 0 {
            (0..n).map(|_| rng.random_range(-8i32..8) as f64 * 0.25).collect()
        } else {
            (0..n).map(|_| rng.random_range(-30.0..30.0)).collect()
        };
        let mut oracle: Vec<usize> = (0..n).collect();
        oracle.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        let got = topk(&scores, k).unwrap();
        if got[..] != oracle[..k] {
            order_bad += 1;
        }
        let values = Mat::zeros(n, 1);
        let (alpha, _) = aggregate(&scores, &got, &values);
        worst_sum = worst_sum.max((alpha.iter().sum::<f64>() - 1.0).abs());
        let shift = rng.random_range(-50.0..50.0);
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let (alpha2, _) = aggregate(&shifted, &got, &values);
        for (a, b) in alpha.iter().zip(&alpha2) {
            worst_shift = worst_shift.max((a - b).abs());
        }
    }
    Outcome {
        id: 5,
        title: "retrieval exactness",
        passed: order_bad == 0 && worst_sum < 1e-6 && worst_shift < 1e-9,
        detail: format!(
            "{order_bad} top-K mismatches in 10000 arrays, max |sum alpha - 1| {worst_sum:.2e}, max shift change {worst_shift:.2e}"
        ),
    }
}

fn oracle_acc2(p: &[f64], s: &[f64]) -> Option<f64> {
    let (mut hit, mut n) = (0usize, 0usize);
    for i in 0..p.len() {
        if s[i] == 0.0 {
            continue;
        }
        n += 1;
        if (p[i] > 0.0 && s[i] > 0.0) || (p[i] <= 0.0 && s[i] < 0.0) {
            hit += 1;
        }
    }
    if n == 0 {
        None
    } else {
        Some(hit as f64 / n as f64)
    }
}

fn oracle_f1(p: &[f64], s: &[f64]) -> Option<f64> {
    let (mut tp, mut fp, mut fneg, mut n) = (0usize, 0usize, 0usize, 0usize);
    for i in 0..p.len() {
        if s[i] == 0.0 {
            continue;
        }
        n += 1;
        let pred = p[i] > 0.0;
        let truth = s[i] > 0.0;
        if pred && truth {
            tp += 1;
        } else if pred {
            fp += 1;
        } else if truth {
            fneg += 1;
        }
    }
    if n == 0 {
        return None;
    }
    let d = 2 * tp + fp + fneg;
    Some(if d == 0 { 0.0 } else { (2 * tp) as f64 / d as f64 })
}

fn oracle_acc7(p: &[f64], s: &[f64]) -> f64 {
    let bin = |x: f64| {
        let r = if x >= 0.0 { (x + 0.5).floor() } else { -((-x + 0.5).floor()) };
        r.max(-3.0).min(3.0)
    };
    let mut hit = 0;
    for i in 0..p.len() {
        if bin(p[i]) == bin(s[i]) {
            hit += 1;
        }
    }
    hit as f64 / p.len() as f64
}

fn c6_metrics() -> Outcome {
    let mut rng = stream(106, Domain::Test, 0);
    let mut bad = 0;
    for _ in 0..10_000 {
        let n = rng.random_range(1..50);
        let draw = |rng: &mut mmrecon::rng::Rng| match rng.random_range(0..5) {
            0 => 0.0,
            1 => rng.random_range(-7i32..=7) as f64 * 0.5,
            _ => rng.random_range(-3.6..3.6),
        };
        let p: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let s: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let ok = acc2(&p, &s, Acc2Mode::PosNeg).ok() == oracle_acc2(&p, &s)
            && f1(&p, &s, Acc2Mode::PosNeg).ok() == oracle_f1(&p, &s)
            && acc7(&p, &s).unwrap() == oracle_acc7(&p, &s);
        if !ok {
            bad += 1;
        }
    }
    Outcome {
        id: 6,
        title: "metrics oracle",
        passed: bad == 0,
        detail: format!("{bad} mismatches in 10000 fuzzed arrays"),
    }
}

fn c11_plateau() -> Outcome {
    let mut s = PlateauScheduler::new(2e-3, 0.5, 10);
    let mut seq = vec![s.lr];
    // improving phase, then a flat validation loss
    for v in [3.0, 2.0, 1.5] {
        seq.push(s.observe(v));
    }
    for _ in 0..10 {
        seq.push(s.observe(1.5));
    }
    let mut distinct = seq.clone();
    distinct.dedup();
    let flat_until_last = seq[..seq.len() - 1].iter().all(|&x| x == 2e-3);
    Outcome {
        id: 11,
        title: "learning-rate plateau protocol",
        passed: distinct == [2e-3, 1e-3] && flat_until_last,
        detail: format!("lr sequence {distinct:?} after 10 flat epochs"),
    }
}

const SUITE: [&str; 7] = [
    "full",
    "content_only",
    "random_plan",
    "concat_injection",
    "single_stream",
    "reversed_injection",
    "wo_retriever",
];

#[derive(Default)]
struct SeedResult {
    acc2: BTreeMap<&'static str, f64>,
    time: BTreeMap<&'static str, Duration>,
    base_time: Duration,
    acc2_full_mr0: f64,
    mse: (f64, f64, f64),
}

fn run_seed(seed: u64) -> SeedResult {
    let cfg = ExperimentConfig::default().with_seed(seed);
    let start = Instant::now();
    let prep = prepare(&cfg).unwrap();
    let mut out = SeedResult {
        base_time: start.elapsed(),
        ..Default::default()
    };
    for name in SUITE {
        let start = Instant::now();
        let model = prep.train(ablation_variant(name).unwrap(), &mut TrainLog::default()).unwrap();
        let report = run_protocol(&model, &prep.bench.test, &prep.bench.train, &cfg.eval).unwrap();
        out.acc2.insert(name, report.mean.acc2);
        if name == "full" {
            let n = report.runs.len() as f64;
            let errs: Vec<_> = report.runs.iter().map(|r| r.reconstruction.unwrap()).collect();
            out.mse = (
                errs.iter().map(|e| e.model).sum::<f64>() / n,
                errs.iter().map(|e| e.zero).sum::<f64>() / n,
                errs.iter().map(|e| e.dataset_mean).sum::<f64>() / n,
            );
            let complete = EvalConfig {
                missing_rate: 0.0,
                ..cfg.eval.clone()
            };
            out.acc2_full_mr0 = run_protocol(&model, &prep.bench.test, &prep.bench.train, &complete).unwrap().mean.acc2;
        }
        out.time.insert(name, start.elapsed());
    }
    println!(
        "  seed {seed}: {} | full at MR=0 {:.4} | MSE model {:.4} zero {:.4} mean {:.4}",
        SUITE.iter().map(|n| format!("{n} {:.4}", out.acc2[n])).collect::<Vec<_>>().join(", "),
        out.acc2_full_mr0,
        out.mse.0,
        out.mse.1,
        out.mse.2
    );
    out
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of the mean of paired per-seed differences.
fn paired_se(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let m = mean(&d);
    let var = d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (d.len() - 1) as f64;
    (var / d.len() as f64).sqrt()
}

fn suite_criteria(results: &[SeedResult]) -> Vec<Outcome> {
    let col = |name: &str| results.iter().map(|r| r.acc2[name]).collect::<Vec<f64>>();
    let runtime = |names: &[&str]| {
        results
            .iter()
            .map(|r| r.base_time + names.iter().map(|n| r.time[n]).sum::<Duration>())
            .sum::<Duration>()
    };
    let describe = |names: &[&str]| names.iter().map(|n| format!("{n} {:.4}", mean(&col(n)))).collect::<Vec<_>>().join(" >= ");
    let mut out = Vec::new();

    let names7 = ["full", "content_only", "random_plan"];
    let m7: Vec<f64> = names7.iter().map(|n| mean(&col(n))).collect();
    let gaps: Vec<(f64, f64)> = names7
        .windows(2)
        .map(|w| (mean(&col(w[0])) - mean(&col(w[1])), paired_se(&col(w[0]), &col(w[1]))))
        .collect();
    let t7 = runtime(&names7);
    out.push(Outcome {
        id: 7,
        title: "retrieval-strategy ordering",
        passed: m7.windows(2).all(|w| w[0] >= w[1]) && gaps.iter().any(|(g, se)| g > se) && t7 < Duration::from_secs(20 * 60),
        detail: format!(
            "{} (plan_driven = full); gaps/SE {}; {:.0} s",
            describe(&names7),
            gaps.iter().map(|(g, se)| format!("{g:+.4}/{se:.4}")).collect::<Vec<_>>().join(", "),
            secs(t7)
        ),
    });

    let names8 = ["full", "concat_injection", "single_stream", "reversed_injection"];
    let m8: Vec<f64> = names8.iter().map(|n| mean(&col(n))).collect();
    let t8 = runtime(&names8);
    out.push(Outcome {
        id: 8,
        title: "injection ordering",
        passed: m8.windows(2).all(|w| w[0] >= w[1]) && t8 < Duration::from_secs(30 * 60),
        detail: format!("{} (dual = full); {:.0} s", describe(&names8), secs(t8)),
    });

    let full = mean(&col("full"));
    let mr0 = mean(&results.iter().map(|r| r.acc2_full_mr0).collect::<Vec<_>>());
    let wo = mean(&col("wo_retriever"));
    out.push(Outcome {
        id: 9,
        title: "robustness trend",
        passed: mr0 > full && full > wo,
        detail: format!("ACC2 MR=0 {mr0:.4} vs MR=2/3 {full:.4}; full {full:.4} vs wo_retriever {wo:.4}"),
    });

    let model = mean(&results.iter().map(|r| r.mse.0).collect::<Vec<_>>());
    let zero = mean(&results.iter().map(|r| r.mse.1).collect::<Vec<_>>());
    let dmean = mean(&results.iter().map(|r| r.mse.2).collect::<Vec<_>>());
    let t10 = runtime(&["full"]);
    out.push(Outcome {
        id: 10,
        title: "reconstruction beats trivial baselines",
        passed: model < zero && model < dmean && t10 < Duration::from_secs(10 * 60),
        detail: format!("MSE model {model:.4}, zero {zero:.4}, dataset mean {dmean:.4}; {:.0} s", secs(t10)),
    });
    out
}

fn main() -> ExitCode {
    let mut outcomes = vec![
        c1_tweedie_identity(),
        c2_chain_rule(),
        c3_zero_adapter(),
        c4_task_gradient(),
        c5_retrieval(),
        c6_metrics(),
    ];
    println!("training suite: {} variants x 5 seeds", SUITE.len());
    let results: Vec<SeedResult> = (1..=5).map(run_seed).collect();
    outcomes.extend(suite_criteria(&results));
    outcomes.push(c11_plateau());
    outcomes.sort_by_key(|o| o.id);

    println!();
    for o in &outcomes {
        let tag = if o.passed { "PASS" } else { "FAIL" };
        println!("{tag} [{:>2}] {}: {}", o.id, o.title, o.detail);
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("\n{} of {} criteria passed", outcomes.len() - failed, outcomes.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
