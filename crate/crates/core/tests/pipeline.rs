//! End-to-end training and evaluation on small and default configurations.

use mmrecon::harness::ablation::ablation_variant;
use mmrecon::harness::experiment::{prepare, run_suite};
use mmrecon::harness::protocol::run_protocol;
use mmrecon::harness::{EvalConfig, ExperimentConfig, ProtocolKind};
use mmrecon::objectives::{EpochLog, TrainLog, Variant};
use mmrecon::syndata::{availability_patterns, pattern_label};

fn tiny() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default().with_seed(21);
    cfg.data.n_train = 120;
    cfg.data.n_val = 24;
    cfg.data.n_test = 30;
    let t = &mut cfg.model.training;
    t.vae_epochs = 3;
    t.contrastive_epochs = 2;
    t.planner_epochs = 2;
    t.projector_epochs = 1;
    t.diffusion_epochs = 2;
    cfg.eval.runs = vec![1, 2];
    cfg
}

fn mean_total(entries: &[&EpochLog], key: &str) -> (f64, f64) {
    (entries[0].losses[key], entries[entries.len() - 1].losses[key])
}

#[test]
fn default_config_training_reduces_loss() {
    let cfg = ExperimentConfig::default().with_seed(2);
    let prep = prepare(&cfg).unwrap();
    let mut log = prep.log.clone();
    let _model = prep.train(Variant::default(), &mut log).unwrap();
    for (stage, key) in [
        ("vae", "mse"),
        ("contrastive", "info_nce"),
        ("planner", "nll"),
        ("projector", "fit"),
        ("diffusion", "total"),
    ] {
        let entries = log.stage(stage);
        assert!(!entries.is_empty(), "{stage}");
        let (first, last) = mean_total(&entries, key);
        assert!(last < first, "{stage}: {first} -> {last}");
    }
    let first = &log.stage("diffusion")[0];
    assert_eq!(first.lr, 2e-3);
    assert_eq!(first.seed, 2);
    assert!(first.mr > 0.3 && first.mr < 0.5);
    for e in &log.entries {
        assert!(e.losses.values().all(|v| v.is_finite() && *v >= 0.0));
    }
}

#[test]
fn log_lines_are_json_objects() {
    let cfg = tiny();
    let prep = prepare(&cfg).unwrap();
    let text = prep.log.to_jsonl().unwrap();
    assert_eq!(text.lines().count(), prep.log.entries.len());
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["stage", "epoch", "lr", "losses", "mr", "seed"] {
            assert!(v.get(key).is_some(), "{key} missing in {line}");
        }
    }
    let again = prepare(&cfg).unwrap();
    assert_eq!(again.log, prep.log);
}

#[test]
fn protocols_on_a_tiny_model() {
    let cfg = tiny();
    let prep = prepare(&cfg).unwrap();
    let model = prep.train(Variant::default(), &mut TrainLog::default()).unwrap();

    let fixed = EvalConfig {
        protocol: ProtocolKind::Fixed,
        ..cfg.eval.clone()
    };
    let r = run_protocol(&model, &prep.bench.test, &prep.bench.train, &fixed).unwrap();
    assert_eq!(r.runs.len(), 7);
    let labels: Vec<String> = availability_patterns(3).iter().map(|p| pattern_label(p, 3)).collect();
    assert_eq!(r.runs.iter().map(|x| x.label.clone()).collect::<Vec<_>>(), labels);
    // full availability: nothing reconstructed
    assert_eq!(r.runs[0].realized_mr, 0.0);
    assert!(r.runs[0].reconstruction.is_none());

    let zero = EvalConfig {
        missing_rate: 0.0,
        ..cfg.eval.clone()
    };
    let rz = run_protocol(&model, &prep.bench.test, &prep.bench.train, &zero).unwrap();
    assert_eq!(rz.runs.len(), 2);
    assert_eq!(rz.mean, r.runs[0].metrics);

    let high = run_protocol(&model, &prep.bench.test, &prep.bench.train, &cfg.eval).unwrap();
    assert_eq!(high.effective_mr, 2.0 / 3.0);
    assert!((high.mean_realized_mr - 2.0 / 3.0).abs() < 1e-12);
    for run in &high.runs {
        for v in [run.metrics.acc2, run.metrics.f1, run.metrics.acc7] {
            assert!((0.0..=1.0).contains(&v));
        }
    }
}

#[test]
fn suite_reports_are_reproducible() {
    let mut cfg = tiny();
    cfg.eval.runs = vec![4];
    let names = ["wo_retriever", "wo_planner"];
    let a = run_suite(&cfg, &names).unwrap();
    let b = run_suite(&cfg, &names).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.ablations.len(), 2);
    assert_eq!(a.ablations["wo_retriever"].variant, ablation_variant("wo_retriever").unwrap());
    assert_eq!(a.config_checksum, cfg.checksum());
    // sequential evaluation gives the same bytes
    let mut seq = cfg.clone();
    seq.eval.parallel = false;
    let c = run_suite(&seq, &names).unwrap();
    assert_eq!(c.protocol, a.protocol);
}
