//! The command-line binary, driven as a subprocess.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mmrecon"))
}

const TINY: &str = r#"{
  "data": {"n_train": 100, "n_val": 20, "n_test": 24},
  "model": {"training": {"vae_epochs": 2, "contrastive_epochs": 1, "planner_epochs": 1,
                         "projector_epochs": 1, "diffusion_epochs": 1}},
  "eval": {"runs": [1, 2]}
}"#;

fn write_config(dir: &Path) -> String {
    let p = dir.join("c.json");
    std::fs::write(&p, TINY).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn verify_passes_on_a_fresh_build() {
    let out = bin().arg("verify").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines.iter().all(|l| l.starts_with("PASS")));
}

#[test]
fn exit_codes() {
    assert_eq!(bin().arg("frobnicate").output().unwrap().status.code(), Some(1));
    let out = bin().args(["ablate", "--name", "wo_gravity"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().contains("wo_gravity"));
    let out = bin().args(["report", "--input", "/nonexistent/report.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_twice_gives_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let run = |sub: &str| {
        let out = dir.path().join(sub);
        let st = bin()
            .args(["eval", "--config", &cfg, "--seed", "7", "--out", out.to_str().unwrap()])
            .output()
            .unwrap();
        assert_eq!(st.status.code(), Some(0));
        out
    };
    let a = run("a");
    let b = run("b");
    for f in ["report.json", "tables/summary.csv", "tables/runs.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 7);
    assert_eq!(report["config"]["data"]["n_test"], 24);

    let rendered = dir.path().join("r");
    let out = bin()
        .args(["report", "--input", a.join("report.json").to_str().unwrap(), "--out", rendered.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8(out.stdout).unwrap().contains("ACC2"));
    assert!(rendered.join("tables/summary.csv").exists());
}

#[test]
fn data_kb_train_and_checkpoint_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let d = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    let ok = |args: &[&str]| {
        let out = bin().args(args).output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    ok(&["gen-data", "--config", &cfg, "--out", &d("data")]);
    assert!(dir.path().join("data/meta.json").exists());
    ok(&["build-kb", "--config", &cfg, "--out", &d("kb")]);
    assert!(dir.path().join("kb/kb/kb.meta.json").exists());
    ok(&["train", "--config", &cfg, "--out", &d("model")]);
    for f in ["model.omga", "train_log.jsonl", "config.json"] {
        assert!(dir.path().join("model").join(f).exists(), "{f}");
    }
    let ckpt = d("model/model.omga");
    ok(&["eval", "--config", &cfg, "--checkpoint", &ckpt, "--out", &d("from_ckpt")]);
    ok(&["eval", "--config", &cfg, "--out", &d("retrained")]);
    let a = std::fs::read(dir.path().join("from_ckpt/report.json")).unwrap();
    let b = std::fs::read(dir.path().join("retrained/report.json")).unwrap();
    assert_eq!(a, b);
}
