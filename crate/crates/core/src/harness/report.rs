//! Reports: JSON on disk plus CSV tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::protocol::ProtocolReport;
use crate::error::{Error, Result};
use crate::objectives::Variant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub name: String,
    pub variant: Variant,
    pub seed: u64,
    pub protocol: ProtocolReport,
    /// Sub-reports keyed by ablation name.
    pub ablations: BTreeMap<String, Report>,
    pub config: ExperimentConfig,
    pub config_checksum: String,
    pub data_checksum: String,
    pub crate_version: String,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// This report followed by its sub-reports.
    pub fn rows(&self) -> Vec<&Report> {
        let mut out = vec![self];
        out.extend(self.ablations.values());
        out
    }
}

/// One line per report: name, metrics and realized missing rate.
pub fn summary_csv(report: &Report) -> String {
    let mut s = String::from("name,acc2,f1,acc7,mr\n");
    for r in report.rows() {
        let m = &r.protocol.mean;
        writeln!(s, "{},{:.6},{:.6},{:.6},{:.6}", r.name, m.acc2, m.f1, m.acc7, r.protocol.mean_realized_mr).unwrap();
    }
    s
}

/// One line per protocol run of every report.
pub fn runs_csv(report: &Report) -> String {
    let mut s = String::from("name,run,acc2,f1,acc7,mr,mse_model,mse_zero,mse_mean\n");
    for r in report.rows() {
        for run in &r.protocol.runs {
            let m = &run.metrics;
            let (a, b, c) = run
                .reconstruction
                .map(|e| (format!("{:.6}", e.model), format!("{:.6}", e.zero), format!("{:.6}", e.dataset_mean)))
                .unwrap_or_default();
            writeln!(
                s,
                "{},{},{:.6},{:.6},{:.6},{:.6},{a},{b},{c}",
                r.name, run.label, m.acc2, m.f1, m.acc7, run.realized_mr
            )
            .unwrap();
        }
    }
    s
}

/// Fixed-width plain-text table of the summary.
pub fn render_table(report: &Report) -> String {
    let mut s = format!("{:<24} {:>7} {:>7} {:>7} {:>6}\n", "name", "ACC2", "F1", "ACC7", "MR");
    for r in report.rows() {
        let m = &r.protocol.mean;
        writeln!(
            s,
            "{:<24} {:>7.2} {:>7.2} {:>7.2} {:>6.3}",
            r.name,
            100.0 * m.acc2,
            100.0 * m.f1,
            100.0 * m.acc7,
            r.protocol.mean_realized_mr
        )
        .unwrap();
    }
    s
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `<out>/report.json` and `<out>/tables/{summary,runs}.csv`.
pub fn write_report(report: &Report, out: &Path) -> Result<()> {
    let tables = out.join("tables");
    std::fs::create_dir_all(&tables).map_err(|e| Error::io(&tables, e))?;
    write(&out.join("report.json"), &report.to_json())?;
    write_tables(report, &tables)
}

pub fn write_tables(report: &Report, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join("summary.csv"), &summary_csv(report))?;
    write(&dir.join("runs.csv"), &runs_csv(report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ProtocolKind;
    use crate::harness::metrics::Metrics;
    use crate::harness::protocol::RunResult;

    fn sample() -> Report {
        let m = Metrics { acc2: 0.8, f1: 0.75, acc7: 0.3 };
        let protocol = ProtocolReport {
            kind: ProtocolKind::Random,
            requested_mr: 0.7,
            effective_mr: 2.0 / 3.0,
            runs: vec![RunResult {
                label: "1".into(),
                metrics: m,
                realized_mr: 2.0 / 3.0,
                reconstruction: None,
                fallbacks: 0,
            }],
            mean: m,
            mean_realized_mr: 2.0 / 3.0,
        };
        let mut r = Report {
            name: "full".into(),
            variant: Variant::default(),
            seed: 3,
            protocol,
            ablations: BTreeMap::new(),
            config: ExperimentConfig::default(),
            config_checksum: "abc".into(),
            data_checksum: "def".into(),
            crate_version: "0".into(),
        };
        let sub = Report { name: "wo_rerank".into(), ..r.clone() };
        r.ablations.insert(sub.name.clone(), sub);
        r
    }

    #[test]
    fn json_round_trip() {
        let r = sample();
        assert_eq!(Report::from_json(&r.to_json()).unwrap(), r);
    }

    #[test]
    fn tables() {
        let r = sample();
        let csv = summary_csv(&r);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.contains("wo_rerank,0.800000,0.750000,0.300000,0.666667"));
        assert_eq!(runs_csv(&r).lines().count(), 3);
        assert!(render_table(&r).contains("80.00"));
    }

    #[test]
    fn writes_files() {
        let dir = tempfile::tempdir().unwrap();
        write_report(&sample(), dir.path()).unwrap();
        assert!(dir.path().join("report.json").exists());
        assert!(dir.path().join("tables/summary.csv").exists());
        assert!(dir.path().join("tables/runs.csv").exists());
    }
}
