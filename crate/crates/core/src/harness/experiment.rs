//! Data generation, training and evaluation wired together from a config.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::ablation::ablation_variant;
use super::config::ExperimentConfig;
use super::protocol::run_protocol;
use super::report::Report;
use crate::error::Result;
use crate::objectives::{train_base, train_variant, BaseModel, Model, TrainLog, Variant};
use crate::retriever::dataset_checksum;
use crate::syndata::{generate_dataset, Benchmark};

/// Benchmark and trained shared stages for one config.
pub struct Prepared {
    pub bench: Benchmark,
    pub base: Arc<BaseModel>,
    pub log: TrainLog,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let bench = generate_dataset(&cfg.data)?;
    let mut log = TrainLog::default();
    let base = Arc::new(train_base(&bench, &cfg.model, cfg.seed, &mut log)?);
    Ok(Prepared { bench, base, log })
}

impl Prepared {
    pub fn train(&self, variant: Variant, log: &mut TrainLog) -> Result<Model> {
        train_variant(self.base.clone(), &self.bench, variant, log)
    }

    pub fn evaluate(&self, cfg: &ExperimentConfig, name: &str, model: &Model) -> Result<Report> {
        let protocol = run_protocol(model, &self.bench.test, &self.bench.train, &cfg.eval)?;
        Ok(Report {
            name: name.to_string(),
            variant: model.variant.clone(),
            seed: cfg.seed,
            protocol,
            ablations: BTreeMap::new(),
            config: cfg.clone(),
            config_checksum: cfg.checksum(),
            data_checksum: dataset_checksum(&self.bench.train),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
        })
    }
}

/// Trains and evaluates the full model and every named ablation on one
/// shared base. Ablations appear as sub-reports of the full model's report.
pub fn run_suite(cfg: &ExperimentConfig, names: &[&str]) -> Result<Report> {
    let variants: Vec<(&str, Variant)> = names
        .iter()
        .map(|&n| ablation_variant(n).map(|v| (n, v)))
        .collect::<Result<_>>()?;
    let prep = prepare(cfg)?;
    let mut log = TrainLog::default();
    let full = prep.train(Variant::default(), &mut log)?;
    let mut report = prep.evaluate(cfg, "full", &full)?;
    for (name, v) in variants {
        if name == "full" {
            continue;
        }
        let model = prep.train(v, &mut log)?;
        report.ablations.insert(name.to_string(), prep.evaluate(cfg, name, &model)?);
    }
    Ok(report)
}

/// A single named variant, reported on its own.
pub fn run_ablation(name: &str, cfg: &ExperimentConfig) -> Result<Report> {
    let variant = ablation_variant(name)?;
    let prep = prepare(cfg)?;
    let model = prep.train(variant, &mut TrainLog::default())?;
    prep.evaluate(cfg, name, &model)
}
