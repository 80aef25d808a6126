//! Command-line entry point. Exit codes: 0 success, 1 invalid input, 2 failure while running.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use super::ablation::{ablation_variant, ABLATIONS};
use super::checkpoint;
use super::config::ExperimentConfig;
use super::experiment::{prepare, run_suite};
use super::report::{render_table, write_report, write_tables, Report};
use super::verify;
use crate::error::{Error, Result};
use crate::objectives::{Model, TrainLog};
use crate::retriever::dataset_checksum;
use crate::syndata::{generate_dataset, save_benchmark};

#[derive(Debug, Parser)]
#[command(name = "mmrecon", version, about = "Missing-modality reconstruction experiments on synthetic data")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment configuration (JSON); defaults apply to omitted fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides both the data and the training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic benchmark.
    GenData,
    /// Train the shared stages and write the knowledge base.
    BuildKb,
    /// Train one variant and write its checkpoint and training log.
    Train {
        #[arg(long, default_value = "full")]
        variant: String,
    },
    /// Evaluate one variant under the configured protocol.
    Eval {
        #[arg(long, default_value = "full")]
        variant: String,
        /// Load weights from this checkpoint instead of training.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate the full model and the named ablations (all by default).
    Ablate {
        #[arg(long = "name")]
        names: Vec<String>,
    },
    /// Run the built-in property checks.
    Verify,
    /// Render a report as a table and CSV files.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    Ok(match common.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let common = &cli.common;
    let say = |out: &mut dyn Write, msg: String| {
        let _ = writeln!(out, "{msg}");
    };
    match cli.command {
        Command::GenData => {
            let cfg = load_config(common)?;
            let bench = generate_dataset(&cfg.data)?;
            save_benchmark(&bench, &common.out)?;
            say(out, format!("wrote benchmark to {}", common.out.display()));
        }
        Command::BuildKb => {
            let cfg = load_config(common)?;
            let prep = prepare(&cfg)?;
            let dir = common.out.join("kb");
            prep.base.kb.save(&dir, &cfg.model.retrieval)?;
            say(out, format!("wrote {} entries to {}", prep.base.kb.len(), dir.display()));
        }
        Command::Train { variant } => {
            let cfg = load_config(common)?;
            let v = ablation_variant(&variant)?;
            let prep = prepare(&cfg)?;
            let mut log = prep.log.clone();
            let model = prep.train(v, &mut log)?;
            create_dir(&common.out)?;
            checkpoint::save(&model.to_bundle(), &common.out.join("model.omga"))?;
            log.write_jsonl(&common.out.join("train_log.jsonl"))?;
            write_text(&common.out.join("config.json"), &cfg.to_json())?;
            say(out, format!("trained `{variant}`; checkpoint in {}", common.out.display()));
        }
        Command::Eval { variant, checkpoint: ckpt } => {
            let cfg = load_config(common)?;
            let v = ablation_variant(&variant)?;
            let report = match ckpt {
                Some(path) => {
                    cfg.validate()?;
                    let bench = generate_dataset(&cfg.data)?;
                    let bundle = checkpoint::load(&path)?;
                    let model = Model::from_bundle(
                        &bundle,
                        &cfg.model,
                        &bench.config.modality_dims,
                        cfg.seed,
                        v,
                        dataset_checksum(&bench.train),
                    )?;
                    let prep = super::experiment::Prepared {
                        base: model.base.clone(),
                        bench,
                        log: TrainLog::default(),
                    };
                    prep.evaluate(&cfg, &variant, &model)?
                }
                None => {
                    let prep = prepare(&cfg)?;
                    let model = prep.train(v, &mut TrainLog::default())?;
                    prep.evaluate(&cfg, &variant, &model)?
                }
            };
            write_report(&report, &common.out)?;
            say(out, render_table(&report));
        }
        Command::Ablate { names } => {
            let cfg = load_config(common)?;
            let names: Vec<&str> = if names.is_empty() {
                ABLATIONS.to_vec()
            } else {
                names.iter().map(String::as_str).collect()
            };
            let report = run_suite(&cfg, &names)?;
            write_report(&report, &common.out)?;
            say(out, render_table(&report));
        }
        Command::Verify => {
            let seed = common.seed.unwrap_or(0);
            let props = verify::run_all(seed)?;
            for p in &props {
                say(out, p.to_string());
            }
            if let Some(p) = props.iter().find(|p| !p.passed) {
                return Err(Error::PropertyFailed(p.to_string()));
            }
        }
        Command::Report { input } => {
            let report = Report::load(&input)?;
            write_tables(&report, &common.out.join("tables"))?;
            say(out, render_table(&report));
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = write!(out, "{e}");
                    if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                        1
                    } else {
                        0
                    }
                }
                _ => {
                    let _ = write!(err, "{e}");
                    1
                }
            };
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}
