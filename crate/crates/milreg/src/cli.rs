//! Command line. Exit codes: 0 success, 1 runtime failure, 2 usage or
//! configuration error.

use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::{Parser, Subcommand};
use log::{info, warn};

use crate::commands;
use crate::config::{ConfigError, ExperimentConfig, PreprocessConfig};
use crate::report::write_report;
use crate::run::{run_experiment, train_single_fold};

#[derive(Debug, Parser)]
#[command(
    name = "milreg",
    version,
    about = "Multiple-instance regression of tumor percentage"
)]
pub struct Cli {
    /// Worker threads for folds and slides (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the cohort seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Tissue, marker and percentage pipeline over a directory of PNG slides.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        /// Directory with `<slide>_tumor.png` masks (default: the input).
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate a single fold.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        fold: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the training seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Full cross-validated run.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the training seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Summary tables and plots over run directories.
    Report {
        /// Run directories, or directories containing them.
        #[arg(long = "input", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Heatmaps of a checkpoint on a cohort.
    Heatmap {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Cohort JSONL file.
        #[arg(long, conflicts_with = "config")]
        cohort: Option<PathBuf>,
        /// Experiment config whose cohort to use.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Only these slides (repeatable).
        #[arg(long = "slide")]
        slides: Vec<String>,
        #[arg(long, default_value_t = 8)]
        cell_px: u32,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `args` (including the program name), runs and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                2
            } else {
                1
            }
        }
    }
}

fn output_dir(cli_out: Option<PathBuf>, cfg: &ExperimentConfig) -> Result<PathBuf> {
    cli_out
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| ConfigError::new("no output directory: pass --out or set output_dir").into())
}

fn load_experiment(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<i32> {
    let pool = match cli.jobs {
        Some(0) => return Err(ConfigError::new("--jobs must be >= 1").into()),
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build()?,
        None => rayon::ThreadPoolBuilder::new().build()?,
    };
    pool.install(|| dispatch(cli.command))
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Synth { config, out, seed } => {
            let mut cohort = commands::load_synth_config(&config)?;
            if let Some(s) = seed {
                match &mut cohort {
                    crate::config::CohortConfig::Synthetic(c) => c.seed = s,
                    crate::config::CohortConfig::Raster(r) => r.spec.seed = s,
                    crate::config::CohortConfig::Path(_) => {}
                }
            }
            let m = commands::synth(&cohort, &out)?;
            println!("{} slides written to {}", m.n_slides, out.display());
            Ok(0)
        }
        Command::Preprocess {
            input,
            masks,
            config,
            out,
        } => {
            let cfg = match config {
                Some(p) => PreprocessConfig::load(&p)?,
                None => PreprocessConfig::default(),
            };
            if !input.is_dir() {
                return Err(ConfigError::new(format!(
                    "input {} is not a directory",
                    input.display()
                ))
                .into());
            }
            let s = commands::preprocess_dir(&input, masks.as_deref(), &cfg, &out)?;
            println!(
                "{} slides processed, {} failed",
                s.records.len(),
                s.failed.len()
            );
            Ok(if s.failed.is_empty() { 0 } else { 1 })
        }
        Command::Train {
            config,
            fold,
            out,
            seed,
        } => {
            let cfg = load_experiment(&config, seed)?;
            if fold >= cfg.cv.k {
                return Err(ConfigError::new(format!(
                    "fold {fold} out of range for k = {}",
                    cfg.cv.k
                ))
                .into());
            }
            let out = output_dir(out, &cfg)?;
            let o = train_single_fold(&cfg, fold, &out)?;
            println!(
                "fold {fold}: pearson {:?} spearman {:?} ({} epochs)",
                o.metrics.pearson,
                o.metrics.spearman,
                o.history.len()
            );
            Ok(0)
        }
        Command::Run { config, out, seed } => {
            let cfg = load_experiment(&config, seed)?;
            let out = output_dir(out, &cfg)?;
            let r = run_experiment(&cfg, &out)?;
            if let Some(rep) = &r.report {
                println!(
                    "{}: pearson {:?} spearman {:?} auc {:?}",
                    cfg.method, rep.mean.pearson, rep.mean.spearman, rep.mean.auc
                );
            }
            let failed = r.failed();
            if failed.is_empty() {
                info!("results in {}", out.display());
                Ok(0)
            } else {
                warn!(
                    "folds {failed:?} failed; partial results in {}",
                    out.display()
                );
                Ok(1)
            }
        }
        Command::Report { inputs, out } => {
            let idx = write_report(&inputs, &out)?;
            println!(
                "{} runs summarized, {} skipped",
                idx.runs.len(),
                idx.skipped.len()
            );
            if idx.runs.is_empty() {
                anyhow::bail!("no completed runs found");
            }
            Ok(0)
        }
        Command::Heatmap {
            checkpoint,
            cohort,
            config,
            slides,
            cell_px,
            out,
        } => {
            if cell_px == 0 {
                return Err(ConfigError::new("--cell-px must be >= 1").into());
            }
            let cfg = config.as_deref().map(ExperimentConfig::load).transpose()?;
            let c = commands::heatmap_cohort(cohort.as_deref(), cfg.as_ref())?;
            let n = commands::heatmaps_from_checkpoint(&checkpoint, &c, &slides, &out, cell_px)?;
            println!("{n} slides written to {}", out.display());
            Ok(0)
        }
    }
}
