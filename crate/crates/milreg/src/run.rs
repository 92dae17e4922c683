//! Cross-validated runs on disk.
//!
//! Layout of a run directory:
//!
//! ```text
//! config.json     resolved config
//! manifest.json   config hash, seeds, fold status
//! folds.json      the fold plan
//! metrics.csv     one row per fold plus a "mean" row with *_std columns
//! metrics.json    per-fold metrics, mean and sample std
//! fold_<i>/       manifest.json, history.csv, predictions.csv,
//!                 checkpoint.json, heatmaps/
//! ```
//!
//! Each fold writes only into its own directory. Failed folds are recorded
//! in the manifest and left out of the aggregate.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::{info, warn};
use milreg_core::eval::{aggregate_folds, FoldMetrics, InterpretabilityAuc, MetricReport};
use milreg_core::synth::{generate_cohort, generate_raster_cohort};
use milreg_core::train::{make_cv_folds, FoldPlan, History};
use serde::{Deserialize, Serialize};

use crate::config::{CohortConfig, ExperimentConfig};
use crate::experiment::{
    bags_from_rasters, fold_seed, run_fold, Cohort, FoldOutput, PredictionRow, TrainedModel,
};
use crate::formats::{read_cohort, write_json, Checkpoint};
use crate::heatmaps::write_slide_heatmaps;

pub const RUN_FORMAT: &str = "milreg-run/1";

pub fn load_cohort(cfg: &ExperimentConfig) -> Result<Cohort> {
    Ok(match &cfg.cohort {
        CohortConfig::Synthetic(spec) => Cohort::Bags(generate_cohort(spec)?),
        CohortConfig::Path(p) => Cohort::Bags(read_cohort(p)?),
        CohortConfig::Raster(r) => {
            let slides = generate_raster_cohort(&r.spec)?;
            let bags = bags_from_rasters(&slides, &r.extractor)?;
            Cohort::Raster { slides, bags }
        }
    })
}

pub fn fold_plan(cfg: &ExperimentConfig, cohort: &Cohort) -> Result<FoldPlan> {
    Ok(make_cv_folds(
        &cohort.cases(),
        cfg.cv.k,
        cfg.cv.seed,
        cfg.cv.strata_bins,
    )?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    /// `None` when the cohort was read from a file.
    pub cohort: Option<u64>,
    pub folds: u64,
    pub training: u64,
    /// Only set when label noise is on.
    pub noise: Option<u64>,
}

impl Seeds {
    pub fn of(cfg: &ExperimentConfig) -> Self {
        Seeds {
            cohort: cfg.cohort.seed(),
            folds: cfg.cv.seed,
            training: cfg.seed,
            noise: (cfg.targets.noise.level > 0.0).then_some(cfg.targets.noise.seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldStatus {
    pub fold: usize,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: String,
    pub config_hash: String,
    pub seeds: Seeds,
    pub method: String,
    pub cohort: String,
    pub noise_level: f64,
    pub amplified: bool,
    pub k: usize,
    pub n_slides: usize,
    pub n_cases: usize,
    pub folds: Vec<FoldStatus>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interpretability {
    pub logits: Option<InterpretabilityAuc>,
    pub attention: Option<InterpretabilityAuc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldManifest {
    pub fold: usize,
    pub config_hash: String,
    pub seeds: Seeds,
    /// Seed this fold's initialization and sampling were derived from.
    pub fold_seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
    pub checkpoint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub test_slide_fraction: f64,
    pub metrics: FoldMetrics,
    pub interpretability: Interpretability,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metrics_header() -> Vec<String> {
    let mut h: Vec<String> = ["method", "cohort", "noise_level", "amplified", "fold"]
        .map(String::from)
        .to_vec();
    h.extend(FoldMetrics::NAMES.iter().map(|s| s.to_string()));
    h.extend(FoldMetrics::NAMES.iter().map(|s| format!("{s}_std")));
    h
}

/// Fold rows in fold order, then the aggregate row.
pub fn write_metrics_csv(
    path: &Path,
    cfg: &ExperimentConfig,
    folds: &[(usize, FoldMetrics)],
    report: &MetricReport,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(metrics_header())?;
    let prefix = [
        cfg.method.to_string(),
        cfg.cohort_label(),
        cfg.targets.noise.level.to_string(),
        cfg.targets.amplify.enabled.to_string(),
    ];
    for (f, m) in folds {
        let mut row = prefix.to_vec();
        row.push(f.to_string());
        row.extend(m.values().map(opt));
        row.extend(std::iter::repeat_n(String::new(), 7));
        w.write_record(&row)?;
    }
    let mut row = prefix.to_vec();
    row.push("mean".into());
    row.extend(report.mean.values().map(opt));
    row.extend(report.std.values().map(opt));
    w.write_record(&row)?;
    w.flush()?;
    Ok(())
}

pub fn write_history_csv(path: &Path, history: &History) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss", "val_loss"])?;
    for e in &history.epochs {
        w.write_record([
            e.epoch.to_string(),
            e.train_loss.to_string(),
            e.val_loss.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_predictions_csv(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "slide_id",
        "case_id",
        "target",
        "prediction",
        "prediction_model",
    ])?;
    for r in rows {
        w.write_record([
            r.slide_id.clone(),
            r.case_id.clone(),
            r.target.to_string(),
            r.prediction.to_string(),
            r.prediction_model.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
pub struct PredictionRecord {
    pub slide_id: String,
    pub case_id: String,
    pub target: f64,
    pub prediction: f64,
    pub prediction_model: f64,
}

pub fn read_predictions_csv(path: &Path) -> Result<Vec<PredictionRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.with_context(|| format!("reading {}", path.display())))
        .collect()
}

/// Writes everything a fold produced into `dir`.
pub fn write_fold(
    dir: &Path,
    cfg: &ExperimentConfig,
    cohort: &Cohort,
    plan: &FoldPlan,
    out: &FoldOutput,
) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_history_csv(&dir.join("history.csv"), &out.history)?;
    write_predictions_csv(&dir.join("predictions.csv"), &out.predictions)?;
    let ckpt = match &out.model {
        TrainedModel::Head(m) => Checkpoint::from_head(m),
        TrainedModel::Weseg(m) => Checkpoint::from_weseg(m),
    };
    ckpt.save(&dir.join("checkpoint.json"))?;
    if cfg.heatmaps.enabled {
        let hdir = dir.join("heatmaps");
        for s in &out.instances {
            let grid = cohort
                .rasters()
                .and_then(|r| r.iter().find(|r| r.slide_id == s.slide_id))
                .map(|r| &r.grid);
            if let Err(e) = write_slide_heatmaps(&hdir, s, grid, cfg.heatmaps.cell_px) {
                warn!("fold {}: no heatmap for {}: {e:#}", out.fold, s.slide_id);
            }
        }
    }
    let manifest = FoldManifest {
        fold: out.fold,
        config_hash: cfg.hash(),
        seeds: Seeds::of(cfg),
        fold_seed: out.seed,
        epochs_run: out.history.len(),
        best_epoch: out.best_epoch,
        best_val_loss: out.best_val_loss(),
        checkpoint: "checkpoint.json".into(),
        threshold: out.threshold.as_ref().map(|t| t.threshold),
        n_train: out.n_train,
        n_val: out.n_val,
        n_test: out.n_test,
        test_slide_fraction: plan.folds[out.fold].test_slide_fraction,
        metrics: out.metrics,
        interpretability: Interpretability {
            logits: out.logits_interpretability.clone(),
            attention: out.attention_interpretability.clone(),
        },
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn fold_dir(out: &Path, fold: usize) -> PathBuf {
    out.join(format!("fold_{fold}"))
}

#[derive(Debug)]
pub struct RunResult {
    pub manifest: RunManifest,
    pub report: Option<MetricReport>,
    pub outputs: Vec<FoldOutput>,
}

impl RunResult {
    pub fn failed(&self) -> Vec<usize> {
        self.manifest
            .folds
            .iter()
            .filter(|f| !f.ok)
            .map(|f| f.fold)
            .collect()
    }
}

/// Runs every fold on the current rayon pool and writes the run directory.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<RunResult> {
    let setup = cfg.setup()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("config.json"), cfg)?;
    let cohort = load_cohort(cfg)?;
    let plan = fold_plan(cfg, &cohort)?;
    write_json(&out.join("folds.json"), &plan)?;
    info!(
        "{} on {} slides, {} folds",
        cfg.method,
        cohort.bags().len(),
        plan.k
    );

    let results = crate::experiment::run_all_folds(&cohort, &plan, &setup);
    let mut statuses = Vec::new();
    let mut outputs = Vec::new();
    for (f, r) in results.into_iter().enumerate() {
        let written = r.and_then(|o| {
            write_fold(&fold_dir(out, f), cfg, &cohort, &plan, &o)
                .map_err(|e| milreg_core::Error::InvalidParameter(format!("{e:#}")))?;
            Ok(o)
        });
        match written {
            Ok(o) => {
                statuses.push(FoldStatus {
                    fold: f,
                    ok: true,
                    error: None,
                });
                outputs.push(o);
            }
            Err(e) => {
                warn!("fold {f} failed: {e}");
                statuses.push(FoldStatus {
                    fold: f,
                    ok: false,
                    error: Some(e.to_string()),
                });
            }
        }
    }

    let per_fold: Vec<(usize, FoldMetrics)> = outputs.iter().map(|o| (o.fold, o.metrics)).collect();
    let report = (!per_fold.is_empty())
        .then(|| aggregate_folds(&per_fold.iter().map(|p| p.1).collect::<Vec<_>>()));
    if let Some(rep) = &report {
        write_metrics_csv(&out.join("metrics.csv"), cfg, &per_fold, rep)?;
        write_json(&out.join("metrics.json"), rep)?;
    }
    let manifest = RunManifest {
        format: RUN_FORMAT.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: cfg.hash(),
        seeds: Seeds::of(cfg),
        method: cfg.method.to_string(),
        cohort: cfg.cohort_label(),
        noise_level: cfg.targets.noise.level,
        amplified: cfg.targets.amplify.enabled,
        k: plan.k,
        n_slides: cohort.bags().len(),
        n_cases: cohort.cases().len(),
        folds: statuses,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(RunResult {
        manifest,
        report,
        outputs,
    })
}

/// Trains and evaluates one fold, writing `fold_<i>/` plus the plan and
/// config into `out`.
pub fn train_single_fold(cfg: &ExperimentConfig, fold: usize, out: &Path) -> Result<FoldOutput> {
    let setup = cfg.setup()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("config.json"), cfg)?;
    let cohort = load_cohort(cfg)?;
    let plan = fold_plan(cfg, &cohort)?;
    write_json(&out.join("folds.json"), &plan)?;
    let o = run_fold(&cohort, &plan, fold, &setup)?;
    write_fold(&fold_dir(out, fold), cfg, &cohort, &plan, &o)?;
    debug_assert_eq!(o.seed, fold_seed(cfg.seed, fold));
    Ok(o)
}
