//! Summary tables and plots over finished run directories.
//!
//! Writes `summary.csv`, `bars.csv`/`bars.png` (Pearson and Spearman per
//! run), `roc.csv`/`roc.png` (detection ROC per fold), `noise.csv`/
//! `noise.png` (metrics against noise level per method and cohort),
//! `amplification.csv` (plain vs amplified runs) and `report.json` listing
//! included and skipped runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::warn;
use milreg_core::eval::{roc_curve, FoldMetrics, MetricReport};
use serde::Serialize;

use crate::formats::{read_json, write_json};
use crate::plot::{Chart, PALETTE};
use crate::run::{read_predictions_csv, RunManifest};

#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub metrics: MetricReport,
    /// Per fold: detection ROC points, when both classes are present.
    pub roc: Vec<(usize, Vec<(f64, f64)>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Skipped {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportIndex {
    pub runs: Vec<PathBuf>,
    pub skipped: Vec<Skipped>,
}

fn load_run(dir: &Path) -> Result<LoadedRun> {
    let manifest: RunManifest = read_json(&dir.join("manifest.json"))?;
    let metrics: MetricReport = read_json(&dir.join("metrics.json"))?;
    let mut roc = Vec::new();
    for st in manifest.folds.iter().filter(|f| f.ok) {
        let path = dir
            .join(format!("fold_{}", st.fold))
            .join("predictions.csv");
        let preds = read_predictions_csv(&path)?;
        let scores: Vec<f64> = preds.iter().map(|p| p.prediction).collect();
        let labels: Vec<bool> = preds.iter().map(|p| p.target > 0.0).collect();
        if let Ok(points) = roc_curve(&scores, &labels) {
            roc.push((st.fold, points));
        }
    }
    Ok(LoadedRun {
        dir: dir.to_path_buf(),
        manifest,
        metrics,
        roc,
    })
}

/// Every directory holding a `manifest.json`, searched to depth two below
/// each input, in sorted order.
pub fn find_run_dirs(inputs: &[PathBuf]) -> Vec<PathBuf> {
    fn walk(dir: &Path, depth: usize, out: &mut Vec<PathBuf>) {
        if dir.join("manifest.json").is_file() && dir.join("folds.json").is_file() {
            out.push(dir.to_path_buf());
            return;
        }
        if depth == 0 {
            return;
        }
        let Ok(rd) = fs::read_dir(dir) else { return };
        let mut subs: Vec<PathBuf> = rd
            .flatten()
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        subs.sort();
        for s in subs {
            walk(&s, depth - 1, out);
        }
    }
    let mut out = Vec::new();
    for i in inputs {
        walk(i, 2, &mut out);
    }
    out.sort();
    out.dedup();
    out
}

pub fn load_runs(inputs: &[PathBuf]) -> (Vec<LoadedRun>, Vec<Skipped>) {
    let mut runs = Vec::new();
    let mut skipped = Vec::new();
    for i in inputs {
        if !i.is_dir() {
            warn!("{} is not a directory", i.display());
            skipped.push(Skipped {
                path: i.clone(),
                reason: "not a directory".into(),
            });
        }
    }
    for dir in find_run_dirs(inputs) {
        match load_run(&dir) {
            Ok(r) => runs.push(r),
            Err(e) => {
                warn!("skipping {}: {e:#}", dir.display());
                skipped.push(Skipped {
                    path: dir,
                    reason: format!("{e:#}"),
                });
            }
        }
    }
    (runs, skipped)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn run_name(r: &LoadedRun) -> String {
    r.dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn key_cols(r: &LoadedRun) -> [String; 5] {
    let m = &r.manifest;
    [
        run_name(r),
        m.method.clone(),
        m.cohort.clone(),
        m.noise_level.to_string(),
        m.amplified.to_string(),
    ]
}

const KEY: [&str; 5] = ["run", "method", "cohort", "noise_level", "amplified"];

fn metric(m: &FoldMetrics, name: &str) -> Option<f64> {
    let i = FoldMetrics::NAMES.iter().position(|n| *n == name)?;
    m.values()[i]
}

pub fn write_report(inputs: &[PathBuf], out: &Path) -> Result<ReportIndex> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let (runs, skipped) = load_runs(inputs);

    let mut w = csv::Writer::from_path(out.join("summary.csv"))?;
    let mut header: Vec<String> = KEY.map(String::from).to_vec();
    header.push("n_folds".into());
    for n in FoldMetrics::NAMES {
        header.push(format!("{n}_mean"));
        header.push(format!("{n}_std"));
    }
    w.write_record(&header)?;
    for r in &runs {
        let mut row = key_cols(r).to_vec();
        row.push(r.metrics.per_fold.len().to_string());
        for (m, s) in r.metrics.mean.values().iter().zip(r.metrics.std.values()) {
            row.push(opt(*m));
            row.push(opt(s));
        }
        w.write_record(&row)?;
    }
    w.flush()?;

    write_bars(&runs, out)?;
    write_roc(&runs, out)?;
    write_noise(&runs, out)?;
    write_amplification(&runs, out)?;

    let index = ReportIndex {
        runs: runs.iter().map(|r| r.dir.clone()).collect(),
        skipped,
    };
    write_json(&out.join("report.json"), &index)?;
    Ok(index)
}

fn write_bars(runs: &[LoadedRun], out: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(out.join("bars.csv"))?;
    let mut h = KEY.to_vec();
    h.extend(["metric", "mean", "std"]);
    w.write_record(&h)?;
    let n = runs.len().max(1) as f64;
    let mut chart = Chart::new(480, 320, (0.0, n), (-1.0, 1.0));
    for (i, r) in runs.iter().enumerate() {
        for (j, name) in ["pearson", "spearman"].into_iter().enumerate() {
            let mean = metric(&r.metrics.mean, name);
            let std = metric(&r.metrics.std, name);
            let mut row = key_cols(r).to_vec();
            row.extend([name.to_string(), opt(mean), opt(std)]);
            w.write_record(&row)?;
            if let Some(v) = mean {
                let x0 = i as f64 + 0.1 + 0.4 * j as f64;
                let color = PALETTE[(2 * i + j) % PALETTE.len()];
                chart.bar(x0, x0 + 0.35, v, color);
                if let Some(s) = std {
                    let xc = x0 + 0.175;
                    chart.line((xc, v - s), (xc, v + s), [0, 0, 0]);
                }
            }
        }
    }
    w.flush()?;
    chart.save(&out.join("bars.png"))
}

fn write_roc(runs: &[LoadedRun], out: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(out.join("roc.csv"))?;
    let mut h = KEY.to_vec();
    h.extend(["fold", "fpr", "tpr"]);
    w.write_record(&h)?;
    let mut chart = Chart::new(320, 320, (0.0, 1.0), (0.0, 1.0));
    chart.line((0.0, 0.0), (1.0, 1.0), [200, 200, 200]);
    for (i, r) in runs.iter().enumerate() {
        for (fold, pts) in &r.roc {
            for (fpr, tpr) in pts {
                let mut row = key_cols(r).to_vec();
                row.extend([fold.to_string(), fpr.to_string(), tpr.to_string()]);
                w.write_record(&row)?;
            }
            chart.polyline(pts, PALETTE[i % PALETTE.len()]);
        }
    }
    w.flush()?;
    chart.save(&out.join("roc.png"))
}

type SeriesKey = (String, String, bool);

fn write_noise(runs: &[LoadedRun], out: &Path) -> Result<()> {
    // (method, cohort, amplified) -> noise level -> run
    let mut series: BTreeMap<SeriesKey, Vec<&LoadedRun>> = BTreeMap::new();
    for r in runs {
        let m = &r.manifest;
        series
            .entry((m.method.clone(), m.cohort.clone(), m.amplified))
            .or_default()
            .push(r);
    }
    let mut w = csv::Writer::from_path(out.join("noise.csv"))?;
    w.write_record([
        "method",
        "cohort",
        "amplified",
        "noise_level",
        "metric",
        "mean",
        "std",
        "run",
    ])?;
    let max_noise = runs
        .iter()
        .map(|r| r.manifest.noise_level)
        .fold(0.0, f64::max)
        .max(0.5);
    let mut chart = Chart::new(480, 320, (0.0, max_noise), (0.0, 1.0));
    for (i, ((method, cohort, amp), rs)) in series.iter_mut().enumerate() {
        rs.sort_by(|a, b| {
            a.manifest
                .noise_level
                .total_cmp(&b.manifest.noise_level)
                .then_with(|| a.dir.cmp(&b.dir))
        });
        for name in ["pearson", "spearman"] {
            let mut pts = Vec::new();
            for r in rs.iter() {
                let mean = metric(&r.metrics.mean, name);
                w.write_record([
                    method.clone(),
                    cohort.clone(),
                    amp.to_string(),
                    r.manifest.noise_level.to_string(),
                    name.to_string(),
                    opt(mean),
                    opt(metric(&r.metrics.std, name)),
                    run_name(r),
                ])?;
                if let Some(v) = mean {
                    pts.push((r.manifest.noise_level, v));
                }
            }
            if name == "pearson" {
                chart.polyline(&pts, PALETTE[i % PALETTE.len()]);
            }
        }
    }
    w.flush()?;
    chart.save(&out.join("noise.png"))
}

fn write_amplification(runs: &[LoadedRun], out: &Path) -> Result<()> {
    // (method, cohort, noise) -> (plain, amplified)
    type Pair<'a> = (Option<&'a LoadedRun>, Option<&'a LoadedRun>);
    let mut pairs: BTreeMap<(String, String, String), Pair> = BTreeMap::new();
    for r in runs {
        let m = &r.manifest;
        let e = pairs
            .entry((
                m.method.clone(),
                m.cohort.clone(),
                m.noise_level.to_string(),
            ))
            .or_default();
        if m.amplified {
            e.1.get_or_insert(r);
        } else {
            e.0.get_or_insert(r);
        }
    }
    let mut w = csv::Writer::from_path(out.join("amplification.csv"))?;
    w.write_record([
        "method",
        "cohort",
        "noise_level",
        "metric",
        "plain",
        "amplified",
        "delta",
    ])?;
    for ((method, cohort, noise), (plain, amp)) in &pairs {
        let (Some(p), Some(a)) = (plain, amp) else {
            continue;
        };
        for name in ["auc", "pearson_raw", "spearman_raw", "pearson", "spearman"] {
            let (x, y) = (metric(&p.metrics.mean, name), metric(&a.metrics.mean, name));
            let delta = x.zip(y).map(|(x, y)| y - x);
            w.write_record([
                method.clone(),
                cohort.clone(),
                noise.clone(),
                name.to_string(),
                opt(x),
                opt(y),
                opt(delta),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
