//! Correlation and detection metrics, interpretability AUC, fold
//! aggregation and patch heatmaps.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::preprocess::PatchGrid;

/// Pearson product-moment correlation.
pub fn pearson(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: targets.len(),
        });
    }
    if preds.len() < 2 {
        return Err(Error::InvalidParameter(
            "correlation needs at least two points".into(),
        ));
    }
    let (mx, my) = (math::mean(preds), math::mean(targets));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in preds.iter().zip(targets) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ConstantInput);
    }
    Ok((sxy / math::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

/// 1-based fractional ranks; tied values share the mean of their ranks.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && xs[idx[j]] == xs[idx[i]] {
            j += 1;
        }
        // Positions i..j hold ranks i+1..=j.
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Spearman correlation: Pearson on average ranks.
pub fn spearman(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: targets.len(),
        });
    }
    pearson(&average_ranks(preds), &average_ranks(targets))
}

/// Area under the ROC curve as the Mann-Whitney statistic:
/// `P(score_pos > score_neg) + 0.5 * P(score_pos == score_neg)`.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// ROC operating points `(fpr, tpr)` from the highest threshold down,
/// starting at `(0, 0)` and ending at `(1, 1)`. Tied scores form one step.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if labels[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    Ok(points)
}

/// How per-slide interpretability AUCs are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Mean of per-slide AUCs over slides with both classes.
    #[default]
    Macro,
    /// One AUC over all patches pooled together.
    Micro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpretabilityAuc {
    /// `None` when no slide had both classes.
    pub auc: Option<f64>,
    pub slides_used: usize,
    /// Slides with a single patch class, left out of the average.
    pub slides_excluded: usize,
    pub per_slide: Vec<Option<f64>>,
}

/// AUC of per-instance scores (attention weights or logits) against patch
/// labels, one `(scores, labels)` pair per slide.
pub fn interpretability_auc(
    slides: &[(Vec<f64>, Vec<bool>)],
    averaging: Averaging,
) -> Result<InterpretabilityAuc> {
    let mut per_slide = Vec::with_capacity(slides.len());
    for (scores, labels) in slides {
        per_slide.push(match roc_auc(scores, labels) {
            Ok(a) => Some(a),
            Err(Error::SingleClass) => None,
            Err(e) => return Err(e),
        });
    }
    let used: Vec<f64> = per_slide.iter().flatten().copied().collect();
    let auc = match averaging {
        Averaging::Macro => (!used.is_empty()).then(|| math::mean(&used)),
        Averaging::Micro => {
            let scores: Vec<f64> = slides.iter().flat_map(|s| s.0.iter().copied()).collect();
            let labels: Vec<bool> = slides.iter().flat_map(|s| s.1.iter().copied()).collect();
            roc_auc(&scores, &labels).ok()
        }
    };
    Ok(InterpretabilityAuc {
        auc,
        slides_used: used.len(),
        slides_excluded: slides.len() - used.len(),
        per_slide,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeatmapKind {
    Attention,
    Logits,
}

/// Per-patch values on the slide's patch grid, min-max normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub rows: usize,
    pub cols: usize,
    pub kind: HeatmapKind,
    /// Row-major cells; `None` where no patch was extracted.
    pub cells: Vec<Option<f64>>,
}

impl Heatmap {
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.cells[row * self.cols + col]
    }
}

fn normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo == 0.0 || !(hi - lo).is_finite() {
        return vec![0.5; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Places `values` on the grid. Without `coords` the values must follow the
/// grid's scan order; with `coords` each value goes to its own cell, and
/// every coordinate must be a cell of the grid.
pub fn build_heatmap(
    grid: &PatchGrid,
    values: &[f64],
    coords: Option<&[(u32, u32)]>,
    kind: HeatmapKind,
) -> Result<Heatmap> {
    if values.len() != grid.len() {
        return Err(Error::LengthMismatch {
            left: values.len(),
            right: grid.len(),
        });
    }
    let coords = coords.unwrap_or(&grid.coords);
    if coords.len() != values.len() {
        return Err(Error::LengthMismatch {
            left: values.len(),
            right: coords.len(),
        });
    }
    let mut cells = vec![None; grid.grid_rows * grid.grid_cols];
    let norm = normalize(values);
    for (&(r, c), v) in coords.iter().zip(norm) {
        let (r, c) = (r as usize, c as usize);
        if r >= grid.grid_rows
            || c >= grid.grid_cols
            || grid.coords.binary_search(&(r as u32, c as u32)).is_err()
        {
            return Err(Error::OutOfBounds);
        }
        let cell = &mut cells[r * grid.grid_cols + c];
        if cell.is_some() {
            return Err(Error::InvalidParameter("duplicate patch coordinate".into()));
        }
        *cell = Some(v);
    }
    Ok(Heatmap {
        rows: grid.grid_rows,
        cols: grid.grid_cols,
        kind,
        cells,
    })
}

/// Metrics of one fold. Undefined values are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FoldMetrics {
    /// Correlations in the space the model was trained in.
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    /// Slide-level detection AUC; only for cohorts with negatives.
    pub auc: Option<f64>,
    /// Correlations after mapping amplified predictions back to raw
    /// percentages; equal to the above without amplification.
    pub pearson_raw: Option<f64>,
    pub spearman_raw: Option<f64>,
    pub logits_auc: Option<f64>,
    pub attention_auc: Option<f64>,
}

impl FoldMetrics {
    pub const NAMES: [&'static str; 7] = [
        "pearson",
        "spearman",
        "auc",
        "pearson_raw",
        "spearman_raw",
        "logits_auc",
        "attention_auc",
    ];

    pub fn values(&self) -> [Option<f64>; 7] {
        [
            self.pearson,
            self.spearman,
            self.auc,
            self.pearson_raw,
            self.spearman_raw,
            self.logits_auc,
            self.attention_auc,
        ]
    }

    pub fn from_values(v: [Option<f64>; 7]) -> Self {
        FoldMetrics {
            pearson: v[0],
            spearman: v[1],
            auc: v[2],
            pearson_raw: v[3],
            spearman_raw: v[4],
            logits_auc: v[5],
            attention_auc: v[6],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_fold: Vec<FoldMetrics>,
    pub mean: FoldMetrics,
    /// Sample standard deviation (`n - 1`); zero for a single fold.
    pub std: FoldMetrics,
}

/// Unweighted mean and sample standard deviation of every metric over the
/// folds where it is defined.
pub fn aggregate_folds(per_fold: &[FoldMetrics]) -> MetricReport {
    let mut mean = [None; 7];
    let mut std = [None; 7];
    for k in 0..7 {
        let xs: Vec<f64> = per_fold.iter().filter_map(|f| f.values()[k]).collect();
        if xs.is_empty() {
            continue;
        }
        let m = math::mean(&xs);
        let s = if xs.len() > 1 {
            math::sqrt(xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64)
        } else {
            0.0
        };
        mean[k] = Some(m);
        std[k] = Some(s);
    }
    MetricReport {
        per_fold: per_fold.to_vec(),
        mean: FoldMetrics::from_values(mean),
        std: FoldMetrics::from_values(std),
    }
}
