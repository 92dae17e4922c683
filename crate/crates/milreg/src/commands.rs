//! `synth`, `preprocess` and `heatmap`; `run`, `train` and `report` live in
//! their own modules.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::{info, warn};
use milreg_core::mil::forward;
use milreg_core::preprocess::{
    extract_marker_region, marker_percentage, patch_fractions, percentage_from_mask,
    segment_tissue, tile_slide, PatchGrid, SlideRaster,
};
use milreg_core::synth::{generate_cohort, generate_raster_cohort};
use serde::{Deserialize, Serialize};

use crate::config::{CohortConfig, ConfigError, ExperimentConfig, PreprocessConfig};
use crate::experiment::{bags_from_rasters, InstanceScores};
use crate::formats::{
    load_mask, load_rgb, save_mask, save_rgb, write_cohort, write_json, Checkpoint, LoadedModel,
};
use crate::heatmaps::write_slide_heatmaps;
use crate::run::load_cohort;

/// Reads the cohort section of a synth config: either a bare cohort
/// (`{"synthetic": ...}` / `{"raster": ...}`) or a full experiment config.
pub fn load_synth_config(path: &Path) -> Result<CohortConfig, ConfigError> {
    let text = fs::read_to_string(path)
        .map_err(|e| ConfigError::new(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| ConfigError::new(format!("{}: {e}", path.display())))?;
    let cohort = if value.get("cohort").is_some() {
        ExperimentConfig::from_json(&text)
            .map_err(|e| ConfigError::new(format!("{}: {}", path.display(), e.0)))?
            .cohort
    } else {
        serde_json::from_value(value)
            .map_err(|e| ConfigError::new(format!("{}: {e}", path.display())))?
    };
    match &cohort {
        CohortConfig::Synthetic(s) => s
            .validate()
            .map_err(|e| ConfigError::new(format!("cohort: {e}")))?,
        CohortConfig::Raster(r) => r
            .spec
            .validate()
            .map_err(|e| ConfigError::new(format!("cohort: {e}")))?,
        CohortConfig::Path(_) => {
            return Err(ConfigError::new(
                "synth needs a synthetic or raster cohort spec, not a path",
            ))
        }
    }
    Ok(cohort)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRecord {
    pub slide_id: String,
    pub case_id: String,
    pub target: f64,
    pub n_instances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub format: String,
    pub cohort: CohortConfig,
    pub n_slides: usize,
    pub records: Vec<SynthRecord>,
}

/// Writes `cohort.jsonl` and `manifest.json`; raster cohorts also get
/// `slides/<id>.png`, `masks/<id>_{tissue,tumor,marker}.png` and
/// `grids/<id>.json`.
pub fn synth(cohort: &CohortConfig, out: &Path) -> Result<SynthManifest> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let bags = match cohort {
        CohortConfig::Synthetic(spec) => generate_cohort(spec)?,
        CohortConfig::Raster(r) => {
            let slides = generate_raster_cohort(&r.spec)?;
            let (sd, md, gd) = (out.join("slides"), out.join("masks"), out.join("grids"));
            for d in [&sd, &md, &gd] {
                fs::create_dir_all(d)?;
            }
            for s in &slides {
                let id = &s.slide_id;
                save_rgb(&sd.join(format!("{id}.png")), &s.raster.pixels)?;
                for (name, m) in [
                    ("tissue", &s.raster.tissue_mask),
                    ("tumor", &s.raster.tumor_mask),
                    ("marker", &s.raster.marker_mask),
                ] {
                    if let Some(m) = m {
                        save_mask(&md.join(format!("{id}_{name}.png")), m)?;
                    }
                }
                write_json(
                    &gd.join(format!("{id}.json")),
                    &GridFile {
                        slide_id: id.clone(),
                        grid: s.grid.clone(),
                        tumor_fractions: s.patch_tumor_fractions.clone(),
                        target: s.target.value(),
                    },
                )?;
            }
            bags_from_rasters(&slides, &r.extractor)?
        }
        CohortConfig::Path(_) => anyhow::bail!(ConfigError::new("synth needs a cohort spec")),
    };
    write_cohort(&out.join("cohort.jsonl"), &bags)?;
    let manifest = SynthManifest {
        format: "milreg-synth/1".into(),
        cohort: cohort.clone(),
        n_slides: bags.len(),
        records: bags
            .iter()
            .map(|b| SynthRecord {
                slide_id: b.slide_id().into(),
                case_id: b.case_id().into(),
                target: b.target().value(),
                n_instances: b.len(),
            })
            .collect(),
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    info!("wrote {} slides to {}", bags.len(), out.display());
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFile {
    pub slide_id: String,
    pub grid: PatchGrid,
    pub tumor_fractions: Vec<f64>,
    pub target: f64,
}

/// Result of preprocessing one slide image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideRecord {
    pub slide_id: String,
    pub width: usize,
    pub height: usize,
    pub tissue_pixels: usize,
    pub n_patches: usize,
    /// Marker-based if a marker was found, otherwise mask-based.
    pub percentage: Option<f64>,
    pub source: Option<String>,
    pub marker_percentage: Option<f64>,
    pub mask_percentage: Option<f64>,
    pub errors: Vec<String>,
    pub grid: PatchGrid,
    /// From the tumor mask when one is supplied, else from the marker region.
    pub patch_labels: Option<Vec<bool>>,
}

fn is_mask_name(stem: &str) -> bool {
    ["_tissue", "_tumor", "_marker", "_marker_region"]
        .iter()
        .any(|s| stem.ends_with(s))
}

/// Slide PNGs in `dir`, skipping files named like masks.
pub fn list_slides(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .flatten()
        .map(|e| e.path())
        .filter(|p| {
            p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
                && p.file_stem()
                    .is_some_and(|s| !is_mask_name(&s.to_string_lossy()))
        })
        .collect();
    out.sort();
    Ok(out)
}

pub fn preprocess_slide(
    path: &Path,
    masks_dir: &Path,
    cfg: &PreprocessConfig,
    out: &Path,
) -> Result<SlideRecord> {
    let id = path
        .file_stem()
        .context("slide file has no name")?
        .to_string_lossy()
        .into_owned();
    let image = SlideRaster::new(load_rgb(path)?, 0.5);
    let tissue = segment_tissue(&image, &cfg.tissue, &cfg.marker);
    save_mask(&out.join(format!("{id}_tissue.png")), &tissue)?;
    let grid = tile_slide(&tissue, cfg.patch_size, cfg.min_foreground)?;
    let mut errors = Vec::new();

    let marker = match extract_marker_region(&image, &cfg.marker) {
        Ok(region) => {
            save_mask(&out.join(format!("{id}_marker_region.png")), &region)?;
            match marker_percentage(&tissue, &region) {
                Ok(p) => Some((p.value(), region)),
                Err(e) => {
                    errors.push(format!("marker: {e}"));
                    None
                }
            }
        }
        Err(e) => {
            warn!("{id}: {e}");
            errors.push(format!("marker: {e}"));
            None
        }
    };

    let tumor_path = masks_dir.join(format!("{id}_tumor.png"));
    let tumor = if tumor_path.is_file() {
        Some(load_mask(&tumor_path)?)
    } else {
        None
    };
    let mask_pct = match &tumor {
        Some(t) => match percentage_from_mask(t, &tissue) {
            Ok(p) => Some(p.value()),
            Err(e) => {
                errors.push(format!("mask: {e}"));
                None
            }
        },
        None => None,
    };

    let label_source = tumor.as_ref().or(marker.as_ref().map(|m| &m.1));
    let patch_labels = match label_source {
        Some(m) => Some(
            patch_fractions(m, &grid)?
                .into_iter()
                .map(|f| f > cfg.label_threshold)
                .collect(),
        ),
        None => None,
    };
    let marker_pct = marker.map(|m| m.0);
    let (percentage, source) = match (marker_pct, mask_pct) {
        (Some(p), _) => (Some(p), Some("marker".to_string())),
        (None, Some(p)) => (Some(p), Some("mask".to_string())),
        _ => (None, None),
    };
    let rec = SlideRecord {
        slide_id: id.clone(),
        width: image.width(),
        height: image.height(),
        tissue_pixels: tissue.count(),
        n_patches: grid.len(),
        percentage,
        source,
        marker_percentage: marker_pct,
        mask_percentage: mask_pct,
        errors,
        grid,
        patch_labels,
    };
    write_json(&out.join(format!("{id}.json")), &rec)?;
    Ok(rec)
}

#[derive(Debug, Default)]
pub struct PreprocessSummary {
    pub records: Vec<SlideRecord>,
    /// Slides that could not be processed at all.
    pub failed: Vec<(PathBuf, String)>,
}

/// Runs the image pipeline over every slide PNG in `input`, writing one
/// JSON per slide, the tissue and marker masks and `percentages.csv`.
pub fn preprocess_dir(
    input: &Path,
    masks_dir: Option<&Path>,
    cfg: &PreprocessConfig,
    out: &Path,
) -> Result<PreprocessSummary> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let slides = list_slides(input)?;
    if slides.is_empty() {
        warn!("no slide images in {}", input.display());
    }
    let masks_dir = masks_dir.unwrap_or(input);
    let results: Vec<(PathBuf, Result<SlideRecord>)> = {
        use rayon::prelude::*;
        slides
            .par_iter()
            .map(|p| (p.clone(), preprocess_slide(p, masks_dir, cfg, out)))
            .collect()
    };
    let mut summary = PreprocessSummary::default();
    for (p, r) in results {
        match r {
            Ok(rec) => summary.records.push(rec),
            Err(e) => {
                warn!("{}: {e:#}", p.display());
                summary.failed.push((p, format!("{e:#}")));
            }
        }
    }
    let mut w = csv::Writer::from_path(out.join("percentages.csv"))?;
    w.write_record([
        "slide_id",
        "percentage",
        "source",
        "marker_percentage",
        "mask_percentage",
        "n_patches",
    ])?;
    let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &summary.records {
        w.write_record([
            r.slide_id.clone(),
            f(r.percentage),
            r.source.clone().unwrap_or_default(),
            f(r.marker_percentage),
            f(r.mask_percentage),
            r.n_patches.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(summary)
}

/// Heatmaps of a saved model on a cohort. Feature checkpoints work on any
/// cohort; WeSEG checkpoints need a raster cohort config.
pub fn heatmaps_from_checkpoint(
    checkpoint: &Path,
    cohort: &crate::experiment::Cohort,
    slides: &[String],
    out: &Path,
    cell_px: u32,
) -> Result<usize> {
    let model = Checkpoint::load(checkpoint)?.to_model()?;
    let wanted = |id: &str| slides.is_empty() || slides.iter().any(|s| s == id);
    let mut n = 0;
    match &model {
        LoadedModel::Head(m) => {
            for bag in cohort.bags().iter().filter(|b| wanted(b.slide_id())) {
                let p = forward(bag, m)?;
                let scores = InstanceScores {
                    slide_id: bag.slide_id().into(),
                    coords: bag.coords(),
                    logits: p.instance_logits,
                    attention: p.attention,
                    labels: None,
                };
                let grid = cohort
                    .rasters()
                    .and_then(|r| r.iter().find(|r| r.slide_id == bag.slide_id()))
                    .map(|r| &r.grid);
                write_slide_heatmaps(out, &scores, grid, cell_px)?;
                n += 1;
            }
        }
        LoadedModel::Weseg(m) => {
            let rasters = cohort.rasters().ok_or_else(|| {
                ConfigError::new("weseg heatmaps need a raster cohort (use --config)")
            })?;
            for s in rasters.iter().filter(|s| wanted(&s.slide_id)) {
                if s.patches.is_empty() {
                    continue;
                }
                let scores = InstanceScores {
                    slide_id: s.slide_id.clone(),
                    coords: s.grid.coords.clone(),
                    logits: m.logits(&s.patches)?,
                    attention: None,
                    labels: None,
                };
                write_slide_heatmaps(out, &scores, Some(&s.grid), cell_px)?;
                n += 1;
            }
        }
    }
    if n == 0 && !slides.is_empty() {
        anyhow::bail!("none of the requested slides are in the cohort");
    }
    Ok(n)
}

/// Cohort for `heatmap`: a JSONL file or the cohort section of a config.
pub fn heatmap_cohort(
    cohort: Option<&Path>,
    config: Option<&ExperimentConfig>,
) -> Result<crate::experiment::Cohort> {
    match (cohort, config) {
        (Some(p), _) => Ok(crate::experiment::Cohort::Bags(
            crate::formats::read_cohort(p)?,
        )),
        (None, Some(cfg)) => load_cohort(cfg),
        (None, None) => Err(ConfigError::new("heatmap needs --cohort or --config").into()),
    }
}
