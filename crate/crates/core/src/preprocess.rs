//! Slide image analysis: tissue segmentation, pen-marker extraction, area
//! percentages and patch tiling.
//!
//! The marker pipeline runs in four steps: segment the tissue, detect the
//! pen marker and fill the region it encloses, intersect the two, and take
//! the covered fraction of tissue. Marker pixels never count as tissue.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::bag::TumorPercentage;
use crate::error::{Error, Result};
use crate::raster::{rgb_to_hsv, Mask, RgbImage};

/// An RGB slide with optional ground-truth masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideRaster {
    pub pixels: RgbImage,
    /// Micrometres per pixel.
    pub pixel_spacing: f64,
    pub tissue_mask: Option<Mask>,
    pub tumor_mask: Option<Mask>,
    pub marker_mask: Option<Mask>,
}

impl SlideRaster {
    pub fn new(pixels: RgbImage, pixel_spacing: f64) -> Self {
        SlideRaster {
            pixels,
            pixel_spacing,
            tissue_mask: None,
            tumor_mask: None,
            marker_mask: None,
        }
    }

    pub fn width(&self) -> usize {
        self.pixels.width()
    }

    pub fn height(&self) -> usize {
        self.pixels.height()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TissueConfig {
    /// HSV saturation above which a pixel is tissue.
    pub saturation_min: f64,
    /// Rec. 601 luminance at or above which a pixel is background.
    pub luminance_max: f64,
    /// Connected components smaller than this (pixels) are dropped.
    pub min_area: usize,
    /// Drop pixels in the marker hue band before component filtering.
    pub exclude_marker: bool,
}

impl Default for TissueConfig {
    fn default() -> Self {
        TissueConfig {
            saturation_min: 0.08,
            luminance_max: 0.95,
            min_area: 64,
            exclude_marker: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarkerConfig {
    pub hue_min: f64,
    pub hue_max: f64,
    pub saturation_min: f64,
    pub value_min: f64,
    /// Radius of the disk used for morphological closing.
    pub closing_radius: usize,
}

impl Default for MarkerConfig {
    fn default() -> Self {
        MarkerConfig {
            hue_min: 100.0,
            hue_max: 260.0,
            saturation_min: 0.25,
            value_min: 0.15,
            closing_radius: 5,
        }
    }
}

impl MarkerConfig {
    pub fn is_marker(&self, c: [u8; 3]) -> bool {
        let (h, s, v) = rgb_to_hsv(
            c[0] as f64 / 255.0,
            c[1] as f64 / 255.0,
            c[2] as f64 / 255.0,
        );
        s >= self.saturation_min && v >= self.value_min && h >= self.hue_min && h <= self.hue_max
    }
}

#[inline]
fn luminance(c: [u8; 3]) -> f64 {
    (0.299 * c[0] as f64 + 0.587 * c[1] as f64 + 0.114 * c[2] as f64) / 255.0
}

/// Foreground tissue by saturation and luminance thresholds, with small
/// components removed.
pub fn segment_tissue(image: &SlideRaster, cfg: &TissueConfig, marker: &MarkerConfig) -> Mask {
    let img = &image.pixels;
    let raw = Mask::from_fn(img.width(), img.height(), |x, y| {
        let c = img.get(x, y);
        let (_, s, _) = rgb_to_hsv(
            c[0] as f64 / 255.0,
            c[1] as f64 / 255.0,
            c[2] as f64 / 255.0,
        );
        s > cfg.saturation_min
            && luminance(c) < cfg.luminance_max
            && !(cfg.exclude_marker && marker.is_marker(c))
    });
    remove_small_components(&raw, cfg.min_area)
}

/// Raw marker-colored pixels, before closing and filling.
pub fn marker_pixels(image: &SlideRaster, cfg: &MarkerConfig) -> Mask {
    let img = &image.pixels;
    Mask::from_fn(img.width(), img.height(), |x, y| {
        cfg.is_marker(img.get(x, y))
    })
}

/// Detects the pen marker, closes small gaps and fills the enclosed area.
/// The returned region includes the marker stroke itself.
pub fn extract_marker_region(image: &SlideRaster, cfg: &MarkerConfig) -> Result<Mask> {
    let raw = marker_pixels(image, cfg);
    if raw.is_empty() {
        return Err(Error::MarkerNotFound);
    }
    let closed = close(&raw, cfg.closing_radius);
    Ok(fill_holes(&closed))
}

fn ratio_in_tissue(region: &Mask, tissue: &Mask) -> Result<TumorPercentage> {
    let both = region.and(tissue)?;
    let n_tissue = tissue.count();
    if n_tissue == 0 {
        return Err(Error::EmptyTissue);
    }
    Ok(TumorPercentage::saturating(
        both.count() as f64 / n_tissue as f64,
    ))
}

/// `|tissue ∧ marker| / |tissue|`.
pub fn marker_percentage(tissue: &Mask, marker_filled: &Mask) -> Result<TumorPercentage> {
    ratio_in_tissue(marker_filled, tissue)
}

/// `|tumor ∧ tissue| / |tissue|`, for masks from any source.
pub fn percentage_from_mask(tumor: &Mask, tissue: &Mask) -> Result<TumorPercentage> {
    ratio_in_tissue(tumor, tissue)
}

/// Output of the full marker pipeline on one slide.
#[derive(Debug, Clone)]
pub struct MarkerEstimate {
    pub tissue: Mask,
    pub marker_region: Mask,
    pub percentage: TumorPercentage,
}

/// Segment, extract, intersect, divide.
pub fn estimate_from_marker(
    image: &SlideRaster,
    tissue_cfg: &TissueConfig,
    marker_cfg: &MarkerConfig,
) -> Result<MarkerEstimate> {
    let tissue = segment_tissue(image, tissue_cfg, marker_cfg);
    let marker_region = extract_marker_region(image, marker_cfg)?;
    let percentage = marker_percentage(&tissue, &marker_region)?;
    Ok(MarkerEstimate {
        tissue,
        marker_region,
        percentage,
    })
}

/// Regular, non-overlapping square patches anchored at the image origin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub patch_size_px: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Foreground cells `(row, col)` in row-major order.
    pub coords: Vec<(u32, u32)>,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Pixel origin `(x, y)` of the `i`-th patch.
    pub fn origin(&self, i: usize) -> (usize, usize) {
        let (r, c) = self.coords[i];
        (
            c as usize * self.patch_size_px,
            r as usize * self.patch_size_px,
        )
    }
}

/// Cells whose tissue coverage is at least `min_foreground`. Partial cells
/// at the right and bottom border are never emitted.
pub fn tile_slide(tissue: &Mask, patch_size_px: usize, min_foreground: f64) -> Result<PatchGrid> {
    if patch_size_px == 0 {
        return Err(Error::InvalidParameter("patch size must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&min_foreground) {
        return Err(Error::InvalidParameter(
            "min_foreground outside [0, 1]".into(),
        ));
    }
    let rows = tissue.height() / patch_size_px;
    let cols = tissue.width() / patch_size_px;
    let area = (patch_size_px * patch_size_px) as f64;
    let mut coords = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let n = tissue.count_in_square(c * patch_size_px, r * patch_size_px, patch_size_px);
            // Empty cells are never foreground, even with a zero threshold.
            if n > 0 && n as f64 >= min_foreground * area {
                coords.push((r as u32, c as u32));
            }
        }
    }
    Ok(PatchGrid {
        patch_size_px,
        grid_rows: rows,
        grid_cols: cols,
        coords,
    })
}

/// Fraction of each patch covered by `mask`.
pub fn patch_fractions(mask: &Mask, grid: &PatchGrid) -> Result<Vec<f64>> {
    let p = grid.patch_size_px;
    let area = (p * p) as f64;
    (0..grid.len())
        .map(|i| {
            let (x, y) = grid.origin(i);
            if x + p > mask.width() || y + p > mask.height() {
                return Err(Error::OutOfBounds);
            }
            Ok(mask.count_in_square(x, y, p) as f64 / area)
        })
        .collect()
}

/// Patch is tumor when strictly more than `threshold` of it is tumor.
pub fn patch_labels_from_mask(tumor: &Mask, grid: &PatchGrid, threshold: f64) -> Result<Vec<bool>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidParameter(
            "label threshold must be in (0, 1)".into(),
        ));
    }
    Ok(patch_fractions(tumor, grid)?
        .into_iter()
        .map(|f| f > threshold)
        .collect())
}

/// Drops 4-connected components smaller than `min_area` pixels.
pub fn remove_small_components(mask: &Mask, min_area: usize) -> Mask {
    if min_area <= 1 {
        return mask.clone();
    }
    let (w, h) = (mask.width(), mask.height());
    let mut out = mask.clone();
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::new();
    let mut component = Vec::new();
    for start in 0..w * h {
        if seen[start] || !mask.bits()[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        component.clear();
        while let Some(i) = queue.pop_front() {
            component.push(i);
            let (x, y) = (i % w, i / w);
            for (nx, ny) in neighbours4(x, y, w, h) {
                let j = ny * w + nx;
                if !seen[j] && mask.bits()[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if component.len() < min_area {
            for &i in &component {
                out.set(i % w, i / w, false);
            }
        }
    }
    out
}

fn neighbours4(x: usize, y: usize, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    let cand = [
        (x.wrapping_sub(1), y),
        (x + 1, y),
        (x, y.wrapping_sub(1)),
        (x, y + 1),
    ];
    cand.into_iter().filter(move |&(nx, ny)| nx < w && ny < h)
}

fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

fn morph(mask: &Mask, radius: usize, dilate: bool) -> Mask {
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    let offsets = disk_offsets(radius);
    Mask::from_fn(mask.width(), mask.height(), |x, y| {
        let (x, y) = (x as isize, y as isize);
        let mut hits = offsets.iter().filter_map(|&(dx, dy)| {
            let (nx, ny) = (x + dx, y + dy);
            (nx >= 0 && ny >= 0 && nx < w && ny < h).then(|| mask.get(nx as usize, ny as usize))
        });
        if dilate {
            hits.any(|b| b)
        } else {
            hits.all(|b| b)
        }
    })
}

/// Binary dilation by a disk. Pixels outside the image are ignored.
pub fn dilate(mask: &Mask, radius: usize) -> Mask {
    morph(mask, radius, true)
}

/// Binary erosion by a disk. Pixels outside the image are ignored.
pub fn erode(mask: &Mask, radius: usize) -> Mask {
    morph(mask, radius, false)
}

/// Dilation followed by erosion.
pub fn close(mask: &Mask, radius: usize) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    erode(&dilate(mask, radius), radius)
}

/// Sets every pixel not 4-connected to the image border through unset
/// pixels.
pub fn fill_holes(mask: &Mask) -> Mask {
    let (w, h) = (mask.width(), mask.height());
    let mut outside = vec![false; w * h];
    let mut queue = VecDeque::new();
    let seed = |x: usize, y: usize, outside: &mut Vec<bool>, queue: &mut VecDeque<usize>| {
        let i = y * w + x;
        if !mask.bits()[i] && !outside[i] {
            outside[i] = true;
            queue.push_back(i);
        }
    };
    for x in 0..w {
        seed(x, 0, &mut outside, &mut queue);
        seed(x, h - 1, &mut outside, &mut queue);
    }
    for y in 0..h {
        seed(0, y, &mut outside, &mut queue);
        seed(w - 1, y, &mut outside, &mut queue);
    }
    while let Some(i) = queue.pop_front() {
        for (nx, ny) in neighbours4(i % w, i / w, w, h) {
            let j = ny * w + nx;
            if !mask.bits()[j] && !outside[j] {
                outside[j] = true;
                queue.push_back(j);
            }
        }
    }
    Mask::from_bits(w, h, outside.into_iter().map(|o| !o).collect()).expect("same shape")
}
