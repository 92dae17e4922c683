//! Synthetic cohorts with exact ground truth: feature-space bags for the
//! two-step methods and RGB slide rasters for the image pipeline and
//! end-to-end training.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bag::{Bag, Instance, TumorPercentage};
use crate::error::{Error, Result};
use crate::math;
use crate::preprocess::{
    patch_fractions, percentage_from_mask, tile_slide, PatchGrid, SlideRaster,
};
use crate::raster::{Mask, Patch, RgbImage};
use crate::rng;

/// Distribution of positive-slide tumor percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PercentageDistribution {
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// Exponential with the given scale, truncated to `(0, 1]`.
    SkewedLow {
        scale: f64,
    },
}

impl PercentageDistribution {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            PercentageDistribution::Uniform { lo, hi } => rng.random_range(lo..=hi),
            PercentageDistribution::SkewedLow { scale } => {
                // Inverse CDF of Exp(1/scale) conditioned on [0, 1]; u > 0 keeps y > 0.
                let u: f64 = 1.0 - rng.random::<f64>();
                let mass = 1.0 - math::exp(-1.0 / scale);
                (-scale * math::ln(1.0 - u * mass)).min(1.0)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            PercentageDistribution::Uniform { lo, hi } if !(0.0 <= lo && lo < hi && hi <= 1.0) => {
                Err(Error::InvalidParameter(format!(
                    "uniform bounds {lo}..{hi} must satisfy 0 <= lo < hi <= 1"
                )))
            }
            PercentageDistribution::SkewedLow { scale } if !(scale > 0.0 && scale.is_finite()) => {
                Err(Error::InvalidParameter(format!(
                    "skewed_low scale {scale} must be positive"
                )))
            }
            _ => Ok(()),
        }
    }
}

fn default_feature_dim() -> usize {
    1024
}

fn default_informative_dims() -> usize {
    8
}

fn one() -> usize {
    1
}

/// Parameters of a feature-space cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSpec {
    pub n_slides: usize,
    pub negatives_fraction: f64,
    pub percentage_distribution: PercentageDistribution,
    /// Inclusive `[n_min, n_max]`.
    pub instances_per_bag: [usize; 2],
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    /// Distance between class means per informative coordinate, in units of
    /// the per-coordinate standard deviation.
    pub separation: f64,
    pub seed: u64,
    /// Leading coordinates that carry the class separation.
    #[serde(default = "default_informative_dims")]
    pub informative_dims: usize,
    #[serde(default = "one")]
    pub slides_per_case: usize,
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        let [n_min, n_max] = self.instances_per_bag;
        if n_min == 0 || n_max < n_min {
            return Err(Error::InvalidParameter(format!(
                "instances_per_bag [{n_min}, {n_max}] invalid"
            )));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::InvalidParameter(
                "separation must be finite and >= 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.negatives_fraction) {
            return Err(Error::InvalidParameter(
                "negatives_fraction outside [0, 1]".into(),
            ));
        }
        if self.feature_dim == 0 || self.slides_per_case == 0 {
            return Err(Error::InvalidParameter(
                "feature_dim and slides_per_case must be >= 1".into(),
            ));
        }
        self.percentage_distribution.validate()
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Draws one bag whose realized target is exactly `round(target * N) / N`.
///
/// Tumor instances sit at random positions of a row-major grid and carry
/// `tumor_fraction = 1`; the rest carry `0`.
pub fn generate_bag<R: Rng + ?Sized>(
    spec: &CohortSpec,
    target: TumorPercentage,
    rng: &mut R,
    slide_id: &str,
    case_id: &str,
) -> Result<Bag> {
    spec.validate()?;
    let [n_min, n_max] = spec.instances_per_bag;
    let n = rng.random_range(n_min..=n_max);
    let m = (math::round_half_up(target.value() * n as f64) as usize).min(n);
    let mut is_tumor = vec![false; n];
    is_tumor[..m].iter_mut().for_each(|t| *t = true);
    is_tumor.shuffle(rng);

    let cols = math::ceil(math::sqrt(n as f64)) as usize;
    let active = spec.informative_dims.min(spec.feature_dim);
    let instances = is_tumor
        .iter()
        .enumerate()
        .map(|(i, &tumor)| {
            let shift = if tumor { spec.separation } else { 0.0 };
            let features = (0..spec.feature_dim)
                .map(|j| gaussian(rng) + if j < active { shift } else { 0.0 })
                .collect();
            Instance {
                patch_row: (i / cols) as u32,
                patch_col: (i % cols) as u32,
                features,
                tumor_fraction: Some(if tumor { 1.0 } else { 0.0 }),
            }
        })
        .collect();
    let realized = TumorPercentage::new(m as f64 / n as f64)?;
    Bag::new(slide_id, case_id, instances, realized)
}

/// Indices of the slots that get a zero target.
fn negative_slots(n_slides: usize, fraction: f64, seed: u64) -> Vec<bool> {
    let n_neg = (math::round_half_up(fraction * n_slides as f64) as usize).min(n_slides);
    let mut slots = vec![false; n_slides];
    slots[..n_neg].iter_mut().for_each(|s| *s = true);
    slots.shuffle(&mut rng::stream(seed, u64::MAX));
    slots
}

fn slide_name(i: usize) -> String {
    format!("slide_{i:04}")
}

fn case_name(i: usize, per_case: usize) -> String {
    format!("case_{:04}", i / per_case)
}

/// Generates the whole cohort. Bag `i` uses its own RNG stream derived from
/// `(seed, i)`, so the result does not depend on generation order.
///
/// A positive slot whose drawn percentage rounds to zero tumor instances is
/// redrawn, so the negative count is exactly `round(negatives_fraction * n)`.
pub fn generate_cohort(spec: &CohortSpec) -> Result<Vec<Bag>> {
    spec.validate()?;
    let negatives = negative_slots(spec.n_slides, spec.negatives_fraction, spec.seed);
    (0..spec.n_slides)
        .map(|i| generate_cohort_bag(spec, i, negatives[i]))
        .collect()
}

fn generate_cohort_bag(spec: &CohortSpec, i: usize, negative: bool) -> Result<Bag> {
    let mut rng = rng::stream(spec.seed, i as u64);
    let (slide, case) = (slide_name(i), case_name(i, spec.slides_per_case));
    if negative {
        return generate_bag(spec, TumorPercentage::ZERO, &mut rng, &slide, &case);
    }
    for _ in 0..10_000 {
        let y = TumorPercentage::saturating(spec.percentage_distribution.sample(&mut rng));
        let bag = generate_bag(spec, y, &mut rng, &slide, &case)?;
        if bag.binary_label() {
            return Ok(bag);
        }
    }
    Err(Error::InvalidParameter(format!(
        "percentage distribution never yields a tumor instance with at most {} instances",
        spec.instances_per_bag[1]
    )))
}

fn default_spacing() -> f64 {
    0.5
}

fn default_marker_width() -> f64 {
    3.0
}

fn default_noise() -> u8 {
    8
}

/// Geometry and rendering of one synthetic slide.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlideSpec {
    pub width: usize,
    pub height: usize,
    pub tissue_blobs: usize,
    #[serde(default = "default_spacing")]
    pub pixel_spacing: f64,
    /// Pen stroke width in pixels.
    #[serde(default = "default_marker_width")]
    pub marker_width: f64,
    /// Per-channel uniform pixel noise amplitude.
    #[serde(default = "default_noise")]
    pub noise: u8,
}

impl Default for SlideSpec {
    fn default() -> Self {
        SlideSpec {
            width: 512,
            height: 512,
            tissue_blobs: 3,
            pixel_spacing: 0.5,
            marker_width: 3.0,
            noise: 8,
        }
    }
}

pub const BACKGROUND: [u8; 3] = [250, 250, 250];
pub const TISSUE: [u8; 3] = [226, 150, 200];
pub const TUMOR: [u8; 3] = [150, 70, 165];
pub const PEN: [u8; 3] = [30, 140, 70];

fn jitter<R: Rng + ?Sized>(c: [u8; 3], amp: u8, rng: &mut R) -> [u8; 3] {
    if amp == 0 {
        return c;
    }
    let a = amp as i16;
    c.map(|v| (v as i16 + rng.random_range(-a..=a)).clamp(0, 255) as u8)
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.a) * (u / self.a) + (v / self.b) * (v / self.b) <= 1.0
    }
}

/// Renders a slide with tissue blobs, a tumor region covering
/// `tumor_fraction` of the tissue and, optionally, a closed pen stroke
/// hugging the tumor boundary.
///
/// The tumor is grown greedily from a seed inside the first blob, adding
/// tissue pixels in order of distance. When a marker is drawn, pixels under
/// the stroke are no longer tissue; the tumor size is chosen so the ratio
/// against the remaining tissue matches the request to within 0.005.
pub fn generate_slide_raster<R: Rng + ?Sized>(
    spec: &SlideSpec,
    tumor_fraction: f64,
    marker: bool,
    rng: &mut R,
) -> Result<SlideRaster> {
    if !(0.0..=1.0).contains(&tumor_fraction) {
        return Err(Error::TargetOutOfRange(tumor_fraction));
    }
    let (w, h) = (spec.width, spec.height);
    let side = w.min(h) as f64;
    let blobs: Vec<Ellipse> = (0..spec.tissue_blobs.max(1))
        .map(|_| {
            let theta = rng.random_range(0.0..core::f64::consts::PI);
            Ellipse {
                cx: rng.random_range(0.35..0.65) * w as f64,
                cy: rng.random_range(0.35..0.65) * h as f64,
                a: rng.random_range(0.14..0.26) * side,
                b: rng.random_range(0.10..0.20) * side,
                cos: math::cos(theta),
                sin: math::sin(theta),
            }
        })
        .collect();
    let tissue = Mask::from_fn(w, h, |x, y| {
        blobs
            .iter()
            .any(|e| e.contains(x as f64 + 0.5, y as f64 + 0.5))
    });
    let n_tissue = tissue.count();
    if n_tissue == 0 {
        return Err(Error::EmptyTissue);
    }

    // Tissue pixels by distance from the seed, nearest first.
    let (cx, cy) = (blobs[0].cx, blobs[0].cy);
    let dist2 = |x: usize, y: usize| {
        let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
        dx * dx + dy * dy
    };
    let mut order: Vec<(f64, usize)> = (0..w * h)
        .filter(|&i| tissue.bits()[i])
        .map(|i| (dist2(i % w, i / w), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let edge_room = cx.min(cy).min(w as f64 - cx).min(h as f64 - cy);
    let stroke = spec.marker_width;
    let ring_for = |k: usize| -> (f64, f64) {
        let r = math::sqrt(order[k - 1].0);
        (r, r + stroke)
    };
    let ring_tissue = |k: usize| -> usize {
        let (r0, r1) = ring_for(k);
        let (r0, r1) = (r0 * r0, r1 * r1);
        order[k..]
            .iter()
            .take_while(|(d, _)| *d <= r1)
            .filter(|(d, _)| *d > r0)
            .count()
    };
    let ratio = |k: usize| -> f64 {
        if k == 0 {
            0.0
        } else if marker {
            k as f64 / (n_tissue - ring_tissue(k)) as f64
        } else {
            k as f64 / n_tissue as f64
        }
    };
    let fits = |k: usize| !marker || k == 0 || ring_for(k).1 + 1.0 < edge_room;

    let mut k = if tumor_fraction == 0.0 {
        0
    } else if !marker {
        math::round_half_up(tumor_fraction * n_tissue as f64) as usize
    } else {
        // ratio is nondecreasing in k; bisect for the first k reaching the target.
        let (mut lo, mut hi) = (1usize, n_tissue);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if ratio(mid) < tumor_fraction {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        if lo > 1 && (ratio(lo - 1) - tumor_fraction).abs() < (ratio(lo) - tumor_fraction).abs() {
            lo - 1
        } else {
            lo
        }
    };
    k = k.min(n_tissue);
    if !fits(k) || (tumor_fraction > 0.0 && (ratio(k) - tumor_fraction).abs() > 0.005) {
        let mut best = 0;
        let (mut lo, mut hi) = (0usize, k);
        while lo <= hi && hi > 0 {
            let mid = (lo + hi) / 2;
            if fits(mid) {
                best = mid;
                lo = mid + 1;
            } else {
                hi = mid - 1;
            }
        }
        return Err(Error::UnachievableFraction {
            requested: tumor_fraction,
            achieved: ratio(best.min(k)),
        });
    }

    let mut tumor = Mask::new(w, h);
    for &(_, i) in &order[..k] {
        tumor.set(i % w, i / w, true);
    }
    let marker_mask = if marker && k > 0 {
        let (r0, r1) = ring_for(k);
        let (r0, r1) = (r0 * r0, r1 * r1);
        Some(Mask::from_fn(w, h, |x, y| {
            let d = dist2(x, y);
            d > r0 && d <= r1
        }))
    } else {
        None
    };
    let tissue_visible = match &marker_mask {
        Some(m) => tissue.and_not(m)?,
        None => tissue,
    };

    let mut img = RgbImage::filled(w, h, BACKGROUND);
    for y in 0..h {
        for x in 0..w {
            let base = if marker_mask.as_ref().is_some_and(|m| m.get(x, y)) {
                PEN
            } else if tumor.get(x, y) {
                TUMOR
            } else if tissue_visible.get(x, y) {
                TISSUE
            } else {
                BACKGROUND
            };
            img.set(x, y, jitter(base, spec.noise, rng));
        }
    }
    Ok(SlideRaster {
        pixels: img,
        pixel_spacing: spec.pixel_spacing,
        tissue_mask: Some(tissue_visible),
        tumor_mask: Some(tumor),
        marker_mask,
    })
}

fn default_patch_size() -> usize {
    16
}

fn default_min_foreground() -> f64 {
    0.5
}

/// A cohort of rendered slides, tiled into patches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RasterCohortSpec {
    pub n_slides: usize,
    pub negatives_fraction: f64,
    pub percentage_distribution: PercentageDistribution,
    #[serde(default)]
    pub slide: SlideSpec,
    #[serde(default = "default_patch_size")]
    pub patch_size: usize,
    #[serde(default = "default_min_foreground")]
    pub min_foreground: f64,
    #[serde(default)]
    pub marker: bool,
    pub seed: u64,
    #[serde(default = "one")]
    pub slides_per_case: usize,
}

impl RasterCohortSpec {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.slides_per_case == 0 {
            return Err(Error::InvalidParameter(
                "patch_size and slides_per_case must be >= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.negatives_fraction) {
            return Err(Error::InvalidParameter(
                "negatives_fraction outside [0, 1]".into(),
            ));
        }
        self.percentage_distribution.validate()
    }
}

/// A rendered slide with its tiling, patch pixels and patch ground truth.
#[derive(Debug, Clone)]
pub struct RasterSlide {
    pub slide_id: String,
    pub case_id: String,
    pub raster: SlideRaster,
    pub grid: PatchGrid,
    pub patches: Vec<Patch>,
    /// Tumor pixel fraction of each patch.
    pub patch_tumor_fractions: Vec<f64>,
    /// Tumor fraction of the tissue area.
    pub target: TumorPercentage,
}

/// Renders and tiles one slide of a raster cohort.
pub fn generate_raster_slide(
    spec: &RasterCohortSpec,
    i: usize,
    negative: bool,
) -> Result<RasterSlide> {
    let mut rng = rng::stream(spec.seed, i as u64);
    let mut last_err = None;
    for _ in 0..100 {
        let f = if negative {
            0.0
        } else {
            spec.percentage_distribution.sample(&mut rng)
        };
        let raster = match generate_slide_raster(&spec.slide, f, spec.marker, &mut rng) {
            Ok(r) => r,
            Err(e @ Error::UnachievableFraction { .. }) => {
                last_err = Some(e);
                continue;
            }
            Err(e) => return Err(e),
        };
        let tissue = raster.tissue_mask.as_ref().expect("generator sets masks");
        let tumor = raster.tumor_mask.as_ref().expect("generator sets masks");
        let grid = tile_slide(tissue, spec.patch_size, spec.min_foreground)?;
        if grid.is_empty() {
            continue;
        }
        let target = percentage_from_mask(tumor, tissue)?;
        if !negative && !target.is_positive() {
            continue;
        }
        let patch_tumor_fractions = patch_fractions(tumor, &grid)?;
        let patches = (0..grid.len())
            .map(|j| {
                let (x, y) = grid.origin(j);
                raster.pixels.crop_patch(x, y, spec.patch_size)
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok(RasterSlide {
            slide_id: slide_name(i),
            case_id: case_name(i, spec.slides_per_case),
            raster,
            grid,
            patches,
            patch_tumor_fractions,
            target,
        });
    }
    Err(last_err.unwrap_or_else(|| {
        Error::InvalidParameter("could not render a slide with foreground patches".into())
    }))
}

pub fn generate_raster_cohort(spec: &RasterCohortSpec) -> Result<Vec<RasterSlide>> {
    spec.validate()?;
    let negatives = negative_slots(spec.n_slides, spec.negatives_fraction, spec.seed);
    (0..spec.n_slides)
        .map(|i| generate_raster_slide(spec, i, negatives[i]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: [usize; 2]) -> CohortSpec {
        CohortSpec {
            n_slides: 100,
            negatives_fraction: 0.5,
            percentage_distribution: PercentageDistribution::Uniform { lo: 0.05, hi: 0.9 },
            instances_per_bag: n,
            feature_dim: 12,
            separation: 2.0,
            seed: 7,
            informative_dims: 8,
            slides_per_case: 1,
        }
    }

    fn count_tumor(bag: &Bag) -> usize {
        bag.instances()
            .iter()
            .filter(|i| i.tumor_fraction == Some(1.0))
            .count()
    }

    #[test]
    fn extremes() {
        let s = spec([5, 20]);
        let mut r = rng::stream(1, 0);
        let neg = generate_bag(&s, TumorPercentage::ZERO, &mut r, "a", "a").unwrap();
        assert_eq!(count_tumor(&neg), 0);
        assert_eq!(neg.target().value(), 0.0);
        let pos = generate_bag(&s, TumorPercentage::ONE, &mut r, "b", "b").unwrap();
        assert_eq!(count_tumor(&pos), pos.len());
        assert_eq!(pos.target().value(), 1.0);
    }

    #[test]
    fn quarter_of_eight() {
        let s = spec([8, 8]);
        let mut r = rng::stream(2, 0);
        let bag = generate_bag(&s, TumorPercentage::new(0.25).unwrap(), &mut r, "a", "a").unwrap();
        assert_eq!(bag.len(), 8);
        assert_eq!(count_tumor(&bag), 2);
        assert_eq!(bag.target().value(), 0.25);
    }

    #[test]
    fn cohort_is_deterministic_and_balanced() {
        let s = spec([10, 30]);
        let a = generate_cohort(&s).unwrap();
        let b = generate_cohort(&s).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().filter(|b| b.target().value() == 0.0).count(), 50);
        for bag in &a {
            assert_eq!(
                bag.target().value(),
                count_tumor(bag) as f64 / bag.len() as f64
            );
        }
    }

    #[test]
    fn skewed_low_has_mean_above_median() {
        let mut s = spec([500, 1000]);
        s.feature_dim = 1;
        s.negatives_fraction = 0.0;
        s.percentage_distribution = PercentageDistribution::SkewedLow { scale: 0.05 };
        let mut targets: Vec<f64> = generate_cohort(&s)
            .unwrap()
            .iter()
            .map(|b| b.target().value())
            .collect();
        targets.sort_by(f64::total_cmp);
        let median = (targets[49] + targets[50]) / 2.0;
        let mean = targets.iter().sum::<f64>() / targets.len() as f64;
        assert!(median < mean, "median {median} mean {mean}");
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = spec([0, 3]);
        assert!(s.validate().is_err());
        s.instances_per_bag = [3, 3];
        s.percentage_distribution = PercentageDistribution::Uniform { lo: 0.5, hi: 0.5 };
        assert!(s.validate().is_err());
        s.percentage_distribution = PercentageDistribution::Uniform { lo: 0.1, hi: 0.5 };
        s.separation = -1.0;
        assert!(s.validate().is_err());
    }

    fn small_slide() -> SlideSpec {
        SlideSpec {
            width: 256,
            height: 256,
            tissue_blobs: 3,
            ..SlideSpec::default()
        }
    }

    #[test]
    fn raster_without_tumor() {
        let mut r = rng::stream(3, 0);
        let s = generate_slide_raster(&small_slide(), 0.0, false, &mut r).unwrap();
        assert!(s.tumor_mask.unwrap().is_empty());
        assert!(s.marker_mask.is_none());
    }

    #[test]
    fn raster_half_tumor_by_pixel_count() {
        for seed in 0..5 {
            let mut r = rng::stream(4, seed);
            let s = generate_slide_raster(&small_slide(), 0.5, false, &mut r).unwrap();
            let (tissue, tumor) = (s.tissue_mask.unwrap(), s.tumor_mask.unwrap());
            let f = tumor.and(&tissue).unwrap().count() as f64 / tissue.count() as f64;
            assert!((0.495..=0.505).contains(&f), "{f}");
        }
    }

    #[test]
    fn marker_is_disjoint_from_tissue() {
        let mut r = rng::stream(5, 0);
        let s = generate_slide_raster(&small_slide(), 0.3, true, &mut r).unwrap();
        let (tissue, tumor, marker) = (
            s.tissue_mask.unwrap(),
            s.tumor_mask.unwrap(),
            s.marker_mask.unwrap(),
        );
        assert!(marker.and(&tissue).unwrap().is_empty());
        let f = tumor.count() as f64 / tissue.count() as f64;
        assert!((f - 0.3).abs() <= 0.005, "{f}");
        let cfg = crate::preprocess::MarkerConfig::default();
        for y in 0..256 {
            for x in 0..256 {
                let c = s.pixels.get(x, y);
                assert_eq!(cfg.is_marker(c), marker.get(x, y), "pixel {x},{y} {c:?}");
            }
        }
    }

    #[test]
    fn too_large_marked_fraction_is_reported() {
        // a stroke this wide cannot circle the whole tissue inside the frame
        let spec = SlideSpec {
            marker_width: 120.0,
            ..small_slide()
        };
        let mut r = rng::stream(6, 0);
        let err = generate_slide_raster(&spec, 1.0, true, &mut r).unwrap_err();
        match err {
            Error::UnachievableFraction {
                requested,
                achieved,
            } => {
                assert_eq!(requested, 1.0);
                assert!(achieved < 1.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
