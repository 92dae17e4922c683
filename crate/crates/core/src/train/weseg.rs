//! End-to-end WeSEG: a small CNN plus a linear head trained on per-tile
//! proxy labels derived from each slide's tumor percentage.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{early_stop_check, EpochRecord, History};
use crate::bag::TumorPercentage;
use crate::error::{Error, Result};
use crate::eval::pearson;
use crate::math;
use crate::mil::extractor::SmallCnn;
use crate::mil::{weseg_percentage, weseg_proxy_labels, HeadConfig, Method, MilModel};
use crate::optim::Adam;
use crate::raster::{hsv_to_rgb, rgb_to_hsv, Patch};
use crate::rng::{self, Rng};

/// Random flips plus brightness, contrast, saturation and hue jitter.
/// `hue` is a fraction of the full circle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JitterConfig {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
    pub flips: bool,
}

impl Default for JitterConfig {
    fn default() -> Self {
        JitterConfig {
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
            hue: 0.05,
            flips: true,
        }
    }
}

impl JitterConfig {
    pub fn none() -> Self {
        JitterConfig {
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            hue: 0.0,
            flips: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WesegConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub tiles_per_step: usize,
    pub slides_per_step: usize,
    pub min_epochs: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_improvement: f64,
    /// Side length fed to the CNN; patches are box-resized to it.
    pub input_size: usize,
    pub channels: [usize; 3],
    pub jitter: JitterConfig,
    /// Grid spacing of the threshold search.
    pub threshold_step: f64,
}

impl Default for WesegConfig {
    fn default() -> Self {
        WesegConfig {
            learning_rate: 5e-4,
            weight_decay: 1e-5,
            tiles_per_step: 30,
            slides_per_step: 1,
            min_epochs: 0,
            max_epochs: 100,
            patience: 50,
            min_improvement: 1e-6,
            input_size: 16,
            channels: [8, 16, 16],
            jitter: JitterConfig::default(),
            threshold_step: 0.05,
        }
    }
}

impl WesegConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tiles_per_step == 0 || self.slides_per_step == 0 {
            return Err(Error::InvalidParameter(
                "tiles_per_step and slides_per_step must be positive".into(),
            ));
        }
        if self.min_epochs > self.max_epochs || self.max_epochs == 0 {
            return Err(Error::InvalidParameter(
                "need 0 < max_epochs and min_epochs <= max_epochs".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter("learning_rate must be > 0".into()));
        }
        if !(self.threshold_step > 0.0 && self.threshold_step < 0.5) {
            return Err(Error::InvalidParameter(
                "threshold_step must be in (0, 0.5)".into(),
            ));
        }
        Ok(())
    }
}

/// One slide as seen by WeSEG: its tiles and its slide-level target.
#[derive(Debug, Clone, PartialEq)]
pub struct WesegSlide {
    pub slide_id: String,
    pub patches: Vec<Patch>,
    pub target: TumorPercentage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WesegModel {
    pub cnn: SmallCnn,
    /// Linear head with `Method::Weseg`; its `threshold` is used at inference.
    pub head: MilModel,
}

impl WesegModel {
    pub fn new(cfg: &WesegConfig, seed: u64) -> Result<Self> {
        let cnn = SmallCnn::new(cfg.input_size, cfg.channels, rng::derive(seed, 1))?;
        let head = MilModel::init(
            Method::Weseg,
            cnn.output_dim(),
            &HeadConfig::default(),
            rng::derive(seed, 2),
        );
        Ok(WesegModel { cnn, head })
    }

    fn prepare(&self, patch: &Patch) -> Patch {
        patch.resize(self.cnn.input_size())
    }

    pub fn logits(&self, patches: &[Patch]) -> Result<Vec<f64>> {
        patches
            .iter()
            .map(|p| Ok(self.head.logit(&self.cnn.features(&self.prepare(p))?)))
            .collect()
    }

    pub fn probs(&self, patches: &[Patch]) -> Result<Vec<f64>> {
        Ok(self
            .logits(patches)?
            .into_iter()
            .map(math::sigmoid)
            .collect())
    }

    /// Share of tiles whose probability exceeds the head threshold.
    pub fn predict(&self, patches: &[Patch]) -> Result<TumorPercentage> {
        if patches.is_empty() {
            return Err(Error::EmptyBag);
        }
        weseg_percentage(&self.probs(patches)?, self.head.threshold)
    }
}

/// Applies the configured random augmentation; values stay in `[0, 1]`.
pub fn augment(patch: &Patch, jitter: &JitterConfig, rng: &mut Rng) -> Patch {
    let s = patch.size();
    let mut out = patch.clone();
    if jitter.flips {
        let (h, v) = (rng.random_bool(0.5), rng.random_bool(0.5));
        if h || v {
            for ch in 0..3 {
                for y in 0..s {
                    for x in 0..s {
                        let sx = if h { s - 1 - x } else { x };
                        let sy = if v { s - 1 - y } else { y };
                        out.set(ch, x, y, patch.get(ch, sx, sy));
                    }
                }
            }
        }
    }
    let mut factor = |amount: f64| {
        if amount > 0.0 {
            rng.random_range(1.0 - amount..=1.0 + amount)
        } else {
            1.0
        }
    };
    let b = factor(jitter.brightness);
    let c = factor(jitter.contrast);
    let sat = factor(jitter.saturation);
    let hue = if jitter.hue > 0.0 {
        rng.random_range(-jitter.hue..=jitter.hue) * 360.0
    } else {
        0.0
    };
    if b == 1.0 && c == 1.0 && sat == 1.0 && hue == 0.0 {
        return out;
    }
    let n = s * s;
    let data = out.data_mut();
    for v in data.iter_mut() {
        *v *= b;
    }
    let gray = |d: &[f64], i: usize| 0.299 * d[i] + 0.587 * d[n + i] + 0.114 * d[2 * n + i];
    let mean = (0..n).map(|i| gray(data, i)).sum::<f64>() / n as f64;
    for v in data.iter_mut() {
        *v = (*v - mean) * c + mean;
    }
    for i in 0..n {
        let g = gray(data, i);
        let mut px = [data[i], data[n + i], data[2 * n + i]];
        for p in &mut px {
            *p = (g + (*p - g) * sat).clamp(0.0, 1.0);
        }
        if hue != 0.0 {
            let (h, s, v) = rgb_to_hsv(px[0], px[1], px[2]);
            let (r, g, b) = hsv_to_rgb(h + hue, s, v);
            px = [r, g, b];
        }
        for (ch, p) in px.iter().enumerate() {
            data[ch * n + i] = p.clamp(0.0, 1.0);
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct WesegOutcome {
    pub model: WesegModel,
    pub history: History,
    pub best_epoch: usize,
    /// Slides without tiles, left out of training and validation.
    pub skipped: Vec<String>,
}

/// Validation loss: squared error between the mean tile probability and the
/// slide target, averaged over slides.
fn val_loss(model: &WesegModel, slides: &[&WesegSlide]) -> Result<f64> {
    let mut total = 0.0;
    for s in slides {
        let p = math::mean(&model.probs(&s.patches)?);
        total += (p - s.target.value()) * (p - s.target.value());
    }
    Ok(total / slides.len() as f64)
}

/// Trains CNN and head jointly. Each step samples up to `tiles_per_step`
/// tiles from each of `slides_per_step` slides, labels the top
/// `round(p * n)` tiles by current probability as tumor and minimizes the
/// binary cross-entropy on augmented tiles.
pub fn train_weseg(
    train: &[WesegSlide],
    val: &[WesegSlide],
    cfg: &WesegConfig,
    seed: u64,
) -> Result<WesegOutcome> {
    cfg.validate()?;
    let mut skipped = Vec::new();
    let mut keep = |s: &'_ WesegSlide| {
        if s.patches.is_empty() {
            skipped.push(s.slide_id.clone());
            false
        } else {
            true
        }
    };
    let train: Vec<&WesegSlide> = train.iter().filter(|s| keep(s)).collect();
    let val: Vec<&WesegSlide> = val.iter().filter(|s| keep(s)).collect();
    if train.is_empty() {
        return Err(Error::EmptyInput);
    }

    let mut model = WesegModel::new(cfg, seed)?;
    let d = model.cnn.output_dim();
    let mut adam_cnn = Adam::new(
        model.cnn.params().len(),
        cfg.learning_rate,
        cfg.weight_decay,
    );
    let mut adam_head = Adam::new(
        model.head.params().len(),
        cfg.learning_rate,
        cfg.weight_decay,
    );
    let mut g_cnn = vec![0.0; model.cnn.params().len()];
    let mut g_head = vec![0.0; model.head.params().len()];
    let mut r = rng::stream(seed, 0x3E5E);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = History::default();
    let mut best = (f64::INFINITY, model.clone(), 0usize);

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut r);
        let mut train_loss = 0.0;
        for chunk in order.chunks(cfg.slides_per_step) {
            g_cnn.iter_mut().for_each(|v| *v = 0.0);
            g_head.iter_mut().for_each(|v| *v = 0.0);
            for &si in chunk {
                let slide = train[si];
                let t = cfg.tiles_per_step.min(slide.patches.len());
                let picks = rand::seq::index::sample(&mut r, slide.patches.len(), t);
                let mut feats: Vec<Vec<f64>> = Vec::with_capacity(t);
                let mut caches = Vec::with_capacity(t);
                let mut logits = Vec::with_capacity(t);
                for i in picks.iter() {
                    let tile = augment(&model.prepare(&slide.patches[i]), &cfg.jitter, &mut r);
                    let (f, cache) = model.cnn.forward(&tile)?;
                    logits.push(model.head.logit(&f));
                    feats.push(f);
                    caches.push(cache);
                }
                let probs: Vec<f64> = logits.iter().map(|&z| math::sigmoid(z)).collect();
                let labels = weseg_proxy_labels(&probs, slide.target);
                let scale = 1.0 / (t * chunk.len()) as f64;
                let w: Vec<f64> = model.head.head_weights().to_vec();
                for i in 0..t {
                    let y = if labels[i] { 1.0 } else { 0.0 };
                    train_loss += math::bce_with_logit(logits[i], y) / t as f64;
                    let dz = (probs[i] - y) * scale;
                    for (g, x) in g_head[..d].iter_mut().zip(&feats[i]) {
                        *g += dz * x;
                    }
                    g_head[d] += dz;
                    let dfeat: Vec<f64> = w.iter().map(|wj| dz * wj).collect();
                    model.cnn.backward(&caches[i], &dfeat, &mut g_cnn);
                }
            }
            if g_cnn.iter().chain(&g_head).any(|g: &f64| !g.is_finite()) {
                return Err(Error::Diverged { epoch });
            }
            adam_cnn.step(model.cnn.params_mut(), &g_cnn);
            adam_head.step(model.head.params_mut(), &g_head);
        }
        train_loss /= train.len() as f64;
        let vl = if val.is_empty() {
            train_loss
        } else {
            val_loss(&model, &val)?
        };
        if !vl.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss: vl,
        });
        if vl < best.0 {
            best = (vl, model.clone(), epoch);
        }
        if early_stop_check(
            &history.val_losses(),
            cfg.patience,
            cfg.min_epochs,
            cfg.min_improvement,
        ) {
            break;
        }
    }
    Ok(WesegOutcome {
        model: best.1,
        history,
        best_epoch: best.2,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub threshold: f64,
    /// Correlation reached at the chosen threshold.
    pub pearson: Option<f64>,
    /// Set when no candidate gave a defined correlation and 0.5 was kept.
    pub fallback: bool,
}

/// Grid search over `step, 2 step, ..., 1 - step` for the threshold that
/// maximizes the Pearson correlation between thresholded percentages and
/// targets. Ties go to the candidate closest to 0.5.
pub fn optimize_threshold(
    probs: &[Vec<f64>],
    targets: &[f64],
    step: f64,
) -> Result<ThresholdChoice> {
    if probs.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: probs.len(),
            right: targets.len(),
        });
    }
    if !(step > 0.0 && step < 0.5) {
        return Err(Error::InvalidParameter(
            "threshold step must be in (0, 0.5)".into(),
        ));
    }
    let count = math::round_half_up(1.0 / step) as usize;
    let mut best: Option<(f64, f64)> = None;
    for i in 1..count {
        let t = i as f64 * step;
        if t >= 1.0 {
            break;
        }
        let est: Vec<f64> = probs
            .iter()
            .map(|p| {
                if p.is_empty() {
                    0.0
                } else {
                    p.iter().filter(|&&v| v > t).count() as f64 / p.len() as f64
                }
            })
            .collect();
        let Ok(r) = pearson(&est, targets) else {
            continue;
        };
        best = match best {
            None => Some((t, r)),
            Some((bt, br)) => {
                let better = r > br + 1e-12
                    || ((r - br).abs() <= 1e-12 && (t - 0.5).abs() < (bt - 0.5).abs());
                if better {
                    Some((t, r))
                } else {
                    Some((bt, br))
                }
            }
        };
    }
    Ok(match best {
        Some((threshold, r)) => ThresholdChoice {
            threshold,
            pearson: Some(r),
            fallback: false,
        },
        None => ThresholdChoice {
            threshold: 0.5,
            pearson: None,
            fallback: true,
        },
    })
}
