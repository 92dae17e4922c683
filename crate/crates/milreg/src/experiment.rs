//! Cross-validated experiments: per-fold training and held-out evaluation.

use log::warn;
use milreg_core::bag::{Bag, Instance, TumorPercentage};
use milreg_core::eval::{
    interpretability_auc, pearson, roc_auc, spearman, Averaging, FoldMetrics, InterpretabilityAuc,
};
use milreg_core::mil::{forward, FeatureExtractor, HeadConfig, Method, MilModel};
use milreg_core::synth::RasterSlide;
use milreg_core::targets::{binarize, TargetTransform};
use milreg_core::train::{
    cases_from_bags, optimize_threshold, train_head, train_weseg, CaseInfo, FoldPlan, History,
    ThresholdChoice, TrainConfig, WesegConfig, WesegModel, WesegSlide,
};
use milreg_core::{rng, Error, Result};

/// A loaded cohort. Raster cohorts keep their pixels for WeSEG and carry
/// bags of extracted features for the other methods.
#[derive(Debug, Clone)]
pub enum Cohort {
    Bags(Vec<Bag>),
    Raster {
        slides: Vec<RasterSlide>,
        bags: Vec<Bag>,
    },
}

impl Cohort {
    pub fn bags(&self) -> &[Bag] {
        match self {
            Cohort::Bags(b) => b,
            Cohort::Raster { bags, .. } => bags,
        }
    }

    pub fn rasters(&self) -> Option<&[RasterSlide]> {
        match self {
            Cohort::Bags(_) => None,
            Cohort::Raster { slides, .. } => Some(slides),
        }
    }

    pub fn cases(&self) -> Vec<CaseInfo> {
        cases_from_bags(self.bags())
    }
}

/// One bag per raster slide, features from `extractor`, patch tumor
/// fractions kept as instance ground truth.
pub fn bags_from_rasters(slides: &[RasterSlide], extractor: &FeatureExtractor) -> Result<Vec<Bag>> {
    slides
        .iter()
        .map(|s| {
            let instances = s
                .patches
                .iter()
                .zip(&s.grid.coords)
                .zip(&s.patch_tumor_fractions)
                .map(|((p, &(r, c)), &f)| {
                    Ok(Instance {
                        patch_row: r,
                        patch_col: c,
                        features: extractor.extract(p)?,
                        tumor_fraction: Some(f),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Bag::new(s.slide_id.clone(), s.case_id.clone(), instances, s.target)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Setup {
    pub method: Method,
    pub head: HeadConfig,
    pub train: TrainConfig,
    pub weseg: WesegConfig,
    pub targets: TargetTransform,
    /// Training seed; each fold derives its own from it.
    pub seed: u64,
    pub averaging: Averaging,
    /// Patches with a tumor fraction above this count as tumor.
    pub label_threshold: f64,
}

impl Setup {
    pub fn new(method: Method) -> Self {
        Setup {
            method,
            head: HeadConfig::default(),
            train: TrainConfig::default(),
            weseg: WesegConfig::default(),
            targets: TargetTransform::default(),
            seed: 0,
            averaging: Averaging::Macro,
            label_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub slide_id: String,
    pub case_id: String,
    /// Raw target percentage.
    pub target: f64,
    /// Prediction mapped back to raw percentage space.
    pub prediction: f64,
    /// Prediction in the space the model was trained in.
    pub prediction_model: f64,
}

/// Per-instance outputs of one held-out slide, in the slide's patch order.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceScores {
    pub slide_id: String,
    pub coords: Vec<(u32, u32)>,
    pub logits: Vec<f64>,
    pub attention: Option<Vec<f64>>,
    pub labels: Option<Vec<bool>>,
}

#[derive(Debug, Clone)]
pub enum TrainedModel {
    Head(MilModel),
    Weseg(WesegModel),
}

#[derive(Debug, Clone)]
pub struct FoldOutput {
    pub fold: usize,
    pub seed: u64,
    pub metrics: FoldMetrics,
    pub predictions: Vec<PredictionRow>,
    pub instances: Vec<InstanceScores>,
    pub history: History,
    pub best_epoch: usize,
    pub model: TrainedModel,
    pub threshold: Option<ThresholdChoice>,
    pub logits_interpretability: Option<InterpretabilityAuc>,
    pub attention_interpretability: Option<InterpretabilityAuc>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

impl FoldOutput {
    pub fn best_val_loss(&self) -> Option<f64> {
        self.history
            .epochs
            .iter()
            .find(|e| e.epoch == self.best_epoch)
            .map(|e| e.val_loss)
    }
}

/// Training seed of fold `fold`.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    rng::derive(seed, fold as u64)
}

fn defined(r: Result<f64>) -> Option<f64> {
    r.ok()
}

/// Held-out metrics from predictions and instance scores.
pub fn fold_metrics(
    predictions: &[PredictionRow],
    instances: &[InstanceScores],
    targets: &TargetTransform,
    averaging: Averaging,
) -> Result<(
    FoldMetrics,
    Option<InterpretabilityAuc>,
    Option<InterpretabilityAuc>,
)> {
    let raw_t: Vec<f64> = predictions.iter().map(|p| p.target).collect();
    let raw_p: Vec<f64> = predictions.iter().map(|p| p.prediction).collect();
    let model_t: Vec<f64> = predictions
        .iter()
        .map(|p| Ok(targets.model_space(TumorPercentage::new(p.target)?).value()))
        .collect::<Result<_>>()?;
    let model_p: Vec<f64> = predictions.iter().map(|p| p.prediction_model).collect();
    let labels: Vec<bool> = predictions
        .iter()
        .map(|p| binarize(TumorPercentage::saturating(p.target)))
        .collect();

    let logits: Vec<(Vec<f64>, Vec<bool>)> = instances
        .iter()
        .filter_map(|s| Some((s.logits.clone(), s.labels.clone()?)))
        .collect();
    let attention: Vec<(Vec<f64>, Vec<bool>)> = instances
        .iter()
        .filter_map(|s| Some((s.attention.clone()?, s.labels.clone()?)))
        .collect();
    let logits_i = if logits.is_empty() {
        None
    } else {
        Some(interpretability_auc(&logits, averaging)?)
    };
    let attention_i = if attention.is_empty() {
        None
    } else {
        Some(interpretability_auc(&attention, averaging)?)
    };

    let metrics = FoldMetrics {
        pearson: defined(pearson(&model_p, &model_t)),
        spearman: defined(spearman(&model_p, &model_t)),
        auc: defined(roc_auc(&raw_p, &labels)),
        pearson_raw: defined(pearson(&raw_p, &raw_t)),
        spearman_raw: defined(spearman(&raw_p, &raw_t)),
        logits_auc: logits_i.as_ref().and_then(|i| i.auc),
        attention_auc: attention_i.as_ref().and_then(|i| i.auc),
    };
    Ok((metrics, logits_i, attention_i))
}

/// Trains on fold `fold`'s train/val cases and evaluates on its test cases.
pub fn run_fold(
    cohort: &Cohort,
    plan: &FoldPlan,
    fold: usize,
    setup: &Setup,
) -> Result<FoldOutput> {
    if fold >= plan.folds.len() {
        return Err(Error::InvalidParameter(format!(
            "fold {fold} out of range for k = {}",
            plan.folds.len()
        )));
    }
    let seed = fold_seed(setup.seed, fold);
    if setup.method == Method::Weseg {
        let slides = cohort.rasters().ok_or_else(|| {
            Error::InvalidParameter("weseg needs a raster cohort with patch pixels".into())
        })?;
        return run_weseg_fold(slides, plan, fold, setup, seed);
    }

    let (tr, va, te) = plan.split(fold, cohort.bags());
    let train: Vec<Bag> = tr.into_iter().cloned().collect();
    let val: Vec<Bag> = va.into_iter().cloned().collect();
    let dim = train.first().ok_or(Error::EmptyInput)?.dim();
    let init = MilModel::init(setup.method, dim, &setup.head, rng::derive(seed, 1));
    let out = train_head(
        &train,
        &val,
        init,
        &setup.train,
        &setup.targets,
        rng::derive(seed, 2),
    )?;

    let mut predictions = Vec::with_capacity(te.len());
    let mut instances = Vec::with_capacity(te.len());
    for bag in &te {
        let pred = forward(bag, &out.model)?;
        predictions.push(PredictionRow {
            slide_id: bag.slide_id().into(),
            case_id: bag.case_id().into(),
            target: bag.target().value(),
            prediction: setup.targets.raw_space(pred.bag_estimate).value(),
            prediction_model: pred.bag_estimate.value(),
        });
        instances.push(InstanceScores {
            slide_id: bag.slide_id().into(),
            coords: bag.coords(),
            logits: pred.instance_logits,
            attention: pred.attention,
            labels: bag.instance_labels(setup.label_threshold),
        });
    }
    let (metrics, li, ai) =
        fold_metrics(&predictions, &instances, &setup.targets, setup.averaging)?;
    Ok(FoldOutput {
        fold,
        seed,
        metrics,
        predictions,
        instances,
        history: out.history,
        best_epoch: out.best_epoch,
        model: TrainedModel::Head(out.model),
        threshold: None,
        logits_interpretability: li,
        attention_interpretability: ai,
        n_train: train.len(),
        n_val: val.len(),
        n_test: te.len(),
    })
}

fn run_weseg_fold(
    slides: &[RasterSlide],
    plan: &FoldPlan,
    fold: usize,
    setup: &Setup,
    seed: u64,
) -> Result<FoldOutput> {
    let f = &plan.folds[fold];
    let mut noise_rng = setup
        .targets
        .noise
        .map(|n| rng::stream(n.seed, fold as u64));
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for s in slides {
        match f.role_of(&s.case_id) {
            Some("train") => {
                let target = match noise_rng.as_mut() {
                    Some(r) => setup.targets.training_target(s.target, r),
                    None => setup.targets.model_space(s.target),
                };
                train.push(WesegSlide {
                    slide_id: s.slide_id.clone(),
                    patches: s.patches.clone(),
                    target,
                });
            }
            Some("val") => val.push(WesegSlide {
                slide_id: s.slide_id.clone(),
                patches: s.patches.clone(),
                target: setup.targets.model_space(s.target),
            }),
            Some("test") => test.push(s),
            _ => {}
        }
    }
    let out = train_weseg(&train, &val, &setup.weseg, seed)?;
    for id in &out.skipped {
        warn!("fold {fold}: slide {id} has no tiles and was skipped");
    }
    let mut model = out.model;
    let threshold = if val.is_empty() {
        warn!("fold {fold}: no validation slides, weseg threshold stays at 0.5");
        None
    } else {
        let probs = val
            .iter()
            .filter(|s| !s.patches.is_empty())
            .map(|s| model.probs(&s.patches))
            .collect::<Result<Vec<_>>>()?;
        let targets: Vec<f64> = val
            .iter()
            .filter(|s| !s.patches.is_empty())
            .map(|s| s.target.value())
            .collect();
        let choice = optimize_threshold(&probs, &targets, setup.weseg.threshold_step)?;
        if choice.fallback {
            warn!("fold {fold}: correlation undefined on validation slides, threshold 0.5");
        }
        model.head.threshold = choice.threshold;
        Some(choice)
    };

    let mut predictions = Vec::new();
    let mut instances = Vec::new();
    for s in test {
        if s.patches.is_empty() {
            warn!("fold {fold}: test slide {} has no tiles", s.slide_id);
            continue;
        }
        let logits = model.logits(&s.patches)?;
        let est = model.predict(&s.patches)?;
        predictions.push(PredictionRow {
            slide_id: s.slide_id.clone(),
            case_id: s.case_id.clone(),
            target: s.target.value(),
            prediction: setup.targets.raw_space(est).value(),
            prediction_model: est.value(),
        });
        instances.push(InstanceScores {
            slide_id: s.slide_id.clone(),
            coords: s.grid.coords.clone(),
            logits,
            attention: None,
            labels: Some(
                s.patch_tumor_fractions
                    .iter()
                    .map(|&t| t > setup.label_threshold)
                    .collect(),
            ),
        });
    }
    let (metrics, li, ai) =
        fold_metrics(&predictions, &instances, &setup.targets, setup.averaging)?;
    Ok(FoldOutput {
        fold,
        seed,
        metrics,
        n_test: predictions.len(),
        predictions,
        instances,
        history: out.history,
        best_epoch: out.best_epoch,
        model: TrainedModel::Weseg(model),
        threshold,
        logits_interpretability: li,
        attention_interpretability: ai,
        n_train: train.len(),
        n_val: val.len(),
    })
}

/// Runs every fold, in parallel on the current rayon pool. Results keep
/// fold order.
pub fn run_all_folds(cohort: &Cohort, plan: &FoldPlan, setup: &Setup) -> Vec<Result<FoldOutput>> {
    use rayon::prelude::*;
    (0..plan.folds.len())
        .into_par_iter()
        .map(|f| run_fold(cohort, plan, f, setup))
        .collect()
}
