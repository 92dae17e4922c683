//! Optimization of the two-step heads, end-to-end WeSEG training, early
//! stopping and cross-validation folds.

mod folds;
mod weseg;

pub use folds::{cases_from_bags, make_cv_folds, CaseInfo, Fold, FoldPlan};
pub use weseg::{
    augment, optimize_threshold, train_weseg, JitterConfig, ThresholdChoice, WesegConfig,
    WesegModel, WesegOutcome, WesegSlide,
};

use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::bag::{Bag, TumorPercentage};
use crate::error::{Error, Result};
use crate::mil::grad::{bag_loss, bag_loss_grad};
use crate::mil::{Method, MilModel};
use crate::optim::Adam;
use crate::rng;
use crate::targets::TargetTransform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    #[default]
    Mse,
}

/// Settings for the two-step methods (frozen features, trained head).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub min_epochs: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// A validation loss counts as an improvement only if it beats the best
    /// so far by more than this.
    pub min_improvement: f64,
    pub loss: Loss,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-4,
            weight_decay: 1e-5,
            min_epochs: 50,
            max_epochs: 200,
            patience: 20,
            min_improvement: 1e-6,
            loss: Loss::Mse,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_epochs > self.max_epochs || self.max_epochs == 0 {
            return Err(Error::InvalidParameter(
                "need 0 < max_epochs and min_epochs <= max_epochs".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter("learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn val_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_loss).collect()
    }

    /// Epoch (1-based) with the lowest validation loss; earliest on ties.
    pub fn best_epoch(&self) -> Option<usize> {
        self.epochs
            .iter()
            .min_by(|a, b| a.val_loss.total_cmp(&b.val_loss))
            .map(|e| e.epoch)
    }
}

/// Whether training should stop after the last recorded epoch.
///
/// Stops once at least `min_epochs` have run and the validation loss has not
/// improved by more than `min_improvement` for `patience` consecutive epochs.
/// Epochs inside the minimum budget do not count toward patience, so a flat
/// curve with `min_epochs = 50, patience = 20` stops at epoch 70.
pub fn early_stop_check(
    val_losses: &[f64],
    patience: usize,
    min_epochs: usize,
    min_improvement: f64,
) -> bool {
    let n = val_losses.len();
    if n == 0 || n < min_epochs {
        return false;
    }
    let mut best = f64::INFINITY;
    let mut best_epoch = 0;
    for (i, &l) in val_losses.iter().enumerate() {
        if l < best - min_improvement || (best == f64::INFINITY && l < best) {
            best = l;
            best_epoch = i + 1;
        }
    }
    n - best_epoch.max(min_epochs) >= patience
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: MilModel,
    pub history: History,
    pub best_epoch: usize,
}

/// Trains a meanpool, abmil or clam head with Adam, one bag per step.
///
/// Training targets go through `targets` (noise then amplification);
/// validation targets are only amplified. Without validation bags the
/// training loss drives early stopping and checkpoint selection.
pub fn train_head(
    train: &[Bag],
    val: &[Bag],
    model: MilModel,
    cfg: &TrainConfig,
    targets: &TargetTransform,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if model.method == Method::Weseg {
        return Err(Error::InvalidParameter(
            "weseg is trained with train_weseg".into(),
        ));
    }
    if train.is_empty() {
        return Err(Error::EmptyInput);
    }
    let train_targets: Vec<TumorPercentage> = match targets.noise {
        Some(noise) => train
            .iter()
            .enumerate()
            .map(|(i, b)| {
                targets.training_target(b.target(), &mut rng::stream(noise.seed, i as u64))
            })
            .collect(),
        None => train
            .iter()
            .map(|b| targets.model_space(b.target()))
            .collect(),
    };
    let val_targets: Vec<TumorPercentage> = val
        .iter()
        .map(|b| targets.model_space(b.target()))
        .collect();

    let mut model = model;
    let mut adam = Adam::new(model.params().len(), cfg.learning_rate, cfg.weight_decay);
    let mut grad = vec![0.0; model.params().len()];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = rng::stream(seed, 0x5EED);
    let mut history = History::default();
    let mut best = (f64::INFINITY, model.clone(), 0usize);

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut train_loss = 0.0;
        for &i in &order {
            let parts = bag_loss_grad(&model, &train[i], train_targets[i], &mut grad)?;
            if !parts.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch });
            }
            train_loss += parts.total;
            adam.step(model.params_mut(), &grad);
        }
        train_loss /= train.len() as f64;
        let val_loss = if val.is_empty() {
            train_loss
        } else {
            let mut total = 0.0;
            for (bag, &y) in val.iter().zip(&val_targets) {
                total += bag_loss(&model, bag, y)?.bag_mse;
            }
            total / val.len() as f64
        };
        if !val_loss.is_finite() || model.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best.0 {
            best = (val_loss, model.clone(), epoch);
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
    Ok(TrainOutcome {
        model: best.1,
        history,
        best_epoch: best.2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decreasing_loss_never_stops() {
        let losses: Vec<f64> = (0..200).map(|i| 1.0 / (i as f64 + 1.0)).collect();
        for n in 1..=200 {
            assert!(!early_stop_check(&losses[..n], 20, 50, 1e-6));
        }
    }

    #[test]
    fn flat_loss_stops_at_seventy() {
        let flat = [0.3; 200];
        let first = (1..=200).find(|&n| early_stop_check(&flat[..n], 20, 50, 1e-6));
        assert_eq!(first, Some(70));
    }

    #[test]
    fn never_before_min_epochs() {
        let flat = [0.3; 49];
        for n in 1..=49 {
            assert!(!early_stop_check(&flat[..n], 0, 50, 1e-6));
        }
    }

    #[test]
    fn tiny_improvements_do_not_reset_patience() {
        let losses: Vec<f64> = (0..100).map(|i| 0.5 - 1e-8 * i as f64).collect();
        let first = (1..=100).find(|&n| early_stop_check(&losses[..n], 10, 5, 1e-6));
        assert_eq!(first, Some(15));
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig {
            min_epochs: 10,
            max_epochs: 5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        cfg.max_epochs = 10;
        cfg.learning_rate = 0.0;
        assert!(cfg.validate().is_err());
    }
}
