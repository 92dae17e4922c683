//! Bags, instances and predictions.

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Area fraction of tissue covered by tumor. Always within `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct TumorPercentage(f64);

impl TumorPercentage {
    pub const ZERO: TumorPercentage = TumorPercentage(0.0);
    pub const ONE: TumorPercentage = TumorPercentage(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(TumorPercentage(value))
        } else {
            Err(Error::TargetOutOfRange(value))
        }
    }

    /// Clamps into `[0, 1]`. NaN maps to 0.
    pub fn saturating(value: f64) -> Self {
        if value.is_nan() {
            TumorPercentage(0.0)
        } else {
            TumorPercentage(value.clamp(0.0, 1.0))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// Tumor present.
    #[inline]
    pub fn is_positive(self) -> bool {
        self.0 > 0.0
    }
}

impl TryFrom<f64> for TumorPercentage {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        TumorPercentage::new(value)
    }
}

impl From<TumorPercentage> for f64 {
    fn from(p: TumorPercentage) -> f64 {
        p.0
    }
}

/// One patch of a slide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub patch_row: u32,
    pub patch_col: u32,
    pub features: Vec<f64>,
    /// Ground-truth tumor content of the patch; only known for synthetic data.
    pub tumor_fraction: Option<f64>,
}

/// A slide: an ordered, non-empty list of instances with a bag-level target.
///
/// Instance order is the tiling scan order and must be preserved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bag {
    slide_id: String,
    case_id: String,
    instances: Vec<Instance>,
    target: TumorPercentage,
    binary_label: bool,
}

impl Bag {
    pub fn new(
        slide_id: impl Into<String>,
        case_id: impl Into<String>,
        instances: Vec<Instance>,
        target: TumorPercentage,
    ) -> Result<Self> {
        let first = instances.first().ok_or(Error::EmptyBag)?;
        let dim = first.features.len();
        for (i, inst) in instances.iter().enumerate() {
            if inst.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: inst.features.len(),
                });
            }
            if let Some(j) = inst.features.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteFeature {
                    instance: i,
                    index: j,
                });
            }
            if let Some(f) = inst.tumor_fraction {
                if !(0.0..=1.0).contains(&f) {
                    return Err(Error::TargetOutOfRange(f));
                }
            }
        }
        Ok(Bag {
            slide_id: slide_id.into(),
            case_id: case_id.into(),
            instances,
            binary_label: target.is_positive(),
            target,
        })
    }

    pub fn slide_id(&self) -> &str {
        &self.slide_id
    }

    pub fn case_id(&self) -> &str {
        &self.case_id
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.instances[0].features.len()
    }

    pub fn target(&self) -> TumorPercentage {
        self.target
    }

    pub fn binary_label(&self) -> bool {
        self.binary_label
    }

    pub fn coords(&self) -> Vec<(u32, u32)> {
        self.instances
            .iter()
            .map(|i| (i.patch_row, i.patch_col))
            .collect()
    }

    /// Patch labels from the ground-truth tumor fractions (`> threshold`),
    /// if every instance carries one.
    pub fn instance_labels(&self, threshold: f64) -> Option<Vec<bool>> {
        self.instances
            .iter()
            .map(|i| i.tumor_fraction.map(|f| f > threshold))
            .collect()
    }

    /// Same bag with a different target.
    pub fn with_target(&self, target: TumorPercentage) -> Bag {
        Bag {
            target,
            binary_label: target.is_positive(),
            ..self.clone()
        }
    }

    /// Same bag with instances reordered by `perm` (`new[i] = old[perm[i]]`).
    pub fn permuted(&self, perm: &[usize]) -> Bag {
        let instances = perm.iter().map(|&j| self.instances[j].clone()).collect();
        Bag {
            instances,
            ..self.clone()
        }
    }
}

/// Builds a bag from a feature matrix (one row per patch) and patch coordinates.
pub fn make_bag(
    slide_id: &str,
    case_id: &str,
    features: Vec<Vec<f64>>,
    target: f64,
    patch_coords: &[(u32, u32)],
) -> Result<Bag> {
    if features.is_empty() {
        return Err(Error::EmptyBag);
    }
    if patch_coords.len() != features.len() {
        return Err(Error::LengthMismatch {
            left: features.len(),
            right: patch_coords.len(),
        });
    }
    let target = TumorPercentage::new(target)?;
    let instances = features
        .into_iter()
        .zip(patch_coords)
        .map(|(features, &(patch_row, patch_col))| Instance {
            patch_row,
            patch_col,
            features,
            tumor_fraction: None,
        })
        .collect();
    Bag::new(slide_id, case_id, instances, target)
}

/// Bag-level estimate together with the per-instance quantities behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub bag_estimate: TumorPercentage,
    pub instance_logits: Vec<f64>,
    pub instance_probs: Vec<f64>,
    pub attention: Option<Vec<f64>>,
}
