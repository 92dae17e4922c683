//! Target-space transforms: root amplification, uniform label noise and
//! binarization.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bag::TumorPercentage;
use crate::error::{Error, Result};
use crate::math;

/// Half-width of the uniform noise added to training targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub level: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(level: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&level) {
            return Err(Error::InvalidParameter(alloc::format!(
                "noise level {level} outside [0, 1)"
            )));
        }
        Ok(NoiseSpec { level, seed })
    }
}

/// `y -> y^(1/n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmplifySpec {
    pub root_degree: u32,
}

impl Default for AmplifySpec {
    fn default() -> Self {
        AmplifySpec { root_degree: 5 }
    }
}

impl AmplifySpec {
    pub fn new(root_degree: u32) -> Result<Self> {
        if root_degree == 0 {
            return Err(Error::InvalidParameter("root degree must be >= 1".into()));
        }
        Ok(AmplifySpec { root_degree })
    }
}

/// Expands small percentages: returns the `n`-th root of `y`.
pub fn amplify(y: TumorPercentage, spec: AmplifySpec) -> TumorPercentage {
    let v = y.value();
    let out = if spec.root_degree == 1 || v == 0.0 || v == 1.0 {
        v
    } else {
        math::powf(v, 1.0 / spec.root_degree as f64)
    };
    TumorPercentage::saturating(out)
}

/// Inverse of [`amplify`].
pub fn deamplify(yhat: TumorPercentage, spec: AmplifySpec) -> TumorPercentage {
    TumorPercentage::saturating(math::powi(yhat.value(), spec.root_degree))
}

/// `clamp(y + u, 0, 1)` with `u ~ Uniform(-level, level)`.
pub fn inject_noise<R: Rng + ?Sized>(
    y: TumorPercentage,
    level: f64,
    rng: &mut R,
) -> TumorPercentage {
    if level == 0.0 {
        return y;
    }
    let u = rng.random_range(-level..=level);
    apply_noise(y, u)
}

/// The clamp rule used by [`inject_noise`], for a given draw `u`.
pub fn apply_noise(y: TumorPercentage, u: f64) -> TumorPercentage {
    TumorPercentage::saturating(y.value() + u)
}

/// Tumor present.
pub fn binarize(y: TumorPercentage) -> bool {
    y.value() > 0.0
}

/// How training targets are derived from the true percentages.
///
/// Noise is applied first to the raw percentage and clamped; amplification
/// is applied afterwards. Validation and test targets never get noise.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetTransform {
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    #[serde(default)]
    pub amplify: Option<AmplifySpec>,
}

impl TargetTransform {
    pub fn training_target<R: Rng + ?Sized>(
        &self,
        y: TumorPercentage,
        rng: &mut R,
    ) -> TumorPercentage {
        let noisy = match self.noise {
            Some(n) => inject_noise(y, n.level, rng),
            None => y,
        };
        self.model_space(noisy)
    }

    /// Maps a clean percentage into the space the model is trained in.
    pub fn model_space(&self, y: TumorPercentage) -> TumorPercentage {
        match self.amplify {
            Some(a) => amplify(y, a),
            None => y,
        }
    }

    /// Maps a model output back to raw percentage space.
    pub fn raw_space(&self, yhat: TumorPercentage) -> TumorPercentage {
        match self.amplify {
            Some(a) => deamplify(yhat, a),
            None => yhat,
        }
    }

    pub fn noise_level(&self) -> f64 {
        self.noise.map_or(0.0, |n| n.level)
    }
}
