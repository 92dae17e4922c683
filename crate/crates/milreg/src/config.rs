//! JSON experiment configuration.
//!
//! ```json
//! {
//!   "cohort": {"synthetic": {"n_slides": 200, "negatives_fraction": 0.0,
//!              "percentage_distribution": {"kind": "uniform", "lo": 0.0, "hi": 1.0},
//!              "instances_per_bag": [60, 140], "feature_dim": 32,
//!              "separation": 2.0, "seed": 1}},
//!   "method": "abmil",
//!   "head": {"hidden": 32},
//!   "targets": {"amplify": {"enabled": false, "n": 5}, "noise": {"level": 0.1, "seed": 4}},
//!   "cv": {"k": 5, "seed": 7, "strata_bins": 4},
//!   "seed": 3
//! }
//! ```
//!
//! `cohort` is one of `{"synthetic": CohortSpec}`, `{"path": "cohort.jsonl"}`
//! or `{"raster": {"spec": RasterCohortSpec, "extractor": ...}}`. Relative
//! paths resolve against the config file's directory. Unknown keys are
//! rejected everywhere.

use std::path::{Path, PathBuf};

use milreg_core::eval::Averaging;
use milreg_core::mil::{FeatureExtractor, FrozenProjection, HeadConfig, Method};
use milreg_core::preprocess::{MarkerConfig, TissueConfig};
use milreg_core::synth::{CohortSpec, RasterCohortSpec};
use milreg_core::targets::{AmplifySpec, NoiseSpec, TargetTransform};
use milreg_core::train::{TrainConfig, WesegConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::experiment::Setup;

/// Invalid or unreadable configuration; maps to exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

impl ConfigError {
    pub fn new(msg: impl Into<String>) -> Self {
        ConfigError(msg.into())
    }
}

pub fn default_extractor() -> FeatureExtractor {
    FeatureExtractor::FrozenRandomProjection(FrozenProjection::new(0, 64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RasterCohortConfig {
    pub spec: RasterCohortSpec,
    #[serde(default = "default_extractor")]
    pub extractor: FeatureExtractor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CohortConfig {
    Synthetic(CohortSpec),
    Raster(RasterCohortConfig),
    Path(PathBuf),
}

impl CohortConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            CohortConfig::Synthetic(_) => "synthetic",
            CohortConfig::Raster(_) => "raster",
            CohortConfig::Path(_) => "file",
        }
    }

    /// Seed the cohort was generated from, if it was generated here.
    pub fn seed(&self) -> Option<u64> {
        match self {
            CohortConfig::Synthetic(s) => Some(s.seed),
            CohortConfig::Raster(r) => Some(r.spec.seed),
            CohortConfig::Path(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmplifyConfig {
    pub enabled: bool,
    pub n: u32,
}

impl Default for AmplifyConfig {
    fn default() -> Self {
        AmplifyConfig {
            enabled: false,
            n: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub level: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetsConfig {
    pub amplify: AmplifyConfig,
    pub noise: NoiseConfig,
}

impl TargetsConfig {
    pub fn transform(&self) -> Result<TargetTransform, ConfigError> {
        let noise = if self.noise.level > 0.0 {
            Some(
                NoiseSpec::new(self.noise.level, self.noise.seed)
                    .map_err(|e| ConfigError::new(format!("targets.noise: {e}")))?,
            )
        } else if self.noise.level == 0.0 {
            None
        } else {
            return Err(ConfigError::new("targets.noise.level must be >= 0"));
        };
        let amplify = if self.amplify.enabled {
            Some(
                AmplifySpec::new(self.amplify.n)
                    .map_err(|e| ConfigError::new(format!("targets.amplify: {e}")))?,
            )
        } else {
            None
        };
        Ok(TargetTransform { noise, amplify })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub k: usize,
    pub seed: u64,
    pub strata_bins: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            k: 5,
            seed: 0,
            strata_bins: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatmapConfig {
    pub enabled: bool,
    /// Pixels per patch in the PNG.
    pub cell_px: u32,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        HeatmapConfig {
            enabled: false,
            cell_px: 8,
        }
    }
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Label used for the cohort column of result tables.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub cohort: CohortConfig,
    pub method: Method,
    #[serde(default)]
    pub head: HeadConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub weseg: WesegConfig,
    #[serde(default)]
    pub targets: TargetsConfig,
    #[serde(default)]
    pub cv: CvConfig,
    /// Training seed.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub interpretability: Averaging,
    /// Patches whose tumor fraction exceeds this are tumor patches.
    #[serde(default = "half")]
    pub label_threshold: f64,
    #[serde(default)]
    pub heatmaps: HeatmapConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Parses and validates, resolving relative paths against `path`'s
    /// directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)
            .map_err(|e| ConfigError::new(format!("{}: {}", path.display(), e.0)))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let CohortConfig::Path(p) = &mut cfg.cohort {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(o) = &mut cfg.output_dir {
            if o.is_relative() {
                *o = base.join(&*o);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::new(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |what: &str, e: milreg_core::Error| ConfigError::new(format!("{what}: {e}"));
        match &self.cohort {
            CohortConfig::Synthetic(s) => s.validate().map_err(|e| bad("cohort.synthetic", e))?,
            CohortConfig::Raster(r) => r.spec.validate().map_err(|e| bad("cohort.raster", e))?,
            CohortConfig::Path(p) => {
                if !p.is_file() {
                    return Err(ConfigError::new(format!(
                        "cohort file {} does not exist",
                        p.display()
                    )));
                }
            }
        }
        if self.method == Method::Weseg && !matches!(self.cohort, CohortConfig::Raster(_)) {
            return Err(ConfigError::new(
                "method weseg needs a raster cohort; feature-only cohorts have no patch pixels",
            ));
        }
        self.train.validate().map_err(|e| bad("train", e))?;
        self.weseg.validate().map_err(|e| bad("weseg", e))?;
        if self.method.uses_attention() && self.head.hidden == 0 {
            return Err(ConfigError::new("head.hidden must be >= 1"));
        }
        if self.method == Method::Clam && self.head.clam_k == 0 {
            return Err(ConfigError::new("head.clam_k must be >= 1"));
        }
        if !(self.head.threshold > 0.0 && self.head.threshold < 1.0) {
            return Err(ConfigError::new("head.threshold must be in (0, 1)"));
        }
        self.targets.transform()?;
        if self.cv.k < 2 {
            return Err(ConfigError::new("cv.k must be >= 2"));
        }
        if !(0.0..1.0).contains(&self.label_threshold) {
            return Err(ConfigError::new("label_threshold must be in [0, 1)"));
        }
        if self.heatmaps.cell_px == 0 {
            return Err(ConfigError::new("heatmaps.cell_px must be >= 1"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the resolved config.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn cohort_label(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        match &self.cohort {
            CohortConfig::Path(p) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "file".into()),
            c => c.kind().into(),
        }
    }

    pub fn setup(&self) -> Result<Setup, ConfigError> {
        Ok(Setup {
            method: self.method,
            head: self.head,
            train: self.train,
            weseg: self.weseg,
            targets: self.targets.transform()?,
            seed: self.seed,
            averaging: self.interpretability,
            label_threshold: self.label_threshold,
        })
    }
}

/// Settings of the `preprocess` command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub tissue: TissueConfig,
    pub marker: MarkerConfig,
    pub patch_size: usize,
    pub min_foreground: f64,
    pub label_threshold: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            tissue: TissueConfig::default(),
            marker: MarkerConfig::default(),
            patch_size: 256,
            min_foreground: 0.5,
            label_threshold: 0.5,
        }
    }
}

impl PreprocessConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new(format!("cannot read {}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| ConfigError::new(format!("{}: {e}", path.display())))?;
        if cfg.patch_size == 0 || !(0.0..=1.0).contains(&cfg.min_foreground) {
            return Err(ConfigError::new(
                "patch_size must be >= 1 and min_foreground in [0, 1]",
            ));
        }
        if !(cfg.label_threshold > 0.0 && cfg.label_threshold < 1.0) {
            return Err(ConfigError::new("label_threshold must be in (0, 1)"));
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "cohort": {"synthetic": {"n_slides": 20, "negatives_fraction": 0.0,
            "percentage_distribution": {"kind": "uniform", "lo": 0.0, "hi": 1.0},
            "instances_per_bag": [4, 8], "feature_dim": 4, "separation": 2.0, "seed": 1}},
        "method": "abmil"
    }"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.cv, CvConfig::default());
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.label_threshold, 0.5);
        assert_eq!(cfg.cohort.seed(), Some(1));
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = MINIMAL.replace("\"method\"", "\"bogus\": 1, \"method\"");
        assert!(ExperimentConfig::from_json(&text).is_err());
        let text = MINIMAL.replace("\"kind\": \"uniform\"", "\"kind\": \"gaussian\"");
        assert!(ExperimentConfig::from_json(&text).is_err());
    }

    #[test]
    fn weseg_needs_rasters() {
        let text = MINIMAL.replace("abmil", "weseg");
        let cfg = ExperimentConfig::from_json(&text).unwrap();
        assert!(cfg.validate().unwrap_err().0.contains("raster"));
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::from_json(MINIMAL).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 9;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
