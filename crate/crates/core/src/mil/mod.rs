//! Instance-based MIL heads and pooling.
//!
//! Every method shares the same instance scorer: a linear map from the
//! feature vector to a logit, squashed by a sigmoid into a per-patch tumor
//! probability. The methods differ only in how those probabilities become
//! one bag-level percentage:
//!
//! * `meanpool` averages them,
//! * `abmil` weights them by a softmax over a two-layer tanh attention
//!   scorer,
//! * `clam` pools like `abmil` and adds, during training, a pseudo-label
//!   loss on the highest- and lowest-attention instances,
//! * `weseg` thresholds them and reports the fraction above threshold.

pub mod extractor;
pub mod grad;

pub use extractor::{CnnCache, FeatureExtractor, FrozenProjection, SmallCnn};

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bag::{Bag, Prediction, TumorPercentage};
use crate::error::{Error, Result};
use crate::math;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    MeanPool,
    Abmil,
    Clam,
    Weseg,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::MeanPool, Method::Abmil, Method::Clam, Method::Weseg];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::MeanPool => "meanpool",
            Method::Abmil => "abmil",
            Method::Clam => "clam",
            Method::Weseg => "weseg",
        }
    }

    pub fn uses_attention(self) -> bool {
        matches!(self, Method::Abmil | Method::Clam)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(alloc::format!("unknown method {s:?}")))
    }
}

/// Hyperparameters of a [`MilModel`] that are not learned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    /// Attention hidden size.
    pub hidden: usize,
    /// Instances per pseudo-label class for the CLAM loss.
    pub clam_k: usize,
    /// Weight of the CLAM instance loss in the total loss.
    pub clam_lambda: f64,
    /// WeSEG decision threshold on instance probabilities.
    pub threshold: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            hidden: 128,
            clam_k: 8,
            clam_lambda: 0.3,
            threshold: 0.5,
        }
    }
}

/// Parameters of an instance-scoring head, stored in one flat buffer.
///
/// Layout: `head.weight[D]`, `head.bias[1]`, then for attention methods
/// `attention.v.weight[H*D]` (row-major, `H` rows), `attention.v.bias[H]`,
/// `attention.w.weight[H]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilModel {
    pub method: Method,
    dim: usize,
    hidden: usize,
    params: Vec<f64>,
    pub clam_k: usize,
    pub clam_lambda: f64,
    pub threshold: f64,
}

impl MilModel {
    /// All-zero parameters.
    pub fn zeros(method: Method, dim: usize, cfg: &HeadConfig) -> Self {
        let hidden = if method.uses_attention() {
            cfg.hidden
        } else {
            0
        };
        let n = Self::param_count(dim, hidden);
        MilModel {
            method,
            dim,
            hidden,
            params: vec![0.0; n],
            clam_k: cfg.clam_k,
            clam_lambda: cfg.clam_lambda,
            threshold: cfg.threshold,
        }
    }

    /// Uniform fan-in initialization (`±1/sqrt(fan_in)`), seeded. The
    /// attention output weights start at zero, so pooling starts out uniform.
    pub fn init(method: Method, dim: usize, cfg: &HeadConfig, seed: u64) -> Self {
        let mut m = Self::zeros(method, dim, cfg);
        let mut r = rng::stream(seed, 0x1417);
        let bound_d = 1.0 / math::sqrt(dim as f64);
        let bound_h = if m.hidden > 0 {
            1.0 / math::sqrt(m.hidden as f64)
        } else {
            0.0
        };
        let hd = m.hidden * dim;
        for (i, p) in m.params.iter_mut().enumerate() {
            let bound = if i < dim + 1 + hd + m.hidden {
                bound_d
            } else {
                bound_h
            };
            *p = r.random_range(-bound..=bound);
        }
        if m.hidden > 0 {
            let (_, _, u) = m.att_offsets();
            m.params[u..].iter_mut().for_each(|p| *p = 0.0);
        }
        m
    }

    pub fn from_params(
        method: Method,
        dim: usize,
        cfg: &HeadConfig,
        params: Vec<f64>,
    ) -> Result<Self> {
        let mut m = Self::zeros(method, dim, cfg);
        if params.len() != m.params.len() {
            return Err(Error::LengthMismatch {
                left: params.len(),
                right: m.params.len(),
            });
        }
        m.params = params;
        Ok(m)
    }

    pub fn param_count(dim: usize, hidden: usize) -> usize {
        dim + 1 + hidden * dim + 2 * hidden
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn has_attention(&self) -> bool {
        self.hidden > 0
    }

    pub fn config(&self) -> HeadConfig {
        HeadConfig {
            hidden: self.hidden,
            clam_k: self.clam_k,
            clam_lambda: self.clam_lambda,
            threshold: self.threshold,
        }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn head_weights(&self) -> &[f64] {
        &self.params[..self.dim]
    }

    pub fn head_bias(&self) -> f64 {
        self.params[self.dim]
    }

    pub(crate) fn att_offsets(&self) -> (usize, usize, usize) {
        let v = self.dim + 1;
        let c = v + self.hidden * self.dim;
        let u = c + self.hidden;
        (v, c, u)
    }

    /// Named views over the flat buffer with their shapes.
    pub fn tensors(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
        let d = self.dim;
        let mut out = vec![
            ("head.weight", vec![d], &self.params[..d]),
            ("head.bias", vec![1], &self.params[d..d + 1]),
        ];
        if self.has_attention() {
            let (v, c, u) = self.att_offsets();
            let h = self.hidden;
            out.push(("attention.v.weight", vec![h, d], &self.params[v..c]));
            out.push(("attention.v.bias", vec![h], &self.params[c..u]));
            out.push(("attention.w.weight", vec![h], &self.params[u..u + h]));
        }
        out
    }

    pub fn logit(&self, features: &[f64]) -> f64 {
        dot(self.head_weights(), features) + self.head_bias()
    }

    /// Pre-softmax attention score and the hidden activations behind it.
    pub(crate) fn attention_score(&self, features: &[f64], hidden_out: &mut [f64]) -> f64 {
        let (v, c, u) = self.att_offsets();
        let d = self.dim;
        let mut s = 0.0;
        for (j, t) in hidden_out.iter_mut().enumerate() {
            let row = &self.params[v + j * d..v + (j + 1) * d];
            *t = math::tanh(dot(row, features) + self.params[c + j]);
            s += self.params[u + j] * *t;
        }
        s
    }

    fn check_dim(&self, bag: &Bag) -> Result<()> {
        if bag.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: bag.dim(),
            });
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-instance logits and sigmoid probabilities.
pub fn instance_forward(bag: &Bag, model: &MilModel) -> Result<(Vec<f64>, Vec<f64>)> {
    model.check_dim(bag)?;
    let logits: Vec<f64> = bag
        .instances()
        .iter()
        .map(|i| model.logit(&i.features))
        .collect();
    let probs = logits.iter().map(|&z| math::sigmoid(z)).collect();
    Ok((logits, probs))
}

pub fn mean_pool(probs: &[f64]) -> Result<TumorPercentage> {
    if probs.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(TumorPercentage::saturating(math::mean(probs)))
}

/// Numerically stable softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| math::exp(s - max)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Pre-softmax attention scores, one per instance.
pub fn attention_scores(bag: &Bag, model: &MilModel) -> Result<Vec<f64>> {
    if !model.has_attention() {
        return Err(Error::MissingAttention);
    }
    model.check_dim(bag)?;
    let mut hidden = vec![0.0; model.hidden()];
    Ok(bag
        .instances()
        .iter()
        .map(|i| model.attention_score(&i.features, &mut hidden))
        .collect())
}

/// Softmax of the attention scores over the bag's instances.
pub fn attention_weights(bag: &Bag, model: &MilModel) -> Result<Vec<f64>> {
    Ok(softmax(&attention_scores(bag, model)?))
}

/// `sum_i weights[i] * probs[i]`.
pub fn attention_pool(probs: &[f64], weights: &[f64]) -> Result<TumorPercentage> {
    if probs.len() != weights.len() {
        return Err(Error::LengthMismatch {
            left: probs.len(),
            right: weights.len(),
        });
    }
    if probs.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(TumorPercentage::saturating(dot(probs, weights)))
}

/// Instances ordered by attention, highest first, ties by lower index.
fn attention_order(weights: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..weights.len()).collect();
    idx.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    idx
}

/// The `k` highest- and `k` lowest-attention instances (disjoint).
pub fn clam_selection(weights: &[f64], k: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = weights.len();
    if k == 0 || k > n / 2 {
        return Err(Error::InvalidK { k, n });
    }
    let order = attention_order(weights);
    Ok((order[..k].to_vec(), order[n - k..].to_vec()))
}

/// Mean binary cross-entropy of the top-`k` attention instances against
/// label 1 and the bottom-`k` against label 0.
pub fn clam_instance_loss(weights: &[f64], logits: &[f64], k: usize) -> Result<f64> {
    if weights.len() != logits.len() {
        return Err(Error::LengthMismatch {
            left: weights.len(),
            right: logits.len(),
        });
    }
    let (top, bottom) = clam_selection(weights, k)?;
    let pos: f64 = top
        .iter()
        .map(|&i| math::bce_with_logit(logits[i], 1.0))
        .sum();
    let neg: f64 = bottom
        .iter()
        .map(|&i| math::bce_with_logit(logits[i], 0.0))
        .sum();
    Ok((pos + neg) / (2 * k) as f64)
}

/// Number of proxy-positive instances for a bag of `n` at percentage `p`.
pub fn proxy_positive_count(p: TumorPercentage, n: usize) -> usize {
    (math::round_half_up(p.value() * n as f64) as usize).min(n)
}

/// Labels the `round(p * N)` most probable instances 1 and the rest 0.
/// Ties go to the lower index.
pub fn weseg_proxy_labels(probs: &[f64], p: TumorPercentage) -> Vec<bool> {
    let m = proxy_positive_count(p, probs.len());
    let mut labels = vec![false; probs.len()];
    for &i in attention_order(probs).iter().take(m) {
        labels[i] = true;
    }
    labels
}

/// Fraction of instances with probability strictly above `threshold`.
pub fn weseg_percentage(probs: &[f64], threshold: f64) -> Result<TumorPercentage> {
    if probs.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidParameter(alloc::format!(
            "threshold {threshold} outside (0, 1)"
        )));
    }
    let above = probs.iter().filter(|&&p| p > threshold).count();
    Ok(TumorPercentage::saturating(
        above as f64 / probs.len() as f64,
    ))
}

/// Bag prediction for any method.
pub fn forward(bag: &Bag, model: &MilModel) -> Result<Prediction> {
    let (logits, probs) = instance_forward(bag, model)?;
    let (estimate, attention) = match model.method {
        Method::MeanPool => (mean_pool(&probs)?, None),
        Method::Abmil | Method::Clam => {
            let w = attention_weights(bag, model)?;
            (attention_pool(&probs, &w)?, Some(w))
        }
        Method::Weseg => (weseg_percentage(&probs, model.threshold)?, None),
    };
    Ok(Prediction {
        bag_estimate: estimate,
        instance_logits: logits,
        instance_probs: probs,
        attention,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bag::make_bag;
    use alloc::vec;

    fn bag_from(rows: Vec<Vec<f64>>) -> Bag {
        let coords: Vec<(u32, u32)> = (0..rows.len() as u32).map(|i| (0, i)).collect();
        make_bag("s", "c", rows, 0.5, &coords).unwrap()
    }

    fn random_bag(seed: u64, n: usize, d: usize) -> Bag {
        let mut r = rng::stream(seed, 0);
        bag_from(
            (0..n)
                .map(|_| (0..d).map(|_| r.random_range(-2.0..2.0)).collect())
                .collect(),
        )
    }

    #[test]
    fn zero_head_gives_half() {
        let bag = random_bag(1, 5, 4);
        let m = MilModel::zeros(Method::MeanPool, 4, &HeadConfig::default());
        let (_, probs) = instance_forward(&bag, &m).unwrap();
        assert!(probs.iter().all(|&p| p == 0.5));
    }

    #[test]
    fn duplicated_instance_gives_identical_probs() {
        let row = vec![0.3, -1.2, 2.0];
        let bag = bag_from(vec![row.clone(); 4]);
        let m = MilModel::init(Method::Abmil, 3, &HeadConfig::default(), 9);
        let (_, probs) = instance_forward(&bag, &m).unwrap();
        assert!(probs.windows(2).all(|w| w[0] == w[1]));
        let att = attention_weights(&bag, &m).unwrap();
        assert!(att.iter().all(|&a| (a - 0.25).abs() < 1e-15));
    }

    #[test]
    fn instance_forward_matches_direct_formula() {
        let bag = random_bag(2, 7, 5);
        let m = MilModel::init(Method::MeanPool, 5, &HeadConfig::default(), 3);
        let (logits, probs) = instance_forward(&bag, &m).unwrap();
        for (i, inst) in bag.instances().iter().enumerate() {
            let mut z = m.head_bias();
            for j in 0..5 {
                z += m.head_weights()[j] * inst.features[j];
            }
            let p = 1.0 / (1.0 + (-z).exp());
            assert!((logits[i] - z).abs() < 1e-12);
            assert!((probs[i] - p).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let bag = random_bag(3, 3, 4);
        let m = MilModel::zeros(Method::MeanPool, 5, &HeadConfig::default());
        assert_eq!(
            instance_forward(&bag, &m).unwrap_err(),
            Error::DimensionMismatch {
                expected: 5,
                found: 4
            }
        );
    }

    #[test]
    fn pooling_basics() {
        assert_eq!(mean_pool(&[0.3; 6]).unwrap().value(), 0.3);
        assert_eq!(mean_pool(&[0.0, 1.0]).unwrap().value(), 0.5);
        assert_eq!(mean_pool(&[]).unwrap_err(), Error::EmptyInput);
        let probs = [0.2, 0.9, 0.4];
        assert!(
            (attention_pool(&probs, &[1.0 / 3.0; 3]).unwrap().value()
                - mean_pool(&probs).unwrap().value())
            .abs()
                < 1e-15
        );
        assert_eq!(
            attention_pool(&probs, &[0.0, 1.0, 0.0]).unwrap().value(),
            0.9
        );
        assert!(attention_pool(&probs, &[0.5, 0.5]).is_err());
    }

    #[test]
    fn single_instance_attention() {
        let bag = random_bag(4, 1, 3);
        let m = MilModel::init(
            Method::Clam,
            3,
            &HeadConfig {
                hidden: 8,
                ..Default::default()
            },
            1,
        );
        assert_eq!(attention_weights(&bag, &m).unwrap(), vec![1.0]);
    }

    #[test]
    fn attention_requires_params() {
        let bag = random_bag(4, 3, 3);
        let m = MilModel::zeros(Method::MeanPool, 3, &HeadConfig::default());
        assert_eq!(
            attention_weights(&bag, &m).unwrap_err(),
            Error::MissingAttention
        );
    }

    #[test]
    fn softmax_shift_invariance() {
        let bag = random_bag(5, 9, 6);
        let m = MilModel::init(
            Method::Abmil,
            6,
            &HeadConfig {
                hidden: 16,
                ..Default::default()
            },
            2,
        );
        let scores = attention_scores(&bag, &m).unwrap();
        let shifted: Vec<f64> = scores.iter().map(|s| s + 37.5).collect();
        let (a, b) = (softmax(&scores), softmax(&shifted));
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-9));
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clam_loss_cases() {
        let w = [0.4, 0.3, 0.2, 0.1];
        assert!(
            (clam_instance_loss(&w, &[0.0; 4], 1).unwrap() - core::f64::consts::LN_2).abs() < 1e-12
        );
        assert!(clam_instance_loss(&w, &[40.0, 0.0, 0.0, -40.0], 1).unwrap() < 0.01);
        let got = clam_instance_loss(&w, &[2.0, -1.0, 0.0, -2.0], 1).unwrap();
        let s = |z: f64| 1.0 / (1.0 + (-z).exp());
        let want = (-(s(2.0)).ln() + -(1.0 - s(-2.0)).ln()) / 2.0;
        assert!((got - want).abs() < 1e-12);
        assert_eq!(
            clam_instance_loss(&w, &[0.0; 4], 3).unwrap_err(),
            Error::InvalidK { k: 3, n: 4 }
        );
        assert!(clam_instance_loss(&w, &[0.0; 4], 0).is_err());
    }

    #[test]
    fn clam_selection_disjoint_under_ties() {
        let (top, bottom) = clam_selection(&[0.25; 4], 2).unwrap();
        assert_eq!(top, vec![0, 1]);
        assert_eq!(bottom, vec![2, 3]);
    }

    #[test]
    fn proxy_labels() {
        let p = |v| TumorPercentage::new(v).unwrap();
        assert_eq!(
            weseg_proxy_labels(&[0.9, 0.1, 0.5, 0.7], p(0.5)),
            vec![true, false, false, true]
        );
        assert!(weseg_proxy_labels(&[0.2; 5], p(0.0)).iter().all(|&l| !l));
        assert!(weseg_proxy_labels(&[0.2; 5], p(1.0)).iter().all(|&l| l));
        // Ties go to the lower index; 0.5 * 3 = 1.5 rounds up to 2.
        assert_eq!(
            weseg_proxy_labels(&[0.5, 0.5, 0.5], p(0.5)),
            vec![true, true, false]
        );
    }

    #[test]
    fn weseg_percentage_cases() {
        assert_eq!(weseg_percentage(&[0.9, 0.8], 0.5).unwrap().value(), 1.0);
        assert_eq!(weseg_percentage(&[0.5, 0.1], 0.5).unwrap().value(), 0.0);
        assert!(
            (weseg_percentage(&[0.9, 0.2, 0.6], 0.5).unwrap().value() - 2.0 / 3.0).abs() < 1e-15
        );
        assert_eq!(weseg_percentage(&[], 0.5).unwrap_err(), Error::EmptyInput);
    }

    #[test]
    fn forward_cases() {
        let cfg = HeadConfig {
            hidden: 8,
            ..Default::default()
        };
        let mut meanpool = MilModel::zeros(Method::MeanPool, 2, &cfg);
        meanpool.params_mut()[2] = 0.7; // bias
        let bag = random_bag(6, 5, 2);
        let pred = forward(&bag, &meanpool).unwrap();
        assert!((pred.bag_estimate.value() - math::sigmoid(0.7)).abs() < 1e-15);
        assert!(pred.attention.is_none());

        let symmetric = bag_from(vec![vec![1.0, -1.0]; 3]);
        let abmil = MilModel::init(Method::Abmil, 2, &cfg, 4);
        let pred = forward(&symmetric, &abmil).unwrap();
        assert!(
            (pred.bag_estimate.value() - mean_pool(&pred.instance_probs).unwrap().value()).abs()
                < 1e-15
        );
        assert!(pred.attention.is_some());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("gated".parse::<Method>().is_err());
    }

    #[test]
    fn tensor_views_cover_all_params() {
        let m = MilModel::init(
            Method::Clam,
            3,
            &HeadConfig {
                hidden: 4,
                ..Default::default()
            },
            1,
        );
        let total: usize = m.tensors().iter().map(|t| t.2.len()).sum();
        assert_eq!(total, m.params().len());
    }
}
