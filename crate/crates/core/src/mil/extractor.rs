//! Patch feature extractors: a frozen seeded random projection for the
//! two-step methods and a small trainable CNN for end-to-end WeSEG.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::raster::Patch;
use crate::rng;

const PROJECTION_SIDE: usize = 32;

#[derive(Serialize, Deserialize)]
struct ProjectionSpec {
    seed: u64,
    output_dim: usize,
}

/// Downsamples a patch to 32x32 grayscale, centers it to `[-1, 1]` and
/// projects it with a fixed Gaussian matrix scaled by `1/sqrt(1024)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "ProjectionSpec", into = "ProjectionSpec")]
pub struct FrozenProjection {
    seed: u64,
    output_dim: usize,
    matrix: Vec<f64>,
}

impl From<ProjectionSpec> for FrozenProjection {
    fn from(s: ProjectionSpec) -> Self {
        FrozenProjection::new(s.seed, s.output_dim)
    }
}

impl From<FrozenProjection> for ProjectionSpec {
    fn from(p: FrozenProjection) -> Self {
        ProjectionSpec {
            seed: p.seed,
            output_dim: p.output_dim,
        }
    }
}

impl FrozenProjection {
    pub fn new(seed: u64, output_dim: usize) -> Self {
        let n_in = PROJECTION_SIDE * PROJECTION_SIDE;
        let scale = 1.0 / math::sqrt(n_in as f64);
        let mut r = rng::stream(seed, 0xFEA7);
        let matrix = (0..output_dim * n_in)
            .map(|_| r.sample::<f64, _>(StandardNormal) * scale)
            .collect();
        FrozenProjection {
            seed,
            output_dim,
            matrix,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn extract(&self, patch: &Patch) -> Vec<f64> {
        let gray = patch.resize(PROJECTION_SIDE).grayscale();
        let x: Vec<f64> = gray.iter().map(|g| 2.0 * g - 1.0).collect();
        self.matrix
            .chunks(x.len())
            .map(|row| super::dot(row, &x))
            .collect()
    }
}

/// Three blocks of 3x3 convolution (zero padding), ReLU and 2x2 average
/// pooling, followed by global average pooling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallCnn {
    input_size: usize,
    channels: [usize; 3],
    params: Vec<f64>,
}

/// Intermediate activations of one [`SmallCnn::forward`] call.
#[derive(Debug, Clone)]
pub struct CnnCache {
    /// Block inputs, `inputs[0]` being the patch itself.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation convolution outputs per block.
    pre: Vec<Vec<f64>>,
    last: Vec<f64>,
}

impl SmallCnn {
    /// He-uniform weights, zero biases. `input_size` must be a multiple of 8.
    pub fn new(input_size: usize, channels: [usize; 3], seed: u64) -> Result<Self> {
        if input_size == 0 || !input_size.is_multiple_of(8) || channels.contains(&0) {
            return Err(Error::InvalidParameter(
                "cnn input size must be a positive multiple of 8".into(),
            ));
        }
        let mut cnn = SmallCnn {
            input_size,
            channels,
            params: Vec::new(),
        };
        let total = (0..3).map(|l| cnn.layer_len(l)).sum();
        cnn.params = vec![0.0; total];
        let mut r = rng::stream(seed, 0xC22);
        for l in 0..3 {
            let (w_off, b_off) = cnn.offsets(l);
            let bound = math::sqrt(6.0 / (cnn.c_in(l) * 9) as f64);
            for p in &mut cnn.params[w_off..b_off] {
                *p = r.random_range(-bound..=bound);
            }
        }
        Ok(cnn)
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn channels(&self) -> [usize; 3] {
        self.channels
    }

    pub fn output_dim(&self) -> usize {
        self.channels[2]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::LengthMismatch {
                left: params.len(),
                right: self.params.len(),
            });
        }
        self.params = params;
        Ok(())
    }

    fn c_in(&self, l: usize) -> usize {
        if l == 0 {
            3
        } else {
            self.channels[l - 1]
        }
    }

    fn layer_len(&self, l: usize) -> usize {
        self.channels[l] * self.c_in(l) * 9 + self.channels[l]
    }

    /// `(weight offset, bias offset)` of block `l`.
    fn offsets(&self, l: usize) -> (usize, usize) {
        let start: usize = (0..l).map(|i| self.layer_len(i)).sum();
        (start, start + self.channels[l] * self.c_in(l) * 9)
    }

    /// Named views `conv{l}.weight [out, in, 3, 3]` and `conv{l}.bias [out]`.
    pub fn tensors(&self) -> Vec<(alloc::string::String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        for l in 0..3 {
            let (w, b) = self.offsets(l);
            let co = self.channels[l];
            out.push((
                alloc::format!("conv{l}.weight"),
                vec![co, self.c_in(l), 3, 3],
                &self.params[w..b],
            ));
            out.push((
                alloc::format!("conv{l}.bias"),
                vec![co],
                &self.params[b..b + co],
            ));
        }
        out
    }

    fn conv(&self, l: usize, input: &[f64], side: usize) -> Vec<f64> {
        let (ci, co) = (self.c_in(l), self.channels[l]);
        let (w_off, b_off) = self.offsets(l);
        let w = &self.params[w_off..b_off];
        let b = &self.params[b_off..b_off + co];
        let mut out = vec![0.0; co * side * side];
        for o in 0..co {
            let plane = &mut out[o * side * side..(o + 1) * side * side];
            plane.iter_mut().for_each(|v| *v = b[o]);
            for c in 0..ci {
                let src = &input[c * side * side..(c + 1) * side * side];
                let k = &w[(o * ci + c) * 9..(o * ci + c + 1) * 9];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let kv = k[ky * 3 + kx];
                        for y in 0..side {
                            let iy = y + ky;
                            if iy < 1 || iy > side {
                                continue;
                            }
                            let srow = &src[(iy - 1) * side..iy * side];
                            let drow = &mut plane[y * side..(y + 1) * side];
                            let (x0, x1) = (
                                if kx == 0 { 1 } else { 0 },
                                if kx == 2 { side - 1 } else { side },
                            );
                            for x in x0..x1 {
                                drow[x] += kv * srow[x + kx - 1];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Features of one patch plus the cache needed for [`SmallCnn::backward`].
    pub fn forward(&self, patch: &Patch) -> Result<(Vec<f64>, CnnCache)> {
        if patch.size() != self.input_size {
            return Err(Error::DimensionMismatch {
                expected: self.input_size,
                found: patch.size(),
            });
        }
        let mut side = self.input_size;
        let mut a = patch.data().to_vec();
        let mut inputs = Vec::with_capacity(3);
        let mut pre = Vec::with_capacity(3);
        for l in 0..3 {
            let z = self.conv(l, &a, side);
            let co = self.channels[l];
            let half = side / 2;
            let mut pooled = vec![0.0; co * half * half];
            for c in 0..co {
                for y in 0..half {
                    for x in 0..half {
                        let at = |yy: usize, xx: usize| z[(c * side + yy) * side + xx].max(0.0);
                        pooled[(c * half + y) * half + x] = 0.25
                            * (at(2 * y, 2 * x)
                                + at(2 * y, 2 * x + 1)
                                + at(2 * y + 1, 2 * x)
                                + at(2 * y + 1, 2 * x + 1));
                    }
                }
            }
            inputs.push(a);
            pre.push(z);
            a = pooled;
            side = half;
        }
        let area = (side * side) as f64;
        let feats = a
            .chunks(side * side)
            .map(|ch| ch.iter().sum::<f64>() / area)
            .collect();
        Ok((
            feats,
            CnnCache {
                inputs,
                pre,
                last: a,
            },
        ))
    }

    pub fn features(&self, patch: &Patch) -> Result<Vec<f64>> {
        Ok(self.forward(patch)?.0)
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d features`.
    pub fn backward(&self, cache: &CnnCache, dfeat: &[f64], grad: &mut [f64]) {
        let mut side = self.input_size >> 3;
        let area = (side * side) as f64;
        let mut da: Vec<f64> = vec![0.0; cache.last.len()];
        for (c, g) in dfeat.iter().enumerate() {
            da[c * side * side..(c + 1) * side * side]
                .iter_mut()
                .for_each(|v| *v = g / area);
        }
        for l in (0..3).rev() {
            let full = side * 2;
            let (ci, co) = (self.c_in(l), self.channels[l]);
            let z = &cache.pre[l];
            let mut dz = vec![0.0; co * full * full];
            for c in 0..co {
                for y in 0..full {
                    for x in 0..full {
                        let idx = (c * full + y) * full + x;
                        if z[idx] > 0.0 {
                            dz[idx] = 0.25 * da[(c * side + y / 2) * side + x / 2];
                        }
                    }
                }
            }
            let (w_off, b_off) = self.offsets(l);
            let input = &cache.inputs[l];
            let mut dprev = if l > 0 {
                vec![0.0; ci * full * full]
            } else {
                Vec::new()
            };
            for o in 0..co {
                let dplane = &dz[o * full * full..(o + 1) * full * full];
                grad[b_off + o] += dplane.iter().sum::<f64>();
                for c in 0..ci {
                    let src = &input[c * full * full..(c + 1) * full * full];
                    let kbase = w_off + (o * ci + c) * 9;
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let kv = self.params[kbase + ky * 3 + kx];
                            let mut acc = 0.0;
                            for y in 0..full {
                                let iy = y + ky;
                                if iy < 1 || iy > full {
                                    continue;
                                }
                                let (x0, x1) = (
                                    if kx == 0 { 1 } else { 0 },
                                    if kx == 2 { full - 1 } else { full },
                                );
                                for x in x0..x1 {
                                    let d = dplane[y * full + x];
                                    let si = (iy - 1) * full + x + kx - 1;
                                    acc += d * src[si];
                                    if l > 0 {
                                        dprev[c * full * full + si] += d * kv;
                                    }
                                }
                            }
                            grad[kbase + ky * 3 + kx] += acc;
                        }
                    }
                }
            }
            da = dprev;
            side = full;
        }
    }
}

/// Pluggable patch encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureExtractor {
    FrozenRandomProjection(FrozenProjection),
    TrainableSmallCnn(SmallCnn),
}

impl FeatureExtractor {
    pub fn output_dim(&self) -> usize {
        match self {
            FeatureExtractor::FrozenRandomProjection(p) => p.output_dim(),
            FeatureExtractor::TrainableSmallCnn(c) => c.output_dim(),
        }
    }

    pub fn extract(&self, patch: &Patch) -> Result<Vec<f64>> {
        match self {
            FeatureExtractor::FrozenRandomProjection(p) => Ok(p.extract(patch)),
            FeatureExtractor::TrainableSmallCnn(c) => c.features(&patch.resize(c.input_size())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_patch(seed: u64, size: usize) -> Patch {
        let mut r = rng::stream(seed, 0);
        Patch::from_data(
            size,
            (0..3 * size * size)
                .map(|_| r.random_range(0.0..1.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn projection_is_deterministic() {
        let a = FrozenProjection::new(5, 16);
        let b = FrozenProjection::new(5, 16);
        let p = random_patch(1, 64);
        assert_eq!(a.extract(&p), b.extract(&p));
        assert_eq!(a.extract(&p), a.extract(&p.clone()));
        assert_ne!(FrozenProjection::new(6, 16).extract(&p), a.extract(&p));
        assert_eq!(a.extract(&p).len(), 16);
    }

    #[test]
    fn cnn_rejects_bad_sizes() {
        assert!(SmallCnn::new(12, [2, 2, 2], 0).is_err());
        let cnn = SmallCnn::new(8, [2, 2, 2], 0).unwrap();
        assert!(cnn.forward(&random_patch(0, 16)).is_err());
    }

    #[test]
    fn cnn_gradient_matches_finite_differences() {
        let mut cnn = SmallCnn::new(8, [3, 4, 2], 11).unwrap();
        // Shift biases so no ReLU sits exactly at its kink.
        for l in 0..3 {
            let (_, b) = cnn.offsets(l);
            for o in 0..cnn.channels[l] {
                cnn.params[b + o] = 0.05 * (o as f64 + 1.0);
            }
        }
        let patch = random_patch(3, 8);
        let coef = [0.7, -1.3];
        let loss = |c: &SmallCnn| {
            c.features(&patch)
                .unwrap()
                .iter()
                .zip(&coef)
                .map(|(f, k)| f * k)
                .sum::<f64>()
        };
        let (_, cache) = cnn.forward(&patch).unwrap();
        let mut grad = vec![0.0; cnn.params.len()];
        cnn.backward(&cache, &coef, &mut grad);
        let eps = 1e-5;
        for k in 0..grad.len() {
            let orig = cnn.params[k];
            cnn.params[k] = orig + eps;
            let up = loss(&cnn);
            cnn.params[k] = orig - eps;
            let down = loss(&cnn);
            cnn.params[k] = orig;
            let fd = (up - down) / (2.0 * eps);
            let err = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-7);
            assert!(err < 1e-4, "param {k}: analytic {} fd {fd}", grad[k]);
        }
    }
}
