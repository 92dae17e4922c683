//! Scalar helpers over `libm` so the crate stays `no_std`.

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub fn powi(x: f64, n: u32) -> f64 {
    let (mut acc, mut base, mut n) = (1.0, x, n);
    while n > 0 {
        if n & 1 == 1 {
            acc *= base;
        }
        base *= base;
        n >>= 1;
    }
    acc
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

/// Rounds half away from zero for non-negative inputs (`2.5 -> 3`).
///
/// Products of decimal fractions land a hair below the half they stand for
/// (`0.29 * 50 = 14.499999999999998`), so anything within `HALF_SLACK` of a
/// half rounds up.
#[inline]
pub fn round_half_up(x: f64) -> f64 {
    libm::floor(x + 0.5 + HALF_SLACK)
}

pub const HALF_SLACK: f64 = 1e-9;

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// `-ln(sigmoid(z))`, computed without forming the probability.
#[inline]
pub fn softplus_neg(z: f64) -> f64 {
    // ln(1 + e^-z)
    if z > 0.0 {
        libm::log1p(libm::exp(-z))
    } else {
        -z + libm::log1p(libm::exp(z))
    }
}

/// Binary cross-entropy of `sigmoid(logit)` against `label`, from logits.
#[inline]
pub fn bce_with_logit(logit: f64, label: f64) -> f64 {
    label * softplus_neg(logit) + (1.0 - label) * softplus_neg(-logit)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}
