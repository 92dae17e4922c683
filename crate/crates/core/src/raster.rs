//! Minimal image containers: 8-bit RGB rasters, binary masks and
//! floating-point patches.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, color: [u8; 3]) -> Self {
        RgbImage {
            width,
            height,
            data: vec![color; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, data: Vec<[u8; 3]>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::LengthMismatch {
                left: data.len(),
                right: width * height,
            });
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: [u8; 3]) {
        self.data[y * self.width + x] = c;
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.data
    }

    /// Rotates 90 degrees clockwise.
    pub fn rot90(&self) -> Self {
        let (w, h) = (self.width, self.height);
        let mut out = RgbImage::filled(h, w, [0; 3]);
        for y in 0..h {
            for x in 0..w {
                out.set(h - 1 - y, x, self.get(x, y));
            }
        }
        out
    }

    /// Square crop as a channel-planar float patch in `[0, 1]`.
    pub fn crop_patch(&self, x0: usize, y0: usize, size: usize) -> Result<Patch> {
        if x0 + size > self.width || y0 + size > self.height {
            return Err(Error::OutOfBounds);
        }
        let mut p = Patch::zeros(size);
        for y in 0..size {
            for x in 0..size {
                let c = self.get(x0 + x, y0 + y);
                for ch in 0..3 {
                    p.set(ch, x, y, c[ch] as f64 / 255.0);
                }
            }
        }
        Ok(p)
    }
}

/// Binary mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::LengthMismatch {
                left: bits.len(),
                right: width * height,
            });
        }
        Ok(Mask {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Mask::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.bits[y * width + x] = f(x, y);
            }
        }
        m
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn same_shape(&self, other: &Mask) -> bool {
        self.width == other.width && self.height == other.height
    }

    fn check_shape(&self, other: &Mask) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.bits.len(),
                found: other.bits.len(),
            })
        }
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        self.check_shape(other)?;
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| *a && *b)
            .collect();
        Ok(Mask {
            bits,
            width: self.width,
            height: self.height,
        })
    }

    pub fn or(&self, other: &Mask) -> Result<Mask> {
        self.check_shape(other)?;
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| *a || *b)
            .collect();
        Ok(Mask {
            bits,
            width: self.width,
            height: self.height,
        })
    }

    pub fn and_not(&self, other: &Mask) -> Result<Mask> {
        self.check_shape(other)?;
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| *a && !*b)
            .collect();
        Ok(Mask {
            bits,
            width: self.width,
            height: self.height,
        })
    }

    pub fn not(&self) -> Mask {
        Mask {
            bits: self.bits.iter().map(|b| !b).collect(),
            width: self.width,
            height: self.height,
        }
    }

    /// Intersection-over-union. Two empty masks have Jaccard 1.
    pub fn jaccard(&self, other: &Mask) -> Result<f64> {
        self.check_shape(other)?;
        let (mut inter, mut union) = (0usize, 0usize);
        for (a, b) in self.bits.iter().zip(&other.bits) {
            inter += (*a && *b) as usize;
            union += (*a || *b) as usize;
        }
        Ok(if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        })
    }

    /// Number of set pixels inside the `size`-square at `(x0, y0)`.
    pub fn count_in_square(&self, x0: usize, y0: usize, size: usize) -> usize {
        let mut n = 0;
        for y in y0..(y0 + size).min(self.height) {
            let row = &self.bits[y * self.width..(y + 1) * self.width];
            n += row[x0.min(self.width)..(x0 + size).min(self.width)]
                .iter()
                .filter(|&&b| b)
                .count();
        }
        n
    }

    /// Rotates 90 degrees clockwise.
    pub fn rot90(&self) -> Self {
        let (w, h) = (self.width, self.height);
        let mut out = Mask::new(h, w);
        for y in 0..h {
            for x in 0..w {
                out.set(h - 1 - y, x, self.get(x, y));
            }
        }
        out
    }
}

/// Channel-planar RGB patch with values in `[0, 1]`, layout `[c][y][x]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    size: usize,
    data: Vec<f64>,
}

impl Patch {
    pub fn zeros(size: usize) -> Self {
        Patch {
            size,
            data: vec![0.0; 3 * size * size],
        }
    }

    pub fn from_data(size: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 3 * size * size {
            return Err(Error::LengthMismatch {
                left: data.len(),
                right: 3 * size * size,
            });
        }
        Ok(Patch { size, data })
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, ch: usize, x: usize, y: usize) -> f64 {
        self.data[(ch * self.size + y) * self.size + x]
    }

    #[inline]
    pub fn set(&mut self, ch: usize, x: usize, y: usize, v: f64) {
        self.data[(ch * self.size + y) * self.size + x] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Box-filter resize to `out` x `out`. Exact when `size` is a multiple of `out`.
    pub fn resize(&self, out: usize) -> Patch {
        if out == self.size {
            return self.clone();
        }
        let mut p = Patch::zeros(out);
        let scale = self.size as f64 / out as f64;
        for ch in 0..3 {
            for oy in 0..out {
                let y0 = (oy as f64 * scale) as usize;
                let y1 = (((oy + 1) as f64 * scale) as usize).clamp(y0 + 1, self.size);
                for ox in 0..out {
                    let x0 = (ox as f64 * scale) as usize;
                    let x1 = (((ox + 1) as f64 * scale) as usize).clamp(x0 + 1, self.size);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            acc += self.get(ch, x, y);
                        }
                    }
                    p.set(ch, ox, oy, acc / ((y1 - y0) * (x1 - x0)) as f64);
                }
            }
        }
        p
    }

    /// Rec. 601 luma, row-major.
    pub fn grayscale(&self) -> Vec<f64> {
        let n = self.size * self.size;
        (0..n)
            .map(|i| 0.299 * self.data[i] + 0.587 * self.data[n + i] + 0.114 * self.data[2 * n + i])
            .collect()
    }
}

/// HSV with hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let hue = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let hue = if hue < 0.0 { hue + 360.0 } else { hue };
    let sat = if max == 0.0 { 0.0 } else { delta / max };
    (hue, sat, max)
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h = ((h % 360.0) + 360.0) % 360.0;
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - ((hp % 2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    (r + m, g + m, b + m)
}
