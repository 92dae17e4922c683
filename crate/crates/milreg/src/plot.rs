//! Bare-bones raster charts: axes, bars, polylines. No text; the CSV next
//! to each image carries the numbers and legend.

use std::path::Path;

use anyhow::{Context, Result};
use image::{Rgb, RgbImage};

pub const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

const MARGIN: u32 = 24;

/// A plotting area mapping data coordinates onto pixels.
pub struct Chart {
    img: RgbImage,
    x: (f64, f64),
    y: (f64, f64),
}

impl Chart {
    pub fn new(width: u32, height: u32, x: (f64, f64), y: (f64, f64)) -> Self {
        let mut c = Chart {
            img: RgbImage::from_pixel(width, height, Rgb([255, 255, 255])),
            x,
            y,
        };
        let gray = [60, 60, 60];
        let (x0, y0) = (x.0, y.0.max(0.0).min(y.1));
        c.line((x.0, y0), (x.1, y0), gray);
        c.line((x0, y.0), (x0, y.1), gray);
        c
    }

    fn px(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let w = (self.img.width() - 2 * MARGIN) as f64;
        let h = (self.img.height() - 2 * MARGIN) as f64;
        let fx = (x - self.x.0) / (self.x.1 - self.x.0);
        let fy = (y - self.y.0) / (self.y.1 - self.y.0);
        (MARGIN as f64 + fx * w, MARGIN as f64 + (1.0 - fy) * h)
    }

    fn dot(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.put_pixel(x as u32, y as u32, Rgb(c));
        }
    }

    /// Straight segment between two data points.
    pub fn line(&mut self, a: (f64, f64), b: (f64, f64), c: [u8; 3]) {
        let (ax, ay) = self.px(a);
        let (bx, by) = self.px(b);
        let steps = (bx - ax).abs().max((by - ay).abs()).ceil().max(1.0) as usize;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            self.dot(
                (ax + (bx - ax) * t).round() as i64,
                (ay + (by - ay) * t).round() as i64,
                c,
            );
        }
    }

    pub fn polyline(&mut self, pts: &[(f64, f64)], c: [u8; 3]) {
        for w in pts.windows(2) {
            self.line(w[0], w[1], c);
        }
        for &p in pts {
            let (x, y) = self.px(p);
            for d in -1..=1 {
                self.dot(x.round() as i64 + d, y.round() as i64, c);
                self.dot(x.round() as i64, y.round() as i64 + d, c);
            }
        }
    }

    /// Filled bar from the zero line to `v`, spanning `[x0, x1]`.
    pub fn bar(&mut self, x0: f64, x1: f64, v: f64, c: [u8; 3]) {
        let base = 0.0f64.clamp(self.y.0, self.y.1);
        let (px0, py0) = self.px((x0, base));
        let (px1, py1) = self.px((x1, v.clamp(self.y.0, self.y.1)));
        let (ylo, yhi) = (py0.min(py1).round() as i64, py0.max(py1).round() as i64);
        for x in px0.round() as i64..px1.round() as i64 {
            for y in ylo..=yhi {
                self.dot(x, y, c);
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.img
            .save(path)
            .with_context(|| format!("writing {}", path.display()))
    }
}
