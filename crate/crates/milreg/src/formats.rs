//! On-disk formats.
//!
//! Cohort files are JSON lines, one bag per line:
//!
//! ```text
//! {"slide_id": "s0", "case_id": "c0", "target": 0.25, "dim": 2,
//!  "patch_coords": [[0, 0], [0, 1]], "features": [0.1, -1.5, 2.0, 0.0],
//!  "tumor_fractions": [1.0, 0.0]}
//! ```
//!
//! `features` is the row-major N x dim matrix as decimal text. Floats are
//! written in shortest round-trip form and parsed back exactly.
//! `tumor_fractions` is omitted when no instance has one; single unknown
//! entries are `null`.
//!
//! Checkpoints are one JSON object with a `header` and a `tensors` map of
//! `{shape, data}` entries, named as in [`MilModel::tensors`] and, for WeSEG,
//! prefixed `cnn.` / `head.`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use milreg_core::bag::{Bag, Instance, TumorPercentage};
use milreg_core::eval::Heatmap;
use milreg_core::mil::extractor::SmallCnn;
use milreg_core::mil::{HeadConfig, Method, MilModel};
use milreg_core::raster::{Mask, RgbImage};
use milreg_core::train::WesegModel;
use serde::{Deserialize, Serialize};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BagRecord {
    slide_id: String,
    case_id: String,
    target: f64,
    dim: usize,
    patch_coords: Vec<(u32, u32)>,
    features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tumor_fractions: Option<Vec<Option<f64>>>,
}

impl From<&Bag> for BagRecord {
    fn from(b: &Bag) -> Self {
        let inst = b.instances();
        let fractions: Vec<Option<f64>> = inst.iter().map(|i| i.tumor_fraction).collect();
        BagRecord {
            slide_id: b.slide_id().into(),
            case_id: b.case_id().into(),
            target: b.target().value(),
            dim: b.dim(),
            patch_coords: b.coords(),
            features: inst
                .iter()
                .flat_map(|i| i.features.iter().copied())
                .collect(),
            tumor_fractions: fractions.iter().any(Option::is_some).then_some(fractions),
        }
    }
}

impl BagRecord {
    fn into_bag(self) -> Result<Bag> {
        let n = self.patch_coords.len();
        ensure!(n > 0, "empty bag");
        ensure!(self.dim > 0, "dim must be >= 1");
        ensure!(
            self.features.len() == n * self.dim,
            "features has {} values, expected {} x {}",
            self.features.len(),
            n,
            self.dim
        );
        if let Some(f) = &self.tumor_fractions {
            ensure!(f.len() == n, "tumor_fractions length {} != {n}", f.len());
        }
        let instances = self
            .patch_coords
            .iter()
            .zip(self.features.chunks(self.dim))
            .enumerate()
            .map(|(i, (&(r, c), row))| Instance {
                patch_row: r,
                patch_col: c,
                features: row.to_vec(),
                tumor_fraction: self.tumor_fractions.as_ref().and_then(|f| f[i]),
            })
            .collect();
        Ok(Bag::new(
            self.slide_id,
            self.case_id,
            instances,
            TumorPercentage::new(self.target)?,
        )?)
    }
}

pub fn write_cohort(path: &Path, bags: &[Bag]) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    for b in bags {
        serde_json::to_writer(&mut w, &BagRecord::from(b))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cohort(path: &Path) -> Result<Vec<Bag>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut bags = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: BagRecord =
            serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        bags.push(
            rec.into_bag()
                .with_context(|| format!("{}:{}", path.display(), i + 1))?,
        );
    }
    Ok(bags)
}

pub const CHECKPOINT_FORMAT: &str = "milreg-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CnnHeader {
    pub input_size: usize,
    pub channels: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub method: Method,
    #[serde(rename = "D")]
    pub dim: usize,
    #[serde(rename = "H")]
    pub hidden: usize,
    pub k: usize,
    pub lambda: f64,
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cnn: Option<CnnHeader>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub header: CheckpointHeader,
    pub tensors: BTreeMap<String, Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LoadedModel {
    Head(MilModel),
    Weseg(WesegModel),
}

fn head_header(m: &MilModel) -> CheckpointHeader {
    CheckpointHeader {
        method: m.method,
        dim: m.dim(),
        hidden: m.hidden(),
        k: m.clam_k,
        lambda: m.clam_lambda,
        threshold: m.threshold,
        cnn: None,
    }
}

fn put(map: &mut BTreeMap<String, Tensor>, name: String, shape: Vec<usize>, data: &[f64]) {
    map.insert(
        name,
        Tensor {
            shape,
            data: data.to_vec(),
        },
    );
}

fn take(map: &BTreeMap<String, Tensor>, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
    let t = map
        .get(name)
        .with_context(|| format!("checkpoint has no tensor {name}"))?;
    ensure!(
        t.shape == shape,
        "tensor {name} has shape {:?}, expected {:?}",
        t.shape,
        shape
    );
    ensure!(
        t.data.len() == shape.iter().product::<usize>(),
        "tensor {name} data does not match its shape"
    );
    Ok(t.data.clone())
}

impl Checkpoint {
    pub fn from_head(m: &MilModel) -> Self {
        let mut tensors = BTreeMap::new();
        for (name, shape, data) in m.tensors() {
            put(&mut tensors, name.into(), shape, data);
        }
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            header: head_header(m),
            tensors,
        }
    }

    pub fn from_weseg(m: &WesegModel) -> Self {
        let mut tensors = BTreeMap::new();
        for (name, shape, data) in m.cnn.tensors() {
            put(&mut tensors, format!("cnn.{name}"), shape, data);
        }
        for (name, shape, data) in m.head.tensors() {
            put(&mut tensors, name.into(), shape, data);
        }
        let mut header = head_header(&m.head);
        header.cnn = Some(CnnHeader {
            input_size: m.cnn.input_size(),
            channels: m.cnn.channels(),
        });
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            header,
            tensors,
        }
    }

    /// Rebuilds the model, checking every tensor name and shape.
    pub fn to_model(&self) -> Result<LoadedModel> {
        ensure!(
            self.format == CHECKPOINT_FORMAT,
            "unknown checkpoint format {:?}",
            self.format
        );
        let h = &self.header;
        let cfg = HeadConfig {
            hidden: h.hidden,
            clam_k: h.k,
            clam_lambda: h.lambda,
            threshold: h.threshold,
        };
        let skeleton = MilModel::zeros(h.method, h.dim, &cfg);
        let mut params = Vec::with_capacity(skeleton.params().len());
        let mut expected = 0;
        for (name, shape, _) in skeleton.tensors() {
            params.extend(take(&self.tensors, name, &shape)?);
            expected += 1;
        }
        let head = MilModel::from_params(h.method, h.dim, &cfg, params)?;
        match (&h.cnn, h.method) {
            (None, Method::Weseg) => bail!("weseg checkpoint without cnn header"),
            (Some(_), m) if m != Method::Weseg => bail!("cnn header on a {m} checkpoint"),
            (None, _) => {
                ensure!(
                    self.tensors.len() == expected,
                    "checkpoint has unexpected tensors"
                );
                Ok(LoadedModel::Head(head))
            }
            (Some(c), _) => {
                let mut cnn = SmallCnn::new(c.input_size, c.channels, 0)?;
                ensure!(cnn.output_dim() == h.dim, "cnn output does not match D");
                let mut cp = Vec::with_capacity(cnn.params().len());
                for (name, shape, _) in cnn.tensors() {
                    cp.extend(take(&self.tensors, &format!("cnn.{name}"), &shape)?);
                    expected += 1;
                }
                ensure!(
                    self.tensors.len() == expected,
                    "checkpoint has unexpected tensors"
                );
                cnn.set_params(cp)?;
                Ok(LoadedModel::Weseg(WesegModel { cnn, head }))
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn save_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    let raw: Vec<u8> = img.pixels().iter().flatten().copied().collect();
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, raw)
        .context("image buffer size")?;
    buf.save(path)
        .with_context(|| format!("writing {}", path.display()))
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)
        .with_context(|| format!("reading {}", path.display()))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let px = img.pixels().map(|p| p.0).collect();
    Ok(RgbImage::from_pixels(w as usize, h as usize, px)?)
}

/// Masks are 8-bit grayscale, 255 inside.
pub fn save_mask(path: &Path, mask: &Mask) -> Result<()> {
    let raw: Vec<u8> = mask
        .bits()
        .iter()
        .map(|&b| if b { 255 } else { 0 })
        .collect();
    let buf = image::GrayImage::from_raw(mask.width() as u32, mask.height() as u32, raw)
        .context("mask buffer size")?;
    buf.save(path)
        .with_context(|| format!("writing {}", path.display()))
}

/// Any pixel brighter than mid-gray is inside.
pub fn load_mask(path: &Path) -> Result<Mask> {
    let img = image::open(path)
        .with_context(|| format!("reading {}", path.display()))?
        .to_luma8();
    let (w, h) = img.dimensions();
    let bits = img.pixels().map(|p| p.0[0] > 127).collect();
    Ok(Mask::from_bits(w as usize, h as usize, bits)?)
}

/// Blue through yellow to red; `t` in `[0, 1]`.
pub fn colormap(t: f64) -> [u8; 3] {
    const STOPS: [[f64; 3]; 4] = [
        [49.0, 54.0, 149.0],
        [116.0, 173.0, 209.0],
        [254.0, 224.0, 144.0],
        [215.0, 48.0, 39.0],
    ];
    let t = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - i as f64;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    [0, 1, 2].map(|c| (a[c] + (b[c] - a[c]) * f).round() as u8)
}

/// Heatmap as RGBA with `cell` pixels per patch; missing patches are
/// transparent.
pub fn save_heatmap_png(path: &Path, heatmap: &Heatmap, cell: u32) -> Result<()> {
    ensure!(cell > 0, "cell size must be >= 1");
    let (w, h) = (heatmap.cols as u32 * cell, heatmap.rows as u32 * cell);
    let img = image::RgbaImage::from_fn(w.max(1), h.max(1), |x, y| {
        let (r, c) = ((y / cell) as usize, (x / cell) as usize);
        if r >= heatmap.rows || c >= heatmap.cols {
            return image::Rgba([0, 0, 0, 0]);
        }
        match heatmap.get(r, c) {
            Some(v) => {
                let [r, g, b] = colormap(v);
                image::Rgba([r, g, b, 255])
            }
            None => image::Rgba([0, 0, 0, 0]),
        }
    });
    img.save(path)
        .with_context(|| format!("writing {}", path.display()))
}
