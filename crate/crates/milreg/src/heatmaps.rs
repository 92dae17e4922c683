//! Heatmap files for held-out slides: a PNG plus a JSON with the raw and
//! normalized values.

use std::path::Path;

use anyhow::Result;
use milreg_core::eval::{build_heatmap, Heatmap, HeatmapKind};
use milreg_core::preprocess::PatchGrid;
use serde::Serialize;

use crate::experiment::InstanceScores;
use crate::formats::{save_heatmap_png, write_json};

/// Grid spanned by patch coordinates, for bags without a raster.
pub fn grid_from_coords(coords: &[(u32, u32)]) -> PatchGrid {
    let mut sorted = coords.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    PatchGrid {
        patch_size_px: 1,
        grid_rows: sorted.iter().map(|c| c.0 as usize + 1).max().unwrap_or(0),
        grid_cols: sorted.iter().map(|c| c.1 as usize + 1).max().unwrap_or(0),
        coords: sorted,
    }
}

#[derive(Serialize)]
struct HeatmapFile<'a> {
    slide_id: &'a str,
    kind: HeatmapKind,
    rows: usize,
    cols: usize,
    /// Normalized row-major cells, `null` where there is no patch.
    cells: &'a [Option<f64>],
    coords: &'a [(u32, u32)],
    /// Scores before normalization, in patch order.
    raw: &'a [f64],
}

/// Builds the logits map and, when present, the attention map.
pub fn slide_heatmaps(
    scores: &InstanceScores,
    grid: Option<&PatchGrid>,
) -> Result<Vec<(Heatmap, Vec<f64>)>> {
    let own;
    let grid = match grid {
        Some(g) => g,
        None => {
            own = grid_from_coords(&scores.coords);
            &own
        }
    };
    let mut out = vec![(
        build_heatmap(
            grid,
            &scores.logits,
            Some(&scores.coords),
            HeatmapKind::Logits,
        )?,
        scores.logits.clone(),
    )];
    if let Some(a) = &scores.attention {
        out.push((
            build_heatmap(grid, a, Some(&scores.coords), HeatmapKind::Attention)?,
            a.clone(),
        ));
    }
    Ok(out)
}

/// Writes `<slide>_<kind>.png` and `<slide>_<kind>.json` into `dir`.
pub fn write_slide_heatmaps(
    dir: &Path,
    scores: &InstanceScores,
    grid: Option<&PatchGrid>,
    cell_px: u32,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (map, raw) in slide_heatmaps(scores, grid)? {
        let kind = match map.kind {
            HeatmapKind::Logits => "logits",
            HeatmapKind::Attention => "attention",
        };
        let stem = format!("{}_{kind}", scores.slide_id);
        save_heatmap_png(&dir.join(format!("{stem}.png")), &map, cell_px)?;
        write_json(
            &dir.join(format!("{stem}.json")),
            &HeatmapFile {
                slide_id: &scores.slide_id,
                kind: map.kind,
                rows: map.rows,
                cols: map.cols,
                cells: &map.cells,
                coords: &scores.coords,
                raw: &raw,
            },
        )?;
    }
    Ok(())
}
