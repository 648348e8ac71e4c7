//! Sliding-window tile plans and seamless stitching of per-tile predictions.
//!
//! Windows are always full-size: the last window along an axis is clamped
//! inward instead of padding past the grid edge. Each window keeps a centre
//! crop; a `crop_margin` band on every side facing the grid interior is
//! context only and is discarded when stitching. Sides touching the grid
//! boundary are never cropped, so boundary pixels always have a retained
//! contribution.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::raster::{GeoTransform, RasterGrid, Sample};

pub const DEFAULT_TILE_SIZE: usize = 128;
pub const DEFAULT_OVERLAP: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileWindow {
    pub row0: usize,
    pub col0: usize,
    pub size: usize,
    pub crop_margin: usize,
}

/// Half-open pixel span `[start, end)`.
pub type Span = (usize, usize);

impl TileWindow {
    /// Retained rows and columns inside a `width × height` grid.
    pub fn retained(&self, width: usize, height: usize) -> (Span, Span) {
        let axis = |start: usize, extent: usize| {
            let lo = if start > 0 { start + self.crop_margin } else { start };
            let end = start + self.size;
            let hi = if end < extent { end - self.crop_margin } else { end };
            (lo, hi)
        };
        (axis(self.row0, height), axis(self.col0, width))
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.row0 && row < self.row0 + self.size && col >= self.col0 && col < self.col0 + self.size
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TilePlan {
    pub width: usize,
    pub height: usize,
    pub tile_size: usize,
    pub stride: usize,
    pub crop_margin: usize,
    pub windows: Vec<TileWindow>,
}

impl TilePlan {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

fn stride_for(tile_size: usize, overlap: f64) -> usize {
    (math::round(tile_size as f64 * (1.0 - overlap)) as usize).max(1)
}

fn starts(extent: usize, size: usize, stride: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let last = extent - size;
    let mut s = 0;
    while s < last {
        out.push(s);
        s += stride;
    }
    out.push(last);
    out
}

/// Plan with the default crop margin of a quarter tile.
pub fn tile_plan(width: usize, height: usize, tile_size: usize, overlap: f64) -> Result<TilePlan> {
    tile_plan_with_margin(width, height, tile_size, overlap, tile_size / 4)
}

pub fn tile_plan_with_margin(
    width: usize,
    height: usize,
    tile_size: usize,
    overlap: f64,
    crop_margin: usize,
) -> Result<TilePlan> {
    if tile_size == 0 {
        return Err(Error::config("tile size must be positive"));
    }
    if tile_size > width.min(height) {
        return Err(Error::dim(format!(
            "tile size {tile_size} exceeds grid {width}x{height}"
        )));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::config(format!("overlap fraction must be in [0, 1), got {overlap}")));
    }
    if 2 * crop_margin >= tile_size {
        return Err(Error::config(format!(
            "crop margin {crop_margin} must be below half the tile size {tile_size}"
        )));
    }
    let stride = stride_for(tile_size, overlap);
    let rows = starts(height, tile_size, stride);
    let cols = starts(width, tile_size, stride);
    let mut windows = Vec::with_capacity(rows.len() * cols.len());
    for &row0 in &rows {
        for &col0 in &cols {
            windows.push(TileWindow {
                row0,
                col0,
                size: tile_size,
                crop_margin,
            });
        }
    }
    Ok(TilePlan {
        width,
        height,
        tile_size,
        stride,
        crop_margin,
        windows,
    })
}

/// Accumulates per-window predictions into a surface.
///
/// Each pixel's value is the mean of the retained centre-crop contributions
/// covering it. Pixels reached only by discarded margins fall back to the
/// mean of all full-window contributions. Sums are kept in `f64` and divided
/// once in [`Stitcher::finish`]; adding windows in plan order makes the
/// result bit-reproducible.
#[derive(Debug, Clone)]
pub struct Stitcher {
    width: usize,
    height: usize,
    centre_sum: Vec<f64>,
    centre_count: Vec<u32>,
    full_sum: Vec<f64>,
    full_count: Vec<u32>,
}

impl Stitcher {
    pub fn new(width: usize, height: usize) -> Self {
        let n = width * height;
        Stitcher {
            width,
            height,
            centre_sum: vec![0.0; n],
            centre_count: vec![0; n],
            full_sum: vec![0.0; n],
            full_count: vec![0; n],
        }
    }

    /// Adds one window's row-major `size × size` prediction. Non-finite
    /// values are skipped.
    pub fn add(&mut self, window: &TileWindow, prediction: &[f64]) -> Result<()> {
        let s = window.size;
        if prediction.len() != s * s {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values for a {s}x{s} tile", s * s),
                found: format!("{}", prediction.len()),
            });
        }
        if window.row0 + s > self.height || window.col0 + s > self.width {
            return Err(Error::dim("window lies outside the stitch target"));
        }
        let ((r_lo, r_hi), (c_lo, c_hi)) = window.retained(self.width, self.height);
        for tr in 0..s {
            let r = window.row0 + tr;
            let keep_row = r >= r_lo && r < r_hi;
            let base = r * self.width + window.col0;
            let pred_row = &prediction[tr * s..(tr + 1) * s];
            for (tc, &v) in pred_row.iter().enumerate() {
                if !v.is_finite() {
                    continue;
                }
                let i = base + tc;
                self.full_sum[i] += v;
                self.full_count[i] += 1;
                let c = window.col0 + tc;
                if keep_row && c >= c_lo && c < c_hi {
                    self.centre_sum[i] += v;
                    self.centre_count[i] += 1;
                }
            }
        }
        Ok(())
    }

    /// Number of pixels covered by at least one retained crop.
    pub fn centre_covered(&self) -> usize {
        self.centre_count.iter().filter(|c| **c > 0).count()
    }

    pub fn finish(self, geotransform: GeoTransform) -> Result<RasterGrid<f64>> {
        let n = self.width * self.height;
        let mut data = vec![0.0; n];
        let mut mask = vec![false; n];
        for i in 0..n {
            if self.centre_count[i] > 0 {
                data[i] = self.centre_sum[i] / self.centre_count[i] as f64;
            } else if self.full_count[i] > 0 {
                data[i] = self.full_sum[i] / self.full_count[i] as f64;
            } else {
                mask[i] = true;
            }
        }
        RasterGrid::from_parts(self.width, self.height, 1, geotransform, data, mask)
    }
}

/// Stitches one prediction per window of `plan`.
pub fn stitch<P: AsRef<[f64]>>(predictions: &[P], plan: &TilePlan, geotransform: GeoTransform) -> Result<RasterGrid<f64>> {
    if predictions.len() != plan.windows.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} window predictions", plan.windows.len()),
            found: format!("{}", predictions.len()),
        });
    }
    let mut st = Stitcher::new(plan.width, plan.height);
    for (w, p) in plan.windows.iter().zip(predictions) {
        st.add(w, p.as_ref())?;
    }
    st.finish(geotransform)
}

/// Band `band` of `grid` cut to `window`, as row-major `f64` (masked → NaN).
pub fn extract_tile<T: Sample>(grid: &RasterGrid<T>, band: usize, window: &TileWindow) -> Vec<f64> {
    let s = window.size;
    let mut out = Vec::with_capacity(s * s);
    for r in window.row0..window.row0 + s {
        for c in window.col0..window.col0 + s {
            out.push(grid.value(band, r, c).unwrap_or(f64::NAN));
        }
    }
    out
}
