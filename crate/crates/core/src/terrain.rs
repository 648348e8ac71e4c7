//! DEM-derived feature channels: slope, aspect and hydrological proximity.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::labels::distance_map_from_mask;
use crate::math;
use crate::raster::{RasterGrid, Sample};

/// Aspect written for pixels without a defined downslope direction.
pub const FLAT_ASPECT: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerrainConfig {
    /// Fraction of valid cells that must drain through a cell for it to count as a stream.
    pub stream_threshold_fraction: f64,
}

impl Default for TerrainConfig {
    fn default() -> Self {
        TerrainConfig {
            stream_threshold_fraction: 0.01,
        }
    }
}

const NEIGHBOURS: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

fn check_dem<T: Sample>(dem: &RasterGrid<T>) -> Result<()> {
    if dem.width() < 3 || dem.height() < 3 {
        return Err(Error::dim(alloc::format!(
            "terrain derivatives need at least 3x3 pixels, got {}x{}",
            dem.width(),
            dem.height()
        )));
    }
    if dem.valid_count() == 0 {
        return Err(Error::empty("DEM is fully masked"));
    }
    Ok(())
}

/// Horn 3×3 gradient in map units, as `(dz/dx east, dz/dy north)`.
///
/// Neighbours outside the grid or masked take the centre value.
fn horn_gradient<T: Sample>(dem: &RasterGrid<T>, row: usize, col: usize) -> (f64, f64) {
    let (w, h) = (dem.width() as isize, dem.height() as isize);
    let centre = dem.get(0, row, col).to_f64();
    let z = |dr: isize, dc: isize| -> f64 {
        let (r, c) = (row as isize + dr, col as isize + dc);
        if r < 0 || c < 0 || r >= h || c >= w {
            return centre;
        }
        dem.value(0, r as usize, c as usize).unwrap_or(centre)
    };
    let (a, b, c) = (z(-1, -1), z(-1, 0), z(-1, 1));
    let (d, f) = (z(0, -1), z(0, 1));
    let (g, hh, i) = (z(1, -1), z(1, 0), z(1, 1));
    let gt = dem.geotransform();
    let dz_dcol = ((c + 2.0 * f + i) - (a + 2.0 * d + g)) / 8.0;
    let dz_drow = ((g + 2.0 * hh + i) - (a + 2.0 * b + c)) / 8.0;
    // pixel_size_y carries the sign of the row → northing relation
    (dz_dcol / gt.pixel_size_x, dz_drow / gt.pixel_size_y)
}

/// Slope in degrees and downslope aspect in degrees clockwise from north.
pub fn slope_aspect<T: Sample>(dem: &RasterGrid<T>) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dem(dem)?;
    let n = dem.pixel_count();
    let mut slope = vec![0.0; n];
    let mut aspect = vec![FLAT_ASPECT; n];
    for row in 0..dem.height() {
        for col in 0..dem.width() {
            let i = dem.index(row, col);
            if dem.is_masked(i) {
                continue;
            }
            let (gx, gy) = horn_gradient(dem, row, col);
            let mag = math::hypot(gx, gy);
            slope[i] = math::atan(mag).to_degrees();
            if mag > 1e-12 {
                let mut az = math::atan2(-gx, -gy).to_degrees();
                if az < 0.0 {
                    az += 360.0;
                }
                if az >= 360.0 {
                    az -= 360.0;
                }
                aspect[i] = az;
            }
        }
    }
    Ok((slope, aspect))
}

/// D8 receiver of every cell: the neighbour with the steepest positive drop,
/// or `None` for pits, flats and masked cells.
pub fn d8_receivers<T: Sample>(dem: &RasterGrid<T>) -> Vec<Option<usize>> {
    let (w, h) = (dem.width(), dem.height());
    let gt = dem.geotransform();
    let (dx, dy) = (gt.dx(), gt.dy());
    let diag = math::hypot(dx, dy);
    let mut out = vec![None; w * h];
    for row in 0..h {
        for col in 0..w {
            let Some(z) = dem.value(0, row, col) else { continue };
            let mut best = 0.0;
            let mut recv = None;
            for (dr, dc) in NEIGHBOURS {
                let (r, c) = (row as isize + dr, col as isize + dc);
                if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
                    continue;
                }
                let (r, c) = (r as usize, c as usize);
                let Some(zn) = dem.value(0, r, c) else { continue };
                let dist = match (dr != 0, dc != 0) {
                    (true, true) => diag,
                    (true, false) => dy,
                    _ => dx,
                };
                let s = (z - zn) / dist;
                if s > best {
                    best = s;
                    recv = Some(r * w + c);
                }
            }
            out[row * w + col] = recv;
        }
    }
    out
}

/// Number of valid cells (including itself) draining through each cell.
/// Masked cells get 0.
pub fn flow_accumulation<T: Sample>(dem: &RasterGrid<T>) -> Vec<f64> {
    let receivers = d8_receivers(dem);
    let n = dem.pixel_count();
    let band = dem.band(0);
    let mut order: Vec<usize> = (0..n).filter(|i| !dem.is_masked(*i)).collect();
    // receivers are strictly lower, so high-to-low order visits donors first
    order.sort_by(|a, b| band[*b].to_f64().total_cmp(&band[*a].to_f64()).then(a.cmp(b)));
    let mut acc = vec![0.0; n];
    for &i in &order {
        acc[i] = 1.0;
    }
    for &i in &order {
        if let Some(r) = receivers[i] {
            acc[r] += acc[i];
        }
    }
    acc
}

/// Stream cells: accumulation at or above the configured fraction of valid
/// cells. When no cell reaches it, the cells of maximal accumulation are used.
pub fn stream_mask<T: Sample>(dem: &RasterGrid<T>, cfg: &TerrainConfig) -> Vec<bool> {
    let acc = flow_accumulation(dem);
    let threshold = cfg.stream_threshold_fraction * dem.valid_count() as f64;
    let mut mask: Vec<bool> = acc.iter().map(|a| *a > 0.0 && *a >= threshold).collect();
    if !mask.iter().any(|m| *m) {
        let max = acc.iter().copied().fold(0.0, f64::max);
        mask = acc.iter().map(|a| *a > 0.0 && *a == max).collect();
    }
    mask
}

/// Three-band terrain stack: slope (deg), aspect (deg, −1 on flats) and
/// Euclidean distance to the D8 stream network in map units.
pub fn derive_terrain<T: Sample>(dem: &RasterGrid<T>) -> Result<RasterGrid<f64>> {
    derive_terrain_with(dem, &TerrainConfig::default())
}

pub fn derive_terrain_with<T: Sample>(dem: &RasterGrid<T>, cfg: &TerrainConfig) -> Result<RasterGrid<f64>> {
    if !(cfg.stream_threshold_fraction > 0.0 && cfg.stream_threshold_fraction <= 1.0) {
        return Err(Error::config("stream threshold fraction must be in (0, 1]"));
    }
    let (slope, aspect) = slope_aspect(dem)?;
    let streams = stream_mask(dem, cfg);
    let hydro = distance_map_from_mask(&streams, dem)?;
    let mut data = slope;
    data.extend_from_slice(&aspect);
    data.extend_from_slice(hydro.band(0));
    let mut out = RasterGrid::from_parts(
        dem.width(),
        dem.height(),
        3,
        *dem.geotransform(),
        data,
        dem.mask().to_vec(),
    )?;
    out.set_band_names(vec![
        "slope".to_string(),
        "aspect".to_string(),
        "hydro_proximity".to_string(),
    ])?;
    out.insert_metadata("aspect_flat_sentinel", "-1");
    Ok(out)
}
