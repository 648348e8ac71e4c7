//! Multi-band raster container shared by every module.
//!
//! Data is stored band-major, row-major. The nodata mask is per pixel and
//! applies to all bands; masked cells always hold the nodata fill value so
//! that two grids with equal content compare equal.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_NODATA: f64 = -9999.0;

/// Element type of a raster.
pub trait Sample: Copy + Default + PartialEq + Debug + Send + Sync + 'static {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Sample for f32 {
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Sample for f64 {
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
}

/// Affine pixel-to-map transform without rotation terms.
///
/// Pixel `(row, col)` covers `x ∈ [origin_x + col·psx, origin_x + (col+1)·psx)`
/// and likewise for `y` with `pixel_size_y`, which is negative for north-up
/// rasters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size_x: f64,
    pub pixel_size_y: f64,
}

impl GeoTransform {
    pub fn new(origin_x: f64, origin_y: f64, pixel_size_x: f64, pixel_size_y: f64) -> Self {
        GeoTransform {
            origin_x,
            origin_y,
            pixel_size_x,
            pixel_size_y,
        }
    }

    /// Unit pixels with `y` growing alongside the row index; pixel `(r, c)`
    /// is centred on `(c + 0.5, r + 0.5)`.
    pub fn unit() -> Self {
        GeoTransform::new(0.0, 0.0, 1.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pixel_size_x > 0.0 && self.pixel_size_x.is_finite()) {
            return Err(Error::data(format!(
                "pixel_size_x must be positive, got {}",
                self.pixel_size_x
            )));
        }
        if self.pixel_size_y == 0.0 || !self.pixel_size_y.is_finite() {
            return Err(Error::data("pixel_size_y must be non-zero"));
        }
        if !self.origin_x.is_finite() || !self.origin_y.is_finite() {
            return Err(Error::data("origin must be finite"));
        }
        Ok(())
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        self.pixel_size_x
    }

    #[inline]
    pub fn dy(&self) -> f64 {
        self.pixel_size_y.abs()
    }

    #[inline]
    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.pixel_size_x,
            self.origin_y + (row as f64 + 0.5) * self.pixel_size_y,
        )
    }

    /// Fractional `(row, col)` of a map coordinate.
    #[inline]
    pub fn to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (y - self.origin_y) / self.pixel_size_y,
            (x - self.origin_x) / self.pixel_size_x,
        )
    }

    /// Pixel containing a map coordinate, if inside a `width × height` grid.
    pub fn pixel_of(&self, x: f64, y: f64, width: usize, height: usize) -> Option<(usize, usize)> {
        let (r, c) = self.to_pixel(x, y);
        let (r, c) = (crate::math::floor(r), crate::math::floor(c));
        if r < 0.0 || c < 0.0 || r >= height as f64 || c >= width as f64 {
            return None;
        }
        Some((r as usize, c as usize))
    }

    /// Transform of a sub-window starting at `(row0, col0)`.
    pub fn offset(&self, row0: usize, col0: usize) -> GeoTransform {
        GeoTransform::new(
            self.origin_x + col0 as f64 * self.pixel_size_x,
            self.origin_y + row0 as f64 * self.pixel_size_y,
            self.pixel_size_x,
            self.pixel_size_y,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid<T: Sample = f32> {
    width: usize,
    height: usize,
    bands: usize,
    geotransform: GeoTransform,
    band_names: Vec<String>,
    nodata: f64,
    mask: Vec<bool>,
    data: Vec<T>,
    metadata: BTreeMap<String, String>,
}

impl<T: Sample> RasterGrid<T> {
    /// All-valid grid with every cell set to `value`.
    pub fn filled(width: usize, height: usize, bands: usize, geotransform: GeoTransform, value: T) -> Result<Self> {
        Self::check_dims(width, height, bands)?;
        geotransform.validate()?;
        Ok(RasterGrid {
            width,
            height,
            bands,
            geotransform,
            band_names: default_band_names(bands),
            nodata: DEFAULT_NODATA,
            mask: vec![false; width * height],
            data: vec![value; width * height * bands],
            metadata: BTreeMap::new(),
        })
    }

    /// Grid from band-major data with no masked pixels.
    pub fn from_data(width: usize, height: usize, bands: usize, geotransform: GeoTransform, data: Vec<T>) -> Result<Self> {
        Self::from_parts(width, height, bands, geotransform, data, vec![false; width * height])
    }

    /// Grid from band-major data and a per-pixel mask (`true` = nodata).
    ///
    /// Masked cells are overwritten with the nodata fill value; unmasked
    /// cells must be finite.
    pub fn from_parts(
        width: usize,
        height: usize,
        bands: usize,
        geotransform: GeoTransform,
        mut data: Vec<T>,
        mask: Vec<bool>,
    ) -> Result<Self> {
        Self::check_dims(width, height, bands)?;
        geotransform.validate()?;
        let n = width * height;
        if data.len() != n * bands {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values ({width}x{height}x{bands})", n * bands),
                found: format!("{} values", data.len()),
            });
        }
        if mask.len() != n {
            return Err(Error::ShapeMismatch {
                expected: format!("{n} mask entries"),
                found: format!("{} mask entries", mask.len()),
            });
        }
        let fill = T::from_f64(DEFAULT_NODATA);
        for b in 0..bands {
            let band = &mut data[b * n..(b + 1) * n];
            for (i, v) in band.iter_mut().enumerate() {
                if mask[i] {
                    *v = fill;
                } else if !v.to_f64().is_finite() {
                    return Err(Error::NonFinite(format!(
                        "band {b}, pixel ({}, {})",
                        i / width,
                        i % width
                    )));
                }
            }
        }
        Ok(RasterGrid {
            width,
            height,
            bands,
            geotransform,
            band_names: default_band_names(bands),
            nodata: DEFAULT_NODATA,
            mask,
            data,
            metadata: BTreeMap::new(),
        })
    }

    /// Grid whose non-finite cells become masked instead of raising an error.
    pub fn from_data_masking_nonfinite(
        width: usize,
        height: usize,
        bands: usize,
        geotransform: GeoTransform,
        data: Vec<T>,
    ) -> Result<Self> {
        let n = width * height;
        let mut mask = vec![false; n];
        if data.len() == n * bands {
            for (i, v) in data.iter().enumerate() {
                if !v.to_f64().is_finite() {
                    mask[i % n] = true;
                }
            }
        }
        Self::from_parts(width, height, bands, geotransform, data, mask)
    }

    fn check_dims(width: usize, height: usize, bands: usize) -> Result<()> {
        if width == 0 || height == 0 || bands == 0 {
            return Err(Error::dim(format!(
                "raster dimensions must be positive, got {width}x{height}x{bands}"
            )));
        }
        Ok(())
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
    pub fn bands(&self) -> usize {
        self.bands
    }

    /// Pixel count per band.
    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn geotransform(&self) -> &GeoTransform {
        &self.geotransform
    }

    pub fn set_geotransform(&mut self, gt: GeoTransform) -> Result<()> {
        gt.validate()?;
        self.geotransform = gt;
        Ok(())
    }

    pub fn nodata(&self) -> f64 {
        self.nodata
    }

    /// Changes the fill value written into masked cells.
    pub fn set_nodata(&mut self, nodata: f64) {
        self.nodata = nodata;
        let fill = T::from_f64(nodata);
        let n = self.pixel_count();
        for b in 0..self.bands {
            for i in 0..n {
                if self.mask[i] {
                    self.data[b * n + i] = fill;
                }
            }
        }
    }

    pub fn band_names(&self) -> &[String] {
        &self.band_names
    }

    pub fn set_band_names(&mut self, names: Vec<String>) -> Result<()> {
        if names.len() != self.bands {
            return Err(Error::ShapeMismatch {
                expected: format!("{} band names", self.bands),
                found: format!("{}", names.len()),
            });
        }
        self.band_names = names;
        Ok(())
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn insert_metadata(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }

    pub fn set_metadata(&mut self, metadata: BTreeMap<String, String>) {
        self.metadata = metadata;
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn is_masked(&self, idx: usize) -> bool {
        self.mask[idx]
    }

    pub fn set_masked(&mut self, idx: usize, masked: bool) {
        self.mask[idx] = masked;
        if masked {
            let n = self.pixel_count();
            let fill = T::from_f64(self.nodata);
            for b in 0..self.bands {
                self.data[b * n + idx] = fill;
            }
        }
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|m| !**m).count()
    }

    pub fn band(&self, b: usize) -> &[T] {
        let n = self.pixel_count();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn band_mut(&mut self, b: usize) -> &mut [T] {
        let n = self.pixel_count();
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn band_f64(&self, b: usize) -> Vec<f64> {
        self.band(b).iter().map(|v| v.to_f64()).collect()
    }

    #[inline]
    pub fn get(&self, b: usize, row: usize, col: usize) -> T {
        self.data[b * self.pixel_count() + row * self.width + col]
    }

    /// Value at `(row, col)` or `None` when masked.
    #[inline]
    pub fn value(&self, b: usize, row: usize, col: usize) -> Option<f64> {
        let idx = row * self.width + col;
        if self.mask[idx] {
            None
        } else {
            Some(self.data[b * self.pixel_count() + idx].to_f64())
        }
    }

    /// Writes a valid value; the pixel becomes unmasked in every band it was
    /// masked in only if it is a single-band grid.
    pub fn set(&mut self, b: usize, row: usize, col: usize, v: T) {
        let n = self.pixel_count();
        let idx = row * self.width + col;
        self.data[b * n + idx] = v;
        if self.bands == 1 {
            self.mask[idx] = false;
        }
    }

    pub fn same_shape<U: Sample>(&self, other: &RasterGrid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn check_same_shape<U: Sample>(&self, other: &RasterGrid<U>) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                expected: format!("{}x{}", self.width, self.height),
                found: format!("{}x{}", other.width, other.height),
            })
        }
    }

    /// Same shape and same geotransform.
    pub fn check_aligned<U: Sample>(&self, other: &RasterGrid<U>) -> Result<()> {
        self.check_same_shape(other)?;
        if self.geotransform != other.geotransform {
            return Err(Error::ShapeMismatch {
                expected: format!("geotransform {:?}", self.geotransform),
                found: format!("{:?}", other.geotransform),
            });
        }
        Ok(())
    }

    pub fn cast<U: Sample>(&self) -> RasterGrid<U> {
        RasterGrid {
            width: self.width,
            height: self.height,
            bands: self.bands,
            geotransform: self.geotransform,
            band_names: self.band_names.clone(),
            nodata: self.nodata,
            mask: self.mask.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
            metadata: self.metadata.clone(),
        }
    }

    /// Copy of the sub-window `[row0, row0+h) × [col0, col0+w)`.
    pub fn window(&self, row0: usize, col0: usize, h: usize, w: usize) -> Result<RasterGrid<T>> {
        if h == 0 || w == 0 || row0 + h > self.height || col0 + w > self.width {
            return Err(Error::dim(format!(
                "window {h}x{w} at ({row0}, {col0}) exceeds {}x{} grid",
                self.height, self.width
            )));
        }
        let n = self.pixel_count();
        let mut data = Vec::with_capacity(h * w * self.bands);
        for b in 0..self.bands {
            for r in row0..row0 + h {
                let start = b * n + r * self.width + col0;
                data.extend_from_slice(&self.data[start..start + w]);
            }
        }
        let mut mask = Vec::with_capacity(h * w);
        for r in row0..row0 + h {
            let start = r * self.width + col0;
            mask.extend_from_slice(&self.mask[start..start + w]);
        }
        Ok(RasterGrid {
            width: w,
            height: h,
            bands: self.bands,
            geotransform: self.geotransform.offset(row0, col0),
            band_names: self.band_names.clone(),
            nodata: self.nodata,
            mask,
            data,
            metadata: self.metadata.clone(),
        })
    }

    /// New grid with the listed bands, in the listed order.
    pub fn select_bands(&self, bands: &[usize]) -> Result<RasterGrid<T>> {
        if bands.is_empty() {
            return Err(Error::config("band selection is empty"));
        }
        let mut data = Vec::with_capacity(bands.len() * self.pixel_count());
        let mut names = Vec::with_capacity(bands.len());
        for &b in bands {
            if b >= self.bands {
                return Err(Error::config(format!(
                    "band {b} out of range for {}-band raster",
                    self.bands
                )));
            }
            data.extend_from_slice(self.band(b));
            names.push(self.band_names[b].clone());
        }
        Ok(RasterGrid {
            width: self.width,
            height: self.height,
            bands: bands.len(),
            geotransform: self.geotransform,
            band_names: names,
            nodata: self.nodata,
            mask: self.mask.clone(),
            data,
            metadata: self.metadata.clone(),
        })
    }

    /// Concatenates bands of aligned grids; the result masks any pixel
    /// masked in an input.
    pub fn stack(grids: &[&RasterGrid<T>]) -> Result<RasterGrid<T>> {
        let first = grids.first().ok_or_else(|| Error::empty("no grids to stack"))?;
        let n = first.pixel_count();
        let mut mask = first.mask.clone();
        let mut names = Vec::new();
        let mut bands = 0;
        for g in grids {
            first.check_same_shape(*g)?;
            for (m, gm) in mask.iter_mut().zip(&g.mask) {
                *m |= *gm;
            }
            names.extend(g.band_names.iter().cloned());
            bands += g.bands;
        }
        let mut data = Vec::with_capacity(n * bands);
        for g in grids {
            data.extend_from_slice(&g.data);
        }
        let mut out = RasterGrid::from_parts(first.width, first.height, bands, first.geotransform, data, mask)?;
        out.band_names = names;
        Ok(out)
    }

    /// Map extent as `(min_x, min_y, max_x, max_y)`.
    pub fn extent(&self) -> (f64, f64, f64, f64) {
        let gt = &self.geotransform;
        let x0 = gt.origin_x;
        let x1 = gt.origin_x + self.width as f64 * gt.pixel_size_x;
        let y0 = gt.origin_y;
        let y1 = gt.origin_y + self.height as f64 * gt.pixel_size_y;
        (x0.min(x1), y0.min(y1), x0.max(x1), y0.max(y1))
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        self.geotransform.pixel_of(x, y, self.width, self.height).is_some()
    }
}

impl RasterGrid<f64> {
    /// Single-band grid from optional values; `None` becomes masked.
    pub fn from_options(width: usize, height: usize, geotransform: GeoTransform, values: &[Option<f64>]) -> Result<Self> {
        let data = values.iter().map(|v| v.unwrap_or(DEFAULT_NODATA)).collect();
        let mask = values.iter().map(|v| v.is_none()).collect();
        Self::from_parts(width, height, 1, geotransform, data, mask)
    }
}

fn default_band_names(bands: usize) -> Vec<String> {
    (0..bands).map(|b| format!("band_{b}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length() {
        let err = RasterGrid::<f32>::from_data(3, 3, 1, GeoTransform::unit(), vec![0.0; 8]).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn rejects_nonfinite_unmasked() {
        let mut data = vec![0.0f32; 4];
        data[2] = f32::NAN;
        assert!(RasterGrid::from_data(2, 2, 1, GeoTransform::unit(), data.clone()).is_err());
        let g = RasterGrid::from_data_masking_nonfinite(2, 2, 1, GeoTransform::unit(), data).unwrap();
        assert!(g.is_masked(2));
        assert_eq!(g.get(0, 1, 0), DEFAULT_NODATA as f32);
    }

    #[test]
    fn window_offsets_geotransform() {
        let data: Vec<f32> = (0..20).map(|v| v as f32).collect();
        let g = RasterGrid::from_data(5, 4, 1, GeoTransform::new(100.0, 200.0, 10.0, -10.0), data).unwrap();
        let w = g.window(1, 2, 2, 3).unwrap();
        assert_eq!(w.band(0), &[7.0, 8.0, 9.0, 12.0, 13.0, 14.0]);
        assert_eq!(w.geotransform().origin_x, 120.0);
        assert_eq!(w.geotransform().origin_y, 190.0);
        assert!(g.window(3, 0, 2, 1).is_err());
    }

    #[test]
    fn pixel_lookup_handles_north_up() {
        let gt = GeoTransform::new(0.0, 100.0, 10.0, -10.0);
        assert_eq!(gt.pixel_of(15.0, 95.0, 10, 10), Some((0, 1)));
        assert_eq!(gt.pixel_of(15.0, 101.0, 10, 10), None);
        assert_eq!(gt.pixel_center(0, 1), (15.0, 95.0));
    }

    #[test]
    fn stack_unions_masks() {
        let gt = GeoTransform::unit();
        let a = RasterGrid::from_parts(2, 1, 1, gt, vec![1.0f32, 2.0], vec![true, false]).unwrap();
        let b = RasterGrid::from_parts(2, 1, 1, gt, vec![3.0f32, 4.0], vec![false, false]).unwrap();
        let s = RasterGrid::stack(&[&a, &b]).unwrap();
        assert_eq!(s.bands(), 2);
        assert_eq!(s.mask(), &[true, false]);
        assert_eq!(s.value(1, 0, 1), Some(4.0));
    }
}
