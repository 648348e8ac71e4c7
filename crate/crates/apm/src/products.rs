//! Surface products for external plotting: difference rasters against a
//! baseline and binned probability densities.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use apm_core::metrics::{density_curve, DensityCurve, DENSITY_BINS};
use apm_core::{RasterGrid, Sample};

use crate::error::{AppError, Result};
use crate::io::raster::write_raster;

/// `model − baseline`, masked where either input is masked.
pub fn difference_raster<T: Sample, U: Sample>(model: &RasterGrid<T>, baseline: &RasterGrid<U>) -> Result<RasterGrid<f64>> {
    model.check_aligned(baseline)?;
    let (a, b) = (model.band(0), baseline.band(0));
    let values: Vec<Option<f64>> = (0..model.pixel_count())
        .map(|i| (!model.is_masked(i) && !baseline.is_masked(i)).then(|| a[i].to_f64() - b[i].to_f64()))
        .collect();
    let mut out = RasterGrid::from_options(model.width(), model.height(), *model.geotransform(), &values)?;
    out.set_band_names(vec!["difference".to_string()])?;
    out.insert_metadata("difference", "model - baseline");
    Ok(out)
}

pub fn surface_density<T: Sample>(surface: &RasterGrid<T>, bins: usize) -> Result<DensityCurve> {
    let scores: Vec<f64> = (0..surface.pixel_count())
        .filter(|i| !surface.is_masked(*i))
        .map(|i| surface.band(0)[i].to_f64())
        .collect();
    Ok(density_curve(&scores, bins)?)
}

/// CSV with columns `center,count,histogram_density,kde_density`.
pub fn density_csv(d: &DensityCurve) -> String {
    let mut s = String::from("center,count,histogram_density,kde_density\n");
    for k in 0..d.centers.len() {
        writeln!(s, "{},{},{},{}", d.centers[k], d.counts[k], d.histogram[k], d.kde[k]).unwrap();
    }
    s
}

#[derive(Debug, Clone)]
pub struct SurfaceProducts {
    pub difference: RasterGrid<f64>,
    pub density: DensityCurve,
}

pub fn surface_products<T: Sample, U: Sample>(model: &RasterGrid<T>, baseline: &RasterGrid<U>) -> Result<SurfaceProducts> {
    Ok(SurfaceProducts {
        difference: difference_raster(model, baseline)?,
        density: surface_density(model, DENSITY_BINS)?,
    })
}

/// Writes `<stem>_difference.apmr` and `<stem>_density.csv` into `dir`.
pub fn emit_surface_products<T: Sample, U: Sample>(
    dir: &Path,
    stem: &str,
    model: &RasterGrid<T>,
    baseline: &RasterGrid<U>,
) -> Result<Vec<PathBuf>> {
    let products = surface_products(model, baseline)?;
    let diff = dir.join(format!("{stem}_difference.apmr"));
    write_raster(&diff, &products.difference)?;
    let csv = dir.join(format!("{stem}_density.csv"));
    std::fs::write(&csv, density_csv(&products.density)).map_err(|e| AppError::io(&csv, e))?;
    Ok(vec![diff, csv])
}
