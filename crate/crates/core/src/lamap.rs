//! Locally-adaptive model of archaeological potential.
//!
//! Each known site contributes an empirical CDF per landscape variable,
//! sampled from its catchment. A pixel's similarity to a site is the mean of
//! two-sided ECDF similarities `1 − |2F(v) − 1|` across variables, and the
//! potential is the convex combination of site similarities under
//! exponentially decaying distance weights.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{for_each_disk_pixel, SiteRecord};
use crate::math;
use crate::raster::{RasterGrid, Sample};

/// Sorted-sample empirical CDF with midrank ties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ecdf {
    samples: Vec<f64>,
}

impl Ecdf {
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::empty("ECDF needs at least one sample"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ECDF sample".to_string()));
        }
        samples.sort_by(f64::total_cmp);
        Ok(Ecdf { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// `(#{s < v} + ½·#{s = v}) / n`.
    pub fn cdf(&self, v: f64) -> f64 {
        let below = self.samples.partition_point(|s| *s < v);
        let upto = self.samples.partition_point(|s| *s <= v);
        (below as f64 + 0.5 * (upto - below) as f64) / self.samples.len() as f64
    }

    pub fn median(&self) -> f64 {
        let n = self.samples.len();
        if n % 2 == 1 {
            self.samples[n / 2]
        } else {
            0.5 * (self.samples[n / 2 - 1] + self.samples[n / 2])
        }
    }
}

/// Two-sided similarity: 1 at the sample median, 0 beyond the sample range.
#[inline]
pub fn similarity(ecdf: &Ecdf, v: f64) -> f64 {
    1.0 - (2.0 * ecdf.cdf(v) - 1.0).abs()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LamapConfig {
    /// Radius of the site catchment, map units.
    pub catchment_radius: f64,
    /// Distance decay scale of the site weights, map units.
    pub bandwidth: f64,
    /// Stack bands to use; empty means all bands.
    pub bands: Vec<usize>,
}

impl Default for LamapConfig {
    fn default() -> Self {
        LamapConfig {
            catchment_radius: 295.0,
            bandwidth: 1000.0,
            bands: Vec::new(),
        }
    }
}

impl LamapConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.catchment_radius > 0.0 && self.catchment_radius.is_finite()) {
            return Err(Error::config("catchment radius must be positive"));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::config("kernel bandwidth must be positive"));
        }
        Ok(())
    }

    pub fn selected_bands(&self, band_count: usize) -> Result<Vec<usize>> {
        if self.bands.is_empty() {
            return Ok((0..band_count).collect());
        }
        if let Some(b) = self.bands.iter().find(|b| **b >= band_count) {
            return Err(Error::config(format!("band {b} out of range for {band_count}-band stack")));
        }
        Ok(self.bands.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteModel {
    pub site_id: String,
    pub x: f64,
    pub y: f64,
    /// One ECDF per selected band, in selection order.
    pub ecdfs: Vec<Ecdf>,
    pub catchment_pixels: usize,
}

pub fn build_site_model<T: Sample>(stack: &RasterGrid<T>, site: &SiteRecord, cfg: &LamapConfig) -> Result<SiteModel> {
    cfg.validate()?;
    let bands = cfg.selected_bands(stack.bands())?;
    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); bands.len()];
    let mut count = 0;
    for_each_disk_pixel(stack, site.x, site.y, cfg.catchment_radius, |r, c| {
        if stack.is_masked(stack.index(r, c)) {
            return;
        }
        count += 1;
        for (k, &b) in bands.iter().enumerate() {
            samples[k].push(stack.get(b, r, c).to_f64());
        }
    });
    if count == 0 {
        return Err(Error::EmptyCatchment {
            site_id: site.site_id.clone(),
        });
    }
    let ecdfs = samples.into_iter().map(Ecdf::new).collect::<Result<Vec<_>>>()?;
    Ok(SiteModel {
        site_id: site.site_id.clone(),
        x: site.x,
        y: site.y,
        ecdfs,
        catchment_pixels: count,
    })
}

/// Site models sorted into a canonical order so that the weighted sums do
/// not depend on the order sites were supplied in.
#[derive(Debug, Clone)]
pub struct LamapEvaluator {
    models: Vec<SiteModel>,
    bands: Vec<usize>,
    bandwidth: f64,
}

impl LamapEvaluator {
    pub fn new(models: &[SiteModel], band_count: usize, cfg: &LamapConfig) -> Result<Self> {
        cfg.validate()?;
        if models.is_empty() {
            return Err(Error::empty("LAMAP needs at least one site model"));
        }
        let bands = cfg.selected_bands(band_count)?;
        for m in models {
            if m.ecdfs.len() != bands.len() {
                return Err(Error::ShapeMismatch {
                    expected: format!("{} ECDFs per site", bands.len()),
                    found: format!("{} for site `{}`", m.ecdfs.len(), m.site_id),
                });
            }
        }
        let mut models = models.to_vec();
        models.sort_by(|a, b| {
            a.site_id
                .cmp(&b.site_id)
                .then(a.x.total_cmp(&b.x))
                .then(a.y.total_cmp(&b.y))
        });
        Ok(LamapEvaluator {
            models,
            bands,
            bandwidth: cfg.bandwidth,
        })
    }

    /// Site similarity `u_s` at a pixel whose selected band values are `values`.
    fn site_similarity(model: &SiteModel, values: &[f64]) -> f64 {
        let sum: f64 = model.ecdfs.iter().zip(values).map(|(e, v)| similarity(e, *v)).sum();
        sum / values.len() as f64
    }

    /// Potential at one pixel, `None` when masked.
    pub fn pixel<T: Sample>(&self, stack: &RasterGrid<T>, row: usize, col: usize, scratch: &mut Vec<f64>) -> Option<f64> {
        if stack.is_masked(stack.index(row, col)) {
            return None;
        }
        scratch.clear();
        scratch.extend(self.bands.iter().map(|b| stack.get(*b, row, col).to_f64()));
        let (px, py) = stack.geotransform().pixel_center(row, col);
        let dists: Vec<f64> = self.models.iter().map(|m| math::hypot(px - m.x, py - m.y)).collect();
        // shifting by the nearest distance cancels in the ratio and avoids underflow
        let d_min = dists.iter().copied().fold(f64::INFINITY, f64::min);
        let mut num = 0.0;
        let mut den = 0.0;
        for (m, d) in self.models.iter().zip(&dists) {
            let w = math::exp(-(d - d_min) / self.bandwidth);
            num += w * Self::site_similarity(m, scratch);
            den += w;
        }
        Some((num / den).clamp(0.0, 1.0))
    }

    /// Fills `out` (length = width) with row `row` of the surface.
    pub fn row<T: Sample>(&self, stack: &RasterGrid<T>, row: usize, out: &mut [Option<f64>]) {
        let mut scratch = Vec::with_capacity(self.bands.len());
        for (col, o) in out.iter_mut().enumerate() {
            *o = self.pixel(stack, row, col, &mut scratch);
        }
    }
}

/// Metadata recorded on every surface so readers know which functional form produced it.
pub fn surface_metadata(cfg: &LamapConfig) -> Vec<(String, String)> {
    vec![
        ("lamap.similarity".into(), "1 - |2F(v) - 1|".into()),
        ("lamap.ecdf".into(), "midrank".into()),
        ("lamap.band_combination".into(), "arithmetic_mean".into()),
        ("lamap.weighting".into(), "normalized exp(-d / bandwidth)".into()),
        ("lamap.catchment_radius".into(), format!("{}", cfg.catchment_radius)),
        ("lamap.bandwidth".into(), format!("{}", cfg.bandwidth)),
    ]
}

/// Potential surface in `[0, 1]`; masked stack pixels stay masked.
pub fn lamap_surface<T: Sample>(stack: &RasterGrid<T>, models: &[SiteModel], cfg: &LamapConfig) -> Result<RasterGrid<f64>> {
    if stack.valid_count() == 0 {
        return Err(Error::empty("stack is fully masked"));
    }
    let eval = LamapEvaluator::new(models, stack.bands(), cfg)?;
    let w = stack.width();
    let mut values = vec![None; stack.pixel_count()];
    for (row, out) in values.chunks_mut(w).enumerate() {
        eval.row(stack, row, out);
    }
    assemble_surface(stack, &values, cfg)
}

/// Builds the output grid from per-pixel values computed by any driver.
pub fn assemble_surface<T: Sample>(stack: &RasterGrid<T>, values: &[Option<f64>], cfg: &LamapConfig) -> Result<RasterGrid<f64>> {
    let mut out = RasterGrid::from_options(stack.width(), stack.height(), *stack.geotransform(), values)?;
    out.set_band_names(vec!["lamap_potential".to_string()])?;
    for (k, v) in surface_metadata(cfg) {
        out.insert_metadata(k, v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::{Period, Polarity};
    use crate::raster::GeoTransform;
    use proptest::prelude::*;

    fn site(id: &str, x: f64, y: f64) -> SiteRecord {
        SiteRecord::new(id, x, y, Period::RomanImperial, Polarity::Positive)
    }

    fn count_oracle(samples: &[f64], v: f64) -> f64 {
        let lt = samples.iter().filter(|s| **s < v).count() as f64;
        let eq = samples.iter().filter(|s| **s == v).count() as f64;
        (lt + 0.5 * eq) / samples.len() as f64
    }

    #[test]
    fn midrank_cdf_matches_count_oracle() {
        let e = Ecdf::new(vec![5.0, 3.0, 1.0, 4.0, 2.0]).unwrap();
        assert_eq!(e.cdf(3.0), count_oracle(&[1.0, 2.0, 3.0, 4.0, 5.0], 3.0));
        assert_eq!(e.cdf(3.0), 0.5);
        assert_eq!(e.cdf(4.0), 0.7);
    }

    #[test]
    fn similarity_examples() {
        let e = Ecdf::new(vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(similarity(&e, 3.0), 1.0);
        assert_eq!(similarity(&e, 0.0), 0.0);
        assert_eq!(similarity(&e, 9.0), 0.0);
        let f = count_oracle(e.samples(), 4.0);
        assert!((similarity(&e, 4.0) - (1.0 - (2.0 * f - 1.0).abs())).abs() < 1e-15);
        assert!((similarity(&e, 4.0) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn constant_band_gives_constant_samples() {
        let g = RasterGrid::filled(10, 10, 1, GeoTransform::unit(), 4.25f32).unwrap();
        let cfg = LamapConfig { catchment_radius: 3.0, ..Default::default() };
        let m = build_site_model(&g, &site("a", 5.0, 5.0), &cfg).unwrap();
        assert!(m.ecdfs[0].samples().iter().all(|v| *v == 4.25));
    }

    #[test]
    fn sub_pixel_catchment_is_the_site_pixel() {
        let data: Vec<f32> = (0..25).map(|v| v as f32).collect();
        let g = RasterGrid::from_data(5, 5, 1, GeoTransform::unit(), data).unwrap();
        let cfg = LamapConfig { catchment_radius: 0.2, ..Default::default() };
        let m = build_site_model(&g, &site("a", 2.1, 3.7), &cfg).unwrap();
        assert_eq!(m.ecdfs[0].samples(), &[17.0]);
        assert_eq!(m.catchment_pixels, 1);
    }

    #[test]
    fn empty_catchment_names_the_site() {
        let g = RasterGrid::from_parts(4, 4, 1, GeoTransform::unit(), vec![0.0f32; 16], vec![true; 16]).unwrap();
        let err = build_site_model(&g, &site("lost", 1.5, 1.5), &LamapConfig::default()).unwrap_err();
        assert_eq!(err, Error::EmptyCatchment { site_id: "lost".into() });
    }

    #[test]
    fn site_pixel_at_median_scores_one() {
        let data: Vec<f32> = (0..49).map(|v| (v % 7) as f32).collect();
        let g = RasterGrid::from_data(7, 7, 1, GeoTransform::unit(), data).unwrap();
        let cfg = LamapConfig { catchment_radius: 1.0, ..Default::default() };
        // catchment of (3,3): plus-shaped 5 pixels with values 2,3,3,3,4 → median 3 at the site
        let m = build_site_model(&g, &site("a", 3.5, 3.5), &cfg).unwrap();
        let s = lamap_surface(&g, &[m], &cfg).unwrap();
        assert_eq!(s.get(0, 3, 3), 1.0);
    }

    #[test]
    fn symmetric_sites_average() {
        let e1 = Ecdf::new(vec![0.0, 1.0, 2.0]).unwrap();
        let e0 = Ecdf::new(vec![10.0, 11.0]).unwrap();
        let g = RasterGrid::filled(3, 1, 1, GeoTransform::unit(), 1.0f32).unwrap();
        let cfg = LamapConfig::default();
        let models = [
            SiteModel { site_id: "a".into(), x: 0.5, y: 0.5, ecdfs: vec![e1], catchment_pixels: 3 },
            SiteModel { site_id: "b".into(), x: 2.5, y: 0.5, ecdfs: vec![e0], catchment_pixels: 2 },
        ];
        let s = lamap_surface(&g, &models, &cfg).unwrap();
        assert!((s.get(0, 0, 1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn masked_pixels_stay_masked_and_all_masked_errors() {
        let mut mask = vec![false; 16];
        mask[5] = true;
        let data: Vec<f32> = (0..16).map(|v| v as f32).collect();
        let g = RasterGrid::from_parts(4, 4, 1, GeoTransform::unit(), data, mask).unwrap();
        let cfg = LamapConfig { catchment_radius: 1.5, ..Default::default() };
        let m = build_site_model(&g, &site("a", 2.5, 2.5), &cfg).unwrap();
        let s = lamap_surface(&g, &[m.clone()], &cfg).unwrap();
        assert!(s.is_masked(5));
        assert_eq!(s.valid_count(), 15);
        let dead = RasterGrid::from_parts(4, 4, 1, GeoTransform::unit(), vec![0.0f32; 16], vec![true; 16]).unwrap();
        assert!(lamap_surface(&dead, &[m], &cfg).is_err());
    }

    #[test]
    fn moving_toward_a_site_raises_its_weight_share() {
        // u_A = 1, u_B = 0 everywhere, so P equals A's weight share
        let ea = Ecdf::new(vec![5.0]).unwrap();
        let eb = Ecdf::new(vec![-100.0]).unwrap();
        let g = RasterGrid::filled(12, 1, 1, GeoTransform::unit(), 5.0f32).unwrap();
        let cfg = LamapConfig { bandwidth: 4.0, ..Default::default() };
        let models = [
            SiteModel { site_id: "a".into(), x: 0.5, y: 0.5, ecdfs: vec![ea], catchment_pixels: 1 },
            SiteModel { site_id: "b".into(), x: 11.5, y: 0.5, ecdfs: vec![eb], catchment_pixels: 1 },
        ];
        let s = lamap_surface(&g, &models, &cfg).unwrap();
        for c in 1..12 {
            assert!(s.get(0, 0, c - 1) > s.get(0, 0, c));
        }
    }

    proptest! {
        #[test]
        fn similarity_is_unimodal_about_the_median(samples in proptest::collection::vec(-50.0f64..50.0, 1..40)) {
            let e = Ecdf::new(samples.clone()).unwrap();
            let med = e.median();
            let mut sweep = samples.clone();
            sweep.extend([-60.0, 60.0, med]);
            sweep.sort_by(f64::total_cmp);
            let u: Vec<f64> = sweep.iter().map(|v| similarity(&e, *v)).collect();
            for k in 1..sweep.len() {
                if sweep[k] <= med {
                    prop_assert!(u[k] >= u[k - 1] - 1e-15);
                } else if sweep[k - 1] >= med {
                    prop_assert!(u[k] <= u[k - 1] + 1e-15);
                }
            }
            prop_assert!(u.iter().all(|x| (0.0..=1.0).contains(x)));
        }

        #[test]
        fn single_site_surface_ignores_distance(bw in 0.1f64..50.0, vals in proptest::collection::vec(0.0f32..10.0, 36)) {
            let g = RasterGrid::from_data(6, 6, 1, GeoTransform::unit(), vals).unwrap();
            let cfg = LamapConfig { catchment_radius: 2.0, bandwidth: bw, bands: vec![] };
            let m = build_site_model(&g, &site("a", 2.5, 3.5), &cfg).unwrap();
            let s = lamap_surface(&g, &[m.clone()], &cfg).unwrap();
            for i in 0..36 {
                let u = similarity(&m.ecdfs[0], g.band(0)[i] as f64);
                prop_assert!((s.band(0)[i] - u).abs() < 1e-12);
            }
        }
    }
}
