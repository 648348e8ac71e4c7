//! Seeded synthetic landscapes for demos and end-to-end tests.

use apm_core::labels::{Period, Polarity, SiteRecord, Targets};
use apm_core::rng::{stream_rng, Stream};
use apm_core::{GeoTransform, RasterGrid};
use rand::Rng;

use crate::error::Result;

#[derive(Debug, Clone)]
pub struct Landscape {
    pub dem: RasterGrid<f32>,
    /// Two-band stand-in for multispectral imagery.
    pub imagery: RasterGrid<f32>,
    pub sites: Vec<SiteRecord>,
    pub roads: Targets,
}

/// North-up landscape of `width × height` pixels of `pixel_size` metres with
/// `n_sites` sites of one period: two thirds positive, the rest negative.
pub fn synthetic_landscape(width: usize, height: usize, pixel_size: f64, n_sites: usize, seed: u64) -> Result<Landscape> {
    let mut rng = stream_rng(seed, Stream::Synthetic);
    let gt = GeoTransform::new(500_000.0, 4_150_000.0, pixel_size, -pixel_size);
    let bumps: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            (
                rng.random_range(0.0..width as f64),
                rng.random_range(0.0..height as f64),
                rng.random_range(-30.0..60.0),
                rng.random_range(3.0..(width.min(height) as f64 / 2.0).max(4.0)),
            )
        })
        .collect();
    let n = width * height;
    let mut dem = Vec::with_capacity(n);
    for r in 0..height {
        for c in 0..width {
            let (x, y) = (c as f64, r as f64);
            let mut z = 400.0 + 2.0 * y + 15.0 * (x / 7.0).sin() + 10.0 * (y / 5.0).cos();
            for (bx, by, amp, s) in &bumps {
                let d2 = (x - bx).powi(2) + (y - by).powi(2);
                z += amp * (-d2 / (2.0 * s * s)).exp();
            }
            dem.push(z as f32);
        }
    }
    let lo = dem.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = dem.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut imagery = Vec::with_capacity(2 * n);
    imagery.extend(dem.iter().map(|z| (z - lo) / (hi - lo).max(1e-6) + rng.random_range(-0.05f32..0.05)));
    imagery.extend((0..n).map(|i| ((i % width) as f32 / width as f32) * 0.5 + rng.random_range(0.0f32..0.5)));

    let mut dem = RasterGrid::from_data(width, height, 1, gt, dem)?;
    dem.set_band_names(vec!["elevation".into()])?;
    let mut imagery = RasterGrid::from_data(width, height, 2, gt, imagery)?;
    imagery.set_band_names(vec!["brightness".into(), "greenness".into()])?;

    let positives = (2 * n_sites).div_ceil(3);
    let sites = (0..n_sites)
        .map(|i| {
            let r = rng.random_range(1..height.saturating_sub(1).max(2));
            let c = rng.random_range(1..width.saturating_sub(1).max(2));
            let (x, y) = gt.pixel_center(r.min(height - 1), c.min(width - 1));
            let polarity = if i < positives { Polarity::Positive } else { Polarity::Negative };
            SiteRecord {
                site_id: format!("S{i:03}"),
                x,
                y,
                period: Period::LateAntique,
                polarity,
                find_count: Some(rng.random_range(0..60)),
            }
        })
        .collect();
    let (x0, y0, x1, y1) = dem.extent();
    let roads = Targets {
        points: vec![],
        lines: vec![vec![(x0, y0 + 0.3 * (y1 - y0)), (x1, y0 + 0.6 * (y1 - y0))]],
    };
    Ok(Landscape { dem, imagery, sites, roads })
}
