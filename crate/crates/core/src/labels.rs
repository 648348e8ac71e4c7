//! Site records, label rasterization and distance-to-feature maps.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::edt;
use crate::error::{Error, Result};
use crate::math;
use crate::raster::{RasterGrid, Sample};

/// Label radius used by the standard LAMAP survey protocol, in metres.
pub const DEFAULT_LABEL_RADIUS: f64 = 295.0;

/// Radii used in the label-inflation ablation, in metres.
pub const ABLATION_RADII: [f64; 3] = [1.0, 295.0, 500.0];

/// Chronological periods of the survey record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Period {
    #[serde(rename = "Late Prehistory")]
    LatePrehistory,
    #[serde(rename = "Iron Age–Archaic")]
    IronAgeArchaic,
    #[serde(rename = "Achaemenid–Hellenistic")]
    AchaemenidHellenistic,
    #[serde(rename = "Roman Imperial")]
    RomanImperial,
    #[serde(rename = "Late Antique")]
    LateAntique,
    #[serde(rename = "Byzantine")]
    Byzantine,
    #[serde(rename = "Late Ottoman")]
    LateOttoman,
}

impl Period {
    pub const ALL: [Period; 7] = [
        Period::LatePrehistory,
        Period::IronAgeArchaic,
        Period::AchaemenidHellenistic,
        Period::RomanImperial,
        Period::LateAntique,
        Period::Byzantine,
        Period::LateOttoman,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Period::LatePrehistory => "Late Prehistory",
            Period::IronAgeArchaic => "Iron Age–Archaic",
            Period::AchaemenidHellenistic => "Achaemenid–Hellenistic",
            Period::RomanImperial => "Roman Imperial",
            Period::LateAntique => "Late Antique",
            Period::Byzantine => "Byzantine",
            Period::LateOttoman => "Late Ottoman",
        }
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Period {
    type Err = Error;

    /// Accepts the canonical names; an ASCII hyphen may stand in for the en dash.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Period::ALL
            .into_iter()
            .find(|p| p.name() == s || p.name().replace('–', "-") == s)
            .ok_or_else(|| Error::config(format!("unknown period `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
    Unlabeled,
}

impl FromStr for Polarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" => Ok(Polarity::Positive),
            "negative" => Ok(Polarity::Negative),
            "unlabeled" => Ok(Polarity::Unlabeled),
            other => Err(Error::config(format!("unknown polarity `{other}`"))),
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
            Polarity::Unlabeled => "unlabeled",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteRecord {
    pub site_id: String,
    pub x: f64,
    pub y: f64,
    pub period: Period,
    pub polarity: Polarity,
    pub find_count: Option<u32>,
}

impl SiteRecord {
    pub fn new(site_id: impl Into<String>, x: f64, y: f64, period: Period, polarity: Polarity) -> Self {
        SiteRecord {
            site_id: site_id.into(),
            x,
            y,
            period,
            polarity,
            find_count: None,
        }
    }
}

/// Fails on duplicate site IDs.
pub fn check_unique_ids(sites: &[SiteRecord]) -> Result<()> {
    let mut ids: Vec<&str> = sites.iter().map(|s| s.site_id.as_str()).collect();
    ids.sort_unstable();
    for w in ids.windows(2) {
        if w[0] == w[1] {
            return Err(Error::data(format!("duplicate site id `{}`", w[0])));
        }
    }
    Ok(())
}

/// Pixels whose centre lies within `radius` of `(x, y)`, plus the pixel that
/// contains the point itself. Calls `visit(row, col)` once per pixel.
pub(crate) fn for_each_disk_pixel<T: Sample>(
    grid: &RasterGrid<T>,
    x: f64,
    y: f64,
    radius: f64,
    mut visit: impl FnMut(usize, usize),
) {
    let gt = grid.geotransform();
    let (w, h) = (grid.width(), grid.height());
    let (r_c, c_c) = gt.to_pixel(x, y);
    let r_span = radius / gt.dy() + 1.0;
    let c_span = radius / gt.dx() + 1.0;
    let r_lo = math::floor(r_c - r_span).max(0.0) as usize;
    let c_lo = math::floor(c_c - c_span).max(0.0) as usize;
    let r_hi = (math::ceil(r_c + r_span).max(0.0) as usize).min(h);
    let c_hi = (math::ceil(c_c + c_span).max(0.0) as usize).min(w);
    let home = gt.pixel_of(x, y, w, h);
    let r2 = radius * radius;
    for r in r_lo..r_hi {
        for c in c_lo..c_hi {
            let (px, py) = gt.pixel_center(r, c);
            let (ddx, ddy) = (px - x, py - y);
            if ddx * ddx + ddy * ddy <= r2 || home == Some((r, c)) {
                visit(r, c);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct LabelRaster {
    /// One band: 1 positive, 0 negative, masked = unlabeled.
    pub grid: RasterGrid<f32>,
    /// IDs of sites skipped because they fall outside the raster extent.
    pub skipped: Vec<String>,
}

/// Burns positive and negative site disks into a label raster aligned with
/// `template`. Positives take precedence over negatives where disks overlap.
/// Disks are clipped at the raster boundary only.
pub fn rasterize_labels<T: Sample>(sites: &[SiteRecord], radius: f64, template: &RasterGrid<T>) -> Result<LabelRaster> {
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(Error::config(format!("label radius must be >= 0, got {radius}")));
    }
    let (w, h) = (template.width(), template.height());
    let mut grid = RasterGrid::from_parts(
        w,
        h,
        1,
        *template.geotransform(),
        vec![0.0f32; w * h],
        vec![true; w * h],
    )?;
    grid.set_band_names(vec!["label".to_string()])?;
    let mut skipped = Vec::new();
    let mut state = vec![0u8; w * h]; // 0 unlabeled, 1 negative, 2 positive

    for polarity in [Polarity::Negative, Polarity::Positive] {
        for site in sites.iter().filter(|s| s.polarity == polarity) {
            if !template.contains_point(site.x, site.y) {
                skipped.push(site.site_id.clone());
                continue;
            }
            let code = if polarity == Polarity::Positive { 2 } else { 1 };
            for_each_disk_pixel(template, site.x, site.y, radius, |r, c| {
                let i = r * w + c;
                state[i] = state[i].max(code);
            });
        }
    }
    for (i, s) in state.iter().enumerate() {
        match s {
            2 => grid.set(0, i / w, i % w, 1.0),
            1 => grid.set(0, i / w, i % w, 0.0),
            _ => {}
        }
    }
    grid.insert_metadata("label_radius", format!("{radius}"));
    Ok(LabelRaster { grid, skipped })
}

/// Point and polyline features in map coordinates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Targets {
    pub points: Vec<(f64, f64)>,
    pub lines: Vec<Vec<(f64, f64)>>,
}

impl Targets {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty() && self.lines.iter().all(|l| l.is_empty())
    }

    /// Marks every pixel containing a point or crossed by a line segment.
    pub fn rasterize<T: Sample>(&self, grid: &RasterGrid<T>) -> Vec<bool> {
        let (w, h) = (grid.width(), grid.height());
        let gt = grid.geotransform();
        let mut out = vec![false; w * h];
        let mut mark = |x: f64, y: f64| {
            if let Some((r, c)) = gt.pixel_of(x, y, w, h) {
                out[r * w + c] = true;
            }
        };
        for &(x, y) in &self.points {
            mark(x, y);
        }
        for line in &self.lines {
            if line.len() == 1 {
                mark(line[0].0, line[0].1);
            }
            for seg in line.windows(2) {
                let (a, b) = (seg[0], seg[1]);
                let (ra, ca) = gt.to_pixel(a.0, a.1);
                let (rb, cb) = gt.to_pixel(b.0, b.1);
                let span = (rb - ra).abs().max((cb - ca).abs());
                // quarter-pixel steps never skip a crossed cell by more than a corner
                let steps = (math::ceil(span * 4.0) as usize).max(1);
                for k in 0..=steps {
                    let t = k as f64 / steps as f64;
                    mark(a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
                }
            }
        }
        out
    }
}

/// Exact Euclidean distance (map units) to the nearest target pixel.
pub fn distance_map<T: Sample>(targets: &Targets, grid: &RasterGrid<T>) -> Result<RasterGrid<f64>> {
    if targets.is_empty() {
        return Err(Error::empty("distance map needs at least one target"));
    }
    let burned = targets.rasterize(grid);
    if !burned.iter().any(|b| *b) {
        return Err(Error::empty("no target falls inside the raster extent"));
    }
    distance_map_from_mask(&burned, grid)
}

/// Distance map from an already rasterized target mask.
pub fn distance_map_from_mask<T: Sample>(targets: &[bool], grid: &RasterGrid<T>) -> Result<RasterGrid<f64>> {
    let gt = grid.geotransform();
    let d = edt::distance_transform(targets, grid.width(), grid.height(), gt.dx(), gt.dy())?;
    let mut out = RasterGrid::from_parts(grid.width(), grid.height(), 1, *gt, d, grid.mask().to_vec())?;
    out.set_band_names(vec!["distance".to_string()])?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GeoTransform;

    fn template(w: usize, h: usize) -> RasterGrid<f32> {
        RasterGrid::filled(w, h, 1, GeoTransform::unit(), 0.0).unwrap()
    }

    fn labeled(l: &LabelRaster) -> Vec<(usize, usize, f32)> {
        let g = &l.grid;
        (0..g.pixel_count())
            .filter(|i| !g.is_masked(*i))
            .map(|i| (i / g.width(), i % g.width(), g.band(0)[i]))
            .collect()
    }

    #[test]
    fn period_names_round_trip() {
        for p in Period::ALL {
            assert_eq!(p.name().parse::<Period>().unwrap(), p);
        }
        assert_eq!("Iron Age-Archaic".parse::<Period>().unwrap(), Period::IronAgeArchaic);
        assert!("Bronze Age".parse::<Period>().is_err());
    }

    #[test]
    fn tiny_radius_labels_containing_pixel() {
        let t = template(10, 10);
        let sites = [
            SiteRecord::new("a", 3.2, 4.9, Period::Byzantine, Polarity::Positive),
            SiteRecord::new("b", 7.5, 1.5, Period::Byzantine, Polarity::Negative),
        ];
        let l = rasterize_labels(&sites, 0.1, &t).unwrap();
        assert_eq!(labeled(&l), vec![(1, 7, 0.0), (4, 3, 1.0)]);
    }

    #[test]
    fn two_pixel_radius_disk_has_thirteen_pixels() {
        // oracle: enumerate integer offsets with dx²+dy² ≤ 4
        let expected = (-2i32..=2)
            .flat_map(|a| (-2i32..=2).map(move |b| (a, b)))
            .filter(|(a, b)| a * a + b * b <= 4)
            .count();
        assert_eq!(expected, 13);
        let t = template(9, 9);
        let sites = [SiteRecord::new("a", 4.5, 4.5, Period::Byzantine, Polarity::Positive)];
        let l = rasterize_labels(&sites, 2.0, &t).unwrap();
        assert_eq!(labeled(&l).len(), expected);
    }

    #[test]
    fn positives_win_over_negatives() {
        let t = template(9, 9);
        let sites = [
            SiteRecord::new("p", 3.5, 4.5, Period::Byzantine, Polarity::Positive),
            SiteRecord::new("n", 5.5, 4.5, Period::Byzantine, Polarity::Negative),
        ];
        let l = rasterize_labels(&sites, 1.5, &t).unwrap();
        let g = &l.grid;
        assert_eq!(g.value(0, 4, 4), Some(1.0));
        assert_eq!(g.value(0, 4, 6), Some(0.0));
        assert_eq!(g.value(0, 4, 2), Some(1.0));
    }

    #[test]
    fn outside_sites_are_skipped_not_fatal() {
        let t = template(5, 5);
        let sites = [
            SiteRecord::new("in", 2.5, 2.5, Period::Byzantine, Polarity::Positive),
            SiteRecord::new("out", 50.0, 2.5, Period::Byzantine, Polarity::Positive),
        ];
        let l = rasterize_labels(&sites, 0.5, &t).unwrap();
        assert_eq!(l.skipped, vec!["out".to_string()]);
        assert_eq!(labeled(&l).len(), 1);
    }

    #[test]
    fn labels_grow_with_radius() {
        let t = template(20, 20);
        let sites = [
            SiteRecord::new("a", 6.3, 7.1, Period::Byzantine, Polarity::Positive),
            SiteRecord::new("b", 12.8, 11.4, Period::Byzantine, Polarity::Negative),
        ];
        let mut prev: Vec<bool> = vec![false; 400];
        for r in [0.0, 0.7, 1.0, 2.5, 4.0, 7.0] {
            let l = rasterize_labels(&sites, r, &t).unwrap();
            let cur: Vec<bool> = l.grid.mask().iter().map(|m| !m).collect();
            assert!(prev.iter().zip(&cur).all(|(p, c)| !p || *c));
            prev = cur;
        }
    }

    #[test]
    fn distance_map_two_targets_is_pointwise_min() {
        let t = template(16, 12);
        let a = (2.5, 3.5);
        let b = (13.5, 9.5);
        let both = distance_map(&Targets { points: vec![a, b], lines: vec![] }, &t).unwrap();
        let da = distance_map(&Targets { points: vec![a], lines: vec![] }, &t).unwrap();
        let db = distance_map(&Targets { points: vec![b], lines: vec![] }, &t).unwrap();
        for i in 0..t.pixel_count() {
            let (r, c) = (i / 16, i % 16);
            let brute = [a, b]
                .iter()
                .map(|p| math::hypot(c as f64 + 0.5 - p.0, r as f64 + 0.5 - p.1))
                .fold(f64::INFINITY, f64::min);
            assert!((both.band(0)[i] - brute).abs() < 1e-9);
            assert!((both.band(0)[i] - da.band(0)[i].min(db.band(0)[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn distance_map_of_one_pixel_target() {
        let t = template(12, 12);
        let d = distance_map(&Targets { points: vec![(0.5, 0.5)], lines: vec![] }, &t).unwrap();
        assert_eq!(d.band(0)[8 * 12 + 6], 10.0);
    }

    #[test]
    fn line_targets_cover_their_path() {
        let t = template(10, 10);
        let d = distance_map(
            &Targets {
                points: vec![],
                lines: vec![vec![(0.5, 5.5), (9.5, 5.5)]],
            },
            &t,
        )
        .unwrap();
        for c in 0..10 {
            assert_eq!(d.band(0)[5 * 10 + c], 0.0);
            assert_eq!(d.band(0)[2 * 10 + c], 3.0);
        }
    }

    #[test]
    fn empty_targets_error() {
        let t = template(4, 4);
        assert!(distance_map(&Targets::default(), &t).is_err());
        let outside = Targets { points: vec![(100.0, 100.0)], lines: vec![] };
        assert!(distance_map(&outside, &t).is_err());
    }
}
