//! Dense-CRF mean-field refinement of logit rasters.
//!
//! Unary potentials are tempered negative logits. The pairwise term mixes a
//! spatial Gaussian kernel and a bilateral kernel over pixel position and
//! guidance features, both truncated to a `⌈3σ⌉` window, with a label
//! compatibility matrix (Potts by default). One mean-field step is
//!
//! ```text
//! m_k(i, c) = Σ_{j≠i} K_k(i, j) Q(j, c)
//! Q'(i, ·)  = softmax(−ψ_u(i, ·) − μ · Σ_k w_k m_k(i, ·))
//! ```
//!
//! The spatial message is computed with separable convolutions; the
//! bilateral one is evaluated exactly over the window, optionally on a
//! guidance grid downsampled by the compression factor and bilinearly
//! restored.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::raster::{RasterGrid, Sample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrfConfig {
    /// Weight of guidance features inside the bilateral kernel.
    pub beta: f64,
    /// Spatial standard deviation, pixels.
    pub sigma: f64,
    /// Number of leading guidance bands fed to the bilateral kernel.
    pub feature_channels: usize,
    /// Guidance downsampling factor for the bilateral message.
    pub compression: usize,
    /// Apply `compression` at inference time.
    pub compress_guidance: bool,
    /// Logit divisor.
    pub temperature: f64,
    pub iterations: usize,
    pub spatial_weight: f64,
    pub bilateral_weight: f64,
    /// Row-major `classes × classes` compatibility; `None` is Potts.
    pub compatibility: Option<Vec<f64>>,
    /// Standardize each guidance band to zero mean and unit variance.
    pub standardize_guidance: bool,
}

impl Default for CrfConfig {
    fn default() -> Self {
        CrfConfig {
            beta: 0.5,
            sigma: 3.0,
            feature_channels: 16,
            compression: 2,
            compress_guidance: true,
            temperature: 1.0,
            iterations: 5,
            spatial_weight: 0.1,
            bilateral_weight: 0.1,
            compatibility: None,
            standardize_guidance: true,
        }
    }
}

impl CrfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.temperature >= 1.0 && self.temperature.is_finite()) {
            return Err(Error::config(format!("temperature must be >= 1, got {}", self.temperature)));
        }
        if !(2..=10).contains(&self.iterations) {
            return Err(Error::config(format!("iterations must be in [2, 10], got {}", self.iterations)));
        }
        if self.compression != 2 && self.compression != 4 {
            return Err(Error::config(format!("compression must be 2 or 4, got {}", self.compression)));
        }
        if self.feature_channels == 0 {
            return Err(Error::config("feature_channels must be positive"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::config("beta must be non-negative"));
        }
        if !(self.spatial_weight >= 0.0 && self.bilateral_weight >= 0.0) {
            return Err(Error::config("pairwise weights must be non-negative"));
        }
        Ok(())
    }

    fn window_radius(&self) -> usize {
        math::ceil(3.0 * self.sigma) as usize
    }

    fn compatibility_matrix(&self, classes: usize) -> Result<Vec<f64>> {
        match &self.compatibility {
            None => Ok((0..classes * classes)
                .map(|k| if k / classes == k % classes { 0.0 } else { 1.0 })
                .collect()),
            Some(m) if m.len() == classes * classes => Ok(m.clone()),
            Some(m) => Err(Error::config(format!(
                "compatibility has {} entries, need {}",
                m.len(),
                classes * classes
            ))),
        }
    }
}

/// Per-pixel, per-class values stored class-major. Used for logits, unary
/// potentials and marginals alike.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassField {
    pub width: usize,
    pub height: usize,
    pub classes: usize,
    pub data: Vec<f64>,
    /// `true` = masked.
    pub mask: Vec<bool>,
}

pub type LogitField = ClassField;

impl ClassField {
    pub fn new(width: usize, height: usize, classes: usize, data: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        let n = width * height;
        if classes < 2 {
            return Err(Error::config("a class field needs at least two classes"));
        }
        if data.len() != n * classes || mask.len() != n {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}x{classes}", width, height),
                found: format!("{} values, {} mask entries", data.len(), mask.len()),
            });
        }
        Ok(ClassField {
            width,
            height,
            classes,
            data,
            mask,
        })
    }

    /// Binary logits from a raster: one band is the class-1 logit against a
    /// zero class-0 logit; two or more bands are per-class logits.
    pub fn from_raster<T: Sample>(grid: &RasterGrid<T>) -> Result<Self> {
        let n = grid.pixel_count();
        let (classes, data) = if grid.bands() == 1 {
            let mut d = vec![0.0; 2 * n];
            for (i, v) in grid.band(0).iter().enumerate() {
                d[n + i] = if grid.is_masked(i) { 0.0 } else { v.to_f64() };
            }
            (2, d)
        } else {
            let d = (0..grid.bands())
                .flat_map(|b| {
                    grid.band(b)
                        .iter()
                        .enumerate()
                        .map(move |(i, v)| if grid.is_masked(i) { 0.0 } else { v.to_f64() })
                })
                .collect();
            (grid.bands(), d)
        };
        ClassField::new(grid.width(), grid.height(), classes, data, grid.mask().to_vec())
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn at(&self, class: usize, i: usize) -> f64 {
        self.data[class * self.pixels() + i]
    }

    pub fn plane(&self, class: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[class * n..(class + 1) * n]
    }

    fn same_shape(&self, other: &ClassField) -> Result<()> {
        if self.width != other.width || self.height != other.height || self.classes != other.classes {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}x{}", self.width, self.height, self.classes),
                found: format!("{}x{}x{}", other.width, other.height, other.classes),
            });
        }
        Ok(())
    }
}

/// `ψ_u(x, c) = −logit(x, c) / temperature`.
pub fn unary(logits: &LogitField, temperature: f64) -> Result<ClassField> {
    if !(temperature >= 1.0 && temperature.is_finite()) {
        return Err(Error::config(format!("temperature must be >= 1, got {temperature}")));
    }
    let n = logits.pixels();
    let mut data = Vec::with_capacity(logits.data.len());
    for (k, v) in logits.data.iter().enumerate() {
        let i = k % n;
        if logits.mask[i] {
            data.push(0.0);
        } else if !v.is_finite() {
            return Err(Error::NonFinite(format!("logit of class {} at pixel {i}", k / n)));
        } else {
            data.push(-v / temperature);
        }
    }
    ClassField::new(logits.width, logits.height, logits.classes, data, logits.mask.clone())
}

/// Per-pixel softmax of `−energy`; masked pixels get all-zero marginals.
pub fn softmax_neg(energy: &ClassField) -> ClassField {
    let n = energy.pixels();
    let c = energy.classes;
    let mut out = vec![0.0; n * c];
    let mut buf = vec![0.0; c];
    for i in 0..n {
        if energy.mask[i] {
            continue;
        }
        let mut max = f64::NEG_INFINITY;
        for k in 0..c {
            buf[k] = -energy.data[k * n + i];
            max = max.max(buf[k]);
        }
        let mut sum = 0.0;
        for b in buf.iter_mut() {
            *b = math::exp(*b - max);
            sum += *b;
        }
        for k in 0..c {
            out[k * n + i] = buf[k] / sum;
        }
    }
    ClassField {
        width: energy.width,
        height: energy.height,
        classes: c,
        data: out,
        mask: energy.mask.clone(),
    }
}

/// Guidance features feeding the bilateral kernel, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceFeatures {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl GuidanceFeatures {
    /// Leading `min(channels, bands)` bands, optionally standardized over
    /// unmasked pixels. Masked pixels get zero features.
    pub fn from_grid<T: Sample>(grid: &RasterGrid<T>, channels: usize, standardize: bool) -> Self {
        let k = channels.min(grid.bands());
        let n = grid.pixel_count();
        let mut data = Vec::with_capacity(k * n);
        for b in 0..k {
            let band = grid.band(b);
            let valid: Vec<f64> = (0..n).filter(|i| !grid.is_masked(*i)).map(|i| band[i].to_f64()).collect();
            let (mean, scale) = if standardize && !valid.is_empty() {
                let mean = valid.iter().sum::<f64>() / valid.len() as f64;
                let var = valid.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / valid.len() as f64;
                let sd = math::sqrt(var);
                (mean, if sd > 0.0 { 1.0 / sd } else { 1.0 })
            } else {
                (0.0, 1.0)
            };
            data.extend((0..n).map(|i| {
                if grid.is_masked(i) {
                    0.0
                } else {
                    (band[i].to_f64() - mean) * scale
                }
            }));
        }
        GuidanceFeatures {
            width: grid.width(),
            height: grid.height(),
            channels: k,
            data,
        }
    }

    #[inline]
    fn sq_dist(&self, i: usize, j: usize) -> f64 {
        let n = self.width * self.height;
        let mut s = 0.0;
        for ch in 0..self.channels {
            let d = self.data[ch * n + i] - self.data[ch * n + j];
            s += d * d;
        }
        s
    }
}

fn gaussian_1d(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    (-r..=r)
        .map(|d| math::exp(-((d * d) as f64) / (2.0 * sigma * sigma)))
        .collect()
}

/// `Σ_{j≠i, |Δr|,|Δc|≤r} exp(−|Δp|²/2σ²) Q(j, c)` for every class plane.
fn spatial_message(q: &ClassField, sigma: f64, radius: usize) -> Vec<f64> {
    let (w, h) = (q.width, q.height);
    let n = w * h;
    let k = gaussian_1d(sigma, radius);
    let r = radius as isize;
    let mut out = vec![0.0; n * q.classes];
    let mut tmp = vec![0.0; n];
    for c in 0..q.classes {
        let plane = q.plane(c);
        for row in 0..h {
            for col in 0..w {
                let mut s = 0.0;
                for d in -r..=r {
                    let cc = col as isize + d;
                    if cc >= 0 && (cc as usize) < w {
                        s += k[(d + r) as usize] * plane[row * w + cc as usize];
                    }
                }
                tmp[row * w + col] = s;
            }
        }
        let dst = &mut out[c * n..(c + 1) * n];
        for row in 0..h {
            for col in 0..w {
                let mut s = 0.0;
                for d in -r..=r {
                    let rr = row as isize + d;
                    if rr >= 0 && (rr as usize) < h {
                        s += k[(d + r) as usize] * tmp[rr as usize * w + col];
                    }
                }
                let i = row * w + col;
                // the centre tap has weight exp(0) = 1
                dst[i] = s - plane[i];
            }
        }
    }
    out
}

/// Exact windowed bilateral message at full resolution.
fn bilateral_message(q: &ClassField, feats: &GuidanceFeatures, sigma: f64, beta: f64, radius: usize) -> Vec<f64> {
    let (w, h) = (q.width, q.height);
    let n = w * h;
    let r = radius as isize;
    let side = 2 * radius + 1;
    let spatial: Vec<f64> = (0..side * side)
        .map(|k| {
            let dr = (k / side) as isize - r;
            let dc = (k % side) as isize - r;
            math::exp(-((dr * dr + dc * dc) as f64) / (2.0 * sigma * sigma))
        })
        .collect();
    let half_b2 = 0.5 * beta * beta;
    let mut out = vec![0.0; n * q.classes];
    for row in 0..h {
        for col in 0..w {
            let i = row * w + col;
            if q.mask[i] {
                continue;
            }
            for dr in -r..=r {
                let rr = row as isize + dr;
                if rr < 0 || rr as usize >= h {
                    continue;
                }
                for dc in -r..=r {
                    let cc = col as isize + dc;
                    if cc < 0 || cc as usize >= w || (dr == 0 && dc == 0) {
                        continue;
                    }
                    let j = rr as usize * w + cc as usize;
                    if q.mask[j] {
                        continue;
                    }
                    let ks = spatial[((dr + r) as usize) * side + (dc + r) as usize];
                    let kb = ks * math::exp(-half_b2 * feats.sq_dist(i, j));
                    for c in 0..q.classes {
                        out[c * n + i] += kb * q.data[c * n + j];
                    }
                }
            }
        }
    }
    out
}

/// Bilateral message computed on a `γ`-downsampled grid and bilinearly
/// restored. Blocks carry summed marginals and mean features.
fn bilateral_message_compressed(
    q: &ClassField,
    feats: &GuidanceFeatures,
    sigma: f64,
    beta: f64,
    gamma: usize,
) -> Vec<f64> {
    let (w, h) = (q.width, q.height);
    let n = w * h;
    let (cw, ch) = (w.div_ceil(gamma), h.div_ceil(gamma));
    let cn = cw * ch;
    let classes = q.classes;
    let mut q_sum = vec![0.0; cn * classes];
    let mut f_mean = vec![0.0; cn * feats.channels];
    let mut count = vec![0usize; cn];
    for row in 0..h {
        for col in 0..w {
            let i = row * w + col;
            if q.mask[i] {
                continue;
            }
            let b = (row / gamma) * cw + col / gamma;
            count[b] += 1;
            for c in 0..classes {
                q_sum[c * cn + b] += q.data[c * n + i];
            }
            for f in 0..feats.channels {
                f_mean[f * cn + b] += feats.data[f * n + i];
            }
        }
    }
    for b in 0..cn {
        if count[b] > 0 {
            for f in 0..feats.channels {
                f_mean[f * cn + b] /= count[b] as f64;
            }
        }
    }

    let coarse_sigma = sigma / gamma as f64;
    let r = math::ceil(3.0 * coarse_sigma) as isize;
    let half_b2 = 0.5 * beta * beta;
    let mut coarse = vec![0.0; cn * classes];
    for br in 0..ch {
        for bc in 0..cw {
            let b = br * cw + bc;
            if count[b] == 0 {
                continue;
            }
            for dr in -r..=r {
                let rr = br as isize + dr;
                if rr < 0 || rr as usize >= ch {
                    continue;
                }
                for dc in -r..=r {
                    let cc = bc as isize + dc;
                    if cc < 0 || cc as usize >= cw {
                        continue;
                    }
                    let j = rr as usize * cw + cc as usize;
                    if count[j] == 0 {
                        continue;
                    }
                    let mut fd = 0.0;
                    for f in 0..feats.channels {
                        let d = f_mean[f * cn + b] - f_mean[f * cn + j];
                        fd += d * d;
                    }
                    let k = math::exp(
                        -((dr * dr + dc * dc) as f64) / (2.0 * coarse_sigma * coarse_sigma) - half_b2 * fd,
                    );
                    for c in 0..classes {
                        coarse[c * cn + b] += k * q_sum[c * cn + j];
                    }
                }
            }
        }
    }

    let mut out = vec![0.0; n * classes];
    for row in 0..h {
        let fy = ((row as f64 + 0.5) / gamma as f64 - 0.5).clamp(0.0, (ch - 1) as f64);
        let y0 = math::floor(fy) as usize;
        let y1 = (y0 + 1).min(ch - 1);
        let ty = fy - y0 as f64;
        for col in 0..w {
            let i = row * w + col;
            if q.mask[i] {
                continue;
            }
            let fx = ((col as f64 + 0.5) / gamma as f64 - 0.5).clamp(0.0, (cw - 1) as f64);
            let x0 = math::floor(fx) as usize;
            let x1 = (x0 + 1).min(cw - 1);
            let tx = fx - x0 as f64;
            for c in 0..classes {
                let p = &coarse[c * cn..(c + 1) * cn];
                let v = (1.0 - ty) * ((1.0 - tx) * p[y0 * cw + x0] + tx * p[y0 * cw + x1])
                    + ty * ((1.0 - tx) * p[y1 * cw + x0] + tx * p[y1 * cw + x1]);
                out[c * n + i] = (v - q.data[c * n + i]).max(0.0);
            }
        }
    }
    out
}

/// One mean-field update.
pub fn mean_field_step(q: &ClassField, unary: &ClassField, guidance: &GuidanceFeatures, cfg: &CrfConfig) -> Result<ClassField> {
    q.same_shape(unary)?;
    if guidance.width != q.width || guidance.height != q.height {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{} guidance", q.width, q.height),
            found: format!("{}x{}", guidance.width, guidance.height),
        });
    }
    let n = q.pixels();
    let classes = q.classes;
    let compat = cfg.compatibility_matrix(classes)?;
    let mut message = vec![0.0; n * classes];
    if cfg.spatial_weight > 0.0 {
        let m = spatial_message(q, cfg.sigma, cfg.window_radius());
        for (acc, v) in message.iter_mut().zip(&m) {
            *acc += cfg.spatial_weight * v;
        }
    }
    if cfg.bilateral_weight > 0.0 {
        let m = if cfg.compress_guidance {
            bilateral_message_compressed(q, guidance, cfg.sigma, cfg.beta, cfg.compression)
        } else {
            bilateral_message(q, guidance, cfg.sigma, cfg.beta, cfg.window_radius())
        };
        for (acc, v) in message.iter_mut().zip(&m) {
            *acc += cfg.bilateral_weight * v;
        }
    }
    let mut energy = unary.data.clone();
    for i in 0..n {
        if q.mask[i] {
            continue;
        }
        for c in 0..classes {
            let mut p = 0.0;
            for c2 in 0..classes {
                p += compat[c * classes + c2] * message[c2 * n + i];
            }
            energy[c * n + i] += p;
        }
    }
    let energy = ClassField::new(q.width, q.height, classes, energy, q.mask.clone())?;
    Ok(softmax_neg(&energy))
}

/// Runs `cfg.iterations` mean-field steps from `softmax(−ψ_u)` and returns
/// all class marginals.
pub fn crf_refine_field(logits: &LogitField, guidance: &GuidanceFeatures, cfg: &CrfConfig) -> Result<ClassField> {
    cfg.validate()?;
    let u = unary(logits, cfg.temperature)?;
    let mut q = softmax_neg(&u);
    for _ in 0..cfg.iterations {
        q = mean_field_step(&q, &u, guidance, cfg)?;
    }
    Ok(q)
}

/// Class-1 probability after refinement. The output masks any pixel masked
/// in the logits or the guidance.
pub fn crf_refine<T: Sample, G: Sample>(logits: &RasterGrid<T>, guidance: &RasterGrid<G>, cfg: &CrfConfig) -> Result<RasterGrid<f64>> {
    logits.check_same_shape(guidance)?;
    let mut field = LogitField::from_raster(logits)?;
    for (m, g) in field.mask.iter_mut().zip(guidance.mask()) {
        *m |= *g;
    }
    let feats = GuidanceFeatures::from_grid(guidance, cfg.feature_channels, cfg.standardize_guidance);
    let q = crf_refine_field(&field, &feats, cfg)?;
    let mut out = RasterGrid::from_parts(
        logits.width(),
        logits.height(),
        1,
        *logits.geotransform(),
        q.plane(1).to_vec(),
        q.mask.clone(),
    )?;
    out.set_band_names(vec!["crf_probability".to_string()])?;
    Ok(out)
}
