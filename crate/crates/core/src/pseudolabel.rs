//! Dynamic-pseudolabel objective over externally supplied branch predictions.
//!
//! Two decoder branches predict probabilities `ŷ¹`, `ŷ²`. Pseudolabels are
//! random convex combinations `ỹ = α ŷ¹ + (1 − α) ŷ²` with `α ~ U(0, 1)`, and
//! the objective is
//!
//! ```text
//! L = L_sup + λ_p · pseudo + λ_c(t) · consistency − λ_e(t) · entropy
//! ```
//!
//! where every unlabeled term is averaged over tiles and the pseudolabel
//! term only counts pixels whose pseudolabel confidence `max(ỹ, 1 − ỹ)`
//! reaches `τ`.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::raster::{RasterGrid, Sample};
use crate::rng::{substream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    WeightedCe,
    Dice,
    DiceFocal,
    Focal,
    Tversky,
}

impl LossKind {
    /// Overlap losses see hard pseudolabels.
    pub fn is_overlap(self) -> bool {
        matches!(self, LossKind::Dice | LossKind::DiceFocal | LossKind::Tversky)
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "weighted-ce" | "ce" | "weighted_ce" => Ok(LossKind::WeightedCe),
            "dice" => Ok(LossKind::Dice),
            "dice-focal" | "dice_focal" => Ok(LossKind::DiceFocal),
            "focal" => Ok(LossKind::Focal),
            "tversky" => Ok(LossKind::Tversky),
            other => Err(Error::config(format!("unknown loss kind `{other}`"))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::WeightedCe => "weighted-ce",
            LossKind::Dice => "dice",
            LossKind::DiceFocal => "dice-focal",
            LossKind::Focal => "focal",
            LossKind::Tversky => "tversky",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossParams {
    pub eps: f64,
    pub smooth: f64,
    pub focal_gamma: f64,
    pub tversky_alpha: f64,
    pub tversky_beta: f64,
    /// `[negative, positive]` class weights for cross-entropy.
    pub class_weights: [f64; 2],
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams {
            eps: 1e-7,
            smooth: 1.0,
            focal_gamma: 2.0,
            tversky_alpha: 0.3,
            tversky_beta: 0.7,
            class_weights: [1.0, 1.0],
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(Error::config("eps must be in (0, 0.5)"));
        }
        if self.smooth < 0.0 || self.focal_gamma < 0.0 || self.tversky_alpha < 0.0 || self.tversky_beta < 0.0 {
            return Err(Error::config("loss parameters must be non-negative"));
        }
        if self.class_weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::config("class weights must be non-negative"));
        }
        Ok(())
    }
}

fn check_pair(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} targets", pred.len()),
            found: format!("{}", target.len()),
        });
    }
    Ok(())
}

fn dice_loss(pred: &[f64], target: &[f64], smooth: f64) -> f64 {
    let inter = math::compensated_sum(pred.iter().zip(target).map(|(p, t)| p * t));
    let sp = math::compensated_sum(pred.iter().copied());
    let st = math::compensated_sum(target.iter().copied());
    let denom = sp + st + smooth;
    if denom == 0.0 {
        return 0.0;
    }
    1.0 - (2.0 * inter + smooth) / denom
}

fn tversky_loss(pred: &[f64], target: &[f64], p: &LossParams) -> f64 {
    let tp = math::compensated_sum(pred.iter().zip(target).map(|(p, t)| p * t));
    let fp = math::compensated_sum(pred.iter().zip(target).map(|(p, t)| p * (1.0 - t)));
    let fneg = math::compensated_sum(pred.iter().zip(target).map(|(p, t)| (1.0 - p) * t));
    let denom = tp + p.tversky_alpha * fp + p.tversky_beta * fneg + p.smooth;
    if denom == 0.0 {
        return 0.0;
    }
    1.0 - (tp + p.smooth) / denom
}

fn focal_loss(pred: &[f64], target: &[f64], p: &LossParams) -> f64 {
    let g = p.focal_gamma;
    let terms = pred.iter().zip(target).map(|(&q, &t)| {
        let q = q.clamp(p.eps, 1.0 - p.eps);
        -(t * math::powf(1.0 - q, g) * math::ln(q) + (1.0 - t) * math::powf(q, g) * math::ln(1.0 - q))
    });
    math::compensated_sum(terms) / pred.len() as f64
}

fn weighted_ce(pred: &[f64], target: &[f64], p: &LossParams) -> f64 {
    let [w0, w1] = p.class_weights;
    let terms = pred.iter().zip(target).map(|(&q, &t)| {
        let q = q.clamp(p.eps, 1.0 - p.eps);
        -(w1 * t * math::ln(q) + w0 * (1.0 - t) * math::ln(1.0 - q))
    });
    math::compensated_sum(terms) / pred.len() as f64
}

/// Segmentation loss between probabilities and targets in `[0, 1]`.
/// Empty inputs give zero.
pub fn seg_loss(kind: LossKind, pred: &[f64], target: &[f64], params: &LossParams) -> Result<f64> {
    check_pair(pred, target)?;
    params.validate()?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let v = match kind {
        LossKind::WeightedCe => weighted_ce(pred, target, params),
        LossKind::Dice => dice_loss(pred, target, params.smooth),
        LossKind::Focal => focal_loss(pred, target, params),
        LossKind::Tversky => tversky_loss(pred, target, params),
        LossKind::DiceFocal => dice_loss(pred, target, params.smooth) + focal_loss(pred, target, params),
    };
    Ok(v.max(0.0))
}

/// Loss against soft pseudolabels: overlap terms see `ỹ ≥ 0.5` as hard
/// targets, cross-entropy-family terms see the soft values.
pub fn pseudo_loss(kind: LossKind, pred: &[f64], soft: &[f64], params: &LossParams) -> Result<f64> {
    check_pair(pred, soft)?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let hard: Vec<f64> = soft.iter().map(|t| if *t >= 0.5 { 1.0 } else { 0.0 }).collect();
    match kind {
        LossKind::Dice | LossKind::Tversky => seg_loss(kind, pred, &hard, params),
        LossKind::DiceFocal => {
            Ok(seg_loss(LossKind::Dice, pred, &hard, params)? + seg_loss(LossKind::Focal, pred, soft, params)?)
        }
        LossKind::WeightedCe | LossKind::Focal => seg_loss(kind, pred, soft, params),
    }
}

/// Mean binary entropy (nats) with probabilities clamped to `[eps, 1 − eps]`.
pub fn binary_entropy(pred: &[f64], eps: f64) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let terms = pred.iter().map(|&p| {
        let p = p.clamp(eps, 1.0 - eps);
        -p * math::ln(p) - (1.0 - p) * math::ln(1.0 - p)
    });
    math::compensated_sum(terms) / pred.len() as f64
}

/// Mean squared difference.
pub fn mean_squared_difference(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(math::compensated_sum(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y))) / a.len() as f64)
}

/// `λ_max · exp(−5 (1 − min(step / ramp_steps, 1))²)`.
pub fn ramp_weight(step: u64, total_ramp_steps: u64, lambda_max: f64) -> f64 {
    let total = total_ramp_steps.max(1);
    let t = (step as f64 / total as f64).min(1.0);
    let d = 1.0 - t;
    lambda_max * math::exp(-5.0 * d * d)
}

/// Predictions of the two branches on one tile, probabilities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchPair {
    y1: RasterGrid<f64>,
    y2: RasterGrid<f64>,
    valid: Vec<usize>,
}

fn check_probabilities(g: &RasterGrid<f64>, name: &str) -> Result<()> {
    for (i, v) in g.band(0).iter().enumerate() {
        if !g.is_masked(i) && !(0.0..=1.0).contains(v) {
            return Err(Error::data(format!("{name} value {v} at pixel {i} is not a probability")));
        }
    }
    Ok(())
}

impl BranchPair {
    pub fn new<T: Sample>(y1: &RasterGrid<T>, y2: &RasterGrid<T>) -> Result<Self> {
        y1.check_same_shape(y2)?;
        let y1 = y1.cast::<f64>();
        let y2 = y2.cast::<f64>();
        check_probabilities(&y1, "branch 1")?;
        check_probabilities(&y2, "branch 2")?;
        let valid = (0..y1.pixel_count())
            .filter(|i| !y1.is_masked(*i) && !y2.is_masked(*i))
            .collect();
        Ok(BranchPair { y1, y2, valid })
    }

    pub fn first(&self) -> &RasterGrid<f64> {
        &self.y1
    }

    pub fn second(&self) -> &RasterGrid<f64> {
        &self.y2
    }

    /// Valid (jointly unmasked) pixel values of both branches.
    fn valid_values(&self) -> (Vec<f64>, Vec<f64>) {
        let (a, b) = (self.y1.band(0), self.y2.band(0));
        (self.valid.iter().map(|i| a[*i]).collect(), self.valid.iter().map(|i| b[*i]).collect())
    }

    pub fn swapped(&self) -> BranchPair {
        BranchPair {
            y1: self.y2.clone(),
            y2: self.y1.clone(),
            valid: self.valid.clone(),
        }
    }
}

/// `ỹ = α·y1 + (1 − α)·y2`, masked where either branch is masked.
pub fn combine(pair: &BranchPair, alpha: f64) -> Result<RasterGrid<f64>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!("alpha must be in [0, 1], got {alpha}")));
    }
    let (a, b) = (pair.y1.band(0), pair.y2.band(0));
    let n = pair.y1.pixel_count();
    let mut values = alloc::vec![None; n];
    for &i in &pair.valid {
        values[i] = Some(if alpha == 1.0 {
            a[i]
        } else if alpha == 0.0 {
            b[i]
        } else {
            alpha * a[i] + (1.0 - alpha) * b[i]
        });
    }
    let mut out = RasterGrid::from_options(pair.y1.width(), pair.y1.height(), *pair.y1.geotransform(), &values)?;
    out.set_band_names(alloc::vec!["pseudolabel".to_string()])?;
    Ok(out)
}

/// Pseudolabel with low-confidence pixels masked out.
pub fn confident_pseudolabel(pair: &BranchPair, alpha: f64, tau: f64) -> Result<RasterGrid<f64>> {
    let mut y = combine(pair, alpha)?;
    for i in 0..y.pixel_count() {
        if !y.is_masked(i) {
            let v = y.band(0)[i];
            if v.max(1.0 - v) < tau {
                y.set_masked(i, true);
            }
        }
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DplConfig {
    pub lambda_p: f64,
    pub lambda_c_max: f64,
    pub lambda_e_max: f64,
    /// Fraction of `total_steps` spent ramping `λ_c` and `λ_e` up.
    pub ramp_fraction: f64,
    pub total_steps: u64,
    pub confidence_tau: f64,
    pub loss_kind: LossKind,
    pub loss: LossParams,
    pub rng_seed: u64,
    /// Fixed mixing weight; `None` draws `α ~ U(0, 1)` per tile.
    pub alpha: Option<f64>,
}

impl Default for DplConfig {
    fn default() -> Self {
        DplConfig {
            lambda_p: 1.0,
            lambda_c_max: 1.0,
            lambda_e_max: 0.1,
            ramp_fraction: 0.25,
            total_steps: 1000,
            confidence_tau: 0.8,
            loss_kind: LossKind::Dice,
            loss: LossParams::default(),
            rng_seed: 0,
            alpha: None,
        }
    }
}

impl DplConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.lambda_p, self.lambda_c_max, self.lambda_e_max]
            .iter()
            .any(|w| !(*w >= 0.0 && w.is_finite()))
        {
            return Err(Error::config("loss weights must be non-negative"));
        }
        if !(self.ramp_fraction > 0.0 && self.ramp_fraction <= 1.0) {
            return Err(Error::config("ramp fraction must be in (0, 1]"));
        }
        if self.total_steps == 0 {
            return Err(Error::config("total_steps must be positive"));
        }
        if !(self.confidence_tau > 0.5 && self.confidence_tau < 1.0) {
            return Err(Error::config(format!(
                "confidence threshold must be in (0.5, 1), got {}",
                self.confidence_tau
            )));
        }
        if let Some(a) = self.alpha {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::config("alpha must be in [0, 1]"));
            }
        }
        self.loss.validate()
    }

    pub fn ramp_steps(&self) -> u64 {
        (math::ceil(self.ramp_fraction * self.total_steps as f64) as u64).max(1)
    }
}

/// Labeled tile: both branch predictions and a label raster whose masked
/// pixels are unlabeled.
#[derive(Debug, Clone)]
pub struct LabeledTile {
    pub pred1: RasterGrid<f64>,
    pub pred2: RasterGrid<f64>,
    pub labels: RasterGrid<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub supervised: f64,
    /// Mean over unlabeled tiles of the summed per-branch pseudolabel losses.
    pub pseudolabel: f64,
    pub consistency: f64,
    /// Mean over unlabeled tiles of the summed per-branch entropies.
    pub entropy: f64,
    pub lambda_p: f64,
    pub lambda_c: f64,
    pub lambda_e: f64,
    pub total: f64,
    pub alphas: Vec<f64>,
    /// Fraction of unlabeled pixels passing the confidence threshold.
    pub confident_fraction: f64,
}

/// Draws the per-tile mixing weights for `step`.
pub fn draw_alphas(cfg: &DplConfig, step: u64, count: usize) -> Vec<f64> {
    match cfg.alpha {
        Some(a) => alloc::vec![a; count],
        None => {
            let mut rng = substream_rng(cfg.rng_seed, Stream::Pseudolabel, step);
            (0..count).map(|_| rng.random::<f64>()).collect()
        }
    }
}

pub fn dpl_objective(labeled: &[LabeledTile], unlabeled: &[BranchPair], cfg: &DplConfig, step: u64) -> Result<LossBreakdown> {
    cfg.validate()?;
    let mut sup_terms = Vec::new();
    for tile in labeled {
        tile.pred1.check_same_shape(&tile.labels)?;
        tile.pred2.check_same_shape(&tile.labels)?;
        let idx: Vec<usize> = (0..tile.labels.pixel_count())
            .filter(|i| !tile.labels.is_masked(*i) && !tile.pred1.is_masked(*i) && !tile.pred2.is_masked(*i))
            .collect();
        if idx.is_empty() {
            continue;
        }
        let y: Vec<f64> = idx.iter().map(|i| tile.labels.band(0)[*i]).collect();
        let p1: Vec<f64> = idx.iter().map(|i| tile.pred1.band(0)[*i]).collect();
        let p2: Vec<f64> = idx.iter().map(|i| tile.pred2.band(0)[*i]).collect();
        let l1 = seg_loss(cfg.loss_kind, &p1, &y, &cfg.loss)?;
        let l2 = seg_loss(cfg.loss_kind, &p2, &y, &cfg.loss)?;
        sup_terms.push(0.5 * (l1 + l2));
    }
    if sup_terms.is_empty() {
        return Err(Error::empty("no labeled pixels in the labeled tiles"));
    }
    let supervised = math::compensated_sum(sup_terms.iter().copied()) / sup_terms.len() as f64;

    let alphas = draw_alphas(cfg, step, unlabeled.len());
    let mut pseudo_terms = Vec::with_capacity(unlabeled.len());
    let mut cons_terms = Vec::with_capacity(unlabeled.len());
    let mut ent_terms = Vec::with_capacity(unlabeled.len());
    let mut confident = 0usize;
    let mut total_px = 0usize;
    for (pair, &alpha) in unlabeled.iter().zip(&alphas) {
        let (a, b) = pair.valid_values();
        let tilde: Vec<f64> = a.iter().zip(&b).map(|(x, y)| alpha * x + (1.0 - alpha) * y).collect();
        let keep: Vec<usize> = (0..tilde.len())
            .filter(|k| tilde[*k].max(1.0 - tilde[*k]) >= cfg.confidence_tau)
            .collect();
        confident += keep.len();
        total_px += tilde.len();
        let t: Vec<f64> = keep.iter().map(|k| tilde[*k]).collect();
        let pa: Vec<f64> = keep.iter().map(|k| a[*k]).collect();
        let pb: Vec<f64> = keep.iter().map(|k| b[*k]).collect();
        pseudo_terms.push(pseudo_loss(cfg.loss_kind, &pa, &t, &cfg.loss)? + pseudo_loss(cfg.loss_kind, &pb, &t, &cfg.loss)?);
        cons_terms.push(mean_squared_difference(&a, &b)?);
        ent_terms.push(binary_entropy(&a, cfg.loss.eps) + binary_entropy(&b, cfg.loss.eps));
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            math::compensated_sum(v.iter().copied()) / v.len() as f64
        }
    };
    let pseudolabel = mean(&pseudo_terms);
    let consistency = mean(&cons_terms);
    let entropy = mean(&ent_terms);
    let ramp = cfg.ramp_steps();
    let lambda_c = ramp_weight(step, ramp, cfg.lambda_c_max);
    let lambda_e = ramp_weight(step, ramp, cfg.lambda_e_max);
    let total = supervised + cfg.lambda_p * pseudolabel + lambda_c * consistency - lambda_e * entropy;
    if !total.is_finite() {
        return Err(Error::NonFinite("DPL objective".to_string()));
    }
    Ok(LossBreakdown {
        supervised,
        pseudolabel,
        consistency,
        entropy,
        lambda_p: cfg.lambda_p,
        lambda_c,
        lambda_e,
        total,
        alphas,
        confident_fraction: if total_px == 0 { 0.0 } else { confident as f64 / total_px as f64 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GeoTransform;
    use proptest::prelude::*;

    fn grid(values: &[f64]) -> RasterGrid<f64> {
        RasterGrid::from_data(values.len(), 1, 1, GeoTransform::unit(), values.to_vec()).unwrap()
    }

    fn pair(a: &[f64], b: &[f64]) -> BranchPair {
        BranchPair::new(&grid(a), &grid(b)).unwrap()
    }

    #[test]
    fn combine_examples() {
        let p = pair(&[0.2, 0.9], &[0.8, 0.1]);
        assert_eq!(combine(&p, 1.0).unwrap().band(0), &[0.2, 0.9]);
        let half = combine(&p, 0.5).unwrap();
        assert!((half.band(0)[0] - 0.5).abs() < 1e-15);
        assert!(combine(&p, 1.5).is_err());
        assert!(BranchPair::new(&grid(&[0.1]), &grid(&[0.1, 0.2])).is_err());
        assert!(BranchPair::new(&grid(&[1.2]), &grid(&[0.1])).is_err());
    }

    #[test]
    fn seeded_alpha_mean_is_one_half() {
        let cfg = DplConfig { rng_seed: 42, ..Default::default() };
        let alphas = draw_alphas(&cfg, 0, 10_000);
        let p = pair(&[0.0], &[1.0]);
        let mean: f64 = alphas.iter().map(|a| combine(&p, *a).unwrap().band(0)[0]).sum::<f64>() / 10_000.0;
        assert!((mean - 0.5).abs() < 0.02, "{mean}");
        assert_eq!(alphas, draw_alphas(&cfg, 0, 10_000));
        assert_ne!(alphas[..8], draw_alphas(&cfg, 1, 8)[..]);
    }

    #[test]
    fn perfect_dice_is_bounded_by_smoothing() {
        let t = [1.0, 0.0, 1.0, 1.0, 0.0];
        let sum_t: f64 = t.iter().sum();
        for s in [1.0, 0.1, 0.0] {
            let params = LossParams { smooth: s, ..Default::default() };
            let l = seg_loss(LossKind::Dice, &t, &t, &params).unwrap();
            assert!(l <= s / (sum_t * 2.0 + s) + 1e-15);
        }
        let exact = LossParams { smooth: 0.0, ..Default::default() };
        assert_eq!(seg_loss(LossKind::Dice, &t, &t, &exact).unwrap(), 0.0);
    }

    #[test]
    fn focal_matches_hand_arithmetic() {
        let p = [0.9, 0.1, 0.8, 0.2];
        let t = [1.0, 0.0, 1.0, 0.0];
        // every pixel is "correct": p_t = 0.9, 0.9, 0.8, 0.8
        let term = |pt: f64| -(1.0 - pt) * (1.0 - pt) * pt.ln();
        let expected = (2.0 * term(0.9) + 2.0 * term(0.8)) / 4.0;
        let got = seg_loss(LossKind::Focal, &p, &t, &LossParams::default()).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!((expected - 0.0049897).abs() < 1e-6);
    }

    #[test]
    fn weighted_ce_uses_class_weights() {
        let params = LossParams { class_weights: [1.0, 3.0], ..Default::default() };
        let got = seg_loss(LossKind::WeightedCe, &[0.5, 0.5], &[1.0, 0.0], &params).unwrap();
        assert!((got - (3.0 * 2f64.ln() + 2f64.ln()) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn unknown_kind_errors() {
        assert!("hinge".parse::<LossKind>().is_err());
        assert_eq!("Dice-Focal".parse::<LossKind>().unwrap(), LossKind::DiceFocal);
    }

    #[test]
    fn entropy_examples() {
        assert!((binary_entropy(&[0.5; 7], 1e-7) - 2f64.ln()).abs() < 1e-15);
        assert!(binary_entropy(&[0.0, 0.0], 1e-7) < 2e-6);
        let direct = |p: f64| -p * p.ln() - (1.0 - p) * (1.0 - p).ln();
        let h = binary_entropy(&[0.25, 0.75], 1e-7);
        assert!((h - (direct(0.25) + direct(0.75)) / 2.0).abs() < 1e-15);
        assert!((h - 0.5623).abs() < 1e-4);
    }

    #[test]
    fn consistency_examples() {
        assert_eq!(mean_squared_difference(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 0.0);
        assert_eq!(mean_squared_difference(&[0.0; 5], &[1.0; 5]).unwrap(), 1.0);
        assert!(mean_squared_difference(&[0.0; 5], &[1.0; 4]).is_err());
    }

    #[test]
    fn ramp_examples() {
        assert_eq!(ramp_weight(100, 100, 2.0), 2.0);
        assert_eq!(ramp_weight(400, 100, 2.0), 2.0);
        assert!((ramp_weight(0, 100, 1.0) - (-5.0f64).exp()).abs() < 1e-15);
        assert!((ramp_weight(0, 100, 1.0) - 0.00674).abs() < 1e-5);
        let mut prev = 0.0;
        for s in 0..150 {
            let w = ramp_weight(s, 100, 1.0);
            assert!(w >= prev);
            prev = w;
        }
    }

    fn labeled_tile() -> LabeledTile {
        let mut labels = grid(&[1.0, 0.0, 1.0, 0.0]);
        labels.set_masked(3, true);
        LabeledTile {
            pred1: grid(&[0.8, 0.3, 0.6, 0.5]),
            pred2: grid(&[0.7, 0.1, 0.9, 0.5]),
            labels,
        }
    }

    #[test]
    fn zero_weights_reduce_to_supervised() {
        let cfg = DplConfig { lambda_p: 0.0, lambda_c_max: 0.0, lambda_e_max: 0.0, ..Default::default() };
        let unl = [pair(&[0.9, 0.2], &[0.6, 0.3])];
        let b = dpl_objective(&[labeled_tile()], &unl, &cfg, 10).unwrap();
        assert_eq!(b.total, b.supervised);
        let t = labeled_tile();
        let y = [1.0, 0.0, 1.0];
        let l1 = seg_loss(LossKind::Dice, &t.pred1.band(0)[..3], &y, &cfg.loss).unwrap();
        let l2 = seg_loss(LossKind::Dice, &t.pred2.band(0)[..3], &y, &cfg.loss).unwrap();
        assert_eq!(b.supervised, 0.5 * (l1 + l2));
    }

    #[test]
    fn identical_branches_hand_computation() {
        let cfg = DplConfig {
            confidence_tau: 0.7,
            loss_kind: LossKind::Focal,
            lambda_p: 1.5,
            lambda_c_max: 0.0,
            lambda_e_max: 0.0,
            ..Default::default()
        };
        let unl = [pair(&[0.9, 0.9], &[0.9, 0.9])];
        let b = dpl_objective(&[labeled_tile()], &unl, &cfg, 0).unwrap();
        assert_eq!(b.consistency, 0.0);
        let single = seg_loss(LossKind::Focal, &[0.9, 0.9], &[0.9, 0.9], &cfg.loss).unwrap();
        assert!((b.pseudolabel - 2.0 * single).abs() < 1e-15);
        assert!((b.total - b.supervised - 1.5 * 2.0 * single).abs() < 1e-15);
    }

    #[test]
    fn strict_threshold_masks_everything() {
        let cfg = DplConfig { confidence_tau: 0.95, ..Default::default() };
        let unl = [pair(&[0.8, 0.8], &[0.8, 0.8])];
        let b = dpl_objective(&[labeled_tile()], &unl, &cfg, 0).unwrap();
        assert_eq!(b.pseudolabel, 0.0);
        assert_eq!(b.confident_fraction, 0.0);
    }

    #[test]
    fn no_labeled_pixels_is_an_error() {
        let mut t = labeled_tile();
        for i in 0..4 {
            t.labels.set_masked(i, true);
        }
        assert!(matches!(
            dpl_objective(&[t], &[], &DplConfig::default(), 0),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(DplConfig { confidence_tau: 0.5, ..Default::default() }.validate().is_err());
        assert!(DplConfig { lambda_p: -1.0, ..Default::default() }.validate().is_err());
        assert!(DplConfig { ramp_fraction: 0.0, ..Default::default() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn combine_is_exchange_symmetric(
            a in proptest::collection::vec(0.0f64..=1.0, 6),
            b in proptest::collection::vec(0.0f64..=1.0, 6),
            alpha in 0.0f64..=1.0,
        ) {
            let p = pair(&a, &b);
            let x = combine(&p, alpha).unwrap();
            let y = combine(&p.swapped(), 1.0 - alpha).unwrap();
            for (u, v) in x.band(0).iter().zip(y.band(0)) {
                prop_assert!((u - v).abs() < 1e-15);
            }
        }

        #[test]
        fn losses_are_nonnegative_and_tversky_half_is_dice(
            p in proptest::collection::vec(0.0f64..=1.0, 1..40),
            seed in any::<u64>(),
        ) {
            let t: Vec<f64> = p.iter().enumerate().map(|(i, _)| ((seed >> (i % 64)) & 1) as f64).collect();
            let params = LossParams::default();
            for kind in [LossKind::WeightedCe, LossKind::Dice, LossKind::DiceFocal, LossKind::Focal, LossKind::Tversky] {
                prop_assert!(seg_loss(kind, &p, &t, &params).unwrap() >= 0.0);
            }
            let s0 = LossParams { smooth: 0.0, tversky_alpha: 0.5, tversky_beta: 0.5, ..Default::default() };
            if p.iter().sum::<f64>() + t.iter().sum::<f64>() > 0.0 {
                let d = seg_loss(LossKind::Dice, &p, &t, &s0).unwrap();
                let tv = seg_loss(LossKind::Tversky, &p, &t, &s0).unwrap();
                prop_assert!((d - tv).abs() < 1e-12);
            }
        }

        #[test]
        fn objective_is_linear_in_weights(
            lp in 0.0f64..2.0, lc in 0.0f64..2.0, le in 0.0f64..2.0, step in 0u64..400,
            u in proptest::collection::vec(0.0f64..=1.0, 8),
        ) {
            let unl = [pair(&u[..4], &u[4..])];
            let base = DplConfig { lambda_p: lp, lambda_c_max: lc, lambda_e_max: le, rng_seed: 7, ..Default::default() };
            let b0 = dpl_objective(&[labeled_tile()], &unl, &base, step).unwrap();
            let h = 1e-3;
            let bp = dpl_objective(&[labeled_tile()], &unl, &DplConfig { lambda_p: lp + h, ..base.clone() }, step).unwrap();
            prop_assert!(((bp.total - b0.total) / h - b0.pseudolabel).abs() < 1e-9);
            let bc = dpl_objective(&[labeled_tile()], &unl, &DplConfig { lambda_c_max: lc + h, ..base.clone() }, step).unwrap();
            let ramp_c = ramp_weight(step, base.ramp_steps(), 1.0);
            prop_assert!(((bc.total - b0.total) / h - ramp_c * b0.consistency).abs() < 1e-9);
            let be = dpl_objective(&[labeled_tile()], &unl, &DplConfig { lambda_e_max: le + h, ..base.clone() }, step).unwrap();
            prop_assert!(((be.total - b0.total) / h + ramp_c * b0.entropy).abs() < 1e-9);
            prop_assert!(be.total <= b0.total);
        }
    }
}
