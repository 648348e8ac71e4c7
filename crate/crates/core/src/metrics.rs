//! Ranking, overlap and calibration metrics for probability surfaces.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{Polarity, SiteRecord};
use crate::math;
use crate::raster::{RasterGrid, Sample};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_BINS: usize = 6;
pub const DENSITY_BINS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub score: f64,
    pub positive: bool,
    pub find_count: Option<u32>,
}

impl ScoredSample {
    pub fn new(score: f64, positive: bool) -> Self {
        ScoredSample {
            score,
            positive,
            find_count: None,
        }
    }
}

fn check_scores(scores: impl IntoIterator<Item = f64>) -> Result<()> {
    for s in scores {
        if !s.is_finite() {
            return Err(Error::NonFinite(format!("score {s}")));
        }
    }
    Ok(())
}

/// 1-based midranks; tied values share the mean of their ranks.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|a, b| values[*a].total_cmp(&values[*b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Mann–Whitney AUROC with ties counted one half.
pub fn auroc_scores(positives: &[f64], negatives: &[f64]) -> Result<f64> {
    if positives.is_empty() {
        return Err(Error::MissingClass("positive"));
    }
    if negatives.is_empty() {
        return Err(Error::MissingClass("negative"));
    }
    check_scores(positives.iter().chain(negatives).copied())?;
    let all: Vec<f64> = positives.iter().chain(negatives).copied().collect();
    let ranks = midranks(&all);
    let np = positives.len() as f64;
    let rank_sum: f64 = ranks[..positives.len()].iter().sum();
    let u = rank_sum - np * (np + 1.0) / 2.0;
    Ok(u / (np * negatives.len() as f64))
}

pub fn auroc(samples: &[ScoredSample]) -> Result<f64> {
    let (pos, neg) = split_scores(samples);
    auroc_scores(&pos, &neg)
}

fn split_scores(samples: &[ScoredSample]) -> (Vec<f64>, Vec<f64>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for s in samples {
        if s.positive {
            pos.push(s.score);
        } else {
            neg.push(s.score);
        }
    }
    (pos, neg)
}

/// Area under the lift curve: the population is every scored item
/// (known positives and unlabeled), the curve plots recall of the known
/// positives against the fraction of the population ranked above each
/// threshold. Tied thresholds are joined linearly.
pub fn aul(positives: &[f64], unlabeled: &[f64]) -> Result<f64> {
    if positives.is_empty() {
        return Err(Error::MissingClass("positive"));
    }
    check_scores(positives.iter().chain(unlabeled).copied())?;
    let all: Vec<f64> = positives.iter().chain(unlabeled).copied().collect();
    let ranks = midranks(&all);
    let np = positives.len() as f64;
    let rank_sum: f64 = ranks[..positives.len()].iter().sum();
    Ok((rank_sum - np / 2.0) / (np * all.len() as f64))
}

/// `0.5·α + (1 − α)·AUROC`.
pub fn aul_identity(auroc: f64, prior: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&prior) {
        return Err(Error::config(format!("class prior must be in [0, 1], got {prior}")));
    }
    Ok(0.5 * prior + (1.0 - prior) * auroc)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapMetrics {
    pub dice: f64,
    pub iou: f64,
    pub f1: f64,
    pub accuracy: f64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    /// Overlap metrics of the positive class. With no positives predicted or
    /// present, Dice, IoU and F1 are 1 (nothing to miss).
    pub fn metrics(&self) -> Result<OverlapMetrics> {
        if self.total() == 0 {
            return Err(Error::empty("no labeled pixels"));
        }
        let (tp, fp, fn_, tn) = (self.tp as f64, self.fp as f64, self.fn_ as f64, self.tn as f64);
        let union = tp + fp + fn_;
        let (dice, iou, f1) = if union == 0.0 {
            (1.0, 1.0, 1.0)
        } else {
            let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            (2.0 * tp / (2.0 * tp + fp + fn_), tp / union, f1)
        };
        Ok(OverlapMetrics {
            dice,
            iou,
            f1,
            accuracy: (tp + tn) / (tp + fp + fn_ + tn),
        })
    }
}

/// Confusion counts over pixels labeled in `labels` (unmasked, 1 positive,
/// anything else negative) and unmasked in `pred`.
pub fn confusion_counts<T: Sample, U: Sample>(pred: &RasterGrid<T>, labels: &RasterGrid<U>, threshold: f64) -> Result<ConfusionCounts> {
    pred.check_same_shape(labels)?;
    let mut counts = ConfusionCounts::default();
    let (p, l) = (pred.band(0), labels.band(0));
    for i in 0..pred.pixel_count() {
        if labels.is_masked(i) || pred.is_masked(i) {
            continue;
        }
        counts.record(p[i].to_f64() >= threshold, l[i].to_f64() >= 0.5);
    }
    Ok(counts)
}

pub fn confusion_metrics<T: Sample, U: Sample>(pred: &RasterGrid<T>, labels: &RasterGrid<U>, threshold: f64) -> Result<OverlapMetrics> {
    confusion_counts(pred, labels, threshold)?.metrics()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub positives: usize,
    /// `None` for empty bins.
    pub positive_ratio: Option<f64>,
    pub mean_score: Option<f64>,
    pub calibration_gap: Option<f64>,
}

/// Equal-width bin of `score` on `[0, 1]`: half-open `[k/n, (k+1)/n)` with
/// the last bin closed.
pub fn bin_index(score: f64, n_bins: usize) -> usize {
    let mut k = math::floor(score * n_bins as f64).max(0.0) as usize;
    k = k.min(n_bins - 1);
    // correct floating-point misses against the edges k/n
    while k + 1 < n_bins && score >= (k + 1) as f64 / n_bins as f64 {
        k += 1;
    }
    while k > 0 && score < k as f64 / n_bins as f64 {
        k -= 1;
    }
    k
}

pub fn bin_analysis(samples: &[ScoredSample], n_bins: usize) -> Result<Vec<BinStat>> {
    if n_bins < 2 {
        return Err(Error::config(format!("need at least 2 bins, got {n_bins}")));
    }
    check_scores(samples.iter().map(|s| s.score))?;
    if let Some(s) = samples.iter().find(|s| !(0.0..=1.0).contains(&s.score)) {
        return Err(Error::data(format!("score {} outside [0, 1]", s.score)));
    }
    let mut count = vec![0usize; n_bins];
    let mut pos = vec![0usize; n_bins];
    let mut sums = vec![0.0f64; n_bins];
    for s in samples {
        let k = bin_index(s.score, n_bins);
        count[k] += 1;
        sums[k] += s.score;
        if s.positive {
            pos[k] += 1;
        }
    }
    Ok((0..n_bins)
        .map(|k| {
            let (ratio, mean, gap) = if count[k] == 0 {
                (None, None, None)
            } else {
                let r = pos[k] as f64 / count[k] as f64;
                let m = sums[k] / count[k] as f64;
                (Some(r), Some(m), Some((m - r).abs()))
            };
            BinStat {
                lo: k as f64 / n_bins as f64,
                hi: (k + 1) as f64 / n_bins as f64,
                count: count[k],
                positives: pos[k],
                positive_ratio: ratio,
                mean_score: mean,
                calibration_gap: gap,
            }
        })
        .collect())
}

/// The five radar axes, in plotting order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarMetrics {
    pub accuracy: f64,
    pub auroc: f64,
    pub f1: f64,
    pub dice: f64,
    pub iou: f64,
}

impl RadarMetrics {
    pub fn axes(&self) -> [f64; 5] {
        [self.accuracy, self.auroc, self.f1, self.dice, self.iou]
    }

    /// Area of the radar polygon with equally spaced axes.
    pub fn area(&self) -> f64 {
        let r = self.axes();
        let wedge = 0.5 * math::sin(2.0 * core::f64::consts::PI / r.len() as f64);
        wedge * (0..r.len()).map(|i| r[i] * r[(i + 1) % r.len()]).sum::<f64>()
    }
}

/// Relative radar-area change of `report` over `baseline`.
pub fn volume_gain(report: &RadarMetrics, baseline: &RadarMetrics) -> Result<f64> {
    let base = baseline.area();
    if base == 0.0 {
        return Err(Error::Undefined("baseline radar area is zero".to_string()));
    }
    Ok((report.area() - base) / base)
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / math::sqrt(saa * sbb)).clamp(-1.0, 1.0))
}

/// Spearman correlation between score and find count over the samples that
/// carry a count.
pub fn find_count_correlation(samples: &[ScoredSample]) -> Result<f64> {
    let (scores, counts): (Vec<f64>, Vec<f64>) = samples
        .iter()
        .filter_map(|s| s.find_count.map(|c| (s.score, c as f64)))
        .unzip();
    if scores.len() < 3 {
        return Err(Error::empty(format!("need at least 3 samples with find counts, got {}", scores.len())));
    }
    check_scores(scores.iter().copied())?;
    pearson(&midranks(&scores), &midranks(&counts))
        .ok_or_else(|| Error::Undefined("rank correlation of constant input".to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityCurve {
    pub centers: Vec<f64>,
    pub counts: Vec<usize>,
    /// Histogram density (integrates to 1 over `[0, 1]`).
    pub histogram: Vec<f64>,
    /// Gaussian KDE evaluated at the bin centres.
    pub kde: Vec<f64>,
    pub bandwidth: f64,
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = math::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Silverman's rule `0.9·min(sd, IQR/1.34)·n^(−1/5)`, falling back to the
/// standard deviation when the IQR vanishes.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = math::sqrt(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64);
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * math::powf(n as f64, -0.2)
}

/// Histogram and KDE of scores on `[0, 1]`. A degenerate bandwidth is
/// replaced by one bin width.
pub fn density_curve(scores: &[f64], bins: usize) -> Result<DensityCurve> {
    if bins == 0 {
        return Err(Error::config("density needs at least one bin"));
    }
    if scores.is_empty() {
        return Err(Error::empty("no scores for density"));
    }
    check_scores(scores.iter().copied())?;
    let width = 1.0 / bins as f64;
    let mut counts = vec![0usize; bins];
    for &s in scores {
        counts[bin_index(s.clamp(0.0, 1.0), bins.max(2)).min(bins - 1)] += 1;
    }
    let n = scores.len() as f64;
    let centers: Vec<f64> = (0..bins).map(|k| (k as f64 + 0.5) * width).collect();
    let histogram = counts.iter().map(|c| *c as f64 / (n * width)).collect();
    let mut h = silverman_bandwidth(scores);
    if !(h > 1e-9) {
        h = width;
    }
    let norm = 1.0 / (n * h * math::sqrt(2.0 * core::f64::consts::PI));
    let kde = centers
        .iter()
        .map(|c| {
            norm * scores
                .iter()
                .map(|s| {
                    let z = (c - s) / h;
                    math::exp(-0.5 * z * z)
                })
                .sum::<f64>()
        })
        .collect();
    Ok(DensityCurve {
        centers,
        counts,
        histogram,
        kde,
        bandwidth: h,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeGain {
    pub baseline: String,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub auroc: f64,
    pub aul: f64,
    pub dice: f64,
    pub iou: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub confusion: ConfusionCounts,
    pub bins: Vec<BinStat>,
    pub density: DensityCurve,
    pub find_count_spearman: Option<f64>,
    pub volume_gain: Option<VolumeGain>,
    pub metadata: BTreeMap<String, String>,
}

impl MetricsReport {
    pub fn radar(&self) -> RadarMetrics {
        RadarMetrics {
            accuracy: self.accuracy,
            auroc: self.auroc,
            f1: self.f1,
            dice: self.dice,
            iou: self.iou,
        }
    }

    pub fn set_baseline(&mut self, name: impl Into<String>, baseline: &MetricsReport) -> Result<()> {
        let gain = volume_gain(&self.radar(), &baseline.radar())?;
        self.volume_gain = Some(VolumeGain {
            baseline: name.into(),
            gain,
        });
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateConfig {
    pub threshold: f64,
    pub bins: usize,
    pub density_bins: usize,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            threshold: 0.5,
            bins: DEFAULT_BINS,
            density_bins: DENSITY_BINS,
        }
    }
}

/// Site-level samples: the surface value at each labeled site's pixel.
/// Sites outside the grid or on masked pixels are skipped.
pub fn site_samples<T: Sample>(pred: &RasterGrid<T>, sites: &[SiteRecord]) -> Vec<ScoredSample> {
    sites
        .iter()
        .filter(|s| s.polarity != Polarity::Unlabeled)
        .filter_map(|s| {
            let (r, c) = pred.geotransform().pixel_of(s.x, s.y, pred.width(), pred.height())?;
            let score = pred.value(0, r, c)?;
            Some(ScoredSample {
                score,
                positive: s.polarity == Polarity::Positive,
                find_count: s.find_count,
            })
        })
        .collect()
}

/// Full report for one surface against a label raster (1 positive, 0
/// negative, masked unlabeled) and the site table.
///
/// AUROC and the overlap metrics use labeled pixels, AUL ranks positive
/// pixels against every other valid pixel, and the calibration bins and
/// find-count correlation use site-level samples.
pub fn evaluate<T: Sample, U: Sample>(
    pred: &RasterGrid<T>,
    labels: &RasterGrid<U>,
    sites: &[SiteRecord],
    cfg: &EvaluateConfig,
) -> Result<MetricsReport> {
    pred.check_same_shape(labels)?;
    let (p, l) = (pred.band(0), labels.band(0));
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    let mut unl = Vec::new();
    let mut all = Vec::new();
    for i in 0..pred.pixel_count() {
        if pred.is_masked(i) {
            continue;
        }
        let s = p[i].to_f64();
        all.push(s);
        if labels.is_masked(i) {
            unl.push(s);
        } else if l[i].to_f64() >= 0.5 {
            pos.push(s);
        } else {
            neg.push(s);
            unl.push(s);
        }
    }
    let auroc = auroc_scores(&pos, &neg)?;
    let aul = aul(&pos, &unl)?;
    let confusion = confusion_counts(pred, labels, cfg.threshold)?;
    let overlap = confusion.metrics()?;
    let samples = site_samples(pred, sites);
    let bins = bin_analysis(&samples, cfg.bins)?;
    let density = density_curve(&all, cfg.density_bins)?;
    let find_count_spearman = find_count_correlation(&samples).ok();
    let mut metadata = BTreeMap::new();
    metadata.insert("bins".to_string(), "equal-width, half-open, last bin closed".to_string());
    metadata.insert(
        "volume_gain".to_string(),
        "relative radar-polygon area, axes accuracy/auroc/f1/dice/iou".to_string(),
    );
    metadata.insert("threshold".to_string(), format!("{}", cfg.threshold));
    Ok(MetricsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        auroc,
        aul,
        dice: overlap.dice,
        iou: overlap.iou,
        f1: overlap.f1,
        accuracy: overlap.accuracy,
        confusion,
        bins,
        density,
        find_count_spearman,
        volume_gain: None,
        metadata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GeoTransform;
    use proptest::prelude::*;

    fn pair_count_auroc(pos: &[f64], neg: &[f64]) -> f64 {
        let mut wins = 0.0;
        for p in pos {
            for n in neg {
                if p > n {
                    wins += 1.0;
                } else if p == n {
                    wins += 0.5;
                }
            }
        }
        wins / (pos.len() * neg.len()) as f64
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc_scores(&[0.9, 0.8], &[0.1, 0.2]).unwrap(), 1.0);
        assert_eq!(auroc_scores(&[0.5; 3], &[0.5; 4]).unwrap(), 0.5);
        assert_eq!(auroc_scores(&[0.9, 0.4], &[0.6, 0.1]).unwrap(), 0.75);
        assert_eq!(auroc_scores(&[0.3], &[]), Err(Error::MissingClass("negative")));
        assert_eq!(auroc_scores(&[], &[0.3]), Err(Error::MissingClass("positive")));
    }

    #[test]
    fn midranks_hand_example() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn aul_identity_examples() {
        assert_eq!(aul_identity(0.8, 0.0).unwrap(), 0.8);
        assert_eq!(aul_identity(0.5, 0.37).unwrap(), 0.5);
        assert!((aul_identity(0.75, 0.2).unwrap() - 0.7).abs() < 1e-15);
        assert!(aul(&[], &[0.2]).is_err());
    }

    #[test]
    fn aul_equals_identity_on_constructed_pool() {
        // 2 positives, 8 negatives: every positive beats 6 of the 8 negatives
        let pos = [0.9, 0.7];
        let neg = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.8, 0.95];
        let auc = auroc_scores(&pos, &neg).unwrap();
        assert_eq!(auc, pair_count_auroc(&pos, &neg));
        let direct = aul(&pos, &neg).unwrap();
        assert!((direct - aul_identity(auc, 0.2).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn confusion_examples() {
        let c = ConfusionCounts { tp: 3, fp: 1, fn_: 1, tn: 5 };
        let m = c.metrics().unwrap();
        assert!((m.dice - 0.75).abs() < 1e-15);
        assert!((m.iou - 0.6).abs() < 1e-15);
        assert!((m.accuracy - 0.8).abs() < 1e-15);
        assert!((m.f1 - m.dice).abs() < 1e-15);
        assert!(ConfusionCounts::default().metrics().is_err());
    }

    #[test]
    fn raster_confusion_uses_labeled_pixels_only() {
        let gt = GeoTransform::unit();
        let pred = RasterGrid::from_data(4, 1, 1, gt, vec![0.9f64, 0.1, 0.8, 0.7]).unwrap();
        let labels = RasterGrid::from_parts(4, 1, 1, gt, vec![1.0f32, 0.0, 0.0, 0.0], vec![false, false, true, true]).unwrap();
        let m = confusion_metrics(&pred, &labels, 0.5).unwrap();
        assert_eq!(m.dice, 1.0);
        assert_eq!(m.accuracy, 1.0);
        let flipped = RasterGrid::from_data(4, 1, 1, gt, vec![0.1f64, 0.9, 0.8, 0.7]).unwrap();
        assert_eq!(confusion_metrics(&flipped, &labels, 0.5).unwrap().dice, 0.0);
        let none = RasterGrid::from_parts(4, 1, 1, gt, vec![0.0f32; 4], vec![true; 4]).unwrap();
        assert!(matches!(confusion_metrics(&pred, &none, 0.5), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn bin_edges_go_up() {
        assert_eq!(bin_index(0.5, 6), 3);
        assert_eq!(bin_index(1.0 / 6.0, 6), 1);
        assert_eq!(bin_index(1.0, 6), 5);
        assert_eq!(bin_index(0.0, 6), 0);
        for k in 1..6 {
            assert_eq!(bin_index(k as f64 / 6.0, 6), k);
        }
    }

    #[test]
    fn bin_analysis_examples() {
        let samples = vec![ScoredSample::new(0.99, true); 10];
        let bins = bin_analysis(&samples, 6).unwrap();
        assert_eq!(bins[5].positive_ratio, Some(1.0));
        assert!((bins[5].calibration_gap.unwrap() - 0.01).abs() < 1e-12);
        assert!(bins[..5].iter().all(|b| b.count == 0 && b.positive_ratio.is_none()));
        assert!(bin_analysis(&samples, 1).is_err());
    }

    #[test]
    fn radar_area_matches_shoelace() {
        let a = RadarMetrics { accuracy: 0.9, auroc: 0.8, f1: 0.5, dice: 0.6, iou: 0.4 };
        let b = RadarMetrics { accuracy: 0.7, auroc: 0.75, f1: 0.3, dice: 0.35, iou: 0.2 };
        let shoelace = |m: &RadarMetrics| {
            let r = m.axes();
            let pts: Vec<(f64, f64)> = (0..5)
                .map(|i| {
                    let t = core::f64::consts::FRAC_PI_2 - 2.0 * core::f64::consts::PI * i as f64 / 5.0;
                    (r[i] * t.cos(), r[i] * t.sin())
                })
                .collect();
            let mut s = 0.0;
            for i in 0..5 {
                let (x0, y0) = pts[i];
                let (x1, y1) = pts[(i + 1) % 5];
                s += x0 * y1 - x1 * y0;
            }
            s.abs() / 2.0
        };
        assert!((a.area() - shoelace(&a)).abs() < 1e-12);
        let gain = volume_gain(&a, &b).unwrap();
        assert!((gain - (shoelace(&a) - shoelace(&b)) / shoelace(&b)).abs() < 1e-12);
        assert_eq!(volume_gain(&a, &a).unwrap(), 0.0);
        let doubled = RadarMetrics { accuracy: 1.8, auroc: 1.6, f1: 1.0, dice: 1.2, iou: 0.8 };
        assert!((volume_gain(&doubled, &a).unwrap() - 3.0).abs() < 1e-12);
        let zero = RadarMetrics { accuracy: 0.0, auroc: 0.0, f1: 0.0, dice: 0.0, iou: 0.0 };
        assert!(volume_gain(&a, &zero).is_err());
    }

    fn with_counts(pairs: &[(f64, u32)]) -> Vec<ScoredSample> {
        pairs
            .iter()
            .map(|(s, c)| ScoredSample { score: *s, positive: true, find_count: Some(*c) })
            .collect()
    }

    #[test]
    fn spearman_examples() {
        let up = with_counts(&[(0.1, 1), (0.4, 3), (0.5, 7), (0.9, 12)]);
        assert!((find_count_correlation(&up).unwrap() - 1.0).abs() < 1e-12);
        let down = with_counts(&[(0.1, 12), (0.4, 7), (0.5, 3), (0.9, 1)]);
        assert!((find_count_correlation(&down).unwrap() + 1.0).abs() < 1e-12);
        // scores ranks 1..5; counts [2,5,5,1,9] -> midranks [2,3.5,3.5,1,5]
        // mean 3, rank deviations x=[-2,-1,0,1,2], y=[-1,0.5,0.5,-2,2]
        // sxy = 2-0.5+0-2+4 = 3.5, sxx = 10, syy = 1+0.25+0.25+4+4 = 9.5
        let tie = with_counts(&[(0.1, 2), (0.2, 5), (0.3, 5), (0.4, 1), (0.5, 9)]);
        let expected = 3.5 / (10.0f64 * 9.5).sqrt();
        assert!((find_count_correlation(&tie).unwrap() - expected).abs() < 1e-12);
        let flat = with_counts(&[(0.1, 2), (0.2, 2), (0.3, 2)]);
        assert!(matches!(find_count_correlation(&flat), Err(Error::Undefined(_))));
        assert!(find_count_correlation(&up[..2]).is_err());
    }

    #[test]
    fn density_integrates_to_one() {
        let scores: Vec<f64> = (0..500).map(|i| ((i * 37) % 500) as f64 / 500.0).collect();
        let d = density_curve(&scores, 100).unwrap();
        assert_eq!(d.counts.iter().sum::<usize>(), 500);
        let area: f64 = d.histogram.iter().sum::<f64>() / 100.0;
        assert!((area - 1.0).abs() < 1e-12);
        assert!(d.bandwidth > 0.0);
        let constant = density_curve(&[0.3; 10], 100).unwrap();
        assert_eq!(constant.bandwidth, 0.01);
    }

    proptest! {
        #[test]
        fn auroc_matches_pair_counting(
            pos in proptest::collection::vec(0u8..20, 1..40),
            neg in proptest::collection::vec(0u8..20, 1..40),
        ) {
            let p: Vec<f64> = pos.iter().map(|v| *v as f64 / 19.0).collect();
            let n: Vec<f64> = neg.iter().map(|v| *v as f64 / 19.0).collect();
            let a = auroc_scores(&p, &n).unwrap();
            prop_assert!((a - pair_count_auroc(&p, &n)).abs() < 1e-12);
            prop_assert!((a + auroc_scores(&n, &p).unwrap() - 1.0).abs() < 1e-12);
            let cubed: Vec<f64> = p.iter().map(|v| v * v * v + 2.0).collect();
            let ncubed: Vec<f64> = n.iter().map(|v| v * v * v + 2.0).collect();
            prop_assert!((a - auroc_scores(&cubed, &ncubed).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn dice_iou_identity(tp in 0u64..1000, fp in 0u64..1000, fn_ in 0u64..1000, tn in 0u64..1000) {
            prop_assume!(tp + fp + fn_ + tn > 0);
            let m = ConfusionCounts { tp, fp, fn_, tn }.metrics().unwrap();
            prop_assert!((m.dice - 2.0 * m.iou / (1.0 + m.iou)).abs() < 1e-12);
        }

        #[test]
        fn bins_partition_samples(scores in proptest::collection::vec(0.0f64..=1.0, 0..200), n in 2usize..12) {
            let samples: Vec<ScoredSample> = scores.iter().enumerate().map(|(i, s)| ScoredSample::new(*s, i % 3 == 0)).collect();
            let bins = bin_analysis(&samples, n).unwrap();
            prop_assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), samples.len());
            for b in &bins {
                if let Some(r) = b.positive_ratio {
                    prop_assert!((0.0..=1.0).contains(&r));
                }
            }
        }
    }
}
