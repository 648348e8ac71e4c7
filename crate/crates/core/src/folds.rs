//! Site-level k-fold splitting balanced on catchment statistics, and the
//! mapping of site folds onto tile windows.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{for_each_disk_pixel, SiteRecord};
use crate::math;
use crate::raster::{RasterGrid, Sample};
use crate::rng::{substream_rng, Stream};
use crate::tiling::TileWindow;

/// Largest supported fold count (one bit per fold plus one for unattributed labels).
pub const MAX_FOLDS: usize = 63;

/// Per-site summary: `[mean_0, sd_0, mean_1, sd_1, …, label_density, positive_ratio]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratVector {
    pub site_id: String,
    pub components: Vec<f64>,
}

/// Component names matching [`site_strat_vector`] for a stack with `bands` bands.
pub fn strat_component_names(bands: usize) -> Vec<String> {
    let mut names = Vec::with_capacity(2 * bands + 2);
    for b in 0..bands {
        names.push(format!("band{b}_mean"));
        names.push(format!("band{b}_sd"));
    }
    names.push("label_density".to_string());
    names.push("positive_ratio".to_string());
    names
}

/// Catchment statistics of one site. Label density is the labeled share of
/// catchment pixels, positive ratio the positive share of labeled ones (0
/// when none are labeled). Standard deviations are population values.
pub fn site_strat_vector<T: Sample, U: Sample>(
    site: &SiteRecord,
    stack: &RasterGrid<T>,
    labels: &RasterGrid<U>,
    radius: f64,
) -> Result<StratVector> {
    stack.check_same_shape(labels)?;
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(Error::config(format!("catchment radius must be >= 0, got {radius}")));
    }
    let bands = stack.bands();
    let mut sum = vec![0.0; bands];
    let mut sq = vec![0.0; bands];
    let (mut n, mut labeled, mut positive) = (0usize, 0usize, 0usize);
    let lab = labels.band(0);
    for_each_disk_pixel(stack, site.x, site.y, radius, |r, c| {
        let i = stack.index(r, c);
        if stack.is_masked(i) {
            return;
        }
        n += 1;
        for b in 0..bands {
            let v = stack.get(b, r, c).to_f64();
            sum[b] += v;
            sq[b] += v * v;
        }
        if !labels.is_masked(i) {
            labeled += 1;
            if lab[i].to_f64() >= 0.5 {
                positive += 1;
            }
        }
    });
    if n == 0 {
        return Err(Error::EmptyCatchment {
            site_id: site.site_id.clone(),
        });
    }
    let nf = n as f64;
    let mut components = Vec::with_capacity(2 * bands + 2);
    for b in 0..bands {
        let mean = sum[b] / nf;
        components.push(mean);
        components.push(math::sqrt((sq[b] / nf - mean * mean).max(0.0)));
    }
    components.push(labeled as f64 / nf);
    components.push(if labeled == 0 { 0.0 } else { positive as f64 / labeled as f64 });
    if components.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite(format!("strat vector of site `{}`", site.site_id)));
    }
    Ok(StratVector {
        site_id: site.site_id.clone(),
        components,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FoldStrategy {
    Stratified,
    Uniform,
}

impl FromStr for FoldStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "stratified" => Ok(FoldStrategy::Stratified),
            "uniform" => Ok(FoldStrategy::Uniform),
            other => Err(Error::config(format!("unknown fold strategy `{other}`"))),
        }
    }
}

impl fmt::Display for FoldStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FoldStrategy::Stratified => "stratified",
            FoldStrategy::Uniform => "uniform",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub strategy: FoldStrategy,
    pub seed: u64,
    /// Site IDs in input order.
    pub site_ids: Vec<String>,
    /// Fold index per site, aligned with `site_ids`.
    pub folds: Vec<usize>,
    pub fold_sizes: Vec<usize>,
    /// Per-fold mean of the standardized strat vectors (empty without vectors).
    pub fold_means: Vec<Vec<f64>>,
    pub imbalance: Option<f64>,
    pub metadata: BTreeMap<String, String>,
}

impl FoldAssignment {
    pub fn fold_of(&self, site_id: &str) -> Option<usize> {
        self.site_ids.iter().position(|s| s == site_id).map(|i| self.folds[i])
    }

    pub fn members(&self, fold: usize) -> Vec<&str> {
        self.site_ids
            .iter()
            .zip(&self.folds)
            .filter(|(_, f)| **f == fold)
            .map(|(s, _)| s.as_str())
            .collect()
    }
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::config(format!("k must be at least 2, got {k}")));
    }
    if k > MAX_FOLDS {
        return Err(Error::config(format!("k must be at most {MAX_FOLDS}, got {k}")));
    }
    if k > n {
        return Err(Error::config(format!("k = {k} exceeds the number of sites ({n})")));
    }
    Ok(())
}

fn check_unique(ids: &[String]) -> Result<()> {
    let mut sorted: Vec<&String> = ids.iter().collect();
    sorted.sort();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::data(format!("duplicate site id `{}`", w[0])));
    }
    Ok(())
}

/// Zero-mean, unit-variance components; constant components become 0.
pub fn standardize(vectors: &[StratVector]) -> Result<Vec<Vec<f64>>> {
    let Some(first) = vectors.first() else {
        return Ok(Vec::new());
    };
    let d = first.components.len();
    if let Some(v) = vectors.iter().find(|v| v.components.len() != d) {
        return Err(Error::ShapeMismatch {
            expected: format!("{d} components"),
            found: format!("{} for site `{}`", v.components.len(), v.site_id),
        });
    }
    let n = vectors.len() as f64;
    let mut out: Vec<Vec<f64>> = vectors.iter().map(|v| v.components.clone()).collect();
    for j in 0..d {
        let mean = out.iter().map(|v| v[j]).sum::<f64>() / n;
        let var = out.iter().map(|v| (v[j] - mean) * (v[j] - mean)).sum::<f64>() / n;
        let sd = math::sqrt(var);
        for v in out.iter_mut() {
            v[j] = if sd > 0.0 { (v[j] - mean) / sd } else { 0.0 };
        }
    }
    Ok(out)
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

struct FoldSums {
    sums: Vec<Vec<f64>>,
    sizes: Vec<usize>,
    n: usize,
}

impl FoldSums {
    fn new(k: usize, d: usize, n: usize) -> Self {
        FoldSums {
            sums: vec![vec![0.0; d]; k],
            sizes: vec![0; k],
            n,
        }
    }

    fn from_assignment(z: &[Vec<f64>], folds: &[usize], k: usize) -> Self {
        let d = z.first().map_or(0, Vec::len);
        let mut s = FoldSums::new(k, d, z.len());
        for (v, &f) in z.iter().zip(folds) {
            s.add(f, v);
        }
        s
    }

    fn add(&mut self, f: usize, v: &[f64]) {
        for (a, b) in self.sums[f].iter_mut().zip(v) {
            *a += b;
        }
        self.sizes[f] += 1;
    }

    fn fold_cost(sum: &[f64], size: usize) -> f64 {
        if size == 0 {
            0.0
        } else {
            norm2(sum) / size as f64
        }
    }

    fn imbalance(&self) -> f64 {
        let total: f64 = (0..self.sizes.len())
            .map(|f| Self::fold_cost(&self.sums[f], self.sizes[f]))
            .sum();
        total / self.n.max(1) as f64
    }
}

/// `Σ_f n_f·‖mean_f‖² / n` over standardized vectors.
pub fn assignment_imbalance(vectors: &[StratVector], folds: &[usize], k: usize) -> Result<f64> {
    if folds.len() != vectors.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} fold indices", vectors.len()),
            found: format!("{}", folds.len()),
        });
    }
    if let Some(f) = folds.iter().find(|f| **f >= k) {
        return Err(Error::config(format!("fold index {f} out of range for k = {k}")));
    }
    let z = standardize(vectors)?;
    Ok(FoldSums::from_assignment(&z, folds, k).imbalance())
}

/// Pairwise swaps between folds while any swap lowers the imbalance.
fn refine_by_swaps(z: &[Vec<f64>], folds: &mut [usize], k: usize) {
    let n = z.len();
    let mut sums = FoldSums::from_assignment(z, folds, k);
    let d = z.first().map_or(0, Vec::len);
    let mut a_new = vec![0.0; d];
    let mut b_new = vec![0.0; d];
    for _pass in 0..50 {
        let mut improved = false;
        for i in 0..n {
            for j in (i + 1)..n {
                let (fa, fb) = (folds[i], folds[j]);
                if fa == fb {
                    continue;
                }
                for t in 0..d {
                    a_new[t] = sums.sums[fa][t] - z[i][t] + z[j][t];
                    b_new[t] = sums.sums[fb][t] - z[j][t] + z[i][t];
                }
                let (na, nb) = (sums.sizes[fa], sums.sizes[fb]);
                let before = FoldSums::fold_cost(&sums.sums[fa], na) + FoldSums::fold_cost(&sums.sums[fb], nb);
                let after = FoldSums::fold_cost(&a_new, na) + FoldSums::fold_cost(&b_new, nb);
                if after < before - 1e-12 * (1.0 + before) {
                    sums.sums[fa].copy_from_slice(&a_new);
                    sums.sums[fb].copy_from_slice(&b_new);
                    folds.swap(i, j);
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
}

fn finish(
    k: usize,
    strategy: FoldStrategy,
    seed: u64,
    site_ids: Vec<String>,
    folds: Vec<usize>,
    z: Option<&[Vec<f64>]>,
) -> FoldAssignment {
    let mut fold_sizes = vec![0; k];
    for &f in &folds {
        fold_sizes[f] += 1;
    }
    let (fold_means, imbalance) = match z {
        Some(z) => {
            let s = FoldSums::from_assignment(z, &folds, k);
            let means = (0..k)
                .map(|f| s.sums[f].iter().map(|v| v / s.sizes[f].max(1) as f64).collect())
                .collect();
            (means, Some(s.imbalance()))
        }
        None => (Vec::new(), None),
    };
    let mut metadata = BTreeMap::new();
    metadata.insert(
        "objective".to_string(),
        "sum over folds of n_f * |mean of standardized vectors|^2 / n".to_string(),
    );
    metadata.insert(
        "components".to_string(),
        "per-band catchment mean and sd, label density, positive ratio".to_string(),
    );
    FoldAssignment {
        k,
        strategy,
        seed,
        site_ids,
        folds,
        fold_sizes,
        fold_means,
        imbalance,
        metadata,
    }
}

fn uniform_folds(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream_rng(seed, Stream::Folds, 0));
    let mut folds = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        folds[i] = pos % k;
    }
    folds
}

/// Seeded shuffle followed by round-robin dealing.
pub fn uniform_kfold(site_ids: &[String], k: usize, seed: u64) -> Result<FoldAssignment> {
    check_k(k, site_ids.len())?;
    check_unique(site_ids)?;
    let folds = uniform_folds(site_ids.len(), k, seed);
    Ok(finish(k, FoldStrategy::Uniform, seed, site_ids.to_vec(), folds, None))
}

/// Greedy balanced assignment: sites in descending standardized-norm order
/// (seeded shuffle breaks ties) each go to the fold with room whose
/// imbalance grows least, then pairwise swaps polish the result. If the
/// uniform splitter does better on the same seed, its swap-polished
/// assignment is returned instead.
pub fn stratified_kfold(vectors: &[StratVector], k: usize, seed: u64) -> Result<FoldAssignment> {
    let n = vectors.len();
    check_k(k, n)?;
    let site_ids: Vec<String> = vectors.iter().map(|v| v.site_id.clone()).collect();
    check_unique(&site_ids)?;
    let z = standardize(vectors)?;
    let d = z[0].len();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream_rng(seed, Stream::Folds, 1));
    let norms: Vec<f64> = z.iter().map(|v| norm2(v)).collect();
    order.sort_by(|a, b| norms[*b].total_cmp(&norms[*a]));

    let (q, r) = (n / k, n % k);
    let mut big_left = r;
    let mut sums = FoldSums::new(k, d, n);
    let mut folds = vec![0; n];
    let mut trial = vec![0.0; d];
    for &i in &order {
        let mut best: Option<(f64, usize)> = None;
        for f in 0..k {
            let size = sums.sizes[f];
            let has_room = size < q || (size == q && big_left > 0);
            if !has_room {
                continue;
            }
            for t in 0..d {
                trial[t] = sums.sums[f][t] + z[i][t];
            }
            let delta = FoldSums::fold_cost(&trial, size + 1) - FoldSums::fold_cost(&sums.sums[f], size);
            let better = match best {
                None => true,
                Some((bd, bf)) => delta < bd || (delta == bd && size < sums.sizes[bf]),
            };
            if better {
                best = Some((delta, f));
            }
        }
        let (_, f) = best.expect("capacity accounting leaves room for every site");
        if sums.sizes[f] == q {
            big_left -= 1;
        }
        sums.add(f, &z[i]);
        folds[i] = f;
    }
    refine_by_swaps(&z, &mut folds, k);

    let greedy = FoldSums::from_assignment(&z, &folds, k).imbalance();
    let mut uniform = uniform_folds(n, k, seed);
    if FoldSums::from_assignment(&z, &uniform, k).imbalance() < greedy {
        refine_by_swaps(&z, &mut uniform, k);
        folds = uniform;
    }
    Ok(finish(k, FoldStrategy::Stratified, seed, site_ids, folds, Some(&z)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchFolds {
    /// Window indices whose labeled pixels all belong to fold `f`.
    pub labeled: Vec<Vec<usize>>,
    /// Windows without labeled pixels, shared by every fold.
    pub unlabeled: Vec<usize>,
    /// Windows mixing folds, or holding labels not attributable to any assigned site.
    pub quarantined: Vec<usize>,
}

/// Per-pixel fold bitmask of labeled pixels: bit `f` for pixels inside a
/// fold-`f` site disk, bit `k` for labeled pixels outside every site disk.
pub fn label_fold_mask<U: Sample>(
    assignment: &FoldAssignment,
    sites: &[SiteRecord],
    labels: &RasterGrid<U>,
    radius: f64,
) -> Result<Vec<u64>> {
    let k = assignment.k;
    if k > MAX_FOLDS {
        return Err(Error::config(format!("k must be at most {MAX_FOLDS}")));
    }
    let w = labels.width();
    let mut bits = vec![0u64; labels.pixel_count()];
    for site in sites {
        let Some(f) = assignment.fold_of(&site.site_id) else {
            continue;
        };
        for_each_disk_pixel(labels, site.x, site.y, radius, |r, c| {
            let i = r * w + c;
            if !labels.is_masked(i) {
                bits[i] |= 1 << f;
            }
        });
    }
    for (i, b) in bits.iter_mut().enumerate() {
        if !labels.is_masked(i) && *b == 0 {
            *b = 1 << k;
        }
    }
    Ok(bits)
}

pub fn folds_to_patches<U: Sample>(
    assignment: &FoldAssignment,
    windows: &[TileWindow],
    sites: &[SiteRecord],
    labels: &RasterGrid<U>,
    radius: f64,
) -> Result<PatchFolds> {
    let bits = label_fold_mask(assignment, sites, labels, radius)?;
    let (w, h) = (labels.width(), labels.height());
    let mut out = PatchFolds {
        labeled: vec![Vec::new(); assignment.k],
        unlabeled: Vec::new(),
        quarantined: Vec::new(),
    };
    for (idx, win) in windows.iter().enumerate() {
        if win.row0 + win.size > h || win.col0 + win.size > w {
            return Err(Error::dim(format!("window {idx} extends past the {w}x{h} label raster")));
        }
        let mut acc = 0u64;
        for r in win.row0..win.row0 + win.size {
            for b in &bits[r * w + win.col0..r * w + win.col0 + win.size] {
                acc |= b;
            }
        }
        if acc == 0 {
            out.unlabeled.push(idx);
        } else if acc.count_ones() == 1 && (acc.trailing_zeros() as usize) < assignment.k {
            out.labeled[acc.trailing_zeros() as usize].push(idx);
        } else {
            out.quarantined.push(idx);
        }
    }
    Ok(out)
}
