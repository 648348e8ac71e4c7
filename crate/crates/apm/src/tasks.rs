//! Library-level operations behind each subcommand and pipeline stage.

use apm_core::crf::CrfConfig;
use apm_core::folds::{
    assignment_imbalance, folds_to_patches, strat_component_names, stratified_kfold, uniform_kfold, FoldAssignment,
    FoldStrategy, PatchFolds,
};
use apm_core::labels::{distance_map, Polarity, SiteRecord, Targets};
use apm_core::lamap::LamapConfig;
use apm_core::pseudolabel::{combine, confident_pseudolabel, dpl_objective, draw_alphas, BranchPair, DplConfig, LabeledTile, LossBreakdown};
use apm_core::terrain::{derive_terrain_with, TerrainConfig};
use apm_core::tiling::{tile_plan, TilePlan};
use apm_core::{RasterGrid, Sample};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};
use crate::parallel;

/// Feature stack: elevation, slope, aspect, hydrological proximity and,
/// when targets are given, the distance to them.
pub fn derive_features<T: Sample>(dem: &RasterGrid<T>, historical: Option<&Targets>, cfg: &TerrainConfig) -> Result<RasterGrid<f64>> {
    let terrain = derive_terrain_with(dem, cfg)?;
    let mut elevation = dem.select_bands(&[0])?.cast::<f64>();
    elevation.set_band_names(vec!["elevation".into()])?;
    let mut parts = vec![elevation, terrain];
    if let Some(t) = historical {
        let mut d = distance_map(t, dem)?;
        d.set_band_names(vec!["historical_distance".into()])?;
        parts.push(d);
    }
    let refs: Vec<&RasterGrid<f64>> = parts.iter().collect();
    let mut out = RasterGrid::stack(&refs)?;
    out.insert_metadata("aspect_flat_sentinel", "-1");
    out.insert_metadata("stream_threshold_fraction", format!("{}", cfg.stream_threshold_fraction));
    Ok(out)
}

/// LAMAP surface from the positive sites that fall inside the stack.
pub fn lamap_from_sites<T: Sample>(stack: &RasterGrid<T>, sites: &[SiteRecord], cfg: &LamapConfig) -> Result<RasterGrid<f64>> {
    let positives: Vec<SiteRecord> = sites
        .iter()
        .filter(|s| s.polarity == Polarity::Positive && stack.contains_point(s.x, s.y))
        .cloned()
        .collect();
    if positives.is_empty() {
        return Err(apm_core::Error::EmptyInput("no positive sites inside the stack".into()).into());
    }
    let models = parallel::site_models(stack, &positives, cfg)?;
    let mut surface = parallel::lamap_surface(stack, &models, cfg)?;
    surface.insert_metadata("lamap.sites", format!("{}", models.len()));
    Ok(surface)
}

/// Log-odds of a probability surface, with probabilities clamped to
/// `[1e-4, 1 − 1e-4]`.
pub fn logits_from_probability<T: Sample>(p: &RasterGrid<T>) -> Result<RasterGrid<f64>> {
    const EPS: f64 = 1e-4;
    let values: Vec<Option<f64>> = (0..p.pixel_count())
        .map(|i| {
            (!p.is_masked(i)).then(|| {
                let q = p.band(0)[i].to_f64().clamp(EPS, 1.0 - EPS);
                (q / (1.0 - q)).ln()
            })
        })
        .collect();
    let mut out = RasterGrid::from_options(p.width(), p.height(), *p.geotransform(), &values)?;
    out.set_band_names(vec!["logit".into()])?;
    Ok(out)
}

/// Tile plan with the tile size capped at the grid's smaller side.
pub fn plan_for<T: Sample>(grid: &RasterGrid<T>, tile_size: usize, overlap: f64) -> Result<TilePlan> {
    let size = tile_size.min(grid.width()).min(grid.height());
    Ok(tile_plan(grid.width(), grid.height(), size, overlap)?)
}

/// Tiled CRF refinement followed by stitching.
pub fn refine_tiled<T: Sample, G: Sample>(
    logits: &RasterGrid<T>,
    guidance: &RasterGrid<G>,
    tile_size: usize,
    overlap: f64,
    cfg: &CrfConfig,
) -> Result<(TilePlan, RasterGrid<f64>)> {
    logits.check_aligned(guidance)?;
    let plan = plan_for(logits, tile_size, overlap)?;
    let tiles = parallel::crf_tiles(logits, guidance, &plan, cfg)?;
    let surface = stitch_surface(&tiles, &plan, logits)?;
    Ok((plan, surface))
}

pub fn stitch_surface<T: Sample>(tiles: &[Vec<f64>], plan: &TilePlan, template: &RasterGrid<T>) -> Result<RasterGrid<f64>> {
    let mut s = parallel::stitch(tiles, plan, *template.geotransform())?;
    for (i, m) in template.mask().iter().enumerate() {
        if *m {
            s.set_masked(i, true);
        }
    }
    s.set_band_names(vec!["probability".into()])?;
    s.insert_metadata("tile_size", format!("{}", plan.tile_size));
    s.insert_metadata("tile_stride", format!("{}", plan.stride));
    s.insert_metadata("crop_margin", format!("{}", plan.crop_margin));
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldsOutput {
    pub assignment: FoldAssignment,
    pub components: Vec<String>,
    pub patches: Option<PatchFolds>,
}

/// Site-level folds over the labeled (positive or negative) sites inside
/// the stack, optionally mapped onto a tile plan.
pub fn split_folds<T: Sample, U: Sample>(
    sites: &[SiteRecord],
    stack: &RasterGrid<T>,
    labels: &RasterGrid<U>,
    radius: f64,
    k: usize,
    strategy: FoldStrategy,
    seed: u64,
    plan: Option<&TilePlan>,
) -> Result<FoldsOutput> {
    let sites: Vec<SiteRecord> = sites
        .iter()
        .filter(|s| s.polarity != Polarity::Unlabeled && stack.contains_point(s.x, s.y))
        .cloned()
        .collect();
    let vectors = parallel::strat_vectors(&sites, stack, labels, radius)?;
    let assignment = match strategy {
        FoldStrategy::Stratified => stratified_kfold(&vectors, k, seed)?,
        FoldStrategy::Uniform => {
            let ids: Vec<String> = sites.iter().map(|s| s.site_id.clone()).collect();
            let mut a = uniform_kfold(&ids, k, seed)?;
            a.imbalance = Some(assignment_imbalance(&vectors, &a.folds, k)?);
            a
        }
    };
    let patches = plan
        .map(|p| folds_to_patches(&assignment, &p.windows, &sites, labels, radius))
        .transpose()?;
    Ok(FoldsOutput {
        assignment,
        components: strat_component_names(stack.bands()),
        patches,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudolabelOutput {
    pub step: u64,
    pub breakdown: LossBreakdown,
}

/// Treats the whole raster as one tile: labeled pixels feed the supervised
/// term and the remaining pixels the unlabeled terms. Returns the loss
/// breakdown and the pseudolabel with low-confidence pixels masked.
pub fn pseudolabel_run<T: Sample, U: Sample>(
    branch1: &RasterGrid<T>,
    branch2: &RasterGrid<T>,
    labels: &RasterGrid<U>,
    cfg: &DplConfig,
    step: u64,
) -> Result<(PseudolabelOutput, RasterGrid<f64>)> {
    branch1.check_aligned(branch2)?;
    branch1.check_aligned(labels)?;
    let labels64 = labels.select_bands(&[0])?.cast::<f64>();
    let tile = LabeledTile {
        pred1: branch1.select_bands(&[0])?.cast(),
        pred2: branch2.select_bands(&[0])?.cast(),
        labels: labels64.clone(),
    };
    let mut u1 = tile.pred1.clone();
    let mut u2 = tile.pred2.clone();
    for i in 0..labels64.pixel_count() {
        if !labels64.is_masked(i) {
            u1.set_masked(i, true);
            u2.set_masked(i, true);
        }
    }
    let pair = BranchPair::new(&u1, &u2)?;
    let breakdown = dpl_objective(&[tile], std::slice::from_ref(&pair), cfg, step)?;
    let alpha = draw_alphas(cfg, step, 1)[0];
    let full_pair = BranchPair::new(&branch1.select_bands(&[0])?.cast::<f64>(), &branch2.select_bands(&[0])?.cast::<f64>())?;
    let mut pseudo = confident_pseudolabel(&full_pair, alpha, cfg.confidence_tau)?;
    pseudo.insert_metadata("alpha", format!("{alpha}"));
    pseudo.insert_metadata("confidence_tau", format!("{}", cfg.confidence_tau));
    debug_assert_eq!(combine(&full_pair, alpha).map(|g| g.width()).ok(), Some(pseudo.width()));
    Ok((PseudolabelOutput { step, breakdown }, pseudo))
}

/// Reads a raster of probabilities, or of logits when `logits` is set.
pub fn to_probability<T: Sample>(grid: &RasterGrid<T>, logits: bool) -> Result<RasterGrid<f64>> {
    let g = grid.select_bands(&[0])?.cast::<f64>();
    if !logits {
        return Ok(g);
    }
    let values: Vec<Option<f64>> = (0..g.pixel_count())
        .map(|i| (!g.is_masked(i)).then(|| 1.0 / (1.0 + (-g.band(0)[i]).exp())))
        .collect();
    Ok(RasterGrid::from_options(g.width(), g.height(), *g.geotransform(), &values)?)
}

pub fn require_aligned<T: Sample, U: Sample>(a: &RasterGrid<T>, b: &RasterGrid<U>, what: &str) -> Result<()> {
    a.check_aligned(b).map_err(|e| AppError::Core(apm_core::Error::ShapeMismatch {
        expected: format!("{what} aligned with the reference grid"),
        found: e.to_string(),
    }))
}
