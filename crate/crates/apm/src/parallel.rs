//! Rayon drivers over the pure core operations. Work is split by rows,
//! windows or sites and results are gathered in input order, so outputs do
//! not depend on the thread count.

use apm_core::crf::{crf_refine, CrfConfig};
use apm_core::folds::{site_strat_vector, StratVector};
use apm_core::labels::SiteRecord;
use apm_core::lamap::{assemble_surface, build_site_model, LamapConfig, LamapEvaluator, SiteModel};
use apm_core::tiling::{Stitcher, TilePlan};
use apm_core::{GeoTransform, RasterGrid, Sample};
use rayon::prelude::*;

use crate::error::{AppError, Result};

/// Environment variable holding the default worker count.
pub const THREADS_ENV: &str = "APM_THREADS";

/// Runs `f` on a pool of `threads` workers (`None`: `APM_THREADS`, then all cores).
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    let n = match threads {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| AppError::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?,
            ),
            Err(_) => None,
        },
    };
    if n == Some(0) {
        return Err(AppError::Config("thread count must be positive".into()));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = n {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| AppError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

pub fn site_models<T: Sample>(stack: &RasterGrid<T>, sites: &[SiteRecord], cfg: &LamapConfig) -> Result<Vec<SiteModel>> {
    Ok(sites
        .par_iter()
        .map(|s| build_site_model(stack, s, cfg))
        .collect::<apm_core::Result<Vec<_>>>()?)
}

pub fn lamap_surface<T: Sample>(stack: &RasterGrid<T>, models: &[SiteModel], cfg: &LamapConfig) -> Result<RasterGrid<f64>> {
    if stack.valid_count() == 0 {
        return Err(apm_core::Error::EmptyInput("stack is fully masked".into()).into());
    }
    let eval = LamapEvaluator::new(models, stack.bands(), cfg)?;
    let mut values = vec![None; stack.pixel_count()];
    values
        .par_chunks_mut(stack.width())
        .enumerate()
        .for_each(|(row, out)| eval.row(stack, row, out));
    Ok(assemble_surface(stack, &values, cfg)?)
}

/// CRF refinement of every window of `plan`; each prediction is the
/// row-major class-1 probability with masked pixels as NaN.
pub fn crf_tiles<T: Sample, G: Sample>(
    logits: &RasterGrid<T>,
    guidance: &RasterGrid<G>,
    plan: &TilePlan,
    cfg: &CrfConfig,
) -> Result<Vec<Vec<f64>>> {
    logits.check_same_shape(guidance)?;
    Ok(plan
        .windows
        .par_iter()
        .map(|w| {
            let l = logits.window(w.row0, w.col0, w.size, w.size)?;
            let g = guidance.window(w.row0, w.col0, w.size, w.size)?;
            let q = crf_refine(&l, &g, cfg)?;
            Ok((0..q.pixel_count())
                .map(|i| if q.is_masked(i) { f64::NAN } else { q.band(0)[i] })
                .collect())
        })
        .collect::<apm_core::Result<Vec<Vec<f64>>>>()?)
}

/// Stitches predictions in plan order.
pub fn stitch(predictions: &[Vec<f64>], plan: &TilePlan, gt: GeoTransform) -> Result<RasterGrid<f64>> {
    Ok(apm_core::tiling::stitch(predictions, plan, gt)?)
}

/// Streams a tile predictor over a plan without holding every prediction:
/// windows are predicted in parallel batches and added in plan order.
pub fn predict_and_stitch<F>(plan: &TilePlan, gt: GeoTransform, batch: usize, predict: F) -> Result<(RasterGrid<f64>, usize)>
where
    F: Fn(&apm_core::tiling::TileWindow) -> Vec<f64> + Sync,
{
    let mut st = Stitcher::new(plan.width, plan.height);
    for chunk in plan.windows.chunks(batch.max(1)) {
        let preds: Vec<Vec<f64>> = chunk.par_iter().map(&predict).collect();
        for (w, p) in chunk.iter().zip(&preds) {
            st.add(w, p)?;
        }
    }
    let covered = st.centre_covered();
    Ok((st.finish(gt)?, covered))
}

pub fn strat_vectors<T: Sample, U: Sample>(
    sites: &[SiteRecord],
    stack: &RasterGrid<T>,
    labels: &RasterGrid<U>,
    radius: f64,
) -> Result<Vec<StratVector>> {
    Ok(sites
        .par_iter()
        .map(|s| site_strat_vector(s, stack, labels, radius))
        .collect::<apm_core::Result<Vec<_>>>()?)
}
