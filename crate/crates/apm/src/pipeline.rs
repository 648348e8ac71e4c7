//! End-to-end stage runner with a reproducibility manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use apm_core::labels::{rasterize_labels, SiteRecord};
use apm_core::metrics::{evaluate, MetricsReport};
use apm_core::pseudolabel::DplConfig;
use apm_core::terrain::TerrainConfig;
use apm_core::tiling::TilePlan;
use apm_core::RasterGrid;
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, Stage};
use crate::error::{AppError, Result};
use crate::io::raster::{read_raster, write_raster};
use crate::io::sites::{filter_period, read_sites};
use crate::io::vectors::read_targets;
use crate::io::{sha256_file, sha256_hex, write_json};
use crate::{parallel, products, tasks};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FAILED_DIR: &str = "failed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub wall_time_ms: f64,
    pub artifacts: Vec<ArtifactRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub toolkit_version: String,
    /// SHA-256 of the canonical config JSON with `output_dir` blanked.
    pub config_sha256: String,
    pub seed: u64,
    pub status: String,
    pub failed_stage: Option<Stage>,
    pub error: Option<serde_json::Value>,
    pub stages: Vec<StageRecord>,
}

impl Manifest {
    pub fn artifact(&self, name: &str) -> Option<&ArtifactRecord> {
        self.stages.iter().flat_map(|s| &s.artifacts).find(|a| a.path == name)
    }
}

pub fn config_hash(cfg: &PipelineConfig) -> Result<String> {
    let mut c = cfg.clone();
    c.output_dir = PathBuf::new();
    let bytes = serde_json::to_vec(&c).map_err(|e| AppError::Config(e.to_string()))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Default)]
struct State {
    dem: Option<RasterGrid<f32>>,
    sites: Vec<SiteRecord>,
    features: Option<RasterGrid<f64>>,
    labels: Option<RasterGrid<f32>>,
    lamap: Option<RasterGrid<f64>>,
    plan: Option<TilePlan>,
    tiles: Option<Vec<Vec<f64>>>,
    surface: Option<RasterGrid<f64>>,
}

fn missing(what: &str) -> AppError {
    AppError::Config(format!("stage input `{what}` was not produced"))
}

struct Runner<'a> {
    cfg: &'a PipelineConfig,
    out: &'a Path,
    state: State,
    written: Vec<PathBuf>,
}

impl Runner<'_> {
    fn dem(&mut self) -> Result<&RasterGrid<f32>> {
        if self.state.dem.is_none() {
            self.state.dem = Some(read_raster(&self.cfg.dem)?);
        }
        Ok(self.state.dem.as_ref().unwrap())
    }

    fn raster(&mut self, name: &str, grid: &RasterGrid<impl apm_core::Sample>) -> Result<()> {
        let p = self.out.join(name);
        write_raster(&p, grid)?;
        self.written.push(p);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<()> {
        let p = self.out.join(name);
        write_json(&p, v)?;
        self.written.push(p);
        Ok(())
    }

    fn aligned_input(&mut self, path: &Path, what: &str) -> Result<RasterGrid<f32>> {
        let g = read_raster(path)?;
        tasks::require_aligned(self.dem()?, &g, what)?;
        Ok(g)
    }

    fn run_stage(&mut self, stage: Stage) -> Result<()> {
        let cfg = self.cfg;
        match stage {
            Stage::DeriveFeatures => {
                let historical = cfg.historical.as_ref().map(read_targets).transpose()?;
                let tc = TerrainConfig {
                    stream_threshold_fraction: cfg.stream_threshold_fraction,
                };
                let features = tasks::derive_features(self.dem()?, historical.as_ref(), &tc)?;
                self.raster("features.apmr", &features)?;
                self.state.features = Some(features);
            }
            Stage::RasterizeLabels => {
                self.dem()?;
                let dem = self.state.dem.as_ref().ok_or_else(|| missing("dem"))?;
                let lr = rasterize_labels(&self.state.sites, cfg.label_radius, dem)?;
                let mut grid = lr.grid;
                if !lr.skipped.is_empty() {
                    grid.insert_metadata("skipped_sites", lr.skipped.join(","));
                }
                self.raster("labels.apmr", &grid)?;
                self.state.labels = Some(grid);
            }
            Stage::Lamap => {
                let features = self.state.features.as_ref().ok_or_else(|| missing("features"))?;
                let surface = tasks::lamap_from_sites(features, &self.state.sites, &cfg.lamap)?;
                self.raster("lamap.apmr", &surface)?;
                self.state.lamap = Some(surface);
            }
            Stage::CrfRefine => {
                let logits = match &cfg.logits {
                    Some(p) => self.aligned_input(p, "logits")?.cast::<f64>(),
                    None => tasks::logits_from_probability(self.state.lamap.as_ref().ok_or_else(|| missing("lamap"))?)?,
                };
                let guidance = match &cfg.stack {
                    Some(p) => self.aligned_input(p, "stack")?.cast::<f64>(),
                    None => self.state.features.clone().ok_or_else(|| missing("features"))?,
                };
                let plan = tasks::plan_for(&logits, cfg.tile_size, cfg.overlap)?;
                let tiles = parallel::crf_tiles(&logits, &guidance, &plan, &cfg.crf)?;
                self.json("tile_plan.json", &plan)?;
                self.state.plan = Some(plan);
                self.state.tiles = Some(tiles);
            }
            Stage::Stitch => {
                let plan = self.state.plan.as_ref().ok_or_else(|| missing("tile plan"))?;
                let tiles = self.state.tiles.as_ref().ok_or_else(|| missing("tiles"))?;
                let surface = tasks::stitch_surface(tiles, plan, self.state.dem.as_ref().ok_or_else(|| missing("dem"))?)?;
                self.raster("surface.apmr", &surface)?;
                self.state.surface = Some(surface);
            }
            Stage::Evaluate => {
                let surface = self.state.surface.clone().ok_or_else(|| missing("surface"))?;
                let labels = self.state.labels.clone().ok_or_else(|| missing("labels"))?;
                let lamap = self.state.lamap.clone().ok_or_else(|| missing("lamap"))?;
                let sites = &self.state.sites;
                let baseline: MetricsReport = evaluate(&lamap, &labels, sites, &cfg.evaluate)?;
                let mut report = evaluate(&surface, &labels, sites, &cfg.evaluate)?;
                if let Err(e) = report.set_baseline("lamap", &baseline) {
                    report.metadata.insert("volume_gain_unavailable".into(), e.to_string());
                }
                self.json("report.json", &report)?;
                self.json("baseline_report.json", &baseline)?;
                let written = match &cfg.baseline_surface {
                    Some(p) => {
                        let b = self.aligned_input(p, "baseline_surface")?;
                        products::emit_surface_products(self.out, "surface", &surface, &b)?
                    }
                    None => products::emit_surface_products(self.out, "surface", &surface, &lamap)?,
                };
                self.written.extend(written);
            }
            Stage::SplitFolds => {
                let fs = cfg.folds.as_ref().ok_or_else(|| missing("folds settings"))?;
                let features = self.state.features.as_ref().ok_or_else(|| missing("features"))?;
                let labels = self.state.labels.as_ref().ok_or_else(|| missing("labels"))?;
                let plan = match &self.state.plan {
                    Some(p) => p.clone(),
                    None => tasks::plan_for(features, cfg.tile_size, cfg.overlap)?,
                };
                let out = tasks::split_folds(
                    &self.state.sites,
                    features,
                    labels,
                    cfg.label_radius,
                    fs.k,
                    fs.strategy,
                    cfg.seed,
                    Some(&plan),
                )?;
                self.json("folds.json", &out)?;
            }
            Stage::Pseudolabel => {
                let ps = cfg.pseudolabel.as_ref().ok_or_else(|| missing("pseudolabel settings"))?;
                let b1 = self.aligned_input(&ps.branch1, "pseudolabel.branch1")?;
                let b2 = self.aligned_input(&ps.branch2, "pseudolabel.branch2")?;
                let labels = self.state.labels.as_ref().ok_or_else(|| missing("labels"))?;
                let dpl = DplConfig {
                    rng_seed: cfg.seed,
                    ..ps.dpl.clone()
                };
                let (report, pseudo) = tasks::pseudolabel_run(&b1, &b2, labels, &dpl, ps.step)?;
                self.raster("pseudolabel.apmr", &pseudo)?;
                self.json("dpl_report.json", &report)?;
            }
        }
        Ok(())
    }
}

fn record(out: &Path, paths: &[PathBuf]) -> Result<Vec<ArtifactRecord>> {
    paths
        .iter()
        .map(|p| {
            let bytes = std::fs::metadata(p).map_err(|e| AppError::io(p, e))?.len();
            Ok(ArtifactRecord {
                path: p.strip_prefix(out).unwrap_or(p).to_string_lossy().into_owned(),
                sha256: sha256_file(p)?,
                bytes,
            })
        })
        .collect()
}

/// Runs the planned stages in order, writing artifacts and `manifest.json`
/// into the output directory. On failure every artifact written so far and
/// the manifest are moved to `<output_dir>/failed/`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Manifest> {
    cfg.validate()?;
    let out = cfg.output_dir.as_path();
    std::fs::create_dir_all(out).map_err(|e| AppError::io(out, e))?;
    let mut manifest = Manifest {
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: config_hash(cfg)?,
        seed: cfg.seed,
        status: "ok".into(),
        failed_stage: None,
        error: None,
        stages: Vec::new(),
    };
    let all_sites = read_sites(&cfg.sites)?;
    let mut runner = Runner {
        cfg,
        out,
        state: State {
            sites: filter_period(&all_sites, cfg.period),
            ..State::default()
        },
        written: Vec::new(),
    };
    for stage in cfg.planned_stages() {
        let start = Instant::now();
        let first = runner.written.len();
        if let Err(e) = runner.run_stage(stage) {
            let err = AppError::Stage {
                stage: stage.name().to_string(),
                source: Box::new(e),
            };
            manifest.status = "failed".into();
            manifest.failed_stage = Some(stage);
            manifest.error = Some(err.to_json());
            quarantine(out, &runner.written, &manifest)?;
            return Err(err);
        }
        manifest.stages.push(StageRecord {
            stage,
            wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
            artifacts: record(out, &runner.written[first..])?,
        });
    }
    write_json(out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

fn quarantine(out: &Path, written: &[PathBuf], manifest: &Manifest) -> Result<()> {
    let failed = out.join(FAILED_DIR);
    std::fs::create_dir_all(&failed).map_err(|e| AppError::io(&failed, e))?;
    for p in written {
        if let Some(name) = p.file_name() {
            let dst = failed.join(name);
            std::fs::rename(p, &dst).map_err(|e| AppError::io(p, e))?;
        }
    }
    let stale = out.join(MANIFEST_FILE);
    if stale.exists() {
        std::fs::remove_file(&stale).map_err(|e| AppError::io(&stale, e))?;
    }
    write_json(failed.join(MANIFEST_FILE), manifest)
}
