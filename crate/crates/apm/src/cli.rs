//! Command-line front end. Each subcommand parses arguments, reads inputs,
//! calls one library operation and writes its outputs.

use std::path::{Path, PathBuf};

use apm_core::crf::CrfConfig;
use apm_core::folds::FoldStrategy;
use apm_core::labels::{distance_map, rasterize_labels, Period, DEFAULT_LABEL_RADIUS};
use apm_core::lamap::LamapConfig;
use apm_core::metrics::{evaluate, EvaluateConfig, MetricsReport, DEFAULT_BINS};
use apm_core::pseudolabel::DplConfig;
use apm_core::terrain::TerrainConfig;
use apm_core::tiling::{DEFAULT_OVERLAP, DEFAULT_TILE_SIZE};
use clap::{Args, Parser, Subcommand};

use crate::config::{read_crf_config, PipelineConfig};
use crate::error::{AppError, Result};
use crate::io::raster::{read_raster, write_raster};
use crate::io::sites::{filter_period, read_sites};
use crate::io::vectors::read_targets;
use crate::io::{read_json, write_json};
use crate::parallel::with_threads;
use crate::pipeline::run_pipeline;
use crate::tasks;

#[derive(Debug, Parser)]
#[command(name = "apm", version, about = "Archaeological potential mapping toolkit")]
pub struct Cli {
    /// Worker threads (default: $APM_THREADS, then all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Print errors as JSON on stderr.
    #[arg(long, global = true)]
    pub json_errors: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Elevation, slope, aspect and hydrological proximity from a DEM.
    DeriveFeatures(DeriveFeaturesArgs),
    /// Euclidean distance to GeoJSON point and line features.
    DistanceMap(DistanceMapArgs),
    /// Label raster from site records.
    RasterizeLabels(RasterizeArgs),
    /// Locally-adaptive potential surface from positive sites.
    Lamap(LamapArgs),
    /// Dense-CRF refinement of a logit raster.
    CrfRefine(CrfArgs),
    /// Dynamic-pseudolabel loss breakdown and masked pseudolabel.
    Pseudolabel(PseudolabelArgs),
    /// Site-level k-fold split.
    SplitFolds(SplitFoldsArgs),
    /// Cut a raster into overlapping tiles.
    Tile(TileArgs),
    /// Stitch a directory of tile predictions back into one raster.
    Stitch(StitchArgs),
    /// Metrics report for a probability surface.
    Evaluate(EvaluateArgs),
    /// Run the pipeline described by a JSON config.
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct DeriveFeaturesArgs {
    #[arg(long)]
    pub dem: PathBuf,
    /// GeoJSON whose distance map is appended as an extra band.
    #[arg(long)]
    pub historical: Option<PathBuf>,
    /// Flow-accumulation share of valid cells that marks a stream.
    #[arg(long, default_value_t = TerrainConfig::default().stream_threshold_fraction)]
    pub stream_fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DistanceMapArgs {
    /// Raster defining the output grid.
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub targets: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RasterizeArgs {
    #[arg(long)]
    pub sites: PathBuf,
    #[arg(long)]
    pub template: PathBuf,
    #[arg(long, default_value_t = DEFAULT_LABEL_RADIUS)]
    pub radius: f64,
    #[arg(long)]
    pub period: Option<Period>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LamapArgs {
    #[arg(long)]
    pub stack: PathBuf,
    #[arg(long)]
    pub sites: PathBuf,
    #[arg(long)]
    pub period: Option<Period>,
    #[arg(long, default_value_t = LamapConfig::default().catchment_radius)]
    pub catchment: f64,
    #[arg(long, default_value_t = LamapConfig::default().bandwidth)]
    pub bandwidth: f64,
    /// Comma-separated zero-based band indices (default: all).
    #[arg(long, value_delimiter = ',')]
    pub bands: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CrfArgs {
    #[arg(long)]
    pub logits: PathBuf,
    #[arg(long)]
    pub guidance: PathBuf,
    /// JSON config using the hyperparameter-table names; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Guidance compression factor (2 or 4).
    #[arg(long)]
    pub gamma: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    /// Refine tile by tile with this size and overlap instead of in one pass.
    #[arg(long)]
    pub tile_size: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_OVERLAP)]
    pub overlap: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PseudolabelArgs {
    #[arg(long)]
    pub branch1: PathBuf,
    #[arg(long)]
    pub branch2: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Branch rasters hold logits rather than probabilities.
    #[arg(long)]
    pub logits: bool,
    /// JSON with loss weights, schedule and loss settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub step: u64,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Loss-breakdown JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Masked pseudolabel raster.
    #[arg(long)]
    pub out_raster: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitFoldsArgs {
    #[arg(long)]
    pub sites: PathBuf,
    #[arg(long)]
    pub stack: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = FoldStrategy::Stratified)]
    pub strategy: FoldStrategy,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub period: Option<Period>,
    #[arg(long, default_value_t = DEFAULT_LABEL_RADIUS)]
    pub radius: f64,
    /// Also map folds onto the windows of this tile size.
    #[arg(long)]
    pub tile_size: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_OVERLAP)]
    pub overlap: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TileArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TILE_SIZE)]
    pub tile_size: usize,
    #[arg(long, default_value_t = DEFAULT_OVERLAP)]
    pub overlap: f64,
    /// Output directory for `tile_NNNNN.apmr` files and `tile_plan.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StitchArgs {
    /// Directory of single-band tile rasters; tiles are placed by origin.
    #[arg(long)]
    pub tiles: PathBuf,
    /// Raster defining the full grid.
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TILE_SIZE)]
    pub tile_size: usize,
    #[arg(long, default_value_t = DEFAULT_OVERLAP)]
    pub overlap: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub sites: PathBuf,
    #[arg(long)]
    pub period: Option<Period>,
    /// Label raster; rasterized from the sites when absent.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_LABEL_RADIUS)]
    pub radius: f64,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long, default_value_t = EvaluateConfig::default().threshold)]
    pub threshold: f64,
    /// Earlier report used as the volume-gain baseline.
    #[arg(long)]
    pub baseline_report: Option<PathBuf>,
    /// Baseline surface for the difference raster and density CSV.
    #[arg(long)]
    pub baseline_surface: Option<PathBuf>,
    #[arg(long, default_value = "report.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

fn parse_json_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))
}

fn crf_config(a: &CrfArgs) -> Result<CrfConfig> {
    let mut cfg = match &a.config {
        Some(p) => read_crf_config(p)?,
        None => CrfConfig::default(),
    };
    if let Some(v) = a.beta {
        cfg.beta = v;
    }
    if let Some(v) = a.sigma {
        cfg.sigma = v;
    }
    if let Some(v) = a.gamma {
        cfg.compression = v;
    }
    if let Some(v) = a.temperature {
        cfg.temperature = v;
    }
    if let Some(v) = a.iters {
        cfg.iterations = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn tile_name(i: usize) -> String {
    format!("tile_{i:05}.apmr")
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::DeriveFeatures(a) => {
            let dem = read_raster(&a.dem)?;
            let historical = a.historical.as_ref().map(read_targets).transpose()?;
            let cfg = TerrainConfig {
                stream_threshold_fraction: a.stream_fraction,
            };
            write_raster(&a.out, &tasks::derive_features(&dem, historical.as_ref(), &cfg)?)
        }
        Command::DistanceMap(a) => {
            let grid = read_raster(&a.grid)?;
            let mut d = distance_map(&read_targets(&a.targets)?, &grid)?;
            d.set_band_names(vec!["distance".into()])?;
            write_raster(&a.out, &d)
        }
        Command::RasterizeLabels(a) => {
            let sites = filter_period(&read_sites(&a.sites)?, a.period);
            let template = read_raster(&a.template)?;
            let lr = rasterize_labels(&sites, a.radius, &template)?;
            for id in &lr.skipped {
                eprintln!("warning: site {id} lies outside the raster and was skipped");
            }
            write_raster(&a.out, &lr.grid)
        }
        Command::Lamap(a) => {
            let stack = read_raster(&a.stack)?;
            let sites = filter_period(&read_sites(&a.sites)?, a.period);
            let cfg = LamapConfig {
                catchment_radius: a.catchment,
                bandwidth: a.bandwidth,
                bands: a.bands,
            };
            cfg.validate()?;
            write_raster(&a.out, &tasks::lamap_from_sites(&stack, &sites, &cfg)?)
        }
        Command::CrfRefine(a) => {
            let cfg = crf_config(&a)?;
            let logits = read_raster(&a.logits)?;
            let guidance = read_raster(&a.guidance)?;
            tasks::require_aligned(&logits, &guidance, "guidance")?;
            let out = match a.tile_size {
                Some(ts) => tasks::refine_tiled(&logits, &guidance, ts, a.overlap, &cfg)?.1,
                None => apm_core::crf::crf_refine(&logits, &guidance, &cfg)?,
            };
            write_raster(&a.out, &out)
        }
        Command::Pseudolabel(a) => {
            let mut cfg: DplConfig = match &a.config {
                Some(p) => parse_json_file(p)?,
                None => DplConfig::default(),
            };
            if let Some(t) = a.tau {
                cfg.confidence_tau = t;
            }
            if let Some(s) = a.seed {
                cfg.rng_seed = s;
            }
            cfg.validate()?;
            let b1 = tasks::to_probability(&read_raster(&a.branch1)?, a.logits)?;
            let b2 = tasks::to_probability(&read_raster(&a.branch2)?, a.logits)?;
            let labels = read_raster(&a.labels)?;
            let (report, pseudo) = tasks::pseudolabel_run(&b1, &b2, &labels, &cfg, a.step)?;
            write_raster(&a.out_raster, &pseudo)?;
            write_json(&a.out, &report)
        }
        Command::SplitFolds(a) => {
            let sites = filter_period(&read_sites(&a.sites)?, a.period);
            let stack = read_raster(&a.stack)?;
            let labels = read_raster(&a.labels)?;
            tasks::require_aligned(&stack, &labels, "labels")?;
            let plan = a.tile_size.map(|ts| tasks::plan_for(&stack, ts, a.overlap)).transpose()?;
            let out = tasks::split_folds(&sites, &stack, &labels, a.radius, a.k, a.strategy, a.seed, plan.as_ref())?;
            write_json(&a.out, &out)
        }
        Command::Tile(a) => {
            let grid = read_raster(&a.input)?;
            let plan = tasks::plan_for(&grid, a.tile_size, a.overlap)?;
            for (i, w) in plan.windows.iter().enumerate() {
                write_raster(a.out.join(tile_name(i)), &grid.window(w.row0, w.col0, w.size, w.size)?)?;
            }
            write_json(a.out.join("tile_plan.json"), &plan)
        }
        Command::Stitch(a) => stitch_dir(&a),
        Command::Evaluate(a) => {
            let pred = read_raster(&a.pred)?;
            let sites = filter_period(&read_sites(&a.sites)?, a.period);
            let labels = match &a.labels {
                Some(p) => read_raster(p)?,
                None => rasterize_labels(&sites, a.radius, &pred)?.grid,
            };
            tasks::require_aligned(&pred, &labels, "labels")?;
            let cfg = EvaluateConfig {
                threshold: a.threshold,
                bins: a.bins,
                ..EvaluateConfig::default()
            };
            let mut report = evaluate(&pred, &labels, &sites, &cfg)?;
            if let Some(p) = &a.baseline_report {
                let baseline: MetricsReport = read_json(p)?;
                let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                report.set_baseline(name, &baseline)?;
            }
            write_json(&a.out, &report)?;
            if let Some(p) = &a.baseline_surface {
                let baseline = read_raster(p)?;
                let dir = a.out.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
                let stem = a.pred.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or("surface".into());
                crate::products::emit_surface_products(dir, &stem, &pred, &baseline)?;
            }
            println!(
                "auroc {:.4}  aul {:.4}  dice {:.4}  iou {:.4}  f1 {:.4}  accuracy {:.4}",
                report.auroc, report.aul, report.dice, report.iou, report.f1, report.accuracy
            );
            Ok(())
        }
        Command::Run(a) => {
            let mut cfg = PipelineConfig::load(&a.config)?;
            if let Some(o) = a.out {
                cfg.output_dir = o;
            }
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            let m = run_pipeline(&cfg)?;
            for s in &m.stages {
                println!("{:<17} {:>10.1} ms  {} artifact(s)", s.stage.name(), s.wall_time_ms, s.artifacts.len());
            }
            Ok(())
        }
    }
}

fn stitch_dir(a: &StitchArgs) -> Result<()> {
    let reference = read_raster(&a.reference)?;
    let plan = tasks::plan_for(&reference, a.tile_size, a.overlap)?;
    let gt = *reference.geotransform();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(&a.tiles)
        .map_err(|e| AppError::io(&a.tiles, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "apmr" || x == "asc"))
        .collect();
    entries.sort();
    let mut slots: Vec<Option<Vec<f64>>> = vec![None; plan.windows.len()];
    for p in &entries {
        let tile = read_raster(p)?;
        let tg = tile.geotransform();
        let (r, c) = gt.to_pixel(tg.origin_x, tg.origin_y);
        let (r, c) = (r.round(), c.round());
        let slot = (0..plan.windows.len())
            .find(|&i| {
                let w = &plan.windows[i];
                slots[i].is_none() && w.row0 as f64 == r && w.col0 as f64 == c && tile.width() == w.size && tile.height() == w.size
            })
            .ok_or_else(|| AppError::format(p, "tile does not match any window of the plan"))?;
        slots[slot] = Some(
            (0..tile.pixel_count())
                .map(|i| if tile.is_masked(i) { f64::NAN } else { tile.band(0)[i] as f64 })
                .collect(),
        );
    }
    let preds: Vec<Vec<f64>> = slots
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.ok_or_else(|| AppError::format(&a.tiles, format!("missing tile for window {i}"))))
        .collect::<Result<_>>()?;
    write_raster(&a.out, &tasks::stitch_surface(&preds, &plan, &reference)?)
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let json = cli.json_errors;
    let result = with_threads(cli.threads, || execute(cli.command)).and_then(|r| r);
    match result {
        Ok(()) => 0,
        Err(e) => {
            if json {
                eprintln!("{}", e.to_json());
            } else {
                eprintln!("error: {e}");
            }
            e.exit_code()
        }
    }
}

pub fn run() -> i32 {
    run_from(std::env::args_os())
}
