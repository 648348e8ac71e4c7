//! JSON configuration: CRF parameter files and pipeline runs.

use std::path::{Path, PathBuf};

use apm_core::crf::CrfConfig;
use apm_core::folds::FoldStrategy;
use apm_core::labels::{Period, DEFAULT_LABEL_RADIUS};
use apm_core::lamap::LamapConfig;
use apm_core::metrics::EvaluateConfig;
use apm_core::pseudolabel::DplConfig;
use apm_core::terrain::TerrainConfig;
use apm_core::tiling::{DEFAULT_OVERLAP, DEFAULT_TILE_SIZE};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{AppError, Result};

/// Hyperparameter-table names and the `CrfConfig` fields they set.
pub const CRF_TABLE_NAMES: [(&str, &str); 6] = [
    ("Beta", "beta"),
    ("Feature Channels", "feature_channels"),
    ("Sigma", "sigma"),
    ("Compression Factor", "compression"),
    ("CRF Temperature", "temperature"),
    ("Iterations", "iterations"),
];

const CRF_EXTRA_FIELDS: [&str; 5] = [
    "compress_guidance",
    "spatial_weight",
    "bilateral_weight",
    "compatibility",
    "standardize_guidance",
];

/// Reads a CRF configuration object. Keys may use the hyperparameter-table
/// names (`"Beta"`, `"CRF Temperature"`, …) or the field names; missing keys
/// keep their defaults and unknown keys are rejected.
pub fn crf_config_from_value(value: &Value) -> Result<CrfConfig> {
    let obj = value
        .as_object()
        .ok_or_else(|| AppError::Config("CRF configuration must be a JSON object".into()))?;
    let mut fields = Map::new();
    for (k, v) in obj {
        let field = CRF_TABLE_NAMES
            .iter()
            .find(|(table, field)| k == table || k == field)
            .map(|(_, field)| *field)
            .or_else(|| CRF_EXTRA_FIELDS.iter().copied().find(|f| k == f))
            .ok_or_else(|| AppError::Config(format!("unknown CRF parameter `{k}`")))?;
        if fields.insert(field.to_string(), v.clone()).is_some() {
            return Err(AppError::Config(format!("CRF parameter `{field}` given twice")));
        }
    }
    let cfg: CrfConfig = serde_json::from_value(Value::Object(fields)).map_err(|e| AppError::Config(format!("CRF configuration: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

/// CRF configuration with hyperparameter-table names for the tuned fields.
pub fn crf_config_to_value(cfg: &CrfConfig) -> Value {
    let Value::Object(plain) = serde_json::to_value(cfg).expect("CRF config serializes") else {
        unreachable!("CrfConfig serializes to an object")
    };
    let mut out = Map::new();
    for (table, field) in CRF_TABLE_NAMES {
        out.insert(table.to_string(), plain[field].clone());
    }
    for field in CRF_EXTRA_FIELDS {
        out.insert(field.to_string(), plain[field].clone());
    }
    Value::Object(out)
}

pub fn read_crf_config(path: impl AsRef<Path>) -> Result<CrfConfig> {
    let v: Value = crate::io::read_json(path)?;
    crf_config_from_value(&v)
}

mod crf_table {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(cfg: &CrfConfig, s: S) -> std::result::Result<S::Ok, S::Error> {
        crf_config_to_value(cfg).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<CrfConfig, D::Error> {
        let v = Value::deserialize(d)?;
        crf_config_from_value(&v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    DeriveFeatures,
    RasterizeLabels,
    Lamap,
    CrfRefine,
    Stitch,
    Evaluate,
    SplitFolds,
    Pseudolabel,
}

impl Stage {
    pub const CORE: [Stage; 6] = [
        Stage::DeriveFeatures,
        Stage::RasterizeLabels,
        Stage::Lamap,
        Stage::CrfRefine,
        Stage::Stitch,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::DeriveFeatures => "derive-features",
            Stage::RasterizeLabels => "rasterize-labels",
            Stage::Lamap => "lamap",
            Stage::CrfRefine => "crf-refine",
            Stage::Stitch => "stitch",
            Stage::Evaluate => "evaluate",
            Stage::SplitFolds => "split-folds",
            Stage::Pseudolabel => "pseudolabel",
        }
    }

    pub fn dependencies(self) -> &'static [Stage] {
        match self {
            Stage::DeriveFeatures => &[],
            Stage::RasterizeLabels => &[],
            Stage::Lamap => &[Stage::DeriveFeatures],
            Stage::CrfRefine => &[Stage::DeriveFeatures, Stage::Lamap],
            Stage::Stitch => &[Stage::CrfRefine],
            Stage::Evaluate => &[Stage::RasterizeLabels, Stage::Lamap, Stage::Stitch],
            Stage::SplitFolds => &[Stage::DeriveFeatures, Stage::RasterizeLabels],
            Stage::Pseudolabel => &[Stage::RasterizeLabels],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldSettings {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_strategy")]
    pub strategy: FoldStrategy,
}

fn default_k() -> usize {
    5
}

fn default_strategy() -> FoldStrategy {
    FoldStrategy::Stratified
}

impl Default for FoldSettings {
    fn default() -> Self {
        FoldSettings {
            k: default_k(),
            strategy: default_strategy(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PseudolabelSettings {
    /// Branch probability rasters aligned with the DEM.
    pub branch1: PathBuf,
    pub branch2: PathBuf,
    #[serde(default)]
    pub step: u64,
    #[serde(default)]
    pub dpl: DplConfig,
}

fn default_tile_size() -> usize {
    DEFAULT_TILE_SIZE
}

fn default_overlap() -> f64 {
    DEFAULT_OVERLAP
}

fn default_radius() -> f64 {
    DEFAULT_LABEL_RADIUS
}

fn default_stream_fraction() -> f64 {
    TerrainConfig::default().stream_threshold_fraction
}

fn default_output() -> PathBuf {
    PathBuf::from("apm-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub dem: PathBuf,
    pub sites: PathBuf,
    /// Guidance imagery for the CRF; the derived features are used when absent.
    #[serde(default)]
    pub stack: Option<PathBuf>,
    /// Network logits to refine; the LAMAP surface is used when absent.
    #[serde(default)]
    pub logits: Option<PathBuf>,
    /// GeoJSON features whose distance map becomes an extra feature band.
    #[serde(default)]
    pub historical: Option<PathBuf>,
    /// Surface to difference against instead of the LAMAP surface.
    #[serde(default)]
    pub baseline_surface: Option<PathBuf>,
    #[serde(default)]
    pub period: Option<Period>,
    #[serde(default = "default_tile_size")]
    pub tile_size: usize,
    #[serde(default = "default_overlap")]
    pub overlap: f64,
    #[serde(default = "default_radius")]
    pub label_radius: f64,
    #[serde(default = "default_stream_fraction")]
    pub stream_threshold_fraction: f64,
    #[serde(default)]
    pub lamap: LamapConfig,
    #[serde(default, with = "crf_table")]
    pub crf: CrfConfig,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
    #[serde(default)]
    pub folds: Option<FoldSettings>,
    #[serde(default)]
    pub pseudolabel: Option<PseudolabelSettings>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Stages to run (dependencies are added); all applicable stages when absent.
    #[serde(default)]
    pub stages: Option<Vec<Stage>>,
}

impl PipelineConfig {
    pub fn minimal(dem: impl Into<PathBuf>, sites: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            dem: dem.into(),
            sites: sites.into(),
            stack: None,
            logits: None,
            historical: None,
            baseline_surface: None,
            period: None,
            tile_size: DEFAULT_TILE_SIZE,
            overlap: DEFAULT_OVERLAP,
            label_radius: DEFAULT_LABEL_RADIUS,
            stream_threshold_fraction: default_stream_fraction(),
            lamap: LamapConfig::default(),
            crf: CrfConfig::default(),
            evaluate: EvaluateConfig::default(),
            folds: None,
            pseudolabel: None,
            seed: 0,
            output_dir: output_dir.into(),
            stages: None,
        }
    }

    /// Loads a config file; relative paths are resolved against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dem);
        fix(&mut self.sites);
        fix(&mut self.output_dir);
        for p in [&mut self.stack, &mut self.logits, &mut self.historical, &mut self.baseline_surface]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        if let Some(ps) = &mut self.pseudolabel {
            fix(&mut ps.branch1);
            fix(&mut ps.branch2);
        }
    }

    /// Checks numeric ranges and that every referenced input exists.
    pub fn validate(&self) -> Result<()> {
        let mut inputs = vec![("dem", &self.dem), ("sites", &self.sites)];
        for (name, p) in [
            ("stack", &self.stack),
            ("logits", &self.logits),
            ("historical", &self.historical),
            ("baseline_surface", &self.baseline_surface),
        ] {
            if let Some(p) = p {
                inputs.push((name, p));
            }
        }
        if let Some(ps) = &self.pseudolabel {
            inputs.push(("pseudolabel.branch1", &ps.branch1));
            inputs.push(("pseudolabel.branch2", &ps.branch2));
            ps.dpl.validate()?;
        }
        for (name, p) in inputs {
            if !p.exists() {
                return Err(AppError::Config(format!("{name} path {} does not exist", p.display())));
            }
        }
        if self.tile_size == 0 {
            return Err(AppError::Config("tile_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(AppError::Config(format!("overlap must be in [0, 1), got {}", self.overlap)));
        }
        if !(self.label_radius >= 0.0 && self.label_radius.is_finite()) {
            return Err(AppError::Config("label_radius must be >= 0".into()));
        }
        if !(self.stream_threshold_fraction > 0.0 && self.stream_threshold_fraction <= 1.0) {
            return Err(AppError::Config("stream_threshold_fraction must be in (0, 1]".into()));
        }
        self.lamap.validate()?;
        self.crf.validate()?;
        if self.evaluate.bins < 2 || self.evaluate.density_bins == 0 {
            return Err(AppError::Config("evaluation needs at least 2 bins".into()));
        }
        if let Some(f) = &self.folds {
            if f.k < 2 {
                return Err(AppError::Config("folds.k must be at least 2".into()));
            }
        }
        for s in self.stages.iter().flatten() {
            if *s == Stage::SplitFolds && self.folds.is_none() {
                return Err(AppError::Config("split-folds stage needs a `folds` section".into()));
            }
            if *s == Stage::Pseudolabel && self.pseudolabel.is_none() {
                return Err(AppError::Config("pseudolabel stage needs a `pseudolabel` section".into()));
            }
        }
        Ok(())
    }

    /// Requested stages plus their dependencies, in execution order.
    pub fn planned_stages(&self) -> Vec<Stage> {
        let requested: Vec<Stage> = match &self.stages {
            Some(s) => s.clone(),
            None => {
                let mut all = Stage::CORE.to_vec();
                if self.folds.is_some() {
                    all.push(Stage::SplitFolds);
                }
                if self.pseudolabel.is_some() {
                    all.push(Stage::Pseudolabel);
                }
                all
            }
        };
        let mut needed = std::collections::BTreeSet::new();
        let mut stack = requested;
        while let Some(s) = stack.pop() {
            if needed.insert(s) {
                stack.extend_from_slice(s.dependencies());
            }
        }
        needed.into_iter().collect()
    }
}
