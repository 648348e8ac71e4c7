#![allow(dead_code)]

use std::path::{Path, PathBuf};

use apm::config::PipelineConfig;
use apm::io::raster::write_raster;
use apm::io::sites::write_sites;
use apm::io::vectors::targets_to_geojson;
use apm::synthetic::{synthetic_landscape, Landscape};

pub struct Fixture {
    pub dir: PathBuf,
    pub dem: PathBuf,
    pub imagery: PathBuf,
    pub sites: PathBuf,
    pub roads: PathBuf,
    pub landscape: Landscape,
}

/// Writes a synthetic landscape of `width × height` pixels of 30 m into `dir`.
pub fn fixture(dir: &Path, width: usize, height: usize, n_sites: usize, seed: u64) -> Fixture {
    let landscape = synthetic_landscape(width, height, 30.0, n_sites, seed).unwrap();
    let f = Fixture {
        dir: dir.to_path_buf(),
        dem: dir.join("dem.apmr"),
        imagery: dir.join("imagery.apmr"),
        sites: dir.join("sites.csv"),
        roads: dir.join("roads.geojson"),
        landscape,
    };
    write_raster(&f.dem, &f.landscape.dem).unwrap();
    write_raster(&f.imagery, &f.landscape.imagery).unwrap();
    write_sites(&f.sites, &f.landscape.sites).unwrap();
    std::fs::write(&f.roads, targets_to_geojson(&f.landscape.roads).to_string()).unwrap();
    f
}

pub fn pipeline_config(f: &Fixture, out: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::minimal(&f.dem, &f.sites, out);
    cfg.stack = Some(f.imagery.clone());
    cfg.historical = Some(f.roads.clone());
    cfg.seed = 7;
    cfg
}
