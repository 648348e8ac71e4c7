mod common;

use apm::config::Stage;
use apm::io::raster::read_raster;
use apm::pipeline::{run_pipeline, MANIFEST_FILE};
use apm_core::metrics::MetricsReport;
use common::{fixture, pipeline_config};

#[test]
fn full_run_lists_the_six_core_stages() {
    let tmp = tempfile::tempdir().unwrap();
    let f = fixture(tmp.path(), 32, 64, 3, 11);
    let out = tmp.path().join("out");
    let m = run_pipeline(&pipeline_config(&f, &out)).unwrap();
    let stages: Vec<Stage> = m.stages.iter().map(|s| s.stage).collect();
    assert_eq!(stages, Stage::CORE.to_vec());
    assert_eq!(m.status, "ok");
    assert_eq!(m.seed, 7);
    for name in [
        "features.apmr",
        "labels.apmr",
        "lamap.apmr",
        "tile_plan.json",
        "surface.apmr",
        "report.json",
        "baseline_report.json",
        "surface_difference.apmr",
        "surface_density.csv",
    ] {
        let a = m.artifact(name).unwrap_or_else(|| panic!("{name} missing from manifest"));
        assert_eq!(a.sha256, apm::io::sha256_file(out.join(name)).unwrap());
    }
    assert!(out.join(MANIFEST_FILE).exists());

    let features = read_raster(out.join("features.apmr")).unwrap();
    assert_eq!(features.bands(), 5);
    assert_eq!(features.band_names()[4], "historical_distance");
    let surface = read_raster(out.join("surface.apmr")).unwrap();
    assert_eq!((surface.width(), surface.height()), (32, 64));
    assert!(surface.band(0).iter().all(|p| (0.0..=1.0).contains(p)));
    let report: MetricsReport = apm::io::read_json(out.join("report.json")).unwrap();
    assert!((0.0..=1.0).contains(&report.auroc));
    assert_eq!(report.volume_gain.as_ref().unwrap().baseline, "lamap");
}

#[test]
fn single_stage_config_writes_only_features() {
    let tmp = tempfile::tempdir().unwrap();
    let f = fixture(tmp.path(), 24, 24, 3, 2);
    let out = tmp.path().join("out");
    let mut cfg = pipeline_config(&f, &out);
    cfg.stages = Some(vec![Stage::DeriveFeatures]);
    let m = run_pipeline(&cfg).unwrap();
    assert_eq!(m.stages.len(), 1);
    let mut files: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    files.sort();
    assert_eq!(files, vec!["features.apmr", MANIFEST_FILE]);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let f = fixture(tmp.path(), 32, 48, 4, 5);
    let a = run_pipeline(&pipeline_config(&f, &tmp.path().join("a"))).unwrap();
    let b = run_pipeline(&pipeline_config(&f, &tmp.path().join("b"))).unwrap();
    assert_eq!(a.config_sha256, b.config_sha256);
    let hashes = |m: &apm::pipeline::Manifest| -> Vec<(String, String)> {
        m.stages.iter().flat_map(|s| &s.artifacts).map(|x| (x.path.clone(), x.sha256.clone())).collect()
    };
    assert_eq!(hashes(&a), hashes(&b));
}

#[test]
fn thread_count_does_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let f = fixture(tmp.path(), 32, 32, 3, 9);
    let one = apm::parallel::with_threads(Some(1), || run_pipeline(&pipeline_config(&f, &tmp.path().join("t1"))))
        .unwrap()
        .unwrap();
    let four = apm::parallel::with_threads(Some(4), || run_pipeline(&pipeline_config(&f, &tmp.path().join("t4"))))
        .unwrap()
        .unwrap();
    let surface = |m: &apm::pipeline::Manifest| m.artifact("surface.apmr").unwrap().sha256.clone();
    assert_eq!(surface(&one), surface(&four));
}

#[test]
fn failing_stage_is_named_and_outputs_quarantined() {
    let tmp = tempfile::tempdir().unwrap();
    let f = fixture(tmp.path(), 24, 24, 3, 4);
    // only negative sites: LAMAP has nothing to model
    let sites: Vec<_> = f
        .landscape
        .sites
        .iter()
        .cloned()
        .map(|mut s| {
            s.polarity = apm_core::labels::Polarity::Negative;
            s
        })
        .collect();
    apm::io::sites::write_sites(&f.sites, &sites).unwrap();
    let out = tmp.path().join("out");
    let err = run_pipeline(&pipeline_config(&f, &out)).unwrap_err();
    assert_eq!(err.stage(), Some("lamap"));
    assert_eq!(err.exit_code(), 3);
    assert!(out.join("failed/features.apmr").exists());
    assert!(out.join("failed/labels.apmr").exists());
    assert!(out.join("failed").join(MANIFEST_FILE).exists());
    assert!(!out.join("features.apmr").exists());
    assert!(!out.join(MANIFEST_FILE).exists());
}

#[test]
fn folds_and_pseudolabel_stages() {
    let tmp = tempfile::tempdir().unwrap();
    let f = fixture(tmp.path(), 32, 32, 8, 3);
    let out = tmp.path().join("out");
    // two branch predictions built from the imagery bands
    let img = &f.landscape.imagery;
    for (b, name) in [(0usize, "b1.apmr"), (1, "b2.apmr")] {
        let band = img.select_bands(&[b]).unwrap();
        let lo = band.band(0).iter().copied().fold(f32::INFINITY, f32::min);
        let hi = band.band(0).iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let vals: Vec<Option<f64>> = band.band(0).iter().map(|v| Some(((v - lo) / (hi - lo)) as f64)).collect();
        let g = apm_core::RasterGrid::from_options(32, 32, *img.geotransform(), &vals).unwrap();
        apm::io::raster::write_raster(tmp.path().join(name), &g).unwrap();
    }
    let mut cfg = pipeline_config(&f, &out);
    cfg.folds = Some(apm::config::FoldSettings { k: 2, ..Default::default() });
    cfg.pseudolabel = Some(apm::config::PseudolabelSettings {
        branch1: tmp.path().join("b1.apmr"),
        branch2: tmp.path().join("b2.apmr"),
        step: 10,
        dpl: Default::default(),
    });
    cfg.stages = Some(vec![Stage::SplitFolds, Stage::Pseudolabel]);
    let m = run_pipeline(&cfg).unwrap();
    let stages: Vec<Stage> = m.stages.iter().map(|s| s.stage).collect();
    assert_eq!(
        stages,
        vec![Stage::DeriveFeatures, Stage::RasterizeLabels, Stage::SplitFolds, Stage::Pseudolabel]
    );
    let folds: apm::tasks::FoldsOutput = apm::io::read_json(out.join("folds.json")).unwrap();
    assert_eq!(folds.assignment.k, 2);
    assert_eq!(folds.assignment.site_ids.len(), 8);
    assert!(folds.patches.is_some());
    let dpl: apm::tasks::PseudolabelOutput = apm::io::read_json(out.join("dpl_report.json")).unwrap();
    assert_eq!(dpl.step, 10);
    assert!(dpl.breakdown.total.is_finite());
    assert!(out.join("pseudolabel.apmr").exists());
}
