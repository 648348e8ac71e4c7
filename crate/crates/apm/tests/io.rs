use apm::io::raster::{decode_raster, encode_raster, format_ascii_grid, parse_ascii_grid, read_raster, write_raster};
use apm::io::sites::{parse_sites, read_sites, write_sites};
use apm::io::vectors::{parse_targets, targets_to_geojson};
use apm::products::{density_csv, difference_raster, emit_surface_products, surface_density};
use apm_core::labels::{Period, Polarity, SiteRecord, Targets};
use apm_core::{GeoTransform, RasterGrid};
use proptest::prelude::*;
use std::path::Path;

fn arb_grid() -> impl Strategy<Value = RasterGrid<f32>> {
    (1usize..6, 1usize..6, 1usize..4).prop_flat_map(|(w, h, b)| {
        (
            prop::collection::vec(-1e6f32..1e6, w * h * b),
            prop::collection::vec(any::<bool>(), w * h),
        )
            .prop_map(move |(data, mask)| {
                let gt = GeoTransform::new(1000.0, 2000.0, 5.0, -5.0);
                let mut g = RasterGrid::from_parts(w, h, b, gt, data, mask).unwrap();
                g.insert_metadata("source", "proptest");
                g
            })
    })
}

proptest! {
    #[test]
    fn apmr_round_trip_is_bit_exact(g in arb_grid()) {
        let back = decode_raster(&encode_raster(&g).unwrap()).unwrap();
        prop_assert_eq!(back.mask(), g.mask());
        let a: Vec<u32> = g.data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, b);
        prop_assert_eq!(back.geotransform(), g.geotransform());
        prop_assert_eq!(back.metadata(), g.metadata());
        prop_assert_eq!(encode_raster(&back).unwrap(), encode_raster(&g).unwrap());
    }
}

#[test]
fn corrupt_files_are_rejected() {
    let g = RasterGrid::<f32>::filled(3, 2, 1, GeoTransform::unit(), 1.0).unwrap();
    let bytes = encode_raster(&g).unwrap();
    assert!(decode_raster(&bytes[..bytes.len() - 1]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(decode_raster(&extra).is_err());
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(decode_raster(&magic).is_err());
}

#[test]
fn f64_overflow_is_a_numeric_error() {
    let g = RasterGrid::<f64>::filled(1, 1, 1, GeoTransform::unit(), 1e300).unwrap();
    let e = encode_raster(&g).unwrap_err();
    assert_eq!(e.kind(), apm_core::ErrorKind::Numeric);
}

#[test]
fn ascii_grid_reads_corner_and_center_origins() {
    let corner = "ncols 3\nnrows 2\nxllcorner 100\nyllcorner 200\ncellsize 10\nNODATA_value -9999\n1 2 3\n4 -9999 6\n";
    let g = parse_ascii_grid(corner).unwrap();
    assert_eq!((g.width(), g.height()), (3, 2));
    assert_eq!(g.geotransform().origin_y, 220.0);
    assert!(g.is_masked(4));
    assert_eq!(g.get(0, 1, 2), 6.0);
    let center = corner.replace("xllcorner 100", "xllcenter 105").replace("yllcorner 200", "yllcenter 205");
    assert_eq!(parse_ascii_grid(&center).unwrap().geotransform(), g.geotransform());
    let again = parse_ascii_grid(&format_ascii_grid(&g).unwrap()).unwrap();
    assert_eq!(again.data(), g.data());
    assert_eq!(again.mask(), g.mask());
}

#[test]
fn asc_extension_dispatches_to_ascii_reader() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("dem.asc");
    std::fs::write(&p, "ncols 2\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\n5 7\n").unwrap();
    assert_eq!(read_raster(&p).unwrap().data(), &[5.0, 7.0]);
}

#[test]
fn sites_round_trip_and_validation() {
    let tmp = tempfile::tempdir().unwrap();
    let sites = vec![
        SiteRecord::new("a", 1.5, 2.5, Period::LateAntique, Polarity::Positive),
        SiteRecord {
            find_count: Some(12),
            ..SiteRecord::new("b", 3.0, 4.0, Period::RomanImperial, Polarity::Negative)
        },
    ];
    let p = tmp.path().join("s.csv");
    write_sites(&p, &sites).unwrap();
    assert_eq!(read_sites(&p).unwrap(), sites);

    let dup = "site_id,x,y,period,polarity,find_count\na,1,2,Byzantine,positive,\na,3,4,Byzantine,negative,\n";
    let e = parse_sites(dup.as_bytes(), Path::new("dup.csv")).unwrap_err();
    assert_eq!(e.exit_code(), 3);
    let header = "id,x,y\n";
    assert!(parse_sites(header.as_bytes(), Path::new("h.csv")).is_err());
    let bad_period = "site_id,x,y,period,polarity,find_count\na,1,2,Medieval,positive,\n";
    assert!(parse_sites(bad_period.as_bytes(), Path::new("p.csv")).is_err());
}

#[test]
fn geojson_targets_round_trip() {
    let t = Targets {
        points: vec![(1.0, 2.0)],
        lines: vec![vec![(0.0, 0.0), (5.0, 5.0)]],
    };
    let back = parse_targets(&targets_to_geojson(&t).to_string()).unwrap();
    assert_eq!(back, t);
    let multi = r#"{"type":"MultiLineString","coordinates":[[[0,0],[1,1]],[[2,2],[3,3]]]}"#;
    assert_eq!(parse_targets(multi).unwrap().lines.len(), 2);
    assert!(parse_targets(r#"{"type":"Polygon","coordinates":[]}"#).is_err());
}

fn random_surface(seed: u64, w: usize, h: usize) -> RasterGrid<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..w * h).map(|_| rng.random_range(0.0..1.0)).collect();
    RasterGrid::from_data(w, h, 1, GeoTransform::unit(), v).unwrap()
}

#[test]
fn difference_matches_pixelwise_subtraction() {
    let a = random_surface(1, 7, 5);
    let mut b = random_surface(2, 7, 5);
    b.set_masked(3, true);
    let d = difference_raster(&a, &b).unwrap();
    for i in 0..35 {
        if i == 3 {
            assert!(d.is_masked(i));
        } else {
            assert_eq!(d.band(0)[i], a.band(0)[i] - b.band(0)[i]);
        }
    }
    let same = difference_raster(&a, &a).unwrap();
    assert!(same.band(0).iter().all(|v| *v == 0.0));
    let shifted_vals: Vec<f64> = a.band(0).iter().map(|v| v + 0.1).collect();
    let shifted = RasterGrid::from_data(7, 5, 1, GeoTransform::unit(), shifted_vals).unwrap();
    assert!(difference_raster(&shifted, &a).unwrap().band(0).iter().all(|v| (v - 0.1).abs() < 1e-12));
    let other = RasterGrid::<f64>::filled(7, 5, 1, GeoTransform::new(1.0, 0.0, 1.0, 1.0), 0.0).unwrap();
    assert!(difference_raster(&a, &other).is_err());
}

#[test]
fn density_csv_and_products() {
    let a = random_surface(3, 10, 10);
    let d = surface_density(&a, 20).unwrap();
    let csv = density_csv(&d);
    assert_eq!(csv.lines().count(), 21);
    assert_eq!(d.counts.iter().sum::<usize>(), 100);
    let tmp = tempfile::tempdir().unwrap();
    let files = emit_surface_products(tmp.path(), "m", &a, &random_surface(4, 10, 10)).unwrap();
    assert!(files.iter().all(|p| p.exists()));
    write_raster(tmp.path().join("x.apmr"), &a).unwrap();
}
