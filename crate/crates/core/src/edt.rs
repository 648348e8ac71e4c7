//! Exact Euclidean distance transform.
//!
//! Two separable passes of the lower-envelope-of-parabolas algorithm
//! (Felzenszwalb & Huttenlocher), with independent pixel spacing per axis so
//! results come out in map units.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Squared distance along one line of samples at positions `i·spacing`.
///
/// `f` holds squared distances from the previous pass (`INFINITY` where no
/// site is reachable). Entries equal to infinity never enter the envelope.
fn envelope_1d(f: &[f64], spacing: f64, out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    let n = f.len();
    v.clear();
    z.clear();
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let xq = q as f64 * spacing;
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let xp = p as f64 * spacing;
                    let s = ((f[q] + xq * xq) - (f[p] + xp * xp)) / (2.0 * (xq - xp));
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (i, o) in out.iter_mut().enumerate() {
        let x = i as f64 * spacing;
        while k + 1 < v.len() && z[k + 1] < x {
            k += 1;
        }
        let d = x - v[k] as f64 * spacing;
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance (map units²) from each pixel centre to the
/// nearest target pixel centre. Row-major `width × height` input.
pub fn squared_distance_transform(targets: &[bool], width: usize, height: usize, dx: f64, dy: f64) -> Result<Vec<f64>> {
    if targets.len() != width * height {
        return Err(Error::ShapeMismatch {
            expected: alloc::format!("{} cells", width * height),
            found: alloc::format!("{} cells", targets.len()),
        });
    }
    if !(dx > 0.0 && dy > 0.0) {
        return Err(Error::config("pixel spacing must be positive"));
    }
    if !targets.iter().any(|t| *t) {
        return Err(Error::empty("distance transform needs at least one target pixel"));
    }

    let mut grid: Vec<f64> = targets
        .iter()
        .map(|&t| if t { 0.0 } else { f64::INFINITY })
        .collect();
    let mut v = Vec::new();
    let mut z = Vec::new();

    // columns
    let mut col_in = vec![0.0; height];
    let mut col_out = vec![0.0; height];
    for c in 0..width {
        for r in 0..height {
            col_in[r] = grid[r * width + c];
        }
        envelope_1d(&col_in, dy, &mut col_out, &mut v, &mut z);
        for r in 0..height {
            grid[r * width + c] = col_out[r];
        }
    }

    // rows
    let mut row_out = vec![0.0; width];
    for r in 0..height {
        let row = &grid[r * width..(r + 1) * width];
        envelope_1d(row, dx, &mut row_out, &mut v, &mut z);
        grid[r * width..(r + 1) * width].copy_from_slice(&row_out);
    }
    Ok(grid)
}

/// Euclidean distance in map units to the nearest target pixel.
pub fn distance_transform(targets: &[bool], width: usize, height: usize, dx: f64, dy: f64) -> Result<Vec<f64>> {
    let mut d = squared_distance_transform(targets, width, height, dx, dy)?;
    d.iter_mut().for_each(|v| *v = math::sqrt(*v));
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(targets: &[bool], w: usize, h: usize, dx: f64, dy: f64) -> Vec<f64> {
        let pts: Vec<(usize, usize)> = (0..w * h).filter(|i| targets[*i]).map(|i| (i / w, i % w)).collect();
        (0..w * h)
            .map(|i| {
                let (r, c) = (i / w, i % w);
                pts.iter()
                    .map(|&(pr, pc)| {
                        let ddx = (c as f64 - pc as f64) * dx;
                        let ddy = (r as f64 - pr as f64) * dy;
                        (ddx * ddx + ddy * ddy).sqrt()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn pythagorean_offset() {
        let (w, h) = (12, 12);
        let mut t = vec![false; w * h];
        t[0] = true;
        let d = distance_transform(&t, w, h, 1.0, 1.0).unwrap();
        assert_eq!(d[8 * w + 6], 10.0);
        assert_eq!(d[4 * w + 3], 5.0);
        assert_eq!(d[0], 0.0);
    }

    #[test]
    fn all_targets_is_zero() {
        let t = vec![true; 30];
        let d = distance_transform(&t, 6, 5, 2.0, 3.0).unwrap();
        assert!(d.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn no_targets_is_an_error() {
        let t = vec![false; 30];
        assert!(matches!(
            distance_transform(&t, 6, 5, 1.0, 1.0),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn anisotropic_spacing() {
        let (w, h) = (5, 5);
        let mut t = vec![false; w * h];
        t[0] = true;
        let d = distance_transform(&t, w, h, 3.0, 4.0).unwrap();
        assert!((d[w + 1] - 5.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            w in 1usize..24,
            h in 1usize..24,
            dx in 0.5f64..3.0,
            dy in 0.5f64..3.0,
            bits in proptest::collection::vec(proptest::bool::weighted(0.08), 576),
            seed_cell in 0usize..576,
        ) {
            let mut t: Vec<bool> = bits[..w * h].to_vec();
            t[seed_cell % (w * h)] = true;
            let fast = distance_transform(&t, w, h, dx, dy).unwrap();
            let slow = brute(&t, w, h, dx, dy);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
        }
    }
}
