//! Reference-point location checked against brute-force and geometric oracles.

use nanoct::ref_locator::{cfm_center, gvb_center, gvb_center_at, iterative_threshold};
use nanoct::Image;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Every integer `t` whose partition `{v <= t}` reproduces itself under the
/// midpoint-of-means map; returns `(t, midpoint)` pairs.
fn brute_force_fixed_points(values: &[f32]) -> Vec<(u32, f64)> {
    let mut out = Vec::new();
    for t in 0..=255u32 {
        let (mut lo, mut nlo, mut hi, mut nhi) = (0.0f64, 0usize, 0.0f64, 0usize);
        for &v in values {
            if v as f64 <= t as f64 {
                lo += v as f64;
                nlo += 1;
            } else {
                hi += v as f64;
                nhi += 1;
            }
        }
        if nlo == 0 || nhi == 0 {
            continue;
        }
        let mid = (lo / nlo as f64 + hi / nhi as f64) / 2.0;
        if mid.floor() as u32 == t {
            out.push((t, mid));
        }
    }
    out
}

fn bimodal(n: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Normal::new(40.0, 10.0).unwrap();
    let b = Normal::new(180.0, 10.0).unwrap();
    let data = (0..n * n)
        .map(|i| {
            let v: f64 = if i % 3 == 0 { a.sample(&mut rng) } else { b.sample(&mut rng) };
            v.round().clamp(0.0, 255.0) as f32
        })
        .collect();
    Image::from_vec(n, n, data).unwrap()
}

#[test]
fn threshold_matches_brute_force_fixed_point() {
    let img = bimodal(64, 7);
    let fixed = brute_force_fixed_points(img.data());
    assert_eq!(fixed.len(), 1, "fixed points {fixed:?}");
    let t = iterative_threshold(&img);
    assert!((t - fixed[0].1).abs() < 1e-9, "{t} vs {:?}", fixed[0]);
    assert!(t > 60.0 && t < 160.0);
}

fn blob(w: usize, h: usize, cx: f64, cy: f64, r: f64) -> Image {
    Image::from_fn(w, h, |x, y| {
        let d = (x as f64 - cx).hypot(y as f64 - cy);
        if d <= r {
            40.0 + (d * 10.0) as f32
        } else {
            230.0
        }
    })
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn convex_hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

proptest! {
    #[test]
    fn threshold_terminates_and_is_idempotent(
        data in proptest::collection::vec(0u8..=255, 4..400),
    ) {
        let w = data.len();
        let img = Image::from_vec(w, 1, data.iter().map(|&v| v as f32).collect()).unwrap();
        let t = iterative_threshold(&img);
        prop_assert!(t.is_finite());
        let fixed = brute_force_fixed_points(img.data());
        if !fixed.is_empty() && img.min_max().0 != img.min_max().1 {
            prop_assert!(fixed.iter().any(|&(_, m)| (m - t).abs() < 1e-9), "t {} not in {:?}", t, fixed);
        }
    }

    #[test]
    fn gvb_is_translation_equivariant(
        cx in 10.0f64..18.0, cy in 10.0f64..18.0, r in 2.0f64..5.0,
        tx in -5i32..=5, ty in -5i32..=5,
    ) {
        let a = blob(32, 32, cx, cy, r);
        let b = blob(32, 32, cx + tx as f64, cy + ty as f64, r);
        // a pure integer translation of the blob on a flat field
        let ta = iterative_threshold(&a);
        let (xa, ya) = gvb_center_at(&a, ta, 255.0).unwrap();
        let (xb, yb) = gvb_center_at(&b, iterative_threshold(&b), 255.0).unwrap();
        let shifted = Image::from_fn(32, 32, |x, y| {
            let (sx, sy) = (x as i32 - tx, y as i32 - ty);
            if (0..32).contains(&sx) && (0..32).contains(&sy) { a.get(sx as usize, sy as usize) } else { 230.0 }
        });
        prop_assert_eq!(shifted.data(), b.data());
        prop_assert!((xb - xa - tx as f64).abs() < 1e-9);
        prop_assert!((yb - ya - ty as f64).abs() < 1e-9);
    }

    #[test]
    fn gvb_lies_in_hull_of_dark_pixels(
        data in proptest::collection::vec(0u8..=255, 64),
    ) {
        let img = Image::from_vec(8, 8, data.iter().map(|&v| v as f32).collect()).unwrap();
        let t = iterative_threshold(&img);
        let (x, y) = gvb_center(&img, 255.0).unwrap();
        let mut pts = Vec::new();
        for yy in 0..8 {
            for xx in 0..8 {
                if img.get(xx, yy) as f64 <= t {
                    pts.push((xx as f64, yy as f64));
                }
            }
        }
        let hull = convex_hull(pts.clone());
        let (minx, maxx) = pts.iter().fold((f64::MAX, f64::MIN), |m, p| (m.0.min(p.0), m.1.max(p.0)));
        let (miny, maxy) = pts.iter().fold((f64::MAX, f64::MIN), |m, p| (m.0.min(p.1), m.1.max(p.1)));
        prop_assert!(x >= minx - 1e-9 && x <= maxx + 1e-9 && y >= miny - 1e-9 && y <= maxy + 1e-9);
        if hull.len() >= 3 {
            for i in 0..hull.len() {
                let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
                prop_assert!(cross(a, b, (x, y)) >= -1e-7, "outside hull edge {:?}-{:?}", a, b);
            }
        }
    }

    #[test]
    fn cfm_center_stable_under_radius_range_perturbation(
        cx in 18.0f64..22.0, cy in 13.0f64..17.0, r in 5.0f64..7.0,
        scale in 0.8f64..1.2,
    ) {
        let img = blob(40, 30, cx, cy, r);
        let base = cfm_center(&img, 3.0, 10.0).unwrap().expect("hit");
        let moved = cfm_center(&img, 3.0 * scale, 10.0 * scale).unwrap().expect("hit");
        prop_assert!((base.x - moved.x).abs() <= 0.5 && (base.y - moved.y).abs() <= 0.5);
        prop_assert!((base.x - cx).abs() <= 1.0 && (base.y - cy).abs() <= 1.0);
    }
}

#[test]
fn cfm_misses_a_flat_window() {
    let img = Image::filled(30, 30, 200.0);
    assert!(cfm_center(&img, 3.0, 10.0).unwrap().is_none());
}
