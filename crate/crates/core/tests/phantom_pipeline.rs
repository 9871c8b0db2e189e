//! The library stages chained on synthetic bead data with known ground truth.

use nanoct::aligner::{apply_plan, build_plan, crop_stack, AlignMode, ShiftFill};
use nanoct::fbp_recon::{ortho_slices, reconstruct_rows, ReconParams};
use nanoct::phantom_lab::{bead_dataset, score_track, BeadSpec};
use nanoct::ref_locator::{track_reference, LocatorOptions, Method};
use nanoct::trail_roi::{suggest_roi, trail_product};
use nanoct::{ProjectionStack, Roi, Volume};

fn small(seed: u64) -> BeadSpec {
    BeadSpec {
        frames: 61,
        size: 128,
        bead_radius: 5.0,
        bead_offset: 30.0,
        jitter_max: 4.0,
        noise_sigma: 3.0,
        seed,
        ..BeadSpec::default()
    }
}

fn roi_of(stack: &ProjectionStack) -> Roi {
    suggest_roi(&trail_product(stack, 40.0), 3).unwrap()
}

/// Intensity-weighted centroid of the positive voxels above half the maximum.
fn blob_center(vol: &Volume) -> (f64, f64, f64) {
    let (nx, ny, nz) = vol.dims();
    let max = vol.data().iter().cloned().fold(f32::MIN, f32::max);
    let (mut s, mut sx, mut sy, mut sz) = (0.0, 0.0, 0.0, 0.0);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let v = vol.get(x, y, z);
                if v >= 0.5 * max {
                    let v = v as f64;
                    s += v;
                    sx += v * x as f64;
                    sy += v * y as f64;
                    sz += v * z as f64;
                }
            }
        }
    }
    (sx / s, sy / s, sz / s)
}

#[test]
fn trail_covers_every_true_center() {
    let (stack, truth) = bead_dataset(&small(3)).unwrap();
    let trail = trail_product(&stack, 40.0);
    for &(x, y) in &truth.true_centers {
        assert_eq!(trail.mask.get(x.round() as usize, y.round() as usize), 0, "({x}, {y})");
    }
    let roi = suggest_roi(&trail, 2).unwrap();
    assert!(truth.true_centers.iter().all(|&(x, y)| roi.contains_point(x, y)));
}

#[test]
fn gvb_tracks_noisy_bead_within_a_few_pixels() {
    let (stack, truth) = bead_dataset(&small(42)).unwrap();
    let track = track_reference(&stack, &roi_of(&stack), Method::Gvb, &LocatorOptions::default()).unwrap();
    let score = score_track(&track, &truth).unwrap();
    assert_eq!(score.missed, 0);
    assert!(score.max_abs_err <= 4.0 && score.mean_abs_err <= 3.0, "{score:?}");
}

#[test]
fn noiseless_locators_are_accurate() {
    let spec = BeadSpec { noise_sigma: 0.0, ..small(5) };
    let (stack, truth) = bead_dataset(&spec).unwrap();
    let roi = roi_of(&stack);
    let cfm = track_reference(&stack, &roi, Method::Cfm, &LocatorOptions::default()).unwrap();
    let s = score_track(&cfm, &truth).unwrap();
    assert_eq!(s.missed, 0);
    assert!(s.max_abs_err <= 1.0, "cfm {s:?}");

    let still = BeadSpec { jitter_max: 0.0, ..spec };
    let (stack, truth) = bead_dataset(&still).unwrap();
    let gvb = track_reference(&stack, &roi_of(&stack), Method::Gvb, &LocatorOptions::default()).unwrap();
    let s = score_track(&gvb, &truth).unwrap();
    assert!(s.max_abs_err <= 0.5, "gvb {s:?}");
}

#[test]
fn plan_undoes_jitter_and_redetection_lands_on_targets() {
    let spec = BeadSpec { noise_sigma: 0.0, ..small(11) };
    let (stack, truth) = bead_dataset(&spec).unwrap();
    let roi = roi_of(&stack);
    let opts = LocatorOptions::default();
    let track = track_reference(&stack, &roi, Method::Gvb, &opts).unwrap();
    let plan = build_plan(&track, stack.width(), stack.height(), AlignMode::Cosine).unwrap();

    // R is estimated from frame 0, so its jitter leaks in as j0 * cos(theta)
    let (j0x, j0y) = truth.true_shifts[0];
    for (k, s) in plan.shifts.iter().enumerate() {
        let (jx, jy) = truth.true_shifts[k];
        let c = stack.angles()[k].to_radians().cos();
        assert!((s.dx - (-jx + j0x * c)).abs() <= 0.5, "frame {k} dx {}", s.dx);
        assert!((s.dy - (-jy + j0y)).abs() <= 0.5, "frame {k} dy {}", s.dy);
    }

    let aligned = apply_plan(&stack, &plan, ShiftFill::BorderMode).unwrap();
    let again = track_reference(&aligned, &roi, Method::Gvb, &opts).unwrap();
    for (k, e) in again.entries.iter().enumerate() {
        assert!(e.hit);
        assert!((e.center_x - plan.targets_x[k]).abs() <= 0.5, "frame {k}");
        assert!((e.center_y - plan.target_y).abs() <= 0.5, "frame {k}");
    }
}

#[test]
fn still_bead_reconstructs_at_its_true_position() {
    // odd frame size puts the bead row on a pixel
    let spec = BeadSpec { size: 127, jitter_max: 0.0, ..small(8) };
    let (stack, truth) = bead_dataset(&spec).unwrap();
    let row = spec.bead_row() as usize;
    let params = ReconParams {
        row_range: Some((row - 8, row + 8)),
        attenuation: true,
        ..ReconParams::for_stack(&stack)
    };
    let vol = reconstruct_rows(&stack, &params).unwrap();
    let (nx, _, nz) = vol.dims();
    let c = (nx as f64 - 1.0) / 2.0;
    let (x, y, z) = blob_center(&vol);
    let expect = (c - truth.true_r, c, 8.0);
    let d = ((x - expect.0).powi(2) + (y - expect.1).powi(2) + (z - expect.2).powi(2)).sqrt();
    assert!(d <= 2.0, "bead at ({x:.2}, {y:.2}, {z:.2}), expected {expect:?}");

    let means: Vec<f64> = (0..nz)
        .map(|iz| {
            let v = ortho_slices(&vol, 0, 0, iz).unwrap().axial;
            v.data().iter().map(|&p| p as f64).sum::<f64>() / v.data().len() as f64
        })
        .collect();
    let best = (0..nz).max_by(|&a, &b| means[a].total_cmp(&means[b])).unwrap();
    assert_eq!(best, 8, "slice means {means:?}");
}

#[test]
fn aligned_bead_reconstructs_near_the_plan_radius() {
    let spec = small(21);
    let (stack, _) = bead_dataset(&spec).unwrap();
    let track = track_reference(&stack, &roi_of(&stack), Method::Gvb, &LocatorOptions::default()).unwrap();
    let plan = build_plan(&track, stack.width(), stack.height(), AlignMode::Cosine).unwrap();
    let aligned = crop_stack(&apply_plan(&stack, &plan, ShiftFill::BorderMode).unwrap(), &plan.crop).unwrap();
    let row = (plan.target_y.round() as usize) - plan.crop.y0;
    let params = ReconParams {
        row_range: Some((row - 8, row + 8)),
        attenuation: true,
        ..ReconParams::for_stack(&aligned)
    };
    let vol = reconstruct_rows(&aligned, &params).unwrap();
    let c = (vol.dims().0 as f64 - 1.0) / 2.0;
    let (x, y, z) = blob_center(&vol);
    let d = ((x - (c - plan.r_signed)).powi(2) + (y - c).powi(2)
        + (z - (plan.target_y - plan.crop.y0 as f64 - (row - 8) as f64)).powi(2))
    .sqrt();
    assert!(d <= 2.0, "bead at ({x:.2}, {y:.2}, {z:.2}), R {}", plan.r_signed);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                let (stack, _) = bead_dataset(&small(42)).unwrap();
                let track =
                    track_reference(&stack, &roi_of(&stack), Method::Gvb, &LocatorOptions::default()).unwrap();
                let plan = build_plan(&track, stack.width(), stack.height(), AlignMode::Cosine).unwrap();
                let aligned = crop_stack(&apply_plan(&stack, &plan, ShiftFill::BorderMode).unwrap(), &plan.crop)
                    .unwrap();
                let params = ReconParams {
                    row_range: Some((40, 60)),
                    attenuation: true,
                    ..ReconParams::for_stack(&aligned)
                };
                let vol = reconstruct_rows(&aligned, &params).unwrap();
                (stack, vol)
            })
    };
    let (s1, v1) = run(1);
    let (s3, v3) = run(3);
    assert_eq!(s1, s3);
    let bits = |v: &Volume| v.data().iter().map(|f| f.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&v1), bits(&v3));
}
