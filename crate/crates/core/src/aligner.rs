//! Alignment of a projection series against the bead track.
//!
//! Vertically every frame is moved so the bead sits at the row it occupies
//! in the first frame. Horizontally there are two targets: the frame's
//! symmetry axis (`Axis`), or the cosine trajectory the bead would trace if
//! the stage rotated perfectly about that axis (`Cosine`):
//!
//! ```text
//! target_x(k) = axis_x - R * cos(pi * k / (n - 1)),   k = 0 .. n-1
//! ```
//!
//! with `R = axis_x - x_0` taken from the first frame. The cosine target
//! avoids the large shifts (and narrow common field) that `Axis` produces when
//! the bead is mounted off-axis.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::ref_locator::{Method, RefTrack};
use crate::stack_io::ProjectionStack;
use crate::trail_roi::Roi;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AlignMode {
    Axis,
    Cosine,
}

impl std::str::FromStr for AlignMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "axis" => Ok(AlignMode::Axis),
            "cosine" => Ok(AlignMode::Cosine),
            other => Err(Error::invalid(format!("unknown alignment mode {other:?}"))),
        }
    }
}

/// What fills the border a shift exposes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftFill {
    Constant(f32),
    EdgeReplicate,
    /// A constant equal to the most frequent value on the frame's border.
    #[default]
    BorderMode,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Shift {
    pub dx: f64,
    pub dy: f64,
}

/// How a frame's shift was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FrameStatus {
    Auto,
    /// Detector missed; shift left at zero pending manual correction.
    Missed,
    Manual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentPlan {
    pub mode: AlignMode,
    pub axis_x: f64,
    #[serde(rename = "R_signed")]
    pub r_signed: f64,
    pub target_y: f64,
    pub targets_x: Vec<f64>,
    pub shifts: Vec<Shift>,
    pub status: Vec<FrameStatus>,
    pub crop: Roi,
    pub width: usize,
    pub height: usize,
}

impl AlignmentPlan {
    pub fn len(&self) -> usize {
        self.shifts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shifts.is_empty()
    }

    /// Frames still waiting for a manual fix.
    pub fn flagged(&self) -> Vec<usize> {
        self.status
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == FrameStatus::Missed)
            .map(|(k, _)| k)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.shifts.len();
        if n < 2 || self.targets_x.len() != n || self.status.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "plan has {n} shifts, {} targets, {} status flags",
                self.targets_x.len(),
                self.status.len()
            )));
        }
        self.crop.check_within(self.width, self.height)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let plan: AlignmentPlan = serde_json::from_str(text)
            .map_err(|e| Error::invalid(format!("plan JSON: {e}")))?;
        plan.validate()?;
        Ok(plan)
    }
}

/// Rotation-axis column of a `width`-pixel frame.
pub fn axis_of(width: usize) -> f64 {
    (width as f64 - 1.0) / 2.0
}

pub fn horizontal_targets(
    mode: AlignMode,
    axis_x: f64,
    r_signed: f64,
    n_frames: usize,
) -> Result<Vec<f64>> {
    if n_frames < 2 {
        return Err(Error::invalid(format!(
            "targets need at least 2 frames, got {n_frames}"
        )));
    }
    let last = (n_frames - 1) as f64;
    Ok((0..n_frames)
        .map(|k| match mode {
            AlignMode::Axis => axis_x,
            // k / last is exactly 1 at the end, so cos hits -1 exactly
            AlignMode::Cosine => {
                axis_x - r_signed * (std::f64::consts::PI * (k as f64 / last)).cos()
            }
        })
        .collect())
}

/// Signed bead offset `axis_x - x_0` from the first frame.
pub fn estimate_r(track: &RefTrack, axis_x: f64) -> Result<f64> {
    match track.entries.first() {
        Some(e) if e.hit && e.center_x.is_finite() => Ok(axis_x - e.center_x),
        Some(_) => Err(Error::NoReference(
            "the first frame has no detected reference point; correct it manually first".into(),
        )),
        None => Err(Error::NoReference("empty track".into())),
    }
}

pub fn build_plan(
    track: &RefTrack,
    width: usize,
    height: usize,
    mode: AlignMode,
) -> Result<AlignmentPlan> {
    let axis_x = axis_of(width);
    let r_signed = estimate_r(track, axis_x)?;
    let n = track.len();
    let targets_x = horizontal_targets(mode, axis_x, r_signed, n)?;
    let target_y = track.entries[0].center_y;
    let mut shifts = Vec::with_capacity(n);
    let mut status = Vec::with_capacity(n);
    for (e, &tx) in track.entries.iter().zip(&targets_x) {
        if e.hit {
            shifts.push(Shift {
                dx: tx - e.center_x,
                dy: target_y - e.center_y,
            });
            status.push(if e.method == Method::Manual {
                FrameStatus::Manual
            } else {
                FrameStatus::Auto
            });
        } else {
            shifts.push(Shift::default());
            status.push(FrameStatus::Missed);
        }
    }
    let mut plan = AlignmentPlan {
        mode,
        axis_x,
        r_signed,
        target_y,
        targets_x,
        shifts,
        status,
        crop: Roi::full(width, height),
        width,
        height,
    };
    plan.crop = crop_common(&plan, width, height)?;
    Ok(plan)
}

/// Adds `(ddx, ddy)` to one frame's shift and marks it manually corrected.
pub fn nudge(plan: &AlignmentPlan, frame_index: usize, ddx: f64, ddy: f64) -> Result<AlignmentPlan> {
    if frame_index >= plan.len() {
        return Err(Error::invalid(format!(
            "frame {frame_index} outside plan of {} frames",
            plan.len()
        )));
    }
    let mut out = plan.clone();
    out.shifts[frame_index].dx += ddx;
    out.shifts[frame_index].dy += ddy;
    out.status[frame_index] = FrameStatus::Manual;
    out.crop = crop_common(&out, plan.width, plan.height)?;
    Ok(out)
}

/// Largest rectangle valid in every shifted frame, narrowed to be symmetric
/// about `axis_x` with an even width.
pub fn crop_common(plan: &AlignmentPlan, width: usize, height: usize) -> Result<Roi> {
    const EPS: f64 = 1e-9;
    let (mut left, mut right) = (0.0f64, (width - 1) as f64);
    let (mut top, mut bottom) = (0.0f64, (height - 1) as f64);
    for s in &plan.shifts {
        // output x is valid when x - dx lands inside [0, width - 1]
        left = left.max((s.dx - EPS).ceil());
        right = right.min((width as f64 - 1.0 + s.dx + EPS).floor());
        top = top.max((s.dy - EPS).ceil());
        bottom = bottom.min((height as f64 - 1.0 + s.dy + EPS).floor());
    }
    if left > right || top > bottom {
        return Err(Error::EmptyCrop);
    }
    let half = (plan.axis_x - left).min(right - plan.axis_x);
    if half < 0.0 {
        return Err(Error::EmptyCrop);
    }
    let x0 = (plan.axis_x - half - EPS).ceil();
    let mut x1 = (plan.axis_x + half + EPS).floor();
    if (x1 - x0 + 1.0) as i64 % 2 == 1 {
        x1 -= 1.0;
    }
    if x1 < x0 {
        return Err(Error::EmptyCrop);
    }
    Roi::new(
        x0 as usize,
        top as usize,
        (x1 - x0 + 1.0) as usize,
        (bottom - top + 1.0) as usize,
    )
}

/// Most frequent value along the frame border (smallest on ties).
fn border_mode(image: &Image) -> f32 {
    let (w, h) = (image.width(), image.height());
    let mut counts: HashMap<u32, usize> = HashMap::new();
    let mut bump = |v: f32| *counts.entry(v.to_bits()).or_default() += 1;
    for x in 0..w {
        bump(image.get(x, 0));
        if h > 1 {
            bump(image.get(x, h - 1));
        }
    }
    for y in 1..h.saturating_sub(1) {
        bump(image.get(0, y));
        if w > 1 {
            bump(image.get(w - 1, y));
        }
    }
    counts
        .into_iter()
        .map(|(bits, n)| (f32::from_bits(bits), n))
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.total_cmp(&a.0)))
        .map(|(v, _)| v)
        .unwrap_or(0.0)
}

/// Translates `image` by `(dx, dy)`: output `(x, y)` takes the input at
/// `(x - dx, y - dy)`. Whole-pixel shifts copy exactly; fractional ones
/// resample bilinearly.
pub fn apply_shift(image: &Image, dx: f64, dy: f64, fill: ShiftFill) -> Result<Image> {
    let (w, h) = (image.width(), image.height());
    if !(dx.is_finite() && dy.is_finite()) || dx.abs() >= w as f64 || dy.abs() >= h as f64 {
        return Err(Error::invalid(format!(
            "shift ({dx}, {dy}) exceeds {w}x{h} frame"
        )));
    }
    if dx == 0.0 && dy == 0.0 {
        return Ok(image.clone());
    }
    let constant = match fill {
        ShiftFill::Constant(v) => v,
        ShiftFill::BorderMode => border_mode(image),
        ShiftFill::EdgeReplicate => 0.0,
    };
    let replicate = matches!(fill, ShiftFill::EdgeReplicate);
    let (wmax, hmax) = ((w - 1) as f64, (h - 1) as f64);

    if dx.fract() == 0.0 && dy.fract() == 0.0 {
        let (ix, iy) = (dx as i64, dy as i64);
        return Ok(Image::from_fn(w, h, |x, y| {
            let (sx, sy) = (x as i64 - ix, y as i64 - iy);
            if (0..w as i64).contains(&sx) && (0..h as i64).contains(&sy) {
                image.get(sx as usize, sy as usize)
            } else if replicate {
                image.get(sx.clamp(0, w as i64 - 1) as usize, sy.clamp(0, h as i64 - 1) as usize)
            } else {
                constant
            }
        }));
    }

    Ok(Image::from_fn(w, h, |x, y| {
        let (mut sx, mut sy) = (x as f64 - dx, y as f64 - dy);
        if replicate {
            sx = sx.clamp(0.0, wmax);
            sy = sy.clamp(0.0, hmax);
        } else if sx < 0.0 || sy < 0.0 || sx > wmax || sy > hmax {
            return constant;
        }
        bilinear(image, sx, sy)
    }))
}

/// Bilinear sample at a point inside `[0, w-1] x [0, h-1]`.
#[inline]
fn bilinear(image: &Image, sx: f64, sy: f64) -> f32 {
    let (w, h) = (image.width(), image.height());
    let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
    let top = (1.0 - fx) * image.get(x0, y0) as f64 + fx * image.get(x1, y0) as f64;
    let bot = (1.0 - fx) * image.get(x0, y1) as f64 + fx * image.get(x1, y1) as f64;
    ((1.0 - fy) * top + fy * bot) as f32
}

/// Shifts every frame by its planned offset. The result is not cropped.
pub fn apply_plan(
    stack: &ProjectionStack,
    plan: &AlignmentPlan,
    fill: ShiftFill,
) -> Result<ProjectionStack> {
    if plan.len() != stack.len() {
        return Err(Error::ShapeMismatch(format!(
            "plan covers {} frames, stack has {}",
            plan.len(),
            stack.len()
        )));
    }
    let frames = stack
        .frames()
        .par_iter()
        .zip(plan.shifts.par_iter())
        .map(|(f, s)| apply_shift(f, s.dx, s.dy, fill))
        .collect::<Result<Vec<_>>>()?;
    stack.with_frames(frames)
}

/// Cuts every frame down to `roi`.
pub fn crop_stack(stack: &ProjectionStack, roi: &Roi) -> Result<ProjectionStack> {
    let frames = stack
        .frames()
        .par_iter()
        .map(|f| f.crop(roi))
        .collect::<Result<Vec<_>>>()?;
    stack.with_frames(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ref_locator::TrackEntry;

    fn track_from(points: &[(f64, f64)]) -> RefTrack {
        RefTrack {
            entries: points
                .iter()
                .map(|&(x, y)| TrackEntry::hit(x, y, Method::Gvb, None))
                .collect(),
        }
    }

    #[test]
    fn zero_offset_collapses_cosine_targets() {
        let t = horizontal_targets(AlignMode::Cosine, 512.0, 0.0, 17).unwrap();
        assert!(t.iter().all(|&x| x == 512.0));
    }

    #[test]
    fn cosine_targets_at_start_middle_end() {
        let t = horizontal_targets(AlignMode::Cosine, 512.0, 100.0, 181).unwrap();
        assert_eq!(t[0], 412.0);
        assert_eq!(t[180], 612.0);
        assert!((t[90] - 512.0).abs() < 1e-12);
    }

    #[test]
    fn axis_targets_are_constant() {
        let t = horizontal_targets(AlignMode::Axis, 49.5, 12.0, 5).unwrap();
        assert_eq!(t, vec![49.5; 5]);
        assert!(horizontal_targets(AlignMode::Axis, 49.5, 0.0, 1).is_err());
    }

    #[test]
    fn offset_sign_convention() {
        let r = |x| estimate_r(&track_from(&[(x, 0.0), (x, 0.0)]), 512.0).unwrap();
        assert_eq!(r(412.0), 100.0);
        assert_eq!(r(512.0), 0.0);
        assert_eq!(r(600.0), -88.0);
    }

    #[test]
    fn missed_first_frame_blocks_the_plan() {
        let mut track = track_from(&[(1.0, 1.0), (2.0, 2.0)]);
        track.entries[0] = TrackEntry::miss(Method::Cfm);
        assert!(matches!(estimate_r(&track, 5.0), Err(Error::NoReference(_))));
        assert!(build_plan(&track, 10, 10, AlignMode::Cosine).is_err());
    }

    #[test]
    fn track_on_target_needs_no_shift() {
        let targets = horizontal_targets(AlignMode::Cosine, 49.5, 20.0, 9).unwrap();
        let pts: Vec<_> = targets.iter().map(|&x| (x, 30.0)).collect();
        let plan = build_plan(&track_from(&pts), 100, 80, AlignMode::Cosine).unwrap();
        for s in &plan.shifts {
            assert!(s.dx.abs() < 1e-12 && s.dy == 0.0);
        }
        assert_eq!(plan.crop, Roi::new(0, 0, 100, 80).unwrap());
    }

    #[test]
    fn axis_mode_pulls_back_a_constant_offset() {
        let pts = vec![(52.5, 10.0); 6];
        let plan = build_plan(&track_from(&pts), 100, 40, AlignMode::Axis).unwrap();
        assert!(plan.shifts.iter().all(|s| s.dx == -3.0 && s.dy == 0.0));
    }

    #[test]
    fn missed_frames_stay_put_and_are_flagged() {
        let mut track = track_from(&[(40.0, 10.0), (42.0, 12.0), (41.0, 11.0)]);
        track.entries[1] = TrackEntry::miss(Method::Cfm);
        let plan = build_plan(&track, 100, 40, AlignMode::Axis).unwrap();
        assert_eq!(plan.shifts[1], Shift::default());
        assert_eq!(plan.flagged(), vec![1]);
        let fixed = nudge(&plan, 1, 0.5, 0.0).unwrap();
        assert!(fixed.flagged().is_empty());
        assert_eq!(fixed.status[1], FrameStatus::Manual);
    }

    #[test]
    fn nudges_accumulate_and_invert() {
        let plan = build_plan(&track_from(&[(40.0, 10.0), (41.0, 10.0)]), 100, 40, AlignMode::Axis)
            .unwrap();
        let there = nudge(&plan, 1, 0.1, 0.0).unwrap();
        let back = nudge(&there, 1, -0.1, 0.0).unwrap();
        assert!((back.shifts[1].dx - plan.shifts[1].dx).abs() < 1e-12);
        assert_eq!(back.shifts[1].dy, plan.shifts[1].dy);

        let mut p = plan.clone();
        for _ in 0..10 {
            p = nudge(&p, 0, 0.5, 0.0).unwrap();
        }
        assert_eq!(p.shifts[0].dx, plan.shifts[0].dx + 5.0);
        assert!(nudge(&plan, 2, 1.0, 0.0).is_err());
    }

    fn plan_with(width: usize, height: usize, shifts: Vec<Shift>) -> AlignmentPlan {
        let n = shifts.len();
        AlignmentPlan {
            mode: AlignMode::Axis,
            axis_x: axis_of(width),
            r_signed: 0.0,
            target_y: 0.0,
            targets_x: vec![axis_of(width); n],
            shifts,
            status: vec![FrameStatus::Auto; n],
            crop: Roi::full(width, height),
            width,
            height,
        }
    }

    #[test]
    fn crop_of_unshifted_plan_is_the_frame() {
        let p = plan_with(100, 60, vec![Shift::default(); 3]);
        assert_eq!(crop_common(&p, 100, 60).unwrap(), Roi::new(0, 0, 100, 60).unwrap());
        // odd widths lose one column to keep the width even
        let p = plan_with(101, 60, vec![Shift::default(); 3]);
        assert_eq!(crop_common(&p, 101, 60).unwrap(), Roi::new(0, 0, 100, 60).unwrap());
    }

    #[test]
    fn uniform_right_shift_crop_is_symmetric() {
        let p = plan_with(100, 50, vec![Shift { dx: 5.0, dy: 0.0 }; 4]);
        let c = crop_common(&p, 100, 50).unwrap();
        assert_eq!((c.x0, c.x1(), c.width), (5, 94, 90));
        assert_eq!(p.axis_x - c.x0 as f64, c.x1() as f64 - p.axis_x);
    }

    #[test]
    fn vertical_crop_intersects_row_ranges() {
        let shifts = [-3.0, 0.0, 2.5, 4.0]
            .iter()
            .map(|&dy| Shift { dx: 0.0, dy })
            .collect();
        let c = crop_common(&plan_with(64, 40, shifts), 64, 40).unwrap();
        assert_eq!((c.y0, c.y1()), (4, 39 - 3));
    }

    #[test]
    fn oversized_shifts_leave_nothing() {
        let p = plan_with(10, 10, vec![Shift { dx: 9.5, dy: 0.0 }, Shift { dx: -9.5, dy: 0.0 }]);
        assert!(matches!(crop_common(&p, 10, 10), Err(Error::EmptyCrop)));
    }

    #[test]
    fn identity_shift_is_bit_exact() {
        let img = Image::from_fn(7, 5, |x, y| (x as f32).sin() + y as f32);
        assert_eq!(apply_shift(&img, 0.0, 0.0, ShiftFill::default()).unwrap(), img);
    }

    #[test]
    fn integer_shift_round_trip_on_interior() {
        let img = Image::from_fn(12, 9, |x, y| (x * 31 + y * 7) as f32 * 0.37);
        let there = apply_shift(&img, 3.0, -2.0, ShiftFill::Constant(-1.0)).unwrap();
        let back = apply_shift(&there, -3.0, 2.0, ShiftFill::Constant(-1.0)).unwrap();
        // rows 0..2 and columns 9..12 were filled along the way
        for y in 2..9 {
            for x in 0..12 - 3 {
                assert_eq!(back.get(x, y).to_bits(), img.get(x, y).to_bits());
            }
        }
        assert_eq!(there.get(0, 0), -1.0);
    }

    #[test]
    fn half_pixel_shift_of_a_ramp() {
        let img = Image::from_fn(10, 3, |x, _| x as f32);
        let out = apply_shift(&img, 0.5, 0.0, ShiftFill::Constant(0.0)).unwrap();
        for x in 1..10 {
            assert!((out.get(x, 1) - (x as f32 - 0.5)).abs() < 1e-6);
        }
        assert_eq!(out.get(0, 1), 0.0);
    }

    #[test]
    fn fill_policies() {
        let mut img = Image::filled(6, 6, 200.0);
        img.set(0, 0, 3.0);
        let out = apply_shift(&img, 2.0, 0.0, ShiftFill::BorderMode).unwrap();
        assert_eq!(out.get(0, 3), 200.0);
        let ramp = Image::from_fn(6, 2, |x, _| x as f32);
        let out = apply_shift(&ramp, 2.0, 0.0, ShiftFill::EdgeReplicate).unwrap();
        assert_eq!(out.row(0), &[0.0, 0.0, 0.0, 1.0, 2.0, 3.0]);
        assert!(apply_shift(&ramp, 6.0, 0.0, ShiftFill::default()).is_err());
    }

    #[test]
    fn plan_json_uses_the_documented_keys() {
        let plan = build_plan(&track_from(&[(40.0, 10.0), (41.0, 10.0)]), 100, 40, AlignMode::Cosine)
            .unwrap();
        let json = plan.to_json();
        for key in ["\"mode\"", "\"axis_x\"", "\"R_signed\"", "\"target_y\"", "\"shifts\"", "\"crop\""] {
            assert!(json.contains(key), "{key} missing");
        }
        assert_eq!(AlignmentPlan::from_json(&json).unwrap(), plan);
    }

    #[test]
    fn flagged_frame_passes_through_apply_plan() {
        let frames: Vec<Image> = (0..3)
            .map(|k| Image::from_fn(20, 10, |x, y| (x + y + k) as f32))
            .collect();
        let stack = ProjectionStack::new(frames, 0.0, 180.0, 8, "t").unwrap();
        let mut track = track_from(&[(9.5, 5.0), (11.5, 6.0), (9.0, 5.0)]);
        track.entries[2] = TrackEntry::miss(Method::Cfm);
        let plan = build_plan(&track, 20, 10, AlignMode::Axis).unwrap();
        let out = apply_plan(&stack, &plan, ShiftFill::default()).unwrap();
        assert_eq!(out.frame(2), stack.frame(2));
        assert_eq!(out.angles(), stack.angles());
        assert_eq!(out.frame(1).get(5, 5), stack.frame(1).get(7, 6));
    }
}
