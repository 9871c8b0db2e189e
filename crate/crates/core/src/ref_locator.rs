//! Per-frame location of the fiducial bead.
//!
//! Two detectors are provided. The gray-value barycenter (GVB) thresholds
//! the window with an iterative two-means threshold, inverts everything at
//! or below it (`depth_max - A`), zeroes the rest, and takes the weighted
//! centroid. The circle fit (CFM) finds edges and votes for circle centers
//! along the gradient direction; it is slower and may report a miss when too
//! little of the rim is visible.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::stack_io::ProjectionStack;
use crate::trail_roi::Roi;

/// Iteration cap for [`iterative_threshold`].
pub const MAX_THRESHOLD_ITERATIONS: usize = 64;
/// Convergence tolerance in gray levels.
pub const THRESHOLD_TOLERANCE: f64 = 0.5;
/// Minimum rim coverage for a circle-fit hit.
pub const DEFAULT_SCORE_FLOOR: f64 = 0.6;
/// Edge pixels must reach this fraction of the strongest gradient.
const EDGE_FRACTION: f64 = 0.3;
/// Radius sampling step of the Hough accumulator, px.
const RADIUS_STEP: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Gvb,
    Cfm,
    Manual,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Gvb => "GVB",
            Method::Cfm => "CFM",
            Method::Manual => "MANUAL",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gvb" => Ok(Method::Gvb),
            "cfm" => Ok(Method::Cfm),
            "manual" => Ok(Method::Manual),
            other => Err(Error::invalid(format!("unknown method {other:?}"))),
        }
    }
}

/// Detected reference-point center for one frame, in frame pixel coordinates.
/// Misses carry NaN coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackEntry {
    #[serde(with = "nan_as_null")]
    pub center_x: f64,
    #[serde(with = "nan_as_null")]
    pub center_y: f64,
    pub method: Method,
    pub hit: bool,
    pub threshold_used: Option<f64>,
}

impl TrackEntry {
    pub fn hit(x: f64, y: f64, method: Method, threshold: Option<f64>) -> Self {
        TrackEntry {
            center_x: x,
            center_y: y,
            method,
            hit: true,
            threshold_used: threshold,
        }
    }

    pub fn miss(method: Method) -> Self {
        TrackEntry {
            center_x: f64::NAN,
            center_y: f64::NAN,
            method,
            hit: false,
            threshold_used: None,
        }
    }
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// One entry per frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefTrack {
    pub entries: Vec<TrackEntry>,
}

const CSV_HEADER: &str = "frame_index,x,y,method,hit,threshold";

impl RefTrack {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn hits(&self) -> usize {
        self.entries.iter().filter(|e| e.hit).count()
    }

    /// `frame_index,x,y,method,hit,threshold`, one line per frame. Misses print
    /// `NaN` coordinates; an absent threshold is an empty field.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for (k, e) in self.entries.iter().enumerate() {
            let threshold = e.threshold_used.map(|t| t.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{k},{},{},{},{},{threshold}\n",
                e.center_x, e.center_y, e.method, e.hit
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == CSV_HEADER => {}
            _ => return Err(Error::invalid("track CSV lacks the expected header")),
        }
        let mut entries = Vec::new();
        for (row, line) in lines.enumerate() {
            let bad = |what: &str| Error::invalid(format!("track CSV row {row}: bad {what}"));
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 6 {
                return Err(bad("field count"));
            }
            let index: usize = fields[0].parse().map_err(|_| bad("frame index"))?;
            if index != row {
                return Err(bad("frame order"));
            }
            let threshold = match fields[5] {
                "" => None,
                t => Some(t.parse().map_err(|_| bad("threshold"))?),
            };
            entries.push(TrackEntry {
                center_x: fields[1].parse().map_err(|_| bad("x"))?,
                center_y: fields[2].parse().map_err(|_| bad("y"))?,
                method: fields[3].parse()?,
                hit: fields[4].parse().map_err(|_| bad("hit flag"))?,
                threshold_used: threshold,
            });
        }
        Ok(RefTrack { entries })
    }
}

/// Mean of the values at or below `t` and of those above it.
fn class_means(values: &[f32], t: f64) -> (Option<f64>, Option<f64>) {
    let (mut lo_sum, mut lo_n, mut hi_sum, mut hi_n) = (0.0, 0usize, 0.0, 0usize);
    for &v in values {
        let v = v as f64;
        if v <= t {
            lo_sum += v;
            lo_n += 1;
        } else {
            hi_sum += v;
            hi_n += 1;
        }
    }
    let mean = |s: f64, n: usize| (n > 0).then(|| s / n as f64);
    (mean(lo_sum, lo_n), mean(hi_sum, hi_n))
}

/// Ridler–Calvard iterative threshold of `values`, starting from `initial`.
///
/// Each step moves the threshold to the midpoint of the two class means.
/// Stops once a step is below [`THRESHOLD_TOLERANCE`] and leaves the
/// partition unchanged, or after [`MAX_THRESHOLD_ITERATIONS`] steps.
pub fn iterative_threshold_from(values: &[f32], initial: f64) -> f64 {
    let mut t = initial;
    for _ in 0..MAX_THRESHOLD_ITERATIONS {
        let (Some(lo), Some(hi)) = class_means(values, t) else {
            return t;
        };
        let next = 0.5 * (lo + hi);
        let same_partition = values
            .iter()
            .all(|&v| (v as f64 <= t) == (v as f64 <= next));
        if (next - t).abs() < THRESHOLD_TOLERANCE && same_partition {
            return next;
        }
        t = next;
    }
    t
}

/// Iterative threshold of a window, starting from its mean. A constant
/// window returns its value.
pub fn iterative_threshold(subimage: &Image) -> f64 {
    threshold_of(subimage.data())
}

fn threshold_of(values: &[f32]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / values.len() as f64;
    iterative_threshold_from(values, mean)
}

/// Repeats the threshold `passes` times, each pass restricted to the pixels
/// at or below the previous threshold.
pub fn multi_pass_threshold(subimage: &Image, passes: usize) -> f64 {
    let mut t = iterative_threshold(subimage);
    for _ in 1..passes {
        let dark: Vec<f32> = subimage
            .data()
            .iter()
            .copied()
            .filter(|&v| v as f64 <= t)
            .collect();
        let next = threshold_of(&dark);
        if next == t {
            break;
        }
        t = next;
    }
    t
}

/// Gray-value barycenter at the window's own iterative threshold.
pub fn gvb_center(subimage: &Image, depth_max: f32) -> Result<(f64, f64)> {
    gvb_center_at(subimage, iterative_threshold(subimage), depth_max)
}

/// Gray-value barycenter with an explicit threshold, in window coordinates.
///
/// Pixels `A <= threshold` weigh `depth_max - A`; all others weigh zero.
/// When every selected pixel sits at full scale the weights vanish and the
/// plain centroid of the selected pixels is returned instead.
pub fn gvb_center_at(subimage: &Image, threshold: f64, depth_max: f32) -> Result<(f64, f64)> {
    let (mut sw, mut sx, mut sy) = (0.0f64, 0.0f64, 0.0f64);
    let (mut n, mut ux, mut uy) = (0usize, 0.0f64, 0.0f64);
    for y in 0..subimage.height() {
        for (x, &a) in subimage.row(y).iter().enumerate() {
            if a as f64 <= threshold {
                let w = (depth_max - a) as f64;
                sw += w;
                sx += w * x as f64;
                sy += w * y as f64;
                n += 1;
                ux += x as f64;
                uy += y as f64;
            }
        }
    }
    if sw > 0.0 {
        Ok((sx / sw, sy / sw))
    } else if n > 0 {
        Ok((ux / n as f64, uy / n as f64))
    } else {
        Err(Error::NoReference(format!(
            "no pixel at or below threshold {threshold}"
        )))
    }
}

/// Result of a successful circle fit, in window coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CircleFit {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    /// Fraction of the rim supported by edge pixels, in `[0, 1]`.
    pub score: f64,
}

fn check_radius_range(subimage: &Image, r_min: f64, r_max: f64) -> Result<()> {
    let limit = subimage.width().min(subimage.height()) as f64 / 2.0;
    if !(r_min >= 1.0 && r_min <= r_max && r_max < limit) {
        return Err(Error::invalid(format!(
            "radius range [{r_min}, {r_max}] must satisfy 1 <= r_min <= r_max < {limit}"
        )));
    }
    Ok(())
}

struct Edge {
    x: f64,
    y: f64,
    gx: f64,
    gy: f64,
}

/// Thin edges (gradient maxima along the gradient direction) above a fraction
/// of the strongest gradient. Border pixels have no gradient.
fn edge_pixels(img: &Image) -> Vec<Edge> {
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return Vec::new();
    }
    let mut gx = vec![0.0f64; w * h];
    let mut gy = vec![0.0f64; w * h];
    let mut mag = vec![0.0f64; w * h];
    let p = |x: usize, y: usize| img.get(x, y) as f64;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let dx = (p(x + 1, y - 1) + 2.0 * p(x + 1, y) + p(x + 1, y + 1))
                - (p(x - 1, y - 1) + 2.0 * p(x - 1, y) + p(x - 1, y + 1));
            let dy = (p(x - 1, y + 1) + 2.0 * p(x, y + 1) + p(x + 1, y + 1))
                - (p(x - 1, y - 1) + 2.0 * p(x, y - 1) + p(x + 1, y - 1));
            let i = y * w + x;
            gx[i] = dx;
            gy[i] = dy;
            mag[i] = dx.hypot(dy);
        }
    }
    let peak = mag.iter().cloned().fold(0.0, f64::max);
    let (lo, hi) = img.min_max();
    if peak <= 1e-6 * (1.0 + lo.abs().max(hi.abs()) as f64) {
        return Vec::new();
    }
    let floor = EDGE_FRACTION * peak;
    let sample = |x: f64, y: f64| -> f64 {
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let at = |xi: f64, yi: f64| -> f64 {
            if xi < 0.0 || yi < 0.0 || xi >= w as f64 || yi >= h as f64 {
                0.0
            } else {
                mag[yi as usize * w + xi as usize]
            }
        };
        (1.0 - fx) * (1.0 - fy) * at(x0, y0)
            + fx * (1.0 - fy) * at(x0 + 1.0, y0)
            + (1.0 - fx) * fy * at(x0, y0 + 1.0)
            + fx * fy * at(x0 + 1.0, y0 + 1.0)
    };
    let mut edges = Vec::new();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            let m = mag[i];
            if m < floor {
                continue;
            }
            let (ux, uy) = (gx[i] / m, gy[i] / m);
            let (fx, fy) = (x as f64, y as f64);
            if m >= sample(fx + ux, fy + uy) && m >= sample(fx - ux, fy - uy) {
                edges.push(Edge {
                    x: fx,
                    y: fy,
                    gx: ux,
                    gy: uy,
                });
            }
        }
    }
    edges
}

/// Circle fit with the default [`DEFAULT_SCORE_FLOOR`].
pub fn cfm_center(subimage: &Image, r_min: f64, r_max: f64) -> Result<Option<CircleFit>> {
    cfm_center_with(subimage, r_min, r_max, DEFAULT_SCORE_FLOOR)
}

/// Locates a dark disk on a brighter background by circular Hough voting.
///
/// Every edge pixel votes, for each sampled radius, at the point one radius
/// against its gradient. The strongest accumulator cell is refined by the
/// centroid of its 3x3 neighborhood. The hit is kept only if at least
/// `score_floor` of the rim's angular sectors contain a matching edge.
pub fn cfm_center_with(
    subimage: &Image,
    r_min: f64,
    r_max: f64,
    score_floor: f64,
) -> Result<Option<CircleFit>> {
    check_radius_range(subimage, r_min, r_max)?;
    let edges = edge_pixels(subimage);
    if edges.is_empty() {
        return Ok(None);
    }
    let (w, h) = (subimage.width(), subimage.height());
    let n_r = ((r_max - r_min) / RADIUS_STEP).floor() as usize + 1;
    let radius = |k: usize| r_min + k as f64 * RADIUS_STEP;
    let mut acc = vec![0.0f32; n_r * w * h];
    for (k, slab) in acc.chunks_mut(w * h).enumerate() {
        let r = radius(k);
        for e in &edges {
            let (cx, cy) = (e.x - r * e.gx, e.y - r * e.gy);
            let (x0, y0) = (cx.floor(), cy.floor());
            let (fx, fy) = ((cx - x0) as f32, (cy - y0) as f32);
            for (dx, dy, wgt) in [
                (0.0, 0.0, (1.0 - fx) * (1.0 - fy)),
                (1.0, 0.0, fx * (1.0 - fy)),
                (0.0, 1.0, (1.0 - fx) * fy),
                (1.0, 1.0, fx * fy),
            ] {
                let (xi, yi) = (x0 + dx, y0 + dy);
                if xi >= 0.0 && yi >= 0.0 && xi < w as f64 && yi < h as f64 {
                    slab[yi as usize * w + xi as usize] += wgt;
                }
            }
        }
    }
    let (best, _) = acc
        .iter()
        .enumerate()
        .fold((0usize, f32::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        });
    let k = best / (w * h);
    let (px, py) = ((best % (w * h)) % w, (best % (w * h)) / w);
    let slab = &acc[k * w * h..(k + 1) * w * h];
    let (mut s, mut sx, mut sy) = (0.0f64, 0.0f64, 0.0f64);
    for yi in py.saturating_sub(1)..=(py + 1).min(h - 1) {
        for xi in px.saturating_sub(1)..=(px + 1).min(w - 1) {
            let v = slab[yi * w + xi] as f64;
            s += v;
            sx += v * xi as f64;
            sy += v * yi as f64;
        }
    }
    if s <= 0.0 {
        return Ok(None);
    }
    let (cx, cy, r) = (sx / s, sy / s, radius(k));
    let score = rim_coverage(&edges, cx, cy, r);
    if score < score_floor {
        return Ok(None);
    }
    if cx < 0.0 || cy < 0.0 || cx > (w - 1) as f64 || cy > (h - 1) as f64 {
        return Ok(None);
    }
    Ok(Some(CircleFit {
        x: cx,
        y: cy,
        radius: r,
        score,
    }))
}

/// Fraction of angular sectors around `(cx, cy)` holding an outward-facing
/// edge within 1.5 px of radius `r`.
fn rim_coverage(edges: &[Edge], cx: f64, cy: f64, r: f64) -> f64 {
    let sectors = ((std::f64::consts::PI * r).round() as usize).clamp(8, 64);
    let mut seen = vec![false; sectors];
    for e in edges {
        let (dx, dy) = (e.x - cx, e.y - cy);
        let d = dx.hypot(dy);
        if d == 0.0 || (d - r).abs() > 1.5 {
            continue;
        }
        if (dx * e.gx + dy * e.gy) / d < 0.5 {
            continue;
        }
        let angle = dy.atan2(dx).rem_euclid(std::f64::consts::TAU);
        let s = ((angle / std::f64::consts::TAU) * sectors as f64) as usize;
        seen[s.min(sectors - 1)] = true;
    }
    seen.iter().filter(|&&b| b).count() as f64 / sectors as f64
}

/// Knobs for [`track_reference`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocatorOptions {
    /// GVB only: number of nested threshold passes; 1 is the plain threshold.
    pub threshold_passes: usize,
    /// CFM only: radius search range in px. Defaults to
    /// `[2, min(roi) / 2 - 1]`.
    pub radius_range: Option<(f64, f64)>,
    /// CFM only: minimum rim coverage for a hit.
    pub score_floor: f64,
}

impl Default for LocatorOptions {
    fn default() -> Self {
        LocatorOptions {
            threshold_passes: 1,
            radius_range: None,
            score_floor: DEFAULT_SCORE_FLOOR,
        }
    }
}

fn locate(
    sub: &Image,
    roi: &Roi,
    method: Method,
    opts: &LocatorOptions,
    depth_max: f32,
) -> Result<TrackEntry> {
    let (ox, oy) = (roi.x0 as f64, roi.y0 as f64);
    match method {
        Method::Gvb => {
            let t = multi_pass_threshold(sub, opts.threshold_passes.max(1));
            let (x, y) = gvb_center_at(sub, t, depth_max)?;
            Ok(TrackEntry::hit(x + ox, y + oy, Method::Gvb, Some(t)))
        }
        Method::Cfm => {
            let (r_min, r_max) = opts.radius_range.unwrap_or_else(|| {
                let half = roi.width.min(roi.height) as f64 / 2.0;
                (2.0, (half - 1.0).max(2.0))
            });
            Ok(
                match cfm_center_with(sub, r_min, r_max, opts.score_floor)? {
                    Some(fit) => TrackEntry::hit(fit.x + ox, fit.y + oy, Method::Cfm, None),
                    None => TrackEntry::miss(Method::Cfm),
                },
            )
        }
        Method::Manual => Err(Error::invalid("manual entries are not detected automatically")),
    }
}

/// Runs the chosen detector on the ROI window of every frame.
pub fn track_reference(
    stack: &ProjectionStack,
    roi: &Roi,
    method: Method,
    opts: &LocatorOptions,
) -> Result<RefTrack> {
    track_reference_with_progress(stack, roi, method, opts, &|_| true)
}

/// As [`track_reference`]; `progress` is told after each frame and may return
/// `false` to cancel.
pub fn track_reference_with_progress(
    stack: &ProjectionStack,
    roi: &Roi,
    method: Method,
    opts: &LocatorOptions,
    progress: &(dyn Fn(f64) -> bool + Sync),
) -> Result<RefTrack> {
    roi.check_within(stack.width(), stack.height())?;
    let done = std::sync::atomic::AtomicUsize::new(0);
    let n = stack.len();
    let entries = stack
        .frames()
        .par_iter()
        .map(|frame| {
            let sub = frame.crop(roi)?;
            let entry = locate(&sub, roi, method, opts, stack.depth_max())?;
            let k = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
            if !progress(k as f64 / n as f64) {
                return Err(Error::Cancelled);
            }
            Ok(entry)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RefTrack { entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_level_threshold_is_the_midpoint() {
        let img = Image::from_fn(8, 8, |x, _| if x < 4 { 50.0 } else { 200.0 });
        assert_eq!(iterative_threshold(&img), 125.0);
    }

    #[test]
    fn constant_window_threshold_is_its_value() {
        assert_eq!(iterative_threshold(&Image::filled(5, 5, 42.0)), 42.0);
    }

    #[test]
    fn extra_passes_split_the_dark_class() {
        // three plateaus: the second pass separates 10 from 60
        let img = Image::from_fn(30, 1, |x, _| match x {
            0..=4 => 10.0,
            5..=9 => 60.0,
            _ => 250.0,
        });
        let one = multi_pass_threshold(&img, 1);
        assert!(one > 60.0 && one < 250.0);
        let two = multi_pass_threshold(&img, 2);
        assert!(two > 10.0 && two < 60.0, "{two}");
    }

    #[test]
    fn single_dark_pixel_is_its_own_barycenter() {
        let mut img = Image::filled(9, 7, 250.0);
        img.set(6, 2, 20.0);
        let t = iterative_threshold(&img);
        assert_eq!(gvb_center_at(&img, t, 255.0).unwrap(), (6.0, 2.0));
    }

    #[test]
    fn symmetric_square_centers_exactly() {
        let img = Image::from_fn(20, 20, |x, y| {
            if (5..=10).contains(&x) && (8..=13).contains(&y) {
                30.0
            } else {
                240.0
            }
        });
        let (x, y) = gvb_center(&img, 255.0).unwrap();
        assert!((x - 7.5).abs() < 1e-12 && (y - 10.5).abs() < 1e-12);
    }

    #[test]
    fn weights_are_inverted_gray_values() {
        // transformed weights 255 and 155 at columns 0 and 2
        let img = Image::from_vec(3, 1, vec![0.0, 255.0, 100.0]).unwrap();
        let (x, y) = gvb_center_at(&img, 255.0, 255.0).unwrap();
        let expected = (255.0 * 0.0 + 155.0 * 2.0) / (255.0 + 155.0);
        assert!((x - expected).abs() < 1e-12);
        assert!((x - 0.7561).abs() < 1e-4);
        assert_eq!(y, 0.0);
    }

    #[test]
    fn full_scale_window_falls_back_to_plain_centroid() {
        let img = Image::filled(1, 1, 255.0);
        assert_eq!(gvb_center(&img, 255.0).unwrap(), (0.0, 0.0));
    }

    fn disk(w: usize, h: usize, cx: f64, cy: f64, r: f64) -> Image {
        // 4x4 supersampled coverage
        Image::from_fn(w, h, |x, y| {
            let mut inside = 0;
            for sy in 0..4 {
                for sx in 0..4 {
                    let px = x as f64 - 0.375 + sx as f64 * 0.25;
                    let py = y as f64 - 0.375 + sy as f64 * 0.25;
                    if (px - cx).hypot(py - cy) <= r {
                        inside += 1;
                    }
                }
            }
            (240.0 - 200.0 * inside as f64 / 16.0) as f32
        })
    }

    #[test]
    fn circle_fit_finds_an_ideal_disk() {
        let img = disk(40, 30, 20.0, 15.0, 6.0);
        let fit = cfm_center(&img, 4.0, 8.0).unwrap().expect("hit");
        assert!((fit.x - 20.0).abs() <= 0.5 && (fit.y - 15.0).abs() <= 0.5, "{fit:?}");
        assert!(fit.score >= 0.9);
    }

    #[test]
    fn circle_fit_misses_on_blank_window() {
        assert_eq!(cfm_center(&Image::filled(30, 30, 128.0), 3.0, 8.0).unwrap(), None);
    }

    #[test]
    fn circle_fit_on_half_occluded_disk_misses_or_stays_close() {
        let img = disk(30, 30, 1.0, 15.0, 6.0);
        match cfm_center(&img, 4.0, 8.0).unwrap() {
            None => {}
            Some(fit) => assert!((fit.x - 1.0).hypot(fit.y - 15.0) <= 2.0, "{fit:?}"),
        }
    }

    #[test]
    fn circle_fit_rejects_bad_radius_range() {
        let img = Image::filled(20, 20, 1.0);
        assert!(cfm_center(&img, 0.5, 4.0).is_err());
        assert!(cfm_center(&img, 5.0, 4.0).is_err());
        assert!(cfm_center(&img, 2.0, 10.0).is_err());
    }

    #[test]
    fn unit_roi_tracks_that_pixel() {
        let frames: Vec<Image> = (0..3)
            .map(|k| Image::from_fn(10, 10, |x, y| (x * 10 + y + k) as f32))
            .collect();
        let stack = ProjectionStack::new(frames, 0.0, 180.0, 8, "t").unwrap();
        let roi = Roi::new(4, 6, 1, 1).unwrap();
        let track = track_reference(&stack, &roi, Method::Gvb, &LocatorOptions::default()).unwrap();
        assert_eq!(track.len(), 3);
        for e in &track.entries {
            assert!(e.hit);
            assert_eq!((e.center_x, e.center_y), (4.0, 6.0));
        }
    }

    #[test]
    fn csv_round_trip_keeps_misses() {
        let track = RefTrack {
            entries: vec![
                TrackEntry::hit(10.25, 3.5, Method::Gvb, Some(117.5)),
                TrackEntry::miss(Method::Cfm),
                TrackEntry::hit(-1.0, 2.0, Method::Manual, None),
            ],
        };
        let csv = track.to_csv();
        assert!(csv.starts_with("frame_index,x,y,method,hit,threshold\n0,10.25,3.5,GVB,true,117.5\n"));
        let back = RefTrack::from_csv(&csv).unwrap();
        assert_eq!(back.entries[0], track.entries[0]);
        assert!(!back.entries[1].hit && back.entries[1].center_x.is_nan());
        assert_eq!(back.entries[2], track.entries[2]);
        assert!(RefTrack::from_csv("x,y\n").is_err());
    }

    #[test]
    fn json_encodes_misses_as_null() {
        let track = RefTrack {
            entries: vec![TrackEntry::miss(Method::Cfm)],
        };
        let json = serde_json::to_string(&track).unwrap();
        assert!(json.contains("\"center_x\":null"));
        let back: RefTrack = serde_json::from_str(&json).unwrap();
        assert!(back.entries[0].center_x.is_nan());
    }
}
