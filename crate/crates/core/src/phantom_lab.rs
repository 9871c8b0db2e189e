//! Synthetic datasets with known ground truth.
//!
//! [`bead_dataset`] renders a dark, antialiased disk (the fiducial bead) on a
//! full-scale background. Its ideal center follows `axis - R cos(theta)`; each
//! frame is then displaced by a seeded random jitter and Gaussian noise is
//! added. Every random draw for frame `k` comes from its own ChaCha stream, so
//! datasets are bit-identical for a given seed regardless of thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Field, Image, Volume};
use crate::ref_locator::RefTrack;
use crate::stack_io::{depth_max, uniform_angles, ProjectionStack};

/// Fraction of 12 keV X-rays passing 0.5 um of gold (83.1 % absorbed).
pub const GOLD_TRANSMISSION: f64 = 0.169;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeadSpec {
    pub frames: usize,
    /// Frame edge length (frames are square).
    pub size: usize,
    pub bead_radius: f64,
    /// True signed distance from the rotation axis at angle 0, px.
    pub bead_offset: f64,
    pub bead_transmission: f64,
    pub jitter_max: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Draw jitter from a continuous range instead of whole pixels.
    pub continuous_jitter: bool,
    pub angle_start: f64,
    pub angle_stop: f64,
}

impl Default for BeadSpec {
    fn default() -> Self {
        BeadSpec {
            frames: 161,
            size: 512,
            bead_radius: 6.0,
            bead_offset: 40.0,
            bead_transmission: GOLD_TRANSMISSION,
            jitter_max: 6.0,
            noise_sigma: 5.0,
            seed: 42,
            continuous_jitter: false,
            angle_start: 0.0,
            angle_stop: 180.0,
        }
    }
}

impl BeadSpec {
    pub fn axis(&self) -> f64 {
        (self.size as f64 - 1.0) / 2.0
    }

    /// Row of the bead center before jitter.
    pub fn bead_row(&self) -> f64 {
        self.axis()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::invalid("a bead dataset needs at least 2 frames"));
        }
        if !(self.bead_radius > 0.0) {
            return Err(Error::invalid("bead radius must be positive"));
        }
        if !(self.bead_transmission > 0.0 && self.bead_transmission <= 1.0) {
            return Err(Error::invalid("bead transmission must lie in (0, 1]"));
        }
        if !(self.jitter_max >= 0.0 && self.noise_sigma >= 0.0) {
            return Err(Error::invalid("jitter and noise must be non-negative"));
        }
        let reach = self.bead_offset.abs() + self.bead_radius + self.jitter_max;
        let axis = self.axis();
        if axis - reach < 1.0 || axis + reach > self.size as f64 - 2.0 {
            return Err(Error::invalid(format!(
                "bead reaches {reach:.1} px from the axis and would leave the {} px frame",
                self.size
            )));
        }
        Ok(())
    }
}

/// What the generator knows and detectors must recover.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Jitter `(dx, dy)` added to each frame, px.
    pub true_shifts: Vec<(f64, f64)>,
    /// Rendered bead center per frame (ideal trajectory plus jitter).
    pub true_centers: Vec<(f64, f64)>,
    pub true_r: f64,
    #[serde(skip)]
    pub phantom_volume: Option<Volume>,
}

/// Integral of `sqrt(r^2 - x^2)`.
fn half_chord_integral(r: f64, x: f64) -> f64 {
    let x = x.clamp(-r, r);
    let s = (r * r - x * x).max(0.0).sqrt();
    0.5 * (x * s + r * r * (x / r).asin())
}

/// Exact area of the disk of radius `r` at the origin inside `[x0, x1] x [y0, y1]`.
pub fn disk_rect_area(r: f64, x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
    let (a, b) = (x0.max(-r), x1.min(r));
    if a >= b || y0 >= y1 {
        return 0.0;
    }
    let mut cuts = vec![a, b];
    for v in [y0, y1] {
        if v.abs() < r {
            let k = (r * r - v * v).sqrt();
            cuts.extend([-k, k]);
        }
    }
    cuts.retain(|&c| c >= a && c <= b);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut area = 0.0;
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let mid = 0.5 * (lo + hi);
        let s = (r * r - mid * mid).max(0.0).sqrt();
        // upper = min(y1, s), lower = max(y0, -s); each is a constant or +/- s
        let (up_c, up_s) = if y1 < s { (y1, 0.0) } else { (0.0, 1.0) };
        let (lo_c, lo_s) = if y0 > -s { (y0, 0.0) } else { (0.0, -1.0) };
        if (up_c + up_s * s) - (lo_c + lo_s * s) <= 0.0 {
            continue;
        }
        let chord = half_chord_integral(r, hi) - half_chord_integral(r, lo);
        area += (up_c - lo_c) * (hi - lo) + (up_s - lo_s) * chord;
    }
    area
}

/// Full-scale frame with a dark disk; pixel `(x, y)` covers `[x-1/2, x+1/2] x [y-1/2, y+1/2]`.
fn render_bead(size: usize, cx: f64, cy: f64, r: f64, transmission: f64, full: f64) -> Image {
    let mut img = Image::filled(size, size, full as f32);
    let x_lo = ((cx - r - 1.0).floor().max(0.0)) as usize;
    let x_hi = ((cx + r + 1.0).ceil() as usize).min(size - 1);
    let y_lo = ((cy - r - 1.0).floor().max(0.0)) as usize;
    let y_hi = ((cy + r + 1.0).ceil() as usize).min(size - 1);
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let cover = disk_rect_area(r, dx - 0.5, dx + 0.5, dy - 0.5, dy + 0.5);
            img.set(x, y, (full * (1.0 - cover * (1.0 - transmission))) as f32);
        }
    }
    img
}

fn frame_rng(seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    rng
}

/// Renders the jittered bead series described by `spec` as an 8-bit stack.
pub fn bead_dataset(spec: &BeadSpec) -> Result<(ProjectionStack, GroundTruth)> {
    spec.validate()?;
    let full = depth_max(8) as f64;
    let angles = uniform_angles(spec.angle_start, spec.angle_stop, spec.frames);
    let axis = spec.axis();
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::invalid(e.to_string()))?;
    let rendered: Vec<(Image, (f64, f64), (f64, f64))> = angles
        .par_iter()
        .enumerate()
        .map(|(k, &deg)| {
            let mut rng = frame_rng(spec.seed, k);
            let j = spec.jitter_max;
            let (jx, jy) = if spec.continuous_jitter {
                (rng.random_range(-j..=j), rng.random_range(-j..=j))
            } else {
                let ji = j.floor() as i64;
                (
                    rng.random_range(-ji..=ji) as f64,
                    rng.random_range(-ji..=ji) as f64,
                )
            };
            let cx = axis - spec.bead_offset * deg.to_radians().cos() + jx;
            let cy = spec.bead_row() + jy;
            let mut img = render_bead(
                spec.size,
                cx,
                cy,
                spec.bead_radius,
                spec.bead_transmission,
                full,
            );
            for v in img.data_mut() {
                let n = if spec.noise_sigma > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                *v = ((*v as f64 + n).clamp(0.0, full)).round() as f32;
            }
            (img, (jx, jy), (cx, cy))
        })
        .collect();
    let mut frames = Vec::with_capacity(spec.frames);
    let mut true_shifts = Vec::with_capacity(spec.frames);
    let mut true_centers = Vec::with_capacity(spec.frames);
    for (img, jitter, center) in rendered {
        frames.push(img);
        true_shifts.push(jitter);
        true_centers.push(center);
    }
    let stack = ProjectionStack::new(
        frames,
        spec.angle_start,
        spec.angle_stop,
        8,
        format!("bead phantom seed {}", spec.seed),
    )?;
    Ok((
        stack,
        GroundTruth {
            true_shifts,
            true_centers,
            true_r: spec.bead_offset,
            phantom_volume: None,
        },
    ))
}

/// Modified (high-contrast) Shepp–Logan head: `(value, a, b, x0, y0, phi_deg)`
/// in the unit square `[-1, 1]^2`.
const SHEPP_LOGAN_TABLE: [[f64; 6]; 10] = [
    [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
    [-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0],
    [-0.2, 0.11, 0.31, 0.22, 0.0, -18.0],
    [-0.2, 0.16, 0.41, -0.22, 0.0, 18.0],
    [0.1, 0.21, 0.25, 0.0, 0.35, 0.0],
    [0.1, 0.046, 0.046, 0.0, 0.1, 0.0],
    [0.1, 0.046, 0.046, 0.0, -0.1, 0.0],
    [0.1, 0.046, 0.023, -0.08, -0.605, 0.0],
    [0.1, 0.023, 0.023, 0.0, -0.606, 0.0],
    [0.1, 0.023, 0.046, 0.06, -0.605, 0.0],
];

fn unit_coords(size: usize, col: usize, row: usize) -> (f64, f64) {
    let c = (size as f64 - 1.0) / 2.0;
    let half = size as f64 / 2.0;
    ((col as f64 - c) / half, (c - row as f64) / half)
}

fn in_ellipse(e: &[f64; 6], x: f64, y: f64) -> bool {
    let (sin, cos) = e[5].to_radians().sin_cos();
    let (dx, dy) = (x - e[3], y - e[4]);
    let u = dx * cos + dy * sin;
    let v = -dx * sin + dy * cos;
    (u / e[1]).powi(2) + (v / e[2]).powi(2) <= 1.0
}

/// Ten-ellipse head phantom with intensities in `[0, 1]`.
pub fn shepp_logan(size: usize) -> Result<Image> {
    if size < 16 {
        return Err(Error::invalid(format!("phantom size {size} is below 16")));
    }
    Ok(Image::from_fn(size, size, |col, row| {
        let (x, y) = unit_coords(size, col, row);
        let v: f64 = SHEPP_LOGAN_TABLE
            .iter()
            .filter(|e| in_ellipse(e, x, y))
            .map(|e| e[0])
            .sum();
        v.clamp(0.0, 1.02) as f32
    }))
}

/// Mask of the phantom's outer (skull) ellipse.
pub fn shepp_logan_outline(size: usize) -> Image {
    Image::from_fn(size, size, |col, row| {
        let (x, y) = unit_coords(size, col, row);
        in_ellipse(&SHEPP_LOGAN_TABLE[0], x, y) as u8 as f32
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackScore {
    /// Mean Euclidean error over hit frames, px (NaN if none hit).
    pub mean_abs_err: f64,
    pub max_abs_err: f64,
    pub evaluated: usize,
    pub missed: usize,
}

pub fn score_track(track: &RefTrack, truth: &GroundTruth) -> Result<TrackScore> {
    if track.len() != truth.true_centers.len() {
        return Err(Error::ShapeMismatch(format!(
            "track has {} frames, ground truth {}",
            track.len(),
            truth.true_centers.len()
        )));
    }
    let errors: Vec<f64> = track
        .entries
        .iter()
        .zip(&truth.true_centers)
        .filter(|(e, _)| e.hit)
        .map(|(e, &(x, y))| (e.center_x - x).hypot(e.center_y - y))
        .collect();
    let evaluated = errors.len();
    let (mean, max) = if evaluated == 0 {
        (f64::NAN, f64::NAN)
    } else {
        (
            errors.iter().sum::<f64>() / evaluated as f64,
            errors.iter().cloned().fold(0.0, f64::max),
        )
    };
    Ok(TrackScore {
        mean_abs_err: mean,
        max_abs_err: max,
        evaluated,
        missed: track.len() - evaluated,
    })
}

/// Root mean squared difference of two same-shaped fields.
pub fn rmse<F: Field>(a: &F, b: &F) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let n = a.values().len();
    if n == 0 {
        return Ok(0.0);
    }
    let ss: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    Ok((ss / n as f64).sqrt())
}
