//! Parallel-beam filtered back-projection.
//!
//! Each detector row of the aligned stack forms a sinogram (one projection
//! per angle). Projections are zero-padded to the next power of two at or
//! above twice their width, multiplied in the frequency domain by a windowed
//! ramp, cropped back, and smeared across the output slice along their angle.
//!
//! The ramp is the transform of the band-limited spatial kernel
//! `h[0] = 1/4`, `h[n] = -1/(pi n)^2` for odd `n`, `0` for even `n`, with its
//! DC bin set to zero. Backprojected sums are scaled by `pi / (2 N)` so a
//! round trip recovers absolute values.

use std::f64::consts::{PI, SQRT_2};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Volume};
use crate::stack_io::{uniform_angles, ProjectionStack};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Filter {
    #[default]
    RamLak,
    SheppLogan,
    Cosine,
    Hamming,
    Hann,
    /// Unit weights: plain backprojection.
    None,
}

impl Filter {
    pub const ALL: [Filter; 6] = [
        Filter::RamLak,
        Filter::SheppLogan,
        Filter::Cosine,
        Filter::Hamming,
        Filter::Hann,
        Filter::None,
    ];

    /// Window applied on top of the ramp at `|f|` cycles per sample (Nyquist 0.5).
    fn window(self, f: f64) -> f64 {
        const NYQUIST: f64 = 0.5;
        match self {
            Filter::RamLak | Filter::None => 1.0,
            Filter::SheppLogan => {
                let x = PI * f / (2.0 * NYQUIST);
                if x == 0.0 {
                    1.0
                } else {
                    x.sin() / x
                }
            }
            Filter::Cosine => (PI * f / (2.0 * NYQUIST)).cos(),
            Filter::Hamming => 0.54 + 0.46 * (PI * f / NYQUIST).cos(),
            Filter::Hann => 0.5 * (1.0 + (PI * f / NYQUIST).cos()),
        }
    }
}

impl std::str::FromStr for Filter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "ram-lak" | "ramlak" => Ok(Filter::RamLak),
            "shepp-logan" => Ok(Filter::SheppLogan),
            "cosine" => Ok(Filter::Cosine),
            "hamming" => Ok(Filter::Hamming),
            "hann" => Ok(Filter::Hann),
            "none" => Ok(Filter::None),
            other => Err(Error::invalid(format!("unknown filter {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Interpolation {
    Nearest,
    #[default]
    Linear,
}

impl std::str::FromStr for Interpolation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nearest" => Ok(Interpolation::Nearest),
            "linear" => Ok(Interpolation::Linear),
            other => Err(Error::invalid(format!("unknown interpolation {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconParams {
    pub filter: Filter,
    pub interpolation: Interpolation,
    /// Degrees; the first frame's angle.
    pub angle_start: f64,
    /// Degrees; the last frame's angle.
    pub angle_stop: f64,
    /// Slice edge length; `None` picks [`default_output_size`] of the detector width.
    pub output_size: Option<usize>,
    /// Inclusive `(first, last)` detector rows; `None` reconstructs every row.
    pub row_range: Option<(usize, usize)>,
    /// Convert intensities to attenuation `-ln(I / I_full)` before filtering,
    /// with `I_full` the stack's full-scale value.
    pub attenuation: bool,
}

impl Default for ReconParams {
    fn default() -> Self {
        ReconParams {
            filter: Filter::RamLak,
            interpolation: Interpolation::Linear,
            angle_start: 0.0,
            angle_stop: 180.0,
            output_size: None,
            row_range: None,
            attenuation: false,
        }
    }
}

impl ReconParams {
    /// Defaults with the stack's own angle range.
    pub fn for_stack(stack: &ProjectionStack) -> Self {
        ReconParams {
            angle_start: stack.angle_start(),
            angle_stop: stack.angle_stop(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.angle_stop > self.angle_start) {
            return Err(Error::invalid(format!(
                "angle range {}..{} is not increasing",
                self.angle_start, self.angle_stop
            )));
        }
        if let Some(o) = self.output_size {
            if o < 2 {
                return Err(Error::invalid(format!("output size {o} is below 2")));
            }
        }
        Ok(())
    }
}

/// Per-row projections: projection `a` holds `width` detector samples taken
/// at `angles[a]` degrees. The rotation axis sits at `(width - 1) / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    width: usize,
    angles: Vec<f64>,
    data: Vec<f64>,
}

impl Sinogram {
    pub fn new(width: usize, angles: Vec<f64>, data: Vec<f64>) -> Result<Self> {
        if width == 0 || angles.is_empty() || data.len() != width * angles.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} samples for {} projections of width {width}",
                data.len(),
                angles.len()
            )));
        }
        Ok(Sinogram {
            width,
            angles,
            data,
        })
    }

    pub fn zeros(width: usize, angles: Vec<f64>) -> Self {
        let n = angles.len();
        Sinogram {
            width,
            angles,
            data: vec![0.0; width * n],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn projection(&self, a: usize) -> &[f64] {
        &self.data[a * self.width..(a + 1) * self.width]
    }

    pub fn projection_mut(&mut self, a: usize) -> &mut [f64] {
        &mut self.data[a * self.width..(a + 1) * self.width]
    }

    pub fn axis(&self) -> f64 {
        (self.width as f64 - 1.0) / 2.0
    }

    /// `a * self + b * other`, for same-shaped sinograms.
    pub fn combine(&self, a: f64, other: &Sinogram, b: f64) -> Result<Sinogram> {
        if self.width != other.width || self.angles != other.angles {
            return Err(Error::ShapeMismatch("sinograms differ in shape".into()));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Sinogram::new(self.width, self.angles.clone(), data)
    }
}

/// Slice edge length for a `width`-pixel detector: `2 * floor(width / (2 sqrt 2))`,
/// the largest even square inscribed in the detector's field of view.
pub fn default_output_size(width: usize) -> Result<usize> {
    if width < 3 {
        return Err(Error::invalid(format!(
            "detector width {width} is below 3"
        )));
    }
    Ok(2 * (width as f64 / (2.0 * SQRT_2)).floor() as usize)
}

/// Smallest detector width whose default output covers an `size` x `size` slice.
pub fn detector_width_for(size: usize) -> usize {
    let mut w = ((size as f64 * SQRT_2).floor() as usize).saturating_sub(2).max(3);
    while default_output_size(w).expect("w >= 3") < size {
        w += 1;
    }
    w
}

/// Padded length used for a `width`-sample projection.
pub fn padded_len(width: usize) -> usize {
    (2 * width).next_power_of_two()
}

/// Band-limited spatial ramp kernel tap at offset `n`.
pub fn ramp_kernel(n: i64) -> f64 {
    if n == 0 {
        0.25
    } else if n % 2 != 0 {
        -1.0 / (PI * n as f64).powi(2)
    } else {
        0.0
    }
}

/// Frequency weights for a padded length `p` in FFT bin order.
pub fn filter_response(p: usize, filter: Filter) -> Result<Vec<f64>> {
    if p < 2 || !p.is_power_of_two() {
        return Err(Error::invalid(format!("padded length {p} is not a power of two")));
    }
    if filter == Filter::None {
        return Ok(vec![1.0; p]);
    }
    let half = (p / 2) as i64;
    let mut buf: Vec<Complex<f64>> = (0..p as i64)
        .map(|i| {
            let n = if i < half { i } else { i - p as i64 };
            Complex::new(ramp_kernel(n), 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(p).process(&mut buf);
    let mut response: Vec<f64> = buf
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let f = if i < p / 2 { i as f64 } else { (p - i) as f64 } / p as f64;
            2.0 * c.re * filter.window(f)
        })
        .collect();
    response[0] = 0.0;
    Ok(response)
}

/// Reusable frequency-domain filter for projections of one width.
#[derive(Clone)]
pub struct ProjectionFilter {
    width: usize,
    response: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl ProjectionFilter {
    pub fn new(width: usize, filter: Filter) -> Result<Self> {
        let p = padded_len(width);
        let mut planner = FftPlanner::new();
        Ok(ProjectionFilter {
            width,
            response: filter_response(p, filter)?,
            forward: planner.plan_fft_forward(p),
            inverse: planner.plan_fft_inverse(p),
        })
    }

    /// The whole padded, filtered signal (length `padded_len(width)`).
    pub fn filter_padded(&self, projection: &[f64]) -> Vec<f64> {
        let p = self.response.len();
        let mut buf = vec![Complex::new(0.0, 0.0); p];
        for (b, &v) in buf.iter_mut().zip(projection.iter().take(self.width)) {
            b.re = v;
        }
        self.forward.process(&mut buf);
        for (b, &r) in buf.iter_mut().zip(&self.response) {
            *b *= r;
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / p as f64;
        buf.iter().map(|c| c.re * scale).collect()
    }

    pub fn filter_into(&self, projection: &mut [f64]) {
        let padded = self.filter_padded(projection);
        projection.copy_from_slice(&padded[..self.width]);
    }
}

pub fn filter_sinogram(sino: &Sinogram, filter: Filter) -> Result<Sinogram> {
    let pf = ProjectionFilter::new(sino.width, filter)?;
    let mut out = sino.clone();
    for a in 0..out.angles.len() {
        pf.filter_into(out.projection_mut(a));
    }
    Ok(out)
}

/// Smears every filtered projection across an `output_size` square slice.
///
/// Pixel `(col, row)` has centered coordinates `x = col - c`, `y = row - c`
/// with `c = (output_size - 1) / 2`; it reads each projection at detector
/// position `x cos(theta) + y sin(theta) + axis`. Samples off the detector
/// contribute zero.
pub fn backproject(
    filtered: &Sinogram,
    interpolation: Interpolation,
    output_size: usize,
) -> Result<Image> {
    let mut out = backproject_many(std::slice::from_ref(filtered), interpolation, output_size)?;
    Ok(out.pop().expect("one slice in, one out"))
}

/// Rows processed together: they share every detector position and weight.
const BATCH: usize = 8;

/// [`backproject`] for several sinograms sharing width and angles. Each slice
/// is bit-identical to backprojecting it alone.
pub fn backproject_many(
    filtered: &[Sinogram],
    interpolation: Interpolation,
    output_size: usize,
) -> Result<Vec<Image>> {
    if output_size < 2 {
        return Err(Error::invalid(format!("output size {output_size} is below 2")));
    }
    let Some(first) = filtered.first() else {
        return Ok(Vec::new());
    };
    if filtered
        .iter()
        .any(|s| s.width != first.width || s.angles != first.angles)
    {
        return Err(Error::ShapeMismatch(
            "batched sinograms need equal widths and angles".into(),
        ));
    }
    let mut out = Vec::with_capacity(filtered.len());
    let mut chunks = filtered.chunks_exact(BATCH);
    for chunk in &mut chunks {
        out.extend(backproject_batch::<BATCH>(chunk, interpolation, output_size));
    }
    for one in chunks.remainder() {
        out.extend(backproject_batch::<1>(std::slice::from_ref(one), interpolation, output_size));
    }
    Ok(out)
}

fn backproject_batch<const K: usize>(
    filtered: &[Sinogram],
    interpolation: Interpolation,
    o: usize,
) -> Vec<Image> {
    debug_assert_eq!(filtered.len(), K);
    let head = &filtered[0];
    let c = (o as f64 - 1.0) / 2.0;
    let axis = head.axis();
    let w = head.width;
    let trig: Vec<(f64, f64)> = head.angles.iter().map(|d| d.to_radians().sin_cos()).collect();
    // detector-major with the K slices interleaved, plus one zero detector
    // so the last sample interpolates without a branch
    let stride = (w + 1) * K;
    let mut q = vec![0.0f64; trig.len() * stride];
    for (z, sino) in filtered.iter().enumerate() {
        for a in 0..trig.len() {
            for (i, &v) in sino.projection(a).iter().enumerate() {
                q[a * stride + i * K + z] = v;
            }
        }
    }
    // detector positions each interpolation can read
    let (lo_s, hi_s) = match interpolation {
        Interpolation::Linear => (0.0, (w - 1) as f64),
        Interpolation::Nearest => (-0.5, w as f64 - 0.5),
    };
    let inside = |s: f64| match interpolation {
        Interpolation::Linear => (lo_s..=hi_s).contains(&s),
        Interpolation::Nearest => (lo_s..hi_s).contains(&s),
    };
    let mut acc = vec![0.0f64; o * o * K];
    for row in 0..o {
        let line = &mut acc[row * o * K..(row + 1) * o * K];
        for (a, &(sin, cos)) in trig.iter().enumerate() {
            let qa = &q[a * stride..(a + 1) * stride];
            let base = (row as f64 - c) * sin + axis - c * cos;
            let (start, end) = column_span(base, cos, lo_s, hi_s, o, &inside);
            for col in start..end {
                let s = base + col as f64 * cos;
                let v: &mut [f64; K] = (&mut line[col * K..(col + 1) * K]).try_into().unwrap();
                match interpolation {
                    Interpolation::Linear => {
                        let i = s as usize;
                        let f = s - i as f64;
                        let g = 1.0 - f;
                        let p0: &[f64; K] = qa[i * K..(i + 1) * K].try_into().unwrap();
                        let p1: &[f64; K] = qa[(i + 1) * K..(i + 2) * K].try_into().unwrap();
                        for z in 0..K {
                            v[z] += g * p0[z] + f * p1[z];
                        }
                    }
                    Interpolation::Nearest => {
                        let i = (s + 0.5).floor() as usize;
                        let p0: &[f64; K] = qa[i * K..(i + 1) * K].try_into().unwrap();
                        for z in 0..K {
                            v[z] += p0[z];
                        }
                    }
                }
            }
        }
    }
    let scale = PI / (2.0 * trig.len() as f64);
    (0..K)
        .map(|z| {
            let data = (0..o * o).map(|px| (acc[px * K + z] * scale) as f32).collect();
            Image::from_vec(o, o, data).expect("sized above")
        })
        .collect()
}

/// Columns `start..end` of a slice row whose detector position
/// `base + col * cos` passes `inside`. The position is monotone in `col`, so
/// the set is contiguous; the analytic estimate is corrected against the exact
/// test at both ends.
fn column_span(
    base: f64,
    cos: f64,
    lo: f64,
    hi: f64,
    o: usize,
    inside: &dyn Fn(f64) -> bool,
) -> (usize, usize) {
    let at = |col: usize| inside(base + col as f64 * cos);
    let (mut start, mut end) = if cos.abs() < 1e-12 {
        (0, o)
    } else {
        let (a, b) = ((lo - base) / cos, (hi - base) / cos);
        let (a, b) = (a.min(b), a.max(b));
        let start = a.ceil().clamp(0.0, o as f64) as usize;
        let end = (b.floor() + 1.0).clamp(0.0, o as f64) as usize;
        (start, end.max(start))
    };
    while start > 0 && at(start - 1) {
        start -= 1;
    }
    while start < end && !at(start) {
        start += 1;
    }
    while end < o && at(end) {
        end += 1;
    }
    while end > start && !at(end - 1) {
        end -= 1;
    }
    (start, end)
}

/// Filter then backproject one sinogram.
pub fn reconstruct_slice(
    sino: &Sinogram,
    filter: Filter,
    interpolation: Interpolation,
    output_size: usize,
) -> Result<Image> {
    backproject(&filter_sinogram(sino, filter)?, interpolation, output_size)
}

/// Row `row` of every frame, in frame order, tagged with `angles`.
pub fn sinogram_of_row(
    stack: &ProjectionStack,
    row: usize,
    angles: &[f64],
    attenuation: bool,
) -> Result<Sinogram> {
    if row >= stack.height() {
        return Err(Error::invalid(format!(
            "row {row} outside 0..{}",
            stack.height()
        )));
    }
    let full = stack.depth_max() as f64;
    let data = stack
        .frames()
        .iter()
        .flat_map(|f| f.row(row).iter())
        .map(|&v| {
            if attenuation {
                -((v as f64).max(0.5) / full).ln()
            } else {
                v as f64
            }
        })
        .collect();
    Sinogram::new(stack.width(), angles.to_vec(), data)
}

/// Reconstructs the selected rows of an aligned, cropped stack into a volume
/// whose `z` index counts rows from the start of the range.
pub fn reconstruct_rows(stack: &ProjectionStack, params: &ReconParams) -> Result<Volume> {
    reconstruct_rows_with_progress(stack, params, &|_| true)
}

/// As [`reconstruct_rows`]; `progress` receives the completed fraction after
/// every row and may return `false` to cancel.
pub fn reconstruct_rows_with_progress(
    stack: &ProjectionStack,
    params: &ReconParams,
    progress: &(dyn Fn(f64) -> bool + Sync),
) -> Result<Volume> {
    params.validate()?;
    let (first, last) = params.row_range.unwrap_or((0, stack.height() - 1));
    if first > last || last >= stack.height() {
        return Err(Error::invalid(format!(
            "row range {first}:{last} outside 0..{}",
            stack.height()
        )));
    }
    let o = match params.output_size {
        Some(o) => o,
        None => default_output_size(stack.width())?,
    };
    let angles = uniform_angles(params.angle_start, params.angle_stop, stack.len());
    let pf = ProjectionFilter::new(stack.width(), params.filter)?;
    let rows = last - first + 1;
    let done = AtomicUsize::new(0);
    let starts: Vec<usize> = (first..=last).step_by(BATCH).collect();
    let batches = starts
        .into_par_iter()
        .map(|start| {
            if !progress(done.load(Ordering::Relaxed) as f64 / rows as f64) {
                return Err(Error::Cancelled);
            }
            let end = (start + BATCH - 1).min(last);
            let sinos = (start..=end)
                .map(|row| {
                    let mut sino = sinogram_of_row(stack, row, &angles, params.attenuation)?;
                    for a in 0..sino.angles.len() {
                        pf.filter_into(sino.projection_mut(a));
                    }
                    Ok(sino)
                })
                .collect::<Result<Vec<_>>>()?;
            let slices = backproject_many(&sinos, params.interpolation, o)?;
            let k = done.fetch_add(slices.len(), Ordering::Relaxed) + slices.len();
            if !progress(k as f64 / rows as f64) {
                return Err(Error::Cancelled);
            }
            Ok(slices)
        })
        .collect::<Result<Vec<_>>>()?;
    let slices: Vec<Image> = batches.into_iter().flatten().collect();
    Volume::from_slices(slices)
}

/// Line-integral projections of a square image (bilinear samples, unit step)
/// on a detector [`detector_width_for`] the image size.
pub fn forward_project(image: &Image, angles: &[f64]) -> Result<Sinogram> {
    if image.width() != image.height() || image.is_empty() {
        return Err(Error::invalid(format!(
            "forward projection needs a square image, got {}x{}",
            image.width(),
            image.height()
        )));
    }
    let o = image.width();
    let w = detector_width_for(o);
    let c = (o as f64 - 1.0) / 2.0;
    let axis = (w as f64 - 1.0) / 2.0;
    let reach = (o as f64 * SQRT_2 / 2.0).ceil() as i64 + 1;
    let sample = |x: f64, y: f64| -> f64 {
        let (x0, y0) = (x.floor(), y.floor());
        if x0 < -1.0 || y0 < -1.0 || x0 >= o as f64 || y0 >= o as f64 {
            return 0.0;
        }
        let (fx, fy) = (x - x0, y - y0);
        let px = |xi: f64, yi: f64| -> f64 {
            if xi < 0.0 || yi < 0.0 || xi >= o as f64 || yi >= o as f64 {
                0.0
            } else {
                image.get(xi as usize, yi as usize) as f64
            }
        };
        (1.0 - fy) * ((1.0 - fx) * px(x0, y0) + fx * px(x0 + 1.0, y0))
            + fy * ((1.0 - fx) * px(x0, y0 + 1.0) + fx * px(x0 + 1.0, y0 + 1.0))
    };
    let data: Vec<f64> = angles
        .par_iter()
        .flat_map_iter(|&deg| {
            let (sin, cos) = deg.to_radians().sin_cos();
            (0..w).map(move |t| {
                let s = t as f64 - axis;
                (-reach..=reach)
                    .map(|u| {
                        let u = u as f64;
                        sample(s * cos - u * sin + c, s * sin + u * cos + c)
                    })
                    .sum::<f64>()
            })
        })
        .collect();
    Sinogram::new(w, angles.to_vec(), data)
}

/// The three orthographic planes through voxel `(ix, iy, iz)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OrthoViews {
    pub axial: Image,
    pub coronal: Image,
    pub sagittal: Image,
}

pub fn ortho_slices(volume: &Volume, ix: usize, iy: usize, iz: usize) -> Result<OrthoViews> {
    Ok(OrthoViews {
        axial: volume.axial(iz)?,
        coronal: volume.coronal(iy)?,
        sagittal: volume.sagittal(ix)?,
    })
}
