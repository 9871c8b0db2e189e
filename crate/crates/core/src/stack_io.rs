//! Projection stacks and their on-disk forms.
//!
//! Frames are binary PGM (`P5`, 8 or 16 bit). A dataset is a JSON manifest
//! listing frame files plus the start/stop rotation angle; per-frame angles
//! are derived, never stored. Volumes are a raw little-endian `f32` payload
//! next to a small JSON sidecar.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Volume};

/// Voxel order tag written to volume sidecars: `x` varies fastest, then `y`, then `z`.
pub const VOXEL_ORDER: &str = "xyz";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    /// Frame files in acquisition order. Relative paths resolve against the
    /// manifest's directory.
    pub frame_paths: Vec<PathBuf>,
    pub width: usize,
    pub height: usize,
    pub bit_depth: u8,
    /// Degrees.
    pub angle_start: f64,
    /// Degrees, inclusive.
    pub angle_stop: f64,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.frame_paths.len() < 2 {
            return Err(Error::InvalidManifest(format!(
                "need at least 2 frames, got {}",
                self.frame_paths.len()
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidManifest("zero frame dimension".into()));
        }
        check_depth(self.bit_depth)?;
        check_angle_range(self.angle_start, self.angle_stop)
            .map_err(|e| Error::InvalidManifest(e.to_string()))
    }
}

fn check_depth(bit_depth: u8) -> Result<()> {
    match bit_depth {
        8 | 16 => Ok(()),
        other => Err(Error::InvalidManifest(format!(
            "bit depth must be 8 or 16, got {other}"
        ))),
    }
}

fn check_angle_range(start: f64, stop: f64) -> Result<()> {
    if !(start.is_finite() && stop.is_finite()) {
        return Err(Error::invalid("angles must be finite"));
    }
    if stop <= start {
        return Err(Error::invalid(format!(
            "angle range {start}..{stop} is not increasing"
        )));
    }
    if stop - start > 360.0 {
        return Err(Error::invalid(format!(
            "angle range {start}..{stop} spans more than 360 degrees"
        )));
    }
    Ok(())
}

/// `n` inclusive, evenly spaced angles from `start` to `stop`.
pub fn uniform_angles(start: f64, stop: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => {
            let span = stop - start;
            let last = (n - 1) as f64;
            let mut out: Vec<f64> = (0..n).map(|k| start + span * (k as f64 / last)).collect();
            out[n - 1] = stop;
            out
        }
    }
}

/// Largest value representable at `bit_depth`: 255 or 65535.
pub fn depth_max(bit_depth: u8) -> f32 {
    ((1u32 << bit_depth) - 1) as f32
}

/// An ordered series of equally sized projection frames with their rotation angles.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionStack {
    frames: Vec<Image>,
    angles: Vec<f64>,
    bit_depth: u8,
    provenance: String,
}

impl ProjectionStack {
    /// Builds a stack whose angles run inclusively from `angle_start` to `angle_stop`.
    pub fn new(
        frames: Vec<Image>,
        angle_start: f64,
        angle_stop: f64,
        bit_depth: u8,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::invalid(format!(
                "a stack needs at least 2 frames, got {}",
                frames.len()
            )));
        }
        check_depth(bit_depth)?;
        check_angle_range(angle_start, angle_stop)?;
        let (w, h) = (frames[0].width(), frames[0].height());
        if w == 0 || h == 0 {
            return Err(Error::invalid("frames are empty"));
        }
        if let Some(k) = frames.iter().position(|f| f.width() != w || f.height() != h) {
            return Err(Error::ShapeMismatch(format!(
                "frame {k} is {}x{}, frame 0 is {w}x{h}",
                frames[k].width(),
                frames[k].height()
            )));
        }
        let angles = uniform_angles(angle_start, angle_stop, frames.len());
        Ok(ProjectionStack {
            frames,
            angles,
            bit_depth,
            provenance: provenance.into(),
        })
    }

    /// Same angles, depth and provenance; new frames (e.g. after shifting or cropping).
    pub fn with_frames(&self, frames: Vec<Image>) -> Result<Self> {
        if frames.len() != self.frames.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} frames replace a stack of {}",
                frames.len(),
                self.frames.len()
            )));
        }
        ProjectionStack::new(
            frames,
            self.angle_start(),
            self.angle_stop(),
            self.bit_depth,
            self.provenance.clone(),
        )
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    pub fn frame(&self, k: usize) -> &Image {
        &self.frames[k]
    }

    /// Degrees, one per frame.
    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn angle_start(&self) -> f64 {
        self.angles[0]
    }

    pub fn angle_stop(&self) -> f64 {
        self.angles[self.angles.len() - 1]
    }

    pub fn angle_step(&self) -> f64 {
        (self.angle_stop() - self.angle_start()) / (self.len() - 1) as f64
    }

    pub fn bit_depth(&self) -> u8 {
        self.bit_depth
    }

    /// Full-scale gray value for this stack's depth.
    pub fn depth_max(&self) -> f32 {
        depth_max(self.bit_depth)
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    manifest.validate()?;
    Ok(manifest)
}

/// Loads and validates the dataset described by the manifest at `manifest_path`.
pub fn load_stack(manifest_path: &Path) -> Result<ProjectionStack> {
    let manifest = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let frames = manifest
        .frame_paths
        .par_iter()
        .map(|p| {
            let path = base.join(p);
            let (image, depth) = read_pgm(&path)?;
            if image.width() != manifest.width || image.height() != manifest.height {
                return Err(Error::DimensionMismatch {
                    path,
                    expected_width: manifest.width,
                    expected_height: manifest.height,
                    width: image.width(),
                    height: image.height(),
                });
            }
            if depth != manifest.bit_depth {
                return Err(Error::InvalidManifest(format!(
                    "{} is {depth}-bit, manifest declares {}",
                    path.display(),
                    manifest.bit_depth
                )));
            }
            Ok(image)
        })
        .collect::<Result<Vec<_>>>()?;
    ProjectionStack::new(
        frames,
        manifest.angle_start,
        manifest.angle_stop,
        manifest.bit_depth,
        manifest_path.display().to_string(),
    )
}

/// Writes every frame as `frames/<name>_NNNN.pgm` under `dir` plus `<name>.json`;
/// returns the manifest path. Pixel values are rounded and clamped to the stack's depth.
pub fn save_stack(stack: &ProjectionStack, dir: &Path, name: &str) -> Result<PathBuf> {
    let frame_dir = dir.join("frames");
    fs::create_dir_all(&frame_dir).map_err(|e| Error::io(&frame_dir, e))?;
    let rel: Vec<PathBuf> = (0..stack.len())
        .map(|k| PathBuf::from("frames").join(format!("{name}_{k:04}.pgm")))
        .collect();
    stack
        .frames()
        .par_iter()
        .zip(rel.par_iter())
        .try_for_each(|(frame, p)| save_gray_image(frame, &dir.join(p), stack.bit_depth(), false))?;
    let manifest = DatasetManifest {
        frame_paths: rel,
        width: stack.width(),
        height: stack.height(),
        bit_depth: stack.bit_depth(),
        angle_start: stack.angle_start(),
        angle_stop: stack.angle_stop(),
    };
    let path = dir.join(format!("{name}.json"));
    write_json(&path, &manifest)?;
    Ok(path)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Maps float pixels onto integer gray levels at `depth` bits.
///
/// With `normalize`, the image minimum maps to 0 and its maximum to full
/// scale (a zero span maps everything to 0). Without it, values are rounded
/// and clamped into `[0, 2^depth - 1]`.
pub fn to_gray_levels(image: &Image, depth: u8, normalize: bool) -> Vec<u16> {
    let full = depth_max(depth);
    let (lo, hi) = image.min_max();
    let span = hi - lo;
    image
        .data()
        .iter()
        .map(|&v| {
            let v = if normalize {
                if span > 0.0 {
                    (v - lo) / span * full
                } else {
                    0.0
                }
            } else {
                v
            };
            // NaN clamps to 0
            let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, full) };
            v.round() as u16
        })
        .collect()
}

/// Writes `image` as a binary PGM at 8 or 16 bits.
pub fn save_gray_image(image: &Image, path: &Path, depth: u8, normalize: bool) -> Result<()> {
    check_depth(depth)?;
    if image.is_empty() {
        return Err(Error::invalid("cannot save an empty image"));
    }
    let levels = to_gray_levels(image, depth, normalize);
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<fs::File>| -> std::io::Result<()> {
        write!(
            out,
            "P5\n{} {}\n{}\n",
            image.width(),
            image.height(),
            depth_max(depth) as u32
        )?;
        if depth == 8 {
            let bytes: Vec<u8> = levels.iter().map(|&v| v as u8).collect();
            out.write_all(&bytes)?;
        } else {
            let bytes: Vec<u8> = levels.iter().flat_map(|v| v.to_be_bytes()).collect();
            out.write_all(&bytes)?;
        }
        out.flush()
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}

/// Decodes a binary PGM. Returns the image and its bit depth (8 when
/// `maxval < 256`, else 16).
pub fn read_pgm(path: &Path) -> Result<(Image, u8)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes).map_err(|reason| Error::Pgm {
        path: path.to_path_buf(),
        reason,
    })
}

fn decode_pgm(bytes: &[u8]) -> std::result::Result<(Image, u8), String> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err("missing P5 magic".into());
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("header field out of range")?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("header not terminated by whitespace".into());
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err("zero dimension".into());
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maxval {maxval} outside 1..=65535"));
    }
    let n = width * height;
    let payload = &bytes[pos..];
    let (data, depth) = if maxval < 256 {
        if payload.len() < n {
            return Err(format!("expected {n} bytes of pixels, found {}", payload.len()));
        }
        (payload[..n].iter().map(|&b| b as f32).collect(), 8)
    } else {
        if payload.len() < 2 * n {
            return Err(format!(
                "expected {} bytes of pixels, found {}",
                2 * n,
                payload.len()
            ));
        }
        (
            payload[..2 * n]
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32)
                .collect(),
            16,
        )
    };
    Image::from_vec(width, height, data)
        .map(|img| (img, depth))
        .map_err(|e| e.to_string())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VolumeSidecar {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub order: String,
}

fn volume_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("f32"), path.with_extension("json"))
}

/// Writes `<path>.f32` (little-endian float32, [`VOXEL_ORDER`]) and `<path>.json`.
pub fn save_volume(volume: &Volume, path: &Path) -> Result<()> {
    if volume.data().is_empty() {
        return Err(Error::invalid("cannot save an empty volume"));
    }
    let (payload, sidecar) = volume_paths(path);
    let bytes: Vec<u8> = volume.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&payload, bytes).map_err(|e| Error::io(&payload, e))?;
    let (nx, ny, nz) = volume.dims();
    write_json(
        &sidecar,
        &VolumeSidecar {
            nx,
            ny,
            nz,
            order: VOXEL_ORDER.to_string(),
        },
    )
}

pub fn load_volume(path: &Path) -> Result<Volume> {
    let (payload, sidecar_path) = volume_paths(path);
    let text = fs::read_to_string(&sidecar_path).map_err(|e| Error::io(&sidecar_path, e))?;
    let sidecar: VolumeSidecar = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: sidecar_path.clone(),
        source,
    })?;
    if sidecar.order != VOXEL_ORDER {
        return Err(Error::CorruptVolume(format!(
            "unsupported voxel order {:?}",
            sidecar.order
        )));
    }
    let bytes = fs::read(&payload).map_err(|e| Error::io(&payload, e))?;
    let expected = sidecar.nx * sidecar.ny * sidecar.nz * 4;
    if bytes.len() != expected {
        return Err(Error::CorruptVolume(format!(
            "sidecar declares {}x{}x{} voxels ({expected} bytes), payload has {} bytes",
            sidecar.nx,
            sidecar.ny,
            sidecar.nz,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Volume::from_vec(sidecar.nx, sidecar.ny, sidecar.nz, data)
}
