//! Dense row-major float rasters: 2D frames and 3D reconstructed volumes.
//!
//! Pixel `(x, y)` is column `x`, row `y`; the center of pixel `x` sits at
//! coordinate `x`, so the horizontal symmetry axis of a `D`-wide frame is
//! `(D - 1) / 2`.

use crate::error::{Error, Result};
use crate::trail_roi::Roi;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Image {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} values cannot fill a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Image {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f32) {
        self.data[y * self.width + x] = value;
    }

    pub fn row(&self, y: usize) -> &[f32] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    /// Smallest and largest pixel value. Returns `(0, 0)` for an empty image.
    pub fn min_max(&self) -> (f32, f32) {
        if self.data.is_empty() {
            return (0.0, 0.0);
        }
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Copy of the pixels covered by `roi`.
    pub fn crop(&self, roi: &Roi) -> Result<Image> {
        roi.check_within(self.width, self.height)?;
        let mut data = Vec::with_capacity(roi.width * roi.height);
        for y in roi.y0..roi.y0 + roi.height {
            let start = y * self.width + roi.x0;
            data.extend_from_slice(&self.data[start..start + roi.width]);
        }
        Image::from_vec(roi.width, roi.height, data)
    }
}

/// Reconstructed 3D field. Voxel `(x, y, z)` lives at `data[(z * ny + y) * nx + x]`;
/// `z` is the projection row a slice was reconstructed from.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    nx: usize,
    ny: usize,
    nz: usize,
    data: Vec<f32>,
}

impl Volume {
    pub fn zeros(nx: usize, ny: usize, nz: usize) -> Self {
        Volume {
            nx,
            ny,
            nz,
            data: vec![0.0; nx * ny * nz],
        }
    }

    pub fn from_vec(nx: usize, ny: usize, nz: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != nx * ny * nz {
            return Err(Error::ShapeMismatch(format!(
                "{} values cannot fill a {nx}x{ny}x{nz} volume",
                data.len()
            )));
        }
        Ok(Volume { nx, ny, nz, data })
    }

    /// Stacks equally sized axial slices along `z`.
    pub fn from_slices(slices: Vec<Image>) -> Result<Self> {
        let Some(first) = slices.first() else {
            return Err(Error::invalid("a volume needs at least one slice"));
        };
        let (nx, ny) = (first.width(), first.height());
        let mut data = Vec::with_capacity(nx * ny * slices.len());
        for s in &slices {
            if s.width() != nx || s.height() != ny {
                return Err(Error::ShapeMismatch("slices differ in size".into()));
            }
            data.extend_from_slice(s.data());
        }
        Volume::from_vec(nx, ny, slices.len(), data)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nz)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn nz(&self) -> usize {
        self.nz
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[(z * self.ny + y) * self.nx + x]
    }

    /// Plane `z = iz`, `nx` wide and `ny` tall.
    pub fn axial(&self, iz: usize) -> Result<Image> {
        check_index("z", iz, self.nz)?;
        let n = self.nx * self.ny;
        Image::from_vec(self.nx, self.ny, self.data[iz * n..(iz + 1) * n].to_vec())
    }

    /// Plane `y = iy`, `nx` wide and `nz` tall.
    pub fn coronal(&self, iy: usize) -> Result<Image> {
        check_index("y", iy, self.ny)?;
        Ok(Image::from_fn(self.nx, self.nz, |x, z| self.get(x, iy, z)))
    }

    /// Plane `x = ix`, `ny` wide and `nz` tall.
    pub fn sagittal(&self, ix: usize) -> Result<Image> {
        check_index("x", ix, self.nx)?;
        Ok(Image::from_fn(self.ny, self.nz, |y, z| self.get(ix, y, z)))
    }
}

fn check_index(axis: &str, index: usize, len: usize) -> Result<()> {
    if index >= len {
        return Err(Error::invalid(format!(
            "{axis} index {index} outside 0..{len}"
        )));
    }
    Ok(())
}

/// Anything `rmse` can compare: a shape plus a flat buffer.
pub trait Field {
    fn shape(&self) -> Vec<usize>;
    fn values(&self) -> &[f32];
}

impl Field for Image {
    fn shape(&self) -> Vec<usize> {
        vec![self.width, self.height]
    }

    fn values(&self) -> &[f32] {
        &self.data
    }
}

impl Field for Volume {
    fn shape(&self) -> Vec<usize> {
        vec![self.nx, self.ny, self.nz]
    }

    fn values(&self) -> &[f32] {
        &self.data
    }
}
