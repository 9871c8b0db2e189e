//! Jitter-trail rendering and region-of-interest suggestion.
//!
//! Each frame is binarized against its own minimum (the bead core is the
//! darkest thing in every projection). Multiplying those masks across the
//! series leaves zeros wherever the bead core visited: a dark trail that
//! bounds the search window for the detectors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::stack_io::ProjectionStack;

/// Axis-aligned rectangle of whole pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Roi {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Roi {
    pub fn new(x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("ROI {width}x{height} has no area")));
        }
        Ok(Roi {
            x0,
            y0,
            width,
            height,
        })
    }

    /// The whole `width` x `height` frame.
    pub fn full(width: usize, height: usize) -> Self {
        Roi {
            x0: 0,
            y0: 0,
            width,
            height,
        }
    }

    /// Last column, inclusive.
    pub fn x1(&self) -> usize {
        self.x0 + self.width - 1
    }

    /// Last row, inclusive.
    pub fn y1(&self) -> usize {
        self.y0 + self.height - 1
    }

    pub fn check_within(&self, frame_width: usize, frame_height: usize) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("ROI has no area"));
        }
        if self.x0 + self.width > frame_width || self.y0 + self.height > frame_height {
            return Err(Error::invalid(format!(
                "ROI {}x{} at ({}, {}) exceeds {frame_width}x{frame_height} frame",
                self.width, self.height, self.x0, self.y0
            )));
        }
        Ok(())
    }

    /// Whether the point `(x, y)` lies within the pixel centers covered by the ROI.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x0 as f64 && x <= self.x1() as f64 && y >= self.y0 as f64 && y <= self.y1() as f64
    }

    pub fn contains(&self, other: &Roi) -> bool {
        other.x0 >= self.x0
            && other.y0 >= self.y0
            && other.x1() <= self.x1()
            && other.y1() <= self.y1()
    }
}

/// Image with values restricted to 0 and 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<u8>,
}

impl BinaryMask {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.bits[y * self.width + x]
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    /// Coordinates of every zero pixel, row-major.
    pub fn zeros(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == 0)
            .map(|(i, _)| (i % self.width, i / self.width))
    }

    /// 0 renders black, 1 white (when saved with normalization).
    pub fn to_image(&self) -> Image {
        Image::from_vec(
            self.width,
            self.height,
            self.bits.iter().map(|&b| b as f32).collect(),
        )
        .expect("mask buffer matches its shape")
    }
}

/// Elementwise product of every frame's minimum mask. Zeros trace the bead.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrailMap {
    pub mask: BinaryMask,
    pub zero_count: usize,
}

/// 0 where `A <= A_min + delta`, 1 elsewhere.
pub fn binarize_min(image: &Image, delta: f32) -> BinaryMask {
    let (min, _) = image.min_max();
    let cut = min + delta.max(0.0);
    BinaryMask {
        width: image.width(),
        height: image.height(),
        bits: image.data().iter().map(|&v| u8::from(v > cut)).collect(),
    }
}

pub fn trail_product(stack: &ProjectionStack, delta: f32) -> TrailMap {
    let (w, h) = (stack.width(), stack.height());
    let bits = stack
        .frames()
        .par_iter()
        .map(|f| binarize_min(f, delta).bits)
        .reduce(
            || vec![1u8; w * h],
            |mut acc, m| {
                acc.iter_mut().zip(&m).for_each(|(a, b)| *a *= b);
                acc
            },
        );
    let zero_count = bits.iter().filter(|&&b| b == 0).count();
    TrailMap {
        mask: BinaryMask {
            width: w,
            height: h,
            bits,
        },
        zero_count,
    }
}

/// Bounding box of the trail's zeros grown by `margin` on every side and
/// clamped to the frame.
pub fn suggest_roi(trail: &TrailMap, margin: usize) -> Result<Roi> {
    let mut zeros = trail.mask.zeros();
    let Some((x, y)) = zeros.next() else {
        return Err(Error::NoReference("trail map has no zero pixels".into()));
    };
    let (mut x0, mut x1, mut y0, mut y1) = (x, x, y, y);
    for (x, y) in zeros {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let x0 = x0.saturating_sub(margin);
    let y0 = y0.saturating_sub(margin);
    let x1 = (x1 + margin).min(trail.mask.width - 1);
    let y1 = (y1 + margin).min(trail.mask.height - 1);
    Roi::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack_of(frames: Vec<Image>) -> ProjectionStack {
        ProjectionStack::new(frames, 0.0, 180.0, 8, "test").unwrap()
    }

    #[test]
    fn unique_minimum_is_the_only_zero() {
        let mut img = Image::filled(10, 10, 100.0);
        img.set(5, 5, 3.0);
        let m = binarize_min(&img, 0.0);
        assert_eq!(m.zeros().collect::<Vec<_>>(), vec![(5, 5)]);
        assert_eq!(m.bits().iter().filter(|&&b| b == 1).count(), 99);
    }

    #[test]
    fn constant_image_is_all_zero() {
        let m = binarize_min(&Image::filled(4, 3, 42.0), 0.0);
        assert!(m.bits().iter().all(|&b| b == 0));
    }

    #[test]
    fn tolerance_widens_the_minimum_set() {
        let mut img = Image::filled(6, 6, 200.0);
        img.set(1, 1, 10.0);
        img.set(4, 2, 10.0);
        img.set(3, 5, 12.0);
        let m = binarize_min(&img, 2.0);
        let mut z: Vec<_> = m.zeros().collect();
        z.sort();
        assert_eq!(z, vec![(1, 1), (3, 5), (4, 2)]);
    }

    #[test]
    fn product_of_two_minima() {
        let mut a = Image::filled(10, 10, 100.0);
        a.set(5, 5, 0.0);
        let mut b = Image::filled(10, 10, 100.0);
        b.set(6, 6, 0.0);
        let trail = trail_product(&stack_of(vec![a, b]), 0.0);
        let mut z: Vec<_> = trail.mask.zeros().collect();
        z.sort();
        assert_eq!(z, vec![(5, 5), (6, 6)]);
        assert_eq!(trail.zero_count, 2);
    }

    #[test]
    fn repeated_frame_matches_single_binarization() {
        // stacks hold at least two frames; a repeated frame is the single-frame case
        let mut a = Image::filled(8, 8, 90.0);
        a.set(2, 3, 1.0);
        a.set(7, 0, 1.0);
        let trail = trail_product(&stack_of(vec![a.clone(), a.clone()]), 0.0);
        assert_eq!(trail.mask, binarize_min(&a, 0.0));
    }

    #[test]
    fn roi_from_bounding_box() {
        let mut bits = vec![1u8; 100 * 100];
        for y in 30..=35 {
            for x in 10..=20 {
                bits[y * 100 + x] = 0;
            }
        }
        let trail = TrailMap {
            zero_count: bits.iter().filter(|&&b| b == 0).count(),
            mask: BinaryMask {
                width: 100,
                height: 100,
                bits,
            },
        };
        assert_eq!(suggest_roi(&trail, 2).unwrap(), Roi::new(8, 28, 15, 10).unwrap());
    }

    fn single_zero(w: usize, h: usize, x: usize, y: usize) -> TrailMap {
        let mut bits = vec![1u8; w * h];
        bits[y * w + x] = 0;
        TrailMap {
            mask: BinaryMask {
                width: w,
                height: h,
                bits,
            },
            zero_count: 1,
        }
    }

    #[test]
    fn roi_clamps_at_the_border() {
        let roi = suggest_roi(&single_zero(50, 50, 0, 0), 3).unwrap();
        assert_eq!(roi, Roi::new(0, 0, 4, 4).unwrap());
        let roi = suggest_roi(&single_zero(50, 50, 49, 48), 3).unwrap();
        assert_eq!(roi, Roi::new(46, 45, 4, 5).unwrap());
    }

    #[test]
    fn roi_with_zero_margin() {
        let roi = suggest_roi(&single_zero(20, 20, 7, 7), 0).unwrap();
        assert_eq!(roi, Roi::new(7, 7, 1, 1).unwrap());
    }

    #[test]
    fn empty_trail_is_an_error() {
        let trail = TrailMap {
            mask: BinaryMask {
                width: 3,
                height: 3,
                bits: vec![1; 9],
            },
            zero_count: 0,
        };
        assert!(suggest_roi(&trail, 1).is_err());
    }

    #[test]
    fn roi_bounds_checks() {
        assert!(Roi::new(0, 0, 0, 4).is_err());
        let r = Roi::new(3, 4, 5, 6).unwrap();
        assert!(r.check_within(8, 10).is_ok());
        assert!(r.check_within(7, 10).is_err());
        assert!(r.contains_point(3.0, 9.0));
        assert!(!r.contains_point(7.5, 9.0));
    }
}
