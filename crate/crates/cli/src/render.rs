//! 8-bit PNG previews with simple vector overlays.

use std::path::Path;

use nanoct::{Image, Roi};

/// How floats map onto 0..=255.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Normalize {
    /// Stretch the image's own range.
    MinMax,
    /// Map `0..=max` linearly, clamping outside.
    Fixed(f32),
}

impl Normalize {
    /// `minmax` or `fixed`; `fixed` uses `full_scale`.
    pub fn parse(s: &str, full_scale: f32) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "minmax" => Ok(Normalize::MinMax),
            "fixed" | "full" => Ok(Normalize::Fixed(full_scale)),
            other => Err(format!("unknown normalization {other:?}")),
        }
    }
}

pub fn to_u8(image: &Image, norm: Normalize) -> Vec<u8> {
    let (lo, hi) = match norm {
        Normalize::MinMax => image.min_max(),
        Normalize::Fixed(max) => (0.0, max),
    };
    let span = hi - lo;
    image
        .data()
        .iter()
        .map(|&v| {
            if span > 0.0 && v.is_finite() {
                (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect()
}

pub type Rgb = [u8; 3];

pub const ROI_COLOR: Rgb = [165, 42, 42];
pub const CIRCLE_COLOR: Rgb = [255, 255, 255];
pub const TARGET_COLOR: Rgb = [40, 200, 80];

/// An RGB raster for drawing overlays on a grayscale frame.
pub struct Canvas {
    width: usize,
    height: usize,
    rgb: Vec<u8>,
}

impl Canvas {
    pub fn from_image(image: &Image, norm: Normalize) -> Self {
        let gray = to_u8(image, norm);
        let rgb = gray.iter().flat_map(|&g| [g, g, g]).collect();
        Canvas {
            width: image.width(),
            height: image.height(),
            rgb,
        }
    }

    fn put(&mut self, x: i64, y: i64, c: Rgb) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            let i = 3 * (y as usize * self.width + x as usize);
            self.rgb[i..i + 3].copy_from_slice(&c);
        }
    }

    pub fn rect(&mut self, roi: &Roi, c: Rgb) {
        let (x0, y0) = (roi.x0 as i64, roi.y0 as i64);
        let (x1, y1) = (roi.x1() as i64, roi.y1() as i64);
        for x in x0..=x1 {
            self.put(x, y0, c);
            self.put(x, y1, c);
        }
        for y in y0..=y1 {
            self.put(x0, y, c);
            self.put(x1, y, c);
        }
    }

    pub fn circle(&mut self, cx: f64, cy: f64, r: f64, c: Rgb) {
        if !(cx.is_finite() && cy.is_finite() && r.is_finite()) {
            return;
        }
        let steps = ((4.0 * std::f64::consts::PI * r).ceil() as usize).max(16);
        for i in 0..steps {
            let t = i as f64 / steps as f64 * std::f64::consts::TAU;
            self.put(
                (cx + r * t.cos()).round() as i64,
                (cy + r * t.sin()).round() as i64,
                c,
            );
        }
    }

    pub fn png(&self) -> Vec<u8> {
        encode(self.width, self.height, png::ColorType::Rgb, &self.rgb)
    }
}

pub fn gray_png(image: &Image, norm: Normalize) -> Vec<u8> {
    encode(image.width(), image.height(), png::ColorType::Grayscale, &to_u8(image, norm))
}

pub fn write_png(image: &Image, norm: Normalize, path: &Path) -> std::io::Result<()> {
    std::fs::write(path, gray_png(image, norm))
}

fn encode(width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        // writing into a Vec cannot fail once the header is valid
        let mut w = enc.write_header().expect("png header");
        w.write_image_data(data).expect("png data");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stretch_and_fixed() {
        let img = Image::from_vec(3, 1, vec![10.0, 20.0, 30.0]).unwrap();
        assert_eq!(to_u8(&img, Normalize::MinMax), vec![0, 128, 255]);
        assert_eq!(to_u8(&img, Normalize::Fixed(20.0)), vec![128, 255, 255]);
        assert_eq!(to_u8(&Image::filled(2, 2, 5.0), Normalize::MinMax), vec![0; 4]);
    }

    #[test]
    fn png_signature_and_overlay() {
        let img = Image::filled(12, 10, 100.0);
        let mut c = Canvas::from_image(&img, Normalize::Fixed(255.0));
        c.rect(&Roi::new(2, 2, 5, 4).unwrap(), ROI_COLOR);
        c.circle(6.0, 5.0, 3.0, CIRCLE_COLOR);
        assert_eq!(&c.png()[..8], b"\x89PNG\r\n\x1a\n");
        assert_eq!(&gray_png(&img, Normalize::MinMax)[..4], b"\x89PNG");
    }
}
