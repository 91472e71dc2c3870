//! Gray rasters, integral images, contrast normalization and rotation.
//!
//! Pixel `(x, y)` has its center at integer coordinates; rotation is about
//! `((w - 1) / 2, (h - 1) / 2)` so that dot coordinates and image pixels share
//! one frame.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{rotate_point, Point};

/// Row-major 8-bit intensity raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!(
                "image must be at least 1x1, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "{} pixels supplied for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// # Panics
    /// Panics if either dimension is zero.
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0, "image must be at least 1x1");
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    /// # Panics
    /// Panics if either dimension is zero.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        assert!(width > 0 && height > 0, "image must be at least 1x1");
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.pixels[y * self.width + x] = value;
    }

    pub fn histogram(&self) -> [u64; 256] {
        let mut hist = [0u64; 256];
        for &p in &self.pixels {
            hist[p as usize] += 1;
        }
        hist
    }

    /// Most frequent intensity; the lowest one wins ties.
    pub fn mode(&self) -> u8 {
        histogram_mode(&self.histogram())
    }

    /// Copies out the `w`×`h` block with top-left corner `(x, y)`, or `None`
    /// if it does not fit.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Option<GrayImage> {
        if w == 0 || h == 0 || x + w > self.width || y + h > self.height {
            return None;
        }
        let mut pixels = Vec::with_capacity(w * h);
        for row in y..y + h {
            let start = row * self.width + x;
            pixels.extend_from_slice(&self.pixels[start..start + w]);
        }
        Some(GrayImage {
            width: w,
            height: h,
            pixels,
        })
    }

    pub fn flip_vertical(&self) -> GrayImage {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for row in (0..self.height).rev() {
            let start = row * self.width;
            pixels.extend_from_slice(&self.pixels[start..start + self.width]);
        }
        GrayImage {
            width: self.width,
            height: self.height,
            pixels,
        }
    }
}

pub(crate) fn histogram_mode(hist: &[u64; 256]) -> u8 {
    let mut best = 0usize;
    for (v, &count) in hist.iter().enumerate() {
        if count > hist[best] {
            best = v;
        }
    }
    best as u8
}

/// Converts interleaved 8-bit RGB to gray with the ITU-R BT.601 luma weights.
pub fn to_grayscale(width: usize, height: usize, rgb: &[u8]) -> Result<GrayImage> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidInput("zero-sized color image".into()));
    }
    if rgb.len() != width * height * 3 {
        return Err(Error::InvalidInput(format!(
            "{} bytes supplied for a {width}x{height} RGB image",
            rgb.len()
        )));
    }
    let pixels = rgb
        .chunks_exact(3)
        .map(|c| {
            let weighted = 299 * c[0] as u32 + 587 * c[1] as u32 + 114 * c[2] as u32;
            ((weighted + 500) / 1000).min(255) as u8
        })
        .collect();
    GrayImage::new(width, height, pixels)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Normalized {
    pub image: GrayImage,
    /// Set when the 1st and 99th percentiles coincide and the image was
    /// returned unchanged.
    pub degenerate: bool,
}

/// Nearest-rank percentile of an intensity histogram.
fn percentile(hist: &[u64; 256], total: u64, fraction: f64) -> u8 {
    let rank = ((fraction * total as f64).ceil() as u64).clamp(1, total);
    let mut cumulative = 0;
    for (v, &count) in hist.iter().enumerate() {
        cumulative += count;
        if cumulative >= rank {
            return v as u8;
        }
    }
    255
}

/// Linear contrast stretch sending the 1st percentile to 0 and the 99th to 255.
pub fn normalize_gray(img: &GrayImage) -> Normalized {
    let hist = img.histogram();
    let total = img.pixels.len() as u64;
    let lo = percentile(&hist, total, 0.01);
    let hi = percentile(&hist, total, 0.99);
    if lo >= hi {
        return Normalized {
            image: img.clone(),
            degenerate: true,
        };
    }
    let span = (hi - lo) as f64;
    let mut lut = [0u8; 256];
    for (v, out) in lut.iter_mut().enumerate() {
        let stretched = (v as f64 - lo as f64) * 255.0 / span;
        *out = stretched.round().clamp(0.0, 255.0) as u8;
    }
    Normalized {
        image: GrayImage {
            width: img.width,
            height: img.height,
            pixels: img.pixels.iter().map(|&p| lut[p as usize]).collect(),
        },
        degenerate: false,
    }
}

/// Summed-area table with a zero first row and column.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    table: Vec<u64>,
}

impl IntegralImage {
    pub fn new(img: &GrayImage) -> Self {
        Self::build(img, |v| v)
    }

    /// Integral of squared intensities, for window variances.
    pub fn squared(img: &GrayImage) -> Self {
        Self::build(img, |v| v * v)
    }

    fn build(img: &GrayImage, f: impl Fn(u64) -> u64) -> Self {
        let stride = img.width + 1;
        let mut table = vec![0u64; stride * (img.height + 1)];
        for y in 0..img.height {
            let mut row_sum = 0u64;
            for x in 0..img.width {
                row_sum += f(img.get(x, y) as u64);
                table[(y + 1) * stride + x + 1] = table[y * stride + x + 1] + row_sum;
            }
        }
        Self {
            width: img.width,
            height: img.height,
            table,
        }
    }

    /// Width of the source image (the table is one wider).
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Sum of all pixels with column `< x` and row `< y`.
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> u64 {
        self.table[y * (self.width + 1) + x]
    }

    /// Sum over the half-open rectangle `[x0, x1) × [y0, y1)`.
    #[inline]
    pub fn sum(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> u64 {
        debug_assert!(x0 <= x1 && y0 <= y1 && x1 <= self.width && y1 <= self.height);
        self.at(x1, y1) + self.at(x0, y0) - self.at(x1, y0) - self.at(x0, y1)
    }
}

pub fn compute_integral(img: &GrayImage) -> IntegralImage {
    IntegralImage::new(img)
}

/// Rotates counter-clockwise (as displayed, y pointing down) by `angle_deg`
/// about the image center using bilinear sampling. Samples that fall outside
/// the source take the histogram mode of the input.
pub fn rotate(img: &GrayImage, angle_deg: f64) -> GrayImage {
    if angle_deg == 0.0 {
        return img.clone();
    }
    let background = img.mode();
    let center = image_center(img.width, img.height);
    let max_x = (img.width - 1) as f64;
    let max_y = (img.height - 1) as f64;
    const EPS: f64 = 1e-9;

    GrayImage::from_fn(img.width, img.height, |x, y| {
        let src = rotate_point(
            Point {
                x: x as f64,
                y: y as f64,
            },
            center,
            -angle_deg,
        );
        if src.x < -EPS || src.y < -EPS || src.x > max_x + EPS || src.y > max_y + EPS {
            return background;
        }
        let sx = src.x.clamp(0.0, max_x);
        let sy = src.y.clamp(0.0, max_y);
        let x0 = sx.floor() as usize;
        let y0 = sy.floor() as usize;
        let x1 = (x0 + 1).min(img.width - 1);
        let y1 = (y0 + 1).min(img.height - 1);
        let fx = sx - x0 as f64;
        let fy = sy - y0 as f64;
        let top = img.get(x0, y0) as f64 * (1.0 - fx) + img.get(x1, y0) as f64 * fx;
        let bottom = img.get(x0, y1) as f64 * (1.0 - fx) + img.get(x1, y1) as f64 * fx;
        (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8
    })
}

pub fn image_center(width: usize, height: usize) -> Point {
    Point {
        x: (width as f64 - 1.0) / 2.0,
        y: (height as f64 - 1.0) / 2.0,
    }
}

/// Loads a PNG or JPEG as gray; color inputs go through [`to_grayscale`].
pub fn load_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let decoded = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    match decoded {
        image::DynamicImage::ImageLuma8(gray) => GrayImage::new(w, h, gray.into_raw()),
        other => to_grayscale(w, h, other.to_rgb8().as_raw()),
    }
}

fn to_image_buffer(img: &GrayImage) -> image::GrayImage {
    image::GrayImage::from_raw(img.width as u32, img.height as u32, img.pixels.clone())
        .expect("dimensions match pixel count")
}

pub fn save_png(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    to_image_buffer(img)
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

pub fn encode_png(img: &GrayImage) -> Vec<u8> {
    let mut bytes = Vec::new();
    to_image_buffer(img)
        .write_to(&mut Cursor::new(&mut bytes), image::ImageFormat::Png)
        .expect("in-memory PNG encoding");
    bytes
}
