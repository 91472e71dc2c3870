//! Haar-like rectangle features inside a fixed detection window.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::raster::{GrayImage, IntegralImage};

/// Side of the square detection window in pixels.
pub const WINDOW: usize = 20;
/// Floor on the window standard deviation used to scale feature values, so
/// flat background is not stretched into texture.
pub const MIN_WINDOW_STD: f64 = 4.0;
const STEP: usize = 2;
const MIN_PART: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HaarKind {
    /// Left half minus right half.
    TwoRectH,
    /// Top half minus bottom half.
    TwoRectV,
    /// Outer thirds minus twice the middle third, split horizontally.
    ThreeRectH,
    ThreeRectV,
    /// Main diagonal quadrants minus anti-diagonal quadrants.
    FourRect,
}

impl HaarKind {
    pub const ALL: [HaarKind; 5] = [
        HaarKind::TwoRectH,
        HaarKind::TwoRectV,
        HaarKind::ThreeRectH,
        HaarKind::ThreeRectV,
        HaarKind::FourRect,
    ];

    /// Number of parts along x and y.
    fn parts(self) -> (usize, usize) {
        match self {
            HaarKind::TwoRectH => (2, 1),
            HaarKind::TwoRectV => (1, 2),
            HaarKind::ThreeRectH => (3, 1),
            HaarKind::ThreeRectV => (1, 3),
            HaarKind::FourRect => (2, 2),
        }
    }

    fn name(self) -> &'static str {
        match self {
            HaarKind::TwoRectH => "two-h",
            HaarKind::TwoRectV => "two-v",
            HaarKind::ThreeRectH => "three-h",
            HaarKind::ThreeRectV => "three-v",
            HaarKind::FourRect => "four",
        }
    }
}

impl fmt::Display for HaarKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HaarKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        HaarKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown Haar feature kind {s:?}")))
    }
}

/// A feature covering `[x, x+w) × [y, y+h)` of the window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HaarFeature {
    pub kind: HaarKind,
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl HaarFeature {
    pub fn is_valid(&self) -> bool {
        let (px, py) = self.kind.parts();
        self.w > 0
            && self.h > 0
            && self.w.is_multiple_of(px)
            && self.h.is_multiple_of(py)
            && self.x + self.w <= WINDOW
            && self.y + self.h <= WINDOW
    }

    /// Feature value for the window whose top-left corner is `(ox, oy)`.
    #[inline]
    pub fn value(&self, ii: &IntegralImage, ox: usize, oy: usize) -> i64 {
        let (x, y) = (ox + self.x, oy + self.y);
        let s = |x0: usize, y0: usize, x1: usize, y1: usize| ii.sum(x0, y0, x1, y1) as i64;
        match self.kind {
            HaarKind::TwoRectH => {
                let m = x + self.w / 2;
                s(x, y, m, y + self.h) - s(m, y, x + self.w, y + self.h)
            }
            HaarKind::TwoRectV => {
                let m = y + self.h / 2;
                s(x, y, x + self.w, m) - s(x, m, x + self.w, y + self.h)
            }
            HaarKind::ThreeRectH => {
                let t = self.w / 3;
                s(x, y, x + self.w, y + self.h) - 3 * s(x + t, y, x + 2 * t, y + self.h)
            }
            HaarKind::ThreeRectV => {
                let t = self.h / 3;
                s(x, y, x + self.w, y + self.h) - 3 * s(x, y + t, x + self.w, y + 2 * t)
            }
            HaarKind::FourRect => {
                let (mx, my) = (x + self.w / 2, y + self.h / 2);
                let (x1, y1) = (x + self.w, y + self.h);
                s(x, y, mx, my) + s(mx, my, x1, y1) - s(mx, y, x1, my) - s(x, my, mx, y1)
            }
        }
    }
}

/// Integral tables of one image with per-window contrast scaling: feature
/// values are divided by the window's intensity standard deviation, which
/// makes detection independent of page contrast.
#[derive(Clone, Debug)]
pub struct WindowImage {
    ii: IntegralImage,
    sq: IntegralImage,
}

impl WindowImage {
    pub fn new(img: &GrayImage) -> Self {
        Self {
            ii: IntegralImage::new(img),
            sq: IntegralImage::squared(img),
        }
    }

    pub fn width(&self) -> usize {
        self.ii.width()
    }

    pub fn height(&self) -> usize {
        self.ii.height()
    }

    /// Standard deviation of the window at `(ox, oy)`, floored at
    /// [`MIN_WINDOW_STD`].
    pub fn scale(&self, ox: usize, oy: usize) -> f64 {
        let n = (WINDOW * WINDOW) as f64;
        let (x1, y1) = (ox + WINDOW, oy + WINDOW);
        let mean = self.ii.sum(ox, oy, x1, y1) as f64 / n;
        let var = self.sq.sum(ox, oy, x1, y1) as f64 / n - mean * mean;
        var.max(0.0).sqrt().max(MIN_WINDOW_STD)
    }

    /// Scaled feature value. Rounded through `f32` so training and scanning
    /// see bit-identical values.
    #[inline]
    pub fn feature(&self, f: &HaarFeature, ox: usize, oy: usize, scale: f64) -> f64 {
        (f.value(&self.ii, ox, oy) as f64 / scale) as f32 as f64
    }
}

/// All features on a 2-px grid of positions and part sizes, each part at
/// least 4×4 pixels.
pub fn enumerate_features() -> Vec<HaarFeature> {
    let mut out = Vec::new();
    for kind in HaarKind::ALL {
        let (px, py) = kind.parts();
        for pw in (MIN_PART..=WINDOW / px).step_by(STEP) {
            for ph in (MIN_PART..=WINDOW / py).step_by(STEP) {
                let (w, h) = (pw * px, ph * py);
                for y in (0..=WINDOW - h).step_by(STEP) {
                    for x in (0..=WINDOW - w).step_by(STEP) {
                        out.push(HaarFeature { kind, x, y, w, h });
                    }
                }
            }
        }
    }
    out
}
