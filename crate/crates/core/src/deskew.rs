//! Skew estimation from projection profiles of detected dots.
//!
//! For each candidate angle the dots are rotated back about the page center
//! and projected onto both axes. Aligned Braille rows and columns produce
//! peaky profiles, so the angle maximizing profile variance wins.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rotate_point, DotSet, Point};
use crate::raster::{image_center, rotate, GrayImage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkewConfig {
    /// Search covers `[-max_angle_deg, max_angle_deg]`.
    pub max_angle_deg: f64,
    pub coarse_step_deg: f64,
    pub fine_step_deg: f64,
    /// Projection bin width in pixels.
    pub bin_width: f64,
    pub min_dots: usize,
}

impl Default for SkewConfig {
    fn default() -> Self {
        Self {
            max_angle_deg: 5.0,
            coarse_step_deg: 0.5,
            fine_step_deg: 0.05,
            bin_width: 2.0,
            min_dots: 20,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkewEstimate {
    /// Rotation present on the page, counter-clockwise positive.
    pub angle_deg: f64,
    pub score: f64,
    /// Number of angles scored during the search.
    pub candidates: usize,
}

impl SkewEstimate {
    /// A known rotation, e.g. one read back from an annotation.
    pub fn known(angle_deg: f64) -> Self {
        Self {
            angle_deg,
            score: 0.0,
            candidates: 0,
        }
    }
}

fn profile_variance(coords: impl Iterator<Item = f64>, lo: f64, bins: usize, bin_width: f64) -> f64 {
    let mut hist = vec![0.0f64; bins + 1];
    for v in coords {
        // Linear binning keeps the score smooth in the angle.
        let t = ((v - lo) / bin_width).clamp(0.0, bins as f64 - 1e-9);
        let i = t.floor() as usize;
        let f = t - i as f64;
        hist[i] += 1.0 - f;
        hist[i + 1] += f;
    }
    let n = hist.len() as f64;
    let mean = hist.iter().sum::<f64>() / n;
    hist.iter().map(|h| (h - mean) * (h - mean)).sum::<f64>() / n
}

/// Profile sharpness of `dots` after undoing a page rotation of `angle_deg`.
pub fn alignment_score(dots: &DotSet, angle_deg: f64, bin_width: f64) -> f64 {
    let center = image_center(dots.width, dots.height);
    let half_diag = 0.5 * (dots.width as f64).hypot(dots.height as f64) + 1.0;
    let bins = (2.0 * half_diag / bin_width).ceil() as usize;
    let pts: Vec<Point> = dots
        .dots
        .iter()
        .map(|d| rotate_point(d.point(), center, -angle_deg))
        .collect();
    profile_variance(pts.iter().map(|p| p.y), center.y - half_diag, bins, bin_width)
        + profile_variance(pts.iter().map(|p| p.x), center.x - half_diag, bins, bin_width)
}

/// Coarse-to-fine search for the page rotation. Returns the angle to undo
/// with [`deskew_dots`] / [`apply_deskew`].
pub fn estimate_skew(dots: &DotSet, config: &SkewConfig) -> Result<SkewEstimate> {
    if dots.len() < config.min_dots {
        return Err(Error::InsufficientEvidence(format!(
            "{} dots detected, at least {} needed to estimate skew",
            dots.len(),
            config.min_dots
        )));
    }
    if !(config.coarse_step_deg > 0.0 && config.fine_step_deg > 0.0 && config.max_angle_deg >= 0.0) {
        return Err(Error::InvalidInput(format!("invalid skew search: {config:?}")));
    }
    let evaluated = std::cell::Cell::new(0usize);
    let score = |a: f64| {
        evaluated.set(evaluated.get() + 1);
        alignment_score(dots, a, config.bin_width)
    };
    let best_of = |angles: Vec<f64>| {
        angles
            .into_iter()
            .map(|a| (a, score(a)))
            // Ties prefer the smaller rotation.
            .max_by(|x, y| x.1.total_cmp(&y.1).then(y.0.abs().total_cmp(&x.0.abs())))
            .expect("non-empty search")
    };

    let n = (config.max_angle_deg / config.coarse_step_deg).floor() as i64;
    let (coarse, _) = best_of((-n..=n).map(|i| i as f64 * config.coarse_step_deg).collect());
    let m = (config.coarse_step_deg / config.fine_step_deg).round() as i64;
    let (mut angle, mut best) = best_of(
        (-m..=m)
            .map(|i| coarse + i as f64 * config.fine_step_deg)
            .filter(|a| a.abs() <= config.max_angle_deg + 1e-9)
            .collect(),
    );

    // Parabolic interpolation through the fine-grid neighbours.
    let h = config.fine_step_deg;
    let (l, r) = (score(angle - h), score(angle + h));
    let denom = l - 2.0 * best + r;
    if denom < 0.0 {
        let offset = 0.5 * h * (l - r) / denom;
        if offset.abs() < h {
            let refined = angle + offset;
            let s = score(refined);
            if s >= best - 1e-12 * best.abs() {
                angle = refined;
                best = s;
            }
        }
    }
    Ok(SkewEstimate {
        angle_deg: angle,
        score: best,
        candidates: evaluated.get(),
    })
}

pub fn deskew_dots(dots: &DotSet, estimate: &SkewEstimate) -> DotSet {
    dots.rotated(-estimate.angle_deg)
}

/// Rotates the page image by the inverse of a known skew.
pub fn apply_deskew(img: &GrayImage, estimate: &SkewEstimate) -> GrayImage {
    rotate(img, -estimate.angle_deg)
}

/// Estimates the skew from `dots` and straightens both the image and the
/// dots with the same transform.
pub fn deskew_page(img: &GrayImage, dots: &DotSet, config: &SkewConfig) -> Result<(GrayImage, DotSet, SkewEstimate)> {
    let estimate = estimate_skew(dots, config)?;
    Ok((apply_deskew(img, &estimate), deskew_dots(dots, &estimate), estimate))
}
