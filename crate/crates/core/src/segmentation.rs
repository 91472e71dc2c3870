//! Dot detection by three-class segmentation.
//!
//! A page is split into highlight, shadow and background around a global
//! histogram threshold. Under scanner lighting an embossed recto dot shows a
//! highlight lobe directly above a shadow lobe; a verso dot shows the reverse.
//! Vertically adjacent highlight/shadow regions are paired into dots.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Dot, DotSet, GridGeometry, Side};
use crate::raster::{normalize_gray, GrayImage};

pub const DETECTOR_ID: &str = "segmentation";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PixelClass {
    Background,
    Highlight,
    Shadow,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentedImage {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<PixelClass>,
}

impl SegmentedImage {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> PixelClass {
        self.labels[y * self.width + x]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Thresholds {
    /// Pixels strictly below are shadow.
    pub lower: u8,
    /// Pixels strictly above are highlight.
    pub upper: u8,
    /// Background intensity (histogram peak).
    pub mode: u8,
}

/// Maximal 8-connected component of one class.
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub class: PixelClass,
    pub area: usize,
    /// Inclusive pixel bounds `(x0, y0, x1, y1)`.
    pub bbox: (usize, usize, usize, usize),
    pub centroid: (f64, f64),
    pub pixels: Vec<(u32, u32)>,
}

impl Region {
    pub fn from_pixels(class: PixelClass, pixels: Vec<(u32, u32)>) -> Self {
        debug_assert!(!pixels.is_empty());
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        let (mut sx, mut sy) = (0.0, 0.0);
        for &(x, y) in &pixels {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            sx += x as f64;
            sy += y as f64;
        }
        let n = pixels.len() as f64;
        Region {
            class,
            area: pixels.len(),
            bbox: (x0 as usize, y0 as usize, x1 as usize, y1 as usize),
            centroid: (sx / n, sy / n),
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.bbox.2 - self.bbox.0 + 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationConfig {
    pub geometry: GridGeometry,
    /// Threshold half-width in units of the background spread.
    pub k: f64,
    /// Intensities within this distance of the mode define the spread.
    pub spread_window: u8,
    pub min_region_area: usize,
    /// Regions wider than this many dot diameters are split.
    pub split_width_factor: f64,
    /// Accepted highlight area, as multiples of the expected lobe area.
    pub lobe_area_range: (f64, f64),
    /// Maximum vertical centroid gap of a pair, in dot diameters.
    pub max_vertical_gap: f64,
    /// Maximum horizontal centroid offset of a pair, in dot diameters.
    pub max_horizontal_offset: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            geometry: GridGeometry::default(),
            k: 3.0,
            spread_window: 30,
            min_region_area: 3,
            split_width_factor: 1.5,
            lobe_area_range: (0.2, 3.0),
            max_vertical_gap: 0.8,
            max_horizontal_offset: 0.5,
        }
    }
}

impl SegmentationConfig {
    pub fn with_geometry(geometry: GridGeometry) -> Self {
        Self {
            geometry,
            ..Self::default()
        }
    }

    /// Half of the dot disc: one lobe.
    pub fn expected_lobe_area(&self) -> f64 {
        let r = self.geometry.dot_radius();
        std::f64::consts::PI * r * r / 2.0
    }

    pub fn max_region_width(&self) -> usize {
        (self.split_width_factor * self.geometry.dot_diameter).floor() as usize
    }
}

/// Global thresholds from a band of `k` robust spreads around the histogram
/// peak.
pub fn thresholds_from_histogram(img: &GrayImage, config: &SegmentationConfig) -> Result<Thresholds> {
    let hist = img.histogram();
    let mode = crate::raster::histogram_mode(&hist);
    let lo = mode.saturating_sub(config.spread_window) as usize;
    let hi = mode.saturating_add(config.spread_window) as usize;
    let (mut n, mut sum, mut sum_sq) = (0.0, 0.0, 0.0);
    for v in lo..=hi {
        let c = hist[v] as f64;
        n += c;
        sum += c * v as f64;
        sum_sq += c * (v * v) as f64;
    }
    let mean = sum / n;
    let spread = (sum_sq / n - mean * mean).max(0.0).sqrt();
    if spread < 1e-9 {
        return Err(Error::DegeneratePage(format!(
            "no intensity spread around background level {mode}"
        )));
    }
    let m = mode as f64;
    let band = config.k * spread;
    let lower = (m - band).round().clamp(0.0, 255.0) as u8;
    let upper = (m + band).round().clamp(0.0, 255.0) as u8;
    // Keep the mode strictly inside the band even for tiny spreads.
    let lower = lower.min(mode.saturating_sub(1));
    let upper = upper.max(mode.saturating_add(1));
    if !(lower < mode && mode < upper) {
        return Err(Error::DegeneratePage(format!(
            "background level {mode} leaves no room for a threshold band"
        )));
    }
    Ok(Thresholds { lower, upper, mode })
}

/// Replaces pixels in the border band that deviate from the background by
/// more than the segmentation thresholds with the background intensity.
pub fn suppress_edge_noise(img: &GrayImage, config: &SegmentationConfig) -> GrayImage {
    let Ok(t) = thresholds_from_histogram(img, config) else {
        return img.clone();
    };
    let (w, h) = (img.width(), img.height());
    let band = ((w.min(h) as f64 * 0.01).round() as usize).max(4);
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let in_band = x < band || y < band || x + band >= w || y + band >= h;
            if !in_band {
                continue;
            }
            let v = img.get(x, y);
            if v < t.lower || v > t.upper {
                out.set(x, y, t.mode);
            }
        }
    }
    out
}

pub fn segment(img: &GrayImage, t: Thresholds) -> SegmentedImage {
    debug_assert!(t.lower < t.upper);
    SegmentedImage {
        width: img.width(),
        height: img.height(),
        labels: img
            .pixels()
            .iter()
            .map(|&v| {
                if v > t.upper {
                    PixelClass::Highlight
                } else if v < t.lower {
                    PixelClass::Shadow
                } else {
                    PixelClass::Background
                }
            })
            .collect(),
    }
}

fn find(parent: &mut [u32], mut i: u32) -> u32 {
    while parent[i as usize] != i {
        let grand = parent[parent[i as usize] as usize];
        parent[i as usize] = grand;
        i = grand;
    }
    i
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

/// Two-pass 8-connected labelling of the highlight and shadow classes.
/// Regions smaller than `min_area` are dropped. Output is ordered by the
/// first pixel of each region in raster order.
pub fn extract_regions(seg: &SegmentedImage, min_area: usize) -> Vec<Region> {
    const NONE: u32 = u32::MAX;
    let (w, h) = (seg.width, seg.height);
    let mut labels = vec![NONE; w * h];
    let mut parent: Vec<u32> = Vec::new();

    for y in 0..h {
        for x in 0..w {
            let class = seg.get(x, y);
            if class == PixelClass::Background {
                continue;
            }
            let mut current = NONE;
            // Already-visited neighbours: W, NW, N, NE.
            let neighbours = [
                (x > 0).then(|| (x - 1, y)),
                (x > 0 && y > 0).then(|| (x - 1, y - 1)),
                (y > 0).then(|| (x, y - 1)),
                (y > 0 && x + 1 < w).then(|| (x + 1, y - 1)),
            ];
            for (nx, ny) in neighbours.into_iter().flatten() {
                if seg.get(nx, ny) != class {
                    continue;
                }
                let l = labels[ny * w + nx];
                if current == NONE {
                    current = l;
                } else if l != current {
                    union(&mut parent, current, l);
                }
            }
            if current == NONE {
                current = parent.len() as u32;
                parent.push(current);
            }
            labels[y * w + x] = current;
        }
    }

    let mut slot_of_root: Vec<u32> = vec![NONE; parent.len()];
    let mut groups: Vec<(PixelClass, Vec<(u32, u32)>)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let l = labels[y * w + x];
            if l == NONE {
                continue;
            }
            let root = find(&mut parent, l) as usize;
            if slot_of_root[root] == NONE {
                slot_of_root[root] = groups.len() as u32;
                groups.push((seg.get(x, y), Vec::new()));
            }
            groups[slot_of_root[root] as usize]
                .1
                .push((x as u32, y as u32));
        }
    }

    groups
        .into_iter()
        .filter(|(_, px)| px.len() >= min_area)
        .map(|(class, px)| Region::from_pixels(class, px))
        .collect()
}

/// Splits regions wider than `max_width` at interior minima of their
/// per-column pixel counts, recursively, until every piece fits.
pub fn split_wide_regions(regions: Vec<Region>, max_width: usize) -> Vec<Region> {
    assert!(max_width > 0, "max_width must be positive");
    let mut out = Vec::with_capacity(regions.len());
    for region in regions {
        split_into(region, max_width, &mut out);
    }
    out
}

fn split_into(region: Region, max_width: usize, out: &mut Vec<Region>) {
    let width = region.width();
    if width <= max_width {
        out.push(region);
        return;
    }
    let x0 = region.bbox.0;
    let mut profile = vec![0usize; width];
    for &(x, _) in &region.pixels {
        profile[x as usize - x0] += 1;
    }
    // Cut column: fewest pixels among interior columns, nearest the middle on
    // ties. The cut column goes to the left piece.
    let mid = (width - 1) as f64 / 2.0;
    let cut = (1..width - 1)
        .min_by(|&a, &b| {
            profile[a]
                .cmp(&profile[b])
                .then((a as f64 - mid).abs().total_cmp(&(b as f64 - mid).abs()))
        })
        .expect("region wider than max_width has interior columns");
    let boundary = (x0 + cut) as u32;
    let (left, right): (Vec<_>, Vec<_>) = region.pixels.into_iter().partition(|&(x, _)| x <= boundary);
    for part in [left, right] {
        if !part.is_empty() {
            split_into(Region::from_pixels(region.class, part), max_width, out);
        }
    }
}

/// Pairs vertically adjacent lobes into dots. For recto dots the highlight
/// lies above the shadow; for verso dots the order is reversed.
pub fn pair_regions_to_dots(
    regions: &[Region],
    side: Side,
    width: usize,
    height: usize,
    config: &SegmentationConfig,
) -> DotSet {
    let (upper_class, lower_class) = match side {
        Side::Recto => (PixelClass::Highlight, PixelClass::Shadow),
        Side::Verso => (PixelClass::Shadow, PixelClass::Highlight),
    };
    let diameter = config.geometry.dot_diameter;
    let lobe = config.expected_lobe_area();
    let (area_lo, area_hi) = (config.lobe_area_range.0 * lobe, config.lobe_area_range.1 * lobe);
    let max_dy = config.max_vertical_gap * diameter;
    let max_dx = config.max_horizontal_offset * diameter;

    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, up) in regions.iter().enumerate().filter(|(_, r)| r.class == upper_class) {
        for (j, low) in regions.iter().enumerate().filter(|(_, r)| r.class == lower_class) {
            let dy = low.centroid.1 - up.centroid.1;
            let dx = (low.centroid.0 - up.centroid.0).abs();
            if dy <= 0.0 || dy > max_dy || dx > max_dx {
                continue;
            }
            let highlight = if up.class == PixelClass::Highlight { up } else { low };
            let area = highlight.area as f64;
            if area < area_lo || area > area_hi {
                continue;
            }
            candidates.push((dx.hypot(dy), i, j));
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut used = vec![false; regions.len()];
    let mut dots = DotSet::empty(side, DETECTOR_ID, width, height);
    for (distance, i, j) in candidates {
        if used[i] || used[j] {
            continue;
        }
        used[i] = true;
        used[j] = true;
        let (a, b) = (&regions[i].bbox, &regions[j].bbox);
        let (x0, y0) = (a.0.min(b.0), a.1.min(b.1));
        let (x1, y1) = (a.2.max(b.2), a.3.max(b.3));
        dots.dots.push(Dot {
            x: (x0 + x1) as f64 / 2.0,
            y: (y0 + y1) as f64 / 2.0,
            confidence: 1.0 / (1.0 + distance),
        });
    }
    dots.dedup(0.5 * config.geometry.dot_pitch);
    dots
}

/// Full pipeline: edge suppression, normalization, thresholding,
/// segmentation, region extraction, splitting and pairing.
pub fn detect_segmentation(img: &GrayImage, side: Side, config: &SegmentationConfig) -> DotSet {
    let (w, h) = (img.width(), img.height());
    let cleaned = suppress_edge_noise(img, config);
    // Pages with very few dots have equal percentiles; keep them unstretched.
    let normalized = normalize_gray(&cleaned).image;
    let Ok(t) = thresholds_from_histogram(&normalized, config) else {
        return DotSet::empty(side, DETECTOR_ID, w, h);
    };
    let seg = segment(&normalized, t);
    let regions = extract_regions(&seg, config.min_region_area);
    let regions = split_wide_regions(regions, config.max_region_width().max(1));
    pair_regions_to_dots(&regions, side, w, h, config)
}
