//! Synthetic double-sided Braille pages with exact ground truth.
//!
//! Each dot is drawn as two vertically adjacent Gaussian lobes: a bright one
//! above the dot center and a dark one below for recto dots, reversed for
//! verso dots. Lobe offset and lobe sigma are both half the dot radius.
//! Skew is applied analytically (dot centers and lobe directions are
//! rotated before drawing), which equals rotating the noiseless page
//! without resampling loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::annotation::{CellRecord, Frame, PageAnnotation};
use crate::error::{Error, Result};
use crate::geometry::{rotate_point, GridGeometry, Point};
use crate::raster::{image_center, GrayImage};

/// Cell patterns of one face laid out on the Braille lattice of that face.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SideLayout {
    /// Position of dot 1 of cell (0, 0).
    pub origin: Point,
    /// `cells[row][col]` is a 6-bit pattern.
    pub cells: Vec<Vec<u8>>,
}

impl SideLayout {
    /// Parses lines of Braille pattern characters (U+2800..=U+283F).
    pub fn from_text(origin: Point, text: &str) -> Result<Self> {
        let cells = text
            .lines()
            .map(|line| {
                line.chars()
                    .map(|c| match c as u32 {
                        v @ 0x2800..=0x283F => Ok((v - 0x2800) as u8),
                        0x20 => Ok(0),
                        _ => Err(Error::Spec(format!("{c:?} is not a 6-dot Braille character"))),
                    })
                    .collect::<Result<Vec<u8>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { origin, cells })
    }

    pub fn to_text(&self) -> String {
        self.cells
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&p| char::from_u32(0x2800 + p as u32).expect("valid Braille pattern"))
                    .collect::<String>()
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn rows(&self) -> usize {
        self.cells.len()
    }

    pub fn cols(&self) -> usize {
        self.cells.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Dot site `k` (0..6) of cell `(row, col)` in the unrotated frame.
    pub fn site(&self, g: &GridGeometry, row: usize, col: usize, k: usize) -> Point {
        Point::new(
            self.origin.x + col as f64 * g.cell_pitch + (k / 3) as f64 * g.dot_pitch,
            self.origin.y + row as f64 * g.line_pitch + (k % 3) as f64 * g.dot_pitch,
        )
    }

    /// Centers of all raised dots, row-major.
    pub fn dots(&self, g: &GridGeometry) -> Vec<Point> {
        let mut out = Vec::new();
        for (r, row) in self.cells.iter().enumerate() {
            for (c, &pattern) in row.iter().enumerate() {
                for k in (0..6).filter(|k| pattern >> k & 1 == 1) {
                    out.push(self.site(g, r, c, k));
                }
            }
        }
        out
    }

    pub fn cell_bbox(&self, g: &GridGeometry, row: usize, col: usize) -> [f64; 4] {
        let tl = self.site(g, row, col, 0);
        let br = self.site(g, row, col, 5);
        [tl.x, tl.y, br.x, br.y]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub geometry: GridGeometry,
    /// Dots embossed toward the viewer.
    pub recto: Option<SideLayout>,
    /// Layout of the opposite face in that face's own frame; it shows through
    /// mirrored horizontally as verso dots.
    pub verso: Option<SideLayout>,
    pub skew_deg: f64,
    pub noise_sigma: f64,
    pub background: f64,
    pub contrast: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn blank(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            geometry: GridGeometry::default(),
            recto: None,
            verso: None,
            skew_deg: 0.0,
            noise_sigma: 0.0,
            background: 150.0,
            contrast: 60.0,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Spec("page must be at least 1x1".into()));
        }
        self.geometry.validate().map_err(|e| Error::Spec(e.to_string()))?;
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Spec("noise sigma must be non-negative".into()));
        }
        if !(self.contrast > 0.0) {
            return Err(Error::Spec("dot contrast must be positive".into()));
        }
        if let Some(bad) = [&self.recto, &self.verso]
            .into_iter()
            .flatten()
            .flat_map(|l| l.cells.iter().flatten())
            .find(|&&p| p > 63)
        {
            return Err(Error::Spec(format!("cell pattern {bad} outside 0..=63")));
        }
        Ok(())
    }

    fn center(&self) -> Point {
        image_center(self.width, self.height)
    }

    /// Recto dot centers on the rendered (skewed) page.
    pub fn recto_dots(&self) -> Vec<Point> {
        let c = self.center();
        self.recto
            .iter()
            .flat_map(|l| l.dots(&self.geometry))
            .map(|p| rotate_point(p, c, self.skew_deg))
            .collect()
    }

    /// Verso dot centers on the rendered (skewed) page.
    pub fn verso_dots(&self) -> Vec<Point> {
        let c = self.center();
        let mirror = (self.width - 1) as f64;
        self.verso
            .iter()
            .flat_map(|l| l.dots(&self.geometry))
            .map(|p| rotate_point(Point::new(mirror - p.x, p.y), c, self.skew_deg))
            .collect()
    }
}

fn draw_lobe(canvas: &mut [f64], width: usize, height: usize, center: Point, sigma: f64, amplitude: f64) {
    let reach = 4.0 * sigma;
    let x0 = (center.x - reach).floor().max(0.0) as usize;
    let y0 = (center.y - reach).floor().max(0.0) as usize;
    let x1 = ((center.x + reach).ceil() as usize).min(width - 1);
    let y1 = ((center.y + reach).ceil() as usize).min(height - 1);
    let inv = 1.0 / (2.0 * sigma * sigma);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let d2 = (x as f64 - center.x).powi(2) + (y as f64 - center.y).powi(2);
            canvas[y * width + x] += amplitude * (-d2 * inv).exp();
        }
    }
}

/// Renders one page and its ground truth. The annotation is in the original
/// (skewed) frame; cell boxes are in the de-skewed frame.
pub fn render_page(spec: &SynthSpec) -> Result<(GrayImage, PageAnnotation)> {
    spec.validate()?;
    let g = &spec.geometry;
    let (w, h) = (spec.width, spec.height);
    let offset = g.dot_radius() / 2.0;
    let sigma = g.dot_radius() * 0.4;
    let margin = offset + 2.0 * sigma;

    let recto = spec.recto_dots();
    let verso = spec.verso_dots();
    if let Some(p) = recto.iter().chain(&verso).find(|p| {
        p.x < margin || p.y < margin || p.x > w as f64 - 1.0 - margin || p.y > h as f64 - 1.0 - margin
    }) {
        return Err(Error::Spec(format!(
            "dot at ({:.1}, {:.1}) does not fit a {w}x{h} page",
            p.x, p.y
        )));
    }

    // Unit vector pointing up the page after skew.
    let (sin, cos) = spec.skew_deg.to_radians().sin_cos();
    let up = Point::new(-sin, -cos);
    let mut canvas = vec![spec.background; w * h];
    for (dots, sign) in [(&recto, 1.0), (&verso, -1.0)] {
        for p in dots {
            let above = Point::new(p.x + up.x * offset, p.y + up.y * offset);
            let below = Point::new(p.x - up.x * offset, p.y - up.y * offset);
            draw_lobe(&mut canvas, w, h, above, sigma, sign * spec.contrast);
            draw_lobe(&mut canvas, w, h, below, sigma, -sign * spec.contrast);
        }
    }
    if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let noise = Normal::new(0.0, spec.noise_sigma).expect("finite sigma");
        for v in &mut canvas {
            *v += noise.sample(&mut rng);
        }
    }
    let pixels = canvas
        .iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    let image = GrayImage::new(w, h, pixels)?;

    let mut ann = PageAnnotation::new("", w, h);
    ann.skew_deg = spec.skew_deg;
    ann.frame = Frame::Original;
    ann.recto = recto;
    ann.verso = verso;
    if let Some(layout) = &spec.recto {
        for (r, row) in layout.cells.iter().enumerate() {
            for (c, &pattern) in row.iter().enumerate() {
                ann.cells.push(CellRecord {
                    row: r,
                    col: c,
                    pattern,
                    bbox: layout.cell_bbox(g, r, c),
                });
            }
        }
    }
    Ok((image, ann))
}

/// Renders both faces of one sheet: each face's recto layout shows through
/// the other as mirrored verso dots.
pub fn render_double_sided(
    front: &SynthSpec,
    back: &SynthSpec,
) -> Result<((GrayImage, PageAnnotation), (GrayImage, PageAnnotation))> {
    if (front.width, front.height) != (back.width, back.height) {
        return Err(Error::Spec(format!(
            "front is {}x{} but back is {}x{}",
            front.width, front.height, back.width, back.height
        )));
    }
    let front_spec = SynthSpec {
        verso: back.recto.clone(),
        ..front.clone()
    };
    let back_spec = SynthSpec {
        verso: front.recto.clone(),
        ..back.clone()
    };
    Ok((render_page(&front_spec)?, render_page(&back_spec)?))
}

/// Close recto/verso site pairs on a face.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    pub min_separation: f64,
    /// Verso dots dropped from the back layout to honor the separation.
    pub removed: usize,
    /// Recto/verso pairs still closer than the separation.
    pub close_pairs: usize,
}

/// Counts recto/verso pairs on the front face closer than `min_separation`.
pub fn count_collisions(front: &SynthSpec, back_recto: &SideLayout, min_separation: f64) -> usize {
    let probe = SynthSpec {
        verso: Some(back_recto.clone()),
        skew_deg: 0.0,
        ..front.clone()
    };
    let recto = probe.recto_dots();
    probe
        .verso_dots()
        .iter()
        .map(|v| recto.iter().filter(|r| r.distance(v) < min_separation).count())
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomSheetOptions {
    pub width: usize,
    pub height: usize,
    pub geometry: GridGeometry,
    pub margin: f64,
    pub rows: usize,
    pub cols: usize,
    pub recto_fill: f64,
    pub back_fill: f64,
    /// Back-face dots whose show-through lands closer than this to a front
    /// recto dot are dropped.
    pub min_separation: f64,
    pub noise_sigma: f64,
    pub skew_deg: f64,
    pub background: f64,
    pub contrast: f64,
}

impl Default for RandomSheetOptions {
    fn default() -> Self {
        let geometry = GridGeometry::default();
        Self {
            width: 740,
            height: 920,
            geometry,
            margin: 40.0,
            rows: 11,
            cols: 14,
            recto_fill: 0.22,
            back_fill: 0.36,
            min_separation: 1.2 * geometry.dot_diameter,
            noise_sigma: 0.0,
            skew_deg: 0.0,
            background: 150.0,
            contrast: 60.0,
        }
    }
}

pub fn random_cells(rng: &mut impl Rng, rows: usize, cols: usize, fill: f64) -> Vec<Vec<u8>> {
    (0..rows)
        .map(|_| {
            (0..cols)
                .map(|_| (0..6).filter(|_| rng.random_bool(fill)).fold(0u8, |p, k| p | 1 << k))
                .collect()
        })
        .collect()
}

/// Random front and back faces of one sheet. The back lattice is offset by
/// half a dot pitch in both directions (after mirroring) so show-through
/// dots interleave with front dots; remaining near-coincident back dots are
/// removed and reported.
pub fn random_sheet(opts: &RandomSheetOptions, seed: u64) -> (SynthSpec, SynthSpec, CollisionReport) {
    let g = opts.geometry;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let front_layout = SideLayout {
        origin: Point::new(opts.margin, opts.margin),
        cells: random_cells(&mut rng, opts.rows, opts.cols, opts.recto_fill),
    };
    // Mirrored back columns start at x = W-1 - ox_b - dot pitch; put that
    // half a dot pitch right of the front lattice.
    let shift = g.dot_pitch / 2.0;
    let raw = opts.width as f64 - 1.0 - g.dot_pitch - opts.margin - shift;
    let ox_back = opts.margin + (raw - opts.margin).rem_euclid(g.cell_pitch);
    let oy_back = opts.margin + shift;
    let fit_cols = ((opts.width as f64 - opts.margin - g.dot_pitch - ox_back) / g.cell_pitch).floor() as usize + 1;
    let fit_rows =
        ((opts.height as f64 - opts.margin - 2.0 * g.dot_pitch - oy_back) / g.line_pitch).floor() as usize + 1;
    let mut back_layout = SideLayout {
        origin: Point::new(ox_back, oy_back),
        cells: random_cells(
            &mut rng,
            opts.rows.min(fit_rows),
            opts.cols.min(fit_cols),
            opts.back_fill,
        ),
    };

    let front = SynthSpec {
        width: opts.width,
        height: opts.height,
        geometry: g,
        recto: Some(front_layout),
        verso: None,
        skew_deg: opts.skew_deg,
        noise_sigma: opts.noise_sigma,
        background: opts.background,
        contrast: opts.contrast,
        seed: seed.wrapping_mul(2).wrapping_add(1),
    };

    let front_dots = front.recto.as_ref().map(|l| l.dots(&g)).unwrap_or_default();
    let mirror = (opts.width - 1) as f64;
    let mut removed = 0;
    for r in 0..back_layout.rows() {
        for c in 0..back_layout.cells[r].len() {
            for k in 0..6 {
                if back_layout.cells[r][c] >> k & 1 == 0 {
                    continue;
                }
                let s = back_layout.site(&g, r, c, k);
                let shown = Point::new(mirror - s.x, s.y);
                if front_dots.iter().any(|d| d.distance(&shown) < opts.min_separation) {
                    back_layout.cells[r][c] &= !(1 << k);
                    removed += 1;
                }
            }
        }
    }

    let back = SynthSpec {
        recto: Some(back_layout),
        seed: seed.wrapping_mul(2).wrapping_add(2),
        ..front.clone()
    };
    let report = CollisionReport {
        min_separation: opts.min_separation,
        removed,
        close_pairs: count_collisions(&front, back.recto.as_ref().expect("set above"), opts.min_separation),
    };
    (front, back, report)
}
