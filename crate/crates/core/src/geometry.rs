//! Shared geometric vocabulary: points, page sides, dot sets and the
//! physical Braille layout expressed in pixels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Rotates `p` counter-clockwise as displayed (y axis pointing down) by
/// `angle_deg` about `center`.
pub fn rotate_point(p: Point, center: Point, angle_deg: f64) -> Point {
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let dx = p.x - center.x;
    let dy = p.y - center.y;
    Point {
        x: center.x + cos * dx + sin * dy,
        y: center.y - sin * dx + cos * dy,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Recto,
    Verso,
}

impl Side {
    pub fn flipped(self) -> Side {
        match self {
            Side::Recto => Side::Verso,
            Side::Verso => Side::Recto,
        }
    }
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Side::Recto => "recto",
            Side::Verso => "verso",
        })
    }
}

impl std::str::FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recto" => Ok(Side::Recto),
            "verso" => Ok(Side::Verso),
            other => Err(Error::InvalidInput(format!("unknown side {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dot {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

impl Dot {
    pub fn point(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

/// Dots of one side of one page, in that page's pixel frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DotSet {
    pub side: Side,
    /// Identifier of the detector (or annotation) that produced the dots.
    pub source: String,
    pub width: usize,
    pub height: usize,
    pub dots: Vec<Dot>,
}

impl DotSet {
    pub fn empty(side: Side, source: impl Into<String>, width: usize, height: usize) -> Self {
        Self {
            side,
            source: source.into(),
            width,
            height,
            dots: Vec::new(),
        }
    }

    pub fn from_points(
        side: Side,
        source: impl Into<String>,
        width: usize,
        height: usize,
        points: &[Point],
    ) -> Self {
        Self {
            side,
            source: source.into(),
            width,
            height,
            dots: points
                .iter()
                .map(|p| Dot {
                    x: p.x,
                    y: p.y,
                    confidence: 1.0,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.dots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dots.is_empty()
    }

    pub fn points(&self) -> Vec<Point> {
        self.dots.iter().map(Dot::point).collect()
    }

    /// Merges dots closer than `min_distance`, keeping the most confident of
    /// each cluster (ties go to the earlier dot).
    pub fn dedup(&mut self, min_distance: f64) {
        let mut order: Vec<usize> = (0..self.dots.len()).collect();
        order.sort_by(|&a, &b| {
            self.dots[b]
                .confidence
                .total_cmp(&self.dots[a].confidence)
                .then(a.cmp(&b))
        });
        let mut kept: Vec<Dot> = Vec::with_capacity(self.dots.len());
        for i in order {
            let d = self.dots[i];
            if kept
                .iter()
                .all(|k| k.point().distance(&d.point()) >= min_distance)
            {
                kept.push(d);
            }
        }
        kept.sort_by(|a, b| a.y.total_cmp(&b.y).then(a.x.total_cmp(&b.x)));
        self.dots = kept;
    }

    /// Rotates every dot about the page center (see [`rotate_point`]).
    pub fn rotated(&self, angle_deg: f64) -> DotSet {
        let center = crate::raster::image_center(self.width, self.height);
        DotSet {
            dots: self
                .dots
                .iter()
                .map(|d| {
                    let p = rotate_point(d.point(), center, angle_deg);
                    Dot {
                        x: p.x,
                        y: p.y,
                        confidence: d.confidence,
                    }
                })
                .collect(),
            ..self.clone()
        }
    }
}

/// Braille layout at a given scan resolution, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub dpi: f64,
    /// Center-to-center distance of neighbouring dots inside a cell.
    pub dot_pitch: f64,
    /// Horizontal distance between corresponding dots of adjacent cells.
    pub cell_pitch: f64,
    /// Vertical distance between corresponding dots of adjacent cell rows.
    pub line_pitch: f64,
    pub dot_diameter: f64,
}

impl GridGeometry {
    const DOT_PITCH_MM: f64 = 2.5;
    const CELL_PITCH_MM: f64 = 6.1;
    const LINE_PITCH_MM: f64 = 10.0;
    const DOT_DIAMETER_MM: f64 = 1.5;

    /// Standard Braille dimensions at `dpi`.
    pub fn at_dpi(dpi: f64) -> Self {
        let px = |mm: f64| mm / 25.4 * dpi;
        Self {
            dpi,
            dot_pitch: px(Self::DOT_PITCH_MM),
            cell_pitch: px(Self::CELL_PITCH_MM),
            line_pitch: px(Self::LINE_PITCH_MM),
            dot_diameter: px(Self::DOT_DIAMETER_MM),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all_positive = [
            self.dpi,
            self.dot_pitch,
            self.cell_pitch,
            self.line_pitch,
            self.dot_diameter,
        ]
        .iter()
        .all(|v| v.is_finite() && *v > 0.0);
        if !all_positive {
            return Err(Error::InvalidInput(format!(
                "grid geometry values must be positive: {self:?}"
            )));
        }
        if !(self.dot_pitch < self.cell_pitch && self.cell_pitch < self.line_pitch) {
            return Err(Error::InvalidInput(format!(
                "grid geometry must satisfy dot pitch < cell pitch < line pitch: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn dot_radius(&self) -> f64 {
        self.dot_diameter / 2.0
    }
}

impl Default for GridGeometry {
    fn default() -> Self {
        Self::at_dpi(200.0)
    }
}
