//! Page annotations (recto dots, verso dots, cells, skew) and their
//! JSON representation.
//!
//! Cell boxes are always expressed in the de-skewed frame: `bbox` spans the
//! six dot sites of the cell, `[left, top, right, bottom]`. When the
//! annotation frame is [`Frame::Original`] the sites map into the dot frame
//! through a rotation by `skew_deg` about the page center.

mod dsbi;
mod manifest;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rotate_point, Point};
use crate::raster::image_center;

pub use dsbi::{import_dsbi, parse_dsbi_text, DsbiBook, DsbiPage, DSBI_BOOKS};
pub use manifest::{load_manifest, write_manifest, DatasetManifest, ManifestEntry, Split};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Original,
    Deskewed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub row: usize,
    pub col: usize,
    pub pattern: u8,
    pub bbox: [f64; 4],
}

impl CellRecord {
    /// Dot site `k` (0..6, dots 1-3 down the left column then 4-6 down the
    /// right) in the de-skewed frame.
    pub fn site(&self, k: usize) -> Point {
        let [x0, y0, x1, y1] = self.bbox;
        let x = if k < 3 { x0 } else { x1 };
        let y = y0 + (y1 - y0) * (k % 3) as f64 / 2.0;
        Point::new(x, y)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PageAnnotation {
    pub image: String,
    pub width: usize,
    pub height: usize,
    /// Skew of the page as scanned; rotating by `-skew_deg` straightens it.
    pub skew_deg: f64,
    pub frame: Frame,
    pub recto: Vec<Point>,
    pub verso: Vec<Point>,
    pub cells: Vec<CellRecord>,
    /// Save counter used for optimistic concurrency.
    pub revision: u64,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl PageAnnotation {
    pub fn new(image: impl Into<String>, width: usize, height: usize) -> Self {
        Self {
            image: image.into(),
            width,
            height,
            skew_deg: 0.0,
            frame: Frame::Original,
            recto: Vec::new(),
            verso: Vec::new(),
            cells: Vec::new(),
            revision: 0,
            metadata: BTreeMap::new(),
        }
    }

    fn in_bounds(&self, p: &Point) -> bool {
        p.x.is_finite()
            && p.y.is_finite()
            && p.x >= -0.5
            && p.y >= -0.5
            && p.x <= self.width as f64 - 0.5
            && p.y <= self.height as f64 - 0.5
    }

    /// Maps a de-skewed site into the frame of the dot lists.
    pub fn site_to_dot_frame(&self, p: Point) -> Point {
        match self.frame {
            Frame::Deskewed => p,
            Frame::Original => rotate_point(p, image_center(self.width, self.height), self.skew_deg),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Validation("image dimensions must be positive".into()));
        }
        if !self.skew_deg.is_finite() {
            return Err(Error::Validation("skew angle must be finite".into()));
        }
        for (name, list) in [("recto", &self.recto), ("verso", &self.verso)] {
            if let Some(p) = list.iter().find(|p| !self.in_bounds(p)) {
                return Err(Error::Validation(format!(
                    "{name} dot ({}, {}) outside {}x{} image",
                    p.x, p.y, self.width, self.height
                )));
            }
        }
        for cell in &self.cells {
            if cell.pattern > 63 {
                return Err(Error::Validation(format!(
                    "cell ({}, {}) has pattern {} outside 0..=63",
                    cell.row, cell.col, cell.pattern
                )));
            }
            let [x0, y0, x1, y1] = cell.bbox;
            if !(x0 <= x1 && y0 <= y1) || cell.bbox.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "cell ({}, {}) has malformed bbox {:?}",
                    cell.row, cell.col, cell.bbox
                )));
            }
            let snap = 0.35 * (x1 - x0);
            for k in (0..6).filter(|k| cell.pattern >> k & 1 == 1) {
                let site = self.site_to_dot_frame(cell.site(k));
                // Stored coordinates carry 2-decimal rounding.
                if !self.recto.iter().any(|p| p.distance(&site) <= snap + 0.02) {
                    return Err(Error::Validation(format!(
                        "cell ({}, {}) dot {} has no recto dot near ({:.2}, {:.2})",
                        cell.row,
                        cell.col,
                        k + 1,
                        site.x,
                        site.y
                    )));
                }
            }
        }
        Ok(())
    }

    /// Copy with coordinates rounded to the stored precision.
    pub fn rounded(&self) -> PageAnnotation {
        let pt = |p: &Point| Point::new(round_to(p.x, 2), round_to(p.y, 2));
        PageAnnotation {
            skew_deg: round_to(self.skew_deg, 3),
            recto: self.recto.iter().map(pt).collect(),
            verso: self.verso.iter().map(pt).collect(),
            cells: self
                .cells
                .iter()
                .map(|c| CellRecord {
                    bbox: c.bbox.map(|v| round_to(v, 2)),
                    ..c.clone()
                })
                .collect(),
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        let r = self.rounded();
        let wire = Wire {
            schema_version: SCHEMA_VERSION,
            image: r.image,
            width: r.width,
            height: r.height,
            skew_deg: r.skew_deg,
            frame: r.frame,
            revision: r.revision,
            recto: r.recto.iter().map(|p| [p.x, p.y]).collect(),
            verso: r.verso.iter().map(|p| [p.x, p.y]).collect(),
            cells: r.cells,
            metadata: r.metadata,
        };
        Ok(serde_json::to_string_pretty(&wire).expect("annotation serializes"))
    }

    /// Parses and validates a document. `origin` names the source in errors.
    pub fn from_json(text: &str, origin: &Path) -> Result<PageAnnotation> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| parse_error(origin, &e))?;
        let version = value
            .get("schema_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Parse {
                path: origin.to_path_buf(),
                line: 1,
                column: 1,
                message: "missing schema_version".into(),
            })?;
        if version != SCHEMA_VERSION as u64 {
            return Err(Error::UnsupportedSchema {
                found: version as u32,
                expected: SCHEMA_VERSION,
            });
        }
        let wire: Wire = serde_json::from_str(text).map_err(|e| parse_error(origin, &e))?;
        let to_points = |v: Vec<[f64; 2]>| v.into_iter().map(|[x, y]| Point::new(x, y)).collect();
        let ann = PageAnnotation {
            image: wire.image,
            width: wire.width,
            height: wire.height,
            skew_deg: wire.skew_deg,
            frame: wire.frame,
            recto: to_points(wire.recto),
            verso: to_points(wire.verso),
            cells: wire.cells,
            revision: wire.revision,
            metadata: wire.metadata,
        };
        ann.validate()?;
        Ok(ann)
    }
}

pub(crate) fn round_to(v: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    let r = (v * scale).round() / scale;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn parse_error(origin: &Path, e: &serde_json::Error) -> Error {
    Error::Parse {
        path: origin.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Wire {
    schema_version: u32,
    image: String,
    width: usize,
    height: usize,
    skew_deg: f64,
    frame: Frame,
    #[serde(default)]
    revision: u64,
    recto: Vec<[f64; 2]>,
    verso: Vec<[f64; 2]>,
    cells: Vec<CellRecord>,
    #[serde(default)]
    metadata: BTreeMap<String, serde_json::Value>,
}

/// Validates, then writes the annotation as JSON. Nothing is written when
/// validation fails.
pub fn write_annotation(a: &PageAnnotation, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = a.to_json()?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_annotation(path: impl AsRef<Path>) -> Result<PageAnnotation> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PageAnnotation::from_json(&text, path)
}

/// Reads either a JSON annotation or a DSBI `.txt` label file. DSBI files
/// need the page size, which is taken from `image` when given.
pub fn read_any_annotation(path: impl AsRef<Path>, image: Option<&Path>) -> Result<PageAnnotation> {
    let path = path.as_ref();
    let is_txt = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("txt"));
    if !is_txt {
        return read_annotation(path);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let image = image.ok_or_else(|| Error::Import {
        path: path.to_path_buf(),
        message: "DSBI label files need their image for the page size".into(),
    })?;
    let (w, h) = image::image_dimensions(image).map_err(|source| Error::Image {
        path: image.to_path_buf(),
        source,
    })?;
    let page = parse_dsbi_text(&text, path)?;
    let verso_only = path
        .file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.ends_with("+verso.txt"));
    if verso_only {
        let mut ann = PageAnnotation::new(image.to_string_lossy(), w as usize, h as usize);
        ann.frame = Frame::Deskewed;
        ann.skew_deg = page.angle;
        ann.verso = page.dots();
        return Ok(ann);
    }
    let mut ann = page.into_annotation(image.to_string_lossy(), w as usize, h as usize);
    let verso = dsbi::verso_label_path(path);
    if let Some(verso) = verso.filter(|p| p.is_file()) {
        let text = fs::read_to_string(&verso).map_err(|e| Error::io(&verso, e))?;
        ann.verso = parse_dsbi_text(&text, &verso)?.dots();
    }
    Ok(ann)
}
