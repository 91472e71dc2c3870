//! Detection → de-skew → grid → cell patterns, as one call.

use rayon::prelude::*;

use crate::annotation::{read_any_annotation, CellRecord, DatasetManifest, Frame, ManifestEntry, PageAnnotation, Split};
use crate::cascade::{detect_cascade, Cascade, CascadeConfig};
use crate::deskew::{apply_deskew, deskew_dots, estimate_skew, SkewConfig, SkewEstimate};
use crate::error::{Error, Result};
use crate::eval::{match_dots, EvalReport, MatchResult, PageResult};
use crate::geometry::{Dot, DotSet, GridGeometry, Point, Side};
use crate::grid::{assign_dots, build_grid, GridModel, PageText};
use crate::raster::{load_gray, GrayImage};
use crate::segmentation::{detect_segmentation, SegmentationConfig};

#[derive(Clone, Debug)]
pub enum Detector {
    Segmentation(SegmentationConfig),
    Cascade { cascade: Cascade, config: CascadeConfig },
}

impl Detector {
    pub fn segmentation(geometry: GridGeometry) -> Self {
        Detector::Segmentation(SegmentationConfig::with_geometry(geometry))
    }

    pub fn cascade(cascade: Cascade, geometry: GridGeometry) -> Self {
        Detector::Cascade {
            cascade,
            config: CascadeConfig {
                geometry,
                ..CascadeConfig::default()
            },
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Detector::Segmentation(_) => crate::segmentation::DETECTOR_ID,
            Detector::Cascade { .. } => crate::cascade::DETECTOR_ID,
        }
    }

    pub fn geometry(&self) -> GridGeometry {
        match self {
            Detector::Segmentation(c) => c.geometry,
            Detector::Cascade { config, .. } => config.geometry,
        }
    }

    /// Dots of the requested side. The cascade only knows recto
    /// appearance, so verso dots are found on the vertically flipped page.
    pub fn detect(&self, img: &GrayImage, side: Side) -> DotSet {
        match (self, side) {
            (Detector::Segmentation(c), _) => detect_segmentation(img, side, c),
            (Detector::Cascade { cascade, config }, Side::Recto) => detect_cascade(img, cascade, Side::Recto, config),
            (Detector::Cascade { cascade, config }, Side::Verso) => {
                let flipped = detect_cascade(&img.flip_vertical(), cascade, Side::Recto, config);
                let bottom = img.height() as f64 - 1.0;
                DotSet {
                    side: Side::Verso,
                    dots: flipped.dots.iter().map(|d| Dot { y: bottom - d.y, ..*d }).collect(),
                    ..flipped
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AutoAnnotation {
    pub annotation: PageAnnotation,
    pub grid: Option<GridModel>,
    /// Recto dots (original frame) that did not snap to the grid.
    pub outliers: Vec<Point>,
    pub warnings: Vec<String>,
}

impl AutoAnnotation {
    pub fn text(&self) -> Option<PageText> {
        let grid = self.grid.as_ref()?;
        let cells: Vec<crate::grid::BrailleCell> = self
            .annotation
            .cells
            .iter()
            .map(|c| crate::grid::BrailleCell {
                row: c.row,
                col: c.col,
                pattern: c.pattern,
                bbox: c.bbox,
            })
            .collect();
        Some(PageText::from_cells(&cells, grid.rows(), grid.cols()))
    }
}

#[derive(Clone, Debug)]
pub struct PipelineOptions {
    pub skew: SkewConfig,
    pub detect_verso: bool,
    /// Snap radius in dot pitches.
    pub snap_radius: f64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            skew: SkewConfig::default(),
            detect_verso: true,
            snap_radius: 0.35,
        }
    }
}

/// Runs the full chain on one page. Skew or grid failures degrade to a
/// warning: the annotation still carries the detected dots.
pub fn auto_annotate(img: &GrayImage, image_name: &str, detector: &Detector, options: &PipelineOptions) -> AutoAnnotation {
    let geometry = detector.geometry();
    let recto = detector.detect(img, Side::Recto);
    let mut warnings = Vec::new();
    let mut annotation = PageAnnotation::new(image_name, img.width(), img.height());
    annotation.frame = Frame::Original;
    annotation.recto = recto.points();
    if options.detect_verso {
        annotation.verso = detector.detect(img, Side::Verso).points();
    }
    annotation
        .metadata
        .insert("detector".into(), serde_json::Value::from(detector.id()));

    let skew = match estimate_skew(&recto, &options.skew) {
        Ok(s) => s,
        Err(e) => {
            warnings.push(format!("skew not estimated: {e}"));
            SkewEstimate::known(0.0)
        }
    };
    annotation.skew_deg = skew.angle_deg;
    let aligned = deskew_dots(&recto, &skew);

    let mut outliers = Vec::new();
    let grid = match build_grid(&aligned, &geometry) {
        Ok(grid) => {
            let assignment = assign_dots(&aligned, &grid, options.snap_radius * geometry.dot_pitch);
            annotation.cells = assignment
                .cells
                .iter()
                .map(|c| CellRecord {
                    row: c.row,
                    col: c.col,
                    pattern: c.pattern,
                    bbox: c.bbox,
                })
                .collect();
            outliers = assignment.outliers.iter().map(|&i| recto.dots[i].point()).collect();
            if !assignment.collisions.is_empty() {
                warnings.push(format!("{} dots collided on a grid site", assignment.collisions.len()));
            }
            Some(grid)
        }
        Err(e) => {
            warnings.push(format!("no cell grid: {e}"));
            None
        }
    };
    AutoAnnotation {
        annotation,
        grid,
        outliers,
        warnings,
    }
}

/// Recognizes the page text; fails when no grid could be built.
pub fn decode_page(img: &GrayImage, detector: &Detector, options: &PipelineOptions) -> Result<(PageText, AutoAnnotation)> {
    let auto = auto_annotate(img, "", detector, options);
    match auto.text() {
        Some(text) => Ok((text, auto)),
        None => Err(Error::GridInconsistency(auto.warnings.join("; "))),
    }
}

/// Detects recto dots on one labelled page and matches them against its
/// ground truth. Pages annotated in the de-skewed frame are straightened
/// before detection.
pub fn evaluate_page(detector: &Detector, entry: &ManifestEntry, tolerance: f64) -> Result<MatchResult> {
    let ann = read_any_annotation(&entry.annotation, Some(&entry.image))?;
    let mut img = load_gray(&entry.image)?;
    if ann.frame == Frame::Deskewed && ann.skew_deg != 0.0 {
        img = apply_deskew(&img, &SkewEstimate::known(ann.skew_deg));
    }
    let pred = detector.detect(&img, Side::Recto).points();
    Ok(match_dots(&pred, &ann.recto, tolerance))
}

/// Runs the detector over every page of `split` and pools the counts.
/// Page failures are recorded in the report, not raised.
pub fn evaluate_method(detector: &Detector, manifest: &DatasetManifest, split: Split, tolerance: f64) -> EvalReport {
    let entries: Vec<&ManifestEntry> = manifest.split(split).collect();
    let pages = entries
        .par_iter()
        .map(|entry| {
            let (result, error) = match evaluate_page(detector, entry, tolerance) {
                Ok(m) => (Some(m), None),
                Err(e) => (None, Some(e.to_string())),
            };
            PageResult {
                page: entry.image.display().to_string(),
                book: Some(entry.book.clone()),
                result,
                error,
            }
        })
        .collect();
    EvalReport::from_pages(detector.id(), tolerance, pages)
}
