//! Optical Braille recognition for scanned double-sided Braille pages.
//!
//! The crate covers the whole recognition chain:
//!
//! 1. [`raster`] – gray images, normalization, rotation and integral images.
//! 2. [`segmentation`] – dot detection by highlight/shadow segmentation.
//! 3. [`cascade`] – Haar features, AdaBoost and a sliding-window cascade.
//! 4. [`deskew`] – skew estimation from projection profiles of dot positions.
//! 5. [`grid`] – cell lattice construction, dot-to-cell assignment, decoding.
//! 6. [`annotation`] – page annotation files, dataset manifests, DSBI import.
//! 7. [`eval`] – precision / recall / F1 against ground truth.
//! 8. [`synth`] – synthetic double-sided pages with exact ground truth.
//!
//! [`pipeline`] ties detection, de-skewing and the grid together into the
//! auto-annotation flow used by the CLI and the annotation service.

pub mod annotation;
pub mod cascade;
pub mod deskew;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod grid;
pub mod pipeline;
pub mod raster;
pub mod segmentation;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{Dot, DotSet, GridGeometry, Point, Side};
pub use raster::GrayImage;
