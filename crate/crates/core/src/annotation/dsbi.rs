//! Adapter for the published DSBI label files.
//!
//! A label file holds the page skew angle on the first line, the x positions
//! of the vertical dot lines (two per cell column) on the second, the y
//! positions of the horizontal dot lines (three per cell row) on the third,
//! and then one cell per line: `row col d1 d2 d3 d4 d5 d6` with 1-based
//! row/column indices and `0`/`1` dot flags. Recto labels are named
//! `<page>+recto.txt`, verso labels `<page>+verso.txt`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::Point;

use super::manifest::{DatasetManifest, ManifestEntry, Split};
use super::{CellRecord, Frame, PageAnnotation};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DsbiBook {
    pub name: &'static str,
    pub pages: usize,
    pub verso_pages: usize,
    pub train: usize,
    pub test: usize,
}

/// Books of the dataset with their page counts and train/test split.
pub const DSBI_BOOKS: [DsbiBook; 7] = [
    DsbiBook { name: "Massage", pages: 20, verso_pages: 1, train: 10, test: 10 },
    DsbiBook { name: "Fundamentals of Massage", pages: 20, verso_pages: 1, train: 0, test: 20 },
    DsbiBook { name: "The Second Volume of Ninth Grade Chinese Book 1", pages: 20, verso_pages: 1, train: 0, test: 20 },
    DsbiBook { name: "The Second Volume of Ninth Grade Chinese Book 2", pages: 10, verso_pages: 1, train: 0, test: 10 },
    DsbiBook { name: "Math", pages: 32, verso_pages: 0, train: 10, test: 22 },
    DsbiBook { name: "Shaver Yang Fengting", pages: 6, verso_pages: 0, train: 3, test: 3 },
    DsbiBook { name: "Ordinary Printed Document", pages: 6, verso_pages: 0, train: 3, test: 3 },
];

#[derive(Clone, Debug, PartialEq)]
pub struct DsbiPage {
    pub angle: f64,
    pub v_lines: Vec<f64>,
    pub h_lines: Vec<f64>,
    /// Zero-based `(row, col, pattern)`.
    pub cells: Vec<(usize, usize, u8)>,
}

impl DsbiPage {
    fn bbox(&self, row: usize, col: usize) -> Option<[f64; 4]> {
        Some([
            *self.v_lines.get(2 * col)?,
            *self.h_lines.get(3 * row)?,
            *self.v_lines.get(2 * col + 1)?,
            *self.h_lines.get(3 * row + 2)?,
        ])
    }

    pub fn dots(&self) -> Vec<Point> {
        let mut dots = Vec::new();
        for &(row, col, pattern) in &self.cells {
            for k in 0..6 {
                if pattern >> k & 1 == 0 {
                    continue;
                }
                let x = self.v_lines[2 * col + k / 3];
                let y = self.h_lines[3 * row + k % 3];
                dots.push(Point::new(x, y));
            }
        }
        dots
    }

    pub fn into_annotation(self, image: impl Into<String>, width: usize, height: usize) -> PageAnnotation {
        let mut ann = PageAnnotation::new(image, width, height);
        ann.skew_deg = self.angle;
        ann.frame = Frame::Deskewed;
        ann.recto = self.dots();
        ann.cells = self
            .cells
            .iter()
            .map(|&(row, col, pattern)| CellRecord {
                row,
                col,
                pattern,
                bbox: self.bbox(row, col).expect("checked at parse time"),
            })
            .collect();
        ann
    }
}

fn parse_floats(line: &str) -> std::result::Result<Vec<f64>, String> {
    line.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| format!("bad number {t:?}: {e}")))
        .collect()
}

pub fn parse_dsbi_text(text: &str, origin: &Path) -> Result<DsbiPage> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        column: 1,
        message,
    };
    let lines: Vec<&str> = text.lines().collect();
    let angle = match lines.first().map(|l| l.trim()) {
        None | Some("") => 0.0,
        Some(l) => l.parse::<f64>().map_err(|e| err(1, format!("bad angle {l:?}: {e}")))?,
    };
    if lines.len() < 3 {
        // Pages without any cells carry only the angle.
        return Ok(DsbiPage {
            angle,
            v_lines: Vec::new(),
            h_lines: Vec::new(),
            cells: Vec::new(),
        });
    }
    let v_lines = parse_floats(lines[1]).map_err(|m| err(2, m))?;
    let h_lines = parse_floats(lines[2]).map_err(|m| err(3, m))?;
    if v_lines.len() % 2 != 0 {
        return Err(err(2, format!("{} vertical lines, expected an even count", v_lines.len())));
    }
    if h_lines.len() % 3 != 0 {
        return Err(err(3, format!("{} horizontal lines, expected a multiple of 3", h_lines.len())));
    }

    let mut raw = Vec::new();
    for (i, line) in lines.iter().enumerate().skip(3) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 8 {
            return Err(err(i + 1, format!("cell line has {} fields, expected 8", fields.len())));
        }
        let idx = |s: &str| s.parse::<usize>().map_err(|e| err(i + 1, format!("bad index {s:?}: {e}")));
        let (row, col) = (idx(fields[0])?, idx(fields[1])?);
        let mut pattern = 0u8;
        for (k, flag) in fields[2..].iter().enumerate() {
            match *flag {
                "1" => pattern |= 1 << k,
                "0" => {}
                other => return Err(err(i + 1, format!("bad dot flag {other:?}"))),
            }
        }
        raw.push((row, col, pattern));
    }

    // Indices are 1-based in the published files; accept 0-based files too.
    let zero_based = raw.iter().any(|&(r, c, _)| r == 0 || c == 0);
    let shift = usize::from(!zero_based);
    let (n_rows, n_cols) = (h_lines.len() / 3, v_lines.len() / 2);
    let mut cells = Vec::with_capacity(raw.len());
    for (row, col, pattern) in raw {
        let (row, col) = (row - shift, col - shift);
        if row >= n_rows || col >= n_cols {
            return Err(err(
                0,
                format!("cell ({row}, {col}) outside the {n_rows}x{n_cols} line grid"),
            ));
        }
        cells.push((row, col, pattern));
    }
    Ok(DsbiPage {
        angle,
        v_lines,
        h_lines,
        cells,
    })
}

pub(crate) fn verso_label_path(label: &Path) -> Option<PathBuf> {
    let name = label.file_name()?.to_str()?;
    let stem = name.strip_suffix("+recto.txt")?;
    Some(label.with_file_name(format!("{stem}+verso.txt")))
}

fn normalize_name(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

fn book_for_dir(dir: &str) -> Option<&'static DsbiBook> {
    let key = normalize_name(dir);
    DSBI_BOOKS.iter().find(|b| normalize_name(b.name) == key)
}

const IMAGE_EXTENSIONS: [&str; 4] = ["jpg", "JPG", "jpeg", "png"];

fn find_image(dir: &Path, stem: &str) -> Option<PathBuf> {
    for candidate in [stem.to_string(), format!("{stem}+recto")] {
        for ext in IMAGE_EXTENSIONS {
            let p = dir.join(format!("{candidate}.{ext}"));
            if p.is_file() {
                return Some(p);
            }
        }
    }
    None
}

fn collect_labels(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_labels(&p, out)?;
        } else if p
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.ends_with("+recto.txt") || n.ends_with("+verso.txt"))
        {
            out.push(p);
        }
    }
    Ok(())
}

/// Page stems listed in a split file (`train.txt` / `test.txt`).
fn read_split_list(root: &Path, name: &str) -> Option<Vec<String>> {
    let text = fs::read_to_string(root.join(name)).ok()?;
    Some(
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .filter_map(|l| {
                let file = Path::new(l).file_stem()?.to_str()?;
                Some(file.trim_end_matches("+recto").trim_end_matches("+verso").to_string())
            })
            .collect(),
    )
}

/// Builds a manifest over a DSBI checkout. Entries point at the original
/// label files; read them with [`super::read_any_annotation`].
pub fn import_dsbi(root: impl AsRef<Path>) -> Result<DatasetManifest> {
    let root = root.as_ref();
    let data = if root.join("data").is_dir() { root.join("data") } else { root.to_path_buf() };
    let mut labels = Vec::new();
    collect_labels(&data, &mut labels)?;
    if labels.is_empty() {
        return Err(Error::Import {
            path: root.to_path_buf(),
            message: "no DSBI label files (*+recto.txt / *+verso.txt) found".into(),
        });
    }

    // One page per (directory, stem); the recto label wins as annotation path.
    let mut pages: BTreeMap<(PathBuf, String), PathBuf> = BTreeMap::new();
    for label in labels {
        let name = label.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let (stem, is_recto) = match name.strip_suffix("+recto.txt") {
            Some(s) => (s.to_string(), true),
            None => (name.trim_end_matches("+verso.txt").to_string(), false),
        };
        let dir = label.parent().unwrap_or(&data).to_path_buf();
        let slot = pages.entry((dir, stem)).or_insert_with(|| label.clone());
        if is_recto {
            *slot = label;
        }
    }

    let train_list = read_split_list(&data, "train.txt").or_else(|| read_split_list(root, "train.txt"));
    let test_list = read_split_list(&data, "test.txt").or_else(|| read_split_list(root, "test.txt"));
    let mut manifest = DatasetManifest::default();
    if train_list.is_none() && test_list.is_none() {
        manifest
            .warnings
            .push("no train.txt/test.txt found; split assigned from per-book training counts".into());
    }
    let mut train_taken: BTreeMap<String, usize> = BTreeMap::new();

    for ((dir, stem), label) in pages {
        // Validate eagerly so a broken layout names its first bad file.
        let text = fs::read_to_string(&label).map_err(|e| Error::io(&label, e))?;
        parse_dsbi_text(&text, &label).map_err(|e| Error::Import {
            path: label.clone(),
            message: e.to_string(),
        })?;
        let dir_name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let book = match book_for_dir(dir_name) {
            Some(b) => b.name.to_string(),
            None => {
                manifest
                    .warnings
                    .push(format!("directory {dir_name:?} does not match a known book"));
                dir_name.to_string()
            }
        };
        let image = match find_image(&dir, &stem) {
            Some(p) => p,
            None => {
                manifest
                    .warnings
                    .push(format!("no image found for {}", label.display()));
                dir.join(format!("{stem}.jpg"))
            }
        };
        let split = match (&train_list, &test_list) {
            (Some(train), _) if train.contains(&stem) => Split::Train,
            (_, Some(test)) if test.contains(&stem) => Split::Test,
            (Some(_), Some(_)) => {
                manifest
                    .warnings
                    .push(format!("{stem} listed in neither split; using test"));
                Split::Test
            }
            (Some(_), None) => Split::Test,
            (None, Some(_)) => Split::Train,
            (None, None) => {
                let quota = book_for_dir(dir_name).map_or(0, |b| b.train);
                let taken = train_taken.entry(book.clone()).or_default();
                if *taken < quota {
                    *taken += 1;
                    Split::Train
                } else {
                    Split::Test
                }
            }
        };
        manifest.entries.push(ManifestEntry {
            image,
            annotation: label,
            book,
            split,
        });
    }
    Ok(manifest)
}
