//! Braille cell lattice from de-skewed dot positions.
//!
//! Dot x coordinates cluster into vertical dot lines, two per cell column;
//! y coordinates into horizontal dot lines, three per cell row. Lines are
//! placed on a lattice `origin + cell·period + role·dot_pitch`, which lets
//! cells with an empty dot column (or row) still get both lines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Dot, DotSet, GridGeometry, Point};

/// 1-D agglomerative clustering: a new cluster starts whenever the gap to
/// the previous sorted value exceeds `merge_gap`. Returns cluster means.
pub fn cluster_lines(coords: &[f64], merge_gap: f64) -> Vec<f64> {
    clusters(coords, merge_gap).iter().map(|c| c.mean).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Cluster {
    mean: f64,
    min: f64,
    max: f64,
    count: usize,
}

fn clusters(coords: &[f64], merge_gap: f64) -> Vec<Cluster> {
    let mut sorted: Vec<f64> = coords.iter().copied().filter(|v| v.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    let mut out: Vec<Cluster> = Vec::new();
    let mut sum = 0.0;
    for (i, &v) in sorted.iter().enumerate() {
        if i > 0 && v - sorted[i - 1] <= merge_gap {
            let c = out.last_mut().expect("cluster open");
            c.max = v;
            c.count += 1;
            sum += v;
            c.mean = sum / c.count as f64;
        } else {
            out.push(Cluster {
                mean: v,
                min: v,
                max: v,
                count: 1,
            });
            sum = v;
        }
    }
    out
}

/// Lattice of dot lines. `x_lines` holds two lines per cell column,
/// `y_lines` three per cell row, both sorted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridModel {
    pub x_lines: Vec<f64>,
    pub y_lines: Vec<f64>,
}

impl GridModel {
    pub fn cols(&self) -> usize {
        self.x_lines.len() / 2
    }

    pub fn rows(&self) -> usize {
        self.y_lines.len() / 3
    }

    /// `[left, top, right, bottom]` over the cell's dot sites.
    pub fn cell_bbox(&self, row: usize, col: usize) -> [f64; 4] {
        [
            self.x_lines[2 * col],
            self.y_lines[3 * row],
            self.x_lines[2 * col + 1],
            self.y_lines[3 * row + 2],
        ]
    }

    /// Dot site `k` (0..6) of cell `(row, col)`.
    pub fn site(&self, row: usize, col: usize, k: usize) -> Point {
        Point::new(self.x_lines[2 * col + k / 3], self.y_lines[3 * row + k % 3])
    }
}

/// Line positions on one axis fitted to `origin + cell·period + role·pitch`.
#[derive(Clone, Debug)]
struct AxisFit {
    lines: Vec<f64>,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(v[v.len() / 2])
}

/// Solves the 3×3 system `a·x = b`; `None` when singular.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-9 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut s = b[row];
        for k in row + 1..3 {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    Some(x)
}

fn fit_axis(observed: &[Cluster], roles: usize, pitch_nominal: f64, period_nominal: f64, axis: &str) -> Result<AxisFit> {
    let pos: Vec<f64> = observed.iter().map(|c| c.mean).collect();
    let weight: Vec<f64> = observed.iter().map(|c| c.count as f64).collect();
    let total: f64 = weight.iter().sum();

    let pitch = median(
        pos.windows(2)
            .map(|w| w[1] - w[0])
            .filter(|g| (0.75 * pitch_nominal..=1.25 * pitch_nominal).contains(g))
            .collect(),
    )
    .unwrap_or(pitch_nominal);
    let mut diffs = Vec::new();
    for i in 0..pos.len() {
        for j in i + 1..pos.len() {
            let d = pos[j] - pos[i];
            if (0.85 * period_nominal..=1.15 * period_nominal).contains(&d) {
                diffs.push(d);
            }
        }
    }
    let period = median(diffs).unwrap_or(period_nominal);
    let tol = 0.3 * pitch;

    // (cell, role, residual) of `x` against the lattice anchored at `origin`.
    let locate = |x: f64, origin: f64, pitch: f64, period: f64| -> (i64, usize, f64) {
        (0..roles)
            .map(|k| {
                let t = x - origin - k as f64 * pitch;
                let c = (t / period).round();
                (c as i64, k, (t - c * period).abs())
            })
            .min_by(|a, b| a.2.total_cmp(&b.2))
            .expect("at least one role")
    };

    let mut best: Option<(f64, f64, f64)> = None; // (explained weight, -residual, origin)
    for &p in &pos {
        for k in 0..roles {
            let origin = p - k as f64 * pitch;
            let (mut explained, mut residual) = (0.0, 0.0);
            for (x, w) in pos.iter().zip(&weight) {
                let (_, _, r) = locate(*x, origin, pitch, period);
                if r <= tol {
                    explained += w;
                    residual += r * w;
                }
            }
            let better = match best {
                None => true,
                Some((e, r, _)) => explained > e || (explained == e && -residual > r + 1e-9),
            };
            if better {
                best = Some((explained, -residual, origin));
            }
        }
    }
    let (explained, _, mut origin) = best.expect("non-empty axis");
    if explained < 0.9 * total {
        return Err(Error::GridInconsistency(format!(
            "only {:.0}% of dots on the {axis} axis fit a regular cell lattice",
            100.0 * explained / total
        )));
    }

    // Assign roles; a lattice slot keeps its best-fitting line.
    let mut slots: Vec<(i64, usize, f64, f64)> = Vec::new(); // (cell, role, position, residual)
    for &x in &pos {
        let (c, k, r) = locate(x, origin, pitch, period);
        if r > tol {
            continue;
        }
        match slots.iter_mut().find(|s| s.0 == c && s.1 == k) {
            Some(s) if s.3 > r => *s = (c, k, x, r),
            Some(_) => {}
            None => slots.push((c, k, x, r)),
        }
    }

    // Least-squares refinement of origin, period and pitch.
    let mut period = period;
    let mut pitch = pitch;
    let distinct_cells = {
        let mut cs: Vec<i64> = slots.iter().map(|s| s.0).collect();
        cs.sort_unstable();
        cs.dedup();
        cs.len()
    };
    let distinct_roles = {
        let mut ks: Vec<usize> = slots.iter().map(|s| s.1).collect();
        ks.sort_unstable();
        ks.dedup();
        ks.len()
    };
    let mut ata = [[0.0; 3]; 3];
    let mut atb = [0.0; 3];
    for &(c, k, x, _) in &slots {
        let row = [1.0, c as f64, k as f64];
        for i in 0..3 {
            for j in 0..3 {
                ata[i][j] += row[i] * row[j];
            }
            atb[i] += row[i] * x;
        }
    }
    if distinct_cells >= 2 && distinct_roles >= 2 {
        if let Some([o, per, pit]) = solve3(ata, atb) {
            origin = o;
            period = per;
            pitch = pit;
        }
    } else {
        // Too few distinct slots to fit the spacings: refit the origin only.
        let n = slots.len() as f64;
        origin = slots
            .iter()
            .map(|&(c, k, x, _)| x - c as f64 * period - k as f64 * pitch)
            .sum::<f64>()
            / n;
    }

    let cmin = slots.iter().map(|s| s.0).min().expect("slots non-empty");
    let cmax = slots.iter().map(|s| s.0).max().expect("slots non-empty");
    let mut lines = Vec::with_capacity(((cmax - cmin + 1) as usize) * roles);
    for c in cmin..=cmax {
        let in_cell: Vec<&(i64, usize, f64, f64)> = slots.iter().filter(|s| s.0 == c).collect();
        for k in 0..roles {
            let x = match in_cell.iter().find(|s| s.1 == k) {
                Some(s) => s.2,
                // Synthesize from the nearest observed line of the same cell
                // at dot-pitch spacing, else from the lattice.
                None => match in_cell
                    .iter()
                    .min_by_key(|s| (s.1 as i64 - k as i64).unsigned_abs())
                {
                    Some(s) => s.2 + (k as f64 - s.1 as f64) * pitch,
                    None => origin + c as f64 * period + k as f64 * pitch,
                },
            };
            lines.push(x);
        }
    }

    for cell in lines.chunks(roles) {
        for w in cell.windows(2) {
            let gap = w[1] - w[0];
            if !(0.75 * pitch_nominal..=1.25 * pitch_nominal).contains(&gap) {
                return Err(Error::GridInconsistency(format!(
                    "{axis} dot lines {:.1} and {:.1} are not one dot pitch apart",
                    w[0], w[1]
                )));
            }
        }
    }
    if lines.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::GridInconsistency(format!("{axis} lines overlap between cells")));
    }
    Ok(AxisFit { lines })
}

/// Builds the cell lattice from de-skewed dots.
pub fn build_grid(dots: &DotSet, geometry: &GridGeometry) -> Result<GridModel> {
    geometry.validate()?;
    if dots.len() < 6 {
        return Err(Error::InsufficientEvidence(format!(
            "{} dots are too few to build a cell grid",
            dots.len()
        )));
    }
    let merge_gap = 0.4 * geometry.dot_pitch;
    let max_spread = 0.5 * geometry.dot_pitch;
    let xs: Vec<f64> = dots.dots.iter().map(|d| d.x).collect();
    let ys: Vec<f64> = dots.dots.iter().map(|d| d.y).collect();
    let (xc, yc) = (clusters(&xs, merge_gap), clusters(&ys, merge_gap));
    for (axis, cs) in [("x", &xc), ("y", &yc)] {
        if let Some(c) = cs.iter().find(|c| c.max - c.min > max_spread) {
            return Err(Error::GridInconsistency(format!(
                "{axis} dot line near {:.1} spreads over {:.1} px",
                c.mean,
                c.max - c.min
            )));
        }
    }
    let x = fit_axis(&xc, 2, geometry.dot_pitch, geometry.cell_pitch, "x")?;
    let y = fit_axis(&yc, 3, geometry.dot_pitch, geometry.line_pitch, "y")?;
    Ok(GridModel {
        x_lines: x.lines,
        y_lines: y.lines,
    })
}

/// One Braille cell. Bit `i - 1` of `pattern` is dot `i`; dots 1-3 run down
/// the left column and 4-6 down the right.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BrailleCell {
    pub row: usize,
    pub col: usize,
    pub pattern: u8,
    pub bbox: [f64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellAssignment {
    /// Every cell of the grid, row-major, empty ones included.
    pub cells: Vec<BrailleCell>,
    /// Indices of dots farther than the snap radius from every site.
    pub outliers: Vec<usize>,
    /// `(kept, dropped)` dot indices that snapped to the same site.
    pub collisions: Vec<(usize, usize)>,
}

fn nearest(lines: &[f64], v: f64) -> (usize, f64) {
    let i = lines.partition_point(|&l| l < v);
    [i.checked_sub(1), (i < lines.len()).then_some(i)]
        .into_iter()
        .flatten()
        .map(|j| (j, (lines[j] - v).abs()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("grid has lines")
}

/// Snaps dots to the nearest line intersection within `snap_radius` and
/// sets the matching pattern bits.
pub fn assign_dots(dots: &DotSet, grid: &GridModel, snap_radius: f64) -> CellAssignment {
    let (rows, cols) = (grid.rows(), grid.cols());
    let mut cells: Vec<BrailleCell> = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .map(|(row, col)| BrailleCell {
            row,
            col,
            pattern: 0,
            bbox: grid.cell_bbox(row, col),
        })
        .collect();
    let mut outliers = Vec::new();
    let mut collisions = Vec::new();
    let mut occupant: Vec<Option<usize>> = vec![None; grid.x_lines.len() * grid.y_lines.len()];

    if rows == 0 || cols == 0 {
        return CellAssignment {
            cells,
            outliers: (0..dots.len()).collect(),
            collisions,
        };
    }
    for (i, d) in dots.dots.iter().enumerate() {
        let (ix, dx) = nearest(&grid.x_lines, d.x);
        let (iy, dy) = nearest(&grid.y_lines, d.y);
        if dx.hypot(dy) > snap_radius {
            outliers.push(i);
            continue;
        }
        let slot = iy * grid.x_lines.len() + ix;
        match occupant[slot] {
            None => occupant[slot] = Some(i),
            Some(j) => {
                let other: &Dot = &dots.dots[j];
                if d.confidence > other.confidence {
                    occupant[slot] = Some(i);
                    collisions.push((i, j));
                } else {
                    collisions.push((j, i));
                }
                log::warn!("dots {j} and {i} snap to the same site; keeping the more confident");
            }
        }
    }
    for (slot, occ) in occupant.iter().enumerate() {
        if occ.is_none() {
            continue;
        }
        let (iy, ix) = (slot / grid.x_lines.len(), slot % grid.x_lines.len());
        let (row, col) = (iy / 3, ix / 2);
        let bit = (ix % 2) * 3 + iy % 3;
        cells[row * cols + col].pattern |= 1 << bit;
    }
    CellAssignment {
        cells,
        outliers,
        collisions,
    }
}

/// The 6-dot Braille pattern character for the cell.
pub fn decode_cell(cell: &BrailleCell) -> char {
    decode_pattern(cell.pattern)
}

pub fn decode_pattern(pattern: u8) -> char {
    assert!(pattern < 64, "pattern {pattern} is not a 6-dot pattern");
    char::from_u32(0x2800 + pattern as u32).expect("Braille block")
}

/// Decoded characters, one row of text per cell row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageText {
    pub rows: Vec<String>,
}

impl PageText {
    pub fn from_cells(cells: &[BrailleCell], rows: usize, cols: usize) -> Self {
        let mut grid = vec![vec![decode_pattern(0); cols]; rows];
        for c in cells {
            grid[c.row][c.col] = decode_cell(c);
        }
        Self {
            rows: grid.into_iter().map(|r| r.into_iter().collect()).collect(),
        }
    }
}

impl std::fmt::Display for PageText {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for row in &self.rows {
            writeln!(f, "{row}")?;
        }
        Ok(())
    }
}

/// Maps recto dots of the back-page scan onto the front page as verso dots
/// (horizontal mirror). Same-width scans are assumed to be registered.
pub fn verso_from_recto(dots: &DotSet, page_width: usize) -> DotSet {
    let mirror = page_width as f64 - 1.0;
    DotSet {
        side: dots.side.flipped(),
        width: page_width,
        dots: dots
            .dots
            .iter()
            .map(|d| Dot {
                x: mirror - d.x,
                ..*d
            })
            .collect(),
        ..dots.clone()
    }
}

/// Dot numbering seen from the other side of the sheet: 1↔4, 2↔5, 3↔6.
pub fn mirror_pattern(pattern: u8) -> u8 {
    (pattern & 0b000111) << 3 | (pattern & 0b111000) >> 3
}
