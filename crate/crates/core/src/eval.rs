//! Dot matching against ground truth and precision / recall / F1 reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::geometry::{GridGeometry, Point};

/// Default match tolerance: a third of the dot pitch.
pub fn default_tolerance(geometry: &GridGeometry) -> f64 {
    geometry.dot_pitch / 3.0
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// `(prediction index, ground-truth index, distance)`.
    pub pairs: Vec<(usize, usize, f64)>,
}

/// One-to-one greedy matching: candidate pairs within `tolerance` are taken
/// in order of increasing distance while both ends are still free.
pub fn match_dots(pred: &[Point], gt: &[Point], tolerance: f64) -> MatchResult {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            let d = p.distance(g);
            if d <= tolerance {
                candidates.push((d, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut pred_used = vec![false; pred.len()];
    let mut gt_used = vec![false; gt.len()];
    let mut pairs = Vec::new();
    for (d, i, j) in candidates {
        if !pred_used[i] && !gt_used[j] {
            pred_used[i] = true;
            gt_used[j] = true;
            pairs.push((i, j, d));
        }
    }
    MatchResult {
        tp: pairs.len(),
        fp: pred.len() - pairs.len(),
        fn_: gt.len() - pairs.len(),
        pairs,
    }
}

/// Pooled counts; metrics with a zero denominator are `None`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> Option<f64> {
        f1_from(self.precision()?, self.recall()?)
    }

    pub fn is_empty(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

impl From<&MatchResult> for Counts {
    fn from(m: &MatchResult) -> Self {
        Counts {
            tp: m.tp,
            fp: m.fp,
            fn_: m.fn_,
        }
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Harmonic mean of precision and recall; zero when both are zero.
pub fn f1_from(precision: f64, recall: f64) -> Option<f64> {
    if !(precision.is_finite() && recall.is_finite()) || precision < 0.0 || recall < 0.0 {
        return None;
    }
    if precision + recall == 0.0 {
        return Some(0.0);
    }
    Some(2.0 * precision * recall / (precision + recall))
}

pub fn precision_recall_f1(m: &MatchResult) -> (Option<f64>, Option<f64>, Option<f64>) {
    let c = Counts::from(m);
    (c.precision(), c.recall(), c.f1())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PageResult {
    pub page: String,
    pub book: Option<String>,
    /// `None` when the detector failed on this page.
    pub result: Option<MatchResult>,
    pub error: Option<String>,
}

/// Pooled metrics for one method over a set of pages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub tolerance: f64,
    pub pages: Vec<PageResult>,
    pub counts: Counts,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub per_book: BTreeMap<String, Counts>,
    pub notes: Vec<String>,
}

impl EvalReport {
    /// Pools counts over pages (micro-average). Failed pages and pages
    /// without any dots are left out of the pool and noted.
    pub fn from_pages(method: impl Into<String>, tolerance: f64, pages: Vec<PageResult>) -> Self {
        let mut counts = Counts::default();
        let mut per_book: BTreeMap<String, Counts> = BTreeMap::new();
        let mut notes = Vec::new();
        for p in &pages {
            match (&p.result, &p.error) {
                (Some(m), _) => {
                    let c = Counts::from(m);
                    if c.is_empty() {
                        notes.push(format!("{}: no predicted or ground-truth dots; excluded", p.page));
                        continue;
                    }
                    counts += c;
                    if let Some(b) = &p.book {
                        *per_book.entry(b.clone()).or_default() += c;
                    }
                }
                (None, err) => notes.push(format!(
                    "{}: failed: {}",
                    p.page,
                    err.as_deref().unwrap_or("unknown error")
                )),
            }
        }
        EvalReport {
            method: method.into(),
            tolerance,
            precision: counts.precision(),
            recall: counts.recall(),
            f1: counts.f1(),
            pages,
            counts,
            per_book,
            notes,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Matches every page's predictions against its ground truth and pools.
pub fn evaluate_pages(
    method: impl Into<String>,
    tolerance: f64,
    pages: &[(String, Option<String>, Vec<Point>, Vec<Point>)],
) -> EvalReport {
    let results = pages
        .iter()
        .map(|(name, book, pred, gt)| PageResult {
            page: name.clone(),
            book: book.clone(),
            result: Some(match_dots(pred, gt, tolerance)),
            error: None,
        })
        .collect();
    EvalReport::from_pages(method, tolerance, results)
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{:.2}%", 100.0 * v))
}

fn fixed3(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"))
}

/// One row per report: `Method | Precision | Recall | F1`.
pub fn render_report(reports: &[EvalReport]) -> String {
    let mut s = String::from("| Method | Precision | Recall | F1 |\n|---|---|---|---|\n");
    for r in reports {
        writeln!(s, "| {} | {} | {} | {} |", r.method, pct(r.precision), pct(r.recall), fixed3(r.f1)).unwrap();
    }
    s
}

/// Per-book rows of one report, same columns.
pub fn render_book_breakdown(report: &EvalReport) -> String {
    let mut s = String::from("| Book | Precision | Recall | F1 |\n|---|---|---|---|\n");
    for (book, c) in &report.per_book {
        writeln!(s, "| {book} | {} | {} | {} |", pct(c.precision()), pct(c.recall()), fixed3(c.f1())).unwrap();
    }
    s
}
