//! Sliding-window dot detector: Haar features, boosted stumps, and a
//! rejection cascade trained stage by stage.

mod adaboost;
mod haar;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adaboost::{alpha_for, boost, strong_score, train_adaboost, Booster, FeatureMatrix, Stump};
pub use haar::{enumerate_features, HaarFeature, HaarKind, WindowImage, MIN_WINDOW_STD, WINDOW};

use crate::error::{Error, Result};
use crate::geometry::{Dot, DotSet, GridGeometry, Point, Side};
use crate::raster::{normalize_gray, GrayImage};

pub const DETECTOR_ID: &str = "cascade";
const MAGIC: &str = "braille-cascade v1";
/// Window center relative to its top-left corner.
const HALF: usize = WINDOW / 2;
const MIN_POSITIVES: usize = 50;
const MIN_NEGATIVES: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeStage {
    pub stumps: Vec<Stump>,
    /// A window passes when its score is at least this.
    pub threshold: f64,
}

impl CascadeStage {
    pub fn score(&self, img: &WindowImage, ox: usize, oy: usize, scale: f64) -> f64 {
        strong_score(&self.stumps, img, ox, oy, scale)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cascade {
    pub stages: Vec<CascadeStage>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeConfig {
    pub geometry: GridGeometry,
    /// Minimum fraction of training positives each stage must keep.
    pub min_detection_rate: f64,
    /// Stage training stops once at most this fraction of negatives pass.
    pub max_false_positive_rate: f64,
    pub max_stages: usize,
    pub max_stumps_per_stage: usize,
    /// Negatives per positive.
    pub negative_ratio: usize,
    /// Negative window centers keep at least this many dot pitches from
    /// every recto dot.
    pub negative_min_distance: f64,
    pub stride: usize,
    /// Non-maximum suppression radius in dot pitches.
    pub nms_radius: f64,
    pub seed: u64,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            geometry: GridGeometry::default(),
            min_detection_rate: 0.995,
            max_false_positive_rate: 0.5,
            max_stages: 5,
            max_stumps_per_stage: 100,
            negative_ratio: 4,
            negative_min_distance: 1.0,
            stride: 2,
            nms_radius: 0.5,
            seed: 0,
        }
    }
}

/// A training page with its ground-truth dots, both in page pixels.
#[derive(Clone, Debug)]
pub struct TrainingPage {
    pub image: GrayImage,
    pub recto: Vec<Point>,
    pub verso: Vec<Point>,
}

impl Cascade {
    /// Final-stage margin if the window passes every stage. A cascade
    /// without stages accepts everything with margin zero.
    pub fn evaluate(&self, img: &WindowImage, ox: usize, oy: usize) -> Option<f64> {
        let scale = img.scale(ox, oy);
        let mut margin = 0.0;
        for stage in &self.stages {
            margin = stage.score(img, ox, oy, scale) - stage.threshold;
            if margin < 0.0 {
                return None;
            }
        }
        Some(margin)
    }

    /// Accepted window centers and margins, before suppression.
    pub fn scan(&self, img: &GrayImage, stride: usize) -> Vec<Dot> {
        if img.width() < WINDOW || img.height() < WINDOW {
            return Vec::new();
        }
        let windows = WindowImage::new(img);
        let stride = stride.max(1);
        let ys: Vec<usize> = (0..=img.height() - WINDOW).step_by(stride).collect();
        ys.par_iter()
            .flat_map_iter(|&oy| {
                let windows = &windows;
                (0..=img.width() - WINDOW).step_by(stride).filter_map(move |ox| {
                    self.evaluate(windows, ox, oy).map(|m| Dot {
                        x: (ox + HALF) as f64,
                        y: (oy + HALF) as f64,
                        confidence: m,
                    })
                })
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{MAGIC}").unwrap();
        writeln!(s, "window {WINDOW} {WINDOW}").unwrap();
        writeln!(s, "stages {}", self.stages.len()).unwrap();
        for (i, st) in self.stages.iter().enumerate() {
            writeln!(s, "stage {i} threshold {} stumps {}", st.threshold, st.stumps.len()).unwrap();
            for t in &st.stumps {
                let f = t.feature;
                writeln!(
                    s,
                    "stump {} {} {} {} {} {} {} {}",
                    f.kind, f.x, f.y, f.w, f.h, t.threshold, t.polarity, t.alpha
                )
                .unwrap();
            }
        }
        s
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
        let err = |line: usize, message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            column: 1,
            message,
        };
        let mut next = |what: &str| lines.next().ok_or_else(|| err(0, format!("unexpected end of model, expected {what}")));
        let (n, l) = next("header")?;
        if l != MAGIC {
            return Err(err(n, format!("expected {MAGIC:?}, found {l:?}")));
        }
        let (n, l) = next("window line")?;
        if l != format!("window {WINDOW} {WINDOW}") {
            return Err(err(n, format!("unsupported window {l:?}")));
        }
        let (n, l) = next("stage count")?;
        let count: usize = field(l, "stages", 1, n, origin)?;
        let mut stages = Vec::with_capacity(count);
        for i in 0..count {
            let (n, l) = next("stage line")?;
            let toks: Vec<&str> = l.split_whitespace().collect();
            if toks.len() != 6 || toks[0] != "stage" || toks[2] != "threshold" || toks[4] != "stumps" {
                return Err(err(n, format!("malformed stage line {l:?}")));
            }
            if toks[1] != i.to_string() {
                return Err(err(n, format!("expected stage {i}, found {}", toks[1])));
            }
            let threshold: f64 = parse_tok(toks[3], n, origin)?;
            let k: usize = parse_tok(toks[5], n, origin)?;
            let mut stumps = Vec::with_capacity(k);
            for _ in 0..k {
                let (n, l) = next("stump line")?;
                let toks: Vec<&str> = l.split_whitespace().collect();
                if toks.len() != 9 || toks[0] != "stump" {
                    return Err(err(n, format!("malformed stump line {l:?}")));
                }
                let kind: HaarKind = toks[1].parse().map_err(|e: Error| err(n, e.to_string()))?;
                let feature = HaarFeature {
                    kind,
                    x: parse_tok(toks[2], n, origin)?,
                    y: parse_tok(toks[3], n, origin)?,
                    w: parse_tok(toks[4], n, origin)?,
                    h: parse_tok(toks[5], n, origin)?,
                };
                if !feature.is_valid() {
                    return Err(err(n, format!("feature {feature:?} does not fit the window")));
                }
                let polarity: i8 = parse_tok(toks[7], n, origin)?;
                if polarity != 1 && polarity != -1 {
                    return Err(err(n, format!("polarity must be 1 or -1, found {polarity}")));
                }
                stumps.push(Stump {
                    feature,
                    threshold: parse_tok(toks[6], n, origin)?,
                    polarity,
                    alpha: parse_tok(toks[8], n, origin)?,
                });
            }
            stages.push(CascadeStage { stumps, threshold });
        }
        if let Some((n, l)) = lines.next() {
            return Err(err(n, format!("trailing content {l:?}")));
        }
        Ok(Cascade { stages })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}

fn parse_tok<T: std::str::FromStr>(tok: &str, line: usize, origin: &Path) -> Result<T> {
    tok.parse().map_err(|_| Error::Parse {
        path: PathBuf::from(origin),
        line,
        column: 1,
        message: format!("cannot parse {tok:?}"),
    })
}

fn field<T: std::str::FromStr>(l: &str, key: &str, arity: usize, line: usize, origin: &Path) -> Result<T> {
    let toks: Vec<&str> = l.split_whitespace().collect();
    if toks.len() != arity + 1 || toks[0] != key {
        return Err(Error::Parse {
            path: PathBuf::from(origin),
            line,
            column: 1,
            message: format!("expected {key:?} line, found {l:?}"),
        });
    }
    parse_tok(toks[1], line, origin)
}

/// Greedy non-maximum suppression: keeps the most confident detection and
/// drops every other one within `radius`. A kept detection moves to the
/// mean of the suppressed candidates that tie its confidence, so a plateau
/// of equal scores reports its center rather than its first window.
pub fn non_max_suppression(mut dots: Vec<Dot>, radius: f64) -> Vec<Dot> {
    dots.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
    });
    // Seed detection plus the sum and count of its tie group.
    let mut kept: Vec<(Dot, f64, f64, usize)> = Vec::new();
    for d in dots {
        let owner = kept
            .iter_mut()
            .filter(|k| k.0.point().distance(&d.point()) <= radius)
            .min_by(|a, b| a.0.point().distance(&d.point()).total_cmp(&b.0.point().distance(&d.point())));
        match owner {
            Some(k) => {
                if d.confidence == k.0.confidence {
                    k.1 += d.x;
                    k.2 += d.y;
                    k.3 += 1;
                }
            }
            None => kept.push((d, d.x, d.y, 1)),
        }
    }
    let mut out: Vec<Dot> = kept
        .into_iter()
        .map(|(d, sx, sy, n)| Dot {
            x: sx / n as f64,
            y: sy / n as f64,
            ..d
        })
        .collect();
    out.sort_by(|a, b| a.y.total_cmp(&b.y).then(a.x.total_cmp(&b.x)));
    out
}

/// Scans every window on the `step` grid and merges overlapping hits
/// within `nms_radius` pixels. The image is used as given.
pub fn detect_sliding(img: &GrayImage, cascade: &Cascade, step: usize, nms_radius: f64) -> Result<DotSet> {
    if img.width() < WINDOW || img.height() < WINDOW {
        return Err(Error::InvalidInput(format!(
            "image {}x{} is smaller than the {WINDOW}x{WINDOW} window",
            img.width(),
            img.height()
        )));
    }
    if step == 0 {
        return Err(Error::InvalidInput("sliding step must be positive".into()));
    }
    Ok(DotSet {
        dots: non_max_suppression(cascade.scan(img, step), nms_radius),
        ..DotSet::empty(Side::Recto, DETECTOR_ID, img.width(), img.height())
    })
}

/// Normalizes the page, then runs [`detect_sliding`]. Pages smaller than
/// the window have no dots.
pub fn detect_cascade(img: &GrayImage, cascade: &Cascade, side: Side, config: &CascadeConfig) -> DotSet {
    let norm = normalize_gray(img);
    match detect_sliding(&norm.image, cascade, config.stride, config.nms_radius * config.geometry.dot_pitch) {
        Ok(set) => DotSet { side, ..set },
        Err(_) => DotSet::empty(side, DETECTOR_ID, img.width(), img.height()),
    }
}

fn window_at(img: &GrayImage, center: Point) -> Option<(usize, usize)> {
    let ox = center.x.round() as i64 - HALF as i64;
    let oy = center.y.round() as i64 - HALF as i64;
    let fits = ox >= 0 && oy >= 0 && ox as usize + WINDOW <= img.width() && oy as usize + WINDOW <= img.height();
    fits.then_some((ox as usize, oy as usize))
}

fn far_from(p: Point, dots: &[Point], min_distance: f64) -> bool {
    dots.iter().all(|d| d.distance(&p) >= min_distance)
}

/// Positive patches centered on recto dots and `negative_ratio` times as
/// many negatives: first patches centered on verso dots, then random
/// positions, all away from recto dots. Pages should already be normalized.
pub fn harvest_samples(pages: &[TrainingPage], config: &CascadeConfig, rng: &mut impl Rng) -> (Vec<GrayImage>, Vec<GrayImage>) {
    let min_dist = config.negative_min_distance * config.geometry.dot_pitch;
    let crop = |img: &GrayImage, (x, y): (usize, usize)| img.crop(x, y, WINDOW, WINDOW).expect("window inside page");
    let mut positives = Vec::new();
    let mut verso = Vec::new();
    for page in pages {
        for &p in &page.recto {
            if let Some(o) = window_at(&page.image, p) {
                positives.push(crop(&page.image, o));
            }
        }
        for &p in &page.verso {
            if far_from(p, &page.recto, min_dist) {
                if let Some(o) = window_at(&page.image, p) {
                    verso.push(crop(&page.image, o));
                }
            }
        }
    }
    let target = positives.len() * config.negative_ratio;
    verso.shuffle(rng);
    verso.truncate(target);
    let mut negatives = verso;
    let usable: Vec<&TrainingPage> = pages
        .iter()
        .filter(|p| p.image.width() >= WINDOW && p.image.height() >= WINDOW)
        .collect();
    let mut attempts = 0;
    while negatives.len() < target && !usable.is_empty() && attempts < 100 * target.max(1) {
        attempts += 1;
        let page = usable[rng.random_range(0..usable.len())];
        let ox = rng.random_range(0..=page.image.width() - WINDOW);
        let oy = rng.random_range(0..=page.image.height() - WINDOW);
        let center = Point::new((ox + HALF) as f64, (oy + HALF) as f64);
        if far_from(center, &page.recto, min_dist) {
            negatives.push(crop(&page.image, (ox, oy)));
        }
    }
    (positives, negatives)
}

/// Windows the current cascade accepts away from every recto dot.
fn false_positive_patches(cascade: &Cascade, pages: &[TrainingPage], config: &CascadeConfig) -> Vec<GrayImage> {
    let min_dist = config.negative_min_distance * config.geometry.dot_pitch;
    pages
        .par_iter()
        .flat_map_iter(|page| {
            cascade
                .scan(&page.image, config.stride)
                .into_iter()
                .filter(|d| far_from(d.point(), &page.recto, min_dist))
                .map(|d| {
                    let (ox, oy) = (d.x as usize - HALF, d.y as usize - HALF);
                    page.image.crop(ox, oy, WINDOW, WINDOW).expect("window inside page")
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Trains one stage: stumps are added until the stage threshold that keeps
/// `min_detection_rate` of the positives lets at most
/// `max_false_positive_rate` of the negatives through.
fn train_stage(positives: &[GrayImage], negatives: &[GrayImage], features: &[HaarFeature], config: &CascadeConfig) -> Result<(CascadeStage, Vec<f64>, Vec<f64>)> {
    let patches: Vec<GrayImage> = positives.iter().chain(negatives).cloned().collect();
    let labels: Vec<bool> = (0..patches.len()).map(|i| i < positives.len()).collect();
    let matrix = FeatureMatrix::new(features.to_vec(), &patches);
    let mut booster = Booster::new(&matrix, &labels)?;
    let mut scores = vec![0.0f64; patches.len()];
    let mut stumps = Vec::new();
    let n_pos = positives.len();
    loop {
        if stumps.len() == config.max_stumps_per_stage {
            return Err(Error::Training(format!(
                "stage did not reach the false positive target within {} stumps",
                config.max_stumps_per_stage
            )));
        }
        let stump = booster.step()?;
        let f = matrix
            .features()
            .iter()
            .position(|x| *x == stump.feature)
            .expect("stump feature comes from the matrix");
        for (s, score) in scores.iter_mut().enumerate() {
            *score += stump.vote(matrix.value(f, s));
        }
        stumps.push(stump);

        let mut pos: Vec<f64> = scores[..n_pos].to_vec();
        pos.sort_by(f64::total_cmp);
        let allowed_misses = ((1.0 - config.min_detection_rate) * n_pos as f64).floor() as usize;
        let threshold = pos[allowed_misses.min(n_pos - 1)];
        let passing_neg = scores[n_pos..].iter().filter(|&&s| s >= threshold).count();
        let fp = passing_neg as f64 / negatives.len() as f64;
        log::debug!("stage stump {}: threshold {threshold:.4}, false positive rate {fp:.4}", stumps.len());
        if fp <= config.max_false_positive_rate {
            let (p, n) = scores.split_at(n_pos);
            return Ok((CascadeStage { stumps, threshold }, p.to_vec(), n.to_vec()));
        }
    }
}

/// Trains a cascade on pages with ground-truth recto and verso dots.
/// After each stage, false positives of the cascade so far on the training
/// pages replenish the negative set.
pub fn train_cascade(pages: &[TrainingPage], config: &CascadeConfig) -> Result<Cascade> {
    config.geometry.validate()?;
    let (d, f) = (config.min_detection_rate, config.max_false_positive_rate);
    if !(f > 0.0 && f < d && d <= 1.0) || config.max_stages == 0 {
        return Err(Error::InvalidInput(format!("invalid cascade rates: {config:?}")));
    }
    let pages: Vec<TrainingPage> = pages
        .iter()
        .map(|p| TrainingPage {
            image: normalize_gray(&p.image).image,
            ..p.clone()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (mut positives, mut negatives) = harvest_samples(&pages, config, &mut rng);
    if positives.len() < MIN_POSITIVES || negatives.len() < MIN_NEGATIVES {
        return Err(Error::Training(format!(
            "{} positives and {} negatives harvested; at least {MIN_POSITIVES} and {MIN_NEGATIVES} are needed",
            positives.len(),
            negatives.len()
        )));
    }
    let features = enumerate_features();
    let mut cascade = Cascade { stages: Vec::new() };
    while cascade.stages.len() < config.max_stages && !negatives.is_empty() {
        let index = cascade.stages.len();
        let (stage, pos_scores, neg_scores) = train_stage(&positives, &negatives, &features, config).map_err(|e| match e {
            Error::Training(m) => Error::Training(format!("stage {index}: {m}")),
            e => e,
        })?;
        log::info!(
            "stage {} trained with {} stumps on {} positives and {} negatives",
            cascade.stages.len(),
            stage.stumps.len(),
            positives.len(),
            negatives.len()
        );
        let t = stage.threshold;
        positives = positives.into_iter().zip(pos_scores).filter(|(_, s)| *s >= t).map(|(p, _)| p).collect();
        negatives = negatives.into_iter().zip(neg_scores).filter(|(_, s)| *s >= t).map(|(p, _)| p).collect();
        cascade.stages.push(stage);
        if cascade.stages.len() == config.max_stages {
            break;
        }
        let target = positives.len() * config.negative_ratio;
        if negatives.len() < target {
            let mut fresh = false_positive_patches(&cascade, &pages, config);
            fresh.shuffle(&mut rng);
            fresh.truncate(target - negatives.len());
            negatives.extend(fresh);
        }
    }
    Ok(cascade)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cascade() -> Cascade {
        let fs = enumerate_features();
        Cascade {
            stages: vec![
                CascadeStage {
                    stumps: vec![
                        Stump { feature: fs[0], threshold: -12.5, polarity: 1, alpha: 0.75 },
                        Stump { feature: fs[fs.len() - 1], threshold: 3.0, polarity: -1, alpha: 0.1 + 0.2 },
                    ],
                    threshold: -0.125,
                },
                CascadeStage {
                    stumps: vec![Stump { feature: fs[100], threshold: 1e-7, polarity: 1, alpha: 2.0 / 3.0 }],
                    threshold: 0.0,
                },
            ],
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let c = tiny_cascade();
        let text = c.to_text();
        assert!(text.starts_with("braille-cascade v1\nwindow 20 20\nstages 2\n"));
        let back = Cascade::from_text(&text, Path::new("m.txt")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn malformed_model_reports_line() {
        let mut text = tiny_cascade().to_text();
        text = text.replacen("stump two-h", "stump six-h", 1);
        match Cascade::from_text(&text, Path::new("m.txt")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
        assert!(Cascade::from_text("braille-cascade v2\n", Path::new("m")).is_err());
    }

    #[test]
    fn nms_keeps_maximum() {
        let d = |x, y, c| Dot { x, y, confidence: c };
        let kept = non_max_suppression(vec![d(10.0, 10.0, 0.5), d(12.0, 10.0, 0.9), d(40.0, 10.0, 0.1)], 9.0);
        assert_eq!(kept, vec![d(12.0, 10.0, 0.9), d(40.0, 10.0, 0.1)]);
    }

    #[test]
    fn nms_centers_a_plateau() {
        let d = |x, y, c| Dot { x, y, confidence: c };
        let plateau = vec![d(98.0, 98.0, 0.0), d(100.0, 98.0, 0.0), d(102.0, 102.0, 0.0), d(100.0, 102.0, 0.0)];
        assert_eq!(non_max_suppression(plateau, 9.0), vec![d(100.0, 100.0, 0.0)]);
        // Lower-scored neighbours do not pull the maximum.
        let kept = non_max_suppression(vec![d(10.0, 10.0, 1.0), d(16.0, 10.0, 0.5)], 9.0);
        assert_eq!(kept, vec![d(10.0, 10.0, 1.0)]);
    }

    #[test]
    fn empty_cascade_accepts_every_window() {
        let img = GrayImage::filled(60, 60, 100);
        // 21 window positions per axis at stride 2.
        assert_eq!(Cascade { stages: vec![] }.scan(&img, 2).len(), 21 * 21);
    }

    #[test]
    fn harvest_counts_and_exclusion() {
        let img = GrayImage::from_fn(200, 200, |x, y| ((x * 7 + y * 3) % 256) as u8);
        let page = TrainingPage {
            image: img,
            recto: vec![Point::new(50.0, 50.0), Point::new(5.0, 5.0), Point::new(120.0, 80.0)],
            verso: vec![Point::new(52.0, 52.0), Point::new(150.0, 150.0)],
        };
        let config = CascadeConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (pos, neg) = harvest_samples(std::slice::from_ref(&page), &config, &mut rng);
        // The dot at (5, 5) has no full window.
        assert_eq!(pos.len(), 2);
        assert_eq!(neg.len(), 8);
        assert_eq!(pos[0], page.image.crop(40, 40, 20, 20).unwrap());
        // The verso dot next to a recto dot is never a negative.
        assert!(!neg.contains(&page.image.crop(42, 42, 20, 20).unwrap()));
        assert!(neg.contains(&page.image.crop(140, 140, 20, 20).unwrap()));
    }

    #[test]
    fn sliding_rejects_small_images() {
        let c = tiny_cascade();
        assert!(detect_sliding(&GrayImage::filled(19, 40, 0), &c, 2, 10.0).is_err());
        assert!(detect_sliding(&GrayImage::filled(20, 20, 0), &c, 2, 10.0).is_ok());
        assert!(detect_sliding(&GrayImage::filled(40, 40, 0), &c, 0, 10.0).is_err());
    }

    #[test]
    fn invalid_rates_are_rejected() {
        let page = TrainingPage { image: GrayImage::filled(100, 100, 0), recto: vec![], verso: vec![] };
        for (d, f) in [(0.5, 0.6), (1.1, 0.5), (0.9, 0.0)] {
            let config = CascadeConfig { min_detection_rate: d, max_false_positive_rate: f, ..CascadeConfig::default() };
            assert!(matches!(train_cascade(std::slice::from_ref(&page), &config), Err(Error::InvalidInput(_))));
        }
        assert!(matches!(
            train_cascade(std::slice::from_ref(&page), &CascadeConfig::default()),
            Err(Error::Training(_))
        ));
    }
}
