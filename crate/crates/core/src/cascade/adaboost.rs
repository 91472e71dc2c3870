//! Discrete AdaBoost over decision stumps on precomputed feature values.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::haar::{enumerate_features, HaarFeature, WindowImage, WINDOW};
use crate::error::{Error, Result};
use crate::raster::GrayImage;

const MIN_ERROR: f64 = 1e-10;

/// Votes positive iff `polarity · (value − threshold) > 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: HaarFeature,
    pub threshold: f64,
    pub polarity: i8,
    pub alpha: f64,
}

impl Stump {
    #[inline]
    pub fn predict(&self, value: f64) -> bool {
        self.polarity as f64 * (value - self.threshold) > 0.0
    }

    /// `+alpha` for a positive vote, `-alpha` otherwise.
    #[inline]
    pub fn vote(&self, value: f64) -> f64 {
        if self.predict(value) {
            self.alpha
        } else {
            -self.alpha
        }
    }
}

/// Feature values of every sample, feature-major, with each feature's sample
/// order sorted by value.
pub struct FeatureMatrix {
    features: Vec<HaarFeature>,
    samples: usize,
    values: Vec<f32>,
    order: Vec<u32>,
}

impl FeatureMatrix {
    /// `patches` must be `WINDOW × WINDOW`.
    pub fn new(features: Vec<HaarFeature>, patches: &[GrayImage]) -> Self {
        assert!(patches.iter().all(|p| p.width() == WINDOW && p.height() == WINDOW));
        let windows: Vec<(WindowImage, f64)> = patches
            .par_iter()
            .map(|p| {
                let w = WindowImage::new(p);
                let scale = w.scale(0, 0);
                (w, scale)
            })
            .collect();
        let samples = patches.len();
        let columns: Vec<(Vec<f32>, Vec<u32>)> = features
            .par_iter()
            .map(|f| {
                let vals: Vec<f32> = windows.iter().map(|(w, s)| w.feature(f, 0, 0, *s) as f32).collect();
                let mut ord: Vec<u32> = (0..samples as u32).collect();
                ord.sort_by(|&a, &b| vals[a as usize].total_cmp(&vals[b as usize]).then(a.cmp(&b)));
                (vals, ord)
            })
            .collect();
        let mut values = Vec::with_capacity(features.len() * samples);
        let mut order = Vec::with_capacity(features.len() * samples);
        for (v, o) in columns {
            values.extend(v);
            order.extend(o);
        }
        Self {
            features,
            samples,
            values,
            order,
        }
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn features(&self) -> &[HaarFeature] {
        &self.features
    }

    #[inline]
    pub fn value(&self, feature: usize, sample: usize) -> f64 {
        self.values[feature * self.samples + sample] as f64
    }

    fn column(&self, feature: usize) -> (&[f32], &[u32]) {
        let r = feature * self.samples..(feature + 1) * self.samples;
        (&self.values[r.clone()], &self.order[r])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Candidate {
    feature: usize,
    threshold: f64,
    polarity: i8,
    error: f64,
}

/// Lowest weighted error split of one feature.
fn best_split(matrix: &FeatureMatrix, feature: usize, labels: &[bool], weights: &[f64], total_pos: f64, total_neg: f64) -> Option<Candidate> {
    let (vals, order) = matrix.column(feature);
    let (mut below_pos, mut below_neg) = (0.0, 0.0);
    let mut best: Option<Candidate> = None;
    for i in 0..order.len() {
        let s = order[i] as usize;
        if labels[s] {
            below_pos += weights[s];
        } else {
            below_neg += weights[s];
        }
        let Some(&next) = order.get(i + 1) else { break };
        let (v, nv) = (vals[s], vals[next as usize]);
        if v == nv {
            continue;
        }
        // Positive below the threshold, or positive above it.
        let err_below = below_neg + (total_pos - below_pos);
        let err_above = below_pos + (total_neg - below_neg);
        let (error, polarity) = if err_below <= err_above { (err_below, -1) } else { (err_above, 1) };
        if best.is_none_or(|b| error < b.error) {
            best = Some(Candidate {
                feature,
                threshold: (v as f64 + nv as f64) / 2.0,
                polarity,
                error,
            });
        }
    }
    best
}

/// Incremental boosting state; each [`Booster::step`] adds one stump.
pub struct Booster<'a> {
    matrix: &'a FeatureMatrix,
    labels: &'a [bool],
    weights: Vec<f64>,
}

impl<'a> Booster<'a> {
    /// Positives and negatives each start with half of the total weight.
    pub fn new(matrix: &'a FeatureMatrix, labels: &'a [bool]) -> Result<Self> {
        if matrix.samples() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "{} samples but {} labels",
                matrix.samples(),
                labels.len()
            )));
        }
        let pos = labels.iter().filter(|&&l| l).count();
        let neg = labels.len() - pos;
        if pos == 0 || neg == 0 {
            return Err(Error::Training("boosting needs both positive and negative samples".into()));
        }
        let weights = labels
            .iter()
            .map(|&l| if l { 0.5 / pos as f64 } else { 0.5 / neg as f64 })
            .collect();
        Ok(Self {
            matrix,
            labels,
            weights,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Picks the stump with the lowest weighted error (ties go to the lower
    /// feature index) and reweights the samples. Fails when no stump beats
    /// chance.
    pub fn step(&mut self) -> Result<Stump> {
        let (labels, weights) = (self.labels, &self.weights);
        let total_pos: f64 = labels.iter().zip(weights).filter(|(l, _)| **l).map(|(_, w)| w).sum();
        let total_neg: f64 = weights.iter().sum::<f64>() - total_pos;
        let best = (0..self.matrix.features().len())
            .into_par_iter()
            .filter_map(|f| best_split(self.matrix, f, labels, weights, total_pos, total_neg))
            // Errors are compared on a 1e-12 grid so summation residue cannot
            // override the lower-index tie rule.
            .min_by_key(|c| ((c.error * 1e12).round() as i64, c.feature))
            .ok_or_else(|| Error::Training("no feature separates the samples at any threshold".into()))?;
        if best.error >= 0.5 {
            return Err(Error::Training(format!(
                "best stump has weighted error {:.4}; no weak learner beats chance",
                best.error
            )));
        }
        let alpha = alpha_for(best.error);
        let stump = Stump {
            feature: self.matrix.features()[best.feature],
            threshold: best.threshold,
            polarity: best.polarity,
            alpha,
        };
        let mut total = 0.0;
        for (s, w) in self.weights.iter_mut().enumerate() {
            let correct = stump.predict(self.matrix.value(best.feature, s)) == labels[s];
            *w *= if correct { (-alpha).exp() } else { alpha.exp() };
            total += *w;
        }
        for w in &mut self.weights {
            *w /= total;
        }
        Ok(stump)
    }
}

/// Stump vote weight `½·ln((1−ε)/ε)`, with ε kept off 0 and 1.
pub fn alpha_for(error: f64) -> f64 {
    let eps = error.clamp(MIN_ERROR, 1.0 - MIN_ERROR);
    0.5 * ((1.0 - eps) / eps).ln()
}

/// Runs `rounds` boosting rounds over precomputed feature values.
pub fn boost(matrix: &FeatureMatrix, labels: &[bool], rounds: usize) -> Result<Vec<Stump>> {
    let mut booster = Booster::new(matrix, labels)?;
    (0..rounds).map(|_| booster.step()).collect()
}

/// Discrete AdaBoost over all enumerated Haar features of `WINDOW`-sized
/// samples.
pub fn train_adaboost(samples: &[GrayImage], labels: &[bool], rounds: usize) -> Result<Vec<Stump>> {
    if rounds == 0 {
        return Err(Error::InvalidInput("at least one boosting round is required".into()));
    }
    if let Some(s) = samples.iter().find(|s| s.width() != WINDOW || s.height() != WINDOW) {
        return Err(Error::InvalidInput(format!(
            "samples must be {WINDOW}x{WINDOW}, found {}x{}",
            s.width(),
            s.height()
        )));
    }
    let matrix = FeatureMatrix::new(enumerate_features(), samples);
    boost(&matrix, labels, rounds)
}

/// Sum of stump votes for the window at `(ox, oy)` whose contrast scale
/// is `scale` (see [`WindowImage::scale`]).
pub fn strong_score(stumps: &[Stump], img: &WindowImage, ox: usize, oy: usize, scale: f64) -> f64 {
    stumps
        .iter()
        .map(|s| s.vote(img.feature(&s.feature, ox, oy, scale)))
        .sum()
}
