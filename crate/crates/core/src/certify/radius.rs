//! Predictors with radius guarantees, certified accuracy, and the radius of
//! a mixture's plurality vote.

use serde::Serialize;

use super::smoothing::{certify_point, SmoothingConfig};
use crate::domain::{Dataset, FiniteDistribution, Label};
use crate::error::{Error, Result};
use crate::hypotheses::{argmax_label, LinearScorer, MixtureQ, ScorePredictor};

/// A label `h_L(x)` together with a radius `h_R(x) >= 0` within which the
/// label provably does not change.
pub trait RadiusPredictor {
    fn label(&self, x: &[f64]) -> Label;
    fn radius(&self, x: &[f64]) -> f64;
}

/// A binary linear classifier with its exact l2 distance to the boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRadiusPredictor {
    scorer: LinearScorer,
}

impl LinearRadiusPredictor {
    pub fn new(scorer: LinearScorer) -> Result<Self> {
        if scorer.num_classes() != 2 {
            return Err(Error::InvalidConfig("linear radius predictors must be binary".into()));
        }
        Ok(Self { scorer })
    }

    pub fn scorer(&self) -> &LinearScorer {
        &self.scorer
    }
}

impl RadiusPredictor for LinearRadiusPredictor {
    fn label(&self, x: &[f64]) -> Label {
        argmax_label(&self.scorer.scores(x))
    }

    /// `|w . x + b| / ||w||_2`. Exactly on the boundary the radius is 0.
    fn radius(&self, x: &[f64]) -> f64 {
        let w = self.scorer.binary_direction();
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            f64::INFINITY
        } else {
            self.scorer.binary_margin(x).abs() / norm
        }
    }
}

/// The smoothed classifier of a score predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedClassifier<F> {
    pub base: F,
    pub config: SmoothingConfig,
}

impl<F: ScorePredictor> RadiusPredictor for SmoothedClassifier<F> {
    fn label(&self, x: &[f64]) -> Label {
        certify_point(&self.base, x, &self.config).map(|c| c.label).unwrap_or(0)
    }

    fn radius(&self, x: &[f64]) -> f64 {
        certify_point(&self.base, x, &self.config).map(|c| c.radius).unwrap_or(0.0)
    }
}

/// `acc_delta(h, D) = sum_i D(i) 1{h_L(x_i) = y_i and h_R(x_i) >= delta}`.
pub fn certified_accuracy<R>(h: &R, dataset: &Dataset, dist: &FiniteDistribution, delta: f64) -> Result<f64>
where
    R: RadiusPredictor + ?Sized,
{
    dist.check_support(dataset.len())?;
    // Divide by the summed weights so that certifying every example gives
    // exactly 1 despite rounding in the normalization.
    let (mut hit, mut total) = (0.0, 0.0);
    for (ex, &w) in dataset.examples().iter().zip(dist.weights()) {
        total += w;
        if h.label(&ex.x) == ex.y && h.radius(&ex.x) >= delta {
            hit += w;
        }
    }
    Ok(hit / total)
}

/// Result of the linear scan behind [`aggregate_radius`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRadius {
    pub label: Label,
    pub radius: f64,
    /// 1-based position `i*` in the radius-sorted order.
    pub index: usize,
}

/// Plurality label of `q` at `x` and a radius within which it provably holds.
///
/// Members are sorted by their radius at `x` (stable, so ties keep their
/// order in `q`). The radius is `r_{i*}` for the largest `i*` with
/// `sum_{i < i*} Q_(i) + max_{y' != y} h^(i*)(x)_{y'} <= h^(i*)(x)_y`, where
/// `h^(i)` is the vote mass of members `i..N`: inside that radius members
/// `i*..N` keep their labels and the rest can move at most their mass.
pub fn aggregate_radius<R: RadiusPredictor>(q: &MixtureQ<R>, x: &[f64]) -> Result<AggregateRadius> {
    if q.is_empty() {
        return Err(Error::EmptyMixture);
    }
    let k = q.num_classes();
    let mut members: Vec<(f64, Label, f64)> = q.iter().map(|(w, h)| (w, h.label(x), h.radius(x))).collect();
    let mut votes = vec![0.0; k];
    for &(w, l, _) in &members {
        votes[l] += w;
    }
    let y = argmax_label(&votes);
    members.sort_by(|a, b| a.2.total_cmp(&b.2));

    // Suffix vote masses, updated as members are dropped from the front.
    let mut suffix = votes;
    let mut dropped = 0.0;
    let mut best = 1;
    for (i, &(w, l, _)) in members.iter().enumerate() {
        let rival = suffix
            .iter()
            .enumerate()
            .filter(|&(c, _)| c != y)
            .map(|(_, &m)| m)
            .fold(0.0, f64::max);
        if dropped + rival <= suffix[y] {
            best = i + 1;
        }
        dropped += w;
        suffix[l] -= w;
    }
    Ok(AggregateRadius {
        label: y,
        radius: members[best - 1].2,
        index: best,
    })
}

impl<R: RadiusPredictor> RadiusPredictor for MixtureQ<R> {
    fn label(&self, x: &[f64]) -> Label {
        aggregate_radius(self, x).map(|a| a.label).unwrap_or(0)
    }

    fn radius(&self, x: &[f64]) -> f64 {
        aggregate_radius(self, x).map(|a| a.radius).unwrap_or(0.0)
    }
}
