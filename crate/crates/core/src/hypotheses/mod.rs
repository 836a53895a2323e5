//! Hypothesis classes and predictor interfaces.
//!
//! * [`UnilabelPredictor`]: `x -> label`.
//! * [`MultilabelPredictor`]: `x -> set of labels`; every unilabel predictor
//!   is a multilabel predictor with singleton outputs.
//! * [`ScorePredictor`]: `x -> R^k`, turned into a unilabel predictor by
//!   [`Argmax`]. [`Differentiable`] and [`Parametric`] add the gradients
//!   needed by PGD and by stagewise training.

mod ensemble;
mod linear;
mod mixture;
mod mlp;
mod stump;
mod weak;

pub use ensemble::AdditiveEnsemble;
pub use linear::{LinearScorer, Reach, ReachMode, MAX_EXACT_DIM};
pub use mixture::MixtureQ;
pub use mlp::Mlp;
pub use stump::DecisionStump;
pub use weak::{train_stump_ova_weak_learner, train_stump_weak_learner, StumpSearch};

use crate::domain::{Label, LabelSet};

pub trait UnilabelPredictor {
    fn predict(&self, x: &[f64]) -> Label;
}

pub trait MultilabelPredictor {
    fn predict_set(&self, x: &[f64]) -> LabelSet;
}

impl<T: UnilabelPredictor + ?Sized> MultilabelPredictor for T {
    fn predict_set(&self, x: &[f64]) -> LabelSet {
        LabelSet::singleton(self.predict(x))
    }
}

pub trait ScorePredictor {
    fn num_classes(&self) -> usize;
    fn dim(&self) -> usize;
    fn scores(&self, x: &[f64]) -> Vec<f64>;
}

/// Score predictors that can back-propagate an upstream vector `u` (one
/// entry per class) to the input: returns `J(x)^T u`.
pub trait Differentiable: ScorePredictor {
    fn input_gradient(&self, x: &[f64], upstream: &[f64]) -> Vec<f64>;
}

/// Differentiable predictors with a flat parameter vector.
pub trait Parametric: Differentiable {
    fn num_params(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    /// `(dscores/dparams)^T u` at `x`.
    fn param_gradient(&self, x: &[f64], upstream: &[f64]) -> Vec<f64>;
}

impl<T: ScorePredictor + ?Sized> ScorePredictor for &T {
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn scores(&self, x: &[f64]) -> Vec<f64> {
        (**self).scores(x)
    }
}

impl<T: Differentiable + ?Sized> Differentiable for &T {
    fn input_gradient(&self, x: &[f64], upstream: &[f64]) -> Vec<f64> {
        (**self).input_gradient(x, upstream)
    }
}

/// Smallest index attaining the maximum score.
pub fn argmax_label(scores: &[f64]) -> Label {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// `f^am`: the unilabel predictor induced by a score predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct Argmax<F>(pub F);

impl<F: ScorePredictor> UnilabelPredictor for Argmax<F> {
    fn predict(&self, x: &[f64]) -> Label {
        argmax_label(&self.0.scores(x))
    }
}

/// Predicts the same label everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstantPredictor(pub Label);

impl UnilabelPredictor for ConstantPredictor {
    fn predict(&self, _x: &[f64]) -> Label {
        self.0
    }
}

pub(crate) fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `softmax(scores) - onehot(y)`: the gradient of cross-entropy w.r.t. the scores.
pub fn ce_score_gradient(scores: &[f64], y: Label) -> Vec<f64> {
    let mut g = softmax(scores);
    g[y] -= 1.0;
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_examples() {
        assert_eq!(argmax_label(&[0.1, 0.9, 0.3]), 1);
        assert_eq!(argmax_label(&[0.5, 0.5]), 0);
        assert_eq!(argmax_label(&[-3.0, -1.0, -1.0]), 1);
    }

    #[test]
    fn unilabel_is_singleton_multilabel() {
        let c = ConstantPredictor(2);
        assert!(c.predict_set(&[0.0]).is_singleton_of(2));
    }
}
