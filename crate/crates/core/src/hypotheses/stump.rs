use serde::{Deserialize, Serialize};

use super::UnilabelPredictor;
use crate::domain::{Label, LabelSet, Norm, PerturbationBall};
use crate::error::{Error, Result};

/// Axis-aligned threshold classifier: `left` if `x[feature] <= threshold`,
/// otherwise `right`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionStump {
    pub feature: usize,
    pub threshold: f64,
    pub left: Label,
    pub right: Label,
}

impl DecisionStump {
    pub fn new(feature: usize, threshold: f64, left: Label, right: Label) -> Self {
        Self {
            feature,
            threshold,
            left,
            right,
        }
    }

    /// Exact set of labels the stump outputs over `x + ball`.
    ///
    /// Only the `feature` coordinate matters, so the l-inf ball reduces to
    /// the interval `[x_j - delta, x_j + delta]`. In one dimension the l2
    /// and l-inf balls coincide.
    pub fn reach_set(&self, x: &[f64], ball: &PerturbationBall) -> Result<LabelSet> {
        if ball.norm == Norm::L2 && x.len() > 1 {
            return Err(Error::UnsupportedNorm(
                "stump reach sets need the l-inf ball when d > 1".into(),
            ));
        }
        let (lo, hi) = (x[self.feature] - ball.delta, x[self.feature] + ball.delta);
        Ok(if hi <= self.threshold {
            LabelSet::singleton(self.left)
        } else if lo > self.threshold {
            LabelSet::singleton(self.right)
        } else {
            LabelSet::from_labels([self.left, self.right])
        })
    }
}

impl UnilabelPredictor for DecisionStump {
    fn predict(&self, x: &[f64]) -> Label {
        if x[self.feature] <= self.threshold {
            self.left
        } else {
            self.right
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stump() -> DecisionStump {
        DecisionStump::new(0, 0.0, 0, 1)
    }

    #[test]
    fn reach_set_examples() {
        let b1 = PerturbationBall::linf(1.0).unwrap();
        assert!(stump().reach_set(&[-2.0], &b1).unwrap().is_singleton_of(0));
        assert_eq!(stump().reach_set(&[0.5], &b1).unwrap().labels(), &[0, 1]);
        let b0 = PerturbationBall::linf(0.0).unwrap();
        assert!(stump().reach_set(&[0.5], &b0).unwrap().is_singleton_of(1));
    }

    #[test]
    fn l2_only_in_one_dimension() {
        let b = PerturbationBall::l2(1.0).unwrap();
        assert!(stump().reach_set(&[0.5], &b).is_ok());
        assert!(matches!(stump().reach_set(&[0.5, 0.0], &b), Err(Error::UnsupportedNorm(_))));
    }

    #[test]
    fn boundary_goes_left() {
        assert_eq!(stump().predict(&[0.0]), 0);
        let b = PerturbationBall::linf(0.5).unwrap();
        assert!(stump().reach_set(&[-0.5], &b).unwrap().is_singleton_of(0));
    }
}
