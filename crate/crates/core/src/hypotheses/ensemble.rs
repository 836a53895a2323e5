use super::{Differentiable, ScorePredictor};
use crate::error::{Error, Result};

/// `f = sum_t beta_t f_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdditiveEnsemble<F> {
    stages: Vec<(f64, F)>,
    k: usize,
    d: usize,
}

impl<F: ScorePredictor> AdditiveEnsemble<F> {
    /// The identically zero predictor `f^(0)`.
    pub fn empty(k: usize, d: usize) -> Self {
        Self { stages: Vec::new(), k, d }
    }

    pub fn from_stages(stages: Vec<(f64, F)>, k: usize, d: usize) -> Result<Self> {
        let mut ens = Self::empty(k, d);
        for (beta, f) in stages {
            ens.push(beta, f)?;
        }
        Ok(ens)
    }

    pub fn push(&mut self, beta: f64, f: F) -> Result<()> {
        if f.num_classes() != self.k || f.dim() != self.d {
            return Err(Error::InvalidConfig(format!(
                "stage maps R^{} -> R^{}, ensemble expects R^{} -> R^{}",
                f.dim(),
                f.num_classes(),
                self.d,
                self.k
            )));
        }
        self.stages.push((beta, f));
        Ok(())
    }

    pub fn stages(&self) -> &[(f64, F)] {
        &self.stages
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    /// The ensemble made of the first `t` stages.
    pub fn prefix(&self, t: usize) -> Self
    where
        F: Clone,
    {
        Self {
            stages: self.stages[..t].to_vec(),
            k: self.k,
            d: self.d,
        }
    }
}

impl<F: ScorePredictor> ScorePredictor for AdditiveEnsemble<F> {
    fn num_classes(&self) -> usize {
        self.k
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn scores(&self, x: &[f64]) -> Vec<f64> {
        let mut total = vec![0.0; self.k];
        for (beta, f) in &self.stages {
            for (t, s) in total.iter_mut().zip(f.scores(x)) {
                *t += beta * s;
            }
        }
        total
    }
}

impl<F: Differentiable> Differentiable for AdditiveEnsemble<F> {
    fn input_gradient(&self, x: &[f64], upstream: &[f64]) -> Vec<f64> {
        let mut total = vec![0.0; self.d];
        for (beta, f) in &self.stages {
            for (t, g) in total.iter_mut().zip(f.input_gradient(x, upstream)) {
                *t += beta * g;
            }
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypotheses::LinearScorer;

    #[test]
    fn scores_are_weighted_sums() {
        let a = LinearScorer::new(vec![vec![1.0], vec![0.0]], vec![0.0, 1.0]).unwrap();
        let b = LinearScorer::new(vec![vec![0.0], vec![2.0]], vec![1.0, 0.0]).unwrap();
        let ens = AdditiveEnsemble::from_stages(vec![(2.0, a), (0.5, b)], 2, 1).unwrap();
        assert_eq!(ens.scores(&[1.0]), vec![2.0 * 1.0 + 0.5 * 1.0, 2.0 * 1.0 + 0.5 * 2.0]);
        assert_eq!(ens.input_gradient(&[1.0], &[1.0, 1.0]), vec![2.0 + 0.5 * 2.0]);
        assert_eq!(AdditiveEnsemble::<LinearScorer>::empty(2, 1).scores(&[3.0]), vec![0.0, 0.0]);
    }
}
