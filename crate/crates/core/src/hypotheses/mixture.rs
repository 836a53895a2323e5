use super::{argmax_label, DecisionStump, UnilabelPredictor};
use crate::domain::{FiniteDistribution, Label, Norm, PerturbationBall};
use crate::error::{Error, Result};

/// A finite distribution `Q` over unilabel hypotheses.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureQ<H> {
    components: Vec<H>,
    weights: FiniteDistribution,
    k: usize,
}

impl<H> MixtureQ<H> {
    pub fn new(components: Vec<H>, weights: FiniteDistribution, k: usize) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::EmptyMixture);
        }
        weights.check_support(components.len())?;
        Ok(Self { components, weights, k })
    }

    pub fn uniform(components: Vec<H>, k: usize) -> Result<Self> {
        let weights = FiniteDistribution::uniform(components.len()).map_err(|_| Error::EmptyMixture)?;
        Self::new(components, weights, k)
    }

    pub fn components(&self) -> &[H] {
        &self.components
    }

    pub fn weights(&self) -> &FiniteDistribution {
        &self.weights
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &H)> {
        self.weights.weights().iter().copied().zip(&self.components)
    }
}

impl<H: UnilabelPredictor> MixtureQ<H> {
    /// `h_Q(x)`: the Q-mass voting for each label.
    pub fn vote_mass(&self, x: &[f64]) -> Vec<f64> {
        let mut mass = vec![0.0; self.k];
        for (w, h) in self.iter() {
            mass[h.predict(x)] += w;
        }
        mass
    }

    /// `h_Q^am(x)`, ties broken toward the lowest label.
    pub fn plurality_vote(&self, x: &[f64]) -> Label {
        argmax_label(&self.vote_mass(x))
    }

    /// `Pr_{h ~ Q}[h(x) = y]`.
    pub fn prob_of(&self, x: &[f64], y: Label) -> f64 {
        self.iter().filter(|(_, h)| h.predict(x) == y).map(|(w, _)| w).sum()
    }
}

impl<H: UnilabelPredictor> UnilabelPredictor for MixtureQ<H> {
    fn predict(&self, x: &[f64]) -> Label {
        self.plurality_vote(x)
    }
}

impl MixtureQ<DecisionStump> {
    /// Exact check that the plurality vote equals `y` on all of `x + ball`
    /// (l-inf, or l2 in one dimension).
    ///
    /// Each label's vote mass is a sum of one-dimensional step functions, one
    /// per feature, so the worst case of `mass[y'] - mass[y]` over a box
    /// splits into independent per-feature maximizations over intervals.
    /// Near-ties within 1e-12 are reported as not robust.
    pub fn robust_vote_holds(&self, x: &[f64], y: Label, ball: &PerturbationBall) -> Result<bool> {
        if ball.norm == Norm::L2 && x.len() > 1 {
            return Err(Error::UnsupportedNorm("exact stump-vote check needs l-inf when d > 1".into()));
        }
        let d = x.len();
        for rival in (0..self.k).filter(|&c| c != y) {
            let mut worst = 0.0;
            for j in 0..d {
                let members: Vec<(f64, &DecisionStump)> = self.iter().filter(|(_, s)| s.feature == j).collect();
                if members.is_empty() {
                    continue;
                }
                let (lo, hi) = (x[j] - ball.delta, x[j] + ball.delta);
                // The per-feature advantage is constant between thresholds;
                // probe both interval ends plus each threshold and its right
                // neighbour inside the interval.
                let mut probes = vec![lo, hi];
                for (_, s) in &members {
                    let t = s.threshold;
                    if t >= lo && t <= hi {
                        probes.push(t);
                        let after = t.next_up();
                        if after <= hi {
                            probes.push(after);
                        }
                    }
                }
                let advantage = |v: f64| {
                    members
                        .iter()
                        .map(|(w, s)| {
                            let label = if v <= s.threshold { s.left } else { s.right };
                            if label == rival {
                                *w
                            } else if label == y {
                                -*w
                            } else {
                                0.0
                            }
                        })
                        .sum::<f64>()
                };
                worst += probes.into_iter().map(advantage).fold(f64::NEG_INFINITY, f64::max);
            }
            let flips = if rival < y { worst >= -1e-12 } else { worst > -1e-12 };
            if flips {
                return Ok(false);
            }
        }
        Ok(true)
    }
}
