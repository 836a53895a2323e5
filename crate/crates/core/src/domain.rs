//! Shared domain types: examples, datasets, incorrect-label pairs,
//! finite distributions and perturbation balls.
//!
//! Labels are 0-based everywhere inside the library. Conversion to the
//! 1-based labels of external files happens in the CLI.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A class index in `0..k`.
pub type Label = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub x: Vec<f64>,
    pub y: Label,
}

impl Example {
    pub fn new(x: Vec<f64>, y: Label) -> Self {
        Self { x, y }
    }
}

/// A validated training set `S` with `k >= 2` classes in dimension `d >= 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    examples: Vec<Example>,
    k: usize,
    d: usize,
}

impl Dataset {
    pub fn new(examples: Vec<Example>, k: usize) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::InvalidDataset("dataset has no examples".into()));
        }
        if k < 2 {
            return Err(Error::InvalidDataset(format!("need k >= 2 classes, got {k}")));
        }
        let d = examples[0].x.len();
        if d == 0 {
            return Err(Error::InvalidDataset("feature dimension is zero".into()));
        }
        for (i, ex) in examples.iter().enumerate() {
            if ex.x.len() != d {
                return Err(Error::InvalidDataset(format!(
                    "example {i} has dimension {} (expected {d})",
                    ex.x.len()
                )));
            }
            if ex.y >= k {
                return Err(Error::InvalidDataset(format!(
                    "example {i} has label {} outside 0..{k}",
                    ex.y
                )));
            }
            if ex.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidDataset(format!("example {i} has a non-finite feature")));
            }
        }
        Ok(Self { examples, k, d })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn example(&self, i: usize) -> &Example {
        &self.examples[i]
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Labels that actually occur in the data, ascending.
    pub fn present_labels(&self) -> Vec<Label> {
        let mut seen = vec![false; self.k];
        for ex in &self.examples {
            seen[ex.y] = true;
        }
        (0..self.k).filter(|&c| seen[c]).collect()
    }
}

/// An (example index, wrong label) pair of the incorrect-pair set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pair {
    pub example: usize,
    pub wrong: Label,
}

/// All `(i, y')` with `y' != y_i`, in ascending `(i, y')` order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncorrectPairSet {
    pairs: Vec<Pair>,
}

impl IncorrectPairSet {
    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

pub fn build_incorrect_pairs(dataset: &Dataset) -> IncorrectPairSet {
    let k = dataset.num_classes();
    let mut pairs = Vec::with_capacity(dataset.len() * (k - 1));
    for (i, ex) in dataset.examples().iter().enumerate() {
        for wrong in (0..k).filter(|&c| c != ex.y) {
            pairs.push(Pair { example: i, wrong });
        }
    }
    IncorrectPairSet { pairs }
}

/// Nonnegative weights summing to one (within 1e-9) over some indexed support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FiniteDistribution {
    weights: Vec<f64>,
}

const SUM_TOLERANCE: f64 = 1e-9;

impl FiniteDistribution {
    /// Divides a nonnegative weight vector by its sum.
    pub fn normalize(raw: &[f64]) -> Result<Self> {
        for (index, &value) in raw.iter().enumerate() {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(Error::NegativeWeight { index, value });
            }
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(Error::AllZeroWeights);
        }
        Ok(Self {
            weights: raw.iter().map(|w| w / total).collect(),
        })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::AllZeroWeights);
        }
        Ok(Self {
            weights: vec![1.0 / n as f64; n],
        })
    }

    /// Wraps weights that are already normalized, checking the invariant.
    pub fn from_normalized(weights: Vec<f64>) -> Result<Self> {
        for (index, &value) in weights.iter().enumerate() {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(Error::NegativeWeight { index, value });
            }
        }
        let total: f64 = weights.iter().sum();
        if total == 0.0 {
            return Err(Error::AllZeroWeights);
        }
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidConfig(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Expectation of `values` under this distribution.
    pub fn expect(&self, values: impl IntoIterator<Item = f64>) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// Convex combination `lambda * self + (1 - lambda) * other`.
    pub fn mix(&self, other: &Self, lambda: f64) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::SupportMismatch {
                expected: self.len(),
                got: other.len(),
            });
        }
        let raw: Vec<f64> = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
            .collect();
        Self::normalize(&raw)
    }

    pub(crate) fn check_support(&self, expected: usize) -> Result<()> {
        if self.len() != expected {
            return Err(Error::SupportMismatch {
                expected,
                got: self.len(),
            });
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for FiniteDistribution {
    type Error = Error;

    fn try_from(weights: Vec<f64>) -> Result<Self> {
        Self::from_normalized(weights)
    }
}

impl From<FiniteDistribution> for Vec<f64> {
    fn from(d: FiniteDistribution) -> Self {
        d.weights
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Norm {
    #[serde(rename = "2")]
    L2,
    #[serde(rename = "inf")]
    LInf,
}

impl Norm {
    /// The p-norm of `v`.
    pub fn of(self, v: &[f64]) -> f64 {
        match self {
            Norm::L2 => v.iter().map(|a| a * a).sum::<f64>().sqrt(),
            Norm::LInf => v.iter().fold(0.0, |m, a| m.max(a.abs())),
        }
    }

    /// The dual norm of `v` (l1 for l-inf, l2 for l2).
    pub fn dual_of(self, v: &[f64]) -> f64 {
        match self {
            Norm::L2 => Norm::L2.of(v),
            Norm::LInf => v.iter().map(|a| a.abs()).sum(),
        }
    }
}

impl std::fmt::Display for Norm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Norm::L2 => write!(f, "2"),
            Norm::LInf => write!(f, "inf"),
        }
    }
}

impl std::str::FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2" | "l2" | "L2" => Ok(Norm::L2),
            "inf" | "linf" | "Linf" | "LInf" => Ok(Norm::LInf),
            other => Err(Error::UnsupportedNorm(other.to_string())),
        }
    }
}

/// The adversary's budget `B_p(delta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationBall {
    pub norm: Norm,
    pub delta: f64,
}

impl PerturbationBall {
    pub fn new(norm: Norm, delta: f64) -> Result<Self> {
        if !(delta >= 0.0) || !delta.is_finite() {
            return Err(Error::InvalidConfig(format!("radius must be finite and >= 0, got {delta}")));
        }
        Ok(Self { norm, delta })
    }

    pub fn linf(delta: f64) -> Result<Self> {
        Self::new(Norm::LInf, delta)
    }

    pub fn l2(delta: f64) -> Result<Self> {
        Self::new(Norm::L2, delta)
    }

    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        Self::new(self.norm, delta)
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        self.norm.of(z) <= self.delta + 1e-12
    }

    /// Euclidean projection onto the ball.
    pub fn project(&self, z: &[f64]) -> Vec<f64> {
        let mut out = z.to_vec();
        self.project_in_place(&mut out);
        out
    }

    pub fn project_in_place(&self, z: &mut [f64]) {
        let delta = self.delta;
        match self.norm {
            Norm::LInf => {
                for v in z.iter_mut() {
                    *v = v.clamp(-delta, delta);
                }
            }
            Norm::L2 => {
                // Rounding can leave the scaled vector a hair outside, so
                // shrink until the norm is at most delta; this also makes the
                // projection exactly idempotent.
                let mut norm = Norm::L2.of(z);
                while norm > delta {
                    let scale = (delta / norm).min(1f64.next_down());
                    for v in z.iter_mut() {
                        *v *= scale;
                    }
                    norm = Norm::L2.of(z);
                }
            }
        }
    }
}

/// A set of labels, stored as a sorted, deduplicated list.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct LabelSet(Vec<Label>);

impl LabelSet {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn singleton(y: Label) -> Self {
        Self(vec![y])
    }

    pub fn from_labels(labels: impl IntoIterator<Item = Label>) -> Self {
        let mut v: Vec<Label> = labels.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        Self(v)
    }

    pub fn insert(&mut self, y: Label) {
        if let Err(pos) = self.0.binary_search(&y) {
            self.0.insert(pos, y);
        }
    }

    pub fn contains(&self, y: Label) -> bool {
        self.0.binary_search(&y).is_ok()
    }

    pub fn is_singleton_of(&self, y: Label) -> bool {
        self.0.len() == 1 && self.0[0] == y
    }

    pub fn labels(&self) -> &[Label] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_subset_of(&self, other: &LabelSet) -> bool {
        self.0.iter().all(|&y| other.contains(y))
    }
}
