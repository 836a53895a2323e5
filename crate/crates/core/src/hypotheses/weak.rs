//! Exhaustive robust decision-stump weak learners.
//!
//! For a fixed feature, the certified reach state of example `i` depends on
//! the threshold only through its position relative to `x_ij - delta` and
//! `x_ij + delta`, so the weighted robust error is piecewise constant in the
//! threshold with breakpoints exactly there. Scanning those breakpoints (plus
//! midpoints and both infinities) attains the optimum over all thresholds.

use super::DecisionStump;
use crate::domain::{Dataset, FiniteDistribution, IncorrectPairSet, Label, Norm, PerturbationBall};
use crate::error::{Error, Result};

#[derive(Clone, Copy, PartialEq, Eq)]
enum Side {
    Left,
    Right,
    Both,
}

/// Candidate thresholds for each feature, ascending and deduplicated.
#[derive(Debug, Clone)]
pub struct StumpSearch {
    pub thresholds: Vec<Vec<f64>>,
    pub labels: Vec<Label>,
}

impl StumpSearch {
    pub fn new(dataset: &Dataset, ball: &PerturbationBall) -> Result<Self> {
        if ball.norm == Norm::L2 && dataset.dim() > 1 {
            return Err(Error::UnsupportedNorm("stump training needs l-inf when d > 1".into()));
        }
        let delta = ball.delta;
        let thresholds = (0..dataset.dim())
            .map(|j| {
                let mut values: Vec<f64> = dataset.examples().iter().map(|e| e.x[j]).collect();
                values.sort_by(f64::total_cmp);
                values.dedup();
                let mut cands = vec![f64::NEG_INFINITY, f64::INFINITY];
                cands.extend(values.windows(2).map(|w| 0.5 * (w[0] + w[1])));
                for &v in &values {
                    cands.push(v - delta);
                    cands.push(v + delta);
                }
                cands.sort_by(f64::total_cmp);
                cands.dedup();
                cands
            })
            .collect();
        Ok(Self {
            thresholds,
            labels: dataset.present_labels(),
        })
    }

    /// Every stump of the candidate grid, in the learner's tie-break order.
    pub fn candidates(&self) -> impl Iterator<Item = DecisionStump> + '_ {
        self.thresholds.iter().enumerate().flat_map(move |(j, ts)| {
            ts.iter().flat_map(move |&t| {
                self.labels.iter().flat_map(move |&l| {
                    self.labels.iter().map(move |&r| DecisionStump::new(j, t, l, r))
                })
            })
        })
    }
}

fn side(value: f64, threshold: f64, delta: f64) -> Side {
    if value + delta <= threshold {
        Side::Left
    } else if value - delta > threshold {
        Side::Right
    } else {
        Side::Both
    }
}

/// Scans every stump and returns the lexicographically first minimizer of
/// `cost(example, reach set)` summed over examples.
fn scan<C>(dataset: &Dataset, search: &StumpSearch, delta: f64, cost: C) -> (DecisionStump, f64)
where
    C: Fn(usize, Label, Option<Label>) -> f64,
{
    let m = dataset.len();
    let mut best: Option<(DecisionStump, f64)> = None;
    let mut sides = vec![Side::Left; m];
    for (j, ts) in search.thresholds.iter().enumerate() {
        for &t in ts {
            for (i, ex) in dataset.examples().iter().enumerate() {
                sides[i] = side(ex.x[j], t, delta);
            }
            for &left in &search.labels {
                for &right in &search.labels {
                    let mut total = 0.0;
                    for (i, s) in sides.iter().enumerate() {
                        total += match s {
                            Side::Left => cost(i, left, None),
                            Side::Right => cost(i, right, None),
                            Side::Both if left == right => cost(i, left, None),
                            Side::Both => cost(i, left, Some(right)),
                        };
                    }
                    if best.as_ref().is_none_or(|(_, b)| total < *b) {
                        best = Some((DecisionStump::new(j, t, left, right), total));
                    }
                }
            }
        }
    }
    best.expect("candidate grid is never empty")
}

/// Best stump under the robust pair error `err_delta(h, D)` with `D` over the
/// incorrect-pair set. Ties go to the smallest `(feature, threshold, left, right)`.
pub fn train_stump_weak_learner(
    dataset: &Dataset,
    pairs: &IncorrectPairSet,
    dist: &FiniteDistribution,
    ball: &PerturbationBall,
) -> Result<(DecisionStump, f64)> {
    dist.check_support(pairs.len())?;
    let k = dataset.num_classes();
    // pair_weight[i][y'] = D(i, y'); total[i] = sum over y'.
    let mut pair_weight = vec![vec![0.0; k]; dataset.len()];
    for (p, &w) in pairs.pairs().iter().zip(dist.weights()) {
        pair_weight[p.example][p.wrong] += w;
    }
    let totals: Vec<f64> = pair_weight.iter().map(|row| row.iter().sum()).collect();
    let search = StumpSearch::new(dataset, ball)?;
    let cost = |i: usize, a: Label, b: Option<Label>| {
        let y = dataset.example(i).y;
        // sum_{y'} D(i, y') (1{y' in set} - 1{set = {y}})
        match b {
            None if a == y => -totals[i],
            None => pair_weight[i][a],
            Some(b) => pair_weight[i][a] + pair_weight[i][b],
        }
    };
    Ok(scan(dataset, &search, ball.delta, cost))
}

/// Best stump under the one-vs-all robust error `err^ova_delta(h, D)` with
/// `D` over the examples.
pub fn train_stump_ova_weak_learner(
    dataset: &Dataset,
    dist: &FiniteDistribution,
    ball: &PerturbationBall,
) -> Result<(DecisionStump, f64)> {
    dist.check_support(dataset.len())?;
    let w = dist.weights();
    let search = StumpSearch::new(dataset, ball)?;
    let cost = |i: usize, a: Label, b: Option<Label>| {
        let y = dataset.example(i).y;
        if b.is_none() && a == y {
            -w[i]
        } else {
            w[i]
        }
    };
    Ok(scan(dataset, &search, ball.delta, cost))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_incorrect_pairs, Example};
    use crate::losses::{weighted_err_delta, ExactStumpEvaluator};

    fn line(points: &[(f64, Label)]) -> Dataset {
        Dataset::new(points.iter().map(|&(x, y)| Example::new(vec![x], y)).collect(), 2).unwrap()
    }

    #[test]
    fn separable_data_gets_perfect_robust_stump() {
        let ds = line(&[(-2.0, 0), (-1.0, 0), (1.0, 1), (2.0, 1)]);
        let pairs = build_incorrect_pairs(&ds);
        let d = FiniteDistribution::uniform(pairs.len()).unwrap();
        let ball = PerturbationBall::linf(0.5).unwrap();
        let (stump, err) = train_stump_weak_learner(&ds, &pairs, &d, &ball).unwrap();
        assert_eq!(err, -1.0);
        let check = weighted_err_delta(&stump, &ExactStumpEvaluator, &ball, &ds, &pairs, &d).unwrap();
        assert_eq!(check.value, -1.0);
    }

    #[test]
    fn huge_radius_falls_back_to_majority_constant() {
        let ds = line(&[(-1.0, 0), (0.0, 0), (1.0, 1)]);
        let pairs = build_incorrect_pairs(&ds);
        let d = FiniteDistribution::uniform(pairs.len()).unwrap();
        let ball = PerturbationBall::linf(10.0).unwrap();
        let (_, err) = train_stump_weak_learner(&ds, &pairs, &d, &ball).unwrap();
        // Constant 0: two examples at -1, one at +1.
        assert!((err - (-1.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn single_point() {
        let ds = line(&[(0.7, 1)]);
        let pairs = build_incorrect_pairs(&ds);
        let d = FiniteDistribution::uniform(pairs.len()).unwrap();
        let ball = PerturbationBall::linf(0.3).unwrap();
        let (_, err) = train_stump_weak_learner(&ds, &pairs, &d, &ball).unwrap();
        assert_eq!(err, -1.0);
    }

    #[test]
    fn ova_learner_on_separable_data() {
        let ds = line(&[(-2.0, 0), (-1.0, 0), (1.0, 1), (2.0, 1)]);
        let d = FiniteDistribution::uniform(ds.len()).unwrap();
        let ball = PerturbationBall::linf(0.5).unwrap();
        let (_, err) = train_stump_ova_weak_learner(&ds, &d, &ball).unwrap();
        assert_eq!(err, -1.0);
    }
}
