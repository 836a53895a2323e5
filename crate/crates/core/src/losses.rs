//! Pairwise, one-vs-all and cross-entropy losses, and their weighted error
//! rates.
//!
//! Robust losses need the set of labels a hypothesis can be driven to over
//! `x + ball`; that set comes from a [`RobustEvaluator`]. Exact evaluators
//! return it exactly (`certified() == true`); heuristic ones return a subset.

use serde::Serialize;

use crate::domain::{Dataset, FiniteDistribution, IncorrectPairSet, Label, LabelSet, PerturbationBall};
use crate::error::{Error, Result};
use crate::hypotheses::{
    argmax_label, ce_score_gradient, Argmax, DecisionStump, Differentiable, LinearScorer, MultilabelPredictor, ReachMode,
    UnilabelPredictor,
};
use crate::pgd::{pgd_maximize, targeted_reach_set, PgdConfig};

/// Computes `{h(x + z) : z in ball}`.
pub trait RobustEvaluator<H: ?Sized> {
    fn reach_set(&self, h: &H, x: &[f64], ball: &PerturbationBall) -> Result<LabelSet>;
    /// `true` when `reach_set` is exact rather than a subset.
    fn certified(&self) -> bool;
}

/// Interval arithmetic on the stump's feature.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactStumpEvaluator;

impl RobustEvaluator<DecisionStump> for ExactStumpEvaluator {
    fn reach_set(&self, h: &DecisionStump, x: &[f64], ball: &PerturbationBall) -> Result<LabelSet> {
        h.reach_set(x, ball)
    }

    fn certified(&self) -> bool {
        true
    }
}

/// Dual-norm test (k = 2) or vertex enumeration (k >= 3, l-inf). Errors out
/// where neither applies rather than approximating.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactLinearEvaluator;

impl RobustEvaluator<LinearScorer> for ExactLinearEvaluator {
    fn reach_set(&self, h: &LinearScorer, x: &[f64], ball: &PerturbationBall) -> Result<LabelSet> {
        Ok(h.reach_set(x, ball, &ReachMode::Exact)?.labels)
    }

    fn certified(&self) -> bool {
        true
    }
}

impl RobustEvaluator<Argmax<LinearScorer>> for ExactLinearEvaluator {
    fn reach_set(&self, h: &Argmax<LinearScorer>, x: &[f64], ball: &PerturbationBall) -> Result<LabelSet> {
        self.reach_set(&h.0, x, ball)
    }

    fn certified(&self) -> bool {
        true
    }
}

/// Dense grid search over the ball for `d <= 2`.
///
/// The grid has `per_axis` points per coordinate spanning `[-delta, delta]`
/// (plus the origin); for l2 only points inside the ball are kept and
/// `4 * per_axis` points of the boundary circle are added. Misses regions
/// thinner than the grid spacing, hence not certified.
#[derive(Debug, Clone, Copy)]
pub struct GridEvaluator {
    pub per_axis: usize,
}

impl GridEvaluator {
    pub fn new(per_axis: usize) -> Self {
        Self { per_axis: per_axis.max(2) }
    }

    /// All perturbations the grid visits.
    pub fn points(&self, dim: usize, ball: &PerturbationBall) -> Result<Vec<Vec<f64>>> {
        if dim > 2 {
            return Err(Error::InvalidConfig(format!("grid search supports d <= 2, got {dim}")));
        }
        let delta = ball.delta;
        let n = self.per_axis;
        let axis: Vec<f64> = (0..n).map(|i| -delta + 2.0 * delta * i as f64 / (n - 1) as f64).collect();
        let mut points = vec![vec![0.0; dim]];
        if delta == 0.0 {
            return Ok(points);
        }
        match dim {
            1 => points.extend(axis.iter().map(|&a| vec![a])),
            _ => {
                for &a in &axis {
                    for &b in &axis {
                        let z = vec![a, b];
                        if ball.contains(&z) {
                            points.push(z);
                        }
                    }
                }
                if ball.norm == crate::domain::Norm::L2 {
                    let ring = 4 * n;
                    for i in 0..ring {
                        let angle = std::f64::consts::TAU * i as f64 / ring as f64;
                        points.push(ball.project(&[delta * angle.cos(), delta * angle.sin()]));
                    }
                }
            }
        }
        Ok(points)
    }
}

impl<H: UnilabelPredictor + ?Sized> RobustEvaluator<H> for GridEvaluator {
    fn reach_set(&self, h: &H, x: &[f64], ball: &PerturbationBall) -> Result<LabelSet> {
        let mut labels = LabelSet::empty();
        let mut xz = x.to_vec();
        for z in self.points(x.len(), ball)? {
            for ((o, a), b) in xz.iter_mut().zip(x).zip(&z) {
                *o = a + b;
            }
            labels.insert(h.predict(&xz));
        }
        Ok(labels)
    }

    fn certified(&self) -> bool {
        false
    }
}

/// Targeted PGD attacks against every non-clean label.
#[derive(Debug, Clone)]
pub struct PgdEvaluator {
    pub config: PgdConfig,
}

impl<F: Differentiable> RobustEvaluator<Argmax<F>> for PgdEvaluator {
    fn reach_set(&self, h: &Argmax<F>, x: &[f64], ball: &PerturbationBall) -> Result<LabelSet> {
        targeted_reach_set(&h.0, x, ball, &self.config)
    }

    fn certified(&self) -> bool {
        false
    }
}

fn indicator(b: bool) -> i8 {
    i8::from(b)
}

/// `1{y' in set} - 1{set = {y}}`: the robust pair loss in terms of a reach set.
pub fn set_pair_loss(set: &LabelSet, y: Label, wrong: Label) -> i8 {
    indicator(set.contains(wrong)) - indicator(set.is_singleton_of(y))
}

/// `+1` if the set contains anything other than `y`, else `-1`.
pub fn set_ova_loss(set: &LabelSet, y: Label) -> i8 {
    if set.is_singleton_of(y) {
        -1
    } else {
        1
    }
}

/// `l(h; x, y, y') = 1{y' in h(x)} - 1{y in h(x)}`.
pub fn base_loss<H: MultilabelPredictor + ?Sized>(h: &H, x: &[f64], y: Label, wrong: Label) -> Result<i8> {
    if y == wrong {
        return Err(Error::SameLabel { label: y });
    }
    let out = h.predict_set(x);
    Ok(indicator(out.contains(wrong)) - indicator(out.contains(y)))
}

/// `l_delta(h; x, y, y') = 1{y' reachable} - 1{only y reachable}`.
pub fn robust_pair_loss<H, E>(
    h: &H,
    evaluator: &E,
    ball: &PerturbationBall,
    x: &[f64],
    y: Label,
    wrong: Label,
) -> Result<i8>
where
    H: ?Sized,
    E: RobustEvaluator<H> + ?Sized,
{
    if y == wrong {
        return Err(Error::SameLabel { label: y });
    }
    Ok(set_pair_loss(&evaluator.reach_set(h, x, ball)?, y, wrong))
}

/// `l^ova_delta(h; x, y) = 2 * 1{some label other than y reachable} - 1`.
pub fn ova_loss<H, E>(h: &H, evaluator: &E, ball: &PerturbationBall, x: &[f64], y: Label) -> Result<i8>
where
    H: ?Sized,
    E: RobustEvaluator<H> + ?Sized,
{
    Ok(set_ova_loss(&evaluator.reach_set(h, x, ball)?, y))
}

/// `-ln softmax(scores)_y`, stabilized by subtracting the maximum score.
pub fn ce_loss(scores: &[f64], y: Label) -> f64 {
    let top = argmax_label(scores);
    let max = scores[top];
    // The top term is exactly 1; ln_1p keeps precision when the rest is tiny.
    let rest: f64 = scores
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != top)
        .map(|(_, s)| (s - max).exp())
        .sum();
    ((max - scores[y]) + rest.ln_1p()).max(0.0)
}

/// `sup_{z in ball} ce_loss(f(x + z), y)` estimated by PGD. The zero start is
/// always included, so the result is at least the clean loss.
pub fn robust_ce_loss<F>(f: &F, pgd: &PgdConfig, ball: &PerturbationBall, x: &[f64], y: Label) -> Result<f64>
where
    F: Differentiable + ?Sized,
{
    let cfg = PgdConfig {
        include_zero_start: true,
        ..pgd.clone()
    };
    let mut xz = x.to_vec();
    let out = pgd_maximize(
        |z| {
            for ((o, a), b) in xz.iter_mut().zip(x).zip(z) {
                *o = a + b;
            }
            let s = f.scores(&xz);
            (ce_loss(&s, y), f.input_gradient(&xz, &ce_score_gradient(&s, y)))
        },
        x.len(),
        ball,
        &cfg,
    )?;
    Ok(out.loss)
}

/// A weighted error rate and whether it was computed with exact reach sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorRate {
    pub value: f64,
    pub certified: bool,
}

/// Weights sum to one only up to rounding; keep expectations of +-1 losses
/// inside `[-1, 1]`.
fn clamp_unit(v: f64) -> f64 {
    v.clamp(-1.0, 1.0)
}

/// `err(h, D) = E_{(i, y') ~ D} l(h; x_i, y_i, y')`.
pub fn weighted_err<H: MultilabelPredictor + ?Sized>(
    h: &H,
    dataset: &Dataset,
    pairs: &IncorrectPairSet,
    dist: &FiniteDistribution,
) -> Result<f64> {
    dist.check_support(pairs.len())?;
    let mut total = 0.0;
    for (p, &w) in pairs.pairs().iter().zip(dist.weights()) {
        let ex = dataset.example(p.example);
        total += w * f64::from(base_loss(h, &ex.x, ex.y, p.wrong)?);
    }
    Ok(clamp_unit(total))
}

/// Reach set of every training example.
pub fn reach_sets<H, E>(h: &H, evaluator: &E, ball: &PerturbationBall, dataset: &Dataset) -> Result<Vec<LabelSet>>
where
    H: ?Sized,
    E: RobustEvaluator<H> + ?Sized,
{
    dataset.examples().iter().map(|ex| evaluator.reach_set(h, &ex.x, ball)).collect()
}

/// `err_delta(h, D) = E_{(i, y') ~ D} l_delta(h; x_i, y_i, y')`.
pub fn weighted_err_delta<H, E>(
    h: &H,
    evaluator: &E,
    ball: &PerturbationBall,
    dataset: &Dataset,
    pairs: &IncorrectPairSet,
    dist: &FiniteDistribution,
) -> Result<ErrorRate>
where
    H: ?Sized,
    E: RobustEvaluator<H> + ?Sized,
{
    dist.check_support(pairs.len())?;
    let sets = reach_sets(h, evaluator, ball, dataset)?;
    let value = pairs
        .pairs()
        .iter()
        .zip(dist.weights())
        .map(|(p, &w)| w * f64::from(set_pair_loss(&sets[p.example], dataset.example(p.example).y, p.wrong)))
        .sum();
    Ok(ErrorRate {
        value: clamp_unit(value),
        certified: evaluator.certified(),
    })
}

/// `err^ova_delta(h, D) = E_{i ~ D} l^ova_delta(h; x_i, y_i)`.
pub fn weighted_err_ova<H, E>(
    h: &H,
    evaluator: &E,
    ball: &PerturbationBall,
    dataset: &Dataset,
    dist: &FiniteDistribution,
) -> Result<ErrorRate>
where
    H: ?Sized,
    E: RobustEvaluator<H> + ?Sized,
{
    dist.check_support(dataset.len())?;
    let mut value = 0.0;
    for (ex, &w) in dataset.examples().iter().zip(dist.weights()) {
        value += w * f64::from(ova_loss(h, evaluator, ball, &ex.x, ex.y)?);
    }
    Ok(ErrorRate {
        value: clamp_unit(value),
        certified: evaluator.certified(),
    })
}

/// The multilabel hypothesis `h~` defined on the training inputs by
/// `h~(x_i) = {y_i if only y_i is reachable} ∪ (reachable labels other than y_i)`.
///
/// Its plain pair loss equals the robust pair loss of `h`:
/// `l(h~; x_i, y_i, y') = l_delta(h; x_i, y_i, y')`.
#[derive(Debug, Clone, PartialEq)]
pub struct TildeHypothesis {
    inputs: Vec<Vec<f64>>,
    outputs: Vec<LabelSet>,
}

impl TildeHypothesis {
    pub fn materialize<H, E>(h: &H, evaluator: &E, ball: &PerturbationBall, dataset: &Dataset) -> Result<Self>
    where
        H: ?Sized,
        E: RobustEvaluator<H> + ?Sized,
    {
        let sets = reach_sets(h, evaluator, ball, dataset)?;
        let outputs = dataset
            .examples()
            .iter()
            .zip(sets)
            .map(|(ex, reach)| {
                let mut out = LabelSet::from_labels(reach.labels().iter().copied().filter(|&c| c != ex.y));
                if reach.is_singleton_of(ex.y) {
                    out.insert(ex.y);
                }
                out
            })
            .collect();
        Ok(Self {
            inputs: dataset.examples().iter().map(|e| e.x.clone()).collect(),
            outputs,
        })
    }

    /// Output on the `i`-th training input.
    pub fn output(&self, i: usize) -> &LabelSet {
        &self.outputs[i]
    }
}

impl MultilabelPredictor for TildeHypothesis {
    /// Output at the first training input equal to `x`; empty elsewhere.
    fn predict_set(&self, x: &[f64]) -> LabelSet {
        self.inputs
            .iter()
            .position(|xi| xi.as_slice() == x)
            .map(|i| self.outputs[i].clone())
            .unwrap_or_else(LabelSet::empty)
    }
}
