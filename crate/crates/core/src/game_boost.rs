//! Minimax boosting with Hedge.
//!
//! The booster plays Hedge over the incorrect-pair set (or over the examples
//! in one-vs-all mode), up-weighting pairs on which the latest hypothesis did
//! badly, and queries the weak learner at each round's distribution. The
//! final mixture is uniform over the rounds. If every round has edge `gamma`,
//! every pair's mixture loss is at most `-gamma / 2`, so the plurality vote is
//! correct on the whole perturbation ball around every training point.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{build_incorrect_pairs, Dataset, FiniteDistribution, LabelSet, PerturbationBall};
use crate::error::{Error, Result};
use crate::hypotheses::MixtureQ;
use crate::losses::{set_ova_loss, set_pair_loss, RobustEvaluator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Weighted robust error of the round's hypothesis under the round's distribution.
    pub achieved: f64,
    /// Largest mixture pair loss after this round.
    pub max_margin: f64,
    pub elapsed_ms: u64,
}

/// `T = ceil(16 ln(max(N, 2)) / gamma^2)`.
pub fn rounds_for_margin(gamma: f64, n: usize) -> Result<usize> {
    check_gamma(gamma)?;
    Ok((16.0 * (n.max(2) as f64).ln() / (gamma * gamma)).ceil() as usize)
}

/// `eta = min(gamma / 4, sqrt(ln N / T))`.
pub fn auto_eta(gamma: f64, n: usize, rounds: usize) -> f64 {
    (gamma / 4.0).min(((n.max(2) as f64).ln() / rounds as f64).sqrt())
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidGamma(gamma))
    }
}

/// Multiplicative weights over a finite support.
///
/// Weights are kept as cumulative losses, `D(j) ∝ exp(eta * L_j)`, which is
/// the same distribution as repeated `w <- w * exp(eta * loss)` updates but
/// does not underflow over long runs.
#[derive(Debug, Clone, PartialEq)]
pub struct HedgeState {
    dist: FiniteDistribution,
    cumulative: Vec<f64>,
    round: usize,
    eta: f64,
}

impl HedgeState {
    pub fn new(n: usize, eta: f64) -> Result<Self> {
        if !(eta >= 0.0) || !eta.is_finite() {
            return Err(Error::InvalidConfig(format!("Hedge step must be >= 0, got {eta}")));
        }
        Ok(Self {
            dist: FiniteDistribution::uniform(n)?,
            cumulative: vec![0.0; n],
            round: 0,
            eta,
        })
    }

    /// Starts from an arbitrary distribution (all entries must be positive).
    pub fn from_distribution(dist: FiniteDistribution, eta: f64) -> Result<Self> {
        let mut state = Self::new(dist.len(), eta)?;
        if let Some((index, &value)) = dist.weights().iter().enumerate().find(|(_, w)| **w <= 0.0) {
            return Err(Error::NegativeWeight { index, value });
        }
        // Fold the prior into the cumulative losses: D ∝ exp(eta L) ∝ prior.
        if eta > 0.0 {
            state.cumulative = dist.weights().iter().map(|w| w.ln() / eta).collect();
        }
        state.dist = dist;
        Ok(state)
    }

    pub fn distribution(&self) -> &FiniteDistribution {
        &self.dist
    }

    pub fn cumulative_losses(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }
}

/// One Hedge step: `w(j) <- w(j) exp(eta * loss(j))`, then normalize.
pub fn hedge_update(state: &HedgeState, losses: &[f64]) -> Result<HedgeState> {
    state.dist.check_support(losses.len())?;
    if state.eta == 0.0 {
        return Ok(HedgeState {
            round: state.round + 1,
            ..state.clone()
        });
    }
    let cumulative: Vec<f64> = state.cumulative.iter().zip(losses).map(|(c, l)| c + l).collect();
    let top = cumulative.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = cumulative.iter().map(|c| (state.eta * (c - top)).exp()).collect();
    Ok(HedgeState {
        dist: FiniteDistribution::normalize(&raw)?,
        cumulative,
        round: state.round + 1,
        eta: state.eta,
    })
}

/// Which loss the booster plays Hedge on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BoostMode {
    /// Distributions over incorrect pairs, robust pair loss.
    #[default]
    Pairs,
    /// Distributions over examples, one-vs-all robust loss.
    OneVsAll,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    pub gamma: f64,
    /// `None` picks [`rounds_for_margin`].
    pub rounds: Option<usize>,
    /// `None` picks [`auto_eta`].
    pub eta: Option<f64>,
    pub ball: PerturbationBall,
    pub require_certified: bool,
    pub mode: BoostMode,
    /// Stop as soon as every mixture pair loss is negative.
    pub early_stop: bool,
}

impl BoostConfig {
    pub fn new(gamma: f64, ball: PerturbationBall) -> Self {
        Self {
            gamma,
            rounds: None,
            eta: None,
            ball,
            require_certified: true,
            mode: BoostMode::Pairs,
            early_stop: true,
        }
    }
}

/// Mixture losses for one incorrect pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairMargin {
    pub example: usize,
    pub wrong: usize,
    /// `l_delta(Q; x, y, y') = sum_t Q(h_t) l_delta(h_t; x, y, y')`.
    pub margin: f64,
    /// `Pr_{h ~ Q}[h(x + z) = y for all z]`.
    pub prob_robust_correct: f64,
    /// `Pr_{h ~ Q}[h(x + z) = y' for some z]`.
    pub prob_reaches_wrong: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginReport {
    pub pairs: Vec<PairMargin>,
    pub max_margin: f64,
    /// `min_i Pr_{h ~ Q}[h(x_i + z) = y_i for all z]`.
    pub min_prob_robust_correct: f64,
}

impl MarginReport {
    /// A negative maximum means the plurality vote is robust on every example.
    pub fn all_negative(&self) -> bool {
        self.max_margin < 0.0
    }
}

fn par_reach_sets<H, E>(h: &H, evaluator: &E, ball: &PerturbationBall, dataset: &Dataset) -> Result<Vec<LabelSet>>
where
    H: Sync + ?Sized,
    E: RobustEvaluator<H> + Sync + ?Sized,
{
    dataset
        .examples()
        .par_iter()
        .map(|ex| evaluator.reach_set(h, &ex.x, ball))
        .collect()
}

fn report_from_sets(dataset: &Dataset, weights: &[f64], sets: &[Vec<LabelSet>]) -> MarginReport {
    let pairs = build_incorrect_pairs(dataset);
    let mut robust = vec![0.0; dataset.len()];
    for (w, per_example) in weights.iter().zip(sets) {
        for (i, s) in per_example.iter().enumerate() {
            if s.is_singleton_of(dataset.example(i).y) {
                robust[i] += w;
            }
        }
    }
    let entries: Vec<PairMargin> = pairs
        .pairs()
        .iter()
        .map(|p| {
            let y = dataset.example(p.example).y;
            let mut margin = 0.0;
            let mut reaches = 0.0;
            for (w, per_example) in weights.iter().zip(sets) {
                let s = &per_example[p.example];
                margin += w * f64::from(set_pair_loss(s, y, p.wrong));
                if s.contains(p.wrong) {
                    reaches += w;
                }
            }
            PairMargin {
                example: p.example,
                wrong: p.wrong,
                margin,
                prob_robust_correct: robust[p.example],
                prob_reaches_wrong: reaches,
            }
        })
        .collect();
    MarginReport {
        max_margin: entries.iter().map(|e| e.margin).fold(f64::NEG_INFINITY, f64::max),
        min_prob_robust_correct: robust.iter().cloned().fold(f64::INFINITY, f64::min),
        pairs: entries,
    }
}

/// Exact mixture losses of `q` on every incorrect pair of `dataset`.
pub fn margin_report<H, E>(q: &MixtureQ<H>, dataset: &Dataset, ball: &PerturbationBall, evaluator: &E) -> Result<MarginReport>
where
    H: Sync,
    E: RobustEvaluator<H> + Sync + ?Sized,
{
    if !evaluator.certified() {
        return Err(Error::NonCertifiedEvaluator);
    }
    let sets = q
        .components()
        .iter()
        .map(|h| par_reach_sets(h, evaluator, ball, dataset))
        .collect::<Result<Vec<_>>>()?;
    Ok(report_from_sets(dataset, q.weights().weights(), &sets))
}

#[derive(Debug, Clone)]
pub struct BoostOutcome<H> {
    pub mixture: MixtureQ<H>,
    pub report: MarginReport,
    pub trace: Vec<RoundRecord>,
}

/// Runs Hedge against `weak_learner` and returns the uniform mixture of the
/// hypotheses it produced.
///
/// `weak_learner` receives the round's distribution (over incorrect pairs,
/// or over examples in one-vs-all mode) and returns a hypothesis together
/// with the error it claims; the error is recomputed with `evaluator` and
/// the run fails if it exceeds `-gamma`.
pub fn run_boost<H, E, W>(dataset: &Dataset, mut weak_learner: W, evaluator: &E, config: &BoostConfig) -> Result<BoostOutcome<H>>
where
    H: Sync,
    E: RobustEvaluator<H> + Sync + ?Sized,
    W: FnMut(&FiniteDistribution) -> Result<(H, f64)>,
{
    check_gamma(config.gamma)?;
    if config.require_certified && !evaluator.certified() {
        return Err(Error::NonCertifiedEvaluator);
    }
    let started = Instant::now();
    let pairs = build_incorrect_pairs(dataset);
    let support = match config.mode {
        BoostMode::Pairs => pairs.len(),
        BoostMode::OneVsAll => dataset.len(),
    };
    let rounds = match config.rounds {
        Some(0) => return Err(Error::InvalidConfig("boosting needs at least one round".into())),
        Some(t) => t,
        None => rounds_for_margin(config.gamma, support)?,
    };
    let eta = config.eta.unwrap_or_else(|| auto_eta(config.gamma, support, rounds));
    let mut hedge = HedgeState::new(support, eta)?;

    let mut hypotheses = Vec::new();
    let mut sets: Vec<Vec<LabelSet>> = Vec::new();
    let mut pair_totals = vec![0.0; pairs.len()];
    let mut trace = Vec::new();

    for round in 1..=rounds {
        let (h, _claimed) = weak_learner(hedge.distribution())?;
        let reach = par_reach_sets(&h, evaluator, &config.ball, dataset)?;
        let pair_losses: Vec<f64> = pairs
            .pairs()
            .iter()
            .map(|p| f64::from(set_pair_loss(&reach[p.example], dataset.example(p.example).y, p.wrong)))
            .collect();
        let losses: Vec<f64> = match config.mode {
            BoostMode::Pairs => pair_losses.clone(),
            BoostMode::OneVsAll => dataset
                .examples()
                .iter()
                .zip(&reach)
                .map(|(ex, s)| f64::from(set_ova_loss(s, ex.y)))
                .collect(),
        };
        let achieved = hedge.distribution().expect(losses.iter().copied());
        for (t, l) in pair_totals.iter_mut().zip(&pair_losses) {
            *t += l;
        }
        let max_margin = pair_totals.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / round as f64;
        trace.push(RoundRecord {
            round,
            achieved,
            max_margin,
            elapsed_ms: started.elapsed().as_millis() as u64,
        });
        if achieved > -config.gamma + 1e-12 {
            return Err(Error::WeakLearnerFailed { round, achieved, trace });
        }
        hypotheses.push(h);
        sets.push(reach);
        hedge = hedge_update(&hedge, &losses)?;
        if config.early_stop && max_margin < 0.0 {
            break;
        }
    }

    let n = hypotheses.len();
    let report = report_from_sets(dataset, &vec![1.0 / n as f64; n], &sets);
    let mixture = MixtureQ::uniform(hypotheses, dataset.num_classes())?;
    Ok(BoostOutcome { mixture, report, trace })
}
