//! `(c, delta)`-approximate checkers and the weak learner built on them.
//!
//! A checker either exhibits a perturbation `z` in the ball with
//! `h(x + z) != y`, proves that none exists (`Good`), or gives up
//! (`Unknown`). The exact backend (`c = 1`) never gives up; the PGD backend
//! never proves anything.

use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, FiniteDistribution, Label, Norm, PerturbationBall};
use crate::error::{Error, Result};
use crate::hypotheses::{argmax_label, AdditiveEnsemble, Argmax, DecisionStump, Differentiable, LinearScorer, Mlp, ScorePredictor, UnilabelPredictor};
use crate::pgd::{pgd_maximize, PgdConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CheckerBackend {
    /// Analytic search for stumps and binary linear scorers.
    Exact,
    /// Untargeted PGD on the score margin.
    Pgd(PgdConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckerSpec {
    pub c: f64,
    pub ball: PerturbationBall,
    pub backend: CheckerBackend,
}

impl CheckerSpec {
    pub fn exact(ball: PerturbationBall) -> Self {
        Self {
            c: 1.0,
            ball,
            backend: CheckerBackend::Exact,
        }
    }

    pub fn pgd(c: f64, ball: PerturbationBall, config: PgdConfig) -> Self {
        Self {
            c,
            ball,
            backend: CheckerBackend::Pgd(config),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c >= 1.0) || !self.c.is_finite() {
            return Err(Error::InvalidConfig(format!("checker factor c must be >= 1, got {}", self.c)));
        }
        if self.backend == CheckerBackend::Exact && self.c != 1.0 {
            return Err(Error::InvalidConfig("the exact checker has c = 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum CheckOutcome {
    Found(Vec<f64>),
    Good,
    Unknown,
}

impl CheckOutcome {
    pub fn is_found(&self) -> bool {
        matches!(self, CheckOutcome::Found(_))
    }
}

/// Hypotheses a checker can attack.
pub trait Checkable {
    fn label_at(&self, x: &[f64]) -> Label;

    /// Some `z` in the ball with a label other than `y`, or `None` if
    /// provably there is none.
    fn exact_search(&self, _x: &[f64], _y: Label, _ball: &PerturbationBall) -> Result<Option<Vec<f64>>> {
        Err(Error::BackendMismatch("no exact search for this hypothesis class".into()))
    }

    /// The score model for gradient-based search.
    fn score_model(&self) -> Option<&dyn Differentiable> {
        None
    }
}

impl Checkable for DecisionStump {
    fn label_at(&self, x: &[f64]) -> Label {
        self.predict(x)
    }

    fn exact_search(&self, x: &[f64], y: Label, ball: &PerturbationBall) -> Result<Option<Vec<f64>>> {
        let reach = self.reach_set(x, ball)?;
        if reach.is_singleton_of(y) {
            return Ok(None);
        }
        let j = self.feature;
        let mut z = vec![0.0; x.len()];
        if self.predict(x) != y {
            return Ok(Some(z));
        }
        // Move just across the threshold, towards the other side. `x + step`
        // moves in ulps of the larger operand, so nudge by a doubling amount
        // starting there.
        let mut step = self.threshold - x[j];
        let go_left = self.left != y;
        let scale = x[j].abs().max(self.threshold.abs());
        let mut nudge = (scale.next_up() - scale).max(f64::MIN_POSITIVE);
        for _ in 0..64 {
            z[j] = step;
            let crossed = if go_left { x[j] + step <= self.threshold } else { x[j] + step > self.threshold };
            if crossed {
                break;
            }
            step = if go_left { step - nudge } else { step + nudge };
            nudge *= 2.0;
        }
        if ball.contains(&z) && self.predict(&shifted(x, &z)) != y {
            Ok(Some(z))
        } else {
            // Rounding put the crossing point outside the ball.
            Ok(None)
        }
    }
}

fn shifted(x: &[f64], z: &[f64]) -> Vec<f64> {
    x.iter().zip(z).map(|(a, b)| a + b).collect()
}

impl Checkable for LinearScorer {
    fn label_at(&self, x: &[f64]) -> Label {
        argmax_label(&self.scores(x))
    }

    fn exact_search(&self, x: &[f64], y: Label, ball: &PerturbationBall) -> Result<Option<Vec<f64>>> {
        if self.num_classes() != 2 {
            return Err(Error::BackendMismatch("exact linear checks need k = 2".into()));
        }
        if self.label_at(x) != y {
            return Ok(Some(vec![0.0; x.len()]));
        }
        // Push the score of y down along the dual direction of W_y - W_other.
        let other = 1 - y;
        let g: Vec<f64> = self.row(y).iter().zip(self.row(other)).map(|(a, b)| a - b).collect();
        let z: Vec<f64> = match ball.norm {
            Norm::LInf => g
                .iter()
                .map(|&v| if v > 0.0 { -ball.delta } else if v < 0.0 { ball.delta } else { 0.0 })
                .collect(),
            Norm::L2 => {
                let n = Norm::L2.of(&g);
                if n == 0.0 {
                    return Ok(None);
                }
                ball.project(&g.iter().map(|v| -ball.delta * v / n).collect::<Vec<_>>())
            }
        };
        Ok((self.label_at(&shifted(x, &z)) != y).then_some(z))
    }

    fn score_model(&self) -> Option<&dyn Differentiable> {
        Some(self)
    }
}

impl Checkable for Argmax<LinearScorer> {
    fn label_at(&self, x: &[f64]) -> Label {
        self.0.label_at(x)
    }

    fn exact_search(&self, x: &[f64], y: Label, ball: &PerturbationBall) -> Result<Option<Vec<f64>>> {
        self.0.exact_search(x, y, ball)
    }

    fn score_model(&self) -> Option<&dyn Differentiable> {
        Some(&self.0)
    }
}

impl Checkable for Argmax<Mlp> {
    fn label_at(&self, x: &[f64]) -> Label {
        self.predict(x)
    }

    fn score_model(&self) -> Option<&dyn Differentiable> {
        Some(&self.0)
    }
}

impl Checkable for Argmax<AdditiveEnsemble<Mlp>> {
    fn label_at(&self, x: &[f64]) -> Label {
        self.predict(x)
    }

    fn score_model(&self) -> Option<&dyn Differentiable> {
        Some(&self.0)
    }
}

/// Runs the checker of `spec` on `(x, y)`. Any returned `z` lies in the
/// ball and is misclassified; both are verified before returning.
pub fn check<H: Checkable + ?Sized>(h: &H, x: &[f64], y: Label, spec: &CheckerSpec) -> Result<CheckOutcome> {
    spec.validate()?;
    let ball = &spec.ball;
    if h.label_at(x) != y {
        return Ok(CheckOutcome::Found(vec![0.0; x.len()]));
    }
    if ball.delta == 0.0 {
        return Ok(CheckOutcome::Good);
    }
    let verified = |z: Vec<f64>| ball.contains(&z) && h.label_at(&shifted(x, &z)) != y;
    match &spec.backend {
        CheckerBackend::Exact => match h.exact_search(x, y, ball)? {
            Some(z) if verified(z.clone()) => Ok(CheckOutcome::Found(z)),
            Some(_) => Err(Error::BackendMismatch("exact search returned an unverified point".into())),
            None => Ok(CheckOutcome::Good),
        },
        CheckerBackend::Pgd(cfg) => {
            let f = h
                .score_model()
                .ok_or_else(|| Error::BackendMismatch("PGD checks need a differentiable score model".into()))?;
            let k = f.num_classes();
            let mut witness: Option<Vec<f64>> = None;
            pgd_maximize(
                |z| {
                    let xz = shifted(x, z);
                    let s = f.scores(&xz);
                    if witness.is_none() && argmax_label(&s) != y {
                        witness = Some(z.to_vec());
                    }
                    let rival = (0..k).filter(|&c| c != y).max_by(|&a, &b| s[a].total_cmp(&s[b]).then(b.cmp(&a))).expect("k >= 2");
                    let mut up = vec![0.0; k];
                    up[rival] = 1.0;
                    up[y] = -1.0;
                    (s[rival] - s[y], f.input_gradient(&xz, &up))
                },
                x.len(),
                ball,
                cfg,
            )?;
            Ok(match witness {
                Some(z) if verified(z.clone()) => CheckOutcome::Found(z),
                _ => CheckOutcome::Unknown,
            })
        }
    }
}

/// Result of [`weak_learn_via_checker`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum CheckerDecision {
    /// `candidates[index]` has estimate `<= -gamma`, hence
    /// `err^ova_{delta/c} <= -gamma`.
    Learned { index: usize, estimate: f64 },
    /// Every estimate exceeds `-gamma`, hence `err^ova_delta > -gamma` for all.
    Certificate { estimates: Vec<f64> },
}

/// `E_D[2 * 1{check finds an attack} - 1]`.
pub fn checker_error<H: Checkable + ?Sized>(h: &H, spec: &CheckerSpec, dataset: &Dataset, dist: &FiniteDistribution) -> Result<f64> {
    dist.check_support(dataset.len())?;
    let mut total = 0.0;
    for (ex, &w) in dataset.examples().iter().zip(dist.weights()) {
        let found = check(h, &ex.x, ex.y, spec)?.is_found();
        total += w * if found { 1.0 } else { -1.0 };
    }
    Ok(total)
}

/// Returns the first candidate whose checker estimate is `<= -gamma`, or a
/// certificate listing every estimate.
pub fn weak_learn_via_checker<H: Checkable>(
    candidates: &[H],
    spec: &CheckerSpec,
    dataset: &Dataset,
    dist: &FiniteDistribution,
    gamma: f64,
) -> Result<CheckerDecision> {
    if candidates.is_empty() {
        return Err(Error::InvalidConfig("no candidate hypotheses".into()));
    }
    let mut estimates = Vec::with_capacity(candidates.len());
    for (index, h) in candidates.iter().enumerate() {
        let estimate = checker_error(h, spec, dataset, dist)?;
        if estimate <= -gamma {
            return Ok(CheckerDecision::Learned { index, estimate });
        }
        estimates.push(estimate);
    }
    Ok(CheckerDecision::Certificate { estimates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Example;
    use crate::rng::SeededRng;

    #[test]
    fn stump_examples() {
        let stump = DecisionStump::new(0, 0.0, 0, 1);
        let spec = CheckerSpec::exact(PerturbationBall::linf(1.0).unwrap());
        assert_eq!(check(&stump, &[-2.0], 0, &spec).unwrap(), CheckOutcome::Good);
        match check(&stump, &[0.5], 1, &spec).unwrap() {
            CheckOutcome::Found(z) => assert!(z[0] <= -0.5 && z[0] >= -1.0),
            other => panic!("{other:?}"),
        }
        let zero = CheckerSpec::exact(PerturbationBall::linf(0.0).unwrap());
        assert_eq!(check(&stump, &[0.5], 1, &zero).unwrap(), CheckOutcome::Good);
    }

    #[test]
    fn exact_backend_rejects_networks() {
        let net = Argmax(Mlp::glorot(&[1, 3, 2], SeededRng::new(0, 0)).unwrap());
        let y = net.predict(&[0.0]);
        let spec = CheckerSpec::exact(PerturbationBall::linf(0.5).unwrap());
        assert!(matches!(check(&net, &[0.0], y, &spec), Err(Error::BackendMismatch(_))));
    }

    #[test]
    fn pgd_backend_on_linear() {
        let f = LinearScorer::new(vec![vec![-1.0], vec![1.0]], vec![0.0, 0.0]).unwrap();
        let spec = CheckerSpec::pgd(2.0, PerturbationBall::linf(0.5).unwrap(), PgdConfig::evaluation(1, SeededRng::new(0, 0)));
        assert!(check(&f, &[0.3], 1, &spec).unwrap().is_found());
        assert_eq!(check(&f, &[2.0], 1, &spec).unwrap(), CheckOutcome::Unknown);
    }

    #[test]
    fn checker_weak_learner() {
        let ds = Dataset::new(
            [(-2.0, 0), (-1.0, 0), (1.0, 1), (2.0, 1)].iter().map(|&(x, y)| Example::new(vec![x], y)).collect(),
            2,
        )
        .unwrap();
        let d = FiniteDistribution::uniform(4).unwrap();
        let spec = CheckerSpec::exact(PerturbationBall::linf(0.5).unwrap());
        let pool = vec![DecisionStump::new(0, 5.0, 0, 1), DecisionStump::new(0, 0.0, 0, 1)];
        assert_eq!(
            weak_learn_via_checker(&pool, &spec, &ds, &d, 0.5).unwrap(),
            CheckerDecision::Learned { index: 1, estimate: -1.0 }
        );
        let bad = vec![DecisionStump::new(0, 0.0, 1, 0)];
        assert_eq!(
            weak_learn_via_checker(&bad, &spec, &ds, &d, 0.5).unwrap(),
            CheckerDecision::Certificate { estimates: vec![1.0] }
        );
    }
}
