//! Projected gradient ascent over a perturbation ball.
//!
//! Steps are normalized: `sign(g)` for l-inf and `g / ||g||_2` for l2, so the
//! step size is measured in the units of the ball radius. The best iterate
//! over all restarts (starting points included) is returned.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::domain::{Label, LabelSet, Norm, PerturbationBall};
use crate::error::{Error, Result};
use crate::hypotheses::{argmax_label, Differentiable};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepSize {
    /// `1.3 * delta / steps`, enough to cross the ball within the budget.
    Auto,
    Fixed(f64),
    /// This fraction of `delta` per step.
    Relative(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PgdConfig {
    pub steps: usize,
    pub step_size: StepSize,
    pub restarts: usize,
    pub random_start: bool,
    pub include_zero_start: bool,
    pub rng: SeededRng,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self::training(SeededRng::new(0, 0))
    }
}

impl PgdConfig {
    /// Training-time attack: 7 steps of size `1.3 delta / 7` from a random start.
    pub fn training(rng: SeededRng) -> Self {
        Self {
            steps: 7,
            step_size: StepSize::Auto,
            restarts: 1,
            random_start: true,
            include_zero_start: true,
            rng,
        }
    }

    /// Evaluation-time attack: 20 steps of size `1.3 delta / 20` with restarts.
    pub fn evaluation(restarts: usize, rng: SeededRng) -> Self {
        Self {
            steps: 20,
            step_size: StepSize::Auto,
            restarts,
            random_start: true,
            include_zero_start: true,
            rng,
        }
    }

    /// Attack for training predictors that will be smoothed: 4 steps of
    /// size `delta / 8` starting at the input.
    pub fn smoothing(rng: SeededRng) -> Self {
        Self {
            steps: 4,
            step_size: StepSize::Relative(0.125),
            restarts: 1,
            random_start: false,
            include_zero_start: true,
            rng,
        }
    }

    pub fn with_rng(&self, rng: SeededRng) -> Self {
        Self { rng, ..self.clone() }
    }

    pub fn step_length(&self, delta: f64) -> f64 {
        match self.step_size {
            StepSize::Auto => 1.3 * delta / self.steps as f64,
            StepSize::Fixed(s) => s,
            StepSize::Relative(f) => f * delta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.restarts == 0 {
            return Err(Error::InvalidConfig("PGD needs steps >= 1 and restarts >= 1".into()));
        }
        if let StepSize::Fixed(s) | StepSize::Relative(s) = self.step_size {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::InvalidConfig(format!("PGD step size must be > 0, got {s}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgdOutcome {
    pub z: Vec<f64>,
    pub loss: f64,
}

/// A uniform random point of the ball (volume-uniform for l2).
pub fn random_point(ball: &PerturbationBall, dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    let delta = ball.delta;
    match ball.norm {
        Norm::LInf => (0..dim).map(|_| rng.random_range(-1.0..=1.0) * delta).collect(),
        Norm::L2 => {
            let mut dir: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = Norm::L2.of(&dir);
            if norm == 0.0 {
                return vec![0.0; dim];
            }
            let u: f64 = rng.random();
            let radius = delta * u.powf(1.0 / dim as f64);
            for v in &mut dir {
                *v *= radius / norm;
            }
            ball.project(&dir)
        }
    }
}

fn ascent_direction(norm: Norm, grad: &[f64]) -> Option<Vec<f64>> {
    match norm {
        Norm::LInf => {
            if grad.iter().all(|g| *g == 0.0) {
                None
            } else {
                Some(grad.iter().map(|g| if *g == 0.0 { 0.0 } else { g.signum() }).collect())
            }
        }
        Norm::L2 => {
            let n = Norm::L2.of(grad);
            (n > 0.0).then(|| grad.iter().map(|g| g / n).collect())
        }
    }
}

/// Maximizes `loss(z)` over `z` in `ball`. `grad_fn(z)` returns the loss and
/// its gradient at `z`.
pub fn pgd_maximize<G>(mut grad_fn: G, dim: usize, ball: &PerturbationBall, cfg: &PgdConfig) -> Result<PgdOutcome>
where
    G: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    cfg.validate()?;
    let mut eval = |z: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (loss, grad) = grad_fn(z);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss);
        }
        Ok((loss, grad))
    };

    let zero = vec![0.0; dim];
    if ball.delta == 0.0 {
        let (loss, _) = eval(&zero)?;
        return Ok(PgdOutcome { z: zero, loss });
    }

    let mut starts: Vec<Vec<f64>> = Vec::new();
    if cfg.include_zero_start || !cfg.random_start {
        starts.push(zero.clone());
    }
    if cfg.random_start {
        for r in 0..cfg.restarts {
            let mut g = cfg.rng.child(r as u64).generator();
            starts.push(random_point(ball, dim, &mut g));
        }
    }

    let step = cfg.step_length(ball.delta);
    let mut best: Option<PgdOutcome> = None;
    for start in starts {
        let mut z = start;
        let (mut loss, mut grad) = eval(&z)?;
        for s in 0..=cfg.steps {
            if best.as_ref().is_none_or(|b| loss > b.loss) {
                best = Some(PgdOutcome { z: z.clone(), loss });
            }
            if s == cfg.steps {
                break;
            }
            let Some(dir) = ascent_direction(ball.norm, &grad) else { break };
            for (zi, di) in z.iter_mut().zip(&dir) {
                *zi += step * di;
            }
            ball.project_in_place(&mut z);
            (loss, grad) = eval(&z)?;
        }
    }
    Ok(best.expect("at least one start"))
}

/// Labels observed by targeted attacks on `argmax f` over `x + ball`.
///
/// For every label other than the clean prediction, PGD maximizes the score
/// margin of that label over its strongest rival. Every label predicted at
/// any visited point is reported, so the result is a subset of the true
/// reach set.
pub fn targeted_reach_set<F>(f: &F, x: &[f64], ball: &PerturbationBall, cfg: &PgdConfig) -> Result<LabelSet>
where
    F: Differentiable + ?Sized,
{
    let k = f.num_classes();
    let clean = argmax_label(&f.scores(x));
    let mut seen = LabelSet::singleton(clean);
    if ball.delta == 0.0 {
        return Ok(seen);
    }
    let mut xz = vec![0.0; x.len()];
    for target in (0..k).filter(|&c| c != clean) {
        if seen.contains(target) {
            continue;
        }
        let attack = cfg.with_rng(cfg.rng.child(target as u64));
        pgd_maximize(
            |z| {
                for ((o, a), b) in xz.iter_mut().zip(x).zip(z) {
                    *o = a + b;
                }
                let s = f.scores(&xz);
                seen.insert(argmax_label(&s));
                let rival = strongest_rival(&s, target);
                let mut upstream = vec![0.0; k];
                upstream[target] = 1.0;
                upstream[rival] = -1.0;
                (s[target] - s[rival], f.input_gradient(&xz, &upstream))
            },
            x.len(),
            ball,
            &attack,
        )?;
    }
    Ok(seen)
}

fn strongest_rival(scores: &[f64], target: Label) -> Label {
    let mut best: Option<Label> = None;
    for (c, &s) in scores.iter().enumerate() {
        if c != target && best.is_none_or(|b| s > scores[b]) {
            best = Some(c);
        }
    }
    best.expect("k >= 2")
}
