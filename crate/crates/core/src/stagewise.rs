//! Greedy stagewise adversarial boosting with the offset approximation.
//!
//! Stage `t` fits `(beta_t, w_t)` by SGD on
//!
//! ```text
//! mean_i sup_{z_i in ball} ce(o_i + beta * f_w(x_i + z_i), y_i),   o_i = f^(t-1)(x_i)
//! ```
//!
//! where the offsets `o_i` are computed once per stage at the clean inputs,
//! so earlier stages are never evaluated at perturbed points. Stage `t` runs
//! `2^(t-1) * N_1` epochs with the cosine rate `eta_max (1 + cos(alpha pi)) / 2`,
//! `alpha` being the fraction of the stage's minibatch updates done so far.
//! The perturbation radius is the `epsilon` input of the algorithm.
//!
//! [`OffsetMode::Exact`] instead evaluates `f^(t-1)(x_i + z_i)` inside the
//! objective; it exists to measure the cost of the approximation.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, Label, PerturbationBall};
use crate::error::{Error, Result};
use crate::hypotheses::{argmax_label, ce_score_gradient, AdditiveEnsemble, Differentiable, Mlp, Parametric, ScorePredictor};
use crate::losses::ce_loss;
use crate::pgd::{pgd_maximize, PgdConfig};
use crate::rng::SeededRng;

/// `eta_max (1 + cos(alpha pi)) / 2`.
pub fn cyclic_lr(alpha: f64, eta_max: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    Ok(0.5 * eta_max * (1.0 + (alpha * std::f64::consts::PI).cos()))
}

/// `N_t = 2^(t-1) N_1` for stages numbered from 1.
pub fn epochs_for_stage(t: usize, base_epochs: usize) -> usize {
    assert!(t >= 1, "stages are numbered from 1");
    base_epochs << (t - 1)
}

/// Rates of the `updates` minibatch steps of one stage.
pub fn stage_learning_rates(updates: usize, eta_max: f64) -> Vec<f64> {
    (0..updates)
        .map(|j| cyclic_lr(j as f64 / updates as f64, eta_max).expect("j / M lies in [0, 1)"))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OffsetMode {
    /// Offsets `f^(t-1)(x_i)` fixed at the clean inputs.
    #[default]
    Approximate,
    /// Earlier stages evaluated at `x_i + z_i` (reference only).
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagewiseConfig {
    pub stages: usize,
    pub base_epochs: usize,
    pub eta_max: f64,
    pub batch_size: usize,
    pub ball: PerturbationBall,
    /// Inner maximizer used during training.
    pub pgd: PgdConfig,
    /// `false` trains on clean inputs (`z = 0`).
    pub adversarial: bool,
    /// Initialize each stage from the previous one (`beta = 1`); otherwise
    /// fresh Glorot weights and `beta = 0.1`.
    pub warm_start: bool,
    /// Hidden layer widths of each stage's network; empty gives a linear model.
    pub hidden: Vec<usize>,
    pub offsets: OffsetMode,
    /// Restarts of the 20-step evaluation attack.
    pub eval_restarts: usize,
    /// Gaussian input noise for predictors that will be smoothed.
    pub noise: Option<NoiseConfig>,
    pub rng: SeededRng,
}

/// Every example enters the objective as `n_samples` copies of
/// `x + z + e_j`, `e_j ~ N(0, sigma^2 I)`, and the losses are averaged: the
/// objective of the smoothed predictor approximated by a few draws. The
/// draws are fixed per update, so PGD and the gradients see one function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub sigma: f64,
    pub n_samples: usize,
}

impl Default for StagewiseConfig {
    fn default() -> Self {
        Self {
            stages: 5,
            base_epochs: 10,
            eta_max: 0.01,
            batch_size: 32,
            ball: PerturbationBall::linf(8.0 / 255.0).expect("valid radius"),
            pgd: PgdConfig::training(SeededRng::new(0, 0)),
            adversarial: true,
            warm_start: true,
            hidden: vec![32],
            offsets: OffsetMode::Approximate,
            eval_restarts: 3,
            noise: None,
            rng: SeededRng::new(0, 0),
        }
    }
}

impl StagewiseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 || self.base_epochs == 0 || self.batch_size == 0 || self.eval_restarts == 0 {
            return Err(Error::InvalidConfig(
                "stages, base epochs, batch size and eval restarts must be >= 1".into(),
            ));
        }
        if !(self.eta_max > 0.0) || !self.eta_max.is_finite() {
            return Err(Error::InvalidConfig(format!("eta_max must be > 0, got {}", self.eta_max)));
        }
        if let Some(n) = self.noise {
            if !(n.sigma > 0.0) || !n.sigma.is_finite() || n.n_samples == 0 {
                return Err(Error::InvalidConfig(format!(
                    "training noise needs sigma > 0 and at least one sample, got {} and {}",
                    n.sigma, n.n_samples
                )));
            }
        }
        self.pgd.validate()
    }

    /// The attack behind the per-stage robust accuracies.
    pub fn eval_pgd(&self) -> PgdConfig {
        PgdConfig::evaluation(self.eval_restarts, self.rng.child(EVAL))
    }
}

/// The previous ensemble, with evaluation counters.
pub struct PriorProbe<'a> {
    ensemble: &'a AdditiveEnsemble<Mlp>,
    clean: AtomicUsize,
    perturbed: AtomicUsize,
}

impl<'a> PriorProbe<'a> {
    pub fn new(ensemble: &'a AdditiveEnsemble<Mlp>) -> Self {
        Self {
            ensemble,
            clean: AtomicUsize::new(0),
            perturbed: AtomicUsize::new(0),
        }
    }

    pub fn clean_scores(&self, x: &[f64]) -> Vec<f64> {
        self.clean.fetch_add(1, Ordering::Relaxed);
        self.ensemble.scores(x)
    }

    fn perturbed_scores(&self, xz: &[f64]) -> Vec<f64> {
        self.perturbed.fetch_add(1, Ordering::Relaxed);
        self.ensemble.scores(xz)
    }

    fn perturbed_gradient(&self, xz: &[f64], upstream: &[f64]) -> Vec<f64> {
        self.perturbed.fetch_add(1, Ordering::Relaxed);
        self.ensemble.input_gradient(xz, upstream)
    }

    pub fn clean_evaluations(&self) -> usize {
        self.clean.load(Ordering::Relaxed)
    }

    pub fn perturbed_evaluations(&self) -> usize {
        self.perturbed.load(Ordering::Relaxed)
    }
}

/// Where the earlier stages' scores come from inside the objective.
#[derive(Clone, Copy)]
pub enum Offset<'a> {
    Fixed(&'a [f64]),
    Prior(&'a PriorProbe<'a>),
}

#[derive(Clone, Copy)]
pub struct BatchItem<'a> {
    pub x: &'a [f64],
    pub y: Label,
    pub offset: Offset<'a>,
    /// Key for this example's PGD starts.
    pub rng: SeededRng,
    /// Noise draws averaged over; empty for the plain objective.
    pub noise: &'a [Vec<f64>],
}

/// Batch means of the stage objective and its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct StageGrad {
    pub loss: f64,
    pub d_beta: f64,
    pub d_w: Vec<f64>,
    /// The perturbation used for each item.
    pub perturbations: Vec<Vec<f64>>,
}

fn shifted(x: &[f64], z: &[f64]) -> Vec<f64> {
    x.iter().zip(z).map(|(a, b)| a + b).collect()
}

fn total_scores(item: &BatchItem, beta: f64, net_scores: &[f64], xz: &[f64]) -> Vec<f64> {
    let base = match item.offset {
        Offset::Fixed(o) => o.to_vec(),
        Offset::Prior(p) => p.perturbed_scores(xz),
    };
    base.iter().zip(net_scores).map(|(o, s)| o + beta * s).collect()
}

/// The inputs `x + z (+ e_j)` the objective averages over.
fn inputs(item: &BatchItem, z: &[f64]) -> Vec<Vec<f64>> {
    let xz = shifted(item.x, z);
    if item.noise.is_empty() {
        return vec![xz];
    }
    item.noise.iter().map(|e| shifted(&xz, e)).collect()
}

/// Loss and `(d/dbeta, d/dw)` of one example at a fixed perturbation.
fn example_at(item: &BatchItem, beta: f64, net: &Mlp, z: &[f64]) -> (f64, f64, Vec<f64>) {
    let points = inputs(item, z);
    let n = points.len() as f64;
    let (mut loss, mut d_beta, mut d_w) = (0.0, 0.0, vec![0.0; net.num_params()]);
    for xz in &points {
        let s = net.scores(xz);
        let total = total_scores(item, beta, &s, xz);
        let g = ce_score_gradient(&total, item.y);
        loss += ce_loss(&total, item.y);
        d_beta += g.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>();
        let scaled: Vec<f64> = g.iter().map(|v| beta * v).collect();
        for (a, b) in d_w.iter_mut().zip(net.param_gradient(xz, &scaled)) {
            *a += b;
        }
    }
    d_w.iter_mut().for_each(|v| *v /= n);
    (loss / n, d_beta / n, d_w)
}

fn worst_perturbation(item: &BatchItem, beta: f64, net: &Mlp, ball: &PerturbationBall, pgd: Option<&PgdConfig>) -> Result<Vec<f64>> {
    let Some(cfg) = pgd else {
        return Ok(vec![0.0; item.x.len()]);
    };
    let out = pgd_maximize(
        |z| {
            let points = inputs(item, z);
            let n = points.len() as f64;
            let (mut loss, mut gz) = (0.0, vec![0.0; z.len()]);
            for xz in &points {
                let s = net.scores(xz);
                let total = total_scores(item, beta, &s, xz);
                let g = ce_score_gradient(&total, item.y);
                let scaled: Vec<f64> = g.iter().map(|v| beta * v).collect();
                loss += ce_loss(&total, item.y);
                for (a, b) in gz.iter_mut().zip(net.input_gradient(xz, &scaled)) {
                    *a += b;
                }
                if let Offset::Prior(p) = item.offset {
                    for (a, b) in gz.iter_mut().zip(p.perturbed_gradient(xz, &g)) {
                        *a += b;
                    }
                }
            }
            gz.iter_mut().for_each(|v| *v /= n);
            (loss / n, gz)
        },
        item.x.len(),
        ball,
        &cfg.with_rng(item.rng),
    )?;
    Ok(out.z)
}

fn reduce(parts: Vec<(f64, f64, Vec<f64>, Vec<f64>)>, num_params: usize) -> StageGrad {
    let n = parts.len() as f64;
    let mut grad = StageGrad {
        loss: 0.0,
        d_beta: 0.0,
        d_w: vec![0.0; num_params],
        perturbations: Vec::with_capacity(parts.len()),
    };
    // Summed in item order so results do not depend on the thread count.
    for (loss, d_beta, d_w, z) in parts {
        grad.loss += loss;
        grad.d_beta += d_beta;
        for (a, b) in grad.d_w.iter_mut().zip(&d_w) {
            *a += b;
        }
        grad.perturbations.push(z);
    }
    grad.loss /= n;
    grad.d_beta /= n;
    for v in &mut grad.d_w {
        *v /= n;
    }
    grad
}

/// Objective and gradients with each item's perturbation found by PGD
/// (`pgd = None` uses `z = 0`). Gradients are taken at the found
/// perturbations, which are held fixed.
pub fn stage_objective_grad(
    items: &[BatchItem],
    beta: f64,
    net: &Mlp,
    ball: &PerturbationBall,
    pgd: Option<&PgdConfig>,
) -> Result<StageGrad> {
    if items.is_empty() {
        return Err(Error::InvalidConfig("empty minibatch".into()));
    }
    let parts = items
        .par_iter()
        .map(|item| {
            let z = worst_perturbation(item, beta, net, ball, pgd)?;
            let (loss, d_beta, d_w) = example_at(item, beta, net, &z);
            Ok((loss, d_beta, d_w, z))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(reduce(parts, net.num_params()))
}

/// Objective and gradients at given perturbations.
pub fn stage_objective_at(items: &[BatchItem], beta: f64, net: &Mlp, perturbations: &[Vec<f64>]) -> StageGrad {
    let parts = items
        .iter()
        .zip(perturbations)
        .map(|(item, z)| {
            let (loss, d_beta, d_w) = example_at(item, beta, net, z);
            (loss, d_beta, d_w, z.clone())
        })
        .collect();
    reduce(parts, net.num_params())
}

/// Clean and PGD-attacked accuracy of `argmax f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustEval {
    pub clean_accuracy: f64,
    pub robust_accuracy: f64,
    /// Mean over examples of the largest cross-entropy the attack found.
    pub robust_loss: f64,
}

/// Attacks every example with cross-entropy PGD; an example counts as
/// robust only if no visited point is misclassified.
pub fn evaluate_robustness<F>(f: &F, dataset: &Dataset, ball: &PerturbationBall, pgd: &PgdConfig) -> Result<RobustEval>
where
    F: Differentiable + Sync + ?Sized,
{
    let rows = dataset
        .examples()
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let clean = argmax_label(&f.scores(&ex.x)) == ex.y;
            let mut robust = clean;
            let out = pgd_maximize(
                |z| {
                    let xz = shifted(&ex.x, z);
                    let s = f.scores(&xz);
                    if argmax_label(&s) != ex.y {
                        robust = false;
                    }
                    (ce_loss(&s, ex.y), f.input_gradient(&xz, &ce_score_gradient(&s, ex.y)))
                },
                ex.x.len(),
                ball,
                &pgd.with_rng(pgd.rng.child(i as u64)),
            )?;
            Ok((clean, robust, out.loss))
        })
        .collect::<Result<Vec<_>>>()?;
    let m = rows.len() as f64;
    Ok(RobustEval {
        clean_accuracy: rows.iter().filter(|r| r.0).count() as f64 / m,
        robust_accuracy: rows.iter().filter(|r| r.1).count() as f64 / m,
        robust_loss: rows.iter().map(|r| r.2).sum::<f64>() / m,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: usize,
    pub epoch: usize,
    /// Rate of the epoch's first update.
    pub lr: f64,
    /// Mean minibatch objective over the epoch.
    pub loss: f64,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub epochs: usize,
    pub updates: usize,
    pub beta: f64,
    pub clean_accuracy: f64,
    pub robust_accuracy: f64,
    pub robust_loss: f64,
    /// Evaluations of the earlier stages at clean / perturbed inputs while
    /// training this stage.
    pub prior_clean_evals: usize,
    pub prior_perturbed_evals: usize,
    pub elapsed_ms: u64,
    /// Learning rate of every update, in order.
    #[serde(skip)]
    pub learning_rates: Vec<f64>,
    /// `f^(t-1)(x_i)` as used by this stage.
    #[serde(skip)]
    pub offsets: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct StagewiseOutcome {
    pub ensemble: AdditiveEnsemble<Mlp>,
    pub epochs: Vec<EpochRecord>,
    pub stages: Vec<StageRecord>,
}

const SHUFFLE: u64 = 1;
const INIT: u64 = 2;
const ATTACK: u64 = 3;
const EVAL: u64 = 4;
const NOISE: u64 = 5;

fn noise_draws(noise: Option<NoiseConfig>, d: usize, rng: SeededRng) -> Vec<Vec<f64>> {
    let Some(n) = noise else { return Vec::new() };
    let mut g = rng.generator();
    (0..n.n_samples)
        .map(|_| {
            (0..d)
                .map(|_| {
                    let e: f64 = StandardNormal.sample(&mut g);
                    n.sigma * e
                })
                .collect()
        })
        .collect()
}

/// Trains `config.stages` stages and returns `f^(T) = sum_t beta_t f_{w_t}`.
pub fn run_stagewise(dataset: &Dataset, config: &StagewiseConfig) -> Result<StagewiseOutcome> {
    config.validate()?;
    let started = Instant::now();
    let (k, d, m) = (dataset.num_classes(), dataset.dim(), dataset.len());
    let mut sizes = vec![d];
    sizes.extend(&config.hidden);
    sizes.push(k);

    let mut ensemble = AdditiveEnsemble::<Mlp>::empty(k, d);
    let mut epoch_trace = Vec::new();
    let mut stage_trace = Vec::new();
    let batches_per_epoch = m.div_ceil(config.batch_size);
    let eval_pgd = config.eval_pgd();

    for stage in 1..=config.stages {
        let (mut beta, mut net) = match ensemble.stages().last() {
            Some((_, prev)) if config.warm_start => (1.0, prev.clone()),
            _ => {
                let net = Mlp::glorot(&sizes, config.rng.child_path(&[INIT, stage as u64]))?;
                (if config.warm_start { 1.0 } else { 0.1 }, net)
            }
        };

        let probe = PriorProbe::new(&ensemble);
        let offsets: Vec<Vec<f64>> = dataset.examples().iter().map(|ex| probe.clean_scores(&ex.x)).collect();

        let epochs = epochs_for_stage(stage, config.base_epochs);
        let rates = stage_learning_rates(epochs * batches_per_epoch, config.eta_max);
        let mut order: Vec<usize> = (0..m).collect();
        let mut update = 0;
        for epoch in 1..=epochs {
            let mut shuffle = config.rng.child_path(&[SHUFFLE, stage as u64, epoch as u64]).generator();
            order.shuffle(&mut shuffle);
            let epoch_lr = rates[update];
            let mut epoch_loss = 0.0;
            for batch in order.chunks(config.batch_size) {
                let draws: Vec<Vec<Vec<f64>>> = batch
                    .iter()
                    .map(|&i| noise_draws(config.noise, d, config.rng.child_path(&[NOISE, stage as u64, update as u64, i as u64])))
                    .collect();
                let items: Vec<BatchItem> = batch
                    .iter()
                    .zip(&draws)
                    .map(|(&i, noise)| BatchItem {
                        x: &dataset.example(i).x,
                        y: dataset.example(i).y,
                        offset: match config.offsets {
                            OffsetMode::Exact if stage > 1 => Offset::Prior(&probe),
                            _ => Offset::Fixed(&offsets[i]),
                        },
                        rng: config.pgd.rng.child_path(&[ATTACK, stage as u64, update as u64, i as u64]),
                        noise,
                    })
                    .collect();
                let attack = config.adversarial.then_some(&config.pgd);
                let grad = stage_objective_grad(&items, beta, &net, &config.ball, attack)?;
                let lr = rates[update];
                beta -= lr * grad.d_beta;
                for (p, g) in net.params_mut().iter_mut().zip(&grad.d_w) {
                    *p -= lr * g;
                }
                epoch_loss += grad.loss * batch.len() as f64;
                update += 1;
                if !beta.is_finite() || net.params().iter().any(|p| !p.is_finite()) {
                    return Err(Error::NonFiniteParameters {
                        stage,
                        epoch,
                        trace: epoch_trace,
                    });
                }
            }
            epoch_trace.push(EpochRecord {
                stage,
                epoch,
                lr: epoch_lr,
                loss: epoch_loss / m as f64,
                elapsed_ms: started.elapsed().as_millis() as u64,
            });
        }

        let (prior_clean_evals, prior_perturbed_evals) = (probe.clean_evaluations(), probe.perturbed_evaluations());
        drop(probe);
        ensemble.push(beta, net)?;
        let eval = evaluate_robustness(&ensemble, dataset, &config.ball, &eval_pgd)?;
        stage_trace.push(StageRecord {
            stage,
            epochs,
            updates: update,
            beta,
            clean_accuracy: eval.clean_accuracy,
            robust_accuracy: eval.robust_accuracy,
            robust_loss: eval.robust_loss,
            prior_clean_evals,
            prior_perturbed_evals,
            elapsed_ms: started.elapsed().as_millis() as u64,
            learning_rates: rates,
            offsets,
        });
    }

    Ok(StagewiseOutcome {
        ensemble,
        epochs: epoch_trace,
        stages: stage_trace,
    })
}
