//! Metrics as a pure function of (config, model, dataset), so that `audit`
//! can recompute every number a run printed.

use rayon::prelude::*;
use robust_boost::certify::{aggregate_radius, certify_point, check, CheckOutcome, CheckerSpec, RadiusPredictor, SmoothingConfig};
use robust_boost::game_boost::margin_report;
use robust_boost::hypotheses::{AdditiveEnsemble, Argmax, DecisionStump, LinearScorer, MixtureQ, Mlp, ScorePredictor};
use robust_boost::losses::ExactStumpEvaluator;
use robust_boost::pgd::PgdConfig;
use robust_boost::stagewise::{evaluate_robustness, StagewiseConfig};
use robust_boost::{Dataset, Label, Norm, PerturbationBall};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::archive::{Model, RadiusModel};
use crate::config::{attack_stream, stagewise_stream, Backend, CheckSettings, ExperimentConfig, Pipeline};
use crate::error::{CliError, Context};

/// Budgets of the accuracy-vs-budget curves, as multiples of the run's delta.
pub const BUDGET_MULTIPLIERS: [f64; 8] = [0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub series: String,
    pub x: String,
    pub points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub metrics: Map<String, Value>,
    pub curves: Vec<Curve>,
    /// Per-example records (certificates, checker outcomes).
    pub records: Vec<Value>,
}

/// Clean and robust accuracy of a model at one budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accuracy {
    pub clean: f64,
    pub robust: f64,
    /// Whether `robust` is exact rather than an attack's upper bound.
    pub certified: bool,
}

fn fraction(flags: impl Iterator<Item = bool>, m: usize) -> f64 {
    flags.filter(|&f| f).count() as f64 / m as f64
}

fn budgets(ball: &PerturbationBall) -> Vec<f64> {
    BUDGET_MULTIPLIERS.iter().map(|c| c * ball.delta).collect()
}

/// The 20-step evaluation attack of a run.
pub fn evaluation_attack(seed: u64, restarts: usize) -> PgdConfig {
    StagewiseConfig {
        rng: stagewise_stream(seed),
        eval_restarts: restarts,
        ..Default::default()
    }
    .eval_pgd()
}

/// Label and certified l2 radius of a radius predictor on every example.
pub fn radii(model: &RadiusModel, dataset: &Dataset) -> Result<Vec<(Label, f64, bool)>, CliError> {
    dataset
        .examples()
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            Ok(match model {
                RadiusModel::Linear(p) => (p.label(&ex.x), p.radius(&ex.x), false),
                RadiusModel::LinearMixture(q) => {
                    let a = aggregate_radius(q, &ex.x).context("certify", "aggregating radii")?;
                    (a.label, a.radius, false)
                }
                RadiusModel::Smoothed(s) => {
                    let config = SmoothingConfig {
                        rng: s.config.rng.child(i as u64),
                        ..s.config.clone()
                    };
                    let c = certify_point(&s.base, &ex.x, &config).context("certify", "smoothing")?;
                    (c.label, c.radius, c.abstain)
                }
            })
        })
        .collect()
}

/// An l2 radius certifies an l-inf ball of radius `r / sqrt(d)`.
fn l2_budget(ball: &PerturbationBall, d: usize) -> f64 {
    match ball.norm {
        Norm::L2 => ball.delta,
        Norm::LInf => ball.delta * (d as f64).sqrt(),
    }
}

fn certified_at(rows: &[(Label, f64, bool)], dataset: &Dataset, r: f64) -> f64 {
    let hits = rows
        .iter()
        .zip(dataset.examples())
        .map(|(&(label, radius, abstain), ex)| !abstain && label == ex.y && radius >= r);
    fraction(hits, dataset.len())
}

fn mixture_accuracy(q: &MixtureQ<DecisionStump>, dataset: &Dataset, ball: &PerturbationBall, pipeline: &'static str) -> Result<Accuracy, CliError> {
    let robust = dataset
        .examples()
        .par_iter()
        .map(|ex| q.robust_vote_holds(&ex.x, ex.y, ball))
        .collect::<robust_boost::Result<Vec<bool>>>()
        .context(pipeline, "checking vote robustness")?;
    Ok(Accuracy {
        clean: fraction(dataset.examples().iter().map(|ex| q.plurality_vote(&ex.x) == ex.y), dataset.len()),
        robust: fraction(robust.into_iter(), dataset.len()),
        certified: true,
    })
}

/// Clean and robust accuracy of `model` at `ball`.
pub fn accuracy(model: &Model, dataset: &Dataset, ball: &PerturbationBall, attack: &PgdConfig, pipeline: &'static str) -> Result<Accuracy, CliError> {
    match model {
        Model::Mixture(q) => mixture_accuracy(q, dataset, ball, pipeline),
        Model::Ensemble(f) => {
            let e = evaluate_robustness(f, dataset, ball, attack).context(pipeline, "attacking the ensemble")?;
            Ok(Accuracy {
                clean: e.clean_accuracy,
                robust: e.robust_accuracy,
                certified: false,
            })
        }
        Model::Radius(r) => {
            let rows = radii(r, dataset)?;
            Ok(Accuracy {
                clean: certified_at(&rows, dataset, 0.0),
                robust: certified_at(&rows, dataset, l2_budget(ball, dataset.dim())),
                certified: true,
            })
        }
    }
}

fn accuracy_curve(model: &Model, dataset: &Dataset, ball: &PerturbationBall, attack: &PgdConfig, pipeline: &'static str) -> Result<Curve, CliError> {
    let points = budgets(ball)
        .into_iter()
        .map(|b| {
            let at = ball.with_delta(b).context(pipeline, "building budgets")?;
            Ok([b, accuracy(model, dataset, &at, attack, pipeline)?.robust])
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(Curve {
        series: "robust_accuracy".into(),
        x: "budget".into(),
        points,
    })
}

fn insert_accuracy(metrics: &mut Map<String, Value>, acc: Accuracy, train: bool) {
    let (clean, robust) = if train {
        ("clean_train_accuracy", "robust_train_accuracy")
    } else {
        ("clean_accuracy", "robust_accuracy")
    };
    metrics.insert(clean.into(), json!(acc.clean));
    metrics.insert(robust.into(), json!(acc.robust));
    metrics.insert("robust_certified".into(), json!(acc.certified));
}

fn wrong_model(pipeline: &str, model: &Model) -> CliError {
    CliError::Config(format!("{pipeline} cannot use a {} model", model.kind()))
}

/// A single linear stage as a plain linear scorer with `beta` folded in.
fn as_linear(f: &AdditiveEnsemble<Mlp>) -> Option<LinearScorer> {
    let [(beta, net)] = f.stages() else { return None };
    let lin = net.to_linear()?;
    let k = lin.num_classes();
    LinearScorer::new(
        (0..k).map(|c| lin.row(c).iter().map(|w| beta * w).collect()).collect(),
        (0..k).map(|c| beta * lin.bias(c)).collect(),
    )
    .ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Found,
    Good,
    Unknown,
}

/// Checker outcome on every example, with witnesses where the backend gives one.
fn check_all(model: &Model, dataset: &Dataset, ball: &PerturbationBall, s: &CheckSettings, seed: u64) -> Result<Vec<(Outcome, Option<Vec<f64>>)>, CliError> {
    let spec_for = |i: usize| match s.backend {
        Backend::Exact => CheckerSpec { c: s.c, ..CheckerSpec::exact(*ball) },
        Backend::Pgd => {
            let pgd = PgdConfig {
                steps: s.pgd_steps,
                ..PgdConfig::evaluation(s.pgd_restarts, attack_stream(seed).child(i as u64))
            };
            CheckerSpec::pgd(s.c, *ball, pgd)
        }
    };
    let convert = |o: CheckOutcome| match o {
        CheckOutcome::Found(z) => (Outcome::Found, Some(z)),
        CheckOutcome::Good => (Outcome::Good, None),
        CheckOutcome::Unknown => (Outcome::Unknown, None),
    };
    let linear = match model {
        Model::Ensemble(f) if s.backend == Backend::Exact => as_linear(f),
        _ => None,
    };
    let argmax = match model {
        Model::Ensemble(f) => Some(Argmax(f.clone())),
        _ => None,
    };
    dataset
        .examples()
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let spec = spec_for(i);
            let outcome = match model {
                Model::Mixture(q) => {
                    if s.backend != Backend::Exact {
                        return Err(CliError::Config("stump mixtures are checked with the exact backend".into()));
                    }
                    if q.robust_vote_holds(&ex.x, ex.y, ball).context("check", "checking vote robustness")? {
                        (Outcome::Good, None)
                    } else {
                        (Outcome::Found, None)
                    }
                }
                Model::Ensemble(_) => match (&linear, &argmax) {
                    (Some(lin), _) => convert(check(lin, &ex.x, ex.y, &spec).context("check", "searching")?),
                    (None, Some(f)) => convert(check(f, &ex.x, ex.y, &spec).context("check", "searching")?),
                    (None, None) => unreachable!("ensembles always have an argmax view"),
                },
                Model::Radius(RadiusModel::Linear(p)) => convert(check(p.scorer(), &ex.x, ex.y, &spec).context("check", "searching")?),
                Model::Radius(_) => return Err(wrong_model("check", model)),
            };
            Ok(outcome)
        })
        .collect()
}

/// Recomputes the metrics of `config` for `model` on `dataset`.
pub fn evaluate(config: &ExperimentConfig, model: &Model, dataset: &Dataset) -> Result<Report, CliError> {
    let ball = &config.ball;
    let mut metrics = Map::new();
    let mut curves = Vec::new();
    let mut records = Vec::new();
    match &config.pipeline {
        Pipeline::BoostGame(_) => {
            let Model::Mixture(q) = model else { return Err(wrong_model("boost-game", model)) };
            let attack = evaluation_attack(config.seed, 1);
            insert_accuracy(&mut metrics, mixture_accuracy(q, dataset, ball, "boost-game")?, true);
            let report = margin_report(q, dataset, ball, &ExactStumpEvaluator).context("boost-game", "computing margins")?;
            metrics.insert("max_margin".into(), json!(report.max_margin));
            metrics.insert("min_prob_robust_correct".into(), json!(report.min_prob_robust_correct));
            metrics.insert("all_margins_negative".into(), json!(report.all_negative()));
            metrics.insert("components".into(), json!(q.len()));
            curves.push(accuracy_curve(model, dataset, ball, &attack, "boost-game")?);
        }
        Pipeline::BoostStagewise(cfg) => {
            let Model::Ensemble(f) = model else { return Err(wrong_model("boost-stagewise", model)) };
            let attack = cfg.eval_pgd();
            let final_eval = evaluate_robustness(f, dataset, ball, &attack).context("boost-stagewise", "evaluating")?;
            insert_accuracy(
                &mut metrics,
                Accuracy {
                    clean: final_eval.clean_accuracy,
                    robust: final_eval.robust_accuracy,
                    certified: false,
                },
                true,
            );
            metrics.insert("robust_loss".into(), json!(final_eval.robust_loss));
            let mut stages = Vec::new();
            for t in 1..=f.len() {
                let e = evaluate_robustness(&f.prefix(t), dataset, ball, &attack).context("boost-stagewise", "evaluating stages")?;
                stages.push(json!({
                    "stage": t,
                    "beta": f.stages()[t - 1].0,
                    "clean_accuracy": e.clean_accuracy,
                    "robust_accuracy": e.robust_accuracy,
                    "robust_loss": e.robust_loss,
                }));
            }
            curves.push(Curve {
                series: "stage_robust_accuracy".into(),
                x: "stage".into(),
                points: stages
                    .iter()
                    .map(|s| [s["stage"].as_f64().unwrap_or(0.0), s["robust_accuracy"].as_f64().unwrap_or(0.0)])
                    .collect(),
            });
            metrics.insert("stages".into(), Value::Array(stages));
            curves.insert(0, accuracy_curve(model, dataset, ball, &attack, "boost-stagewise")?);
        }
        Pipeline::Certify(s) => {
            let Model::Radius(r) = model else { return Err(wrong_model("certify", model)) };
            let rows = radii(r, dataset)?;
            let correct = |(row, ex): (&(Label, f64, bool), &robust_boost::Example)| !row.2 && row.0 == ex.y;
            let certified: Vec<f64> = rows.iter().zip(dataset.examples()).filter(|p| correct(*p)).map(|(row, _)| row.1).collect();
            metrics.insert("clean_accuracy".into(), json!(certified_at(&rows, dataset, 0.0)));
            metrics.insert("robust_accuracy".into(), json!(certified_at(&rows, dataset, l2_budget(ball, dataset.dim()))));
            metrics.insert("robust_certified".into(), json!(true));
            metrics.insert("abstentions".into(), json!(rows.iter().filter(|r| r.2).count()));
            metrics.insert(
                "mean_certified_radius".into(),
                json!(if certified.is_empty() { 0.0 } else { certified.iter().sum::<f64>() / certified.len() as f64 }),
            );
            curves.push(Curve {
                series: "certified_accuracy".into(),
                x: "radius".into(),
                points: s.radii.iter().map(|&r| [r, certified_at(&rows, dataset, r)]).collect(),
            });
            for (i, ((label, radius, abstain), ex)) in rows.iter().zip(dataset.examples()).enumerate() {
                records.push(json!({
                    "kind": "certificate",
                    "example": i + 1,
                    "label": ex.y + 1,
                    "predicted": label + 1,
                    "radius": radius,
                    "abstain": abstain,
                    "correct": !abstain && *label == ex.y,
                }));
            }
        }
        Pipeline::Check(s) => {
            let outcomes = check_all(model, dataset, ball, s, config.seed)?;
            let m = dataset.len();
            let share = |o: Outcome| fraction(outcomes.iter().map(|r| r.0 == o), m);
            metrics.insert("found_fraction".into(), json!(share(Outcome::Found)));
            metrics.insert("good_fraction".into(), json!(share(Outcome::Good)));
            metrics.insert("unknown_fraction".into(), json!(share(Outcome::Unknown)));
            metrics.insert("checker_error".into(), json!(2.0 * share(Outcome::Found) - 1.0));
            let mut points = Vec::new();
            for b in budgets(ball) {
                let at = ball.with_delta(b).context("check", "building budgets")?;
                let found = check_all(model, dataset, &at, s, config.seed)?;
                points.push([b, fraction(found.iter().map(|r| r.0 != Outcome::Found), m)]);
            }
            curves.push(Curve {
                series: "unattacked_fraction".into(),
                x: "budget".into(),
                points,
            });
            for (i, (outcome, witness)) in outcomes.into_iter().enumerate() {
                records.push(json!({
                    "kind": "check",
                    "example": i + 1,
                    "outcome": match outcome {
                        Outcome::Found => "found",
                        Outcome::Good => "good",
                        Outcome::Unknown => "unknown",
                    },
                    "witness": witness,
                }));
            }
        }
        Pipeline::Eval(s) => {
            let attack = evaluation_attack(config.seed, s.eval_restarts);
            insert_accuracy(&mut metrics, accuracy(model, dataset, ball, &attack, "eval")?, false);
            let curve = accuracy_curve(model, dataset, ball, &attack, "eval")?;
            for p in &curve.points {
                records.push(json!({"kind": "budget", "budget": p[0], "robust_accuracy": p[1]}));
            }
            curves.push(curve);
        }
    }
    Ok(Report { metrics, curves, records })
}
