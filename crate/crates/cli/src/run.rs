//! Pipeline orchestration and output files.
//!
//! A run directory holds `metrics.json`, `trace.ndjson`, `model.json` and
//! `plotdata.csv`; only this module writes them.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use robust_boost::certify::{SmoothedClassifier, SmoothingConfig};
use robust_boost::game_boost::{run_boost, BoostMode};
use robust_boost::hypotheses::{train_stump_ova_weak_learner, train_stump_weak_learner};
use robust_boost::losses::ExactStumpEvaluator;
use robust_boost::stagewise::run_stagewise;
use robust_boost::synth::SyntheticSpec;
use robust_boost::{build_incorrect_pairs, Dataset, Error as CoreError, Norm};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::archive::{Archive, Model, RadiusModel};
use crate::config::{smoothing_stream, DataSource, ExperimentConfig, Pipeline, Task};
use crate::data::{self, Loaded};
use crate::error::{CliError, Context};
use crate::metrics::{evaluate, Curve, Report};

pub const METRICS_SCHEMA: u64 = 1;

/// Fields of metrics.json that a rerun must reproduce.
const AUDITED: [&str; 3] = ["dataset", "metrics", "curves"];

pub fn load_data(config: &ExperimentConfig) -> Result<Loaded, CliError> {
    match &config.data {
        DataSource::Csv(path) => Ok(Loaded {
            dataset: data::load_csv(path, config.num_classes)?,
            margins: None,
        }),
        DataSource::Synthetic(spec) => data::generate(spec),
    }
}

fn dataset_summary(config: &ExperimentConfig, loaded: &Loaded) -> Value {
    let ds = &loaded.dataset;
    let mut v = json!({"m": ds.len(), "k": ds.num_classes(), "d": ds.dim()});
    match &config.data {
        DataSource::Csv(path) => v["source"] = json!(path.display().to_string()),
        DataSource::Synthetic(spec) => v["source"] = json!(spec.generator),
    }
    if let Some((linf, l2)) = loaded.margins {
        v["margin_linf"] = json!(linf);
        v["margin_l2"] = json!(l2);
    }
    v
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, v: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(v).expect("JSON values serialize");
    text.push('\n');
    write_file(path, &text)
}

fn write_ndjson<T: Serialize>(path: &Path, lines: &[T]) -> Result<(), CliError> {
    let mut text = String::new();
    for line in lines {
        text.push_str(&serde_json::to_string(line).expect("records serialize"));
        text.push('\n');
    }
    write_file(path, &text)
}

pub fn plot_csv(curves: &[Curve]) -> String {
    let mut text = String::from("series,x,y\n");
    for c in curves {
        for [x, y] in &c.points {
            text.push_str(&format!("{},{x},{y}\n", c.series));
        }
    }
    text
}

fn tagged<T: Serialize>(kind: &str, record: &T) -> Value {
    let mut v = serde_json::to_value(record).expect("records serialize");
    v.as_object_mut().expect("records are objects").insert("kind".into(), json!(kind));
    v
}

fn clear_times(trace: &mut [Value]) {
    for line in trace {
        if let Some(ms) = line.get_mut("elapsed_ms") {
            *ms = json!(0);
        }
    }
}

struct Trained {
    model: Model,
    trace: Vec<Value>,
}

fn load_model(config: &ExperimentConfig) -> Result<Model, CliError> {
    let path = config.model.as_deref().ok_or_else(|| CliError::Config("this command needs --model".into()))?;
    Ok(Archive::load(path)?.model)
}

fn train(config: &ExperimentConfig, dataset: &Dataset) -> Result<Trained, CliError> {
    match &config.pipeline {
        Pipeline::BoostGame(g) => {
            let cfg = g.boost_config(config.ball);
            let ball = config.ball;
            let outcome = match g.mode {
                BoostMode::Pairs => {
                    let pairs = build_incorrect_pairs(dataset);
                    run_boost(dataset, |d| train_stump_weak_learner(dataset, &pairs, d, &ball), &ExactStumpEvaluator, &cfg)
                }
                BoostMode::OneVsAll => run_boost(dataset, |d| train_stump_ova_weak_learner(dataset, d, &ball), &ExactStumpEvaluator, &cfg),
            };
            match outcome {
                Ok(out) => Ok(Trained {
                    trace: out.trace.iter().map(|r| tagged("round", r)).collect(),
                    model: Model::Mixture(out.mixture),
                }),
                Err(CoreError::WeakLearnerFailed { round, achieved, trace }) => {
                    // Keep the rounds that did succeed.
                    let mut lines: Vec<Value> = trace.iter().map(|r| tagged("round", r)).collect();
                    if !config.timing {
                        clear_times(&mut lines);
                    }
                    prepare_dir(&config.out)?;
                    write_ndjson(&config.out.join("trace.ndjson"), &lines)?;
                    Err(CliError::Pipeline {
                        pipeline: "boost-game",
                        stage: "boosting",
                        source: CoreError::WeakLearnerFailed { round, achieved, trace },
                    })
                }
                Err(e) => Err(e).context("boost-game", "boosting"),
            }
        }
        Pipeline::BoostStagewise(cfg) => {
            let out = run_stagewise(dataset, cfg).context("boost-stagewise", "training")?;
            let mut trace = Vec::new();
            for stage in &out.stages {
                trace.extend(out.epochs.iter().filter(|e| e.stage == stage.stage).map(|e| tagged("epoch", e)));
                trace.push(tagged("stage", stage));
            }
            Ok(Trained {
                model: Model::Ensemble(out.ensemble),
                trace,
            })
        }
        Pipeline::Certify(s) => {
            let model = match load_model(config)? {
                Model::Ensemble(base) => Model::Radius(RadiusModel::Smoothed(SmoothedClassifier {
                    base,
                    config: SmoothingConfig {
                        confidence: s.confidence,
                        ..SmoothingConfig::new(s.sigma, s.n_samples, smoothing_stream(config.seed))
                    },
                })),
                Model::Radius(r) => Model::Radius(r),
                other => return Err(CliError::Config(format!("certify cannot use a {} model", other.kind()))),
            };
            Ok(Trained { model, trace: Vec::new() })
        }
        Pipeline::Check(_) | Pipeline::Eval(_) => Ok(Trained {
            model: load_model(config)?,
            trace: Vec::new(),
        }),
    }
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn metrics_document(config: &ExperimentConfig, echo: &Value, dataset: Value, report: &Report, elapsed_ms: u64) -> Value {
    json!({
        "schema": METRICS_SCHEMA,
        "pipeline": config.pipeline.name(),
        "seed": config.seed,
        "ball": {"norm": config.ball.norm.to_string(), "delta": config.ball.delta},
        "dataset": dataset,
        "config": echo,
        "metrics": Value::Object(report.metrics.clone()),
        "curves": report.curves,
        "elapsed_ms": elapsed_ms,
    })
}

/// Runs one pipeline and writes its outputs; returns the metrics document.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Value, CliError> {
    let started = Instant::now();
    let loaded = load_data(config)?;
    if config.ball.norm == Norm::L2 && matches!(config.pipeline, Pipeline::BoostGame(_)) && loaded.dataset.dim() > 1 {
        return Err(CliError::Config("exact stump boosting under l2 needs d = 1".into()));
    }
    let trained = train(config, &loaded.dataset)?;
    let report = evaluate(config, &trained.model, &loaded.dataset)?;

    let echo = serde_json::to_value(config).expect("configs serialize");
    let elapsed_ms = if config.timing { started.elapsed().as_millis() as u64 } else { 0 };
    let doc = metrics_document(config, &echo, dataset_summary(config, &loaded), &report, elapsed_ms);

    let mut trace = trained.trace;
    trace.extend(report.records.iter().cloned());
    if !config.timing {
        clear_times(&mut trace);
    }

    prepare_dir(&config.out)?;
    write_json(&config.out.join("metrics.json"), &doc)?;
    write_ndjson(&config.out.join("trace.ndjson"), &trace)?;
    write_file(&config.out.join("plotdata.csv"), &plot_csv(&report.curves))?;
    Archive {
        model: trained.model,
        seed: config.seed,
        config: echo,
    }
    .save(&config.out.join("model.json"))?;
    Ok(doc)
}

/// Recomputes the metrics of the run in `dir` and lists every value that
/// differs from what was written.
pub fn audit(dir: &Path) -> Result<Value, CliError> {
    let metrics_path = dir.join("metrics.json");
    let text = fs::read_to_string(&metrics_path).map_err(|e| CliError::io(&metrics_path, e))?;
    let stored: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", metrics_path.display())))?;
    if stored["schema"] != json!(METRICS_SCHEMA) {
        return Err(CliError::Config(format!("{}: unsupported schema {}", metrics_path.display(), stored["schema"])));
    }
    let mut config: ExperimentConfig =
        serde_json::from_value(stored["config"].clone()).map_err(|e| CliError::Config(format!("{}: {e}", metrics_path.display())))?;
    config.out = dir.to_path_buf();
    let archive = Archive::load(&dir.join("model.json"))?;
    if archive.config != stored["config"] {
        return Err(CliError::AuditMismatch(vec!["model.json config".into()]));
    }
    let loaded = load_data(&config)?;
    let report = evaluate(&config, &archive.model, &loaded.dataset)?;
    let fresh = metrics_document(&config, &stored["config"], dataset_summary(&config, &loaded), &report, 0);

    let mut mismatches = Vec::new();
    for key in AUDITED {
        diff(key, &stored[key], &fresh[key], &mut mismatches);
    }
    if !mismatches.is_empty() {
        return Err(CliError::AuditMismatch(mismatches));
    }
    let mut summary = Map::new();
    summary.insert("audit".into(), json!("ok"));
    summary.insert("run".into(), json!(dir.display().to_string()));
    summary.insert("checked".into(), json!(count_leaves(&fresh["metrics"]) + count_leaves(&fresh["curves"])));
    Ok(Value::Object(summary))
}

fn diff(path: &str, a: &Value, b: &Value, out: &mut Vec<String>) {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            for key in x.keys().chain(y.keys().filter(|k| !x.contains_key(*k))) {
                diff(&format!("{path}.{key}"), x.get(key).unwrap_or(&Value::Null), y.get(key).unwrap_or(&Value::Null), out);
            }
        }
        (Value::Array(x), Value::Array(y)) if x.len() == y.len() => {
            for (i, (u, v)) in x.iter().zip(y).enumerate() {
                diff(&format!("{path}[{i}]"), u, v, out);
            }
        }
        _ if a != b => out.push(format!("{path} (stored {a}, recomputed {b})")),
        _ => {}
    }
}

fn count_leaves(v: &Value) -> usize {
    match v {
        Value::Object(m) => m.values().map(count_leaves).sum(),
        Value::Array(a) => a.iter().map(count_leaves).sum(),
        _ => 1,
    }
}

/// Writes `data.csv` and `synth.json` (spec and robust margins).
pub fn synth(spec: &SyntheticSpec, out: &Path) -> Result<Value, CliError> {
    let loaded = data::generate(spec)?;
    prepare_dir(out)?;
    data::write_csv(&loaded.dataset, &out.join("data.csv"))?;
    let (linf, l2) = loaded.margins.expect("synthetic data has margins");
    let doc = json!({
        "spec": spec,
        "m": loaded.dataset.len(),
        "k": loaded.dataset.num_classes(),
        "d": loaded.dataset.dim(),
        "margin_linf": linf,
        "margin_l2": l2,
    });
    write_json(&out.join("synth.json"), &doc)?;
    Ok(doc)
}

/// Executes a resolved task and returns a one-line summary.
pub fn execute(task: Task) -> Result<Value, CliError> {
    match task {
        Task::Run(config) => {
            let doc = run_experiment(&config)?;
            Ok(json!({
                "pipeline": doc["pipeline"],
                "out": config.out.display().to_string(),
                "metrics": doc["metrics"],
            }))
        }
        Task::Audit(dir) => audit(&dir),
        Task::Synth { spec, out } => {
            let doc = synth(&spec, &out)?;
            Ok(json!({"synth": out.display().to_string(), "margin_linf": doc["margin_linf"]}))
        }
    }
}

/// Prints `record` as one JSON line.
pub fn emit(mut to: impl Write, record: &Value) {
    let _ = writeln!(to, "{record}");
}
