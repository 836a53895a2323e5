//! Versioned JSON model archives.
//!
//! Every parameter is written as decimal text with 17 significant digits,
//! which round-trips `f64` exactly, so save -> load -> save is byte-identical.
//! Labels and feature indices are 1-based on disk.

use std::path::Path;

use robust_boost::certify::{LinearRadiusPredictor, SmoothedClassifier, SmoothingConfig};
use robust_boost::hypotheses::{AdditiveEnsemble, DecisionStump, LinearScorer, MixtureQ, Mlp, Parametric, ScorePredictor};
use robust_boost::{FiniteDistribution, SeededRng};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::error::{ArchiveError, CliError};

pub const FORMAT_VERSION: u64 = 1;

/// Predictors with a certified l2 radius.
#[derive(Debug, Clone, PartialEq)]
pub enum RadiusModel {
    /// Binary linear classifier with its exact distance to the boundary.
    Linear(LinearRadiusPredictor),
    /// Mixture of binary linear classifiers, certified by radius aggregation.
    LinearMixture(MixtureQ<LinearRadiusPredictor>),
    Smoothed(SmoothedClassifier<AdditiveEnsemble<Mlp>>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Mixture(MixtureQ<DecisionStump>),
    Ensemble(AdditiveEnsemble<Mlp>),
    Radius(RadiusModel),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Mixture(_) => "mixture",
            Model::Ensemble(_) => "additive-ensemble",
            Model::Radius(_) => "radius-predictor",
        }
    }
}

/// A model with the seed and resolved configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub model: Model,
    pub seed: u64,
    pub config: Value,
}

/// `f64` stored as `{:.16e}` text.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Num(f64);

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{:.16e}", self.0))
    }
}

impl<'de> Deserialize<'de> for Num {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse()
            .map(Num)
            .map_err(|_| serde::de::Error::custom(format!("{text:?} is not a number")))
    }
}

fn nums(v: &[f64]) -> Vec<Num> {
    v.iter().copied().map(Num).collect()
}

fn floats(v: &[Num]) -> Vec<f64> {
    v.iter().map(|n| n.0).collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    format_version: u64,
    kind: String,
    seed: u64,
    config: Value,
    model: Value,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StumpDoc {
    weight: Num,
    feature: usize,
    threshold: Num,
    left: usize,
    right: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MixtureDoc {
    num_classes: usize,
    components: Vec<StumpDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StageDoc {
    beta: Num,
    sizes: Vec<usize>,
    params: Vec<Num>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnsembleDoc {
    num_classes: usize,
    dim: usize,
    stages: Vec<StageDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearDoc {
    weights: Vec<Vec<Num>>,
    bias: Vec<Num>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightedLinearDoc {
    weight: Num,
    weights: Vec<Vec<Num>>,
    bias: Vec<Num>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "predictor", rename_all = "kebab-case", deny_unknown_fields)]
enum RadiusDoc {
    Linear {
        weights: Vec<Vec<Num>>,
        bias: Vec<Num>,
    },
    LinearMixture {
        members: Vec<WeightedLinearDoc>,
    },
    Smoothed {
        sigma: Num,
        n_samples: usize,
        confidence: Option<Num>,
        rng_seed: u64,
        rng_stream: u64,
        base: EnsembleDoc,
    },
}

fn corrupt(message: impl std::fmt::Display) -> ArchiveError {
    ArchiveError::CorruptArchive(message.to_string())
}

fn linear_doc(f: &LinearScorer) -> LinearDoc {
    LinearDoc {
        weights: (0..f.num_classes()).map(|c| nums(f.row(c))).collect(),
        bias: (0..f.num_classes()).map(|c| Num(f.bias(c))).collect(),
    }
}

fn linear_from(weights: &[Vec<Num>], bias: &[Num]) -> Result<LinearScorer, ArchiveError> {
    LinearScorer::new(weights.iter().map(|r| floats(r)).collect(), floats(bias)).map_err(corrupt)
}

fn binary_from(weights: &[Vec<Num>], bias: &[Num]) -> Result<LinearRadiusPredictor, ArchiveError> {
    LinearRadiusPredictor::new(linear_from(weights, bias)?).map_err(corrupt)
}

fn ensemble_doc(f: &AdditiveEnsemble<Mlp>) -> EnsembleDoc {
    EnsembleDoc {
        num_classes: f.num_classes(),
        dim: f.dim(),
        stages: f
            .stages()
            .iter()
            .map(|(beta, net)| StageDoc {
                beta: Num(*beta),
                sizes: net.sizes().to_vec(),
                params: nums(net.params()),
            })
            .collect(),
    }
}

fn ensemble_from(doc: EnsembleDoc) -> Result<AdditiveEnsemble<Mlp>, ArchiveError> {
    let stages = doc
        .stages
        .into_iter()
        .map(|s| Ok((s.beta.0, Mlp::from_params(&s.sizes, floats(&s.params)).map_err(corrupt)?)))
        .collect::<Result<Vec<_>, ArchiveError>>()?;
    AdditiveEnsemble::from_stages(stages, doc.num_classes, doc.dim).map_err(corrupt)
}

fn to_value<T: Serialize>(doc: &T) -> Value {
    serde_json::to_value(doc).expect("archive documents serialize")
}

fn model_value(model: &Model) -> Value {
    match model {
        Model::Mixture(q) => to_value(&MixtureDoc {
            num_classes: q.num_classes(),
            components: q
                .iter()
                .map(|(w, s)| StumpDoc {
                    weight: Num(w),
                    feature: s.feature + 1,
                    threshold: Num(s.threshold),
                    left: s.left + 1,
                    right: s.right + 1,
                })
                .collect(),
        }),
        Model::Ensemble(f) => to_value(&ensemble_doc(f)),
        Model::Radius(r) => to_value(&match r {
            RadiusModel::Linear(p) => {
                let LinearDoc { weights, bias } = linear_doc(p.scorer());
                RadiusDoc::Linear { weights, bias }
            }
            RadiusModel::LinearMixture(q) => RadiusDoc::LinearMixture {
                members: q
                    .iter()
                    .map(|(w, p)| {
                        let LinearDoc { weights, bias } = linear_doc(p.scorer());
                        WeightedLinearDoc {
                            weight: Num(w),
                            weights,
                            bias,
                        }
                    })
                    .collect(),
            },
            RadiusModel::Smoothed(s) => RadiusDoc::Smoothed {
                sigma: Num(s.config.sigma),
                n_samples: s.config.n_samples,
                confidence: s.config.confidence.map(Num),
                rng_seed: s.config.rng.seed,
                rng_stream: s.config.rng.stream,
                base: ensemble_doc(&s.base),
            },
        }),
    }
}

fn parse<T: DeserializeOwned>(v: Value) -> Result<T, ArchiveError> {
    serde_json::from_value(v).map_err(corrupt)
}

fn label(one_based: usize, k: usize) -> Result<usize, ArchiveError> {
    if one_based == 0 || one_based > k {
        return Err(corrupt(format!("label {one_based} outside 1..={k}")));
    }
    Ok(one_based - 1)
}

fn model_from(kind: &str, v: Value) -> Result<Model, ArchiveError> {
    Ok(match kind {
        "mixture" => {
            let doc: MixtureDoc = parse(v)?;
            let k = doc.num_classes;
            let weights = doc.components.iter().map(|c| c.weight.0).collect();
            let stumps = doc
                .components
                .iter()
                .map(|c| {
                    if c.feature == 0 {
                        return Err(corrupt("feature indices start at 1"));
                    }
                    Ok(DecisionStump::new(c.feature - 1, c.threshold.0, label(c.left, k)?, label(c.right, k)?))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let weights = FiniteDistribution::from_normalized(weights).map_err(corrupt)?;
            Model::Mixture(MixtureQ::new(stumps, weights, k).map_err(corrupt)?)
        }
        "additive-ensemble" => Model::Ensemble(ensemble_from(parse(v)?)?),
        "radius-predictor" => Model::Radius(match parse::<RadiusDoc>(v)? {
            RadiusDoc::Linear { weights, bias } => RadiusModel::Linear(binary_from(&weights, &bias)?),
            RadiusDoc::LinearMixture { members } => {
                let weights = FiniteDistribution::from_normalized(members.iter().map(|m| m.weight.0).collect()).map_err(corrupt)?;
                let predictors = members
                    .iter()
                    .map(|m| binary_from(&m.weights, &m.bias))
                    .collect::<Result<Vec<_>, _>>()?;
                RadiusModel::LinearMixture(MixtureQ::new(predictors, weights, 2).map_err(corrupt)?)
            }
            RadiusDoc::Smoothed {
                sigma,
                n_samples,
                confidence,
                rng_seed,
                rng_stream,
                base,
            } => {
                let config = SmoothingConfig {
                    sigma: sigma.0,
                    n_samples,
                    rng: SeededRng::new(rng_seed, rng_stream),
                    confidence: confidence.map(|c| c.0),
                };
                config.validate().map_err(corrupt)?;
                RadiusModel::Smoothed(SmoothedClassifier {
                    base: ensemble_from(base)?,
                    config,
                })
            }
        }),
        other => return Err(corrupt(format!("unknown model kind {other:?}"))),
    })
}

impl Archive {
    pub fn to_json(&self) -> String {
        let doc = Document {
            format_version: FORMAT_VERSION,
            kind: self.model.kind().to_string(),
            seed: self.seed,
            config: self.config.clone(),
            model: model_value(&self.model),
        };
        let mut text = serde_json::to_string_pretty(&doc).expect("archive documents serialize");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self, ArchiveError> {
        let value: Value = serde_json::from_str(text).map_err(corrupt)?;
        // Check the version before the layout, which may have changed.
        match value.get("format_version").and_then(Value::as_u64) {
            Some(FORMAT_VERSION) => {}
            Some(found) => {
                return Err(ArchiveError::VersionMismatch {
                    found,
                    supported: FORMAT_VERSION,
                })
            }
            None => return Err(corrupt("missing format_version")),
        }
        let doc: Document = parse(value)?;
        Ok(Archive {
            model: model_from(&doc.kind, doc.model)?,
            seed: doc.seed,
            config: doc.config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_json()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Archive::from_json(&text).map_err(|source| CliError::Archive {
            path: path.to_path_buf(),
            source,
        })
    }
}
