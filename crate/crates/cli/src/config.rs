//! Command-line surface, config files and their resolution into an
//! [`ExperimentConfig`].
//!
//! Every flag may also be given in a TOML file passed with `--config`, under
//! the flag's own name (`delta = 0.3`, `eta-max = 0.05`, `hidden = [32]`).
//! Flags override the file. The seed comes from `--seed`, then the `RB_SEED`
//! environment variable, then the file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use robust_boost::game_boost::{BoostConfig, BoostMode};
use robust_boost::pgd::PgdConfig;
use robust_boost::stagewise::{NoiseConfig, OffsetMode, StagewiseConfig};
use robust_boost::synth::{Generator, SyntheticSpec};
use robust_boost::{Norm, PerturbationBall, SeededRng};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::CliError;

/// Declares a group of optional settings and `or`, which fills unset fields
/// from a fallback.
macro_rules! layered {
    ($(#[$meta:meta])* pub struct $name:ident { $($(#[$fmeta:meta])* pub $field:ident: $ty:ty,)* }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
        #[serde(rename_all = "kebab-case")]
        pub struct $name {
            $(
                $(#[$fmeta])*
                #[serde(default, skip_serializing_if = "Option::is_none")]
                pub $field: Option<$ty>,
            )*
        }

        impl $name {
            pub fn or(self, fallback: Self) -> Self {
                Self { $($field: self.$field.or(fallback.$field),)* }
            }
        }
    };
}

/// Parses a unit enum variant through its serde name.
fn kebab<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    T::deserialize(serde::de::value::StrDeserializer::<serde::de::value::Error>::new(s)).map_err(|e| e.to_string())
}

fn norm_from_text<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Norm>, D::Error> {
    let text = String::deserialize(d)?;
    text.parse().map(Some).map_err(serde::de::Error::custom)
}

layered! {
    pub struct DataArgs {
        /// CSV dataset with header `label,f1,...,fd` and labels 1..k.
        #[arg(long, conflicts_with = "synthetic")]
        pub data: PathBuf,
        /// Synthetic generator: stripes-1d, gaussian-blobs or concentric-rings.
        #[arg(long, value_parser = kebab::<Generator>)]
        pub synthetic: Generator,
        /// Classes of the synthetic data.
        #[arg(long)]
        pub k: usize,
        /// Dimension of the synthetic data.
        #[arg(long)]
        pub d: usize,
        /// Number of synthetic examples.
        #[arg(long)]
        pub m: usize,
        /// Class separation of the synthetic data.
        #[arg(long)]
        pub separation: f64,
        /// Number of classes of a CSV dataset (default: largest label).
        #[arg(long)]
        pub num_classes: usize,
    }
}

layered! {
    pub struct BallArgs {
        /// Perturbation norm: inf or 2.
        #[arg(long)]
        #[serde(deserialize_with = "norm_from_text")]
        pub norm: Norm,
        /// Perturbation radius.
        #[arg(long)]
        pub delta: f64,
    }
}

layered! {
    pub struct RunArgs {
        /// Master seed (default: $RB_SEED, then 0).
        #[arg(long)]
        pub seed: u64,
        /// Output directory.
        #[arg(long)]
        pub out: PathBuf,
        /// Write 0 for every wall-clock field so runs are byte-comparable.
        #[arg(long, num_args = 0..=1, default_missing_value = "true")]
        pub no_timing: bool,
    }
}

layered! {
    pub struct GameArgs {
        /// Weak-learning edge.
        #[arg(long)]
        pub gamma: f64,
        /// Boosting rounds (default: enough for a robust margin).
        #[arg(long)]
        pub rounds: usize,
        /// Hedge step size (default: from gamma and the rounds).
        #[arg(long)]
        pub eta: f64,
        /// pairs or one-vs-all.
        #[arg(long, value_parser = kebab::<BoostMode>)]
        pub mode: BoostMode,
        /// Run every round even once all margins are negative.
        #[arg(long, num_args = 0..=1, default_missing_value = "true")]
        pub no_early_stop: bool,
    }
}

layered! {
    pub struct StagewiseArgs {
        /// Boosting stages T.
        #[arg(long)]
        pub stages: usize,
        /// Epochs of the first stage; each later stage doubles them.
        #[arg(long)]
        pub base_epochs: usize,
        /// Peak of the per-stage cosine learning rate.
        #[arg(long)]
        pub eta_max: f64,
        /// Minibatch size.
        #[arg(long)]
        pub batch_size: usize,
        /// Hidden widths, comma separated; an empty list gives linear stages.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        pub hidden: Vec<usize>,
        /// Start every stage from fresh weights instead of the previous stage.
        #[arg(long, num_args = 0..=1, default_missing_value = "true")]
        pub cold_start: bool,
        /// approximate (offsets at clean inputs) or exact.
        #[arg(long, value_parser = kebab::<OffsetMode>)]
        pub offsets: OffsetMode,
        /// Train on clean inputs.
        #[arg(long, num_args = 0..=1, default_missing_value = "true")]
        pub clean: bool,
        /// Train for smoothing: average the objective over Gaussian input
        /// noise of this standard deviation, attacked by 4 PGD steps of
        /// delta/8 from the input unless --pgd-steps is given.
        #[arg(long)]
        pub noise_sigma: f64,
        /// Noise draws per example and update when --noise-sigma is set.
        #[arg(long)]
        pub noise_samples: usize,
    }
}

layered! {
    pub struct AttackArgs {
        /// Steps of the PGD attack used for training or checking.
        #[arg(long)]
        pub pgd_steps: usize,
        /// Restarts of the PGD attack used for training or checking.
        #[arg(long)]
        pub pgd_restarts: usize,
        /// Restarts of the 20-step evaluation attack.
        #[arg(long)]
        pub eval_restarts: usize,
    }
}

layered! {
    pub struct SmoothingArgs {
        /// Noise level of randomized smoothing.
        #[arg(long)]
        pub sigma: f64,
        /// Monte Carlo samples per example.
        #[arg(long)]
        pub n_samples: usize,
        /// Use Clopper-Pearson bounds at this level instead of point estimates.
        #[arg(long)]
        pub confidence: f64,
        /// Radii of the certified-accuracy curve, comma separated.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        pub radii: Vec<f64>,
    }
}

layered! {
    pub struct CheckArgs {
        /// exact or pgd.
        #[arg(long, value_parser = kebab::<Backend>)]
        pub backend: Backend,
        /// Approximation factor of the checker.
        #[arg(long)]
        pub c: f64,
    }
}

layered! {
    pub struct ModelArgs {
        /// Model archive to load.
        #[arg(long)]
        pub model: PathBuf,
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML file supplying any flag.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub ball: BallArgs,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Parser)]
#[command(name = "rboost", version, about = "Adversarially robust multiclass boosting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Minimax boosting of exactly evaluated decision stumps.
    BoostGame {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        game: GameArgs,
    },
    /// Stagewise adversarial boosting of small networks.
    BoostStagewise {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        stagewise: StagewiseArgs,
        #[command(flatten)]
        attack: AttackArgs,
    },
    /// Certified l2 radii by randomized smoothing or exact radius predictors.
    Certify {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        smoothing: SmoothingArgs,
    },
    /// Run a (c, delta)-approximate checker on every example.
    Check {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        check: CheckArgs,
        #[command(flatten)]
        attack: AttackArgs,
    },
    /// Clean and robust accuracy of a saved model.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        attack: AttackArgs,
    },
    /// Recompute a run's metrics from its archived model and dataset.
    Audit {
        /// Output directory of an earlier run.
        #[arg(long)]
        run: PathBuf,
    },
    /// Write a synthetic dataset as CSV.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    Exact,
    Pgd,
}

/// Every settings group as read from a config file.
#[derive(Debug, Default)]
struct FileLayers {
    data: DataArgs,
    ball: BallArgs,
    run: RunArgs,
    game: GameArgs,
    stagewise: StagewiseArgs,
    attack: AttackArgs,
    smoothing: SmoothingArgs,
    check: CheckArgs,
    model: ModelArgs,
}

fn layer<T: DeserializeOwned + Serialize>(table: &toml::Table, known: &mut BTreeSet<String>) -> Result<T, CliError> {
    let group: T = toml::Value::Table(table.clone())
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
    if let serde_json::Value::Object(map) = serde_json::to_value(&group).expect("settings serialize") {
        known.extend(map.keys().cloned());
    }
    Ok(group)
}

impl FileLayers {
    fn read(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Config(format!("{}: {}", path.display(), e.message())))?;
        let mut known = BTreeSet::new();
        let layers = Self {
            data: layer(&table, &mut known)?,
            ball: layer(&table, &mut known)?,
            run: layer(&table, &mut known)?,
            game: layer(&table, &mut known)?,
            stagewise: layer(&table, &mut known)?,
            attack: layer(&table, &mut known)?,
            smoothing: layer(&table, &mut known)?,
            check: layer(&table, &mut known)?,
            model: layer(&table, &mut known)?,
        };
        let unknown: Vec<&String> = table.keys().filter(|k| !known.contains(*k)).collect();
        if !unknown.is_empty() {
            return Err(CliError::Config(format!("{}: unknown keys {unknown:?}", path.display())));
        }
        Ok(layers)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    Csv(PathBuf),
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct GameSettings {
    pub gamma: f64,
    pub rounds: Option<usize>,
    pub eta: Option<f64>,
    pub mode: BoostMode,
    pub early_stop: bool,
}

impl GameSettings {
    pub fn boost_config(&self, ball: PerturbationBall) -> BoostConfig {
        BoostConfig {
            rounds: self.rounds,
            eta: self.eta,
            mode: self.mode,
            early_stop: self.early_stop,
            ..BoostConfig::new(self.gamma, ball)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct CertifySettings {
    pub sigma: f64,
    pub n_samples: usize,
    pub confidence: Option<f64>,
    pub radii: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct CheckSettings {
    pub backend: Backend,
    pub c: f64,
    pub pgd_steps: usize,
    pub pgd_restarts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvalSettings {
    pub eval_restarts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    BoostGame(GameSettings),
    BoostStagewise(StagewiseConfig),
    Certify(CertifySettings),
    Check(CheckSettings),
    Eval(EvalSettings),
}

impl Pipeline {
    pub fn name(&self) -> &'static str {
        match self {
            Pipeline::BoostGame(_) => "boost-game",
            Pipeline::BoostStagewise(_) => "boost-stagewise",
            Pipeline::Certify(_) => "certify",
            Pipeline::Check(_) => "check",
            Pipeline::Eval(_) => "eval",
        }
    }
}

/// A fully resolved run. The serialized form is echoed into metrics.json
/// and the model archive; it leaves out where files are read from and
/// written to, so it is identical across output directories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ExperimentConfig {
    pub pipeline: Pipeline,
    pub data: DataSource,
    pub num_classes: Option<usize>,
    pub ball: PerturbationBall,
    pub seed: u64,
    #[serde(skip)]
    pub out: PathBuf,
    #[serde(skip)]
    pub timing: bool,
    #[serde(skip)]
    pub model: Option<PathBuf>,
}

/// The random streams of a run, one per consumer.
pub fn stagewise_stream(seed: u64) -> SeededRng {
    SeededRng::new(seed, 0)
}

pub fn attack_stream(seed: u64) -> SeededRng {
    SeededRng::new(seed, 1)
}

pub fn smoothing_stream(seed: u64) -> SeededRng {
    SeededRng::new(seed, 2)
}

/// What a command line asks for.
#[derive(Debug, Clone, PartialEq)]
pub enum Task {
    Run(Box<ExperimentConfig>),
    Audit(PathBuf),
    Synth { spec: SyntheticSpec, out: PathBuf },
}

pub const DEFAULT_RADII: [f64; 9] = [0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0];

fn seed_from(flag: Option<u64>, file: Option<u64>) -> Result<u64, CliError> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match std::env::var("RB_SEED") {
        Ok(text) => text
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("RB_SEED={text:?} is not an unsigned integer"))),
        Err(_) => Ok(file.unwrap_or(0)),
    }
}

fn synthetic_spec(data: &DataArgs, seed: u64) -> Option<SyntheticSpec> {
    let generator = data.synthetic?;
    let (k, d, m, separation) = match generator {
        Generator::Stripes1d => (2, 1, 20, 1.5),
        Generator::GaussianBlobs => (3, 2, 60, 4.0),
        Generator::ConcentricRings => (2, 2, 60, 1.0),
    };
    Some(SyntheticSpec {
        generator,
        k: data.k.unwrap_or(k),
        d: data.d.unwrap_or(d),
        m: data.m.unwrap_or(m),
        separation: data.separation.unwrap_or(separation),
        seed,
    })
}

fn positive(name: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Config(format!("{name} must be > 0, got {v}")))
    }
}

impl Command {
    pub fn resolve(self) -> Result<Task, CliError> {
        let (common, model, pipeline) = match self {
            Command::Audit { run } => return Ok(Task::Audit(run)),
            Command::Synth { common } => {
                let file = FileLayers::read(common.config.as_deref())?;
                let seed = seed_from(common.run.seed, file.run.seed)?;
                let data = common.data.or(file.data);
                let run = common.run.or(file.run);
                let spec = synthetic_spec(&data, seed).ok_or_else(|| CliError::Config("synth needs --synthetic".into()))?;
                return Ok(Task::Synth {
                    spec,
                    out: run.out.unwrap_or_else(|| PathBuf::from("rboost-out")),
                });
            }
            Command::BoostGame { common, game } => (common, None, Selected::Game(game)),
            Command::BoostStagewise {
                common,
                stagewise,
                attack,
            } => (common, None, Selected::Stagewise(stagewise, attack)),
            Command::Certify {
                common,
                model,
                smoothing,
            } => (common, Some(model), Selected::Certify(smoothing)),
            Command::Check {
                common,
                model,
                check,
                attack,
            } => (common, Some(model), Selected::Check(check, attack)),
            Command::Eval { common, model, attack } => (common, Some(model), Selected::Eval(attack)),
        };

        let file = FileLayers::read(common.config.as_deref())?;
        let seed = seed_from(common.run.seed, file.run.seed)?;
        let data = common.data.or(file.data);
        let ball = common.ball.or(file.ball);
        let run = common.run.or(file.run);

        let source = match (&data.data, synthetic_spec(&data, seed)) {
            (Some(path), None) => DataSource::Csv(path.clone()),
            (None, Some(spec)) => DataSource::Synthetic(spec),
            (Some(_), Some(_)) => return Err(CliError::Config("give either --data or --synthetic, not both".into())),
            (None, None) => return Err(CliError::Config("need a dataset: --data FILE or --synthetic GENERATOR".into())),
        };
        let ball = PerturbationBall::new(ball.norm.unwrap_or(Norm::LInf), ball.delta.unwrap_or(0.1))
            .map_err(|e| CliError::Config(e.to_string()))?;

        let model = match model {
            Some(m) => Some(
                m.or(file.model)
                    .model
                    .ok_or_else(|| CliError::Config("this command needs --model".into()))?,
            ),
            None => None,
        };

        let pipeline = match pipeline {
            Selected::Game(g) => {
                let g = g.or(file.game);
                Pipeline::BoostGame(GameSettings {
                    gamma: g.gamma.unwrap_or(0.2),
                    rounds: g.rounds,
                    eta: g.eta,
                    mode: g.mode.unwrap_or_default(),
                    early_stop: !g.no_early_stop.unwrap_or(false),
                })
            }
            Selected::Stagewise(s, a) => {
                let (s, a) = (s.or(file.stagewise), a.or(file.attack));
                let defaults = StagewiseConfig::default();
                if s.noise_samples.is_some() && s.noise_sigma.is_none() {
                    return Err(CliError::Config("noise-samples needs noise-sigma".into()));
                }
                let noise = s.noise_sigma.map(|sigma| NoiseConfig {
                    sigma,
                    n_samples: s.noise_samples.unwrap_or(2),
                });
                let preset = match noise {
                    Some(_) => PgdConfig::smoothing(attack_stream(seed)),
                    None => PgdConfig::training(attack_stream(seed)),
                };
                let pgd = PgdConfig {
                    steps: a.pgd_steps.unwrap_or(preset.steps),
                    restarts: a.pgd_restarts.unwrap_or(preset.restarts),
                    ..preset
                };
                let cfg = StagewiseConfig {
                    stages: s.stages.unwrap_or(defaults.stages),
                    base_epochs: s.base_epochs.unwrap_or(defaults.base_epochs),
                    eta_max: s.eta_max.unwrap_or(defaults.eta_max),
                    batch_size: s.batch_size.unwrap_or(defaults.batch_size),
                    ball,
                    pgd,
                    adversarial: !s.clean.unwrap_or(false),
                    warm_start: !s.cold_start.unwrap_or(false),
                    hidden: s.hidden.unwrap_or(defaults.hidden),
                    offsets: s.offsets.unwrap_or_default(),
                    eval_restarts: a.eval_restarts.unwrap_or(defaults.eval_restarts),
                    noise,
                    rng: stagewise_stream(seed),
                };
                cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
                Pipeline::BoostStagewise(cfg)
            }
            Selected::Certify(s) => {
                let s = s.or(file.smoothing);
                let settings = CertifySettings {
                    sigma: positive("sigma", s.sigma.unwrap_or(0.25))?,
                    n_samples: s.n_samples.unwrap_or(1000),
                    confidence: s.confidence,
                    radii: s.radii.unwrap_or_else(|| DEFAULT_RADII.to_vec()),
                };
                if settings.n_samples == 0 {
                    return Err(CliError::Config("n-samples must be >= 1".into()));
                }
                Pipeline::Certify(settings)
            }
            Selected::Check(c, a) => {
                let (c, a) = (c.or(file.check), a.or(file.attack));
                let settings = CheckSettings {
                    backend: c.backend.unwrap_or(Backend::Exact),
                    c: c.c.unwrap_or(1.0),
                    pgd_steps: a.pgd_steps.unwrap_or(20),
                    pgd_restarts: a.pgd_restarts.unwrap_or(1),
                };
                if settings.pgd_steps == 0 || settings.pgd_restarts == 0 {
                    return Err(CliError::Config("pgd-steps and pgd-restarts must be >= 1".into()));
                }
                Pipeline::Check(settings)
            }
            Selected::Eval(a) => {
                let a = a.or(file.attack);
                let eval_restarts = a.eval_restarts.unwrap_or(3);
                if eval_restarts == 0 {
                    return Err(CliError::Config("eval-restarts must be >= 1".into()));
                }
                Pipeline::Eval(EvalSettings { eval_restarts })
            }
        };

        Ok(Task::Run(Box::new(ExperimentConfig {
            pipeline,
            num_classes: match source {
                DataSource::Csv(_) => data.num_classes,
                DataSource::Synthetic(_) => None,
            },
            data: source,
            ball,
            seed,
            out: run.out.unwrap_or_else(|| PathBuf::from("rboost-out")),
            timing: !run.no_timing.unwrap_or(false),
            model,
        })))
    }
}

enum Selected {
    Game(GameArgs),
    Stagewise(StagewiseArgs, AttackArgs),
    Certify(SmoothingArgs),
    Check(CheckArgs, AttackArgs),
    Eval(AttackArgs),
}
