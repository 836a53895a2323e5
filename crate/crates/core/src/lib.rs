//! Adversarially robust multiclass boosting.
//!
//! * [`game_boost`]: Hedge-based minimax boosting over robust weak learners
//!   with exactly evaluable reach sets; the plurality vote of the result is
//!   robust on every training point.
//! * [`stagewise`]: greedy stagewise adversarial boosting of small networks,
//!   with PGD inner maximization and a cyclic learning rate.
//! * [`certify`]: randomized smoothing radii, certified accuracy, radius
//!   aggregation for mixtures and approximate checkers.
//!
//! Labels are 0-based throughout the library.

pub mod certify;
pub mod domain;
pub mod error;
pub mod game_boost;
pub mod hypotheses;
pub mod losses;
pub mod pgd;
pub mod rng;
pub mod stagewise;
pub mod synth;

pub use domain::{
    build_incorrect_pairs, Dataset, Example, FiniteDistribution, IncorrectPairSet, Label, LabelSet, Norm, Pair,
    PerturbationBall,
};
pub use error::{Error, Result};
pub use rng::SeededRng;
