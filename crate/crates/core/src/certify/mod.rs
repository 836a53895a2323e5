//! Certification: randomized smoothing radii, certified accuracy, radius
//! aggregation for mixtures, and approximate checkers.

mod checker;
mod quantile;
mod radius;
mod smoothing;

pub use checker::{check, checker_error, weak_learn_via_checker, CheckOutcome, Checkable, CheckerBackend, CheckerDecision, CheckerSpec};
pub use quantile::{gaussian_cdf, gaussian_quantile};
pub use radius::{aggregate_radius, certified_accuracy, AggregateRadius, LinearRadiusPredictor, RadiusPredictor, SmoothedClassifier};
pub use smoothing::{
    certified_radius, certify_point, clip_probability, smooth_class_counts, smooth_class_probs, CertResult, RadiusCertificate,
    SmoothingConfig,
};
