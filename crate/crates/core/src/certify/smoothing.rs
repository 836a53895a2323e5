//! Randomized smoothing: Monte Carlo class probabilities under Gaussian
//! noise and the resulting l2 certified radius.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use super::quantile::gaussian_quantile;
use crate::domain::Label;
use crate::error::{Error, Result};
use crate::hypotheses::{argmax_label, ScorePredictor};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub sigma: f64,
    pub n_samples: usize,
    pub rng: SeededRng,
    /// Replace point estimates by two-sided Clopper-Pearson bounds at this
    /// level (lower for the top class, upper for the runner-up). Stricter
    /// than the plain formula; off by default.
    pub confidence: Option<f64>,
}

impl SmoothingConfig {
    pub fn new(sigma: f64, n_samples: usize, rng: SeededRng) -> Self {
        Self {
            sigma,
            n_samples,
            rng,
            confidence: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidConfig(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidConfig("smoothing needs at least one sample".into()));
        }
        if let Some(alpha) = self.confidence {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::InvalidConfig(format!("confidence level must lie in (0, 1), got {alpha}")));
            }
        }
        Ok(())
    }
}

/// How often each label wins under `n_samples` draws of `x + N(0, sigma^2 I)`.
pub fn smooth_class_counts<F>(f: &F, x: &[f64], config: &SmoothingConfig) -> Result<Vec<usize>>
where
    F: ScorePredictor + ?Sized,
{
    config.validate()?;
    let noise = Normal::new(0.0, config.sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut g = config.rng.generator();
    let mut counts = vec![0; f.num_classes()];
    let mut xe = x.to_vec();
    for _ in 0..config.n_samples {
        for (o, a) in xe.iter_mut().zip(x) {
            *o = a + noise.sample(&mut g);
        }
        counts[argmax_label(&f.scores(&xe))] += 1;
    }
    Ok(counts)
}

/// Empirical frequencies of the smoothed classifier's votes.
pub fn smooth_class_probs<F>(f: &F, x: &[f64], config: &SmoothingConfig) -> Result<Vec<f64>>
where
    F: ScorePredictor + ?Sized,
{
    let counts = smooth_class_counts(f, x, config)?;
    let n = config.n_samples as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// The smoothed prediction at one point with its l2 radius.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadiusCertificate {
    pub label: Label,
    pub runner_up: Label,
    pub radius: f64,
    pub abstain: bool,
}

/// Top label and runner-up (lowest index on ties).
fn top_two(probs: &[f64]) -> (Label, Label) {
    let y = argmax_label(probs);
    let mut runner = if y == 0 { 1 } else { 0 };
    for (c, &p) in probs.iter().enumerate() {
        if c != y && p > probs[runner] {
            runner = c;
        }
    }
    (y, runner)
}

fn radius_from(p_top: f64, p_runner: f64, sigma: f64) -> Result<f64> {
    let r = 0.5 * sigma * (gaussian_quantile(p_top)? - gaussian_quantile(p_runner)?);
    Ok(r.max(0.0))
}

/// `sigma / 2 * (Phi^{-1}(p_y) - Phi^{-1}(p_y'))` for the top two entries,
/// clamped at 0; abstains on a tie. Entries must lie in `(0, 1)`.
pub fn certified_radius(probs: &[f64], sigma: f64) -> Result<RadiusCertificate> {
    let (label, runner_up) = top_two(probs);
    if probs[label] == probs[runner_up] {
        return Ok(RadiusCertificate {
            label,
            runner_up,
            radius: 0.0,
            abstain: true,
        });
    }
    Ok(RadiusCertificate {
        label,
        runner_up,
        radius: radius_from(probs[label], probs[runner_up], sigma)?,
        abstain: false,
    })
}

/// Clips Monte Carlo frequencies to `[1/(2n), 1 - 1/(2n)]`.
pub fn clip_probability(p: f64, n: usize) -> f64 {
    let eps = 0.5 / n as f64;
    p.clamp(eps, 1.0 - eps)
}

fn clopper_pearson(count: usize, n: usize, alpha: f64) -> (f64, f64) {
    let (c, n) = (count as f64, n as f64);
    let lower = if count == 0 {
        0.0
    } else {
        Beta::new(c, n - c + 1.0).map(|b| b.inverse_cdf(alpha / 2.0)).unwrap_or(0.0)
    };
    let upper = if count as f64 == n {
        1.0
    } else {
        Beta::new(c + 1.0, n - c).map(|b| b.inverse_cdf(1.0 - alpha / 2.0)).unwrap_or(1.0)
    };
    (lower, upper)
}

/// Smoothing result at one input.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertResult {
    pub label: Label,
    pub probs: Vec<f64>,
    pub radius: f64,
    pub abstain: bool,
}

/// Monte Carlo estimate of the smoothed classifier at `x` and its radius.
pub fn certify_point<F>(f: &F, x: &[f64], config: &SmoothingConfig) -> Result<CertResult>
where
    F: ScorePredictor + ?Sized,
{
    let counts = smooth_class_counts(f, x, config)?;
    let n = config.n_samples;
    let probs: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let (label, runner_up) = top_two(&probs);
    if probs[label] == probs[runner_up] {
        return Ok(CertResult {
            label,
            probs,
            radius: 0.0,
            abstain: true,
        });
    }
    let (p_top, p_runner) = match config.confidence {
        None => (probs[label], probs[runner_up]),
        Some(alpha) => (
            clopper_pearson(counts[label], n, alpha).0,
            clopper_pearson(counts[runner_up], n, alpha).1,
        ),
    };
    let radius = radius_from(clip_probability(p_top, n), clip_probability(p_runner, n), config.sigma)?;
    Ok(CertResult {
        label,
        probs,
        radius,
        abstain: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypotheses::LinearScorer;

    #[test]
    fn radius_examples() {
        let tie = certified_radius(&[0.5, 0.5], 1.0).unwrap();
        assert!(tie.abstain && tie.radius == 0.0);
        let r = certified_radius(&[0.9772, 0.0228], 0.5).unwrap();
        assert_eq!(r.label, 0);
        assert!((r.radius - 1.0).abs() < 1e-3);
    }

    #[test]
    fn constant_predictor_is_onehot() {
        // Scores that ignore x.
        let f = LinearScorer::new(vec![vec![0.0], vec![0.0], vec![0.0]], vec![0.0, 1.0, 0.0]).unwrap();
        let probs = smooth_class_probs(&f, &[3.0], &SmoothingConfig::new(1.0, 17, SeededRng::new(1, 2))).unwrap();
        assert_eq!(probs, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn tiny_sigma_far_from_boundary() {
        let f = LinearScorer::new(vec![vec![-1.0], vec![1.0]], vec![0.0, 0.0]).unwrap();
        let res = certify_point(&f, &[2.0], &SmoothingConfig::new(1e-6, 100, SeededRng::new(0, 0))).unwrap();
        assert_eq!(res.probs, vec![0.0, 1.0]);
        assert_eq!(res.label, 1);
        // Clipped at 1/(2n): radius = 1e-6 * Phi^{-1}(1 - 1/200).
        assert!(res.radius > 0.0);
    }

    #[test]
    fn conservative_mode_is_smaller() {
        let f = LinearScorer::new(vec![vec![-1.0], vec![1.0]], vec![0.0, 0.0]).unwrap();
        let mut cfg = SmoothingConfig::new(0.5, 500, SeededRng::new(4, 4));
        let plain = certify_point(&f, &[0.3], &cfg).unwrap();
        cfg.confidence = Some(0.001);
        let strict = certify_point(&f, &[0.3], &cfg).unwrap();
        assert!(strict.radius < plain.radius);
    }
}
