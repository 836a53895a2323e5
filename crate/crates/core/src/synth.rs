//! Small synthetic datasets with a known robust-separability margin.
//!
//! `margin_*` is half the smallest distance between points of different
//! classes, so every point's ball of that radius contains no other class.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, Example};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    /// `k` unit-width intervals on the line, centers `2 * separation` apart.
    #[serde(rename = "stripes-1d")]
    Stripes1d,
    /// Collinear Gaussian blobs with `sigma = separation / 4`, noise
    /// truncated at `1.5 sigma` per coordinate.
    GaussianBlobs,
    /// Rings of radius `(c + 1) * separation` in the plane, radial jitter
    /// within `separation / 8`.
    ConcentricRings,
}

impl std::str::FromStr for Generator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stripes-1d" => Ok(Self::Stripes1d),
            "gaussian-blobs" => Ok(Self::GaussianBlobs),
            "concentric-rings" => Ok(Self::ConcentricRings),
            other => Err(Error::InvalidConfig(format!("unknown generator {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub generator: Generator,
    pub k: usize,
    pub d: usize,
    pub m: usize,
    pub separation: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub margin_linf: f64,
    pub margin_l2: f64,
}

/// Points per class: `m / k`, the first `m % k` classes get one more.
fn class_sizes(m: usize, k: usize) -> Vec<usize> {
    (0..k).map(|c| m / k + usize::from(c < m % k)).collect()
}

impl SyntheticSpec {
    pub fn generate(&self) -> Result<SyntheticData> {
        if self.k < 2 || self.m < self.k || self.d == 0 {
            return Err(Error::InvalidConfig(format!(
                "need k >= 2, m >= k and d >= 1 (got k = {}, m = {}, d = {})",
                self.k, self.m, self.d
            )));
        }
        if !(self.separation > 0.0) || !self.separation.is_finite() {
            return Err(Error::InvalidConfig(format!("separation must be > 0, got {}", self.separation)));
        }
        match self.generator {
            Generator::Stripes1d => self.stripes(),
            Generator::GaussianBlobs => self.blobs(),
            Generator::ConcentricRings => self.rings(),
        }
    }

    fn stripes(&self) -> Result<SyntheticData> {
        if self.d != 1 {
            return Err(Error::InvalidConfig("stripes-1d has d = 1".into()));
        }
        let k = self.k as f64;
        let mut examples = Vec::with_capacity(self.m);
        for (c, n) in class_sizes(self.m, self.k).into_iter().enumerate() {
            let center = (c as f64 - (k - 1.0) / 2.0) * 2.0 * self.separation;
            for i in 0..n {
                let x = if n == 1 {
                    center
                } else {
                    center - 0.5 + i as f64 / (n - 1) as f64
                };
                examples.push(Example::new(vec![x], c));
            }
        }
        let margin = self.separation - 0.5;
        if margin <= 0.0 {
            return Err(Error::InvalidConfig("stripes overlap: separation must exceed 0.5".into()));
        }
        Ok(SyntheticData {
            dataset: Dataset::new(examples, self.k)?,
            margin_linf: margin,
            margin_l2: margin,
        })
    }

    fn blobs(&self) -> Result<SyntheticData> {
        let sigma = self.separation / 4.0;
        let noise = Normal::new(0.0, sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let mut g = SeededRng::new(self.seed, 0).generator();
        let k = self.k as f64;
        let mut examples = Vec::with_capacity(self.m);
        for (c, n) in class_sizes(self.m, self.k).into_iter().enumerate() {
            let center = (c as f64 - (k - 1.0) / 2.0) * self.separation;
            for _ in 0..n {
                let x: Vec<f64> = (0..self.d)
                    .map(|j| {
                        let e = loop {
                            let e: f64 = noise.sample(&mut g);
                            if e.abs() <= 1.5 * sigma {
                                break e;
                            }
                        };
                        if j == 0 {
                            center + e
                        } else {
                            e
                        }
                    })
                    .collect();
                examples.push(Example::new(x, c));
            }
        }
        let margin = self.separation / 8.0;
        Ok(SyntheticData {
            dataset: Dataset::new(examples, self.k)?,
            margin_linf: margin,
            margin_l2: margin,
        })
    }

    fn rings(&self) -> Result<SyntheticData> {
        if self.d != 2 {
            return Err(Error::InvalidConfig("concentric-rings has d = 2".into()));
        }
        let mut g = SeededRng::new(self.seed, 0).generator();
        let jitter = self.separation / 8.0;
        let mut examples = Vec::with_capacity(self.m);
        for (c, n) in class_sizes(self.m, self.k).into_iter().enumerate() {
            let radius = (c + 1) as f64 * self.separation;
            for _ in 0..n {
                let angle = g.random_range(0.0..std::f64::consts::TAU);
                let r = radius + g.random_range(-jitter..=jitter);
                examples.push(Example::new(vec![r * angle.cos(), r * angle.sin()], c));
            }
        }
        let margin_l2 = 3.0 * self.separation / 8.0;
        Ok(SyntheticData {
            dataset: Dataset::new(examples, self.k)?,
            margin_linf: margin_l2 / std::f64::consts::SQRT_2,
            margin_l2,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Norm;

    fn spec(generator: Generator, k: usize, d: usize, m: usize, separation: f64) -> SyntheticSpec {
        SyntheticSpec {
            generator,
            k,
            d,
            m,
            separation,
            seed: 7,
        }
    }

    #[test]
    fn stripes_example() {
        let data = spec(Generator::Stripes1d, 2, 1, 4, 1.5).generate().unwrap();
        let xs: Vec<f64> = data.dataset.examples().iter().map(|e| e.x[0]).collect();
        let ys: Vec<usize> = data.dataset.examples().iter().map(|e| e.y).collect();
        assert_eq!(xs, vec![-2.0, -1.0, 1.0, 2.0]);
        assert_eq!(ys, vec![0, 0, 1, 1]);
        assert_eq!(data.margin_linf, 1.0);
    }

    fn min_cross_distance(ds: &Dataset, norm: Norm) -> f64 {
        let mut best = f64::INFINITY;
        for a in ds.examples() {
            for b in ds.examples() {
                if a.y != b.y {
                    let diff: Vec<f64> = a.x.iter().zip(&b.x).map(|(u, v)| u - v).collect();
                    best = best.min(norm.of(&diff));
                }
            }
        }
        best
    }

    #[test]
    fn recorded_margins_hold() {
        for s in [
            spec(Generator::Stripes1d, 3, 1, 30, 1.2),
            spec(Generator::GaussianBlobs, 3, 2, 150, 4.0),
            spec(Generator::ConcentricRings, 3, 2, 150, 1.0),
        ] {
            let data = s.generate().unwrap();
            assert!(min_cross_distance(&data.dataset, Norm::LInf) >= 2.0 * data.margin_linf);
            assert!(min_cross_distance(&data.dataset, Norm::L2) >= 2.0 * data.margin_l2);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let s = spec(Generator::GaussianBlobs, 3, 2, 60, 4.0);
        assert_eq!(s.generate().unwrap().dataset, s.generate().unwrap().dataset);
    }
}
