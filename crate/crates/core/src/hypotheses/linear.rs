use serde::{Deserialize, Serialize};

use super::{argmax_label, Argmax, Differentiable, Parametric, ScorePredictor};
use crate::domain::{Label, LabelSet, Norm, PerturbationBall};
use crate::error::{Error, Result};
use crate::pgd::{targeted_reach_set, PgdConfig};

/// Largest dimension for which `k >= 3` reach sets are computed exactly.
pub const MAX_EXACT_DIM: usize = 12;

/// Affine scorer `x -> W x + b` with `W` of shape `k x d`.
///
/// Parameters are stored flat: the `k * d` row-major weights followed by the
/// `k` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearScorer {
    k: usize,
    d: usize,
    params: Vec<f64>,
}

/// Labels attainable over a perturbation ball, and whether the set is exact.
#[derive(Debug, Clone, PartialEq)]
pub struct Reach {
    pub labels: LabelSet,
    pub certified: bool,
}

/// How to compute reach sets when no exact method applies.
#[derive(Debug, Clone)]
pub enum ReachMode {
    /// Fail with an error instead of approximating.
    Exact,
    /// Fall back to targeted PGD (a lower bound; `certified = false`).
    Auto(PgdConfig),
}

impl LinearScorer {
    pub fn new(weights: Vec<Vec<f64>>, bias: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k < 2 || bias.len() != k {
            return Err(Error::InvalidConfig("linear scorer needs k >= 2 rows and k biases".into()));
        }
        let d = weights[0].len();
        if d == 0 || weights.iter().any(|row| row.len() != d) {
            return Err(Error::InvalidConfig("linear scorer rows must share a nonzero width".into()));
        }
        let mut params: Vec<f64> = weights.into_iter().flatten().collect();
        params.extend(bias);
        Ok(Self { k, d, params })
    }

    pub fn zeros(k: usize, d: usize) -> Self {
        Self {
            k,
            d,
            params: vec![0.0; k * d + k],
        }
    }

    pub fn row(&self, c: Label) -> &[f64] {
        &self.params[c * self.d..(c + 1) * self.d]
    }

    pub fn bias(&self, c: Label) -> f64 {
        self.params[self.k * self.d + c]
    }

    /// Labels attainable by `argmax(Wx + b)` over `x + ball`.
    ///
    /// Exact for `k = 2` (dual-norm margin test) and for `k >= 3` under
    /// l-inf when `d <= MAX_EXACT_DIM` (vertex enumeration of the region
    /// where a label beats every rival). Score ties count as reachable.
    pub fn reach_set(&self, x: &[f64], ball: &PerturbationBall, mode: &ReachMode) -> Result<Reach> {
        let clean = argmax_label(&self.scores(x));
        if ball.delta == 0.0 {
            return Ok(Reach {
                labels: LabelSet::singleton(clean),
                certified: true,
            });
        }
        let exact_supported = self.k == 2 || (ball.norm == Norm::LInf && self.d <= MAX_EXACT_DIM);
        if !exact_supported {
            return match mode {
                ReachMode::Exact if ball.norm == Norm::LInf => Err(Error::DimensionTooLarge {
                    d: self.d,
                    max: MAX_EXACT_DIM,
                }),
                ReachMode::Exact => Err(Error::UnsupportedNorm(
                    "exact l2 reach sets are only available for k = 2".into(),
                )),
                ReachMode::Auto(cfg) => Ok(Reach {
                    labels: targeted_reach_set(self, x, ball, cfg)?,
                    certified: false,
                }),
            };
        }

        let mut labels = LabelSet::singleton(clean);
        for target in (0..self.k).filter(|&c| c != clean) {
            // Constraints (W_t - W_r) . (x + z) + b_t - b_r >= 0 for every rival r.
            let mut gs = Vec::with_capacity(self.k - 1);
            let mut cs = Vec::with_capacity(self.k - 1);
            for rival in (0..self.k).filter(|&c| c != target) {
                let g: Vec<f64> = self.row(target).iter().zip(self.row(rival)).map(|(a, b)| a - b).collect();
                let c = dot(&g, x) + self.bias(target) - self.bias(rival);
                gs.push(g);
                cs.push(c);
            }
            let reachable = if self.k == 2 {
                cs[0] + ball.delta * ball.norm.dual_of(&gs[0]) >= 0.0
            } else {
                box_polytope_feasible(&gs, &cs, ball.delta)
            };
            if reachable {
                labels.insert(target);
            }
        }
        Ok(Reach {
            labels,
            certified: true,
        })
    }

    /// Signed distance-style margin for binary scorers: `(W_1 - W_0) x + b_1 - b_0`.
    pub fn binary_margin(&self, x: &[f64]) -> f64 {
        let s = self.scores(x);
        s[1] - s[0]
    }

    /// `W_1 - W_0` for binary scorers.
    pub fn binary_direction(&self) -> Vec<f64> {
        self.row(1).iter().zip(self.row(0)).map(|(a, b)| a - b).collect()
    }

    pub fn classifier(self) -> Argmax<Self> {
        Argmax(self)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Is `{z : |z_j| <= delta, g_r . z + c_r >= 0 for all r}` nonempty?
///
/// A nonempty bounded polytope has a vertex. Every vertex fixes all but `s`
/// coordinates at `+-delta` and makes `s` general constraints active, so it is
/// enough to solve each such `s x s` system and test the solution.
fn box_polytope_feasible(gs: &[Vec<f64>], cs: &[f64], delta: f64) -> bool {
    let d = gs[0].len();
    let m = gs.len();
    let tol = |r: usize| 1e-12 * (1.0 + cs[r].abs() + delta * gs[r].iter().map(|v| v.abs()).sum::<f64>());
    let feasible = |z: &[f64]| (0..m).all(|r| dot(&gs[r], z) + cs[r] >= -tol(r));

    if feasible(&vec![0.0; d]) {
        return true;
    }
    for r in 0..m {
        if cs[r] + delta * gs[r].iter().map(|v| v.abs()).sum::<f64>() < -tol(r) {
            return false;
        }
    }

    let mut z = vec![0.0; d];
    for s in 0..=m.min(d) {
        for free_mask in 0u32..(1 << d) {
            if free_mask.count_ones() as usize != s {
                continue;
            }
            let free: Vec<usize> = (0..d).filter(|&j| free_mask & (1 << j) != 0).collect();
            let fixed: Vec<usize> = (0..d).filter(|&j| free_mask & (1 << j) == 0).collect();
            for active_mask in 0u32..(1 << m) {
                if active_mask.count_ones() as usize != s {
                    continue;
                }
                let active: Vec<usize> = (0..m).filter(|&r| active_mask & (1 << r) != 0).collect();
                for signs in 0u32..(1 << fixed.len()) {
                    for (bit, &j) in fixed.iter().enumerate() {
                        z[j] = if signs & (1 << bit) != 0 { delta } else { -delta };
                    }
                    if s > 0 {
                        let mut a = vec![vec![0.0; s]; s];
                        let mut rhs = vec![0.0; s];
                        for (row, &r) in active.iter().enumerate() {
                            for (col, &j) in free.iter().enumerate() {
                                a[row][col] = gs[r][j];
                            }
                            rhs[row] = -cs[r] - fixed.iter().map(|&j| gs[r][j] * z[j]).sum::<f64>();
                        }
                        let Some(sol) = solve_dense(a, rhs) else { continue };
                        if sol.iter().any(|v| v.abs() > delta * (1.0 + 1e-12) + 1e-15) {
                            continue;
                        }
                        for (col, &j) in free.iter().enumerate() {
                            z[j] = sol[col].clamp(-delta, delta);
                        }
                    }
                    if feasible(&z) {
                        return true;
                    }
                }
            }
        }
    }
    false
}

/// Gaussian elimination with partial pivoting; `None` when (nearly) singular.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for c in col..n {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Some(x)
}

impl ScorePredictor for LinearScorer {
    fn num_classes(&self) -> usize {
        self.k
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn scores(&self, x: &[f64]) -> Vec<f64> {
        (0..self.k).map(|c| dot(self.row(c), x) + self.bias(c)).collect()
    }
}

impl Differentiable for LinearScorer {
    fn input_gradient(&self, _x: &[f64], upstream: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.d];
        for (c, &u) in upstream.iter().enumerate() {
            for (gj, w) in g.iter_mut().zip(self.row(c)) {
                *gj += u * w;
            }
        }
        g
    }
}

impl Parametric for LinearScorer {
    fn num_params(&self) -> usize {
        self.params.len()
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn param_gradient(&self, x: &[f64], upstream: &[f64]) -> Vec<f64> {
        let mut g = Vec::with_capacity(self.params.len());
        for &u in upstream {
            g.extend(x.iter().map(|xj| u * xj));
        }
        g.extend_from_slice(upstream);
        g
    }
}
