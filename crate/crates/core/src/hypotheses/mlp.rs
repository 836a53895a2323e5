use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ce_score_gradient, Differentiable, LinearScorer, Parametric, ScorePredictor};
use crate::domain::Label;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Fully connected network with ReLU hidden layers and a linear output layer.
///
/// Parameters are stored flat, layer by layer: the row-major weight matrix
/// (`n_out x n_in`) followed by the `n_out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

struct Trace {
    /// Inputs to each layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of each layer.
    pre: Vec<Vec<f64>>,
}

impl Mlp {
    /// Zero-initialized network with layer sizes `[d, h_1, ..., k]`.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&n| n == 0) {
            return Err(Error::InvalidConfig(format!("invalid layer sizes {sizes:?}")));
        }
        if sizes[sizes.len() - 1] < 2 {
            return Err(Error::InvalidConfig("output layer needs k >= 2".into()));
        }
        let count = sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum();
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; count],
        })
    }

    /// Glorot-uniform weights and zero biases drawn from `rng`.
    pub fn glorot(sizes: &[usize], rng: SeededRng) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let mut g = rng.generator();
        let mut offset = 0;
        for w in sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            for p in &mut net.params[offset..offset + n_in * n_out] {
                *p = g.random_range(-limit..=limit);
            }
            offset += (n_in + 1) * n_out;
        }
        Ok(net)
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        if params.len() != net.params.len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    fn layer_count(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Offsets of the weights and biases of layer `l`.
    fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let start: usize = self.sizes.windows(2).take(l).map(|w| (w[0] + 1) * w[1]).sum();
        (start, start + self.sizes[l] * self.sizes[l + 1])
    }

    fn forward_trace(&self, x: &[f64]) -> (Vec<f64>, Trace) {
        let mut trace = Trace {
            inputs: Vec::with_capacity(self.layer_count()),
            pre: Vec::with_capacity(self.layer_count()),
        };
        let mut a = x.to_vec();
        for l in 0..self.layer_count() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w_off, b_off) = self.layer_offsets(l);
            let w = &self.params[w_off..w_off + n_in * n_out];
            let b = &self.params[b_off..b_off + n_out];
            let z: Vec<f64> = (0..n_out)
                .map(|o| w[o * n_in..(o + 1) * n_in].iter().zip(&a).map(|(wi, ai)| wi * ai).sum::<f64>() + b[o])
                .collect();
            let next = if l + 1 < self.layer_count() {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                z.clone()
            };
            trace.inputs.push(a);
            trace.pre.push(z);
            a = next;
        }
        (a, trace)
    }

    /// Back-propagates `upstream` (dL/dscores); returns (param grad, input grad).
    fn backward_trace(&self, trace: &Trace, upstream: &[f64], want_params: bool) -> (Vec<f64>, Vec<f64>) {
        let mut grad = if want_params { vec![0.0; self.params.len()] } else { Vec::new() };
        let mut delta = upstream.to_vec();
        for l in (0..self.layer_count()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            if l + 1 < self.layer_count() {
                // ReLU; the subgradient at 0 is taken to be 0.
                for (dv, &z) in delta.iter_mut().zip(&trace.pre[l]) {
                    if z <= 0.0 {
                        *dv = 0.0;
                    }
                }
            }
            let (w_off, b_off) = self.layer_offsets(l);
            let input = &trace.inputs[l];
            if want_params {
                for o in 0..n_out {
                    let row = &mut grad[w_off + o * n_in..w_off + (o + 1) * n_in];
                    for (g, &a) in row.iter_mut().zip(input) {
                        *g = delta[o] * a;
                    }
                    grad[b_off + o] = delta[o];
                }
            }
            let w = &self.params[w_off..w_off + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d != 0.0 {
                    for (p, wi) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *p += d * wi;
                    }
                }
            }
            delta = prev;
        }
        (grad, delta)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_trace(x).0
    }

    /// Gradients of `ce_loss(forward(x), y)`: (parameters, input).
    pub fn backward(&self, x: &[f64], y: Label) -> (Vec<f64>, Vec<f64>) {
        let (scores, trace) = self.forward_trace(x);
        let upstream = ce_score_gradient(&scores, y);
        self.backward_trace(&trace, &upstream, true)
    }

    /// Parameter and input gradients of `upstream . forward(x)`.
    pub fn backward_upstream(&self, x: &[f64], upstream: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (_, trace) = self.forward_trace(x);
        self.backward_trace(&trace, upstream, true)
    }

    /// A single-layer network is exactly an affine scorer.
    pub fn to_linear(&self) -> Option<LinearScorer> {
        if self.layer_count() != 1 {
            return None;
        }
        let (d, k) = (self.sizes[0], self.sizes[1]);
        let weights = (0..k).map(|c| self.params[c * d..(c + 1) * d].to_vec()).collect();
        let bias = self.params[k * d..].to_vec();
        LinearScorer::new(weights, bias).ok()
    }

    pub fn from_linear(lin: &LinearScorer) -> Self {
        Self {
            sizes: vec![lin.dim(), lin.num_classes()],
            params: lin.params().to_vec(),
        }
    }
}

impl ScorePredictor for Mlp {
    fn num_classes(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    fn dim(&self) -> usize {
        self.sizes[0]
    }

    fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x)
    }
}

impl Differentiable for Mlp {
    fn input_gradient(&self, x: &[f64], upstream: &[f64]) -> Vec<f64> {
        let (_, trace) = self.forward_trace(x);
        self.backward_trace(&trace, upstream, false).1
    }
}

impl Parametric for Mlp {
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
        self.backward_upstream(x, upstream).0
    }
}
