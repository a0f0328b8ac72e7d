//! Two-layer conditional vector field `v_theta(A_tau, obs, tau)` with exact
//! reverse-mode gradients.
//!
//! Input features are `obs ++ flatten(A_tau) ++ [tau, sin(2 pi tau), cos(2 pi tau)]`.
//! Parameters live in one flat vector laid out as `W1 | b1 | W2 | b2`, with
//! row-major weight matrices.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::flow::VectorField;

const TIME_FEATURES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    /// No nonlinearity; the model is then linear in its input.
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn slope(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShape {
    pub obs_dim: usize,
    pub horizon: usize,
    pub action_dim: usize,
    pub hidden: usize,
    pub activation: Activation,
}

impl ModelShape {
    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.output_dim() + TIME_FEATURES
    }

    pub fn output_dim(&self) -> usize {
        self.horizon * self.action_dim
    }

    pub fn param_count(&self) -> usize {
        let (i, h, o) = (self.input_dim(), self.hidden, self.output_dim());
        h * i + h + o * h + o
    }
}

/// One regression term: the noisy chunk at time `tau`, its observation and
/// the conditional target the field should match.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowTerm {
    pub obs: Vec<f64>,
    pub noisy: Vec<f64>,
    pub tau: f64,
    pub target: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorFieldModel {
    shape: ModelShape,
    params: Vec<f64>,
    #[serde(skip)]
    grad: Vec<f64>,
}

struct Offsets {
    b1: usize,
    w2: usize,
    b2: usize,
}

impl VectorFieldModel {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(shape: ModelShape, rng: &mut R) -> Result<Self> {
        if shape.horizon == 0 || shape.action_dim == 0 || shape.hidden == 0 {
            return Err(Error::Config(format!("invalid model shape {shape:?}")));
        }
        let (i, h, o) = (shape.input_dim(), shape.hidden, shape.output_dim());
        let mut params = vec![0.0; shape.param_count()];
        let l1 = (6.0 / (i + h) as f64).sqrt();
        let l2 = (6.0 / (h + o) as f64).sqrt();
        let u1 = Uniform::new_inclusive(-l1, l1).expect("finite bound");
        let u2 = Uniform::new_inclusive(-l2, l2).expect("finite bound");
        for p in &mut params[..h * i] {
            *p = u1.sample(rng);
        }
        let w2 = h * i + h;
        for p in &mut params[w2..w2 + o * h] {
            *p = u2.sample(rng);
        }
        Ok(Self::from_params(shape, params).expect("length matches shape"))
    }

    pub fn from_params(shape: ModelShape, params: Vec<f64>) -> Result<Self> {
        ensure_len("model parameters", shape.param_count(), params.len())?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("non-finite model parameter".into()));
        }
        let grad = vec![0.0; params.len()];
        Ok(Self {
            shape,
            params,
            grad,
        })
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Accumulated gradient from the last [`Self::accumulate`] calls.
    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.clear();
        self.grad.resize(self.params.len(), 0.0);
    }

    /// Zeroes the output layer so the field is identically 0.
    pub fn zero_output_layer(&mut self) {
        let off = self.offsets();
        for p in &mut self.params[off.w2..] {
            *p = 0.0;
        }
    }

    fn offsets(&self) -> Offsets {
        let (i, h, o) = (self.shape.input_dim(), self.shape.hidden, self.shape.output_dim());
        let b1 = h * i;
        let w2 = b1 + h;
        let b2 = w2 + o * h;
        Offsets { b1, w2, b2 }
    }

    fn features(&self, obs: &[f64], noisy: &[f64], tau: f64, x: &mut Vec<f64>) {
        x.clear();
        x.extend_from_slice(obs);
        x.extend_from_slice(noisy);
        x.push(tau);
        x.push((TAU * tau).sin());
        x.push((TAU * tau).cos());
    }

    fn check_inputs(&self, obs: &[f64], noisy: &[f64]) -> Result<()> {
        ensure_len("model observation", self.shape.obs_dim, obs.len())?;
        ensure_len("model noisy chunk", self.shape.output_dim(), noisy.len())
    }

    /// Hidden activations and output for one input.
    fn forward_into(&self, x: &[f64], hidden: &mut [f64], out: &mut [f64]) {
        let (i, h, o) = (x.len(), self.shape.hidden, self.shape.output_dim());
        let off = self.offsets();
        let p = &self.params;
        for j in 0..h {
            let row = &p[j * i..(j + 1) * i];
            let z = p[off.b1 + j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            hidden[j] = self.shape.activation.apply(z);
        }
        for k in 0..o {
            let row = &p[off.w2 + k * h..off.w2 + (k + 1) * h];
            out[k] = p[off.b2 + k] + row.iter().zip(hidden.iter()).map(|(w, a)| w * a).sum::<f64>();
        }
    }

    pub fn forward(&self, obs: &[f64], noisy: &[f64], tau: f64) -> Result<Vec<f64>> {
        self.check_inputs(obs, noisy)?;
        let mut x = Vec::with_capacity(self.shape.input_dim());
        self.features(obs, noisy, tau, &mut x);
        let mut hidden = vec![0.0; self.shape.hidden];
        let mut out = vec![0.0; self.shape.output_dim()];
        self.forward_into(&x, &mut hidden, &mut out);
        Ok(out)
    }

    /// Per-term losses `||v - target||^2` and the gradient of
    /// `sum_i weights[i] * loss_i`, with the weights held constant.
    pub fn loss_and_gradient(&self, terms: &[FlowTerm], weights: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        ensure_len("gradient weights", terms.len(), weights.len())?;
        let mut grad = vec![0.0; self.params.len()];
        let losses = self.backprop(terms, weights, &mut grad)?;
        Ok((losses, grad))
    }

    /// Per-term losses only.
    pub fn losses(&self, terms: &[FlowTerm]) -> Result<Vec<f64>> {
        let mut x = Vec::with_capacity(self.shape.input_dim());
        let mut hidden = vec![0.0; self.shape.hidden];
        let mut out = vec![0.0; self.shape.output_dim()];
        terms
            .iter()
            .map(|term| {
                self.check_inputs(&term.obs, &term.noisy)?;
                ensure_len("flow target", self.shape.output_dim(), term.target.len())?;
                self.features(&term.obs, &term.noisy, term.tau, &mut x);
                self.forward_into(&x, &mut hidden, &mut out);
                crate::flow::fm_loss(&out, &term.target)
            })
            .collect()
    }

    /// Adds the weighted gradient of `terms` into the model's accumulator
    /// and returns the per-term losses.
    pub fn accumulate(&mut self, terms: &[FlowTerm], weights: &[f64]) -> Result<Vec<f64>> {
        ensure_len("gradient weights", terms.len(), weights.len())?;
        let mut grad = std::mem::take(&mut self.grad);
        grad.resize(self.params.len(), 0.0);
        let losses = self.backprop(terms, weights, &mut grad);
        self.grad = grad;
        losses
    }

    fn backprop(&self, terms: &[FlowTerm], weights: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        let (i, h, o) = (self.shape.input_dim(), self.shape.hidden, self.shape.output_dim());
        let off = self.offsets();
        let p = &self.params;
        let act = self.shape.activation;

        let mut x = Vec::with_capacity(i);
        let mut hidden = vec![0.0; h];
        let mut out = vec![0.0; o];
        let mut d_out = vec![0.0; o];
        let mut d_hidden = vec![0.0; h];
        let mut losses = Vec::with_capacity(terms.len());

        for (term, &w) in terms.iter().zip(weights) {
            self.check_inputs(&term.obs, &term.noisy)?;
            ensure_len("flow target", o, term.target.len())?;
            self.features(&term.obs, &term.noisy, term.tau, &mut x);
            self.forward_into(&x, &mut hidden, &mut out);
            if hidden.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric("non-finite activation in hidden layer".into()));
            }
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric("non-finite activation in output layer".into()));
            }

            let mut loss = 0.0;
            for k in 0..o {
                let r = out[k] - term.target[k];
                loss += r * r;
                d_out[k] = 2.0 * w * r;
            }
            losses.push(loss);
            if w == 0.0 {
                continue;
            }

            // Output layer.
            d_hidden.iter_mut().for_each(|d| *d = 0.0);
            for k in 0..o {
                let g = d_out[k];
                grad[off.b2 + k] += g;
                let row = off.w2 + k * h;
                for j in 0..h {
                    grad[row + j] += g * hidden[j];
                    d_hidden[j] += g * p[row + j];
                }
            }
            // Hidden layer.
            for j in 0..h {
                let dz = d_hidden[j] * act.slope(hidden[j]);
                grad[off.b1 + j] += dz;
                let row = j * i;
                for (g, v) in grad[row..row + i].iter_mut().zip(&x) {
                    *g += dz * v;
                }
            }
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric("non-finite gradient in backward pass".into()));
        }
        Ok(losses)
    }
}

impl VectorField for VectorFieldModel {
    fn output_len(&self) -> usize {
        self.shape.output_dim()
    }

    fn velocity(&self, obs: &[f64], noisy: &[f64], tau: f64, out: &mut [f64]) {
        let mut x = Vec::with_capacity(self.shape.input_dim());
        self.features(obs, noisy, tau, &mut x);
        let mut hidden = vec![0.0; self.shape.hidden];
        self.forward_into(&x, &mut hidden, out);
    }

    fn obs_len(&self) -> Option<usize> {
        Some(self.shape.obs_dim)
    }
}
