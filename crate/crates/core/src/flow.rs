//! Conditional flow-matching primitives on the linear (optimal-transport) path.
//!
//! A clean action chunk `A` and a Gaussian draw `eps` are joined by
//! `A_tau = tau * A + (1 - tau) * eps`, so `tau = 0` is pure noise and `tau = 1`
//! is data. The regression target is the path derivative `A - eps`, and
//! sampling integrates the learned field forward from `tau = 0` with explicit
//! Euler steps.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};

/// An `H x d_a` block of future actions, stored row-major (one row per step).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionChunk {
    values: Vec<f64>,
    horizon: usize,
    action_dim: usize,
}

impl ActionChunk {
    pub fn new(values: Vec<f64>, horizon: usize, action_dim: usize) -> Result<Self> {
        if horizon == 0 || action_dim == 0 {
            return Err(Error::Domain(format!(
                "action chunk needs horizon >= 1 and action_dim >= 1, got {horizon}x{action_dim}"
            )));
        }
        ensure_len("action chunk", horizon * action_dim, values.len())?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite action chunk entry at {i}")));
        }
        Ok(Self {
            values,
            horizon,
            action_dim,
        })
    }

    pub fn zeros(horizon: usize, action_dim: usize) -> Result<Self> {
        Self::new(vec![0.0; horizon * action_dim], horizon, action_dim)
    }

    /// Builds a chunk from nested rows, e.g. `[[2.0]]` for a 1x1 chunk.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let horizon = rows.len();
        let action_dim = rows.first().map_or(0, |r| r.len());
        let mut values = Vec::with_capacity(horizon * action_dim);
        for row in rows {
            ensure_len("action chunk row", action_dim, row.len())?;
            values.extend_from_slice(row);
        }
        Self::new(values, horizon, action_dim)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// Action at step `k` of the chunk.
    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.action_dim..(k + 1) * self.action_dim]
    }

    fn same_shape(&self, other: &[f64], context: &'static str) -> Result<()> {
        ensure_len(context, self.values.len(), other.len())
    }
}

/// Observation features fed to the vector field alongside the noisy chunk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// One draw along the conditional path, with its regression target.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSample {
    pub clean: ActionChunk,
    pub noise: Vec<f64>,
    pub tau: f64,
    pub noisy: ActionChunk,
    pub target: Vec<f64>,
}

impl FlowSample {
    pub fn new(clean: ActionChunk, noise: Vec<f64>, tau: f64) -> Result<Self> {
        let noisy = noisy_chunk(&clean, &noise, tau)?;
        let target = conditional_target(&clean, &noise)?;
        Ok(Self {
            clean,
            noise,
            tau,
            noisy,
            target,
        })
    }
}

/// `tau * clean + (1 - tau) * noise`, elementwise.
pub fn noisy_chunk(clean: &ActionChunk, noise: &[f64], tau: f64) -> Result<ActionChunk> {
    clean.same_shape(noise, "noisy_chunk noise")?;
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Domain(format!("tau must lie in [0, 1], got {tau}")));
    }
    let values = clean
        .values
        .iter()
        .zip(noise)
        .map(|(&a, &e)| tau * a + (1.0 - tau) * e)
        .collect();
    ActionChunk::new(values, clean.horizon, clean.action_dim)
}

/// Derivative of the linear path with respect to `tau`: `clean - noise`.
pub fn conditional_target(clean: &ActionChunk, noise: &[f64]) -> Result<Vec<f64>> {
    clean.same_shape(noise, "conditional_target noise")?;
    Ok(clean.values.iter().zip(noise).map(|(a, e)| a - e).collect())
}

/// Squared Euclidean norm of `prediction - target`, summed over every entry.
pub fn fm_loss(prediction: &[f64], target: &[f64]) -> Result<f64> {
    ensure_len("fm_loss", target.len(), prediction.len())?;
    Ok(prediction
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum())
}

/// A time-dependent vector field `v(A_tau, obs, tau)` over flattened chunks.
pub trait VectorField {
    /// Number of flattened chunk entries the field produces.
    fn output_len(&self) -> usize;

    /// Writes the field value at `(noisy, obs, tau)` into `out`.
    fn velocity(&self, obs: &[f64], noisy: &[f64], tau: f64, out: &mut [f64]);

    /// Observation length the field expects, when it has a fixed one.
    fn obs_len(&self) -> Option<usize> {
        None
    }
}

impl<F: VectorField + ?Sized> VectorField for &F {
    fn output_len(&self) -> usize {
        (**self).output_len()
    }

    fn velocity(&self, obs: &[f64], noisy: &[f64], tau: f64, out: &mut [f64]) {
        (**self).velocity(obs, noisy, tau, out)
    }

    fn obs_len(&self) -> Option<usize> {
        (**self).obs_len()
    }
}

/// Integrates `A <- A + delta * v(A, obs, tau)` from `tau = 0` to `tau = 1`
/// in exactly `steps` Euler steps.
pub fn euler_sample<F: VectorField + ?Sized>(
    model: &F,
    obs: &Observation,
    init_noise: &ActionChunk,
    steps: usize,
) -> Result<ActionChunk> {
    if steps == 0 {
        return Err(Error::Domain("euler_sample needs at least one step".into()));
    }
    ensure_len("euler_sample noise", model.output_len(), init_noise.len())?;
    let delta = 1.0 / steps as f64;
    let mut state = init_noise.values.clone();
    let mut field = vec![0.0; state.len()];
    for step in 0..steps {
        let tau = step as f64 * delta;
        model.velocity(&obs.0, &state, tau, &mut field);
        if let Some(i) = field.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite vector field output at Euler step {step}, entry {i}"
            )));
        }
        for (s, v) in state.iter_mut().zip(&field) {
            *s += delta * v;
        }
    }
    ActionChunk::new(state, init_noise.horizon, init_noise.action_dim)
}
