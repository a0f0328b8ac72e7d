//! Dense step rewards, return-to-go, leave-one-out advantages and per-task
//! standardization.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};

pub const SUBGOAL_IMAGE_MSE: &str = "subgoal_image_mse";
pub const JOINT_POSITION_MSE: &str = "joint_position_mse";
pub const SUBGOAL_DIVISION: &str = "subgoal_division";
pub const JOINT_VELOCITY: &str = "joint_velocity";
pub const JOINT_ACCELERATION: &str = "joint_acceleration";
pub const ACTION_VELOCITY: &str = "action_velocity";
pub const ACTION_ACCELERATION: &str = "action_acceleration";
pub const TASK_SUCCESS: &str = "task_success";
pub const IMAGE_SSIM: &str = "image_ssim";
pub const IMAGE_ORB: &str = "image_orb";
pub const GRIPPER_IMAGE: &str = "gripper_image";

/// Per-component weights of the dense reward.
///
/// The SSIM, ORB and gripper-camera rows are hook slots: they stay `None`
/// (and contribute nothing) unless a caller supplies both a weight and a
/// component value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub subgoal_image_mse: f64,
    pub joint_position_mse: f64,
    pub subgoal_division: f64,
    pub joint_velocity: f64,
    pub joint_acceleration: f64,
    pub action_velocity: f64,
    pub action_acceleration: f64,
    pub task_success: f64,
    pub image_ssim: Option<f64>,
    pub image_orb: Option<f64>,
    pub gripper_image: Option<f64>,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            subgoal_image_mse: 0.1 / 13.0,
            joint_position_mse: 0.1 / 13.0,
            subgoal_division: 0.1 / 13.0,
            joint_velocity: 0.1 / 13.0,
            joint_acceleration: 0.1 / 13.0,
            action_velocity: 0.01 / 13.0,
            action_acceleration: 0.01 / 13.0,
            task_success: 0.1 / 13.0,
            image_ssim: None,
            image_orb: None,
            gripper_image: None,
        }
    }
}

impl RewardWeights {
    /// Enabled `(name, weight)` pairs in a fixed order.
    pub fn enabled(&self) -> Vec<(&'static str, f64)> {
        let mut out = vec![
            (SUBGOAL_IMAGE_MSE, self.subgoal_image_mse),
            (JOINT_POSITION_MSE, self.joint_position_mse),
            (SUBGOAL_DIVISION, self.subgoal_division),
            (JOINT_VELOCITY, self.joint_velocity),
            (JOINT_ACCELERATION, self.joint_acceleration),
            (ACTION_VELOCITY, self.action_velocity),
            (ACTION_ACCELERATION, self.action_acceleration),
            (TASK_SUCCESS, self.task_success),
        ];
        for (name, hook) in [
            (IMAGE_SSIM, self.image_ssim),
            (IMAGE_ORB, self.image_orb),
            (GRIPPER_IMAGE, self.gripper_image),
        ] {
            if let Some(w) = hook {
                out.push((name, w));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in self.enabled() {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!(
                    "reward weight {name} must be a finite non-negative number, got {w}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReward {
    pub total: f64,
    pub breakdown: BTreeMap<String, f64>,
}

fn sq_norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum()
}

/// `exp(-MSE(a, b))`: 1 for identical inputs, decaying with mean squared gap.
pub fn similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    ensure_len("similarity", a.len(), b.len())?;
    if a.is_empty() {
        return Ok(1.0);
    }
    let mse = sq_norm(a.iter().zip(b).map(|(x, y)| x - y)) / a.len() as f64;
    Ok((-mse).exp())
}

/// Behaviour-smoothness penalties: negated squared norms of joint velocity,
/// joint acceleration, action velocity and action acceleration. Terms that
/// need a missing predecessor action are 0.
pub fn smoothness_terms(
    prev2_action: Option<&[f64]>,
    prev_action: Option<&[f64]>,
    action: &[f64],
    joint_vel: &[f64],
    joint_acc: &[f64],
) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    out.insert(JOINT_VELOCITY.to_string(), -sq_norm(joint_vel.iter().copied()));
    out.insert(JOINT_ACCELERATION.to_string(), -sq_norm(joint_acc.iter().copied()));

    let action_velocity = match prev_action {
        Some(prev) => {
            ensure_len("smoothness_terms prev_action", action.len(), prev.len())?;
            -sq_norm(prev.iter().zip(action).map(|(p, a)| p - a))
        }
        None => 0.0,
    };
    out.insert(ACTION_VELOCITY.to_string(), action_velocity);

    let action_acceleration = match (prev2_action, prev_action) {
        (Some(prev2), Some(prev)) => {
            ensure_len("smoothness_terms prev2_action", action.len(), prev2.len())?;
            -sq_norm(
                prev2
                    .iter()
                    .zip(prev)
                    .zip(action)
                    .map(|((p2, p1), a)| p2 - 2.0 * p1 + a),
            )
        }
        _ => 0.0,
    };
    out.insert(ACTION_ACCELERATION.to_string(), action_acceleration);
    Ok(out)
}

/// Weighted sum of reward components. Every enabled weight needs a component.
pub fn step_reward(components: &BTreeMap<String, f64>, weights: &RewardWeights) -> Result<StepReward> {
    let mut breakdown = BTreeMap::new();
    let mut total = 0.0;
    for (name, w) in weights.enabled() {
        let value = components.get(name).ok_or_else(|| {
            Error::Config(format!("missing reward component `{name}` for an enabled weight"))
        })?;
        let contribution = w * value;
        total += contribution;
        breakdown.insert(name.to_string(), contribution);
    }
    Ok(StepReward { total, breakdown })
}

/// Suffix sums: `out[t] = sum_{s >= t} rewards[s]`.
pub fn return_to_go(step_rewards: &[f64]) -> Result<Vec<f64>> {
    if step_rewards.is_empty() {
        return Err(Error::Domain("return_to_go of an empty reward sequence".into()));
    }
    let mut out = vec![0.0; step_rewards.len()];
    let mut acc = 0.0;
    for (o, r) in out.iter_mut().zip(step_rewards).rev() {
        acc += r;
        *o = acc;
    }
    Ok(out)
}

/// Leave-one-out advantage of sample `k`: its return minus the mean of the
/// other `K - 1` returns, written as `K / (K - 1) * (R_k - mean(R))`.
pub fn loo_advantage(returns: &[f64], k: usize) -> Result<f64> {
    let n = returns.len();
    if n < 2 {
        return Err(Error::Domain(format!(
            "leave-one-out advantage needs at least 2 samples, got {n}"
        )));
    }
    if k >= n {
        return Err(Error::Domain(format!("sample index {k} out of range for {n} returns")));
    }
    let mean = returns.iter().sum::<f64>() / n as f64;
    Ok(n as f64 / (n as f64 - 1.0) * (returns[k] - mean))
}

/// Leave-one-out advantages for every sample of one group.
pub fn loo_advantages(returns: &[f64]) -> Result<Vec<f64>> {
    (0..returns.len()).map(|k| loo_advantage(returns, k)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvantageBatch {
    pub task_ids: Vec<usize>,
    pub returns: Vec<f64>,
    pub standardized: Vec<f64>,
}

/// Z-scores returns within each task using the population standard deviation.
/// Singleton or constant-valued tasks map to 0.
pub fn standardize_per_task(returns: &[f64], task_ids: &[usize]) -> Result<AdvantageBatch> {
    ensure_len("standardize_per_task task_ids", returns.len(), task_ids.len())?;
    if let Some(i) = returns.iter().position(|r| !r.is_finite()) {
        return Err(Error::Numeric(format!("non-finite return at index {i}")));
    }

    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, &task) in task_ids.iter().enumerate() {
        groups.entry(task).or_default().push(i);
    }

    let mut standardized = vec![0.0; returns.len()];
    for members in groups.values() {
        let n = members.len() as f64;
        let mean = members.iter().map(|&i| returns[i]).sum::<f64>() / n;
        let var = members
            .iter()
            .map(|&i| (returns[i] - mean).powi(2))
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        // Relative floor: a group whose spread is rounding noise is constant.
        if members.len() < 2 || std <= 1e-12 * mean.abs().max(1e-300) {
            continue;
        }
        for &i in members {
            standardized[i] = (returns[i] - mean) / std;
        }
    }

    Ok(AdvantageBatch {
        task_ids: task_ids.to_vec(),
        returns: returns.to_vec(),
        standardized,
    })
}
