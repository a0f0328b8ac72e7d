//! Planar point-mass reaching tasks.
//!
//! Each task has a goal on a circle around the origin. The state is a 2-D
//! position; an action is the displacement applied in one step. Observations
//! concatenate a coarse rendered "image" of the position, the position
//! itself, the episode progress and a task one-hot.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::reward::{self, RewardWeights};

pub const ACTION_DIM: usize = 2;
/// Position then velocity.
pub const JOINT_DIM: usize = 4;
const IMAGE_GRID: usize = 3;
const IMAGE_EXTENT: f64 = 0.8;
const IMAGE_WIDTH: f64 = 0.4;
const SUBGOALS: usize = 4;
/// Length scale of the tracking penalties, in position units.
const TRACKING_SCALE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub n_tasks: usize,
    pub episode_len: usize,
    /// Steps the reference path takes to reach the goal.
    pub reach_steps: usize,
    pub goal_radius: f64,
    /// Radius of the disk around the origin that start positions come from.
    pub start_radius: f64,
    pub goal_threshold: f64,
    /// Largest displacement norm the environment applies in one step.
    pub max_step: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            n_tasks: 4,
            episode_len: 40,
            reach_steps: 30,
            goal_radius: 0.8,
            start_radius: 0.05,
            goal_threshold: 0.05,
            max_step: 0.25,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.n_tasks >= 1
            && self.episode_len >= 1
            && self.reach_steps >= 1
            && self.reach_steps <= self.episode_len
            && self.goal_radius > 0.0
            && self.start_radius >= 0.0
            && self.goal_threshold > 0.0
            && self.max_step > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid environment configuration: {self:?}")));
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        IMAGE_GRID * IMAGE_GRID + 2 + 1 + self.n_tasks
    }

    pub fn goal(&self, task: usize) -> [f64; 2] {
        let angle = TAU * task as f64 / self.n_tasks as f64;
        [self.goal_radius * angle.cos(), self.goal_radius * angle.sin()]
    }

    /// Peak per-step speed of the minimum-jerk reference; the unit in which
    /// action noise levels are expressed.
    pub fn action_scale(&self) -> f64 {
        1.875 * self.goal_radius / self.reach_steps as f64
    }
}

/// Gaussian bumps on a fixed grid: a stand-in camera image of the position.
pub fn render(pos: &[f64; 2]) -> Vec<f64> {
    let mut img = Vec::with_capacity(IMAGE_GRID * IMAGE_GRID);
    for i in 0..IMAGE_GRID {
        for j in 0..IMAGE_GRID {
            let cx = -IMAGE_EXTENT + 2.0 * IMAGE_EXTENT * i as f64 / (IMAGE_GRID - 1) as f64;
            let cy = -IMAGE_EXTENT + 2.0 * IMAGE_EXTENT * j as f64 / (IMAGE_GRID - 1) as f64;
            let d2 = (pos[0] - cx).powi(2) + (pos[1] - cy).powi(2);
            img.push((-d2 / (2.0 * IMAGE_WIDTH * IMAGE_WIDTH)).exp());
        }
    }
    img
}

/// Minimum-jerk progress `10u^3 - 15u^4 + 6u^5`, clamped to `[0, 1]`.
pub fn min_jerk(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
}

pub fn distance(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// One episode in progress.
#[derive(Clone, Debug)]
pub struct Episode<'a> {
    cfg: &'a EnvConfig,
    pub task: usize,
    pub start: [f64; 2],
    pub pos: [f64; 2],
    pub t: usize,
    prev_actions: [Option<[f64; 2]>; 2],
    subgoals_reached: usize,
}

impl<'a> Episode<'a> {
    pub fn new(cfg: &'a EnvConfig, task: usize, start: [f64; 2]) -> Result<Self> {
        if task >= cfg.n_tasks {
            return Err(Error::Domain(format!("task {task} out of range for {} tasks", cfg.n_tasks)));
        }
        Ok(Self {
            cfg,
            task,
            start,
            pos: start,
            t: 0,
            prev_actions: [None, None],
            subgoals_reached: 0,
        })
    }

    pub fn goal(&self) -> [f64; 2] {
        self.cfg.goal(self.task)
    }

    pub fn done(&self) -> bool {
        self.t >= self.cfg.episode_len
    }

    pub fn observation(&self) -> Vec<f64> {
        let mut obs = render(&self.pos);
        obs.extend_from_slice(&self.pos);
        obs.push(self.t as f64 / self.cfg.episode_len as f64);
        obs.extend((0..self.cfg.n_tasks).map(|k| if k == self.task { 1.0 } else { 0.0 }));
        obs
    }

    /// Position of the reference path at step `t`.
    pub fn reference(&self, t: usize) -> [f64; 2] {
        let s = min_jerk(t as f64 / self.cfg.reach_steps as f64);
        let g = self.goal();
        [
            self.start[0] + s * (g[0] - self.start[0]),
            self.start[1] + s * (g[1] - self.start[1]),
        ]
    }

    fn subgoal(&self, k: usize) -> [f64; 2] {
        let g = self.goal();
        let f = (k + 1) as f64 / SUBGOALS as f64;
        [
            self.start[0] + f * (g[0] - self.start[0]),
            self.start[1] + f * (g[1] - self.start[1]),
        ]
    }

    /// Applies `action` (norm-limited to `max_step`) and returns the joint
    /// state after the step and its dense reward components.
    pub fn step(&mut self, action: &[f64]) -> Result<(Vec<f64>, BTreeMap<String, f64>)> {
        ensure_len("environment action", ACTION_DIM, action.len())?;
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::Numeric(format!("non-finite action at step {}", self.t)));
        }
        let norm = (action[0] * action[0] + action[1] * action[1]).sqrt();
        let scale = if norm > self.cfg.max_step { self.cfg.max_step / norm } else { 1.0 };
        let applied = [action[0] * scale, action[1] * scale];
        self.pos = [self.pos[0] + applied[0], self.pos[1] + applied[1]];

        // Smoothness terms are measured in units of the reference peak speed.
        let unit = 1.0 / self.cfg.action_scale();
        let scaled = |a: [f64; 2]| vec![a[0] * unit, a[1] * unit];
        let action = scaled(applied);
        let prev = self.prev_actions[1].map(scaled);
        let prev2 = self.prev_actions[0].map(scaled);
        let joint_acc = match &prev {
            Some(p) => vec![action[0] - p[0], action[1] - p[1]],
            None => vec![0.0; 2],
        };
        let mut components = reward::smoothness_terms(
            prev2.as_deref(),
            prev.as_deref(),
            &action,
            &action,
            &joint_acc,
        )?;

        while self.subgoals_reached < SUBGOALS
            && distance(&self.pos, &self.subgoal(self.subgoals_reached)) < self.cfg.goal_threshold
        {
            self.subgoals_reached += 1;
        }
        let target = self.subgoal(self.subgoals_reached.min(SUBGOALS - 1));
        components.insert(
            reward::SUBGOAL_IMAGE_MSE.into(),
            tracking_penalty(&render(&self.pos), &render(&target))?,
        );
        components.insert(
            reward::JOINT_POSITION_MSE.into(),
            tracking_penalty(&self.pos, &target)?,
        );
        components.insert(
            reward::SUBGOAL_DIVISION.into(),
            self.subgoals_reached as f64 / SUBGOALS as f64 - 1.0,
        );
        let success = distance(&self.pos, &self.goal()) < self.cfg.goal_threshold;
        components.insert(reward::TASK_SUCCESS.into(), if success { 1.0 } else { 0.0 });

        self.prev_actions = [self.prev_actions[1], Some(applied)];
        self.t += 1;
        let joint = vec![self.pos[0], self.pos[1], applied[0], applied[1]];
        Ok((joint, components))
    }

    pub fn goal_distance(&self) -> f64 {
        distance(&self.pos, &self.goal())
    }

    pub fn success(&self) -> bool {
        self.goal_distance() < self.cfg.goal_threshold
    }
}

/// `similarity - 1` on inputs measured in units of the tracking scale: 0 on
/// target, approaching -1 far from it.
fn tracking_penalty(a: &[f64], b: &[f64]) -> Result<f64> {
    let scaled = |v: &[f64]| v.iter().map(|x| x / TRACKING_SCALE).collect::<Vec<_>>();
    Ok(reward::similarity(&scaled(a), &scaled(b))? - 1.0)
}

/// Dense reward of one step under `weights`.
pub fn dense_reward(components: &BTreeMap<String, f64>, weights: &RewardWeights) -> Result<f64> {
    Ok(reward::step_reward(components, weights)?.total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_jerk_endpoints() {
        assert_eq!(min_jerk(0.0), 0.0);
        assert_eq!(min_jerk(1.0), 1.0);
        assert!((min_jerk(0.5) - 0.5).abs() < 1e-15);
        assert_eq!(min_jerk(2.0), 1.0);
    }

    #[test]
    fn action_scale_is_peak_reference_speed() {
        let cfg = EnvConfig::default();
        let ep = Episode::new(&cfg, 0, [0.0, 0.0]).unwrap();
        let peak = (0..cfg.reach_steps)
            .map(|t| distance(&ep.reference(t + 1), &ep.reference(t)))
            .fold(0.0, f64::max);
        assert!((peak - cfg.action_scale()).abs() < 0.05 * cfg.action_scale());
    }

    #[test]
    fn tracking_the_reference_reaches_the_goal() {
        let cfg = EnvConfig::default();
        let weights = RewardWeights::default();
        for task in 0..cfg.n_tasks {
            let mut ep = Episode::new(&cfg, task, [0.01, -0.02]).unwrap();
            let mut last = 0.0;
            while !ep.done() {
                let r0 = ep.pos;
                let r1 = ep.reference(ep.t + 1);
                let (joint, comps) = ep.step(&[r1[0] - r0[0], r1[1] - r0[1]]).unwrap();
                assert_eq!(joint.len(), JOINT_DIM);
                last = comps[reward::TASK_SUCCESS];
                assert!(dense_reward(&comps, &weights).unwrap().is_finite());
            }
            assert!(ep.success());
            assert_eq!(last, 1.0);
            assert_eq!(ep.observation().len(), cfg.obs_dim());
        }
    }

    #[test]
    fn actions_are_norm_limited() {
        let cfg = EnvConfig::default();
        let mut ep = Episode::new(&cfg, 1, [0.0, 0.0]).unwrap();
        ep.step(&[3.0, 4.0]).unwrap();
        assert!((ep.pos[0] - 0.15).abs() < 1e-15 && (ep.pos[1] - 0.2).abs() < 1e-15);
        assert!(ep.step(&[0.0]).is_err());
        assert!(Episode::new(&cfg, 9, [0.0, 0.0]).is_err());
    }
}
