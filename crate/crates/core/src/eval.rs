//! Closed-loop evaluation of a trained field and the continual-learning
//! protocol.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::alpha::AlphaConfig;
use crate::data::{ActionNorm, AdvantageSource, Dataset, TrainingSet};
use crate::env::{EnvConfig, Episode, ACTION_DIM};
use crate::error::{Error, Result};
use crate::flow::{euler_sample, ActionChunk, Observation, VectorField};
use crate::trainer::{TrainConfig, Trainer};

pub const STRESS_NOISE_GRID: [f64; 5] = [0.1, 0.15, 0.2, 0.25, 0.3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes_per_task: usize,
    /// Gaussian noise added to executed actions, in units of the reference
    /// peak speed.
    pub noise_levels: Vec<f64>,
    /// Replace `noise_levels` with `0` plus the stress grid.
    pub stress_grid: bool,
    /// Overrides the environment's goal threshold when set.
    pub success_threshold: Option<f64>,
    pub euler_steps: usize,
    /// Actions executed from each sampled chunk before replanning.
    pub exec_steps: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes_per_task: 100,
            noise_levels: vec![0.0],
            stress_grid: false,
            success_threshold: None,
            euler_steps: 10,
            exec_steps: 4,
            seed: 12_345,
        }
    }
}

impl EvalConfig {
    pub fn levels(&self) -> Vec<f64> {
        if self.stress_grid {
            std::iter::once(0.0).chain(STRESS_NOISE_GRID).collect()
        } else {
            self.noise_levels.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub noise_level: f64,
    pub task_id: usize,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Binomial standard error of the success rate.
    pub sr_stderr: f64,
    pub mean_goal_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// Set when no episode was run; rates are then reported as 0.
    pub zero_episodes: bool,
}

impl EvalReport {
    pub const HEADER: &'static str =
        "noise_level,task_id,episodes,successes,success_rate,sr_stderr,mean_goal_distance";

    /// Success rate and mean goal distance over all tasks at one noise level.
    pub fn summary(&self, noise_level: f64) -> (f64, f64) {
        let rows: Vec<&EvalRow> = self.rows.iter().filter(|r| r.noise_level == noise_level).collect();
        let episodes: usize = rows.iter().map(|r| r.episodes).sum();
        if episodes == 0 {
            return (0.0, 0.0);
        }
        let successes: usize = rows.iter().map(|r| r.successes).sum();
        let dist: f64 = rows.iter().map(|r| r.mean_goal_distance * r.episodes as f64).sum();
        (successes as f64 / episodes as f64, dist / episodes as f64)
    }

    pub fn csv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.noise_level, r.task_id, r.episodes, r.successes, r.success_rate, r.sr_stderr, r.mean_goal_distance
            ));
        }
        out
    }
}

/// A vector field plus the action normalization it was trained under.
#[derive(Clone, Debug)]
pub struct Policy<F> {
    pub field: F,
    pub norm: ActionNorm,
    pub horizon: usize,
}

impl<F: VectorField> Policy<F> {
    pub fn new(field: F, norm: ActionNorm, horizon: usize) -> Result<Self> {
        if field.output_len() != horizon * ACTION_DIM {
            return Err(Error::dim("policy output", horizon * ACTION_DIM, field.output_len()));
        }
        if norm.mean.len() != ACTION_DIM || norm.std.len() != ACTION_DIM {
            return Err(Error::dim("action normalization", ACTION_DIM, norm.mean.len()));
        }
        Ok(Self { field, norm, horizon })
    }

    /// Samples one action chunk in environment units.
    pub fn act(&self, obs: &[f64], euler_steps: usize, rng: &mut ChaCha8Rng) -> Result<ActionChunk> {
        let noise: Vec<f64> = (0..self.horizon * ACTION_DIM).map(|_| rng.sample(StandardNormal)).collect();
        let init = ActionChunk::new(noise, self.horizon, ACTION_DIM)?;
        let chunk = euler_sample(&self.field, &Observation(obs.to_vec()), &init, euler_steps)?;
        let mut values = chunk.into_vec();
        self.norm.denormalize(&mut values);
        ActionChunk::new(values, self.horizon, ACTION_DIM)
    }
}

/// Result of one closed-loop episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeOutcome {
    pub success: bool,
    pub goal_distance: f64,
}

pub fn rollout<F: VectorField>(
    policy: &Policy<F>,
    env: &EnvConfig,
    task: usize,
    noise_level: f64,
    cfg: &EvalConfig,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeOutcome> {
    let angle = rng.random::<f64>() * std::f64::consts::TAU;
    let radius = env.start_radius * rng.random::<f64>().sqrt();
    let mut ep = Episode::new(env, task, [radius * angle.cos(), radius * angle.sin()])?;
    if let Some(expected) = policy.field.obs_len() {
        if expected != env.obs_dim() {
            return Err(Error::dim("policy observation", expected, env.obs_dim()));
        }
    }
    let exec = cfg.exec_steps.clamp(1, policy.horizon);
    let action_noise = noise_level * env.action_scale();
    while !ep.done() {
        let chunk = policy.act(&ep.observation(), cfg.euler_steps, rng)?;
        for k in 0..exec {
            if ep.done() {
                break;
            }
            let mut action = chunk.row(k).to_vec();
            if action_noise > 0.0 {
                for a in &mut action {
                    *a += action_noise * rng.sample::<f64, _>(StandardNormal);
                }
            }
            ep.step(&action)?;
        }
    }
    let threshold = cfg.success_threshold.unwrap_or(env.goal_threshold);
    Ok(EpisodeOutcome {
        success: ep.goal_distance() < threshold,
        goal_distance: ep.goal_distance(),
    })
}

/// Rolls out every task at every noise level. Each (level, task) cell uses
/// its own seeded stream so cells are comparable across models.
pub fn evaluate<F: VectorField>(
    policy: &Policy<F>,
    env: &EnvConfig,
    tasks: &[usize],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let mut rows = Vec::new();
    for (li, &level) in cfg.levels().iter().enumerate() {
        for &task in tasks {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream((li * 1_000 + task) as u64);
            let mut successes = 0;
            let mut dist = 0.0;
            for _ in 0..cfg.episodes_per_task {
                let out = rollout(policy, env, task, level, cfg, &mut rng)?;
                successes += out.success as usize;
                dist += out.goal_distance;
            }
            let n = cfg.episodes_per_task;
            let (sr, se, md) = if n == 0 {
                (0.0, 0.0, 0.0)
            } else {
                let sr = successes as f64 / n as f64;
                (sr, (sr * (1.0 - sr) / n as f64).sqrt(), dist / n as f64)
            };
            rows.push(EvalRow {
                noise_level: level,
                task_id: task,
                episodes: n,
                successes,
                success_rate: sr,
                sr_stderr: se,
                mean_goal_distance: md,
            });
        }
    }
    Ok(EvalReport {
        rows,
        zero_episodes: cfg.episodes_per_task == 0 || tasks.is_empty(),
    })
}

/// Negative backward transfer from the success rates right after learning
/// each earlier task (`sr_after`) and at the end of the sequence (`sr_final`).
/// `T` is the number of phases, one more than the number of earlier tasks.
pub fn nbt(sr_after: &[f64], sr_final: &[f64]) -> Result<f64> {
    if sr_after.len() != sr_final.len() {
        return Err(Error::dim("nbt final success rates", sr_after.len(), sr_final.len()));
    }
    if sr_after.is_empty() {
        return Err(Error::Domain("NBT needs at least two phases".into()));
    }
    let drop: f64 = sr_after
        .iter()
        .zip(sr_final)
        .map(|(a, f)| (a - f).max(0.0))
        .sum();
    Ok(drop / sr_after.len() as f64)
}

/// NBT from a square phases-by-task-groups success matrix where group `i` is
/// learned in phase `i`.
pub fn compute_nbt(sr_matrix: &[Vec<f64>]) -> Result<f64> {
    let t = sr_matrix.len();
    if t < 2 {
        return Err(Error::Domain(format!("NBT needs at least two phases, got {t}")));
    }
    for row in sr_matrix {
        if row.len() != t {
            return Err(Error::dim("nbt success-matrix row", t, row.len()));
        }
    }
    let after: Vec<f64> = (0..t - 1).map(|i| sr_matrix[i][i]).collect();
    let last: Vec<f64> = (0..t - 1).map(|i| sr_matrix[t - 1][i]).collect();
    nbt(&after, &last)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinualReport {
    pub phases: Vec<Vec<usize>>,
    /// `sr_matrix[p][g]`: success rate on group `g` after phase `p`.
    pub sr_matrix: Vec<Vec<f64>>,
    pub nbt: f64,
}

/// Trains sequentially on each task group, continuing from the previous
/// phase's parameters, and evaluates every group after every phase.
pub fn continual_protocol(
    dataset: &Dataset,
    phases: &[Vec<usize>],
    train: &TrainConfig,
    alpha: &AlphaConfig,
    source: AdvantageSource,
    eval: &EvalConfig,
) -> Result<ContinualReport> {
    if phases.len() < 2 {
        return Err(Error::Domain("the continual protocol needs at least two phases".into()));
    }
    let env = &dataset.manifest.env;
    // One normalization for the whole sequence so later phases see the same
    // action coordinates as earlier ones.
    let norm = ActionNorm::fit(dataset);
    let mut model = None;
    let mut sr_matrix = Vec::with_capacity(phases.len());
    for (p, tasks) in phases.iter().enumerate() {
        let subset = dataset.filter_tasks(tasks);
        let mut set = TrainingSet::new(&subset, train.horizon, source)?;
        set.action_norm = norm.clone();
        let cfg = TrainConfig {
            seed: train.seed.wrapping_add(p as u64),
            ..train.clone()
        };
        let mut trainer = match model.take() {
            Some(m) => Trainer::new(m, cfg.clone(), alpha.clone())?,
            None => Trainer::from_shape(set.obs_dim(), ACTION_DIM, cfg.clone(), alpha.clone())?,
        };
        let mut batches = set.batches(cfg.batch_size, cfg.seed);
        trainer.run(|| Ok(batches.next_batch()))?;
        let policy = Policy::new(trainer.into_model(), norm.clone(), train.horizon)?;
        let row = phases
            .iter()
            .map(|group| {
                let report = evaluate(&policy, env, group, eval)?;
                Ok(report.summary(eval.levels()[0]).0)
            })
            .collect::<Result<Vec<f64>>>()?;
        sr_matrix.push(row);
        model = Some(policy.field);
    }
    let nbt = compute_nbt(&sr_matrix)?;
    Ok(ContinualReport {
        phases: phases.to_vec(),
        sr_matrix,
        nbt,
    })
}
