//! Mixed-quality synthetic trajectory datasets.
//!
//! Every task gets trajectories from three controllers: an expert that tracks
//! a minimum-jerk path to the goal, a medium controller with bounded action
//! noise and a poor controller with large noise that halts part of the way.
//! Files are JSON lines: a header record followed by one trajectory per line.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::{Episode, EnvConfig, ACTION_DIM, JOINT_DIM};
use crate::error::{Error, Result};
use crate::reward::{self, RewardWeights};
use crate::trainer::TrainSample;

pub const DATASET_VERSION: u32 = 1;

/// Feedback gain of the scripted controllers toward the reference path.
const TRACKING_GAIN: f64 = 0.5;
/// Bound on each standard-normal noise draw, in standard deviations.
const NOISE_CLIP: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityTier {
    Expert,
    Medium,
    Poor,
}

impl QualityTier {
    pub const ALL: [QualityTier; 3] = [QualityTier::Expert, QualityTier::Medium, QualityTier::Poor];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetManifest {
    pub seed: u64,
    pub env: EnvConfig,
    /// Trajectories per task for the expert, medium and poor tiers.
    pub per_tier: [usize; 3],
    /// Action noise per tier, in units of the reference peak speed.
    pub noise_scales: [f64; 3],
    /// Fraction range of the reach phase after which the poor controller halts.
    pub halt_range: [f64; 2],
    pub horizon: usize,
    pub rewards: RewardWeights,
}

impl Default for DatasetManifest {
    fn default() -> Self {
        Self {
            seed: 0,
            env: EnvConfig::default(),
            per_tier: [20, 20, 20],
            noise_scales: [0.0, 0.6, 1.0],
            halt_range: [0.3, 0.7],
            horizon: 8,
            rewards: RewardWeights::default(),
        }
    }
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.rewards.validate()?;
        if self.per_tier.iter().sum::<usize>() == 0 {
            return Err(Error::Config("dataset manifest requests zero trajectories".into()));
        }
        let ok = self.noise_scales.iter().all(|s| s.is_finite() && *s >= 0.0)
            && 0.0 <= self.halt_range[0]
            && self.halt_range[0] <= self.halt_range[1]
            && self.halt_range[1] <= 1.0
            && self.horizon >= 1;
        if !ok {
            return Err(Error::Config(format!("invalid dataset manifest: {self:?}")));
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        self.env.obs_dim()
    }
}

/// One recorded episode, stored as flat row-major arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub task_id: usize,
    pub tier: QualityTier,
    pub success: bool,
    pub final_distance: f64,
    pub len: usize,
    pub obs_dim: usize,
    pub observations: Vec<f64>,
    pub actions: Vec<f64>,
    pub joints: Vec<f64>,
    pub rewards: Vec<f64>,
}

impl Trajectory {
    pub fn observation(&self, t: usize) -> &[f64] {
        &self.observations[t * self.obs_dim..(t + 1) * self.obs_dim]
    }

    pub fn action(&self, t: usize) -> &[f64] {
        &self.actions[t * ACTION_DIM..(t + 1) * ACTION_DIM]
    }

    /// Actions `t..t + h`, flattened.
    pub fn chunk(&self, t: usize, h: usize) -> &[f64] {
        &self.actions[t * ACTION_DIM..(t + h) * ACTION_DIM]
    }

    fn check(&self) -> std::result::Result<(), String> {
        let ok = self.observations.len() == self.len * self.obs_dim
            && self.actions.len() == self.len * ACTION_DIM
            && self.joints.len() == self.len * JOINT_DIM
            && self.rewards.len() == self.len
            && self.final_distance.is_finite()
            && [&self.observations, &self.actions, &self.joints, &self.rewards]
                .iter()
                .all(|v| v.iter().all(|x| x.is_finite()));
        if ok {
            Ok(())
        } else {
            Err("trajectory arrays have inconsistent lengths or non-finite values".into())
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub trajectories: Vec<Trajectory>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    schema_version: u32,
    kind: String,
    manifest: DatasetManifest,
    trajectories: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    schema_version: u32,
    #[serde(flatten)]
    trajectory: Trajectory,
}

fn rollout(
    manifest: &DatasetManifest,
    task: usize,
    tier: QualityTier,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    let env = &manifest.env;
    let angle = rng.random::<f64>() * std::f64::consts::TAU;
    let radius = env.start_radius * rng.random::<f64>().sqrt();
    let start = [radius * angle.cos(), radius * angle.sin()];
    let noise_std = manifest.noise_scales[tier as usize] * env.action_scale();
    let halt_at = match tier {
        QualityTier::Poor => {
            let [lo, hi] = manifest.halt_range;
            let frac = lo + (hi - lo) * rng.random::<f64>();
            (frac * env.reach_steps as f64).round() as usize
        }
        _ => usize::MAX,
    };

    let mut ep = Episode::new(env, task, start)?;
    let obs_dim = env.obs_dim();
    let mut traj = Trajectory {
        task_id: task,
        tier,
        success: false,
        final_distance: 0.0,
        len: 0,
        obs_dim,
        observations: Vec::with_capacity(env.episode_len * obs_dim),
        actions: Vec::with_capacity(env.episode_len * ACTION_DIM),
        joints: Vec::with_capacity(env.episode_len * JOINT_DIM),
        rewards: Vec::with_capacity(env.episode_len),
    };
    while !ep.done() {
        traj.observations.extend(ep.observation());
        let t = ep.t;
        let mut action = if t >= halt_at {
            [0.0; ACTION_DIM]
        } else {
            let (r0, r1) = (ep.reference(t), ep.reference(t + 1));
            [
                r1[0] - r0[0] + TRACKING_GAIN * (r0[0] - ep.pos[0]),
                r1[1] - r0[1] + TRACKING_GAIN * (r0[1] - ep.pos[1]),
            ]
        };
        if noise_std > 0.0 {
            for a in &mut action {
                let z: f64 = rng.sample(StandardNormal);
                *a += noise_std * z.clamp(-NOISE_CLIP, NOISE_CLIP);
            }
        }
        let (joint, components) = ep.step(&action)?;
        traj.actions.extend_from_slice(&joint[2..]);
        traj.joints.extend(joint);
        traj.rewards.push(reward::step_reward(&components, &manifest.rewards)?.total);
    }
    traj.len = env.episode_len;
    traj.success = ep.success();
    traj.final_distance = ep.goal_distance();
    Ok(traj)
}

/// Deterministic dataset for `manifest`: tasks in order, tiers in order.
pub fn generate(manifest: &DatasetManifest) -> Result<Dataset> {
    manifest.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(manifest.seed);
    let mut trajectories = Vec::new();
    for task in 0..manifest.env.n_tasks {
        for tier in QualityTier::ALL {
            for _ in 0..manifest.per_tier[tier as usize] {
                trajectories.push(rollout(manifest, task, tier, &mut rng)?);
            }
        }
    }
    Ok(Dataset {
        manifest: manifest.clone(),
        trajectories,
    })
}

impl Dataset {
    pub fn to_writer<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            schema_version: DATASET_VERSION,
            kind: "arfm-dataset".into(),
            manifest: self.manifest.clone(),
            trajectories: self.trajectories.len(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for t in &self.trajectories {
            let record = Record {
                schema_version: DATASET_VERSION,
                trajectory: t.clone(),
            };
            serde_json::to_writer(&mut w, &record)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.to_writer(&mut buf)?;
        Ok(buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.to_writer(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn from_reader<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let parse_err = |line: usize, message: String| Error::Parse { line, message };
        let check_version = |line: usize, value: &serde_json::Value| -> Result<()> {
            match value.get("schema_version").and_then(|v| v.as_u64()) {
                Some(v) if v == DATASET_VERSION as u64 => Ok(()),
                Some(v) => Err(Error::Version {
                    expected: DATASET_VERSION,
                    found: v as u32,
                }),
                None => Err(parse_err(line, "missing schema_version".into())),
            }
        };

        let (_, first) = lines
            .next()
            .ok_or_else(|| parse_err(1, "empty dataset file".into()))?;
        let first = first?;
        let value: serde_json::Value =
            serde_json::from_str(&first).map_err(|e| parse_err(1, e.to_string()))?;
        check_version(1, &value)?;
        let header: Header = serde_json::from_value(value).map_err(|e| parse_err(1, e.to_string()))?;

        let mut trajectories = Vec::with_capacity(header.trajectories);
        for (i, line) in lines {
            let line = line?;
            let n = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value =
                serde_json::from_str(&line).map_err(|e| parse_err(n, e.to_string()))?;
            check_version(n, &value)?;
            let record: Record = serde_json::from_value(value).map_err(|e| parse_err(n, e.to_string()))?;
            record.trajectory.check().map_err(|m| parse_err(n, m))?;
            trajectories.push(record.trajectory);
        }
        if trajectories.len() != header.trajectories {
            return Err(parse_err(
                trajectories.len() + 1,
                format!(
                    "header announces {} trajectories, found {}",
                    header.trajectories,
                    trajectories.len()
                ),
            ));
        }
        Ok(Self {
            manifest: header.manifest,
            trajectories,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path)?;
        Self::from_reader(BufReader::new(file))
    }

    /// Keeps only trajectories whose task is in `tasks`.
    pub fn filter_tasks(&self, tasks: &[usize]) -> Dataset {
        Dataset {
            manifest: self.manifest.clone(),
            trajectories: self
                .trajectories
                .iter()
                .filter(|t| tasks.contains(&t.task_id))
                .cloned()
                .collect(),
        }
    }
}

/// Which per-sample advantage the trainer sees.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageSource {
    /// Return-to-go z-scored within each task.
    #[default]
    Standardized,
    /// Leave-one-out advantage of the return-to-go within each task, unscaled.
    LeaveOneOut,
}

/// Per-dimension action standardization; the field is trained on
/// normalized chunks and rollouts map samples back.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ActionNorm {
    pub fn identity(action_dim: usize) -> Self {
        Self {
            mean: vec![0.0; action_dim],
            std: vec![1.0; action_dim],
        }
    }

    /// Mean and population standard deviation of every action in `dataset`.
    pub fn fit(dataset: &Dataset) -> Self {
        let mut sum = [0.0; ACTION_DIM];
        let mut sq = [0.0; ACTION_DIM];
        let mut n = 0usize;
        for traj in &dataset.trajectories {
            for row in traj.actions.chunks_exact(ACTION_DIM) {
                for d in 0..ACTION_DIM {
                    sum[d] += row[d];
                    sq[d] += row[d] * row[d];
                }
                n += 1;
            }
        }
        if n == 0 {
            return Self::identity(ACTION_DIM);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let sd = (q / n as f64 - m * m).max(0.0).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn normalize(&self, chunk: &mut [f64]) {
        let d = self.mean.len();
        for (i, v) in chunk.iter_mut().enumerate() {
            *v = (*v - self.mean[i % d]) / self.std[i % d];
        }
    }

    pub fn denormalize(&self, chunk: &mut [f64]) {
        let d = self.mean.len();
        for (i, v) in chunk.iter_mut().enumerate() {
            *v = *v * self.std[i % d] + self.mean[i % d];
        }
    }
}

/// Location of one training chunk inside the dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChunkRef {
    pub trajectory: usize,
    pub t: usize,
}

/// All admissible chunk starts with their advantages, computed once.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub horizon: usize,
    pub index: Vec<ChunkRef>,
    pub task_ids: Vec<usize>,
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
    pub action_norm: ActionNorm,
    dataset: Dataset,
}

impl TrainingSet {
    pub fn new(dataset: &Dataset, horizon: usize, source: AdvantageSource) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Domain("chunk horizon must be positive".into()));
        }
        let mut index = Vec::new();
        let mut task_ids = Vec::new();
        let mut returns = Vec::new();
        for (i, traj) in dataset.trajectories.iter().enumerate() {
            if traj.len < horizon {
                log::warn!(
                    "trajectory {i} has {} steps, fewer than the horizon {horizon}; excluded",
                    traj.len
                );
                continue;
            }
            let rtg = reward::return_to_go(&traj.rewards)?;
            for t in 0..=traj.len - horizon {
                index.push(ChunkRef { trajectory: i, t });
                task_ids.push(traj.task_id);
                returns.push(rtg[t]);
            }
        }
        if index.is_empty() {
            return Err(Error::Domain(format!(
                "no trajectory is at least {horizon} steps long"
            )));
        }
        let advantages = match source {
            AdvantageSource::Standardized => reward::standardize_per_task(&returns, &task_ids)?.standardized,
            AdvantageSource::LeaveOneOut => {
                let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
                for (i, &task) in task_ids.iter().enumerate() {
                    groups.entry(task).or_default().push(i);
                }
                let mut adv = vec![0.0; returns.len()];
                for members in groups.values() {
                    if members.len() < 2 {
                        continue;
                    }
                    let group: Vec<f64> = members.iter().map(|&i| returns[i]).collect();
                    for (&i, a) in members.iter().zip(reward::loo_advantages(&group)?) {
                        adv[i] = a;
                    }
                }
                adv
            }
        };
        Ok(Self {
            horizon,
            index,
            task_ids,
            returns,
            advantages,
            action_norm: ActionNorm::fit(dataset),
            dataset: dataset.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.dataset.manifest.obs_dim()
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn sample(&self, i: usize) -> TrainSample {
        let r = self.index[i];
        let traj = &self.dataset.trajectories[r.trajectory];
        let mut chunk = traj.chunk(r.t, self.horizon).to_vec();
        self.action_norm.normalize(&mut chunk);
        TrainSample {
            obs: traj.observation(r.t).to_vec(),
            chunk,
            advantage: self.advantages[i],
        }
    }

    /// Endless stream of batches drawn uniformly with replacement.
    pub fn batches(&self, batch_size: usize, seed: u64) -> BatchSampler<'_> {
        BatchSampler {
            set: self,
            batch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

pub struct BatchSampler<'a> {
    set: &'a TrainingSet,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler<'_> {
    pub fn next_batch(&mut self) -> Vec<TrainSample> {
        (0..self.batch_size)
            .map(|_| {
                let i = self.rng.random_range(0..self.set.len());
                self.set.sample(i)
            })
            .collect()
    }
}

impl Iterator for BatchSampler<'_> {
    type Item = Vec<TrainSample>;

    fn next(&mut self) -> Option<Self::Item> {
        Some(self.next_batch())
    }
}
