//! Energy-weighted flow-matching training.
//!
//! Each step draws one `(noise, tau)` pair per sample, measures the per-sample
//! flow-matching losses, picks the scaling factor `alpha`, turns advantages
//! into softmax weights `w_i = softmax(alpha * R*_i)` and takes one AdamW step
//! on `sum_i w_i L_i`.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::ActionNorm;
use crate::eval::Policy;
use crate::alpha::{batch_stats, solve_alpha, AlphaConfig, AlphaSolution, AlphaStats, SolveOutcome};
use crate::error::{ensure_len, Error, Result};
use crate::model::{Activation, FlowTerm, ModelShape, VectorFieldModel};

/// Offsets the noise stream from the batch stream when both derive from one seed.
const NOISE_STREAM: u64 = 0x6e6f_6973_65;

/// Overflow-safe softmax of `alpha * advantages`.
pub fn energy_weights(advantages: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if advantages.is_empty() {
        return Err(Error::Domain("energy weights of an empty batch".into()));
    }
    if let Some(i) = advantages.iter().position(|a| !a.is_finite()) {
        return Err(Error::Numeric(format!("non-finite advantage at index {i}")));
    }
    if !alpha.is_finite() {
        return Err(Error::Numeric(format!("non-finite scaling factor {alpha}")));
    }
    let logits: Vec<f64> = advantages.iter().map(|a| alpha * a).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `sum_i w_i L_i`.
pub fn weighted_loss(per_sample_losses: &[f64], weights: &[f64]) -> Result<f64> {
    ensure_len("weighted_loss weights", per_sample_losses.len(), weights.len())?;
    Ok(per_sample_losses.iter().zip(weights).map(|(l, w)| l * w).sum())
}

/// Self-normalised weighted mean of the advantages under `exp(alpha R)`.
pub fn empirical_score(advantages: &[f64], alpha: f64) -> Result<f64> {
    let w = energy_weights(advantages, alpha)?;
    Ok(w.iter().zip(advantages).map(|(w, a)| w * a).sum())
}

/// Shannon entropy of a weight vector in nats; `ln B` for uniform weights.
pub fn weight_entropy(weights: &[f64]) -> f64 {
    -weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|w| w * w.ln())
        .sum::<f64>()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 1.0e-4,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1.0e-8,
            weight_decay: 1.0e-10,
            clip_norm: 10.0,
        }
    }
}

/// Linear warmup followed by cosine decay to a floor, in absolute learning
/// rates. Steps past `decay_steps` stay at `decay_lr`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub warmup_steps: usize,
    pub decay_steps: usize,
    pub peak_lr: f64,
    pub decay_lr: f64,
}

impl ScheduleConfig {
    pub fn published() -> Self {
        Self {
            warmup_steps: 1_000,
            decay_steps: 30_000,
            peak_lr: 2.5e-5,
            decay_lr: 2.5e-6,
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        let factor = if step < self.warmup_steps {
            let n = self.warmup_steps as f64;
            let start = 1.0 / (n + 1.0);
            let frac = 1.0 - step as f64 / n;
            (start - 1.0) * frac + 1.0
        } else {
            let s = step.min(self.decay_steps) as f64;
            let cosine = 0.5 * (1.0 + (PI * s / self.decay_steps.max(1) as f64).cos());
            let floor = self.decay_lr / self.peak_lr;
            (1.0 - floor) * cosine + floor
        };
        self.peak_lr * factor
    }
}

/// How the per-sample weights are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Solve for alpha every step.
    Arfm,
    /// Uniform weights.
    VanillaFm,
    /// A constant alpha; the solver is never called.
    FixedAlpha(f64),
    /// Reward-weighted regression: weights proportional to `exp(R*)`.
    Rwr,
}

impl TrainMode {
    pub fn name(&self) -> String {
        match self {
            TrainMode::Arfm => "arfm".into(),
            TrainMode::VanillaFm => "vanilla_fm".into(),
            TrainMode::FixedAlpha(a) => format!("fixed_alpha:{a}"),
            TrainMode::Rwr => "rwr".into(),
        }
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    /// Accepts `arfm`, `vanilla_fm`, `rwr` and `fixed_alpha:<value>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "arfm" => Ok(TrainMode::Arfm),
            "vanilla_fm" | "vanilla" => Ok(TrainMode::VanillaFm),
            "rwr" => Ok(TrainMode::Rwr),
            other => {
                let value = other
                    .strip_prefix("fixed_alpha:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Config(format!("unknown training mode `{other}`")))?;
                Ok(TrainMode::FixedAlpha(value))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub horizon: usize,
    pub hidden: usize,
    pub activation: Activation,
    pub optimizer: OptimizerConfig,
    /// When set, overrides `optimizer.lr` step by step.
    pub schedule: Option<ScheduleConfig>,
    pub mode: TrainMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 10_000,
            batch_size: 64,
            horizon: 8,
            hidden: 128,
            activation: Activation::Tanh,
            optimizer: OptimizerConfig {
                lr: 5.0e-3,
                ..OptimizerConfig::default()
            },
            schedule: Some(ScheduleConfig {
                warmup_steps: 200,
                decay_steps: 10_000,
                peak_lr: 5.0e-3,
                decay_lr: 5.0e-4,
            }),
            mode: TrainMode::Arfm,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// The full-scale hyperparameters: horizon 50, reference optimizer and schedule.
    pub fn published() -> Self {
        Self {
            steps: 30_000,
            horizon: 50,
            optimizer: OptimizerConfig::default(),
            schedule: Some(ScheduleConfig::published()),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let o = &self.optimizer;
        let ok = self.steps > 0
            && self.batch_size >= 2
            && self.horizon >= 1
            && self.hidden >= 1
            && o.lr >= 0.0
            && (0.0..1.0).contains(&o.beta1)
            && (0.0..1.0).contains(&o.beta2)
            && o.eps > 0.0
            && o.weight_decay >= 0.0
            && o.clip_norm > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid training configuration: {self:?}")));
        }
        if let Some(s) = &self.schedule {
            if !(s.peak_lr > 0.0 && s.decay_lr >= 0.0 && s.decay_steps > 0) {
                return Err(Error::Config(format!("invalid schedule: {s:?}")));
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        match &self.schedule {
            Some(s) => s.lr(step),
            None => self.optimizer.lr,
        }
    }
}

/// AdamW with decoupled weight decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamW {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, cfg: &OptimizerConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *p -= lr * cfg.weight_decay * *p;
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

/// Scales `grad` in place so its norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

/// One training example: observation, clean action chunk (flattened) and
/// its advantage.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub obs: Vec<f64>,
    pub chunk: Vec<f64>,
    pub advantage: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightedBatch {
    pub advantages: Vec<f64>,
    pub losses: Vec<f64>,
    pub weights: Vec<f64>,
    pub alpha: f64,
}

impl WeightedBatch {
    pub fn loss(&self) -> f64 {
        self.losses.iter().zip(&self.weights).map(|(l, w)| l * w).sum()
    }
}

/// Per-step training record; one row of the training trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub loss: f64,
    pub mean_loss: f64,
    pub alpha: f64,
    pub sigma_r: f64,
    pub mu_l: f64,
    pub sigma_l: f64,
    pub entropy: f64,
    pub grad_norm: f64,
    pub grad_norm_raw: f64,
    pub lr: f64,
    pub iterations: usize,
    pub residual: f64,
    pub clipped: bool,
    pub degenerate: bool,
}

impl StepReport {
    pub const TRAIN_HEADER: &'static str =
        "step,loss,mean_loss,alpha,sigma_r,sigma_l,entropy,grad_norm,grad_norm_raw,lr";
    pub const ALPHA_HEADER: &'static str = "step,sigma_r,sigma_l,mu_l,alpha,iterations,residual,clipped,degenerate";

    pub fn train_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.loss,
            self.mean_loss,
            self.alpha,
            self.sigma_r,
            self.sigma_l,
            self.entropy,
            self.grad_norm,
            self.grad_norm_raw,
            self.lr
        )
    }

    pub fn alpha_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.step,
            self.sigma_r,
            self.sigma_l,
            self.mu_l,
            self.alpha,
            self.iterations,
            self.residual,
            self.clipped,
            self.degenerate
        )
    }
}

pub struct Trainer {
    model: VectorFieldModel,
    optimizer: AdamW,
    cfg: TrainConfig,
    alpha_cfg: AlphaConfig,
    rng: ChaCha8Rng,
    step: usize,
}

impl Trainer {
    pub fn new(model: VectorFieldModel, cfg: TrainConfig, alpha_cfg: AlphaConfig) -> Result<Self> {
        cfg.validate()?;
        alpha_cfg.validate()?;
        let optimizer = AdamW::new(model.params().len());
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ NOISE_STREAM);
        Ok(Self {
            model,
            optimizer,
            cfg,
            alpha_cfg,
            rng,
            step: 0,
        })
    }

    /// Fresh model initialised from the config seed.
    pub fn from_shape(obs_dim: usize, action_dim: usize, cfg: TrainConfig, alpha_cfg: AlphaConfig) -> Result<Self> {
        let shape = ModelShape {
            obs_dim,
            horizon: cfg.horizon,
            action_dim,
            hidden: cfg.hidden,
            activation: cfg.activation,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = VectorFieldModel::new(shape, &mut rng)?;
        Self::new(model, cfg, alpha_cfg)
    }

    pub fn model(&self) -> &VectorFieldModel {
        &self.model
    }

    pub fn into_model(self) -> VectorFieldModel {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Draws noise and times for `batch` and builds the regression terms.
    fn flow_terms(&mut self, batch: &[TrainSample]) -> Result<Vec<FlowTerm>> {
        let n = self.model.shape().output_dim();
        batch
            .iter()
            .map(|s| {
                ensure_len("training chunk", n, s.chunk.len())?;
                let noise: Vec<f64> = (0..n).map(|_| self.rng.sample(StandardNormal)).collect();
                let tau: f64 = self.rng.random();
                let noisy = s.chunk.iter().zip(&noise).map(|(a, e)| tau * a + (1.0 - tau) * e).collect();
                let target = s.chunk.iter().zip(&noise).map(|(a, e)| a - e).collect();
                Ok(FlowTerm {
                    obs: s.obs.clone(),
                    noisy,
                    tau,
                    target,
                })
            })
            .collect()
    }

    fn choose_alpha(&self, stats: &AlphaStats) -> AlphaSolution {
        let fixed = |alpha: f64| AlphaSolution {
            alpha,
            alpha_unclipped: alpha,
            x: alpha * alpha * stats.sigma_r * stats.sigma_r,
            iterations: 0,
            residual: f64::NAN,
            clipped: false,
            outcome: SolveOutcome::Bisected,
            bracket_width: 0.0,
        };
        match self.cfg.mode {
            TrainMode::Arfm => solve_alpha(stats, &self.alpha_cfg),
            TrainMode::VanillaFm => fixed(0.0),
            TrainMode::FixedAlpha(a) => fixed(a),
            TrainMode::Rwr => fixed(1.0),
        }
    }

    /// Builds the weighted batch without updating the model.
    pub fn weigh(&mut self, batch: &[TrainSample]) -> Result<(Vec<FlowTerm>, WeightedBatch, AlphaSolution, AlphaStats)> {
        if batch.len() < 2 {
            return Err(Error::Domain(format!("batch size {} is below 2", batch.len())));
        }
        let terms = self.flow_terms(batch)?;
        let losses = self.model.losses(&terms)?;
        let advantages: Vec<f64> = batch.iter().map(|s| s.advantage).collect();
        let stats = batch_stats(&advantages, &losses)?;
        let solution = self.choose_alpha(&stats);
        let weights = energy_weights(&advantages, solution.alpha)?;
        let wb = WeightedBatch {
            advantages,
            losses,
            weights,
            alpha: solution.alpha,
        };
        Ok((terms, wb, solution, stats))
    }

    pub fn train_step(&mut self, batch: &[TrainSample]) -> Result<StepReport> {
        let (terms, wb, solution, stats) = self.weigh(batch)?;
        let (_, mut grad) = self.model.loss_and_gradient(&terms, &wb.weights)?;
        let grad_norm_raw = clip_grad_norm(&mut grad, self.cfg.optimizer.clip_norm);
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let lr = self.cfg.lr_at(self.step);
        self.optimizer
            .step(self.model.params_mut(), &grad, lr, &self.cfg.optimizer);
        if self.model.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric(format!("non-finite parameters after step {}", self.step)));
        }
        let report = StepReport {
            step: self.step,
            loss: wb.loss(),
            mean_loss: stats.mu_l,
            alpha: solution.alpha,
            sigma_r: stats.sigma_r,
            mu_l: stats.mu_l,
            sigma_l: stats.sigma_l,
            entropy: weight_entropy(&wb.weights),
            grad_norm,
            grad_norm_raw,
            lr,
            iterations: solution.iterations,
            residual: solution.residual,
            clipped: solution.clipped,
            degenerate: solution.degenerate(),
        };
        if !report.loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss at step {}", self.step)));
        }
        self.step += 1;
        Ok(report)
    }

    /// Runs `cfg.steps` steps, pulling one batch per step from `next_batch`.
    pub fn run<F>(&mut self, mut next_batch: F) -> Result<Vec<StepReport>>
    where
        F: FnMut() -> Result<Vec<TrainSample>>,
    {
        let mut reports = Vec::with_capacity(self.cfg.steps);
        for _ in 0..self.cfg.steps {
            let batch = next_batch()?;
            let report = self.train_step(&batch)?;
            if report.step % 500 == 0 {
                log::debug!(
                    "step {} loss {:.4} alpha {:.4} lr {:.2e}",
                    report.step,
                    report.loss,
                    report.alpha,
                    report.lr
                );
            }
            reports.push(report);
        }
        Ok(reports)
    }
}

pub const CHECKPOINT_FORMAT: &str = "arfm-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub schema_version: u32,
    /// Encoding of `params`; only `json` is written.
    pub encoding: String,
    pub step: usize,
    pub shape: ModelShape,
    pub train: TrainConfig,
    pub alpha: AlphaConfig,
    pub action_norm: ActionNorm,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(
        model: &VectorFieldModel,
        action_norm: ActionNorm,
        step: usize,
        train: TrainConfig,
        alpha: AlphaConfig,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            schema_version: CHECKPOINT_VERSION,
            encoding: "json".into(),
            step,
            shape: model.shape().clone(),
            train,
            alpha,
            action_norm,
            params: model.params().to_vec(),
        }
    }

    pub fn model(&self) -> Result<VectorFieldModel> {
        VectorFieldModel::from_params(self.shape.clone(), self.params.clone())
    }

    /// Rebuilds the closed-loop policy, including the action normalizer.
    pub fn policy(&self) -> Result<Policy<VectorFieldModel>> {
        Policy::new(self.model()?, self.action_norm.clone(), self.shape.horizon)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let version = value.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                expected: CHECKPOINT_VERSION,
                found: version,
            });
        }
        let ckpt: Checkpoint = serde_json::from_value(value)?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.encoding != "json" {
            return Err(Error::Config(format!(
                "unsupported checkpoint format `{}` / encoding `{}`",
                ckpt.format, ckpt.encoding
            )));
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn energy_weight_examples() {
        let w = energy_weights(&[0.3, -2.0, 5.0], 0.0).unwrap();
        assert!(w.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));

        let w = energy_weights(&[1.0, 0.0, -1.0], 1.0).unwrap();
        for (a, e) in w.iter().zip([0.66524, 0.24473, 0.09003]) {
            assert!((a - e).abs() < 5e-6, "{a} vs {e}");
        }

        let w = energy_weights(&[0.0, 0.4, -0.5, 0.2], 50.0).unwrap();
        assert!(w[1] >= 0.999);

        assert!(energy_weights(&[f64::NAN, 1.0], 1.0).is_err());
        assert!(energy_weights(&[], 1.0).is_err());
        let w = energy_weights(&[1000.0, -1000.0], 5.0).unwrap();
        assert_eq!(w, vec![1.0, 0.0]);
    }

    #[test]
    fn weighted_loss_examples() {
        assert_eq!(weighted_loss(&[1.0, 3.0], &[0.25, 0.75]).unwrap(), 2.5);
        assert_eq!(weighted_loss(&[1.0, 3.0, 8.0], &[0.0, 1.0, 0.0]).unwrap(), 3.0);
        assert_eq!(weighted_loss(&[2.0, 4.0], &[0.5, 0.5]).unwrap(), 3.0);
        assert!(weighted_loss(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn score_examples() {
        let adv = [0.5, -1.0, 2.0, 0.1];
        let mean = adv.iter().sum::<f64>() / 4.0;
        assert!((empirical_score(&adv, 0.0).unwrap() - mean).abs() < 1e-15);
        let z = [-1.2247448713915890, 0.0, 1.2247448713915890];
        assert!(empirical_score(&z, 0.0).unwrap().abs() < 1e-9);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("arfm".parse::<TrainMode>().unwrap(), TrainMode::Arfm);
        assert_eq!("vanilla_fm".parse::<TrainMode>().unwrap(), TrainMode::VanillaFm);
        assert_eq!("rwr".parse::<TrainMode>().unwrap(), TrainMode::Rwr);
        assert_eq!("fixed_alpha:0.5".parse::<TrainMode>().unwrap(), TrainMode::FixedAlpha(0.5));
        assert!("fixed_alpha:x".parse::<TrainMode>().is_err());
        assert!("sgd".parse::<TrainMode>().is_err());
    }

    #[test]
    fn rwr_matches_unit_alpha_softmax() {
        let adv = [0.3, -0.7, 1.9, 0.0];
        let raw: Vec<f64> = adv.iter().map(|a: &f64| a.exp()).collect();
        let total: f64 = raw.iter().sum();
        let w = energy_weights(&adv, 1.0).unwrap();
        for (a, b) in w.iter().zip(&raw) {
            assert!((a - b / total).abs() < 1e-15);
        }
    }

    #[test]
    fn schedule_shape() {
        let s = ScheduleConfig::published();
        assert!((s.lr(0) - 2.5e-5 / 1001.0).abs() < 1e-18);
        // The cosine phase counts from step 0, so it has already decayed a little.
        assert!((s.lr(1_000) - 2.5e-5).abs() < 0.01 * 2.5e-5);
        assert!((s.lr(30_000) - 2.5e-6).abs() < 1e-18);
        assert!((s.lr(90_000) - 2.5e-6).abs() < 1e-18);
        let mid = s.lr(15_000);
        assert!(mid < 2.5e-5 && mid > 2.5e-6);
        for step in 0..999 {
            assert!(s.lr(step) < s.lr(step + 1));
        }
    }

    #[test]
    fn adamw_first_step_moves_by_lr() {
        let cfg = OptimizerConfig {
            weight_decay: 0.0,
            ..OptimizerConfig::default()
        };
        let mut p = vec![1.0, -1.0];
        let mut opt = AdamW::new(2);
        opt.step(&mut p, &[0.5, -2.0], 0.1, &cfg);
        assert!((p[0] - 0.9).abs() < 1e-7);
        assert!((p[1] + 0.9).abs() < 1e-7);
    }

    #[test]
    fn adamw_decoupled_decay() {
        let cfg = OptimizerConfig {
            weight_decay: 0.5,
            ..OptimizerConfig::default()
        };
        let mut p = vec![2.0];
        let mut opt = AdamW::new(1);
        opt.step(&mut p, &[0.0], 0.1, &cfg);
        assert!((p[0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn clipping() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 10.0), 5.0);
        assert_eq!(g, vec![3.0, 4.0]);
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn softmax_shift_invariance(
            adv in prop::collection::vec(-5.0f64..5.0, 1..32),
            alpha in 0.0f64..5.0,
            c in -50.0f64..50.0,
        ) {
            let a = energy_weights(&adv, alpha).unwrap();
            let shifted: Vec<f64> = adv.iter().map(|x| x + c).collect();
            let b = energy_weights(&shifted, alpha).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn weights_follow_advantage_order(
            adv in prop::collection::vec(-3.0f64..3.0, 2..32),
            alpha in 0.01f64..5.0,
        ) {
            let w = energy_weights(&adv, alpha).unwrap();
            for i in 0..adv.len() {
                for j in 0..adv.len() {
                    if adv[i] > adv[j] && (adv[i] - adv[j]) * alpha > 1e-12 {
                        prop_assert!(w[i] > w[j]);
                    }
                }
            }
        }

        #[test]
        fn tilting_raises_the_score(
            adv in prop::collection::vec(-3.0f64..3.0, 2..32),
            alpha in 0.01f64..5.0,
        ) {
            let spread = adv.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                - adv.iter().copied().fold(f64::INFINITY, f64::min);
            prop_assume!(spread > 1e-6);
            let base = empirical_score(&adv, 0.0).unwrap();
            prop_assert!(empirical_score(&adv, alpha).unwrap() >= base - 1e-12);
        }
    }
}
