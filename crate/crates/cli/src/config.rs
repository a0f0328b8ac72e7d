//! The run configuration: one TOML tree covering every subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use arfm::alpha::AlphaConfig;
use arfm::data::{AdvantageSource, DatasetManifest};
use arfm::eval::EvalConfig;
use arfm::oracles::SuiteConfig;
use arfm::trainer::{TrainConfig, TrainMode};
use serde::{Deserialize, Serialize};

pub const RESOLVED_NAME: &str = "config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub lambdas: Vec<f64>,
    pub bisect_iters: Vec<usize>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        let l = AlphaConfig::DESK_LAMBDA;
        Self {
            lambdas: vec![l / 10.0, l / 3.0, l, 3.0 * l, 10.0 * l],
            bisect_iters: vec![1, 5, 10, 20, 40],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinualConfig {
    /// Task groups learned one after another.
    pub phases: Vec<Vec<usize>>,
}

impl Default for ContinualConfig {
    fn default() -> Self {
        Self {
            phases: vec![vec![0, 1], vec![2, 3]],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// When set, replaces every per-section seed.
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Dataset file for `train` and `ablate`; generated from `manifest` when unset.
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub advantage: AdvantageSource,
    pub manifest: DatasetManifest,
    pub train: TrainConfig,
    pub alpha: AlphaConfig,
    pub eval: EvalConfig,
    pub ablation: AblationConfig,
    pub continual: ContinualConfig,
    pub validate: SuiteConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            out: None,
            data: None,
            checkpoint: None,
            advantage: AdvantageSource::default(),
            manifest: DatasetManifest::default(),
            train: TrainConfig::default(),
            alpha: AlphaConfig::desk(),
            eval: EvalConfig::default(),
            ablation: AblationConfig::default(),
            continual: ContinualConfig::default(),
            validate: SuiteConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<TrainMode>,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn resolve(mut self, o: Overrides) -> Self {
        if let Some(seed) = o.seed {
            self.seed = Some(seed);
        }
        if let Some(seed) = self.seed {
            self.manifest.seed = seed;
            self.train.seed = seed;
            self.eval.seed = seed;
            self.validate.seed = seed;
        }
        if let Some(mode) = o.mode {
            self.train.mode = mode;
        }
        self.out = o.out.or(self.out).or_else(|| Some(PathBuf::from("runs")));
        self.data = o.data.or(self.data);
        self.checkpoint = o.checkpoint.or(self.checkpoint);
        self
    }

    pub fn out_dir(&self) -> &Path {
        self.out.as_deref().unwrap_or(Path::new("runs"))
    }

    /// Writes the resolved tree next to a command's outputs.
    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(RESOLVED_NAME);
        fs::write(&path, toml::to_string(self)?)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_tree_round_trips() {
        let cfg = RunConfig::default().resolve(Overrides {
            mode: Some(TrainMode::FixedAlpha(0.25)),
            ..Overrides::default()
        });
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn seed_override_reaches_every_section() {
        let cfg = RunConfig::default().resolve(Overrides {
            seed: Some(42),
            ..Overrides::default()
        });
        assert_eq!(
            [cfg.manifest.seed, cfg.train.seed, cfg.eval.seed, cfg.validate.seed],
            [42; 4]
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[train]\nstepz = 3\n").is_err());
        let partial: RunConfig = toml::from_str("[train]\nsteps = 3\n").unwrap();
        assert_eq!(partial.train.steps, 3);
        assert_eq!(partial.alpha, AlphaConfig::desk());
    }
}
