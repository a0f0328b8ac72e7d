use arfm::alpha::AlphaConfig;
use arfm::data::{generate, AdvantageSource, DatasetManifest, TrainingSet};
use arfm::env::ACTION_DIM;
use arfm::trainer::{Checkpoint, StepReport, TrainConfig, TrainMode, TrainSample, Trainer, CHECKPOINT_VERSION};
use arfm::Error;

fn small_manifest() -> DatasetManifest {
    DatasetManifest {
        per_tier: [4, 4, 4],
        ..DatasetManifest::default()
    }
}

fn run(set: &TrainingSet, cfg: TrainConfig, acfg: AlphaConfig) -> (Trainer, Vec<StepReport>) {
    let mut trainer = Trainer::from_shape(set.obs_dim(), ACTION_DIM, cfg.clone(), acfg).unwrap();
    let mut batches = set.batches(cfg.batch_size, cfg.seed);
    let reports = trainer.run(|| Ok(batches.next_batch())).unwrap();
    (trainer, reports)
}

fn cfg(mode: TrainMode, steps: usize) -> TrainConfig {
    TrainConfig {
        mode,
        steps,
        hidden: 16,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn trace(reports: &[StepReport]) -> Vec<String> {
    reports.iter().map(|r| r.train_row()).collect()
}

#[test]
fn same_seed_same_trace() {
    let ds = generate(&small_manifest()).unwrap();
    let set = TrainingSet::new(&ds, 8, AdvantageSource::Standardized).unwrap();
    let (a, ra) = run(&set, cfg(TrainMode::Arfm, 50), AlphaConfig::desk());
    let (b, rb) = run(&set, cfg(TrainMode::Arfm, 50), AlphaConfig::desk());
    assert_eq!(trace(&ra), trace(&rb));
    assert_eq!(a.model().params(), b.model().params());
}

#[test]
fn vanilla_and_fixed_zero_alpha_are_bitwise_equal() {
    let ds = generate(&small_manifest()).unwrap();
    let set = TrainingSet::new(&ds, 8, AdvantageSource::Standardized).unwrap();
    let (a, ra) = run(&set, cfg(TrainMode::VanillaFm, 100), AlphaConfig::desk());
    let (b, rb) = run(&set, cfg(TrainMode::FixedAlpha(0.0), 100), AlphaConfig::desk());
    let pinned = AlphaConfig {
        alpha_min: 0.0,
        alpha_max: 0.0,
        ..AlphaConfig::desk()
    };
    let (c, rc) = run(&set, cfg(TrainMode::Arfm, 100), pinned);
    assert_eq!(trace(&ra), trace(&rb));
    assert_eq!(trace(&ra), trace(&rc));
    assert_eq!(a.model().params(), b.model().params());
    assert_eq!(a.model().params(), c.model().params());
}

#[test]
fn equal_advantages_reduce_to_vanilla() {
    let ds = generate(&small_manifest()).unwrap();
    let set = TrainingSet::new(&ds, 8, AdvantageSource::Standardized).unwrap();
    let flatten = |mut batch: Vec<TrainSample>| {
        for s in &mut batch {
            s.advantage = 0.7;
        }
        batch
    };
    let c = cfg(TrainMode::FixedAlpha(2.0), 20);
    let mut tilted = Trainer::from_shape(set.obs_dim(), ACTION_DIM, c.clone(), AlphaConfig::desk()).unwrap();
    let mut plain = Trainer::from_shape(
        set.obs_dim(),
        ACTION_DIM,
        TrainConfig {
            mode: TrainMode::VanillaFm,
            ..c.clone()
        },
        AlphaConfig::desk(),
    )
    .unwrap();
    let mut b1 = set.batches(c.batch_size, 1);
    let mut b2 = set.batches(c.batch_size, 1);
    tilted.run(|| Ok(flatten(b1.next_batch()))).unwrap();
    plain.run(|| Ok(flatten(b2.next_batch()))).unwrap();
    for (p, q) in tilted.model().params().iter().zip(plain.model().params()) {
        assert!((p - q).abs() <= 1e-9 * q.abs().max(1e-3), "{p} vs {q}");
    }
}

#[test]
fn arfm_alpha_stays_in_range_and_clip_is_respected() {
    let ds = generate(&small_manifest()).unwrap();
    let set = TrainingSet::new(&ds, 8, AdvantageSource::Standardized).unwrap();
    let acfg = AlphaConfig::desk();
    let c = cfg(TrainMode::Arfm, 200);
    let max_entropy = (c.batch_size as f64).ln();
    let (_, reports) = run(&set, c, acfg.clone());
    for r in &reports {
        assert!(acfg.alpha_min <= r.alpha && r.alpha <= acfg.alpha_max);
        assert!(r.grad_norm <= 10.0 * (1.0 + 1e-12));
        assert!(r.entropy <= max_entropy + 1e-12);
        assert!(r.lr > 0.0);
    }
    assert!(reports.iter().any(|r| r.alpha > acfg.alpha_min));
}

#[test]
fn training_reduces_the_loss() {
    let ds = generate(&DatasetManifest::default()).unwrap();
    let set = TrainingSet::new(&ds, 8, AdvantageSource::Standardized).unwrap();
    let (_, reports) = run(
        &set,
        TrainConfig {
            steps: 2_000,
            ..TrainConfig::default()
        },
        AlphaConfig::desk(),
    );
    let mean = |rs: &[StepReport]| rs.iter().map(|r| r.mean_loss).sum::<f64>() / rs.len() as f64;
    let first = mean(&reports[..100]);
    let last = mean(&reports[reports.len() - 100..]);
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn batch_size_below_two_is_rejected() {
    let ds = generate(&small_manifest()).unwrap();
    let set = TrainingSet::new(&ds, 8, AdvantageSource::Standardized).unwrap();
    let mut trainer = Trainer::from_shape(set.obs_dim(), ACTION_DIM, cfg(TrainMode::Arfm, 1), AlphaConfig::desk()).unwrap();
    let one = vec![set.sample(0)];
    assert!(matches!(trainer.train_step(&one), Err(Error::Domain(_))));
}

#[test]
fn checkpoint_round_trip_and_version_check() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate(&small_manifest()).unwrap();
    let set = TrainingSet::new(&ds, 8, AdvantageSource::Standardized).unwrap();
    let c = cfg(TrainMode::Arfm, 10);
    let (trainer, _) = run(&set, c.clone(), AlphaConfig::desk());
    let ckpt = Checkpoint::new(trainer.model(), set.action_norm.clone(), 10, c, AlphaConfig::desk());
    let path = dir.path().join("model.json");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(back.model().unwrap().params(), trainer.model().params());
    back.policy().unwrap();

    let mut bumped: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    bumped["schema_version"] = (CHECKPOINT_VERSION + 1).into();
    std::fs::write(&path, bumped.to_string()).unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(Error::Version { .. })));
}
