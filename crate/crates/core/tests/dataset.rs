use std::io::Cursor;

use arfm::data::{generate, AdvantageSource, Dataset, DatasetManifest, QualityTier, TrainingSet, DATASET_VERSION};
use arfm::Error;

fn tiny() -> Dataset {
    let manifest = DatasetManifest {
        per_tier: [1, 1, 1],
        env: arfm::env::EnvConfig {
            n_tasks: 1,
            ..Default::default()
        },
        ..DatasetManifest::default()
    };
    generate(&manifest).unwrap()
}

#[test]
fn round_trip_is_exact() {
    let ds = tiny();
    assert_eq!(ds.trajectories.len(), 3);
    let bytes = ds.to_bytes().unwrap();
    let back = Dataset::from_reader(Cursor::new(&bytes)).unwrap();
    assert_eq!(back, ds);
    assert_eq!(back.to_bytes().unwrap(), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.jsonl");
    ds.save(&path).unwrap();
    assert_eq!(Dataset::load(&path).unwrap(), ds);
}

#[test]
fn bumped_version_is_rejected() {
    let text = String::from_utf8(tiny().to_bytes().unwrap()).unwrap();
    let from = format!("\"schema_version\":{DATASET_VERSION}");
    let to = format!("\"schema_version\":{}", DATASET_VERSION + 1);
    let bumped = text.replacen(&from, &to, 1);
    assert_ne!(bumped, text);
    match Dataset::from_reader(Cursor::new(bumped)) {
        Err(Error::Version { expected, found }) => {
            assert_eq!(expected, DATASET_VERSION);
            assert_eq!(found, DATASET_VERSION + 1);
        }
        other => panic!("expected a version error, got {other:?}"),
    }
}

#[test]
fn empty_file_is_a_parse_error() {
    assert!(matches!(
        Dataset::from_reader(Cursor::new("")),
        Err(Error::Parse { line: 1, .. })
    ));
}

#[test]
fn malformed_line_reports_its_number() {
    let text = String::from_utf8(tiny().to_bytes().unwrap()).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[2] = "{not json";
    let broken = lines.join("\n");
    assert!(matches!(
        Dataset::from_reader(Cursor::new(broken)),
        Err(Error::Parse { line: 3, .. })
    ));
}

#[test]
fn batches_have_the_requested_size_and_repeat_per_seed() {
    let ds = generate(&DatasetManifest::default()).unwrap();
    let set = TrainingSet::new(&ds, 8, AdvantageSource::Standardized).unwrap();
    let mut a = set.batches(16, 9);
    let mut b = set.batches(16, 9);
    for _ in 0..5 {
        let (x, y) = (a.next_batch(), b.next_batch());
        assert_eq!(x.len(), 16);
        assert_eq!(x, y);
    }
}

#[test]
fn dataset_advantages_are_standardized_per_task() {
    let ds = generate(&DatasetManifest::default()).unwrap();
    let set = TrainingSet::new(&ds, 8, AdvantageSource::Standardized).unwrap();
    for task in 0..ds.manifest.env.n_tasks {
        let xs: Vec<f64> = set
            .task_ids
            .iter()
            .zip(&set.advantages)
            .filter(|(t, _)| **t == task)
            .map(|(_, a)| *a)
            .collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9, "task {task}: mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 1e-9, "task {task}: std {}", var.sqrt());
    }
}

fn tier_means(ds: &Dataset) -> [f64; 3] {
    let set = TrainingSet::new(ds, 8, AdvantageSource::Standardized).unwrap();
    let mut acc = [(0.0, 0usize); 3];
    for (r, a) in set.index.iter().zip(&set.advantages) {
        let tier = ds.trajectories[r.trajectory].tier as usize;
        acc[tier].0 += a;
        acc[tier].1 += 1;
    }
    acc.map(|(s, n)| s / n as f64)
}

#[test]
fn tiers_are_ordered_with_margin_across_seeds() {
    for seed in 0..20 {
        let ds = generate(&DatasetManifest {
            seed,
            ..DatasetManifest::default()
        })
        .unwrap();
        let [expert, medium, poor] = tier_means(&ds);
        assert!(expert - medium >= 0.5, "seed {seed}: {expert} vs {medium}");
        assert!(medium - poor >= 0.5, "seed {seed}: {medium} vs {poor}");
    }
}

#[test]
fn experts_succeed_and_flags_match_distances() {
    let ds = generate(&DatasetManifest::default()).unwrap();
    let threshold = ds.manifest.env.goal_threshold;
    for t in &ds.trajectories {
        assert_eq!(t.success, t.final_distance < threshold);
        if t.tier == QualityTier::Expert {
            assert!(t.success);
        }
    }
}

#[test]
fn loo_source_sums_to_zero_per_task() {
    let ds = generate(&DatasetManifest::default()).unwrap();
    let set = TrainingSet::new(&ds, 8, AdvantageSource::LeaveOneOut).unwrap();
    for task in 0..ds.manifest.env.n_tasks {
        let total: f64 = set
            .task_ids
            .iter()
            .zip(&set.advantages)
            .filter(|(t, _)| **t == task)
            .map(|(_, a)| *a)
            .sum();
        assert!(total.abs() < 1e-9);
    }
}
