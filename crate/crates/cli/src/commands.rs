use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use arfm::alpha::{solve_alpha, AlphaConfig, AlphaStats};
use arfm::data::{generate, Dataset, QualityTier, TrainingSet};
use arfm::env::ACTION_DIM;
use arfm::eval::{continual_protocol, evaluate, EvalReport, Policy};
use arfm::oracles::{run_suite, CheckRecord};
use arfm::trainer::{Checkpoint, StepReport, TrainConfig, Trainer};
use serde::Serialize;

use crate::config::RunConfig;

fn prepare(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_lines(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    let mut text = String::from(header);
    text.push('\n');
    for row in rows {
        text.push_str(&row);
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn dataset(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.data {
        Some(path) => Dataset::load(path).with_context(|| format!("loading dataset {}", path.display())),
        None => {
            log::info!("no dataset given; generating one from the manifest");
            Ok(generate(&cfg.manifest)?)
        }
    }
}

fn train_on(set: &TrainingSet, train: &TrainConfig, alpha: &AlphaConfig) -> Result<(Trainer, Vec<StepReport>)> {
    let mut trainer = Trainer::from_shape(set.obs_dim(), ACTION_DIM, train.clone(), alpha.clone())?;
    let mut batches = set.batches(train.batch_size, train.seed);
    let reports = trainer.run(|| Ok(batches.next_batch()))?;
    Ok((trainer, reports))
}

fn mean_of<'a>(reports: impl Iterator<Item = &'a StepReport>, f: impl Fn(&StepReport) -> f64) -> f64 {
    let (sum, n) = reports.fold((0.0, 0usize), |(s, n), r| (s + f(r), n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn tail(reports: &[StepReport]) -> &[StepReport] {
    &reports[reports.len().saturating_sub(100)..]
}

#[derive(Serialize)]
struct TierRow {
    task_id: usize,
    tier: QualityTier,
    trajectories: usize,
    successes: usize,
    mean_return: f64,
    mean_final_distance: f64,
}

pub fn gen_data(cfg: &RunConfig) -> Result<()> {
    let dir = cfg.out_dir();
    prepare(dir)?;
    let ds = generate(&cfg.manifest)?;
    ds.save(&dir.join("dataset.jsonl"))?;

    let mut rows = Vec::new();
    for task in 0..cfg.manifest.env.n_tasks {
        for tier in QualityTier::ALL {
            let group: Vec<_> = ds.trajectories.iter().filter(|t| t.task_id == task && t.tier == tier).collect();
            let n = group.len().max(1) as f64;
            rows.push(TierRow {
                task_id: task,
                tier,
                trajectories: group.len(),
                successes: group.iter().filter(|t| t.success).count(),
                mean_return: group.iter().map(|t| t.rewards.iter().sum::<f64>()).sum::<f64>() / n,
                mean_final_distance: group.iter().map(|t| t.final_distance).sum::<f64>() / n,
            });
        }
    }
    write_rows(&dir.join("dataset_summary.csv"), &rows)?;
    cfg.write_resolved(dir)?;
    println!("wrote {} trajectories to {}", ds.trajectories.len(), dir.join("dataset.jsonl").display());
    Ok(())
}

#[derive(Serialize)]
struct ContinualRow {
    phase: usize,
    group: usize,
    tasks: String,
    success_rate: f64,
}

pub fn train(cfg: &RunConfig, continual: bool) -> Result<()> {
    let dir = cfg.out_dir();
    prepare(dir)?;
    let ds = dataset(cfg)?;
    if continual {
        let report = continual_protocol(&ds, &cfg.continual.phases, &cfg.train, &cfg.alpha, cfg.advantage, &cfg.eval)?;
        let names: Vec<String> = report
            .phases
            .iter()
            .map(|g| g.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" "))
            .collect();
        let mut rows = Vec::new();
        for (p, row) in report.sr_matrix.iter().enumerate() {
            for (g, sr) in row.iter().enumerate() {
                rows.push(ContinualRow {
                    phase: p,
                    group: g,
                    tasks: names[g].clone(),
                    success_rate: *sr,
                });
            }
        }
        write_rows(&dir.join("continual.csv"), &rows)?;
        write_lines(&dir.join("continual_summary.csv"), "phases,nbt", std::iter::once(format!("{},{}", report.phases.len(), report.nbt)))?;
        cfg.write_resolved(dir)?;
        println!("continual protocol over {} phases: NBT {:.4}", report.phases.len(), report.nbt);
        return Ok(());
    }

    let set = TrainingSet::new(&ds, cfg.train.horizon, cfg.advantage)?;
    log::info!("training {} for {} steps on {} chunks", cfg.train.mode.name(), cfg.train.steps, set.len());
    let (trainer, reports) = train_on(&set, &cfg.train, &cfg.alpha)?;
    write_lines(&dir.join("train_trace.csv"), StepReport::TRAIN_HEADER, reports.iter().map(|r| r.train_row()))?;
    write_lines(&dir.join("alpha_trace.csv"), StepReport::ALPHA_HEADER, reports.iter().map(|r| r.alpha_row()))?;
    let ckpt = Checkpoint::new(trainer.model(), set.action_norm.clone(), trainer.step_count(), cfg.train.clone(), cfg.alpha.clone());
    ckpt.save(&dir.join("checkpoint.json"))?;
    cfg.write_resolved(dir)?;

    let head = &reports[..reports.len().min(100)];
    println!(
        "{}: weighted loss {:.4} -> {:.4}, mean alpha {:.4}; checkpoint at {}",
        cfg.train.mode.name(),
        mean_of(head.iter(), |r| r.loss),
        mean_of(tail(&reports).iter(), |r| r.loss),
        mean_of(reports.iter(), |r| r.alpha),
        dir.join("checkpoint.json").display()
    );
    Ok(())
}

fn print_report(report: &EvalReport, levels: &[f64]) {
    if report.zero_episodes {
        println!("no episodes were run");
        return;
    }
    for &level in levels {
        let (sr, dist) = report.summary(level);
        println!("noise {level}: success rate {sr:.3}, mean goal distance {dist:.4}");
    }
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let Some(path) = &cfg.checkpoint else {
        bail!("eval needs a checkpoint (--checkpoint or `checkpoint` in the config)");
    };
    let dir = cfg.out_dir();
    prepare(dir)?;
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let policy = ckpt.policy()?;
    let env = &cfg.manifest.env;
    let tasks: Vec<usize> = (0..env.n_tasks).collect();
    let report = evaluate(&policy, env, &tasks, &cfg.eval)?;
    fs::write(dir.join("eval.csv"), report.csv())?;
    cfg.write_resolved(dir)?;
    print_report(&report, &cfg.eval.levels());
    Ok(())
}

#[derive(Serialize)]
struct AblationRow {
    parameter: &'static str,
    value: f64,
    success_rate: f64,
    mean_goal_distance: f64,
    final_loss: f64,
    mean_alpha: f64,
    /// Mean per-step `|alpha*(M) - alpha*(M_max)|` on this run's batch statistics.
    alpha_gap_to_max_m: Option<f64>,
}

pub fn ablate(cfg: &RunConfig) -> Result<()> {
    let dir = cfg.out_dir();
    prepare(dir)?;
    let ds = dataset(cfg)?;
    let set = TrainingSet::new(&ds, cfg.train.horizon, cfg.advantage)?;
    let env = &ds.manifest.env;
    let tasks: Vec<usize> = (0..env.n_tasks).collect();
    let level = cfg.eval.levels().first().copied().unwrap_or(0.0);
    let max_m = cfg.ablation.bisect_iters.iter().copied().max().unwrap_or(0);

    let mut rows = Vec::new();
    let mut run = |parameter: &'static str, value: f64, alpha: AlphaConfig| -> Result<()> {
        log::info!("ablation {parameter} = {value}");
        let (trainer, reports) = train_on(&set, &cfg.train, &alpha)?;
        let policy = Policy::new(trainer.into_model(), set.action_norm.clone(), cfg.train.horizon)?;
        let (sr, dist) = evaluate(&policy, env, &tasks, &cfg.eval)?.summary(level);
        let gap = (parameter == "bisect_iters").then(|| {
            let reference = AlphaConfig {
                bisect_iters: max_m,
                ..alpha.clone()
            };
            mean_of(reports.iter(), |r| {
                let stats = AlphaStats {
                    sigma_r: r.sigma_r,
                    mu_l: r.mu_l,
                    sigma_l: r.sigma_l,
                };
                (solve_alpha(&stats, &alpha).alpha - solve_alpha(&stats, &reference).alpha).abs()
            })
        });
        rows.push(AblationRow {
            parameter,
            value,
            success_rate: sr,
            mean_goal_distance: dist,
            final_loss: mean_of(tail(&reports).iter(), |r| r.loss),
            mean_alpha: mean_of(reports.iter(), |r| r.alpha),
            alpha_gap_to_max_m: gap,
        });
        Ok(())
    };
    for &lambda in &cfg.ablation.lambdas {
        run("lambda", lambda, AlphaConfig { lambda, ..cfg.alpha.clone() })?;
    }
    for &m in &cfg.ablation.bisect_iters {
        run("bisect_iters", m as f64, AlphaConfig { bisect_iters: m, ..cfg.alpha.clone() })?;
    }
    write_rows(&dir.join("ablation.csv"), &rows)?;
    cfg.write_resolved(dir)?;
    for r in &rows {
        println!(
            "{} {}: success rate {:.3}, final loss {:.4}, mean alpha {:.4}",
            r.parameter, r.value, r.success_rate, r.final_loss, r.mean_alpha
        );
    }
    Ok(())
}

/// Runs the oracle suite; `Ok(false)` when any check failed.
pub fn validate(cfg: &RunConfig) -> Result<bool> {
    let dir = cfg.out_dir();
    prepare(dir)?;
    let records = run_suite(&cfg.validate)?;
    write_lines(&dir.join("validation.csv"), CheckRecord::HEADER, records.iter().map(|r| r.csv_row()))?;
    cfg.write_resolved(dir)?;
    for r in &records {
        println!(
            "{} {}: empirical {:.6} analytic {:.6} tolerance {:.2e}",
            if r.passed { "pass" } else { "FAIL" },
            r.name,
            r.empirical,
            r.analytic,
            r.tolerance
        );
    }
    let failed = records.iter().filter(|r| !r.passed).count();
    println!("{} of {} checks passed", records.len() - failed, records.len());
    Ok(failed == 0)
}
