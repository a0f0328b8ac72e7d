use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = r#"
[manifest]
per_tier = [3, 3, 3]

[train]
steps = 60
batch_size = 16

[eval]
episodes_per_task = 2

[ablation]
lambdas = [10000.0]
bisect_iters = [10]

[validate]
mc_samples = 20000
gradient_draws = 5000
skip_tilt = true
"#;

fn arfm(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arfm"))
        .args(args)
        .current_dir(dir)
        .env_remove("ARFM_OUT")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> Output {
    let out = arfm(args, dir);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn workspace() -> TempDir {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    dir
}

fn read(path: PathBuf) -> String {
    fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let idx = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().parse().unwrap()).collect()
}

#[test]
fn gen_data_is_deterministic_and_creates_nested_dirs() {
    let w = workspace();
    let p = w.path();
    ok(&["--config", "small.toml", "--out", "a/b", "gen-data"], p);
    ok(&["--config", "small.toml", "--out", "c", "gen-data"], p);
    assert_eq!(read(p.join("a/b/dataset.jsonl")), read(p.join("c/dataset.jsonl")));
    assert!(read(p.join("a/b/dataset_summary.csv")).starts_with("task_id,tier,"));
    assert!(p.join("a/b/config.toml").exists());

    ok(&["--config", "small.toml", "--out", "d", "--seed", "9", "gen-data"], p);
    assert_ne!(read(p.join("a/b/dataset.jsonl")), read(p.join("d/dataset.jsonl")));
    assert!(read(p.join("d/config.toml")).contains("seed = 9"));
}

#[test]
fn vanilla_and_zero_alpha_traces_match() {
    let w = workspace();
    let p = w.path();
    ok(&["--config", "small.toml", "--out", "data", "gen-data"], p);
    for (mode, out) in [("vanilla_fm", "v"), ("fixed_alpha:0", "z")] {
        ok(&["--config", "small.toml", "--mode", mode, "--out", out, "train", "--data", "data/dataset.jsonl"], p);
    }
    let v = read(p.join("v/train_trace.csv"));
    let z = read(p.join("z/train_trace.csv"));
    assert_eq!(column(&v, "loss"), column(&z, "loss"));
}

#[test]
fn arfm_alpha_stays_in_range_and_reruns_bitwise() {
    let w = workspace();
    let p = w.path();
    ok(&["--config", "small.toml", "--out", "first", "train"], p);
    let alpha = column(&read(p.join("first/alpha_trace.csv")), "alpha");
    assert_eq!(alpha.len(), 60);
    assert!(alpha.iter().all(|a| (0.01..=5.0).contains(a)), "{alpha:?}");

    // The resolved config alone reproduces the run.
    ok(&["--config", "first/config.toml", "--out", "second", "train"], p);
    for name in ["train_trace.csv", "alpha_trace.csv", "checkpoint.json"] {
        assert_eq!(read(p.join("first").join(name)), read(p.join("second").join(name)), "{name}");
    }
}

#[test]
fn eval_writes_rows_and_rejects_mismatched_envs() {
    let w = workspace();
    let p = w.path();
    ok(&["--config", "small.toml", "--out", "run", "train"], p);
    ok(&["--config", "small.toml", "--out", "run", "eval", "--checkpoint", "run/checkpoint.json"], p);
    let csv = read(p.join("run/eval.csv"));
    assert!(csv.starts_with("noise_level,task_id,"));
    assert_eq!(csv.lines().count(), 1 + 4);
    assert!(column(&csv, "success_rate").iter().all(|s| (0.0..=1.0).contains(s)));

    fs::write(p.join("wide.toml"), format!("{SMALL}\n[manifest.env]\nn_tasks = 6\n")).unwrap();
    let out = arfm(&["--config", "wide.toml", "--out", "run", "eval", "--checkpoint", "run/checkpoint.json"], p);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimension"));

    let out = arfm(&["--config", "small.toml", "--out", "run", "eval"], p);
    assert!(!out.status.success());
}

#[test]
fn single_point_ablation_grid() {
    let w = workspace();
    let p = w.path();
    ok(&["--config", "small.toml", "--out", "abl", "ablate"], p);
    let csv = read(p.join("abl/ablation.csv"));
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("lambda,10000"));
    assert!(rows[1].starts_with("bisect_iters,10"));
    // A one-point M grid is its own reference.
    assert!(rows[1].ends_with(",0.0"));
}

#[test]
fn validate_reports_every_check_and_sets_the_exit_code() {
    let w = workspace();
    let p = w.path();
    let out = arfm(&["--config", "small.toml", "--out", "val", "validate", "--tolerance-scale", "0"], p);
    assert_eq!(out.status.code(), Some(2));
    let csv = read(p.join("val/validation.csv"));
    assert!(csv.starts_with("name,inputs,empirical,analytic,tolerance,passed"));
    assert!(csv.lines().count() > 10);
    assert!(csv.contains(",false"));

    let generous = arfm(&["--config", "small.toml", "--out", "val2", "validate", "--tolerance-scale", "1000"], p);
    assert_eq!(generous.status.code(), Some(0), "{}", String::from_utf8_lossy(&generous.stdout));
}

#[test]
fn plot_writes_svgs() {
    let w = workspace();
    let p = w.path();
    ok(&["--config", "small.toml", "--out", "run", "train"], p);
    ok(&["--out", "run", "plot"], p);
    for name in ["loss.svg", "alpha.svg"] {
        assert!(read(p.join("run").join(name)).contains("<svg"), "{name}");
    }
    assert!(!arfm(&["--out", "empty", "plot"], p).status.success());
}

#[test]
fn out_dir_comes_from_the_environment() {
    let w = workspace();
    let p = w.path();
    let out = Command::new(env!("CARGO_BIN_EXE_arfm"))
        .args(["--config", "small.toml", "gen-data"])
        .current_dir(p)
        .env("ARFM_OUT", "from_env")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(p.join("from_env/dataset.jsonl").exists());
}

#[test]
fn bad_input_is_an_error() {
    let w = workspace();
    let p = w.path();
    fs::write(p.join("typo.toml"), "[train]\nstepz = 3\n").unwrap();
    assert!(!arfm(&["--config", "typo.toml", "gen-data"], p).status.success());
    assert!(!arfm(&["--mode", "sideways", "gen-data"], p).status.success());
    assert!(!arfm(&["--out", "x", "train", "--data", "missing.jsonl"], p).status.success());
}
