//! SVG figures drawn from the CSVs the other subcommands write.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use plotters::prelude::*;

type Series = (String, Vec<(f64, f64)>);

const PALETTE: [RGBColor; 5] = [BLUE, RED, GREEN, MAGENTA, CYAN];

/// Reads the named numeric columns, skipping non-finite cells.
fn columns(path: &Path, names: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let idx: Vec<usize> = names
        .iter()
        .map(|n| {
            headers
                .iter()
                .position(|h| h == *n)
                .ok_or_else(|| anyhow!("{} has no `{n}` column", path.display()))
        })
        .collect::<Result<_>>()?;
    let mut out = vec![Vec::new(); names.len()];
    for record in reader.records() {
        let record = record?;
        let row: Vec<f64> = idx.iter().map(|&i| record.get(i).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN)).collect();
        if row.iter().all(|v| v.is_finite()) {
            for (col, v) in out.iter_mut().zip(row) {
                col.push(v);
            }
        }
    }
    Ok(out)
}

/// Text column `name` paired with numeric columns `x` and `y`.
fn grouped(path: &Path, name: &str, x: &str, y: &str) -> Result<BTreeMap<String, Vec<(f64, f64)>>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |n: &str| headers.iter().position(|h| h == n).ok_or_else(|| anyhow!("{} has no `{n}` column", path.display()));
    let (g, xi, yi) = (find(name)?, find(x)?, find(y)?);
    let mut out: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let parse = |i: usize| record.get(i).and_then(|v| v.parse::<f64>().ok()).filter(|v| v.is_finite());
        if let (Some(key), Some(xv), Some(yv)) = (record.get(g), parse(xi), parse(yi)) {
            out.entry(key.to_string()).or_default().push((xv, yv));
        }
    }
    Ok(out)
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-9);
    (lo - pad, hi + pad)
}

fn line_chart(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<()> {
    let (x0, x1) = bounds(series.iter().flat_map(|(_, s)| s.iter().map(|p| p.0)));
    let (y0, y1) = bounds(series.iter().flat_map(|(_, s)| s.iter().map(|p| p.1)));
    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| anyhow!("{e}"))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(|e| anyhow!("{e}"))?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(y_label)
        .draw()
        .map_err(|e| anyhow!("{e}"))?;
    for (i, (name, points)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let drawn = chart
            .draw_series(LineSeries::new(points.iter().copied(), color.stroke_width(2)))
            .map_err(|e| anyhow!("{e}"))?;
        drawn
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
        if points.len() <= 50 {
            chart
                .draw_series(points.iter().map(|&p| Circle::new(p, 3, color.filled())))
                .map_err(|e| anyhow!("{e}"))?;
        }
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| anyhow!("{e}"))?;
    root.present().map_err(|e| anyhow!("{e}"))?;
    Ok(())
}

/// Moving average with a trailing window.
fn smooth(points: &[(f64, f64)], window: usize) -> Vec<(f64, f64)> {
    let mut sum = 0.0;
    points
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| {
            sum += y;
            if i >= window {
                sum -= points[i - window].1;
            }
            (x, sum / (i + 1).min(window) as f64)
        })
        .collect()
}

fn training_figures(dir: &Path, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join("train_trace.csv");
    if !path.exists() {
        return Ok(());
    }
    let c = columns(&path, &["step", "loss", "mean_loss", "alpha"])?;
    let pairs = |col: usize| -> Vec<(f64, f64)> { c[0].iter().copied().zip(c[col].iter().copied()).collect() };
    let window = (c[0].len() / 50).max(1);
    let loss = dir.join("loss.svg");
    line_chart(
        &loss,
        "Training loss",
        "step",
        "loss",
        &[
            ("weighted".into(), smooth(&pairs(1), window)),
            ("unweighted".into(), smooth(&pairs(2), window)),
        ],
    )?;
    written.push(loss);
    let alpha = dir.join("alpha.svg");
    line_chart(&alpha, "Temperature per step", "step", "alpha", &[("alpha".into(), pairs(3))])?;
    written.push(alpha);
    Ok(())
}

fn eval_figure(dir: &Path, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join("eval.csv");
    if !path.exists() {
        return Ok(());
    }
    let c = columns(&path, &["noise_level", "episodes", "successes"])?;
    let mut by_level: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
    for i in 0..c[0].len() {
        let e = by_level.entry(c[0][i].to_bits()).or_default();
        e.0 += c[2][i];
        e.1 += c[1][i];
    }
    let mut points: Vec<(f64, f64)> = by_level
        .into_iter()
        .filter(|(_, (_, n))| *n > 0.0)
        .map(|(bits, (s, n))| (f64::from_bits(bits), s / n))
        .collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let out = dir.join("eval.svg");
    line_chart(&out, "Success rate under action noise", "noise level", "success rate", &[("policy".into(), points)])?;
    written.push(out);
    Ok(())
}

fn ablation_figures(dir: &Path, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join("ablation.csv");
    if !path.exists() {
        return Ok(());
    }
    let sr = grouped(&path, "parameter", "value", "success_rate")?;
    let loss = grouped(&path, "parameter", "value", "final_loss")?;
    if let Some(points) = sr.get("lambda") {
        let log_sr: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.log10(), y)).collect();
        let log_loss: Vec<(f64, f64)> = loss["lambda"].iter().map(|&(x, y)| (x.log10(), y)).collect();
        let out = dir.join("ablation_lambda.svg");
        line_chart(&out, "Success rate against lambda", "log10 lambda", "success rate", &[("success rate".into(), log_sr)])?;
        written.push(out);
        let out = dir.join("ablation_lambda_loss.svg");
        line_chart(&out, "Final loss against lambda", "log10 lambda", "final loss", &[("final loss".into(), log_loss)])?;
        written.push(out);
    }
    let gap = grouped(&path, "parameter", "value", "alpha_gap_to_max_m")?;
    if let Some(points) = gap.get("bisect_iters") {
        let out = dir.join("ablation_bisect.svg");
        line_chart(&out, "Alpha gap to the finest bisection", "iterations", "mean |gap|", &[("gap".into(), points.clone())])?;
        written.push(out);
    }
    Ok(())
}

/// Draws every figure whose source CSV is present in `dir`.
pub fn plot_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    training_figures(dir, &mut written)?;
    eval_figure(dir, &mut written)?;
    ablation_figures(dir, &mut written)?;
    if written.is_empty() {
        bail!("no train_trace.csv, eval.csv or ablation.csv in {}", dir.display());
    }
    Ok(written)
}
