//! Numerical oracles for the closed forms behind the trainer.
//!
//! Energy and advantage notation meet here: the energy is `E = -R` and the
//! tilt strength `beta` plays the role of `alpha`, so `exp(-beta E) = exp(alpha R)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::alpha::{objective_j, residual_f, solve_alpha, AlphaConfig, AlphaStats, SolveOutcome};
use crate::error::{Error, Result};
use crate::flow::{euler_sample, ActionChunk, Observation};
use crate::model::{Activation, FlowTerm, ModelShape, VectorFieldModel};
use crate::trainer::{ScheduleConfig, TrainConfig, TrainMode, TrainSample, Trainer};

/// Mean and standard error of a sample.
fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub alpha: f64,
    pub sigma_r: f64,
    pub sigma_l: f64,
    pub mu_l: f64,
    pub n: usize,
    pub m1: f64,
    pub m1_se: f64,
    pub m1_analytic: f64,
    pub m2: f64,
    pub m2_se: f64,
    pub m2_analytic: f64,
    pub score: f64,
    pub score_analytic: f64,
    /// Sample variance of `exp(alpha R) L`.
    pub weighted_loss_var: f64,
    pub weighted_loss_var_analytic: f64,
    /// `Var(exp(alpha R) L) - m1^2 Var(L)`: the variance the weighting adds
    /// on top of the unweighted estimator; equals the closed form
    /// `sigma_L^2 (exp(2 alpha^2 sigma_R^2) - exp(alpha^2 sigma_R^2))` when `mu_L = 0`.
    pub excess_var: f64,
    pub excess_var_analytic: f64,
}

impl MomentReport {
    pub fn rel_err(empirical: f64, analytic: f64) -> f64 {
        (empirical - analytic).abs() / analytic.abs()
    }
}

fn normals(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// `m1 = E exp(alpha R)` and `m2 = E exp(2 alpha R)` for `R ~ N(0, sigma_R^2)`.
pub fn mc_moments(alpha: f64, sigma_r: f64, n: usize, seed: u64) -> MomentReport {
    mc_score_and_variance(alpha, sigma_r, 1.0, 0.0, n, seed)
}

/// Moments, self-normalised score and weighted-loss variances with an
/// independent `L ~ N(mu_L, sigma_L^2)`.
pub fn mc_score_and_variance(alpha: f64, sigma_r: f64, sigma_l: f64, mu_l: f64, n: usize, seed: u64) -> MomentReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r: Vec<f64> = normals(n, &mut rng).into_iter().map(|z| sigma_r * z).collect();
    let l: Vec<f64> = normals(n, &mut rng).into_iter().map(|z| mu_l + sigma_l * z).collect();

    let w: Vec<f64> = r.iter().map(|x| (alpha * x).exp()).collect();
    let w2: Vec<f64> = w.iter().map(|x| x * x).collect();
    let (m1, m1_se) = mean_se(&w);
    let (m2, m2_se) = mean_se(&w2);
    let score = w.iter().zip(&r).map(|(w, r)| w * r).sum::<f64>() / w.iter().sum::<f64>();

    let wl: Vec<f64> = w.iter().zip(&l).map(|(w, l)| w * l).collect();
    let var = |xs: &[f64]| {
        let (m, _) = mean_se(xs);
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
    };
    let weighted_loss_var = var(&wl);
    let excess_var = weighted_loss_var - m1 * m1 * var(&l);

    let x = alpha * alpha * sigma_r * sigma_r;
    let m1_analytic = (x / 2.0).exp();
    let m2_analytic = (2.0 * x).exp();
    let second = sigma_l * sigma_l + mu_l * mu_l;
    MomentReport {
        alpha,
        sigma_r,
        sigma_l,
        mu_l,
        n,
        m1,
        m1_se,
        m1_analytic,
        m2,
        m2_se,
        m2_analytic,
        score,
        score_analytic: alpha * sigma_r * sigma_r,
        weighted_loss_var,
        weighted_loss_var_analytic: m2_analytic * second - m1_analytic * m1_analytic * mu_l * mu_l,
        excess_var,
        excess_var_analytic: (m2_analytic - m1_analytic * m1_analytic) * second,
    }
}

/// One-sided empirical CDF gap against a continuous reference CDF.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Base law `N(mean, variance)` tilted by `exp(-beta E)` with `E(x) = -x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TiltSpec {
    pub mean: f64,
    pub variance: f64,
    pub beta: f64,
}

impl TiltSpec {
    /// Mean and variance of the tilted law, which is again Gaussian.
    pub fn tilted(&self) -> (f64, f64) {
        (self.mean + self.beta * self.variance, self.variance)
    }

    /// Mass and mean of `p0(x) exp(beta x) / Z` by trapezoidal quadrature,
    /// with `Z = exp(beta mean + beta^2 variance / 2)` in closed form.
    pub fn quadrature(&self) -> (f64, f64) {
        let sd = self.variance.sqrt();
        let (tm, _) = self.tilted();
        let z = (self.beta * self.mean + 0.5 * self.beta * self.beta * self.variance).exp();
        let n = 20_000;
        let (lo, hi) = (tm - 12.0 * sd, tm + 12.0 * sd);
        let h = (hi - lo) / n as f64;
        let (mut mass, mut first) = (0.0, 0.0);
        for i in 0..=n {
            let x = lo + i as f64 * h;
            let p0 = (-(x - self.mean).powi(2) / (2.0 * self.variance)).exp()
                / (2.0 * std::f64::consts::PI * self.variance).sqrt();
            let q = p0 * (self.beta * x).exp() / z;
            let c = if i == 0 || i == n { 0.5 } else { 1.0 };
            mass += c * q * h;
            first += c * q * x * h;
        }
        (mass, first)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TiltOracleConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub peak_lr: f64,
    pub pool: usize,
    pub samples: usize,
    pub euler_steps: usize,
    pub seed: u64,
}

impl Default for TiltOracleConfig {
    fn default() -> Self {
        Self {
            steps: 4_000,
            batch_size: 256,
            hidden: 64,
            peak_lr: 3.0e-3,
            pool: 100_000,
            samples: 10_000,
            euler_steps: 50,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TiltReport {
    pub spec: TiltSpec,
    pub target_mean: f64,
    pub target_sd: f64,
    pub sample_mean: f64,
    pub sample_sd: f64,
    pub ks: f64,
    pub final_loss: f64,
}

/// Trains a 1-D flow on `x ~ p0` with advantage `R(x) = x` and fixed
/// `alpha = beta`, samples it and measures the KS distance to the tilted law.
pub fn tilt_sampling_check(spec: &TiltSpec, cfg: &TiltOracleConfig) -> Result<TiltReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sd = spec.variance.sqrt();
    let pool: Vec<f64> = normals(cfg.pool, &mut rng).into_iter().map(|z| spec.mean + sd * z).collect();

    let train = TrainConfig {
        steps: cfg.steps,
        batch_size: cfg.batch_size,
        horizon: 1,
        hidden: cfg.hidden,
        activation: Activation::Tanh,
        schedule: Some(ScheduleConfig {
            warmup_steps: cfg.steps / 20,
            decay_steps: cfg.steps,
            peak_lr: cfg.peak_lr,
            decay_lr: cfg.peak_lr / 20.0,
        }),
        mode: TrainMode::FixedAlpha(spec.beta),
        seed: cfg.seed,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::from_shape(0, 1, train, AlphaConfig::default())?;
    let reports = trainer.run(|| {
        Ok((0..cfg.batch_size)
            .map(|_| {
                let x = pool[rng.random_range(0..pool.len())];
                TrainSample {
                    obs: vec![],
                    chunk: vec![x],
                    advantage: x,
                }
            })
            .collect())
    })?;
    let tail = reports.len().saturating_sub(100);
    let final_loss = reports[tail..].iter().map(|r| r.loss).sum::<f64>() / (reports.len() - tail) as f64;
    let model = trainer.into_model();

    let obs = Observation(vec![]);
    let samples = (0..cfg.samples)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            let chunk = euler_sample(&model, &obs, &ActionChunk::new(vec![z], 1, 1)?, cfg.euler_steps)?;
            Ok(chunk.as_slice()[0])
        })
        .collect::<Result<Vec<f64>>>()?;

    let (tm, tv) = spec.tilted();
    let target = Normal::new(tm, tv.sqrt()).map_err(|e| Error::Domain(e.to_string()))?;
    let ks = ks_distance(&samples, |x| target.cdf(x));
    let (sample_mean, _) = mean_se(&samples);
    let sample_sd = (samples.iter().map(|x| (x - sample_mean).powi(2)).sum::<f64>() / samples.len() as f64).sqrt();
    Ok(TiltReport {
        spec: *spec,
        target_mean: tm,
        target_sd: tv.sqrt(),
        sample_mean,
        sample_sd,
        ks,
        final_loss,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientEquivalenceReport {
    pub beta: f64,
    pub draws: usize,
    pub cosine: f64,
    /// `|grad EFM| / |grad CEFM|`.
    pub norm_ratio: f64,
    /// Sample mean and standard error of `exp(-E_t(x))` over `x ~ p_t`.
    pub intermediate_mean: f64,
    pub intermediate_se: f64,
    /// `E_{x0 ~ p0} exp(-beta E(x0))`.
    pub partition: f64,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Compares the marginal (EFM) and conditional (CEFM) energy-weighted
/// flow-matching gradients on a discrete 1-D data law.
///
/// Both estimators share the same `(tau, x0, eps)` draws. The marginal one
/// needs `E_t(x) = -log E[exp(beta x0) | x_tau = x]` and the tilted marginal
/// field, which are exact sums over the support here.
pub fn gradient_equivalence_check(
    support: &[f64],
    probs: &[f64],
    beta: f64,
    draws: usize,
    model: &VectorFieldModel,
    seed: u64,
) -> Result<GradientEquivalenceReport> {
    if support.is_empty() || support.len() != probs.len() {
        return Err(Error::dim("discrete support probabilities", support.len(), probs.len()));
    }
    if model.shape().obs_dim != 0 || model.shape().output_dim() != 1 {
        return Err(Error::Config("the equivalence check needs a 1-D model without observations".into()));
    }
    let total: f64 = probs.iter().sum();
    let p: Vec<f64> = probs.iter().map(|q| q / total).collect();
    let partition: f64 = p.iter().zip(support).map(|(p, s)| p * (beta * s).exp()).sum();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cond = Vec::with_capacity(draws);
    let mut marg = Vec::with_capacity(draws);
    let mut w_cond = Vec::with_capacity(draws);
    let mut w_marg = Vec::with_capacity(draws);
    let mut intermediate = Vec::with_capacity(draws);
    let mut log_post = vec![0.0; support.len()];
    for _ in 0..draws {
        let tau: f64 = rng.random();
        let u: f64 = rng.random();
        let mut k = 0;
        let mut acc = p[0];
        while u > acc && k + 1 < p.len() {
            k += 1;
            acc += p[k];
        }
        let eps: f64 = rng.sample(StandardNormal);
        let x0 = support[k];
        let x = tau * x0 + (1.0 - tau) * eps;

        // Posterior over the support given x_tau = x.
        let s = 1.0 - tau;
        for (lp, (&sj, &pj)) in log_post.iter_mut().zip(support.iter().zip(&p)) {
            *lp = pj.ln() - (x - tau * sj).powi(2) / (2.0 * s * s);
        }
        let norm = log_sum_exp(&log_post);
        let post: Vec<f64> = log_post.iter().map(|lp| (lp - norm).exp()).collect();
        let tilt: f64 = post.iter().zip(support).map(|(q, sj)| q * (beta * sj).exp()).sum();
        let field: f64 = post
            .iter()
            .zip(support)
            .map(|(q, sj)| q * (beta * sj).exp() * (sj - x) / s)
            .sum::<f64>()
            / tilt;

        intermediate.push(tilt);
        cond.push(FlowTerm {
            obs: vec![],
            noisy: vec![x],
            tau,
            target: vec![x0 - eps],
        });
        w_cond.push((beta * x0).exp() / partition / draws as f64);
        marg.push(FlowTerm {
            obs: vec![],
            noisy: vec![x],
            tau,
            target: vec![field],
        });
        w_marg.push(tilt / partition / draws as f64);
    }
    let (_, g_cond) = model.loss_and_gradient(&cond, &w_cond)?;
    let (_, g_marg) = model.loss_and_gradient(&marg, &w_marg)?;
    let dot: f64 = g_cond.iter().zip(&g_marg).map(|(a, b)| a * b).sum();
    let na = g_cond.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb = g_marg.iter().map(|b| b * b).sum::<f64>().sqrt();
    let (intermediate_mean, intermediate_se) = mean_se(&intermediate);
    Ok(GradientEquivalenceReport {
        beta,
        draws,
        cosine: dot / (na * nb),
        norm_ratio: nb / na,
        intermediate_mean,
        intermediate_se,
        partition,
    })
}

/// Small random 1-D field used by the equivalence check.
pub fn tiny_model(hidden: usize, seed: u64) -> Result<VectorFieldModel> {
    let shape = ModelShape {
        obs_dim: 0,
        horizon: 1,
        action_dim: 1,
        hidden,
        activation: Activation::Tanh,
    };
    VectorFieldModel::new(shape, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Largest relative gap between central differences of `sum_i w_i L_i` and
/// the backpropagated gradient over the given coordinates.
pub fn finite_diff_check(
    model: &VectorFieldModel,
    terms: &[FlowTerm],
    weights: &[f64],
    coordinates: &[usize],
    h: f64,
) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::Domain(format!("finite-difference step {h} outside [1e-7, 1e-3]")));
    }
    let (_, grad) = model.loss_and_gradient(terms, weights)?;
    let objective = |params: Vec<f64>| -> Result<f64> {
        let probe = VectorFieldModel::from_params(model.shape().clone(), params)?;
        let losses = probe.losses(terms)?;
        Ok(losses.iter().zip(weights).map(|(l, w)| l * w).sum())
    };
    let mut worst: f64 = 0.0;
    for &k in coordinates {
        if k >= grad.len() {
            return Err(Error::Domain(format!("parameter index {k} out of range")));
        }
        let mut up = model.params().to_vec();
        up[k] += h;
        let mut down = model.params().to_vec();
        down[k] -= h;
        let fd = (objective(up)? - objective(down)?) / (2.0 * h);
        let err = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Random regression terms for gradient checks.
pub fn random_terms(shape: &ModelShape, n: usize, rng: &mut ChaCha8Rng) -> Vec<FlowTerm> {
    (0..n)
        .map(|_| FlowTerm {
            obs: normals(shape.obs_dim, rng),
            noisy: normals(shape.output_dim(), rng),
            tau: rng.random(),
            target: normals(shape.output_dim(), rng),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverAgreement {
    pub draws: usize,
    pub unclipped: usize,
    /// Largest `|alpha* - grid argmin|` in grid cells over unclipped draws.
    pub max_cells: f64,
    pub max_abs_residual: f64,
    pub bracket_exact: bool,
}

/// Checks the bisection against a dense grid argmin of `J` for random
/// `(sigma_R, sigma_L, lambda)` draws with `lambda sigma_R / sigma_L^2` in
/// `[1e-3, 1e2]`.
pub fn solver_grid_agreement(draws: usize, grid: usize, cfg: &AlphaConfig, seed: u64) -> Result<SolverAgreement> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cell = (cfg.alpha_max - cfg.alpha_min) / (grid - 1) as f64;
    let mut out = SolverAgreement {
        draws,
        unclipped: 0,
        max_cells: 0.0,
        max_abs_residual: 0.0,
        bracket_exact: true,
    };
    for _ in 0..draws {
        let sigma_r = 10f64.powf(rng.random_range(-1.0..0.5));
        let sigma_l = 10f64.powf(rng.random_range(-1.0..1.0));
        let c = 10f64.powf(rng.random_range(-3.0..2.0));
        let lambda = c * sigma_l * sigma_l / sigma_r;
        let stats = AlphaStats {
            sigma_r,
            mu_l: 0.0,
            sigma_l,
        };
        let cfg = &AlphaConfig {
            lambda,
            ..cfg.clone()
        };
        let sol = solve_alpha(&stats, cfg);
        let initial = sigma_r * sigma_r * cfg.alpha_max * cfg.alpha_max - sigma_r * sigma_r * cfg.alpha_min * cfg.alpha_min;
        if sol.outcome == SolveOutcome::Bisected && sol.bracket_width != initial / 2f64.powi(sol.iterations as i32) {
            out.bracket_exact = false;
        }
        if sol.outcome != SolveOutcome::Bisected || sol.clipped {
            continue;
        }
        out.unclipped += 1;
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..grid {
            let a = cfg.alpha_min + i as f64 * cell;
            let j = objective_j(a, sigma_r, sigma_l, lambda)?;
            if j < best.0 {
                best = (j, a);
            }
        }
        out.max_cells = out.max_cells.max((sol.alpha - best.1).abs() / cell);
        out.max_abs_residual = out
            .max_abs_residual
            .max(residual_f(sol.x, sigma_r, sigma_l, lambda)?.abs());
    }
    Ok(out)
}

/// One line of the validation CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    pub inputs: String,
    pub empirical: f64,
    pub analytic: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckRecord {
    pub const HEADER: &'static str = "name,inputs,empirical,analytic,tolerance,passed";

    /// Passes when `|empirical - analytic| <= max(tolerance, 3 se)`.
    pub fn mc(name: &str, inputs: String, empirical: f64, analytic: f64, tolerance: f64, se: f64) -> Self {
        let passed = (empirical - analytic).abs() <= tolerance.max(3.0 * se);
        Self {
            name: name.into(),
            inputs,
            empirical,
            analytic,
            tolerance,
            passed,
        }
    }

    /// Passes when `empirical <= bound`.
    pub fn at_most(name: &str, inputs: String, empirical: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            inputs,
            empirical,
            analytic: bound,
            tolerance: bound,
            passed: empirical <= bound,
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},\"{}\",{},{},{},{}",
            self.name, self.inputs, self.empirical, self.analytic, self.tolerance, self.passed
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub mc_samples: usize,
    pub gradient_draws: usize,
    /// Multiplies every tolerance; 0 forces failures.
    pub tolerance_scale: f64,
    pub tilt: TiltOracleConfig,
    /// Skip the two training-based tilt checks.
    pub skip_tilt: bool,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            mc_samples: 1_000_000,
            gradient_draws: 100_000,
            tolerance_scale: 1.0,
            tilt: TiltOracleConfig::default(),
            skip_tilt: false,
            seed: 2_024,
        }
    }
}

/// Runs every registered check.
pub fn run_suite(cfg: &SuiteConfig) -> Result<Vec<CheckRecord>> {
    let s = cfg.tolerance_scale;
    let n = cfg.mc_samples;
    let mut out = Vec::new();

    let r = mc_moments(1.0, 1.0, n, cfg.seed);
    let inputs = format!("alpha=1 sigma_r=1 n={n}");
    out.push(CheckRecord::mc("m1", inputs.clone(), r.m1, r.m1_analytic, s * 0.01 * r.m1_analytic, 0.0));
    out.push(CheckRecord::mc("m2", inputs, r.m2, r.m2_analytic, s * 0.02 * r.m2_analytic, 0.0));

    let r0 = mc_moments(0.0, 1.0, n, cfg.seed);
    out.push(CheckRecord::mc("m1_alpha0", "alpha=0".into(), r0.m1, 1.0, s * 0.0, 0.0));
    out.push(CheckRecord::mc("m2_alpha0", "alpha=0".into(), r0.m2, 1.0, s * 0.0, 0.0));

    let r = mc_score_and_variance(1.0, 1.0, 1.0, 0.0, n, cfg.seed + 1);
    let inputs = format!("alpha=1 sigma_r=1 sigma_l=1 n={n}");
    out.push(CheckRecord::mc("score", inputs.clone(), r.score, r.score_analytic, s * 0.02, 0.0));
    out.push(CheckRecord::mc(
        "excess_variance",
        inputs,
        r.excess_var,
        r.excess_var_analytic,
        s * 0.05 * r.excess_var_analytic,
        0.0,
    ));
    let r = mc_score_and_variance(0.0, 1.0, 1.0, 0.0, n, cfg.seed + 2);
    let inputs = format!("alpha=0 sigma_r=1 sigma_l=1 n={n}");
    out.push(CheckRecord::mc(
        "score_alpha0",
        inputs.clone(),
        r.score,
        0.0,
        s * 3.0 / (n as f64).sqrt(),
        0.0,
    ));
    out.push(CheckRecord::mc(
        "variance_alpha0",
        inputs,
        r.weighted_loss_var,
        1.0,
        s * 0.03,
        0.0,
    ));

    let acfg = AlphaConfig::default();
    let agreement = solver_grid_agreement(100, 10_000, &acfg, cfg.seed)?;
    out.push(CheckRecord::at_most(
        "solver_grid_cells",
        "draws=100 grid=1e4".into(),
        agreement.max_cells,
        s * 1.0,
    ));
    let deep = AlphaConfig {
        bisect_iters: 64,
        ..acfg.clone()
    };
    let deep_agreement = solver_grid_agreement(100, 10_000, &deep, cfg.seed)?;
    out.push(CheckRecord::at_most(
        "solver_residual",
        "draws=100 M=64".into(),
        deep_agreement.max_abs_residual,
        s * acfg.alpha_tol,
    ));
    out.push(CheckRecord::at_most(
        "solver_bracket_halving",
        "M=20".into(),
        if agreement.bracket_exact { 0.0 } else { 1.0 },
        s * 0.0,
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let shape = ModelShape {
        obs_dim: 3,
        horizon: 2,
        action_dim: 2,
        hidden: 16,
        activation: Activation::Tanh,
    };
    let model = VectorFieldModel::new(shape.clone(), &mut rng)?;
    let terms = random_terms(&shape, 8, &mut rng);
    let weights = crate::trainer::energy_weights(&normals(8, &mut rng), 1.0)?;
    let coords: Vec<usize> = (0..50).map(|_| rng.random_range(0..model.params().len())).collect();
    let err = finite_diff_check(&model, &terms, &weights, &coords, 1e-5)?;
    out.push(CheckRecord::at_most("finite_difference", "coords=50 h=1e-5".into(), err, s * 1e-4));
    let linear = VectorFieldModel::new(
        ModelShape {
            activation: Activation::Identity,
            ..shape
        },
        &mut rng,
    )?;
    let err = finite_diff_check(&linear, &terms, &weights, &coords, 1e-5)?;
    out.push(CheckRecord::at_most("finite_difference_linear", "coords=50 h=1e-5".into(), err, s * 1e-8));

    let tiny = tiny_model(16, cfg.seed)?;
    let support = [-1.0, 0.0, 1.0];
    let probs = [1.0, 1.0, 1.0];
    let g = gradient_equivalence_check(&support, &probs, 1.0, cfg.gradient_draws, &tiny, cfg.seed)?;
    let inputs = format!("beta=1 support=-1,0,1 n={}", cfg.gradient_draws);
    out.push(CheckRecord::mc("equivalence_cosine", inputs.clone(), g.cosine, 1.0, s * 0.01, 0.0));
    out.push(CheckRecord::mc("equivalence_norm_ratio", inputs.clone(), g.norm_ratio, 1.0, s * 0.1, 0.0));
    out.push(CheckRecord::mc(
        "intermediate_energy",
        inputs,
        g.intermediate_mean,
        g.partition,
        0.0,
        s * g.intermediate_se,
    ));

    let spec = TiltSpec {
        mean: 0.0,
        variance: 1.0,
        beta: 1.0,
    };
    let (mass, first) = spec.quadrature();
    out.push(CheckRecord::mc("tilt_mass", "beta=1".into(), mass, 1.0, s * 1e-9, 0.0));
    out.push(CheckRecord::mc("tilt_mean", "beta=1".into(), first, spec.tilted().0, s * 1e-9, 0.0));

    if !cfg.skip_tilt {
        for (beta, bound) in [(1.0, 0.05), (0.0, 0.03)] {
            let report = tilt_sampling_check(
                &TiltSpec {
                    mean: 0.0,
                    variance: 1.0,
                    beta,
                },
                &cfg.tilt,
            )?;
            out.push(CheckRecord::at_most(
                if beta == 0.0 { "tilt_ks_beta0" } else { "tilt_ks_beta1" },
                format!("beta={beta} samples={}", cfg.tilt.samples),
                report.ks,
                s * bound,
            ));
        }
    }
    Ok(out)
}
