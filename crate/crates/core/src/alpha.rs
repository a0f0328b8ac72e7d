//! Adaptive scaling factor for the energy weights.
//!
//! Under Gaussian models of the standardized advantage `R ~ N(0, sigma_R^2)`
//! and of the per-sample loss, the trade-off between gradient variance and
//! the weighted-advantage score is
//!
//! ```text
//! J(alpha) = sigma_L^2 (exp(2 alpha^2 sigma_R^2) - exp(alpha^2 sigma_R^2)) - lambda alpha sigma_R^2
//! ```
//!
//! and its stationary point solves `F(x) = 0` with `x = alpha^2 sigma_R^2`.
//! `F` is strictly increasing on `x > 0`, so a bisection on `x` finds it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest exponent accepted before `exp` overflows an `f64`.
const MAX_EXPONENT: f64 = 709.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlphaConfig {
    /// Weight of the advantage score against the gradient variance.
    pub lambda: f64,
    /// Maximum number of bisection iterations.
    pub bisect_iters: usize,
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Residual tolerance that ends the bisection early.
    pub alpha_tol: f64,
}

impl Default for AlphaConfig {
    fn default() -> Self {
        Self {
            lambda: 5.0e-4,
            bisect_iters: 20,
            alpha_min: 0.01,
            alpha_max: 5.0,
            alpha_tol: 1.0e-5,
        }
    }
}

impl AlphaConfig {
    /// Lambda for the synthetic benchmark. Per-sample losses there have a
    /// standard deviation near 20, so the reference lambda keeps alpha pinned
    /// at `alpha_min`; this value puts the optimum near alpha = 1.
    pub const DESK_LAMBDA: f64 = 1.0e4;

    /// Reference settings with [`Self::DESK_LAMBDA`].
    pub fn desk() -> Self {
        Self { lambda: Self::DESK_LAMBDA, ..Self::default() }
    }

    /// Checks ranges. A degenerate `[0, 0]` range is allowed: it pins alpha
    /// to 0 and turns the trainer into plain flow matching.
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda >= 0.0
            && self.lambda.is_finite()
            && self.alpha_min >= 0.0
            && self.alpha_max.is_finite()
            && self.alpha_min <= self.alpha_max
            && self.alpha_tol >= 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid alpha configuration: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaStats {
    /// Root mean square of the advantages.
    pub sigma_r: f64,
    /// Mean per-sample loss; logged only, the solver does not use it.
    pub mu_l: f64,
    /// Population standard deviation of the per-sample losses.
    pub sigma_l: f64,
}

impl AlphaStats {
    pub fn is_degenerate(&self) -> bool {
        self.sigma_r == 0.0 || self.sigma_l == 0.0
    }
}

/// Where the returned alpha came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveOutcome {
    /// Sign change inside the bracket, solved by bisection.
    Bisected,
    /// `F(x_low) >= 0`: the root lies at or below the bracket.
    BelowRange,
    /// `F(x_high) <= 0`: the root lies at or beyond the bracket.
    AboveRange,
    /// `sigma_R = 0` or `sigma_L = 0`; alpha falls back to `alpha_min`.
    Degenerate,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaSolution {
    /// Final scaling factor, always inside `[alpha_min, alpha_max]`.
    pub alpha: f64,
    /// `sqrt(x) / sigma_R` before clamping.
    pub alpha_unclipped: f64,
    /// Returned midpoint in `x = alpha^2 sigma_R^2` units.
    pub x: f64,
    /// Completed bracket halvings; fewer than `bisect_iters` after an early stop.
    pub iterations: usize,
    /// `F` at the returned midpoint (NaN when no residual was evaluated).
    pub residual: f64,
    /// The answer was pinned to an endpoint of `[alpha_min, alpha_max]`.
    pub clipped: bool,
    pub outcome: SolveOutcome,
    /// Width of the bisection bracket in `x` when the solver stopped.
    pub bracket_width: f64,
}

impl AlphaSolution {
    pub fn degenerate(&self) -> bool {
        self.outcome == SolveOutcome::Degenerate
    }
}

/// Advantage scale, loss mean and loss spread of one batch.
pub fn batch_stats(advantages: &[f64], per_sample_losses: &[f64]) -> Result<AlphaStats> {
    let b = advantages.len();
    if b < 2 {
        return Err(Error::Domain(format!("batch statistics need B >= 2, got {b}")));
    }
    crate::error::ensure_len("batch_stats losses", b, per_sample_losses.len())?;
    if advantages.iter().chain(per_sample_losses).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite advantage or loss in batch".into()));
    }
    let n = b as f64;
    let sigma_r = (advantages.iter().map(|r| r * r).sum::<f64>() / n).sqrt();
    let mu_l = per_sample_losses.iter().sum::<f64>() / n;
    let sigma_l = (per_sample_losses
        .iter()
        .map(|l| (l - mu_l).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(AlphaStats {
        sigma_r,
        mu_l,
        sigma_l,
    })
}

/// Closed-form trade-off objective `J(alpha)`.
pub fn objective_j(alpha: f64, sigma_r: f64, sigma_l: f64, lambda: f64) -> Result<f64> {
    if sigma_r < 0.0 || sigma_l < 0.0 {
        return Err(Error::Domain("sigma_R and sigma_L must be non-negative".into()));
    }
    let y = alpha * alpha * sigma_r * sigma_r;
    if 2.0 * y > MAX_EXPONENT {
        return Err(Error::Numeric(format!(
            "objective J overflows: exponent 2 alpha^2 sigma_R^2 = {}",
            2.0 * y
        )));
    }
    // exp(2y) - exp(y) = exp(y) * expm1(y), accurate for small y.
    Ok(sigma_l * sigma_l * y.exp() * y.exp_m1() - lambda * alpha * sigma_r * sigma_r)
}

/// Residual `F(x) = 4 sqrt(x) e^{2x} - 2 sqrt(x) e^x - lambda sigma_R / sigma_L^2`.
pub fn residual_f(x: f64, sigma_r: f64, sigma_l: f64, lambda: f64) -> Result<f64> {
    if x < 0.0 || x.is_nan() {
        return Err(Error::Domain(format!("residual F needs x >= 0, got {x}")));
    }
    if sigma_l == 0.0 {
        return Err(Error::Domain(
            "residual F is undefined for sigma_L = 0 (no loss variance to trade off)".into(),
        ));
    }
    Ok(residual_unchecked(x, lambda * sigma_r / (sigma_l * sigma_l)))
}

/// `F` with the constant term `c = lambda sigma_R / sigma_L^2` folded in.
/// Factored so that overflow yields `+inf`, never `inf - inf`.
fn residual_unchecked(x: f64, c: f64) -> f64 {
    let root = x.sqrt();
    2.0 * root * x.exp() * (2.0 * x.exp() - 1.0) - c
}

/// Clipped bisection for the scaling factor.
///
/// The bracket `[sigma_R^2 alpha_min^2, sigma_R^2 alpha_max^2]` is tracked as
/// dyadic fractions of its initial width, so after `i` halvings the width is
/// exactly `initial / 2^i` (for `i` up to the 52 bits an `f64` fraction holds).
/// A root outside the bracket returns the nearer endpoint directly.
pub fn solve_alpha(stats: &AlphaStats, cfg: &AlphaConfig) -> AlphaSolution {
    let clamp = |a: f64| a.clamp(cfg.alpha_min, cfg.alpha_max);
    if stats.is_degenerate() || !stats.sigma_r.is_finite() || !stats.sigma_l.is_finite() {
        return AlphaSolution {
            alpha: cfg.alpha_min,
            alpha_unclipped: cfg.alpha_min,
            x: 0.0,
            iterations: 0,
            residual: f64::NAN,
            clipped: false,
            outcome: SolveOutcome::Degenerate,
            bracket_width: 0.0,
        };
    }

    let sigma_r = stats.sigma_r;
    let c = cfg.lambda * sigma_r / (stats.sigma_l * stats.sigma_l);
    let x_low = sigma_r * sigma_r * cfg.alpha_min * cfg.alpha_min;
    let x_high = sigma_r * sigma_r * cfg.alpha_max * cfg.alpha_max;
    let span = x_high - x_low;
    let at = |t: f64| x_low + span * t;

    let f_low = residual_unchecked(x_low, c);
    let f_high = residual_unchecked(x_high, c);
    let endpoint = |alpha: f64, x: f64, residual: f64, outcome| AlphaSolution {
        alpha,
        alpha_unclipped: alpha,
        x,
        iterations: 0,
        residual,
        clipped: true,
        outcome,
        bracket_width: span,
    };
    // A collapsed bracket has both endpoints equal; fall through to the
    // bisection so the returned midpoint is the single admissible point.
    if span > 0.0 {
        if f_low >= 0.0 {
            return endpoint(cfg.alpha_min, x_low, f_low, SolveOutcome::BelowRange);
        }
        if f_high <= 0.0 {
            return endpoint(cfg.alpha_max, x_high, f_high, SolveOutcome::AboveRange);
        }
    }

    let (mut t_low, mut t_high) = (0.0f64, 1.0f64);
    let mut iterations = 0;
    for _ in 0..cfg.bisect_iters {
        let t_mid = 0.5 * (t_low + t_high);
        if t_mid == t_low || t_mid == t_high {
            break;
        }
        let f_mid = residual_unchecked(at(t_mid), c);
        if f_mid.abs() < cfg.alpha_tol {
            // The bracket is left as is; its midpoint is t_mid.
            break;
        }
        iterations += 1;
        if f_mid > 0.0 {
            t_high = t_mid;
        } else {
            t_low = t_mid;
        }
    }

    let x = at(0.5 * (t_low + t_high));
    let alpha_unclipped = x.sqrt() / sigma_r;
    let alpha = clamp(alpha_unclipped);
    AlphaSolution {
        alpha,
        alpha_unclipped,
        x,
        iterations,
        residual: residual_unchecked(x, c),
        clipped: alpha != alpha_unclipped,
        outcome: SolveOutcome::Bisected,
        bracket_width: span * (t_high - t_low),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_stats() -> AlphaStats {
        AlphaStats {
            sigma_r: 1.0,
            mu_l: 0.0,
            sigma_l: 1.0,
        }
    }

    #[test]
    fn batch_stats_examples() {
        let s = batch_stats(&[1.0, -1.0], &[2.0, 2.0]).unwrap();
        assert_eq!((s.sigma_r, s.mu_l, s.sigma_l), (1.0, 2.0, 0.0));

        let s = batch_stats(&[0.0, 0.0], &[5.0, 1.0]).unwrap();
        assert_eq!(s.sigma_r, 0.0);
        assert!(s.is_degenerate());

        let s = batch_stats(&[3.0, -4.0], &[0.0, 2.0]).unwrap();
        assert!((s.sigma_r - 12.5f64.sqrt()).abs() < 1e-15);
        assert!((s.sigma_r - 3.5355).abs() < 1e-4);
        assert_eq!((s.mu_l, s.sigma_l), (1.0, 1.0));

        assert!(batch_stats(&[1.0], &[1.0]).is_err());
        assert!(batch_stats(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn objective_examples() {
        for (sr, sl, l) in [(1.0, 1.0, 1.0), (3.0, 0.2, 7.0), (0.0, 2.0, 0.5)] {
            assert_eq!(objective_j(0.0, sr, sl, l).unwrap(), 0.0);
        }
        let j = objective_j(0.349, 1.0, 1.0, 1.0).unwrap();
        assert!((j - (-0.2027)).abs() < 1e-4, "{j}");
        for a in [0.01, 0.5, 2.0] {
            assert!(objective_j(a, 1.3, 0.7, 0.0).unwrap() > 0.0);
        }
        assert!(matches!(objective_j(50.0, 10.0, 1.0, 1.0), Err(Error::Numeric(_))));
    }

    #[test]
    fn residual_examples() {
        assert_eq!(residual_f(0.0, 2.0, 0.5, 3.0).unwrap(), -3.0 * 2.0 / 0.25);
        assert!(residual_f(0.122, 1.0, 1.0, 1.0).unwrap().abs() < 0.02);
        for x in [1e-6f64, 0.3, 2.0] {
            let expect = 2.0 * x.sqrt() * x.exp() * (2.0 * x.exp() - 1.0);
            let got = residual_f(x, 1.0, 1.0, 0.0).unwrap();
            assert!(got > 0.0 && (got - expect).abs() <= 1e-12 * expect);
        }
        assert!(residual_f(0.1, 1.0, 0.0, 1.0).is_err());
        assert!(residual_f(-0.1, 1.0, 1.0, 1.0).is_err());
        assert_eq!(residual_f(800.0, 1.0, 1.0, 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn solve_unit_case_matches_grid_scan() {
        // Frozen from a 2.5M-point scan of |F| over x in [1e-4, 25]:
        // root x = 0.12287, alpha = 0.35053.
        let cfg = AlphaConfig {
            lambda: 1.0,
            ..AlphaConfig::default()
        };
        let sol = solve_alpha(&unit_stats(), &cfg);
        assert_eq!(sol.outcome, SolveOutcome::Bisected);
        assert!((sol.alpha - 0.35053).abs() < 1e-3, "{sol:?}");
        assert!((sol.alpha - 0.349).abs() < 2e-3);
        assert!(!sol.clipped);
        assert!(sol.iterations <= cfg.bisect_iters);
    }

    #[test]
    fn zero_lambda_pins_alpha_min() {
        let cfg = AlphaConfig {
            lambda: 0.0,
            ..AlphaConfig::default()
        };
        let sol = solve_alpha(&unit_stats(), &cfg);
        assert_eq!(sol.alpha, 0.01);
        assert!(sol.clipped);
        assert_eq!(sol.outcome, SolveOutcome::BelowRange);
    }

    #[test]
    fn huge_lambda_pins_alpha_max() {
        // F(25) = 20 e^50 - 10 e^25 is about 1.0e23, so lambda = 1e6 still has
        // its root inside the bracket.
        let cfg = AlphaConfig {
            lambda: 1e6,
            ..AlphaConfig::default()
        };
        let sol = solve_alpha(&unit_stats(), &cfg);
        assert_eq!(sol.outcome, SolveOutcome::Bisected);
        assert!((sol.alpha - 2.4035).abs() < 1e-3, "{}", sol.alpha);

        let cfg = AlphaConfig {
            lambda: 1e24,
            ..AlphaConfig::default()
        };
        let sol = solve_alpha(&unit_stats(), &cfg);
        assert_eq!(sol.alpha, 5.0);
        assert!(sol.clipped);
        assert_eq!(sol.outcome, SolveOutcome::AboveRange);
    }

    #[test]
    fn degenerate_batches_fall_back_to_alpha_min() {
        let cfg = AlphaConfig::default();
        for stats in [
            AlphaStats { sigma_r: 0.0, mu_l: 1.0, sigma_l: 1.0 },
            AlphaStats { sigma_r: 1.0, mu_l: 1.0, sigma_l: 0.0 },
        ] {
            let sol = solve_alpha(&stats, &cfg);
            assert_eq!(sol.alpha, cfg.alpha_min);
            assert!(sol.degenerate());
            assert_eq!(sol.iterations, 0);
        }
    }

    #[test]
    fn collapsed_range_returns_its_only_point() {
        let cfg = AlphaConfig {
            alpha_min: 0.0,
            alpha_max: 0.0,
            ..AlphaConfig::default()
        };
        assert!(cfg.validate().is_ok());
        let sol = solve_alpha(&unit_stats(), &cfg);
        assert_eq!(sol.alpha, 0.0);
    }

    #[test]
    fn bracket_halves_exactly() {
        let stats = AlphaStats { sigma_r: 1.7, mu_l: 0.0, sigma_l: 0.3 };
        let base = AlphaConfig {
            lambda: 0.5,
            alpha_tol: 0.0,
            ..AlphaConfig::default()
        };
        let s = stats.sigma_r;
        let initial = s * s * base.alpha_max * base.alpha_max - s * s * base.alpha_min * base.alpha_min;
        for m in [0, 1, 5, 20, 40] {
            let sol = solve_alpha(&stats, &AlphaConfig { bisect_iters: m, ..base.clone() });
            assert_eq!(sol.iterations, m);
            assert_eq!(sol.bracket_width, initial / 2f64.powi(m as i32));
        }
    }

    #[test]
    fn endpoint_choice_follows_the_true_root() {
        // Root below the bracket: alpha_min; root above it: alpha_max.
        let stats = AlphaStats { sigma_r: 1.0, mu_l: 0.0, sigma_l: 1.0 };
        let narrow = AlphaConfig {
            lambda: 1.0,
            alpha_min: 1.0,
            alpha_max: 2.0,
            ..AlphaConfig::default()
        };
        assert_eq!(solve_alpha(&stats, &narrow).alpha, 1.0);
        let narrow = AlphaConfig {
            alpha_min: 0.05,
            alpha_max: 0.1,
            ..narrow
        };
        assert_eq!(solve_alpha(&stats, &narrow).alpha, 0.1);
    }

    #[test]
    fn validate_rejects_inverted_range() {
        let cfg = AlphaConfig {
            alpha_min: 2.0,
            alpha_max: 1.0,
            ..AlphaConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(AlphaConfig { lambda: -1.0, ..AlphaConfig::default() }.validate().is_err());
    }

    fn precise() -> AlphaConfig {
        AlphaConfig {
            bisect_iters: 200,
            alpha_tol: 0.0,
            alpha_min: 1e-4,
            alpha_max: 5.0,
            ..AlphaConfig::default()
        }
    }

    proptest! {
        #[test]
        fn residual_is_strictly_increasing(
            sr in 0.1f64..5.0, sl in 0.05f64..5.0, lambda in 0.0f64..10.0,
        ) {
            let xs: Vec<f64> = (1..=400).map(|i| i as f64 * 0.01).collect();
            let fs: Vec<f64> = xs.iter().map(|&x| residual_f(x, sr, sl, lambda).unwrap()).collect();
            for w in fs.windows(2) {
                prop_assert!(w[1] > w[0]);
            }
        }

        #[test]
        fn scale_law_for_sigma_r(
            sr in 0.2f64..2.0, sl in 0.1f64..3.0, log_c in -2.0f64..1.5,
        ) {
            let c = 10f64.powf(log_c);
            let lambda = c * sl * sl / sr;
            let a = solve_alpha(
                &AlphaStats { sigma_r: sr, mu_l: 0.0, sigma_l: sl },
                &AlphaConfig { lambda, ..precise() },
            );
            // Doubling sigma_R with lambda halved keeps lambda sigma_R / sigma_L^2 fixed.
            let b = solve_alpha(
                &AlphaStats { sigma_r: 2.0 * sr, mu_l: 0.0, sigma_l: sl },
                &AlphaConfig { lambda: lambda / 2.0, ..precise() },
            );
            prop_assume!(a.outcome == SolveOutcome::Bisected && b.outcome == SolveOutcome::Bisected);
            let rel = (b.alpha_unclipped - a.alpha_unclipped / 2.0).abs() / (a.alpha_unclipped / 2.0);
            prop_assert!(rel <= 1e-9, "rel {rel}");
        }

        #[test]
        fn stationary_point_of_j(
            sr in 0.2f64..3.0, sl in 0.1f64..3.0, log_c in -1.0f64..2.0,
        ) {
            let lambda = 10f64.powf(log_c) * sl * sl / sr;
            let sol = solve_alpha(
                &AlphaStats { sigma_r: sr, mu_l: 0.0, sigma_l: sl },
                &AlphaConfig { lambda, ..precise() },
            );
            prop_assume!(sol.outcome == SolveOutcome::Bisected);
            let a = sol.alpha_unclipped;
            let h = 1e-6;
            let j = |x| objective_j(x, sr, sl, lambda).unwrap();
            let slope = (j(a + h) - j(a - h)) / (2.0 * h);
            prop_assert!(slope.abs() <= 1e-4 * (1.0 + j(a).abs()), "slope {slope}");
        }
    }
}
