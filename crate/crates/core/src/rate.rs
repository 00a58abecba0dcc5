//! Monte-Carlo estimation of plug-in convergence rates.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GwError, Result};
use crate::gw::{compute_gw, SolverConfig};
use crate::measure::{derive_seed, rng_from_seed, sample, DiscreteMeasure, DistributionSpec};
use crate::numeric::{ols_fit, rel_err, spearman};
use crate::poly::{expand_kernel, marginal_value};

/// How the population value is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// Two-point law against a point mass; value `2p(1-p)R^{4kr}`.
    ClosedForm,
    /// Identical laws; value 0.
    SelfZero,
    /// Average over 16 seeds at 8x the largest sample size.
    HighNEstimate,
}

impl fmt::Display for Reference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reference::ClosedForm => "closed_form",
            Reference::SelfZero => "self_zero",
            Reference::HighNEstimate => "high_n_estimate",
        })
    }
}

impl FromStr for Reference {
    type Err = GwError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().replace('-', "_").as_str() {
            "closed_form" => Ok(Reference::ClosedForm),
            "self_zero" => Ok(Reference::SelfZero),
            "high_n_estimate" => Ok(Reference::HighNEstimate),
            _ => Err(GwError::Parse(format!("unknown reference mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateExperiment {
    pub r: u32,
    pub k: u32,
    pub dist_x: DistributionSpec,
    pub dist_y: DistributionSpec,
    pub n_grid: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub reference: Reference,
    pub solver: SolverConfig,
    /// Run trials on the rayon pool. Results do not depend on this flag.
    pub parallel: bool,
}

impl RateExperiment {
    pub fn d_x(&self) -> usize {
        self.dist_x.dim()
    }

    pub fn d_y(&self) -> usize {
        self.dist_y.dim()
    }

    /// `d_* = min(d_x, d_y)`.
    pub fn d_star(&self) -> usize {
        self.d_x().min(self.d_y())
    }

    pub fn validate(&self) -> Result<()> {
        if self.r == 0 || self.k == 0 {
            return Err(GwError::param("r, k", "must be at least 1"));
        }
        validate_grid(&self.n_grid, self.trials)?;
        self.dist_x.validate()?;
        self.dist_y.validate()?;
        self.solver.validate()
    }
}

fn validate_grid(n_grid: &[usize], trials: usize) -> Result<()> {
    if n_grid.len() < 2 {
        return Err(GwError::param("n_grid", "needs at least two sample sizes"));
    }
    if n_grid[0] == 0 || n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(GwError::param(
            "n_grid",
            "must be positive and strictly increasing",
        ));
    }
    if trials == 0 {
        return Err(GwError::param("trials", "must be at least 1"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateResult {
    pub n_grid: Vec<usize>,
    pub per_n_errors: Vec<Vec<f64>>,
    pub mean_errors: Vec<f64>,
    /// `None` when fewer than two mean errors are positive.
    pub fitted_slope: Option<f64>,
    pub predicted_slope: f64,
    pub slope_ci_halfwidth: Option<f64>,
    pub spearman: Option<f64>,
    pub reference_value: f64,
    pub reference_is_estimate: bool,
    /// Pipeline cross-checks performed and the largest relative disagreement seen.
    pub cross_checks: usize,
    pub cross_check_max_rel: f64,
    pub notes: Vec<String>,
}

impl RateResult {
    /// CSV with columns `n,trial,error`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,trial,error\n");
        for (n, errs) in self.n_grid.iter().zip(&self.per_n_errors) {
            for (t, e) in errs.iter().enumerate() {
                s.push_str(&format!("{n},{t},{e:e}\n"));
            }
        }
        s
    }
}

/// `rho_n(d) = n^{-2/max(d,4)} (log(e n))^{1{d=4}}`.
pub fn rho_n(n: usize, d: usize) -> f64 {
    let n = n as f64;
    let base = n.powf(-2.0 / d.max(4) as f64);
    if d == 4 {
        base * (1.0 + n.ln())
    } else {
        base
    }
}

/// `-2 / max(d, 4)`.
pub fn predicted_slope(d_star: usize) -> f64 {
    -2.0 / d_star.max(4) as f64
}

/// `g(t) = 2t(1-t)`.
pub fn g(t: f64) -> f64 {
    2.0 * t * (1.0 - t)
}

/// `2p(1-p)R^{4kr}`.
pub fn lower_bound_exact(p: f64, radius: f64, r: u32, k: u32) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(GwError::param("p", format!("{p} not in (0, 1)")));
    }
    if !(radius > 0.0) {
        return Err(GwError::param("R", format!("{radius} must be positive")));
    }
    if r == 0 || k == 0 {
        return Err(GwError::param("r, k", "must be at least 1"));
    }
    Ok(g(p) * radius.powi((4 * k * r) as i32))
}

/// Trial error for a two-point sample with `count` atoms at `R e_1` out of `n`.
pub fn two_point_error(count: u64, n: usize, p: f64, radius: f64, r: u32, k: u32) -> f64 {
    let phat = count as f64 / n as f64;
    (g(phat) - g(p)).abs() * radius.powi((4 * k * r) as i32)
}

/// Empirical two-point measure with `count` of `n` atoms at `R e_1`.
pub fn two_point_empirical(
    count: usize,
    n: usize,
    radius: f64,
    dim: usize,
) -> Result<DiscreteMeasure> {
    let mut far = vec![0.0; dim];
    far[0] = radius;
    let points = (0..n)
        .map(|i| {
            if i < count {
                far.clone()
            } else {
                vec![0.0; dim]
            }
        })
        .collect();
    DiscreteMeasure::empirical(points)
}

fn fit(n_grid: &[usize], means: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = n_grid
        .iter()
        .zip(means)
        .filter(|(_, m)| **m > 0.0)
        .map(|(n, m)| ((*n as f64).ln(), m.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let (slope, _) = ols_fit(&x, &y);
    slope.is_finite().then_some(slope)
}

fn mean(v: &[f64]) -> f64 {
    // Fixed left-to-right order keeps the reduction deterministic.
    v.iter().sum::<f64>() / v.len() as f64
}

/// Half-width of a 95% percentile bootstrap interval for the slope,
/// resampling trials within each `n`.
fn bootstrap_halfwidth(n_grid: &[usize], errors: &[Vec<f64>], seed: u64) -> Option<f64> {
    use rand::Rng;
    const RESAMPLES: usize = 400;
    let mut rng = rng_from_seed(derive_seed(seed, &[0xB0_07]));
    let mut slopes = Vec::with_capacity(RESAMPLES);
    for _ in 0..RESAMPLES {
        let means: Vec<f64> = errors
            .iter()
            .map(|e| {
                let draw: Vec<f64> = (0..e.len()).map(|_| e[rng.gen_range(0..e.len())]).collect();
                mean(&draw)
            })
            .collect();
        if let Some(s) = fit(n_grid, &means) {
            slopes.push(s);
        }
    }
    if slopes.len() < RESAMPLES / 2 {
        return None;
    }
    slopes.sort_by(|a, b| a.total_cmp(b));
    let q = |f: f64| slopes[((slopes.len() - 1) as f64 * f).round() as usize];
    Some((q(0.975) - q(0.025)) / 2.0)
}

fn summarize(
    n_grid: &[usize],
    per_n_errors: Vec<Vec<f64>>,
    predicted: f64,
    reference_value: f64,
    reference_is_estimate: bool,
    seed: u64,
) -> RateResult {
    let mean_errors: Vec<f64> = per_n_errors.iter().map(|e| mean(e)).collect();
    let fitted_slope = fit(n_grid, &mean_errors);
    let slope_ci_halfwidth =
        fitted_slope.and_then(|_| bootstrap_halfwidth(n_grid, &per_n_errors, seed));
    let ns: Vec<f64> = n_grid.iter().map(|n| *n as f64).collect();
    let mut notes = Vec::new();
    if fitted_slope.is_none() {
        notes.push("slope undefined: fewer than two positive mean errors".to_string());
    }
    RateResult {
        n_grid: n_grid.to_vec(),
        spearman: spearman(&ns, &mean_errors),
        per_n_errors,
        mean_errors,
        fitted_slope,
        predicted_slope: predicted,
        slope_ci_halfwidth,
        reference_value,
        reference_is_estimate,
        cross_checks: 0,
        cross_check_max_rel: 0.0,
        notes,
    }
}

/// Runs `f(n, trial)` for every grid point and trial, in parallel when asked,
/// and returns errors grouped by `n` in trial order.
fn run_trials<F>(n_grid: &[usize], trials: usize, parallel: bool, f: F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(usize, usize) -> Result<f64> + Sync + Send,
{
    let jobs: Vec<(usize, usize)> = n_grid
        .iter()
        .flat_map(|&n| (0..trials).map(move |t| (n, t)))
        .collect();
    let wrap = |&(n, t): &(usize, usize)| {
        f(n, t).map_err(|e| GwError::Trial {
            n,
            trial: t,
            source: Box::new(e),
        })
    };
    let flat: Vec<f64> = if parallel {
        jobs.par_iter().map(wrap).collect::<Result<_>>()?
    } else {
        jobs.iter().map(wrap).collect::<Result<_>>()?
    };
    Ok(flat.chunks(trials).map(<[f64]>::to_vec).collect())
}

/// Independent seeds for the two samples of a trial.
pub fn trial_seeds(seed: u64, n: usize, trial: usize) -> (u64, u64) {
    (
        derive_seed(seed, &[n as u64, trial as u64, 0]),
        derive_seed(seed, &[n as u64, trial as u64, 1]),
    )
}

fn resolve_reference(exp: &RateExperiment) -> Result<(f64, bool)> {
    match exp.reference {
        Reference::ClosedForm => {
            let value = match (&exp.dist_x, &exp.dist_y) {
                (
                    DistributionSpec::TwoPoint { r: radius, p, .. },
                    DistributionSpec::PointMass { .. },
                )
                | (
                    DistributionSpec::PointMass { .. },
                    DistributionSpec::TwoPoint { r: radius, p, .. },
                ) => {
                    if *p == 0.0 || *p == 1.0 || *radius == 0.0 {
                        0.0
                    } else {
                        lower_bound_exact(*p, *radius, exp.r, exp.k)?
                    }
                }
                _ => {
                    return Err(GwError::UnresolvableReference(
                        "closed_form needs a two-point law against a point mass".into(),
                    ))
                }
            };
            Ok((value, false))
        }
        Reference::SelfZero => {
            if exp.dist_x != exp.dist_y {
                return Err(GwError::UnresolvableReference(
                    "self_zero needs identical laws on the same dimension".into(),
                ));
            }
            Ok((0.0, false))
        }
        Reference::HighNEstimate => {
            let n_ref = 8 * exp.n_grid.last().copied().unwrap_or(1);
            let mut vals = Vec::with_capacity(16);
            for s in 0..16u64 {
                let mu = sample(&exp.dist_x, n_ref, derive_seed(exp.seed, &[0xFEF, s, 0]))?;
                let nu = sample(&exp.dist_y, n_ref, derive_seed(exp.seed, &[0xFEF, s, 1]))?;
                vals.push(compute_gw(&mu, &nu, exp.r, exp.k, &exp.solver)?.value);
            }
            Ok((mean(&vals), true))
        }
    }
}

/// Plug-in errors `|D(mu, nu) - D(mu_n, nu_n)|` over the grid, with a
/// log-log slope fit.
pub fn run_rate_experiment(exp: &RateExperiment) -> Result<RateResult> {
    exp.validate()?;
    let (reference, estimate) = resolve_reference(exp)?;
    let errors = run_trials(&exp.n_grid, exp.trials, exp.parallel, |n, t| {
        let (sx, sy) = trial_seeds(exp.seed, n, t);
        let mu = sample(&exp.dist_x, n, sx)?;
        let nu = sample(&exp.dist_y, n, sy)?;
        let v = compute_gw(&mu, &nu, exp.r, exp.k, &exp.solver)?.value;
        Ok((v - reference).abs())
    })?;
    let mut res = summarize(
        &exp.n_grid,
        errors,
        predicted_slope(exp.d_star()),
        reference,
        estimate,
        exp.seed,
    );
    if estimate {
        res.notes.push(format!(
            "reference estimated at n = {} over 16 seeds",
            8 * exp.n_grid.last().copied().unwrap_or(1)
        ));
    }
    let d = exp.d_star();
    if d > 4 {
        let lo = -2.0 / d as f64 - 0.2;
        res.notes.push(format!(
            "diagnostic only: d_* = {d} > 4, theoretical slope {:.3}, reported window [{lo:.3}, 0]",
            predicted_slope(d)
        ));
    }
    Ok(res)
}

/// Errors of the marginal part alone, `|M(mu, nu) - M(mu_n, nu_n)|`, against
/// exact population moments.
pub fn marginal_rate_experiment(
    r: u32,
    k: u32,
    dist_x: &DistributionSpec,
    dist_y: &DistributionSpec,
    n_grid: &[usize],
    trials: usize,
    seed: u64,
) -> Result<RateResult> {
    validate_grid(n_grid, trials)?;
    dist_x.validate()?;
    dist_y.validate()?;
    let exp = expand_kernel(r, k, dist_x.dim(), dist_y.dim())?;
    let reference = marginal_value(&exp, dist_x, dist_y)?;
    let errors = run_trials(n_grid, trials, true, |n, t| {
        let (sx, sy) = trial_seeds(seed, n, t);
        let mu = sample(dist_x, n, sx)?;
        let nu = sample(dist_y, n, sy)?;
        Ok((marginal_value(&exp, &mu, &nu)? - reference).abs())
    })?;
    // Marginal moments are plain sample means.
    Ok(summarize(n_grid, errors, -0.5, reference, false, seed))
}

/// Errors of a single sample moment `|E_n[X^alpha] - E[X^alpha]|`.
pub fn moment_rate_experiment(
    dist: &DistributionSpec,
    alpha: &[u32],
    n_grid: &[usize],
    trials: usize,
    seed: u64,
) -> Result<RateResult> {
    validate_grid(n_grid, trials)?;
    dist.validate()?;
    let reference = dist.moment(alpha)?;
    let errors = run_trials(n_grid, trials, true, |n, t| {
        let (sx, _) = trial_seeds(seed, n, t);
        let mu = sample(dist, n, sx)?;
        Ok((mu.moment(alpha)? - reference).abs())
    })?;
    Ok(summarize(n_grid, errors, -0.5, reference, false, seed))
}

/// Two-point law `(1-p) delta_0 + p delta_{R e_1}` against `delta_0`, where
/// the coupling is forced and the plug-in value is `g(p_n) R^{4kr}`. Trials
/// draw binomial counts; trials with `trial % cross_check_every == 0` also
/// run the full pipeline on the corresponding empirical measure.
#[allow(clippy::too_many_arguments)]
pub fn empirical_lower_check(
    p: f64,
    radius: f64,
    r: u32,
    k: u32,
    n_grid: &[usize],
    trials: usize,
    seed: u64,
    cross_check_every: usize,
) -> Result<RateResult> {
    let truth = lower_bound_exact(p, radius, r, k)?;
    validate_grid(n_grid, trials)?;
    if cross_check_every == 0 {
        return Err(GwError::param("cross_check_every", "must be at least 1"));
    }
    let cfg = SolverConfig::default();
    let delta = DiscreteMeasure::dirac_origin(1)?;
    let outcomes = {
        let jobs: Vec<(usize, usize)> = n_grid
            .iter()
            .flat_map(|&n| (0..trials).map(move |t| (n, t)))
            .collect();
        jobs.par_iter()
            .map(|&(n, t)| -> Result<(f64, Option<f64>)> {
                let (sx, _) = trial_seeds(seed, n, t);
                let mut rng = rng_from_seed(sx);
                let count = Binomial::new(n as u64, p)
                    .map_err(|e| GwError::param("p", e.to_string()))?
                    .sample(&mut rng);
                let err = two_point_error(count, n, p, radius, r, k);
                let check = if t % cross_check_every == 0 {
                    let mu = two_point_empirical(count as usize, n, radius, 1)?;
                    let full = compute_gw(&mu, &delta, r, k, &cfg)
                        .map_err(|e| GwError::Trial {
                            n,
                            trial: t,
                            source: Box::new(e),
                        })?
                        .value;
                    let closed = g(count as f64 / n as f64) * radius.powi((4 * k * r) as i32);
                    Some(if closed == 0.0 {
                        full.abs()
                    } else {
                        rel_err(full, closed)
                    })
                } else {
                    None
                };
                Ok((err, check))
            })
            .collect::<Result<Vec<_>>>()?
    };
    let errors: Vec<Vec<f64>> = outcomes
        .chunks(trials)
        .map(|c| c.iter().map(|(e, _)| *e).collect())
        .collect();
    let checks: Vec<f64> = outcomes.iter().filter_map(|(_, c)| *c).collect();
    let mut res = summarize(n_grid, errors, -0.5, truth, false, seed);
    res.cross_checks = checks.len();
    res.cross_check_max_rel = checks.iter().fold(0.0, |m: f64, v| m.max(*v));
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_values() {
        assert_eq!(lower_bound_exact(0.25, 1.0, 1, 1).unwrap(), 0.375);
        assert_eq!(lower_bound_exact(0.5, 1.0, 1, 1).unwrap(), 0.5);
        assert_eq!(lower_bound_exact(0.25, 3.0, 1, 2).unwrap(), 2460.375);
        assert!(lower_bound_exact(0.0, 1.0, 1, 1).is_err());
        assert!(lower_bound_exact(0.5, -1.0, 1, 1).is_err());
    }

    #[test]
    fn rho_values() {
        assert_eq!(rho_n(16, 2), 0.25);
        assert_eq!(rho_n(1, 7), 1.0);
        assert!((rho_n(1, 4) - 1.0).abs() < 1e-15);
        for d in 1..8 {
            assert!(rho_n(100, d) > rho_n(101, d));
        }
    }

    #[test]
    fn exact_count_gives_zero_error() {
        assert_eq!(two_point_error(25, 100, 0.25, 2.0, 1, 2), 0.0);
    }

    #[test]
    fn reference_parsing() {
        assert_eq!(
            "self-zero".parse::<Reference>().unwrap(),
            Reference::SelfZero
        );
        assert!("nope".parse::<Reference>().is_err());
    }

    #[test]
    fn point_mass_self_zero() {
        let pm = DistributionSpec::PointMass { dim: 2 };
        let exp = RateExperiment {
            r: 1,
            k: 1,
            dist_x: pm.clone(),
            dist_y: pm,
            n_grid: vec![4, 8, 16],
            trials: 3,
            seed: 1,
            reference: Reference::SelfZero,
            solver: SolverConfig::default(),
            parallel: false,
        };
        let res = run_rate_experiment(&exp).unwrap();
        assert!(res.per_n_errors.iter().flatten().all(|e| *e == 0.0));
        assert!(res.fitted_slope.is_none());
        assert!(!res.notes.is_empty());
    }

    #[test]
    fn unresolvable_references() {
        let exp = RateExperiment {
            r: 1,
            k: 1,
            dist_x: DistributionSpec::UniformCube {
                dim: 1,
                half_width: 1.0,
            },
            dist_y: DistributionSpec::PointMass { dim: 1 },
            n_grid: vec![4, 8],
            trials: 1,
            seed: 1,
            reference: Reference::SelfZero,
            solver: SolverConfig::default(),
            parallel: false,
        };
        assert!(matches!(
            run_rate_experiment(&exp),
            Err(GwError::UnresolvableReference(_))
        ));
        let cf = RateExperiment {
            reference: Reference::ClosedForm,
            ..exp
        };
        assert!(matches!(
            run_rate_experiment(&cf),
            Err(GwError::UnresolvableReference(_))
        ));
    }

    #[test]
    fn grid_validation() {
        assert!(validate_grid(&[4], 1).is_err());
        assert!(validate_grid(&[4, 4], 1).is_err());
        assert!(validate_grid(&[4, 8], 0).is_err());
        assert!(validate_grid(&[4, 8], 1).is_ok());
    }

    #[test]
    fn point_mass_marginal_errors_vanish() {
        let pm = DistributionSpec::PointMass { dim: 1 };
        let res = marginal_rate_experiment(1, 1, &pm, &pm, &[4, 8], 3, 0).unwrap();
        assert!(res.per_n_errors.iter().flatten().all(|e| *e == 0.0));
    }

    #[test]
    fn deterministic_under_seed() {
        let a = empirical_lower_check(0.25, 1.0, 1, 1, &[16, 32], 20, 9, 10).unwrap();
        let b = empirical_lower_check(0.25, 1.0, 1, 1, &[16, 32], 20, 9, 10).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cross_checks, 4);
        assert!(a.cross_check_max_rel <= 1e-9);
    }
}
