//! Minimization of the coupling term over the transportation polytope and
//! assembly of the full functional.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use once_cell::sync::Lazy;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dual::{
    build_quadratic_form_with, family_from_spectrum, spectral_decomposition, BasisTable,
    DualCostFamily, QuadraticForm, Spectrum, DEFAULT_BASIS_CAP, DEFAULT_ZERO_TOL,
};
use crate::error::{GwError, Result};
use crate::measure::{derive_seed, normalize_pair, rng_from_seed, DiscreteMeasure};
use crate::numeric::{neumaier_sum, sq_dist, Matrix};
use crate::ot::{solve_ot, Coupling};
use crate::poly::{expand_kernel_with, marginal_value, ExpansionLimits, KernelExpansion};
use crate::polytope::enumerate_vertices;

/// Expansion, quadratic form and (lazily) spectrum for one `(r, k, d_x, d_y)`.
#[derive(Debug)]
pub struct GwModel {
    pub exp: KernelExpansion,
    pub q: QuadraticForm,
    spectrum: Mutex<Option<Arc<Spectrum>>>,
}

impl GwModel {
    pub fn build(
        r: u32,
        k: u32,
        d_x: usize,
        d_y: usize,
        limits: ExpansionLimits,
        basis_cap: usize,
    ) -> Result<Self> {
        let exp = expand_kernel_with(r, k, d_x, d_y, limits)?;
        let q = build_quadratic_form_with(&exp, basis_cap)?;
        Ok(Self {
            exp,
            q,
            spectrum: Mutex::new(None),
        })
    }

    pub fn r(&self) -> u32 {
        self.exp.r
    }

    pub fn k(&self) -> u32 {
        self.exp.k
    }

    /// Full spectrum of the quadratic form, computed once.
    pub fn spectrum(&self) -> Result<Arc<Spectrum>> {
        let mut slot = self.spectrum.lock().expect("spectrum lock");
        if let Some(s) = slot.as_ref() {
            return Ok(Arc::clone(s));
        }
        let s = Arc::new(spectral_decomposition(&self.q)?);
        *slot = Some(Arc::clone(&s));
        Ok(s)
    }

    /// Signed family without boxes.
    pub fn family(&self, zero_tol: f64) -> Result<DualCostFamily> {
        if !(zero_tol >= 0.0) {
            return Err(GwError::param("zero_tol", "must be nonnegative"));
        }
        let spec = self.spectrum()?.truncated(zero_tol);
        Ok(family_from_spectrum(&self.q, &spec))
    }
}

/// Size caps applied when building a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelLimits {
    pub term_cap: usize,
    pub basis_cap: usize,
}

impl Default for ModelLimits {
    fn default() -> Self {
        Self {
            term_cap: ExpansionLimits::default().term_cap,
            basis_cap: DEFAULT_BASIS_CAP,
        }
    }
}

type ModelKey = (u32, u32, usize, usize, ModelLimits);

static MODELS: Lazy<Mutex<HashMap<ModelKey, Arc<GwModel>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

/// Shared model with default limits, built on first use.
pub fn model(r: u32, k: u32, d_x: usize, d_y: usize) -> Result<Arc<GwModel>> {
    model_with(r, k, d_x, d_y, ModelLimits::default())
}

pub fn model_with(
    r: u32,
    k: u32,
    d_x: usize,
    d_y: usize,
    limits: ModelLimits,
) -> Result<Arc<GwModel>> {
    let key = (r, k, d_x, d_y, limits);
    let mut cache = MODELS.lock().expect("model cache lock");
    if let Some(m) = cache.get(&key) {
        return Ok(Arc::clone(m));
    }
    let m = Arc::new(GwModel::build(
        r,
        k,
        d_x,
        d_y,
        ExpansionLimits {
            term_cap: limits.term_cap,
        },
        limits.basis_cap,
    )?);
    cache.insert(key, Arc::clone(&m));
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub restarts: usize,
    pub max_iters: usize,
    pub fw_tol: f64,
    pub seed: u64,
    pub oracle_grid_resolution: f64,
    pub zero_tol: f64,
    /// Multiplier on the dual box half-widths.
    pub box_scale: f64,
    /// Run the dual alternating scheme alongside Frank–Wolfe.
    pub dual: bool,
    /// Run restarts on the rayon pool.
    pub parallel: bool,
    /// Also solve the swapped pair `(nu, mu)` and keep the better plan.
    pub symmetrize: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iters: 500,
            fw_tol: 1e-9,
            seed: 0,
            oracle_grid_resolution: 0.02,
            zero_tol: DEFAULT_ZERO_TOL,
            box_scale: 1.0,
            dual: true,
            parallel: false,
            symmetrize: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(GwError::param("restarts", "must be at least 1"));
        }
        if self.max_iters == 0 {
            return Err(GwError::param("max_iters", "must be at least 1"));
        }
        if !(self.fw_tol > 0.0) {
            return Err(GwError::param("fw_tol", "must be positive"));
        }
        if !(self.oracle_grid_resolution > 0.0 && self.oracle_grid_resolution <= 1.0) {
            return Err(GwError::param(
                "oracle_grid_resolution",
                "must lie in (0, 1]",
            ));
        }
        if !(self.zero_tol > 0.0) {
            return Err(GwError::param("zero_tol", "must be positive"));
        }
        if !(self.box_scale >= 1.0) {
            return Err(GwError::param("box_scale", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    FrankWolfe,
    DualAlternating,
    BruteForce,
    ExactForced,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Method::FrankWolfe => "frank_wolfe",
            Method::DualAlternating => "dual_alternating",
            Method::BruteForce => "brute_force",
            Method::ExactForced => "exact_forced",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualParams {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// `M + 4 (-|u|^2 + |v|^2 + OT)` at the last sweep.
    pub minimax_estimate: f64,
}

/// Best coupling found and the functional value it attains.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GWResult {
    pub value: f64,
    pub marginal_part: f64,
    pub coupling_part: f64,
    pub plan: Coupling,
    pub method: Method,
    pub restarts_used: usize,
    pub converged: bool,
    pub dual_params: Option<DualParams>,
    /// Factor `(2R)^{4kr}` applied to normalized values (1 when unnormalized).
    pub scale: f64,
    /// The plan came from solving `(nu, mu)` and was transposed back;
    /// `dual_params` then refer to the swapped family.
    #[serde(default)]
    pub swapped: bool,
}

impl GWResult {
    fn scaled(mut self, factor: f64) -> Self {
        self.value *= factor;
        self.marginal_part *= factor;
        self.coupling_part *= factor;
        if let Some(d) = &mut self.dual_params {
            d.minimax_estimate *= factor;
        }
        self.scale = factor;
        self
    }
}

/// The quadratic objective restricted to one pair of supports.
struct Problem<'a> {
    q: &'a QuadraticForm,
    table: BasisTable,
    a: &'a [f64],
    b: &'a [f64],
}

impl<'a> Problem<'a> {
    fn new(q: &'a QuadraticForm, mu: &'a DiscreteMeasure, nu: &'a DiscreteMeasure) -> Result<Self> {
        q.check_dims(mu.dim(), nu.dim())?;
        Ok(Self {
            q,
            table: q.basis.table(mu.atoms(), nu.atoms()),
            a: mu.weights(),
            b: nu.weights(),
        })
    }

    fn moments(&self, pi: &Coupling) -> Vec<f64> {
        self.table.moments(pi.as_slice())
    }

    fn value(&self, pi: &Coupling) -> f64 {
        self.q.value(&self.moments(pi))
    }
}

struct Run {
    plan: Coupling,
    value: f64,
    converged: bool,
    dual: Option<DualParams>,
}

fn best_run(runs: Vec<Result<Run>>) -> Result<(Run, usize)> {
    let mut best: Option<Run> = None;
    let mut count = 0;
    for r in runs {
        let r = r?;
        count += 1;
        // Strict improvement only, so ties go to the lowest restart index.
        if best.as_ref().is_none_or(|b| r.value < b.value) {
            best = Some(r);
        }
    }
    Ok((best.expect("at least one restart"), count))
}

/// One-dimensional `W_1` between two weighted samples on the line.
fn w1_line(xs: &[(f64, f64)], ys: &[(f64, f64)]) -> f64 {
    let mut ev: Vec<(f64, f64)> = xs
        .iter()
        .map(|&(p, w)| (p, w))
        .chain(ys.iter().map(|&(p, w)| (p, -w)))
        .collect();
    ev.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut acc = 0.0;
    let mut diff = 0.0;
    for w in ev.windows(2) {
        diff += w[0].1;
        acc += diff.abs() * (w[1].0 - w[0].0);
    }
    acc
}

/// Starting couplings: the product coupling, vertices from random costs,
/// and the vertex matching the distance profiles of the atoms.
fn initial_plans(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    k: u32,
    cfg: &SolverConfig,
) -> Result<Vec<Coupling>> {
    let (a, b) = (mu.weights(), nu.weights());
    let mut out = vec![Coupling::product(a, b)];
    for restart in 1..cfg.restarts {
        let mut rng = rng_from_seed(derive_seed(cfg.seed, &[0x5EED, restart as u64]));
        let cost = Matrix::from_fn(a.len(), b.len(), |_, _| rng.gen::<f64>());
        out.push(solve_ot(&cost, a, b)?.plan);
    }
    let profile = |m: &DiscreteMeasure, i: usize| -> Vec<(f64, f64)> {
        (0..m.len())
            .map(|j| (sq_dist(m.atom(i), m.atom(j)).powi(k as i32), m.weights()[j]))
            .collect()
    };
    let px: Vec<_> = (0..mu.len()).map(|i| profile(mu, i)).collect();
    let py: Vec<_> = (0..nu.len()).map(|j| profile(nu, j)).collect();
    let cost = Matrix::from_fn(a.len(), b.len(), |i, j| w1_line(&px[i], &py[j]));
    out.push(solve_ot(&cost, a, b)?.plan);
    Ok(out)
}

fn run_parallel<T, F>(items: Vec<T>, parallel: bool, f: F) -> Vec<Result<Run>>
where
    T: Send,
    F: Fn(T) -> Result<Run> + Sync + Send,
{
    if parallel {
        items.into_par_iter().map(&f).collect()
    } else {
        items.into_iter().map(f).collect()
    }
}

fn frank_wolfe_run(p: &Problem, start: Coupling, cfg: &SolverConfig) -> Result<Run> {
    let mut pi = start;
    let mut u = p.moments(&pi);
    let mut obj = p.q.value(&u);
    let mut converged = false;
    for _ in 0..cfg.max_iters {
        let cu = p.q.apply(&u);
        let grad = p.table.combine(&cu);
        let target = solve_ot(&grad, p.a, p.b)?.plan;
        let us = p.moments(&target);
        let du: Vec<f64> = us.iter().zip(&u).map(|(s, x)| s - x).collect();
        // Gradient is 2 * grad; the gap is -<2 grad, target - pi>.
        let gap = -2.0 * neumaier_sum(cu.iter().zip(&du).map(|(c, d)| c * d));
        if gap <= 1e-15 * obj.abs().max(1e-300) {
            converged = true;
            break;
        }
        let qa = p.q.value(&du);
        let qb = 2.0 * p.q.bilinear(&u, &du);
        let t = if qa > 0.0 {
            (-qb / (2.0 * qa)).clamp(0.0, 1.0)
        } else if qa + qb < 0.0 {
            1.0
        } else {
            0.0
        };
        if t == 0.0 {
            converged = true;
            break;
        }
        let next = if t == 1.0 {
            target
        } else {
            pi.lerp(&target, t)
        };
        let nu_ = p.moments(&next);
        let nobj = p.q.value(&nu_);
        if nobj > obj {
            converged = true;
            break;
        }
        let decrease = obj - nobj;
        pi = next;
        u = nu_;
        let prev = obj;
        obj = nobj;
        if decrease <= cfg.fw_tol * prev.abs() {
            converged = true;
            break;
        }
    }
    Ok(Run {
        plan: pi,
        value: obj,
        converged,
        dual: None,
    })
}

fn forced_result(
    model: &GwModel,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    marginal: f64,
) -> Result<GWResult> {
    let plan = Coupling::product(mu.weights(), nu.weights());
    let p = Problem::new(&model.q, mu, nu)?;
    let coupling_part = p.value(&plan);
    Ok(GWResult {
        value: marginal + coupling_part,
        marginal_part: marginal,
        coupling_part,
        plan,
        method: Method::ExactForced,
        restarts_used: 0,
        converged: true,
        dual_params: None,
        scale: 1.0,
        swapped: false,
    })
}

fn check_model(model: &GwModel, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<()> {
    model.q.check_dims(mu.dim(), nu.dim())
}

/// Conditional gradient on `u(pi)^T C u(pi)` with exact line search, best over restarts.
pub fn solve_frank_wolfe(
    model: &GwModel,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cfg: &SolverConfig,
) -> Result<GWResult> {
    cfg.validate()?;
    check_model(model, mu, nu)?;
    let marginal = marginal_value(&model.exp, mu, nu)?;
    if mu.len() == 1 || nu.len() == 1 {
        return forced_result(model, mu, nu, marginal);
    }
    let p = Problem::new(&model.q, mu, nu)?;
    let starts = initial_plans(mu, nu, model.k(), cfg)?;
    let runs = run_parallel(starts, cfg.parallel, |s| frank_wolfe_run(&p, s, cfg));
    let (best, count) = best_run(runs)?;
    Ok(GWResult {
        value: marginal + best.value,
        marginal_part: marginal,
        coupling_part: best.value,
        plan: best.plan,
        method: Method::FrankWolfe,
        restarts_used: count,
        converged: best.converged,
        dual_params: None,
        scale: 1.0,
        swapped: false,
    })
}

fn dual_run(p: &Problem, fam: &DualCostFamily, start: Coupling, cfg: &SolverConfig) -> Result<Run> {
    let ell = fam.ell;
    let mut pi = start;
    let mut best_plan = pi.clone();
    let mut best_val = p.value(&pi);
    let mut prev_dual = f64::INFINITY;
    let mut last = None;
    let mut converged = false;
    for _ in 0..cfg.max_iters {
        let m = fam.integrals_from_moments(&p.moments(&pi));
        let u: Vec<f64> = m[..ell].iter().map(|x| x / 2.0).collect();
        let v: Vec<f64> = m[ell..].iter().map(|x| x / 2.0).collect();
        let cost = fam.cost_matrix(&u, &v, &p.table, true)?;
        let sol = solve_ot(&cost, p.a, p.b)?;
        let dual = -u.iter().map(|x| x * x).sum::<f64>()
            + v.iter().map(|x| x * x).sum::<f64>()
            + sol.value;
        let val = p.value(&sol.plan);
        if val < best_val {
            best_val = val;
            best_plan = sol.plan.clone();
        }
        let done =
            (dual - prev_dual).abs() <= cfg.fw_tol * dual.abs().max(1e-300) || sol.plan == pi;
        prev_dual = dual;
        pi = sol.plan;
        last = Some((u, v, dual, val));
        if done {
            converged = true;
            break;
        }
    }
    let (u, v, dual, final_val) = last.expect("at least one sweep");
    // The minimax estimate and the attained value must coincide at a fixed point.
    let agree = (4.0 * dual - final_val).abs() <= 1e-9 * final_val.abs().max(1e-12);
    Ok(Run {
        plan: best_plan,
        value: best_val,
        converged: converged && agree,
        dual: Some(DualParams {
            u,
            v,
            minimax_estimate: 4.0 * dual,
        }),
    })
}

/// Fixed-point scheme `u = m_+(pi)/2`, `v = m_-(pi)/2`, `pi = argmin OT_{c_{u,v}}`.
/// The family's boxes must contain every coordinate-wise optimizer.
pub fn solve_dual_alternating(
    model: &GwModel,
    fam: &DualCostFamily,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cfg: &SolverConfig,
) -> Result<GWResult> {
    cfg.validate()?;
    check_model(model, mu, nu)?;
    if fam.boxes.is_none() {
        return Err(GwError::param("family", "boxes must be attached"));
    }
    let marginal = marginal_value(&model.exp, mu, nu)?;
    if mu.len() == 1 || nu.len() == 1 {
        return forced_result(model, mu, nu, marginal);
    }
    let p = Problem::new(&model.q, mu, nu)?;
    let starts = initial_plans(mu, nu, model.k(), cfg)?;
    let runs = run_parallel(starts, cfg.parallel, |s| dual_run(&p, fam, s, cfg));
    let (best, count) = best_run(runs)?;
    let dual = best.dual.map(|mut d| {
        d.minimax_estimate += marginal;
        d
    });
    Ok(GWResult {
        value: marginal + best.value,
        marginal_part: marginal,
        coupling_part: best.value,
        plan: best.plan,
        method: Method::DualAlternating,
        restarts_used: count,
        converged: best.converged,
        dual_params: dual,
        scale: 1.0,
        swapped: false,
    })
}

/// Family for `(mu, nu)` with boxes over their supports, scaled by `cfg.box_scale`.
pub fn family_for(
    model: &GwModel,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cfg: &SolverConfig,
) -> Result<DualCostFamily> {
    let mut fam = model.family(cfg.zero_tol)?;
    fam.attach_boxes(mu.atoms(), nu.atoms())?;
    Ok(fam.with_scaled_boxes(cfg.box_scale))
}

/// Quadruple-sum objective as a quadratic form on the cells of the plan.
struct TensorObjective {
    n: usize,
    k: Vec<f64>,
}

impl TensorObjective {
    fn new(mu: &DiscreteMeasure, nu: &DiscreteMeasure, r: u32, k: u32) -> Self {
        let (nx, ny) = (mu.len(), nu.len());
        let n = nx * ny;
        let mut t = vec![0.0; n * n];
        for c in 0..n {
            let (i, j) = (c / ny, c % ny);
            for d in 0..n {
                let (ip, jp) = (d / ny, d % ny);
                let a = sq_dist(mu.atom(i), mu.atom(ip)).powi(k as i32);
                let b = sq_dist(nu.atom(j), nu.atom(jp)).powi(k as i32);
                t[c * n + d] = (a - b).powi(2 * r as i32);
            }
        }
        Self { n, k: t }
    }

    fn value(&self, pi: &[f64]) -> f64 {
        neumaier_sum((0..self.n).map(|c| {
            pi[c]
                * (0..self.n)
                    .map(|d| self.k[c * self.n + d] * pi[d])
                    .sum::<f64>()
        }))
    }

    fn gradient(&self, pi: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|c| {
                2.0 * (0..self.n)
                    .map(|d| self.k[c * self.n + d] * pi[d])
                    .sum::<f64>()
            })
            .collect()
    }

    /// Upper bound on the gradient's Lipschitz constant.
    fn lipschitz(&self) -> f64 {
        2.0 * (0..self.n)
            .map(|c| {
                (0..self.n)
                    .map(|d| self.k[c * self.n + d].abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

/// Euclidean projection onto the transportation polytope (Dykstra between
/// the affine marginal constraints and the nonnegative orthant).
fn project_polytope(x: &[f64], a: &[f64], b: &[f64]) -> Vec<f64> {
    let (m, n) = (a.len(), b.len());
    let affine = |y: &mut [f64]| {
        let rows: Vec<f64> = (0..m)
            .map(|i| a[i] - y[i * n..(i + 1) * n].iter().sum::<f64>())
            .collect();
        let cols: Vec<f64> = (0..n)
            .map(|j| b[j] - (0..m).map(|i| y[i * n + j]).sum::<f64>())
            .collect();
        let total: f64 = rows.iter().sum();
        let g = total / (2.0 * (m * n) as f64);
        for i in 0..m {
            for j in 0..n {
                y[i * n + j] += rows[i] / n as f64 + cols[j] / m as f64 - 2.0 * g;
            }
        }
    };
    let mut y = x.to_vec();
    let mut corr = vec![0.0; x.len()];
    for _ in 0..5000 {
        affine(&mut y);
        let mut change = 0.0f64;
        for (yi, ci) in y.iter_mut().zip(corr.iter_mut()) {
            let z = *yi + *ci;
            let p = z.max(0.0);
            *ci = z - p;
            change = change.max((p - *yi).abs());
            *yi = p;
        }
        if change <= 1e-17 {
            break;
        }
    }
    affine(&mut y);
    y.iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

fn free_grid(a: &[f64], b: &[f64], step: f64) -> Vec<Vec<f64>> {
    let (m, n) = (a.len(), b.len());
    let free: Vec<(usize, usize)> = (0..m - 1)
        .flat_map(|i| (0..n - 1).map(move |j| (i, j)))
        .collect();
    let mut out = Vec::new();
    let mut vals = vec![0.0; free.len()];
    fn rec(
        pos: usize,
        free: &[(usize, usize)],
        vals: &mut Vec<f64>,
        a: &[f64],
        b: &[f64],
        step: f64,
        out: &mut Vec<Vec<f64>>,
    ) {
        let (m, n) = (a.len(), b.len());
        if pos == free.len() {
            let mut pi = vec![0.0; m * n];
            for (t, &(i, j)) in free.iter().enumerate() {
                pi[i * n + j] = vals[t];
            }
            for i in 0..m - 1 {
                pi[i * n + n - 1] = a[i] - (0..n - 1).map(|j| pi[i * n + j]).sum::<f64>();
            }
            for j in 0..n {
                pi[(m - 1) * n + j] = b[j] - (0..m - 1).map(|i| pi[i * n + j]).sum::<f64>();
            }
            if pi.iter().all(|v| *v >= -1e-15) {
                out.push(pi.iter().map(|v| v.max(0.0)).collect());
            }
            return;
        }
        let (i, j) = free[pos];
        let hi = a[i].min(b[j]);
        let mut levels: Vec<f64> = (0..)
            .map(|s| s as f64 * step)
            .take_while(|v| *v < hi - 1e-15)
            .collect();
        levels.push(hi);
        for v in levels {
            vals[pos] = v;
            rec(pos + 1, free, vals, a, b, step, out);
        }
    }
    rec(0, &free, &mut vals, a, b, step, &mut out);
    out
}

fn polish(obj: &TensorObjective, start: &[f64], a: &[f64], b: &[f64]) -> (Vec<f64>, f64) {
    let step = 1.0 / obj.lipschitz().max(1e-300);
    let mut x = start.to_vec();
    let mut fx = obj.value(&x);
    for it in 0..4000 {
        let g = obj.gradient(&x);
        // Diminishing steps after an initial constant phase.
        let s = if it < 2000 {
            step
        } else {
            step * 2000.0 / it as f64
        };
        let trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - s * gi).collect();
        let y = project_polytope(&trial, a, b);
        let fy = obj.value(&y);
        let moved = x
            .iter()
            .zip(&y)
            .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        if fy <= fx {
            x = y;
            fx = fy;
        }
        if moved <= 1e-15 {
            break;
        }
    }
    (x, fx)
}

/// Grid scan of the free entries plus every vertex, then projected-gradient
/// polishing of the best candidates. Only for `n_x * n_y <= 9`.
pub fn solve_brute_force(
    model: &GwModel,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cfg: &SolverConfig,
) -> Result<GWResult> {
    cfg.validate()?;
    check_model(model, mu, nu)?;
    let (nx, ny) = (mu.len(), nu.len());
    if nx * ny > 9 {
        return Err(GwError::TooLarge { n_x: nx, n_y: ny });
    }
    let marginal = marginal_value(&model.exp, mu, nu)?;
    let (a, b) = (mu.weights(), nu.weights());
    let obj = TensorObjective::new(mu, nu, model.r(), model.k());
    let finish = |pi: Vec<f64>, method: Method| -> Result<GWResult> {
        let plan = Coupling::new(Matrix {
            rows: nx,
            cols: ny,
            data: pi,
        })?;
        let value = obj.value(plan.as_slice());
        Ok(GWResult {
            value,
            marginal_part: marginal,
            coupling_part: value - marginal,
            plan,
            method,
            restarts_used: 1,
            converged: true,
            dual_params: None,
            scale: 1.0,
            swapped: false,
        })
    };
    if nx == 1 || ny == 1 {
        let p = Coupling::product(a, b);
        return finish(p.as_slice().to_vec(), Method::ExactForced);
    }
    let mut scored: Vec<(f64, Vec<f64>)> = free_grid(a, b, cfg.oracle_grid_resolution)
        .into_iter()
        .map(|pi| (obj.value(&pi), pi))
        .collect();
    scored.sort_by(|x, y| x.0.total_cmp(&y.0));
    scored.truncate(8);
    for v in enumerate_vertices(a, b)? {
        scored.push((obj.value(&v.data), v.data));
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for (f0, pi) in scored {
        let (x, fx) = polish(&obj, &pi, a, b);
        let (x, fx) = if fx <= f0 { (x, fx) } else { (pi, f0) };
        if best.as_ref().is_none_or(|(bf, _)| fx < *bf) {
            best = Some((fx, x));
        }
    }
    let (_, pi) = best.expect("grid contains the vertices");
    let mut res = finish(pi, Method::BruteForce)?;
    res.restarts_used = 1;
    Ok(res)
}

/// Spreads a plan on merged atoms back onto the original atoms in
/// proportion to their weights.
fn expand_plan(
    merged: &Coupling,
    mu: &DiscreteMeasure,
    mu_m: &DiscreteMeasure,
    map_x: &[usize],
    nu: &DiscreteMeasure,
    nu_m: &DiscreteMeasure,
    map_y: &[usize],
) -> Coupling {
    Coupling::from_fn(mu.len(), nu.len(), |i, j| {
        let (ii, jj) = (map_x[i], map_y[j]);
        let fx = mu.weights()[i] / mu_m.weights()[ii];
        let fy = nu.weights()[j] / nu_m.weights()[jj];
        merged.get(ii, jj) * fx * fy
    })
}

/// Frank–Wolfe, then the dual scheme when enabled; the better of the two.
fn solve_oriented(
    model: &GwModel,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cfg: &SolverConfig,
) -> Result<GWResult> {
    let mut best = solve_frank_wolfe(model, mu, nu, cfg)?;
    if cfg.dual && best.method != Method::ExactForced {
        let fam = family_for(model, mu, nu, cfg)?;
        let da = solve_dual_alternating(model, &fam, mu, nu, cfg)?;
        if da.value < best.value {
            best = da;
        }
    }
    Ok(best)
}

fn transpose(plan: &Coupling) -> Coupling {
    Coupling::from_fn(plan.cols(), plan.rows(), |i, j| plan.get(j, i))
}

/// Normalizes, minimizes in normalized coordinates, and rescales by `(2R)^{4kr}`.
pub fn compute_gw(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    r: u32,
    k: u32,
    cfg: &SolverConfig,
) -> Result<GWResult> {
    compute_gw_with(mu, nu, r, k, cfg, ModelLimits::default())
}

pub fn compute_gw_with(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    r: u32,
    k: u32,
    cfg: &SolverConfig,
    limits: ModelLimits,
) -> Result<GWResult> {
    cfg.validate()?;
    if r == 0 || k == 0 {
        return Err(GwError::param("r, k", "must be at least 1"));
    }
    let model = model_with(r, k, mu.dim(), nu.dim(), limits)?;
    let pair = normalize_pair(mu, nu);
    if pair.degenerate {
        return Ok(GWResult {
            value: 0.0,
            marginal_part: 0.0,
            coupling_part: 0.0,
            plan: Coupling::product(mu.weights(), nu.weights()),
            method: Method::ExactForced,
            restarts_used: 0,
            converged: true,
            dual_params: None,
            scale: 1.0,
            swapped: false,
        });
    }
    let (mu_m, map_x) = pair.mu.merge_duplicates();
    let (nu_m, map_y) = pair.nu.merge_duplicates();

    let mut best = solve_oriented(&model, &mu_m, &nu_m, cfg)?;
    // The functional is symmetric but the restarts are not, so the swapped
    // problem is solved too and the better plan kept.
    if cfg.symmetrize && best.method != Method::ExactForced {
        let swapped_model = model_with(r, k, nu.dim(), mu.dim(), limits)?;
        let mut alt = solve_oriented(&swapped_model, &nu_m, &mu_m, cfg)?;
        let used = best.restarts_used + alt.restarts_used;
        if alt.value < best.value {
            alt.plan = transpose(&alt.plan);
            alt.swapped = true;
            best = alt;
        }
        best.restarts_used = used;
    }
    best.plan = expand_plan(&best.plan, &pair.mu, &mu_m, &map_x, &pair.nu, &nu_m, &map_y);
    let factor = pair.mu_record.scale.powi((4 * k * r) as i32);
    Ok(best.scaled(factor))
}
