//! Monomial expansion of the even-order kernel
//! `(|x - x'|^{2k} - |y - y'|^{2k})^{2r}` and the split of the expanded
//! functional into a marginal-only part and a coupling part.
//!
//! Each expanded term is `coeff * x^alpha x'^beta y^gamma y'^delta`. Integrated
//! against `pi (x) pi` it becomes `coeff * M_{alpha,gamma}(pi) * M_{beta,delta}(pi)`
//! with `M_{a,g}(pi) = sum_ij pi_ij x_i^a y_j^g`. A term is marginal-only when
//! both factors depend on one marginal alone:
//! `(alpha = 0 or gamma = 0) and (beta = 0 or delta = 0)`.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use twofloat::TwoFloat;

use crate::error::{GwError, Result};
use crate::measure::{monomial, DiscreteMeasure, DistributionSpec};
use crate::numeric::{neumaier_sum, sq_dist};
use crate::ot::Coupling;

/// Default limit on the number of merged kernel terms.
pub const DEFAULT_TERM_CAP: usize = 2_000_000;

/// Multi-index `alpha = (alpha_1, ..., alpha_d)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn zero(d: usize) -> Self {
        MultiIndex(vec![0; d])
    }

    pub fn unit(d: usize, j: usize, power: u32) -> Self {
        let mut v = vec![0; d];
        v[j] = power;
        MultiIndex(v)
    }

    /// `|alpha|`.
    pub fn order(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&a| a == 0)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn components(&self) -> &[u32] {
        &self.0
    }

    fn plus(&self, other: &MultiIndex) -> MultiIndex {
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// `z^alpha`.
    pub fn eval(&self, z: &[f64]) -> f64 {
        monomial(z, &self.0)
    }
}

type ExactTable = BTreeMap<(MultiIndex, MultiIndex), i128>;

/// `|x - x'|^2 = sum_j (x_j^2 - 2 x_j x'_j + x'_j^2)`.
fn squared_distance_table(d: usize) -> ExactTable {
    let mut t = ExactTable::new();
    let z = MultiIndex::zero(d);
    for j in 0..d {
        *t.entry((MultiIndex::unit(d, j, 2), z.clone())).or_default() += 1;
        *t.entry((MultiIndex::unit(d, j, 1), MultiIndex::unit(d, j, 1)))
            .or_default() -= 2;
        *t.entry((z.clone(), MultiIndex::unit(d, j, 2))).or_default() += 1;
    }
    t
}

fn one_table(d: usize) -> ExactTable {
    let mut t = ExactTable::new();
    t.insert((MultiIndex::zero(d), MultiIndex::zero(d)), 1);
    t
}

/// Sparse product of two exact tables, merging on `(alpha, beta)`.
fn convolve(a: &ExactTable, b: &ExactTable) -> Option<ExactTable> {
    let mut out = ExactTable::new();
    for ((a1, b1), c1) in a {
        for ((a2, b2), c2) in b {
            let c = c1.checked_mul(*c2)?;
            let e = out.entry((a1.plus(a2), b1.plus(b2))).or_insert(0);
            *e = e.checked_add(c)?;
        }
    }
    out.retain(|_, c| *c != 0);
    Some(out)
}

/// Number of monomials `x^alpha x'^beta` in `|x - x'|^{2m}` over `R^d`.
/// Each coordinate contributes `(x_i - x'_i)^{2c_i}` with `2c_i + 1` terms,
/// and `c` is determined by `alpha + beta`, so nothing cancels.
fn norm_power_size(d: usize, m: usize) -> usize {
    let mut f = vec![0usize; m + 1];
    f[0] = 1;
    for _ in 0..d {
        let mut next = vec![0usize; m + 1];
        for total in 0..=m {
            for c in 0..=total {
                next[total] = next[total].saturating_add((2 * c + 1).saturating_mul(f[total - c]));
            }
        }
        f = next;
    }
    f[m]
}

/// Exact tables of `|x - x'|^{2ks}` for `s = 0..=s_max`.
fn norm_power_tables(d: usize, k: u32, s_max: u32, r: u32) -> Result<Vec<ExactTable>> {
    let overflow = || GwError::CoefficientOverflow { r, k };
    let base = squared_distance_table(d);
    let mut base_k = one_table(d);
    for _ in 0..k {
        base_k = convolve(&base_k, &base).ok_or_else(overflow)?;
    }
    let mut tables = vec![one_table(d)];
    for s in 1..=s_max as usize {
        let next = convolve(&tables[s - 1], &base_k).ok_or_else(overflow)?;
        tables.push(next);
    }
    Ok(tables)
}

/// Coefficients of `|x - x'|^{2k}` in the basis `x^alpha x'^beta`.
pub fn expand_norm_power(d: usize, k: u32) -> Result<BTreeMap<(MultiIndex, MultiIndex), f64>> {
    if d == 0 || k == 0 {
        return Err(GwError::param("d, k", "must be positive"));
    }
    let tables = norm_power_tables(d, k, 1, 1)?;
    Ok(tables[1]
        .iter()
        .map(|(key, &c)| (key.clone(), c as f64))
        .collect())
}

/// One monomial term of the expanded kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelTerm {
    /// Binomial layer: the term comes from `K_X^s K_Y^{2r-s}`.
    pub s: u32,
    pub alpha: MultiIndex,
    pub beta: MultiIndex,
    pub gamma: MultiIndex,
    pub delta: MultiIndex,
    pub coeff: f64,
    pub marginal_only: bool,
}

impl KernelTerm {
    pub fn degree(&self) -> u32 {
        self.alpha.order() + self.beta.order() + self.gamma.order() + self.delta.order()
    }

    /// `coeff * x^alpha x'^beta y^gamma y'^delta`.
    pub fn eval(&self, x: &[f64], xp: &[f64], y: &[f64], yp: &[f64]) -> f64 {
        self.coeff
            * self.alpha.eval(x)
            * self.beta.eval(xp)
            * self.gamma.eval(y)
            * self.delta.eval(yp)
    }
}

/// Definition of the marginal-only predicate.
pub fn is_marginal_only(
    alpha: &MultiIndex,
    beta: &MultiIndex,
    gamma: &MultiIndex,
    delta: &MultiIndex,
) -> bool {
    (alpha.is_zero() || gamma.is_zero()) && (beta.is_zero() || delta.is_zero())
}

/// Limits applied while expanding.
#[derive(Debug, Clone, Copy)]
pub struct ExpansionLimits {
    pub term_cap: usize,
}

impl Default for ExpansionLimits {
    fn default() -> Self {
        Self {
            term_cap: DEFAULT_TERM_CAP,
        }
    }
}

/// The merged term table of the kernel for fixed `(r, k, d_x, d_y)`.
/// Terms are sorted by `(s, alpha, beta, gamma, delta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelExpansion {
    pub r: u32,
    pub k: u32,
    pub d_x: usize,
    pub d_y: usize,
    pub terms: Vec<KernelTerm>,
}

fn binomial(n: u32, k: u32) -> i128 {
    (0..k).fold(1i128, |acc, i| acc * (n - i) as i128 / (i + 1) as i128)
}

/// Expands `(|x - x'|^{2k} - |y - y'|^{2k})^{2r}` into monomials.
pub fn expand_kernel(r: u32, k: u32, d_x: usize, d_y: usize) -> Result<KernelExpansion> {
    expand_kernel_with(r, k, d_x, d_y, ExpansionLimits::default())
}

pub fn expand_kernel_with(
    r: u32,
    k: u32,
    d_x: usize,
    d_y: usize,
    limits: ExpansionLimits,
) -> Result<KernelExpansion> {
    if r == 0 || k == 0 {
        return Err(GwError::param("r, k", "must be at least 1"));
    }
    if d_x == 0 || d_y == 0 {
        return Err(GwError::param("d_x, d_y", "must be at least 1"));
    }
    let two_r = 2 * r;
    let (ku, tr) = (k as usize, two_r as usize);
    let count: usize = (0..=tr)
        .map(|s| norm_power_size(d_x, ku * s).saturating_mul(norm_power_size(d_y, ku * (tr - s))))
        .fold(0usize, usize::saturating_add);
    if count > limits.term_cap {
        return Err(GwError::TermCap {
            r,
            k,
            d_x,
            d_y,
            count,
            cap: limits.term_cap,
        });
    }
    let tx = norm_power_tables(d_x, k, two_r, r)?;
    let ty = norm_power_tables(d_y, k, two_r, r)?;
    debug_assert!((0..=tr).all(|s| tx[s].len() == norm_power_size(d_x, ku * s)));
    let overflow = || GwError::CoefficientOverflow { r, k };
    let mut terms = Vec::with_capacity(count);
    for s in 0..=two_r {
        let sign: i128 = if s % 2 == 0 { 1 } else { -1 };
        let layer = sign * binomial(two_r, s);
        for ((alpha, beta), p) in &tx[s as usize] {
            let lp = layer.checked_mul(*p).ok_or_else(overflow)?;
            for ((gamma, delta), q) in &ty[(two_r - s) as usize] {
                let c = lp.checked_mul(*q).ok_or_else(overflow)?;
                if c == 0 {
                    continue;
                }
                terms.push(KernelTerm {
                    s,
                    marginal_only: is_marginal_only(alpha, beta, gamma, delta),
                    alpha: alpha.clone(),
                    beta: beta.clone(),
                    gamma: gamma.clone(),
                    delta: delta.clone(),
                    coeff: c as f64,
                });
            }
        }
    }
    // Keys are unique by construction (the degree of (alpha, beta) fixes s);
    // the layered loops already emit them in (s, alpha, beta, gamma, delta) order.
    Ok(KernelExpansion {
        r,
        k,
        d_x,
        d_y,
        terms,
    })
}

impl KernelExpansion {
    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    pub fn marginal_terms(&self) -> impl Iterator<Item = &KernelTerm> {
        self.terms.iter().filter(|t| t.marginal_only)
    }

    pub fn coupling_terms(&self) -> impl Iterator<Item = &KernelTerm> {
        self.terms.iter().filter(|t| !t.marginal_only)
    }

    /// `4kr`, the total degree of the kernel.
    pub fn degree(&self) -> u32 {
        4 * self.k * self.r
    }

    /// Sum of all terms at one point `(x, x', y, y')`.
    pub fn eval(&self, x: &[f64], xp: &[f64], y: &[f64], yp: &[f64]) -> f64 {
        neumaier_sum(self.terms.iter().map(|t| t.eval(x, xp, y, yp)))
    }

    /// [`Self::eval`] in double-double arithmetic; exact up to about 1e-30
    /// times the sum of absolute term values.
    pub fn eval_extended(&self, x: &[f64], xp: &[f64], y: &[f64], yp: &[f64]) -> f64 {
        let mut acc = TwoFloat::from(0.0);
        for t in &self.terms {
            let m = monomial_dd(x, &t.alpha)
                * monomial_dd(xp, &t.beta)
                * monomial_dd(y, &t.gamma)
                * monomial_dd(yp, &t.delta);
            acc += m * TwoFloat::from(t.coeff);
        }
        f64::from(acc)
    }

    /// Sum of the absolute term values, the scale of [`Self::eval`] round-off.
    pub fn eval_magnitude(&self, x: &[f64], xp: &[f64], y: &[f64], yp: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.eval(x, xp, y, yp).abs()).sum()
    }

    fn check_dims(&self, d_x: usize, d_y: usize) -> Result<()> {
        if d_x != self.d_x {
            return Err(GwError::DimensionMismatch {
                expected: self.d_x,
                found: d_x,
            });
        }
        if d_y != self.d_y {
            return Err(GwError::DimensionMismatch {
                expected: self.d_y,
                found: d_y,
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "r": self.r,
            "k": self.k,
            "d_x": self.d_x,
            "d_y": self.d_y,
            "term_count": self.terms.len(),
            "marginal_term_count": self.marginal_terms().count(),
            "terms": self.terms,
        })
    }
}

fn monomial_dd(z: &[f64], alpha: &MultiIndex) -> TwoFloat {
    let mut acc = TwoFloat::from(1.0);
    for (&v, &a) in z.iter().zip(alpha.components()) {
        for _ in 0..a {
            acc *= TwoFloat::from(v);
        }
    }
    acc
}

fn sq_dist_dd(a: &[f64], b: &[f64]) -> TwoFloat {
    let mut acc = TwoFloat::from(0.0);
    for (x, y) in a.iter().zip(b) {
        let d = TwoFloat::new_sub(*x, *y);
        acc += d * d;
    }
    acc
}

/// [`kernel_value`] in double-double arithmetic.
pub fn kernel_value_extended(r: u32, k: u32, x: &[f64], xp: &[f64], y: &[f64], yp: &[f64]) -> f64 {
    let a = sq_dist_dd(x, xp).powi(k as i32);
    let b = sq_dist_dd(y, yp).powi(k as i32);
    f64::from((a - b).powi(2 * r as i32))
}

/// The kernel evaluated directly.
pub fn kernel_value(r: u32, k: u32, x: &[f64], xp: &[f64], y: &[f64], yp: &[f64]) -> f64 {
    let kx = sq_dist(x, xp).powi(k as i32);
    let ky = sq_dist(y, yp).powi(k as i32);
    (kx - ky).powi(2 * r as i32)
}

/// Anything that can report moments `E[z^alpha]` of one marginal.
pub trait MomentSource {
    fn moment_dim(&self) -> usize;
    fn moment_of(&self, alpha: &[u32]) -> Result<f64>;
}

impl MomentSource for DiscreteMeasure {
    fn moment_dim(&self) -> usize {
        self.dim()
    }

    fn moment_of(&self, alpha: &[u32]) -> Result<f64> {
        self.moment(alpha)
    }
}

impl MomentSource for DistributionSpec {
    fn moment_dim(&self) -> usize {
        self.dim()
    }

    fn moment_of(&self, alpha: &[u32]) -> Result<f64> {
        self.moment(alpha)
    }
}

struct MomentCache<'a, S: MomentSource + ?Sized> {
    source: &'a S,
    cache: HashMap<MultiIndex, f64>,
}

impl<'a, S: MomentSource + ?Sized> MomentCache<'a, S> {
    fn new(source: &'a S) -> Self {
        Self {
            source,
            cache: HashMap::new(),
        }
    }

    fn get(&mut self, alpha: &MultiIndex) -> Result<f64> {
        if let Some(v) = self.cache.get(alpha) {
            return Ok(*v);
        }
        let v = self.source.moment_of(alpha.components())?;
        self.cache.insert(alpha.clone(), v);
        Ok(v)
    }
}

/// The marginal-only part `M_{r,k}(mu, nu)`: every factor of a marginal-only
/// term is a moment of a single marginal.
pub fn marginal_value<A, B>(exp: &KernelExpansion, mu: &A, nu: &B) -> Result<f64>
where
    A: MomentSource + ?Sized,
    B: MomentSource + ?Sized,
{
    exp.check_dims(mu.moment_dim(), nu.moment_dim())?;
    let mut mx = MomentCache::new(mu);
    let mut my = MomentCache::new(nu);
    let mut factor = |a: &MultiIndex, g: &MultiIndex| -> Result<f64> {
        match (a.is_zero(), g.is_zero()) {
            (true, true) => Ok(1.0),
            (false, true) => mx.get(a),
            (true, false) => my.get(g),
            (false, false) => unreachable!("coupling factor in a marginal-only term"),
        }
    };
    let mut parts = Vec::new();
    for t in exp.marginal_terms() {
        let f1 = factor(&t.alpha, &t.gamma)?;
        let f2 = factor(&t.beta, &t.delta)?;
        parts.push(t.coeff * f1 * f2);
    }
    Ok(neumaier_sum(parts))
}

/// Mixed moments `M_{alpha,gamma}(pi)` of a coupling, cached by key.
pub struct MixedMoments<'a> {
    mu: &'a DiscreteMeasure,
    nu: &'a DiscreteMeasure,
    pi: &'a Coupling,
    x_cache: HashMap<MultiIndex, Vec<f64>>,
    y_cache: HashMap<MultiIndex, Vec<f64>>,
    cache: HashMap<(MultiIndex, MultiIndex), f64>,
}

impl<'a> MixedMoments<'a> {
    pub fn new(mu: &'a DiscreteMeasure, nu: &'a DiscreteMeasure, pi: &'a Coupling) -> Result<Self> {
        if pi.rows() != mu.len() || pi.cols() != nu.len() {
            return Err(GwError::DimensionMismatch {
                expected: mu.len() * nu.len(),
                found: pi.rows() * pi.cols(),
            });
        }
        Ok(Self {
            mu,
            nu,
            pi,
            x_cache: HashMap::new(),
            y_cache: HashMap::new(),
            cache: HashMap::new(),
        })
    }

    pub fn get(&mut self, alpha: &MultiIndex, gamma: &MultiIndex) -> f64 {
        let key = (alpha.clone(), gamma.clone());
        if let Some(v) = self.cache.get(&key) {
            return *v;
        }
        let mu = self.mu;
        let nu = self.nu;
        let xs = self
            .x_cache
            .entry(alpha.clone())
            .or_insert_with(|| mu.atoms().iter().map(|x| alpha.eval(x)).collect());
        let ys = self
            .y_cache
            .entry(gamma.clone())
            .or_insert_with(|| nu.atoms().iter().map(|y| gamma.eval(y)).collect());
        let pi = self.pi;
        let v = neumaier_sum((0..xs.len()).flat_map(|i| {
            let xi = xs[i];
            ys.iter()
                .enumerate()
                .map(move |(j, yj)| pi.get(i, j) * xi * yj)
        }));
        self.cache.insert(key, v);
        v
    }
}

/// `Q_{r,k}(pi)`: the sum of the coupling terms, evaluated term by term.
pub fn coupling_value_direct(
    exp: &KernelExpansion,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    pi: &Coupling,
) -> Result<f64> {
    exp.check_dims(mu.dim(), nu.dim())?;
    let mut mm = MixedMoments::new(mu, nu, pi)?;
    let parts: Vec<f64> = exp
        .coupling_terms()
        .map(|t| t.coeff * mm.get(&t.alpha, &t.gamma) * mm.get(&t.beta, &t.delta))
        .collect();
    Ok(neumaier_sum(parts))
}

/// Marginal tolerance accepted by [`gw_objective_bruteforce`].
pub const OBJECTIVE_MARGINAL_TOL: f64 = 1e-10;

/// The quadruple sum
/// `sum_{i,j,i',j'} pi_ij pi_i'j' (|x_i - x_i'|^{2k} - |y_j - y_j'|^{2k})^{2r}`.
pub fn gw_objective_bruteforce(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    pi: &Coupling,
    r: u32,
    k: u32,
) -> Result<f64> {
    let dev = pi.marginal_deviation(mu.weights(), nu.weights())?;
    if dev > OBJECTIVE_MARGINAL_TOL {
        return Err(GwError::MarginalMismatch { deviation: dev });
    }
    Ok(gw_objective_unchecked(mu, nu, pi, r, k))
}

/// [`gw_objective_bruteforce`] without the marginal check.
pub fn gw_objective_unchecked(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    pi: &Coupling,
    r: u32,
    k: u32,
) -> f64 {
    let nx = mu.len();
    let ny = nu.len();
    let dx: Vec<f64> = (0..nx * nx)
        .map(|p| sq_dist(mu.atom(p / nx), mu.atom(p % nx)).powi(k as i32))
        .collect();
    let dy: Vec<f64> = (0..ny * ny)
        .map(|p| sq_dist(nu.atom(p / ny), nu.atom(p % ny)).powi(k as i32))
        .collect();
    let mut parts = Vec::with_capacity(nx * ny);
    for i in 0..nx {
        for j in 0..ny {
            let pij = pi.get(i, j);
            if pij == 0.0 {
                continue;
            }
            let mut inner = 0.0;
            for ip in 0..nx {
                let a = dx[i * nx + ip];
                for jp in 0..ny {
                    let w = pi.get(ip, jp);
                    if w != 0.0 {
                        inner += w * (a - dy[j * ny + jp]).powi(2 * r as i32);
                    }
                }
            }
            parts.push(pij * inner);
        }
    }
    neumaier_sum(parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::rel_err;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mi(v: &[u32]) -> MultiIndex {
        MultiIndex(v.to_vec())
    }

    fn rand_point(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn norm_power_d1_k1() {
        let t = expand_norm_power(1, 1).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t[&(mi(&[2]), mi(&[0]))], 1.0);
        assert_eq!(t[&(mi(&[1]), mi(&[1]))], -2.0);
        assert_eq!(t[&(mi(&[0]), mi(&[2]))], 1.0);
    }

    #[test]
    fn norm_power_d2_k1_has_six_terms() {
        let t = expand_norm_power(2, 1).unwrap();
        assert_eq!(t.len(), 6);
        assert_eq!(t[&(mi(&[0, 1]), mi(&[0, 1]))], -2.0);
        assert_eq!(t[&(mi(&[2, 0]), mi(&[0, 0]))], 1.0);
    }

    #[test]
    fn norm_power_d1_k2_matches_binomial_theorem() {
        let t = expand_norm_power(1, 2).unwrap();
        // (x - x')^4 = sum_j C(4, j) x^{4-j} (-x')^j
        for j in 0..=4u32 {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            let expected = sign * binomial(4, j) as f64;
            assert_eq!(t[&(mi(&[4 - j]), mi(&[j]))], expected);
        }
        assert_eq!(t.len(), 5);
    }

    #[test]
    fn kernel_1111_point_values() {
        let e = expand_kernel(1, 1, 1, 1).unwrap();
        assert_eq!(e.eval(&[1.0], &[0.0], &[0.0], &[0.0]), 1.0);
        assert_eq!(e.eval(&[1.0], &[0.0], &[1.0], &[0.0]), 0.0);
    }

    #[test]
    fn expansion_matches_direct_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(r, k, dx, dy) in &[(1, 1, 1, 1), (1, 2, 2, 1), (2, 1, 2, 3), (2, 2, 2, 2)] {
            let e = expand_kernel(r, k, dx, dy).unwrap();
            for _ in 0..50 {
                let (x, xp) = (rand_point(&mut rng, dx), rand_point(&mut rng, dx));
                let (y, yp) = (rand_point(&mut rng, dy), rand_point(&mut rng, dy));
                let direct = kernel_value_extended(r, k, &x, &xp, &y, &yp);
                let via = e.eval_extended(&x, &xp, &y, &yp);
                assert!(
                    (via - direct).abs() <= 1e-12 * direct.abs(),
                    "({r},{k},{dx},{dy}): {via} vs {direct}"
                );
                let plain = e.eval(&x, &xp, &y, &yp);
                let scale = e.eval_magnitude(&x, &xp, &y, &yp);
                assert!((plain - direct).abs() <= 1e-14 * scale);
            }
        }
    }

    #[test]
    fn term_structure_invariants() {
        let e = expand_kernel(2, 1, 2, 1).unwrap();
        for t in &e.terms {
            assert_eq!(t.alpha.order() + t.beta.order(), 2 * e.k * t.s);
            assert_eq!(t.gamma.order() + t.delta.order(), 2 * e.k * (2 * e.r - t.s));
            assert!(t.degree() <= e.degree());
            assert_eq!(
                t.marginal_only,
                (t.alpha.is_zero() || t.gamma.is_zero()) && (t.beta.is_zero() || t.delta.is_zero())
            );
            assert!(t.coeff != 0.0);
        }
        let keys: Vec<_> = e
            .terms
            .iter()
            .map(|t| (t.s, &t.alpha, &t.beta, &t.gamma, &t.delta))
            .collect();
        assert!(
            keys.windows(2).all(|w| w[0] < w[1]),
            "terms sorted and unique"
        );
    }

    #[test]
    fn term_cap_is_enforced() {
        let err = expand_kernel_with(2, 2, 3, 3, ExpansionLimits { term_cap: 1000 }).unwrap_err();
        assert!(matches!(
            err,
            GwError::TermCap {
                r: 2,
                k: 2,
                d_x: 3,
                d_y: 3,
                ..
            }
        ));
        assert!(err.to_string().contains("cap"));
    }

    #[test]
    fn norm_power_size_counts_table_entries() {
        for d in 1..=3 {
            for k in 1..=2 {
                let tables = norm_power_tables(d, k, 3, 1).unwrap();
                for (s, t) in tables.iter().enumerate() {
                    assert_eq!(t.len(), norm_power_size(d, k as usize * s), "d={d} k={k} s={s}");
                }
            }
        }
    }

    #[test]
    fn oversized_request_fails_fast() {
        let t = std::time::Instant::now();
        let err = expand_kernel(3, 3, 5, 5).unwrap_err();
        assert!(err.is_cap());
        assert!(t.elapsed() < std::time::Duration::from_secs(1));
    }

    #[test]
    fn marginal_of_diracs_vanishes() {
        let e = expand_kernel(1, 1, 1, 1).unwrap();
        let d = DiscreteMeasure::dirac_origin(1).unwrap();
        assert_eq!(marginal_value(&e, &d, &d).unwrap(), 0.0);
        let pi = Coupling::product(&[1.0], &[1.0]);
        assert_eq!(coupling_value_direct(&e, &d, &d, &pi).unwrap(), 0.0);
    }

    #[test]
    fn two_point_against_dirac() {
        // mu = (3/4) delta_0 + (1/4) delta_1, nu = delta_0: the only coupling is
        // mu (x) delta_0 and the value is 2 p (1 - p) R^{4kr} = 3/8.
        let mu = DiscreteMeasure::new(1, vec![vec![0.0], vec![1.0]], vec![0.75, 0.25]).unwrap();
        let nu = DiscreteMeasure::dirac_origin(1).unwrap();
        let e = expand_kernel(1, 1, 1, 1).unwrap();
        let pi = Coupling::product(mu.weights(), nu.weights());
        let m = marginal_value(&e, &mu, &nu).unwrap();
        let q = coupling_value_direct(&e, &mu, &nu, &pi).unwrap();
        assert!((m + q - 0.375).abs() < 1e-15);
        let brute = gw_objective_bruteforce(&mu, &nu, &pi, 1, 1).unwrap();
        assert!((brute - 0.375).abs() < 1e-15);
    }

    #[test]
    fn dirac_second_marginal_gives_mu_moment() {
        // With nu = delta_0 the objective is the double integral of |x - x'|^{4kr}.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec<f64>> = (0..4).map(|_| rand_point(&mut rng, 2)).collect();
        let mu = DiscreteMeasure::empirical(pts.clone()).unwrap();
        let nu = DiscreteMeasure::dirac_origin(1).unwrap();
        for &(r, k) in &[(1, 1), (1, 2), (2, 1)] {
            let e = expand_kernel(r, k, 2, 1).unwrap();
            let pi = Coupling::product(mu.weights(), nu.weights());
            let total = marginal_value(&e, &mu, &nu).unwrap()
                + coupling_value_direct(&e, &mu, &nu, &pi).unwrap();
            let mut direct = 0.0;
            for a in &pts {
                for b in &pts {
                    direct += sq_dist(a, b).powi((2 * k * r) as i32) / 16.0;
                }
            }
            assert!(rel_err(total, direct) < 1e-12);
        }
    }

    #[test]
    fn identity_coupling_of_equal_measures_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mu =
            DiscreteMeasure::empirical((0..4).map(|_| rand_point(&mut rng, 2)).collect()).unwrap();
        let pi = Coupling::from_fn(4, 4, |i, j| if i == j { 0.25 } else { 0.0 });
        assert_eq!(gw_objective_bruteforce(&mu, &mu, &pi, 2, 1).unwrap(), 0.0);
        let bad = Coupling::from_fn(4, 4, |i, j| if i == j { 0.3 } else { 0.0 });
        assert!(matches!(
            gw_objective_bruteforce(&mu, &mu, &bad, 1, 1),
            Err(GwError::MarginalMismatch { .. })
        ));
    }

    #[test]
    fn marginal_part_symmetric_under_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mu =
            DiscreteMeasure::empirical((0..3).map(|_| rand_point(&mut rng, 2)).collect()).unwrap();
        let nu =
            DiscreteMeasure::empirical((0..5).map(|_| rand_point(&mut rng, 1)).collect()).unwrap();
        for &(r, k) in &[(1, 1), (2, 1), (1, 2)] {
            let a = marginal_value(&expand_kernel(r, k, 2, 1).unwrap(), &mu, &nu).unwrap();
            let b = marginal_value(&expand_kernel(r, k, 1, 2).unwrap(), &nu, &mu).unwrap();
            assert!(rel_err(a, b) < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let e = expand_kernel(1, 1, 2, 2).unwrap();
        let d1 = DiscreteMeasure::dirac_origin(1).unwrap();
        let d2 = DiscreteMeasure::dirac_origin(2).unwrap();
        assert!(matches!(
            marginal_value(&e, &d1, &d2),
            Err(GwError::DimensionMismatch { .. })
        ));
    }
}
