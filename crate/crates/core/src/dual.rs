//! Quadratic form of the coupling terms, its spectral splitting into signed
//! polynomial costs, and the parameter boxes of the dual representation.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{GwError, Result};
use crate::linalg::{jacobi_eigen, normalize_sign};
use crate::measure::DiscreteMeasure;
use crate::numeric::{neumaier_sum, Matrix};
use crate::ot::{c_transform, Coupling};
use crate::poly::{KernelExpansion, MultiIndex};

/// Default cap on the number of mixed basis monomials.
pub const DEFAULT_BASIS_CAP: usize = 40_000;

/// Default relative threshold below which eigenvalues count as zero.
pub const DEFAULT_ZERO_TOL: f64 = 1e-9;

/// Mixed monomials `h_j(x, y) = x^alpha y^gamma`, starting with the constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedBasis {
    pub d_x: usize,
    pub d_y: usize,
    pub entries: Vec<(MultiIndex, MultiIndex)>,
}

impl MixedBasis {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn eval(&self, j: usize, x: &[f64], y: &[f64]) -> f64 {
        let (a, g) = &self.entries[j];
        a.eval(x) * g.eval(y)
    }

    /// Dense table `H[j][i * n_y + l] = h_j(x_i, y_l)`.
    pub fn table(&self, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> BasisTable {
        let mut xcache: HashMap<&MultiIndex, Vec<f64>> = HashMap::new();
        let mut ycache: HashMap<&MultiIndex, Vec<f64>> = HashMap::new();
        let cells = xs.len() * ys.len();
        let mut data = Vec::with_capacity(self.len() * cells);
        for (a, g) in &self.entries {
            let xa = xcache
                .entry(a)
                .or_insert_with(|| xs.iter().map(|x| a.eval(x)).collect());
            let yg = ycache
                .entry(g)
                .or_insert_with(|| ys.iter().map(|y| g.eval(y)).collect());
            for &xv in xa.iter() {
                for &yv in yg.iter() {
                    data.push(xv * yv);
                }
            }
        }
        BasisTable {
            n_x: xs.len(),
            n_y: ys.len(),
            size: self.len(),
            data,
        }
    }
}

/// Basis monomials evaluated on a product grid.
#[derive(Debug, Clone)]
pub struct BasisTable {
    pub n_x: usize,
    pub n_y: usize,
    pub size: usize,
    data: Vec<f64>,
}

impl BasisTable {
    pub fn cells(&self) -> usize {
        self.n_x * self.n_y
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let c = self.cells();
        &self.data[j * c..(j + 1) * c]
    }

    /// `u(pi)_j = sum_cells pi * h_j`.
    pub fn moments(&self, pi: &[f64]) -> Vec<f64> {
        (0..self.size)
            .map(|j| neumaier_sum(self.row(j).iter().zip(pi).map(|(h, p)| h * p)))
            .collect()
    }

    /// The function `sum_j g_j h_j` on the grid, as an `n_x x n_y` matrix.
    pub fn combine(&self, g: &[f64]) -> Matrix {
        let c = self.cells();
        let mut out = vec![0.0; c];
        for (j, &gj) in g.iter().enumerate() {
            if gj == 0.0 {
                continue;
            }
            for (o, h) in out.iter_mut().zip(self.row(j)) {
                *o += gj * h;
            }
        }
        Matrix {
            rows: self.n_x,
            cols: self.n_y,
            data: out,
        }
    }
}

/// `Q(pi) = u(pi)^T C u(pi)` with `C` symmetric, stored as its upper triangle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadraticForm {
    pub basis: MixedBasis,
    upper: BTreeMap<(usize, usize), f64>,
}

impl QuadraticForm {
    pub fn size(&self) -> usize {
        self.basis.len()
    }

    /// Symmetric matrix entry `C[a][b]`.
    pub fn entry(&self, a: usize, b: usize) -> f64 {
        let key = if a <= b { (a, b) } else { (b, a) };
        self.upper.get(&key).copied().unwrap_or(0.0)
    }

    pub fn nonzeros(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.upper.iter().map(|(k, v)| (*k, *v))
    }

    pub fn dense(&self) -> Matrix {
        let n = self.size();
        let mut m = Matrix::zeros(n, n);
        for (&(a, b), &v) in &self.upper {
            m.set(a, b, v);
            m.set(b, a, v);
        }
        m
    }

    pub fn frobenius(&self) -> f64 {
        self.upper
            .iter()
            .map(|(&(a, b), v)| if a == b { v * v } else { 2.0 * v * v })
            .sum::<f64>()
            .sqrt()
    }

    /// `C u`.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.size()];
        for (&(a, b), &v) in &self.upper {
            out[a] += v * u[b];
            if a != b {
                out[b] += v * u[a];
            }
        }
        out
    }

    /// `u^T C w`.
    pub fn bilinear(&self, u: &[f64], w: &[f64]) -> f64 {
        neumaier_sum(self.upper.iter().map(|(&(a, b), &v)| {
            if a == b {
                v * u[a] * w[a]
            } else {
                v * (u[a] * w[b] + u[b] * w[a])
            }
        }))
    }

    pub fn value(&self, u: &[f64]) -> f64 {
        self.bilinear(u, u)
    }

    /// `u(pi)` for a coupling between two measures.
    pub fn moment_vector(
        &self,
        mu: &DiscreteMeasure,
        nu: &DiscreteMeasure,
        pi: &Coupling,
    ) -> Result<Vec<f64>> {
        self.check_dims(mu.dim(), nu.dim())?;
        Ok(self
            .basis
            .table(mu.atoms(), nu.atoms())
            .moments(pi.as_slice()))
    }

    pub fn check_dims(&self, d_x: usize, d_y: usize) -> Result<()> {
        if d_x != self.basis.d_x {
            return Err(GwError::DimensionMismatch {
                expected: self.basis.d_x,
                found: d_x,
            });
        }
        if d_y != self.basis.d_y {
            return Err(GwError::DimensionMismatch {
                expected: self.basis.d_y,
                found: d_y,
            });
        }
        Ok(())
    }

    /// Connected components of the nonzero pattern, each sorted, ordered by
    /// their smallest index. `C` is block diagonal over these.
    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let n = self.size();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                p[r] = p[p[r]];
                r = p[r];
            }
            r
        }
        for &(a, b) in self.upper.keys() {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..n {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(i);
        }
        groups.into_values().collect()
    }

    /// Test hook: scales every stored entry.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            basis: self.basis.clone(),
            upper: self.upper.iter().map(|(k, v)| (*k, v * factor)).collect(),
        }
    }
}

/// Assembles `C` from the coupling terms: each term scatters its coefficient
/// onto `(j1, j2) = ((alpha, gamma), (beta, delta))`, then `C = (C0 + C0^T) / 2`.
pub fn build_quadratic_form(exp: &KernelExpansion) -> Result<QuadraticForm> {
    build_quadratic_form_with(exp, DEFAULT_BASIS_CAP)
}

pub fn build_quadratic_form_with(exp: &KernelExpansion, basis_cap: usize) -> Result<QuadraticForm> {
    let zero = (MultiIndex::zero(exp.d_x), MultiIndex::zero(exp.d_y));
    let mut set: BTreeSet<(MultiIndex, MultiIndex)> = BTreeSet::new();
    for t in exp.coupling_terms() {
        set.insert((t.alpha.clone(), t.gamma.clone()));
        set.insert((t.beta.clone(), t.delta.clone()));
    }
    set.remove(&zero);
    let size = set.len() + 1;
    if size > basis_cap {
        return Err(GwError::BasisCap {
            size,
            cap: basis_cap,
        });
    }
    let mut entries = Vec::with_capacity(size);
    entries.push(zero);
    entries.extend(set);
    let index: HashMap<&(MultiIndex, MultiIndex), usize> =
        entries.iter().enumerate().map(|(i, e)| (e, i)).collect();

    let mut acc: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for t in exp.coupling_terms() {
        let j1 = index[&(t.alpha.clone(), t.gamma.clone())];
        let j2 = index[&(t.beta.clone(), t.delta.clone())];
        let key = (j1.min(j2), j1.max(j2));
        let c = if j1 == j2 { t.coeff } else { 0.5 * t.coeff };
        acc.entry(key).or_default().push(c);
    }
    let upper = acc
        .into_iter()
        .map(|(k, v)| (k, neumaier_sum(v)))
        .filter(|(_, v)| *v != 0.0)
        .collect();
    Ok(QuadraticForm {
        basis: MixedBasis {
            d_x: exp.d_x,
            d_y: exp.d_y,
            entries,
        },
        upper,
    })
}

/// Eigenvector supported on one block of `C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenPair {
    pub value: f64,
    pub support: Vec<usize>,
    pub coeffs: Vec<f64>,
}

/// Eigenpairs of a quadratic form. `C = sum_e lambda_e v_e v_e^T`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Spectrum {
    pub size: usize,
    pub pairs: Vec<EigenPair>,
    pub max_sweeps: usize,
}

impl Spectrum {
    pub fn max_abs_eigenvalue(&self) -> f64 {
        self.pairs.iter().fold(0.0, |m, p| m.max(p.value.abs()))
    }

    /// Dense `U` with eigenvectors as rows.
    pub fn dense_vectors(&self) -> Matrix {
        let mut u = Matrix::zeros(self.pairs.len(), self.size);
        for (e, p) in self.pairs.iter().enumerate() {
            for (&j, &c) in p.support.iter().zip(&p.coeffs) {
                u.set(e, j, c);
            }
        }
        u
    }

    /// `U^T diag(lambda) U`.
    pub fn reconstruct(&self) -> Matrix {
        let mut m = Matrix::zeros(self.size, self.size);
        for p in &self.pairs {
            for (a, &ia) in p.support.iter().enumerate() {
                for (b, &ib) in p.support.iter().enumerate() {
                    m.add(ia, ib, p.value * p.coeffs[a] * p.coeffs[b]);
                }
            }
        }
        m
    }

    /// Keeps eigenvalues with `|lambda| > zero_tol * max |lambda|`, ordered
    /// positive descending then negative ascending.
    pub fn truncated(&self, zero_tol: f64) -> Spectrum {
        let cut = zero_tol * self.max_abs_eigenvalue();
        let mut pairs: Vec<EigenPair> = self
            .pairs
            .iter()
            .filter(|p| p.value.abs() > cut && p.value != 0.0)
            .cloned()
            .collect();
        pairs.sort_by(compare_pairs);
        Spectrum {
            size: self.size,
            pairs,
            max_sweeps: self.max_sweeps,
        }
    }

    pub fn positive_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.value > 0.0).count()
    }
}

fn lexicographic(a: &EigenPair, b: &EigenPair) -> std::cmp::Ordering {
    let mut da: BTreeMap<usize, f64> = a
        .support
        .iter()
        .copied()
        .zip(a.coeffs.iter().copied())
        .collect();
    for (&j, &c) in b.support.iter().zip(&b.coeffs) {
        da.entry(j).or_insert(0.0);
        let _ = c;
    }
    let db: HashMap<usize, f64> = b
        .support
        .iter()
        .copied()
        .zip(b.coeffs.iter().copied())
        .collect();
    for (j, va) in da {
        let vb = db.get(&j).copied().unwrap_or(0.0);
        match va.total_cmp(&vb) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}

fn compare_pairs(a: &EigenPair, b: &EigenPair) -> std::cmp::Ordering {
    let class = |v: f64| if v > 0.0 { 0 } else { 1 };
    class(a.value)
        .cmp(&class(b.value))
        .then_with(|| {
            if a.value > 0.0 {
                b.value.total_cmp(&a.value)
            } else {
                a.value.total_cmp(&b.value)
            }
        })
        .then_with(|| lexicographic(a, b))
}

/// Full spectral decomposition, one cyclic Jacobi run per block of `C`.
pub fn spectral_decomposition(q: &QuadraticForm) -> Result<Spectrum> {
    let mut pairs = Vec::with_capacity(q.size());
    let mut max_sweeps = 0;
    for block in q.blocks() {
        let n = block.len();
        let local = Matrix::from_fn(n, n, |a, b| q.entry(block[a], block[b]));
        let eig = jacobi_eigen(&local)?;
        max_sweeps = max_sweeps.max(eig.sweeps);
        for e in 0..n {
            pairs.push(EigenPair {
                value: eig.values[e],
                support: block.clone(),
                coeffs: eig.vectors.row(e).to_vec(),
            });
        }
    }
    Ok(Spectrum {
        size: q.size(),
        pairs,
        max_sweeps,
    })
}

/// Nonzero eigenpairs in canonical order.
pub fn eigendecompose(q: &QuadraticForm, zero_tol: f64) -> Result<Spectrum> {
    if !(zero_tol >= 0.0) {
        return Err(GwError::param("zero_tol", "must be nonnegative"));
    }
    Ok(spectral_decomposition(q)?.truncated(zero_tol))
}

/// `P_i = sum_j coeffs[t] h_{support[t]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedPoly {
    pub support: Vec<usize>,
    pub coeffs: Vec<f64>,
}

/// Per-coordinate half-widths of the parameter boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boxes {
    pub plus: Vec<f64>,
    pub minus: Vec<f64>,
    pub basis_sup: Vec<f64>,
}

/// Signed polynomial costs `P_1..P_J`, with `P_1..P_ell` carrying positive
/// eigenvalues.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualCostFamily {
    pub basis: MixedBasis,
    pub polys: Vec<SignedPoly>,
    pub ell: usize,
    pub eigvals: Vec<f64>,
    pub boxes: Option<Boxes>,
}

impl DualCostFamily {
    /// `J`.
    pub fn len(&self) -> usize {
        self.polys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.polys.is_empty()
    }

    pub fn negative_count(&self) -> usize {
        self.len() - self.ell
    }

    pub fn eval_poly(&self, i: usize, x: &[f64], y: &[f64]) -> f64 {
        let p = &self.polys[i];
        neumaier_sum(
            p.support
                .iter()
                .zip(&p.coeffs)
                .map(|(&j, &c)| c * self.basis.eval(j, x, y)),
        )
    }

    /// Integrals `m_i(pi) = int P_i dpi` from the basis moment vector.
    pub fn integrals_from_moments(&self, u: &[f64]) -> Vec<f64> {
        self.polys
            .iter()
            .map(|p| neumaier_sum(p.support.iter().zip(&p.coeffs).map(|(&j, &c)| c * u[j])))
            .collect()
    }

    pub fn integrals(&self, mu: &DiscreteMeasure, nu: &DiscreteMeasure, pi: &Coupling) -> Vec<f64> {
        let table = self.basis.table(mu.atoms(), nu.atoms());
        self.integrals_from_moments(&table.moments(pi.as_slice()))
    }

    /// `sum_{i <= ell} m_i^2 - sum_{i > ell} m_i^2`.
    pub fn signed_sum(&self, m: &[f64]) -> f64 {
        neumaier_sum(
            m.iter()
                .enumerate()
                .map(|(i, v)| if i < self.ell { v * v } else { -v * v }),
        )
    }

    pub fn split<'a>(&self, theta: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        theta.split_at(self.ell)
    }

    /// Largest `|P_i|` over the grid, i.e. the constant `C_basis`.
    pub fn basis_constant(&self) -> Option<f64> {
        self.boxes
            .as_ref()
            .map(|b| b.basis_sup.iter().fold(0.0, |m: f64, v| m.max(*v)))
    }

    /// Lipschitz constant of `theta -> c_theta` in sup norm, `max(1, C_basis sqrt(J))`.
    pub fn l_par(&self) -> Option<f64> {
        self.basis_constant()
            .map(|c| (c * (self.len() as f64).sqrt()).max(1.0))
    }

    fn check_params(&self, u: &[f64], v: &[f64], strict: bool) -> Result<(Vec<f64>, Vec<f64>)> {
        if u.len() != self.ell {
            return Err(GwError::DimensionMismatch {
                expected: self.ell,
                found: u.len(),
            });
        }
        if v.len() != self.negative_count() {
            return Err(GwError::DimensionMismatch {
                expected: self.negative_count(),
                found: v.len(),
            });
        }
        let Some(b) = &self.boxes else {
            return Ok((u.to_vec(), v.to_vec()));
        };
        let clamp = |vals: &[f64], widths: &[f64], offset: usize| -> Result<Vec<f64>> {
            vals.iter()
                .zip(widths)
                .enumerate()
                .map(|(i, (&x, &w))| {
                    // Relative slack absorbs round-off between the two
                    // evaluation orders of m_i and sup |P_i|.
                    if x.abs() <= w * (1.0 + 1e-12) {
                        Ok(x)
                    } else if strict {
                        Err(GwError::OutsideBox {
                            index: offset + i,
                            value: x,
                            half_width: w,
                        })
                    } else {
                        Ok(x.clamp(-w, w))
                    }
                })
                .collect()
        };
        Ok((clamp(u, &b.plus, 0)?, clamp(v, &b.minus, self.ell)?))
    }

    /// Coefficients of `c_{u,v}` in the mixed basis.
    fn combined_coeffs(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.basis.len()];
        for (i, p) in self.polys.iter().enumerate() {
            let w = if i < self.ell { u[i] } else { -v[i - self.ell] };
            if w == 0.0 {
                continue;
            }
            for (&j, &c) in p.support.iter().zip(&p.coeffs) {
                g[j] += w * c;
            }
        }
        g
    }

    /// `c_{u,v}(x, y) = sum u_i P_i - sum v_j P_{ell+j}`. Out-of-box
    /// parameters are clamped, or rejected when `strict`.
    pub fn cost_eval(
        &self,
        u: &[f64],
        v: &[f64],
        x: &[f64],
        y: &[f64],
        strict: bool,
    ) -> Result<f64> {
        let (u, v) = self.check_params(u, v, strict)?;
        let mut parts = Vec::with_capacity(self.len());
        for i in 0..self.len() {
            let w = if i < self.ell { u[i] } else { -v[i - self.ell] };
            if w != 0.0 {
                parts.push(w * self.eval_poly(i, x, y));
            }
        }
        Ok(neumaier_sum(parts))
    }

    /// `c_{u,v}` on a product grid.
    pub fn cost_matrix(
        &self,
        u: &[f64],
        v: &[f64],
        table: &BasisTable,
        strict: bool,
    ) -> Result<Matrix> {
        let (u, v) = self.check_params(u, v, strict)?;
        Ok(table.combine(&self.combined_coeffs(&u, &v)))
    }

    /// Each `P_i` on a product grid, as rows of length `n_x * n_y`.
    pub fn poly_grid(&self, table: &BasisTable) -> Vec<Vec<f64>> {
        let cells = table.cells();
        self.polys
            .iter()
            .map(|p| {
                let mut out = vec![0.0; cells];
                for (&j, &c) in p.support.iter().zip(&p.coeffs) {
                    for (o, h) in out.iter_mut().zip(table.row(j)) {
                        *o += c * h;
                    }
                }
                out
            })
            .collect()
    }

    /// Sets boxes from exact support suprema of `|P_i|` over `xs x ys`.
    pub fn attach_boxes(&mut self, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<()> {
        if xs.is_empty() || ys.is_empty() {
            return Err(GwError::Empty("support for box construction"));
        }
        let table = self.basis.table(xs, ys);
        let basis_sup: Vec<f64> = self
            .poly_grid(&table)
            .iter()
            .map(|row| row.iter().fold(0.0, |m: f64, v| m.max(v.abs())))
            .collect();
        let half: Vec<f64> = basis_sup.iter().map(|c| c / 2.0).collect();
        let (plus, minus) = half.split_at(self.ell);
        self.boxes = Some(Boxes {
            plus: plus.to_vec(),
            minus: minus.to_vec(),
            basis_sup,
        });
        Ok(())
    }

    /// Copy with every box half-width multiplied by `factor`.
    pub fn with_scaled_boxes(&self, factor: f64) -> Self {
        let mut out = self.clone();
        if let Some(b) = &mut out.boxes {
            b.plus.iter_mut().for_each(|w| *w *= factor);
            b.minus.iter_mut().for_each(|w| *w *= factor);
        }
        out
    }

    /// `C_theta f(y) = min_x (c_theta(x, y) - f(x))` on a grid.
    pub fn c_transform(
        &self,
        u: &[f64],
        v: &[f64],
        f: &[f64],
        table: &BasisTable,
    ) -> Result<Vec<f64>> {
        let cost = self.cost_matrix(u, v, table, false)?;
        c_transform(&cost, f)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let polys: Vec<serde_json::Value> = self
            .polys
            .iter()
            .map(|p| {
                let terms: Vec<serde_json::Value> = p
                    .support
                    .iter()
                    .zip(&p.coeffs)
                    .map(|(&j, &c)| {
                        let (a, g) = &self.basis.entries[j];
                        serde_json::json!({ "alpha": a, "gamma": g, "coeff": c })
                    })
                    .collect();
                serde_json::Value::Array(terms)
            })
            .collect();
        serde_json::json!({
            "basis_size": self.basis.len(),
            "J": self.len(),
            "ell": self.ell,
            "eigvals": self.eigvals,
            "polys": polys,
            "boxes": self.boxes,
        })
    }
}

/// Builds the signed family from a truncated spectrum, without boxes.
pub fn family_from_spectrum(q: &QuadraticForm, spec: &Spectrum) -> DualCostFamily {
    let mut polys = Vec::with_capacity(spec.pairs.len());
    let mut eigvals = Vec::with_capacity(spec.pairs.len());
    for p in &spec.pairs {
        let s = p.value.abs().sqrt();
        let mut coeffs: Vec<f64> = p.coeffs.iter().map(|c| s * c).collect();
        normalize_sign(&mut coeffs);
        polys.push(SignedPoly {
            support: p.support.clone(),
            coeffs,
        });
        eigvals.push(p.value);
    }
    DualCostFamily {
        basis: q.basis.clone(),
        polys,
        ell: spec.positive_count(),
        eigvals,
        boxes: None,
    }
}

/// Full construction: eigendecomposition, signed polynomials, and boxes over
/// `supp_x x supp_y`.
pub fn build_cost_family(
    q: &QuadraticForm,
    supp_x: &[Vec<f64>],
    supp_y: &[Vec<f64>],
    zero_tol: f64,
) -> Result<DualCostFamily> {
    let spec = eigendecompose(q, zero_tol)?;
    let mut fam = family_from_spectrum(q, &spec);
    fam.attach_boxes(supp_x, supp_y)?;
    Ok(fam)
}
