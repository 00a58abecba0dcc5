//! Exact discrete optimal transport: a transportation-problem network
//! simplex with Kantorovich potentials, and c-transforms on finite grids.

use serde::{Deserialize, Serialize};

use crate::error::{GwError, Result};
use crate::numeric::{neumaier_sum, Matrix};

/// Nonnegative matrix whose row and column sums are the two marginals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Coupling {
    mass: Matrix,
}

impl Coupling {
    /// Wraps a matrix, clamping entries in `[-1e-14, 0)` to zero.
    pub fn new(mut mass: Matrix) -> Result<Self> {
        for v in &mut mass.data {
            if *v < 0.0 {
                if *v < -1e-14 {
                    return Err(GwError::InvalidParameter {
                        name: "coupling",
                        reason: format!("negative mass {v}"),
                    });
                }
                *v = 0.0;
            }
        }
        Ok(Self { mass })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> f64) -> Self {
        Self::new(Matrix::from_fn(rows, cols, f)).expect("generator yields nonnegative mass")
    }

    /// The independent coupling `a (x) b`.
    pub fn product(a: &[f64], b: &[f64]) -> Self {
        Self::from_fn(a.len(), b.len(), |i, j| a[i] * b[j])
    }

    pub fn rows(&self) -> usize {
        self.mass.rows
    }

    pub fn cols(&self) -> usize {
        self.mass.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.mass.get(i, j)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.mass
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.mass.data
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.mass.row_sums()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        self.mass.col_sums()
    }

    /// Largest absolute deviation of either marginal from `(a, b)`.
    pub fn marginal_deviation(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != self.rows() || b.len() != self.cols() {
            return Err(GwError::DimensionMismatch {
                expected: a.len() * b.len(),
                found: self.rows() * self.cols(),
            });
        }
        let dr = self
            .row_sums()
            .iter()
            .zip(a)
            .fold(0.0f64, |m, (s, w)| m.max((s - w).abs()));
        let dc = self
            .col_sums()
            .iter()
            .zip(b)
            .fold(0.0f64, |m, (s, w)| m.max((s - w).abs()));
        Ok(dr.max(dc))
    }

    /// `(1 - t) self + t other`.
    pub fn lerp(&self, other: &Coupling, t: f64) -> Coupling {
        let data = self
            .mass
            .data
            .iter()
            .zip(&other.mass.data)
            .map(|(a, b)| ((1.0 - t) * a + t * b).max(0.0))
            .collect();
        Coupling {
            mass: Matrix {
                rows: self.rows(),
                cols: self.cols(),
                data,
            },
        }
    }

    /// `sum_ij pi_ij c_ij`.
    pub fn integrate(&self, cost: &Matrix) -> f64 {
        neumaier_sum(self.mass.data.iter().zip(&cost.data).map(|(p, c)| p * c))
    }
}

/// Optimal plan together with a pair of optimal dual potentials.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OTSolution {
    pub value: f64,
    pub plan: Coupling,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
}

impl OTSolution {
    /// `sum mu_i phi_i + sum nu_j psi_j`.
    pub fn dual_value(&self, mu_w: &[f64], nu_w: &[f64]) -> f64 {
        neumaier_sum(
            self.phi
                .iter()
                .zip(mu_w)
                .map(|(p, w)| p * w)
                .chain(self.psi.iter().zip(nu_w).map(|(p, w)| p * w)),
        )
    }

    /// Largest violation of `phi_i + psi_j <= c_ij` (zero when feasible).
    pub fn feasibility_violation(&self, cost: &Matrix) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..cost.rows {
            for j in 0..cost.cols {
                worst = worst.max(self.phi[i] + self.psi[j] - cost.get(i, j));
            }
        }
        worst
    }

    /// Largest `|phi_i + psi_j - c_ij|` over cells carrying mass above `mass_tol`.
    pub fn slackness_violation(&self, cost: &Matrix, mass_tol: f64) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..cost.rows {
            for j in 0..cost.cols {
                if self.plan.get(i, j) > mass_tol {
                    worst = worst.max((self.phi[i] + self.psi[j] - cost.get(i, j)).abs());
                }
            }
        }
        worst
    }
}

fn check_probability(w: &[f64], name: &str) -> Result<()> {
    if w.is_empty() {
        return Err(GwError::InfeasibleWeights(format!("{name} is empty")));
    }
    if let Some(v) = w.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(GwError::InfeasibleWeights(format!("{name} has entry {v}")));
    }
    let total = neumaier_sum(w.iter().copied());
    if (total - 1.0).abs() > 1e-9 {
        return Err(GwError::InfeasibleWeights(format!(
            "{name} sums to {total}"
        )));
    }
    Ok(())
}

/// Solves `min_{pi in Pi(a, b)} <pi, cost>` exactly.
///
/// Zero-weight atoms are removed before pivoting and reinserted with zero
/// mass; their potentials are filled in by c-transforms so that dual
/// feasibility holds on the whole grid. Potentials are shifted so that
/// `phi[0] = 0`.
pub fn solve_ot(cost: &Matrix, mu_w: &[f64], nu_w: &[f64]) -> Result<OTSolution> {
    if cost.rows != mu_w.len() || cost.cols != nu_w.len() {
        return Err(GwError::DimensionMismatch {
            expected: mu_w.len() * nu_w.len(),
            found: cost.rows * cost.cols,
        });
    }
    check_probability(mu_w, "first marginal")?;
    check_probability(nu_w, "second marginal")?;
    if cost.data.iter().any(|c| !c.is_finite()) {
        return Err(GwError::param("cost", "entries must be finite"));
    }

    let rows: Vec<usize> = (0..cost.rows).filter(|&i| mu_w[i] > 0.0).collect();
    let cols: Vec<usize> = (0..cost.cols).filter(|&j| nu_w[j] > 0.0).collect();
    let sub_cost = Matrix::from_fn(rows.len(), cols.len(), |i, j| cost.get(rows[i], cols[j]));
    let a: Vec<f64> = rows.iter().map(|&i| mu_w[i]).collect();
    let b: Vec<f64> = cols.iter().map(|&j| nu_w[j]).collect();
    let total_a = neumaier_sum(a.iter().copied());
    let total_b = neumaier_sum(b.iter().copied());
    // Feed the simplex exactly balanced supplies.
    let b: Vec<f64> = b.iter().map(|v| v * total_a / total_b).collect();

    let sol = NetworkSimplex::new(&sub_cost, &a, &b).run()?;

    let mut plan = Matrix::zeros(cost.rows, cost.cols);
    for (si, &i) in rows.iter().enumerate() {
        for (sj, &j) in cols.iter().enumerate() {
            plan.set(i, j, sol.flow.get(si, sj));
        }
    }
    let mut phi = vec![f64::NAN; cost.rows];
    let mut psi = vec![f64::NAN; cost.cols];
    for (si, &i) in rows.iter().enumerate() {
        phi[i] = sol.u[si];
    }
    for (sj, &j) in cols.iter().enumerate() {
        psi[j] = sol.v[sj];
    }
    for j in 0..cost.cols {
        if psi[j].is_nan() {
            psi[j] = rows
                .iter()
                .map(|&i| cost.get(i, j) - phi[i])
                .fold(f64::INFINITY, f64::min);
        }
    }
    for i in 0..cost.rows {
        if phi[i].is_nan() {
            phi[i] = (0..cost.cols)
                .map(|j| cost.get(i, j) - psi[j])
                .fold(f64::INFINITY, f64::min);
        }
    }
    let shift = phi[0];
    phi.iter_mut().for_each(|p| *p -= shift);
    psi.iter_mut().for_each(|p| *p += shift);

    let plan = Coupling::new(plan)?;
    let value = plan.integrate(cost);
    Ok(OTSolution {
        value,
        plan,
        phi,
        psi,
    })
}

struct SimplexOutput {
    flow: Matrix,
    u: Vec<f64>,
    v: Vec<f64>,
}

/// Transportation simplex on the complete bipartite graph. Nodes `0..m` are
/// supplies (rows), `m..m+n` demands (columns). The basis is a spanning tree
/// of `m + n - 1` cells.
struct NetworkSimplex<'a> {
    cost: &'a Matrix,
    a: &'a [f64],
    b: &'a [f64],
    m: usize,
    n: usize,
    basis: Vec<(usize, usize)>,
    basic: Vec<bool>,
    flow: Matrix,
    u: Vec<f64>,
    v: Vec<f64>,
    tol: f64,
}

/// Consecutive degenerate pivots tolerated before switching to Bland's rule.
const DEGENERATE_SWITCH: usize = 64;

impl<'a> NetworkSimplex<'a> {
    fn new(cost: &'a Matrix, a: &'a [f64], b: &'a [f64]) -> Self {
        let m = a.len();
        let n = b.len();
        let scale = cost.max_abs().max(1.0);
        let mut s = Self {
            cost,
            a,
            b,
            m,
            n,
            basis: Vec::with_capacity(m + n - 1),
            basic: vec![false; m * n],
            flow: Matrix::zeros(m, n),
            u: vec![0.0; m],
            v: vec![0.0; n],
            tol: 1e-12 * scale,
        };
        s.northwest_corner();
        s
    }

    /// Staircase initial basis; always exactly `m + n - 1` cells.
    fn northwest_corner(&mut self) {
        let (m, n) = (self.m, self.n);
        let mut ra = self.a.to_vec();
        let mut rb = self.b.to_vec();
        let (mut i, mut j) = (0, 0);
        loop {
            let f = ra[i].min(rb[j]).max(0.0);
            self.flow.set(i, j, f);
            self.basic[i * n + j] = true;
            self.basis.push((i, j));
            ra[i] -= f;
            rb[j] -= f;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if j == n - 1 || (i < m - 1 && ra[i] <= rb[j]) {
                i += 1;
            } else {
                j += 1;
            }
        }
        debug_assert_eq!(self.basis.len(), m + n - 1);
        self.recompute_flows();
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.m + self.n];
        for &(i, j) in &self.basis {
            adj[i].push(self.m + j);
            adj[self.m + j].push(i);
        }
        adj
    }

    /// Tree order from root row 0: (node, parent) pairs in BFS order.
    fn tree_order(&self, adj: &[Vec<usize>]) -> Vec<(usize, usize)> {
        let total = self.m + self.n;
        let mut seen = vec![false; total];
        let mut order = Vec::with_capacity(total);
        seen[0] = true;
        order.push((0, usize::MAX));
        let mut head = 0;
        while head < order.len() {
            let (node, _) = order[head];
            head += 1;
            for &nb in &adj[node] {
                if !seen[nb] {
                    seen[nb] = true;
                    order.push((nb, node));
                }
            }
        }
        debug_assert_eq!(order.len(), total, "basis must be a spanning tree");
        order
    }

    fn compute_potentials(&mut self, adj: &[Vec<usize>]) {
        let m = self.m;
        for &(node, parent) in &self.tree_order(adj) {
            if parent == usize::MAX {
                self.u[node] = 0.0;
            } else if node < m {
                let j = parent - m;
                self.u[node] = self.cost.get(node, j) - self.v[j];
            } else {
                let j = node - m;
                self.v[j] = self.cost.get(parent, j) - self.u[parent];
            }
        }
    }

    /// Solves the basic flows from the tree by peeling leaves, which keeps
    /// the marginals exact up to one rounding per cell.
    fn recompute_flows(&mut self) {
        let (m, n) = (self.m, self.n);
        let adj = self.adjacency();
        let order = self.tree_order(&adj);
        let mut residual: Vec<f64> = self.a.iter().chain(self.b.iter()).copied().collect();
        for &(i, j) in &self.basis {
            self.flow.set(i, j, 0.0);
        }
        for &(node, parent) in order.iter().rev() {
            if parent == usize::MAX {
                continue;
            }
            let (i, j) = if node < m {
                (node, parent - m)
            } else {
                (parent, node - m)
            };
            let f = residual[node].max(0.0);
            self.flow.set(i, j, f);
            residual[parent] -= f;
            residual[node] -= f;
        }
        let _ = n;
    }

    fn reduced(&self, i: usize, j: usize) -> f64 {
        self.cost.get(i, j) - self.u[i] - self.v[j]
    }

    /// Block pricing: scan cyclically and take the most negative reduced cost
    /// of the first block that has one.
    fn price_block(&self, start: &mut usize) -> Option<(usize, usize)> {
        let total = self.m * self.n;
        let block = ((total as f64).sqrt().ceil() as usize).max(16).min(total);
        let mut best: Option<(usize, f64)> = None;
        let mut scanned = 0;
        let mut pos = *start;
        while scanned < total {
            let end = (scanned + block).min(total);
            while scanned < end {
                if !self.basic[pos] {
                    let rc = self.reduced(pos / self.n, pos % self.n);
                    if rc < -self.tol && best.is_none_or(|(_, b)| rc < b) {
                        best = Some((pos, rc));
                    }
                }
                pos += 1;
                if pos == total {
                    pos = 0;
                }
                scanned += 1;
            }
            if best.is_some() {
                break;
            }
        }
        *start = pos;
        best.map(|(p, _)| (p / self.n, p % self.n))
    }

    /// Bland's rule: the first cell in index order with negative reduced cost.
    fn price_bland(&self) -> Option<(usize, usize)> {
        (0..self.m * self.n)
            .find(|&p| !self.basic[p] && self.reduced(p / self.n, p % self.n) < -self.tol)
            .map(|p| (p / self.n, p % self.n))
    }

    /// Tree path from row `i` to column `j` as a list of cells.
    fn tree_path(&self, adj: &[Vec<usize>], i: usize, j: usize) -> Vec<(usize, usize)> {
        let total = self.m + self.n;
        let target = self.m + j;
        let mut parent = vec![usize::MAX; total];
        let mut seen = vec![false; total];
        let mut queue = std::collections::VecDeque::new();
        seen[i] = true;
        queue.push_back(i);
        while let Some(node) = queue.pop_front() {
            if node == target {
                break;
            }
            for &nb in &adj[node] {
                if !seen[nb] {
                    seen[nb] = true;
                    parent[nb] = node;
                    queue.push_back(nb);
                }
            }
        }
        let mut cells = Vec::new();
        let mut node = target;
        while node != i {
            let p = parent[node];
            let cell = if node < self.m {
                (node, p - self.m)
            } else {
                (p, node - self.m)
            };
            cells.push(cell);
            node = p;
        }
        cells.reverse();
        cells
    }

    fn run(mut self) -> Result<SimplexOutput> {
        let (m, n) = (self.m, self.n);
        let max_pivots = 50 * m * n + 10_000;
        let mut degenerate_run = 0usize;
        let mut bland = false;
        let mut cursor = 0usize;
        let mut pivots = 0usize;
        loop {
            let adj = self.adjacency();
            self.compute_potentials(&adj);
            let entering = if bland {
                self.price_bland()
            } else {
                self.price_block(&mut cursor)
            };
            let Some((ei, ej)) = entering else { break };
            pivots += 1;
            if pivots > max_pivots {
                return Err(GwError::PivotLimit(max_pivots));
            }
            // Cycle: entering cell gains theta; path cells alternate, the
            // first (in row ei) loses.
            let path = self.tree_path(&adj, ei, ej);
            let mut theta = f64::INFINITY;
            let mut leave = usize::MAX;
            for (t, &(pi, pj)) in path.iter().enumerate() {
                if t % 2 == 0 {
                    let f = self.flow.get(pi, pj);
                    let better = f < theta
                        || (f == theta
                            && bland
                            && (pi * n + pj) < {
                                let (li, lj) = path[leave];
                                li * n + lj
                            });
                    if better {
                        theta = f;
                        leave = t;
                    }
                }
            }
            let theta = theta.max(0.0);
            for (t, &(pi, pj)) in path.iter().enumerate() {
                let f = self.flow.get(pi, pj);
                let nf = if t % 2 == 0 { f - theta } else { f + theta };
                self.flow.set(pi, pj, nf.max(0.0));
            }
            self.flow.set(ei, ej, theta);
            let (li, lj) = path[leave];
            self.flow.set(li, lj, 0.0);
            self.basic[li * n + lj] = false;
            self.basic[ei * n + ej] = true;
            let slot = self
                .basis
                .iter()
                .position(|&c| c == (li, lj))
                .expect("leaving cell is basic");
            self.basis[slot] = (ei, ej);

            if theta <= 1e-15 {
                degenerate_run += 1;
                if degenerate_run > DEGENERATE_SWITCH * (m + n) {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
            }
        }
        self.recompute_flows();
        let _ = m;
        Ok(SimplexOutput {
            flow: self.flow,
            u: self.u,
            v: self.v,
        })
    }
}

/// `g(y) = min_x (c(x, y) - f(x))` over the rows of a cost matrix.
pub fn c_transform(cost: &Matrix, f: &[f64]) -> Result<Vec<f64>> {
    if cost.rows == 0 || cost.cols == 0 {
        return Err(GwError::Empty("c-transform grid"));
    }
    if f.len() != cost.rows {
        return Err(GwError::DimensionMismatch {
            expected: cost.rows,
            found: f.len(),
        });
    }
    Ok((0..cost.cols)
        .map(|j| {
            (0..cost.rows)
                .map(|i| cost.get(i, j) - f[i])
                .fold(f64::INFINITY, f64::min)
        })
        .collect())
}

/// `f(x) = min_y (c(x, y) - g(y))` over the columns of a cost matrix.
pub fn c_bar_transform(cost: &Matrix, g: &[f64]) -> Result<Vec<f64>> {
    if cost.rows == 0 || cost.cols == 0 {
        return Err(GwError::Empty("c-transform grid"));
    }
    if g.len() != cost.cols {
        return Err(GwError::DimensionMismatch {
            expected: cost.cols,
            found: g.len(),
        });
    }
    Ok((0..cost.rows)
        .map(|i| {
            (0..cost.cols)
                .map(|j| cost.get(i, j) - g[j])
                .fold(f64::INFINITY, f64::min)
        })
        .collect())
}

/// Checks `OT(t c1 + (1 - t) c2) >= t OT(c1) + (1 - t) OT(c2) - 1e-9`.
pub fn ot_concavity_check(
    c1: &Matrix,
    c2: &Matrix,
    mu_w: &[f64],
    nu_w: &[f64],
    mix: f64,
) -> Result<bool> {
    if (c1.rows, c1.cols) != (c2.rows, c2.cols) {
        return Err(GwError::DimensionMismatch {
            expected: c1.rows * c1.cols,
            found: c2.rows * c2.cols,
        });
    }
    if !(0.0..=1.0).contains(&mix) {
        return Err(GwError::param("mix", format!("{mix} not in [0, 1]")));
    }
    let blend = Matrix::from_fn(c1.rows, c1.cols, |i, j| {
        mix * c1.get(i, j) + (1.0 - mix) * c2.get(i, j)
    });
    let lhs = solve_ot(&blend, mu_w, nu_w)?.value;
    let rhs = mix * solve_ot(c1, mu_w, nu_w)?.value + (1.0 - mix) * solve_ot(c2, mu_w, nu_w)?.value;
    Ok(lhs >= rhs - 1e-9)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn check_invariants(sol: &OTSolution, cost: &Matrix, a: &[f64], b: &[f64]) {
        assert!(sol.plan.marginal_deviation(a, b).unwrap() <= 1e-10);
        assert!(sol.feasibility_violation(cost) <= 1e-9);
        assert!(sol.slackness_violation(cost, 1e-12) <= 1e-8);
        assert!((sol.value - sol.dual_value(a, b)).abs() <= 1e-8);
        assert_eq!(sol.phi[0], 0.0);
    }

    #[test]
    fn one_by_one() {
        let cost = Matrix::from_rows(&[vec![3.5]]);
        let sol = solve_ot(&cost, &[1.0], &[1.0]).unwrap();
        assert_eq!(sol.value, 3.5);
        assert_eq!(sol.plan.get(0, 0), 1.0);
        check_invariants(&sol, &cost, &[1.0], &[1.0]);
    }

    #[test]
    fn identity_is_optimal_for_discrete_metric() {
        let cost = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let w = [0.5, 0.5];
        let sol = solve_ot(&cost, &w, &w).unwrap();
        assert_eq!(sol.value, 0.0);
        assert_eq!(sol.plan.get(0, 0), 0.5);
        assert_eq!(sol.plan.get(1, 1), 0.5);
        check_invariants(&sol, &cost, &w, &w);

        let anti = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let sol = solve_ot(&anti, &w, &w).unwrap();
        assert_eq!(sol.value, 0.0);
        assert_eq!(sol.plan.get(0, 1), 0.5);
        assert_eq!(sol.plan.get(1, 0), 0.5);
    }

    #[test]
    fn zero_weight_atoms_get_no_mass() {
        let cost = Matrix::from_rows(&[
            vec![1.0, 2.0, 0.5],
            vec![0.0, 3.0, 1.0],
            vec![2.0, 2.0, 2.0],
        ]);
        let a = [0.5, 0.0, 0.5];
        let b = [0.0, 0.5, 0.5];
        let sol = solve_ot(&cost, &a, &b).unwrap();
        for j in 0..3 {
            assert_eq!(sol.plan.get(1, j), 0.0);
        }
        check_invariants(&sol, &cost, &a, &b);
        // rows {0,2} to cols {1,2}: best is 0->2 (0.5) and 2->1 (2.0)
        assert!((sol.value - 1.25).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_probability_weights() {
        let cost = Matrix::zeros(2, 2);
        assert!(matches!(
            solve_ot(&cost, &[0.5, 0.6], &[0.5, 0.5]),
            Err(GwError::InfeasibleWeights(_))
        ));
        assert!(solve_ot(&cost, &[0.5, 0.5, 0.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn random_problems_satisfy_duality() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let m = rng.gen_range(1..12);
            let n = rng.gen_range(1..12);
            let mut a: Vec<f64> = (0..m).map(|_| rng.gen::<f64>()).collect();
            let mut b: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let sa: f64 = a.iter().sum();
            let sb: f64 = b.iter().sum();
            a.iter_mut().for_each(|v| *v /= sa);
            b.iter_mut().for_each(|v| *v /= sb);
            let cost = Matrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
            let sol = solve_ot(&cost, &a, &b).unwrap();
            check_invariants(&sol, &cost, &a, &b);
        }
    }

    #[test]
    fn tied_costs_terminate() {
        // All-equal costs are maximally degenerate.
        let n = 30;
        let w = vec![1.0 / n as f64; n];
        let cost = Matrix::from_fn(n, n, |i, j| ((i + j) % 3) as f64);
        let sol = solve_ot(&cost, &w, &w).unwrap();
        check_invariants(&sol, &cost, &w, &w);
        assert!(sol.value.abs() < 1e-12);
    }

    #[test]
    fn c_transform_basics() {
        let cost = Matrix::zeros(3, 2);
        assert_eq!(c_transform(&cost, &[0.0; 3]).unwrap(), vec![0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cost = Matrix::from_fn(4, 5, |_, _| rng.gen_range(-1.0..1.0));
        let f: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = c_transform(&cost, &f).unwrap();
        let shifted: Vec<f64> = f.iter().map(|v| v + 0.75).collect();
        let gs = c_transform(&cost, &shifted).unwrap();
        for (a, b) in g.iter().zip(&gs) {
            assert!((a - 0.75 - b).abs() < 1e-15);
        }
        assert!(c_transform(&Matrix::zeros(0, 0), &[]).is_err());
    }

    #[test]
    fn double_transform_is_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let cost = Matrix::from_fn(6, 7, |_, _| rng.gen_range(-2.0..2.0));
            let f: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let g = c_transform(&cost, &f).unwrap();
            let f2 = c_bar_transform(&cost, &g).unwrap();
            let g2 = c_transform(&cost, &f2).unwrap();
            for (a, b) in g.iter().zip(&g2) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn concavity_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = [0.25; 4];
        let c1 = Matrix::from_fn(4, 4, |_, _| rng.gen::<f64>());
        let c2 = Matrix::from_fn(4, 4, |_, _| rng.gen::<f64>());
        assert!(ot_concavity_check(&c1, &c1, &w, &w, 0.3).unwrap());
        assert!(ot_concavity_check(&c1, &c2, &w, &w, 0.0).unwrap());
        assert!(ot_concavity_check(&c1, &c2, &w, &w, 1.0).unwrap());
        assert!(ot_concavity_check(&c1, &c2, &w, &w, 0.5).unwrap());
        assert!(ot_concavity_check(&c1, &Matrix::zeros(3, 4), &w, &w, 0.5).is_err());
    }
}
