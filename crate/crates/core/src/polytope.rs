//! Exhaustive vertex enumeration of small transportation polytopes.
//!
//! Used as an oracle for the simplex solver and as candidate points for the
//! brute-force Gromov–Wasserstein search. Shares no code with [`crate::ot`].

use crate::error::{GwError, Result};
use crate::numeric::Matrix;

/// Largest `rows * cols` accepted; the enumeration is `C(rows*cols, rows+cols-1)`.
pub const MAX_CELLS: usize = 20;

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut root = x;
    while parent[root] != root {
        root = parent[root];
    }
    let mut cur = x;
    while parent[cur] != root {
        let next = parent[cur];
        parent[cur] = root;
        cur = next;
    }
    root
}

/// Flows on a spanning tree of cells, or `None` if the cells contain a cycle.
fn tree_flows(cells: &[usize], cols: usize, a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let rows = a.len();
    let nodes = rows + cols;
    let mut parent: Vec<usize> = (0..nodes).collect();
    for &c in cells {
        let (i, j) = (c / cols, rows + c % cols);
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri == rj {
            return None;
        }
        parent[ri] = rj;
    }
    let mut residual: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut degree = vec![0usize; nodes];
    for &c in cells {
        degree[c / cols] += 1;
        degree[rows + c % cols] += 1;
    }
    let mut flow = vec![f64::NAN; cells.len()];
    let mut remaining = cells.len();
    while remaining > 0 {
        let mut progressed = false;
        for (e, &c) in cells.iter().enumerate() {
            if !flow[e].is_nan() {
                continue;
            }
            let (i, j) = (c / cols, rows + c % cols);
            let leaf = if degree[i] == 1 {
                i
            } else if degree[j] == 1 {
                j
            } else {
                continue;
            };
            let other = if leaf == i { j } else { i };
            let f = residual[leaf];
            flow[e] = f;
            residual[leaf] -= f;
            residual[other] -= f;
            degree[i] -= 1;
            degree[j] -= 1;
            remaining -= 1;
            progressed = true;
        }
        if !progressed {
            return None;
        }
    }
    Some(flow)
}

fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - k + i {
            idx[i] += 1;
            for t in i + 1..k {
                idx[t] = idx[t - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// All distinct vertices of `{pi >= 0 : pi 1 = a, pi^T 1 = b}`.
pub fn enumerate_vertices(a: &[f64], b: &[f64]) -> Result<Vec<Matrix>> {
    let (rows, cols) = (a.len(), b.len());
    if rows == 0 || cols == 0 {
        return Err(GwError::Empty("transportation polytope"));
    }
    if rows * cols > MAX_CELLS {
        return Err(GwError::TooLarge {
            n_x: rows,
            n_y: cols,
        });
    }
    let cells = rows * cols;
    let basis = rows + cols - 1;
    let mut idx: Vec<usize> = (0..basis).collect();
    let mut out: Vec<Matrix> = Vec::new();
    loop {
        if let Some(flow) = tree_flows(&idx, cols, a, b) {
            if flow.iter().all(|f| *f >= -1e-14) {
                let mut m = Matrix::zeros(rows, cols);
                for (e, &c) in idx.iter().enumerate() {
                    m.data[c] = flow[e].max(0.0);
                }
                let dup = out.iter().any(|v| {
                    v.data
                        .iter()
                        .zip(&m.data)
                        .all(|(p, q)| (p - q).abs() <= 1e-13)
                });
                if !dup {
                    out.push(m);
                }
            }
        }
        if !next_combination(&mut idx, cells) {
            break;
        }
    }
    Ok(out)
}

/// Minimum of `<pi, cost>` over the vertices.
pub fn vertex_minimum(cost: &Matrix, a: &[f64], b: &[f64]) -> Result<f64> {
    let verts = enumerate_vertices(a, b)?;
    Ok(verts
        .iter()
        .map(|v| {
            v.data
                .iter()
                .zip(&cost.data)
                .map(|(p, c)| p * c)
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min))
}
