//! Rectangular linear assignment (Hungarian algorithm with potentials).

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Minimum-cost assignment of every column (robot) to a distinct row (UAV)
/// of an `M x K` cost matrix with `M >= K`. Returns the row chosen for each
/// column. Entries may be `+inf` to forbid a pair.
pub fn min_cost_assignment(cost: &DMatrix<f64>) -> Result<Vec<usize>> {
    let (rows, cols) = cost.shape();
    if cols > rows {
        return Err(Error::InfeasibleAssociation(alloc::format!(
            "{cols} robots cannot be served by {rows} UAVs"
        )));
    }
    if cols == 0 {
        return Ok(Vec::new());
    }
    // Shortest augmenting paths with 1-based sentinels; n = cols jobs on m = rows workers.
    let (n, m) = (cols, rows);
    let big = cost.iter().filter(|c| c.is_finite()).fold(0.0f64, |a, &c| a.max(c.abs()));
    let forbid = 1e6 * (big + 1.0) * (n as f64 + 1.0);
    let c = |i: usize, j: usize| {
        let v = cost[(j - 1, i - 1)];
        if v.is_finite() {
            v
        } else {
            forbid
        }
    };
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if !used[j] {
                    let cur = c(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    if out.iter().enumerate().any(|(k, &r)| !cost[(r, k)].is_finite()) {
        return Err(Error::InfeasibleAssociation("every assignment uses a forbidden pair".into()));
    }
    Ok(out)
}

pub fn assignment_cost(cost: &DMatrix<f64>, rows: &[usize]) -> f64 {
    rows.iter().enumerate().map(|(k, &r)| cost[(r, k)]).sum()
}

/// Binary `M x K` matrix of an assignment.
pub fn to_matrix(rows: &[usize], n_rows: usize) -> DMatrix<f64> {
    let mut theta = DMatrix::zeros(n_rows, rows.len());
    for (k, &r) in rows.iter().enumerate() {
        theta[(r, k)] = 1.0;
    }
    theta
}

/// Row chosen for each column of a binary matrix.
pub fn from_matrix(theta: &DMatrix<f64>) -> Vec<usize> {
    (0..theta.ncols())
        .map(|k| (0..theta.nrows()).find(|&m| theta[(m, k)] > 0.5).unwrap_or(usize::MAX))
        .collect()
}

/// Minimum-cost assignment with ties broken lexicographically: robot 0 gets
/// the lowest-index UAV among all optimal assignments, then robot 1, and so on.
pub fn min_cost_assignment_lex(cost: &DMatrix<f64>) -> Result<Vec<usize>> {
    let best = assignment_cost(cost, &min_cost_assignment(cost)?);
    let scale = cost.iter().filter(|c| c.is_finite()).fold(0.0f64, |a, &c| a.max(c.abs()));
    let tol = 1e-12 * scale.max(1e-300) * cost.ncols() as f64;
    let mut fixed = cost.clone();
    let mut out = Vec::with_capacity(cost.ncols());
    for k in 0..cost.ncols() {
        let mut chosen = None;
        for m in 0..cost.nrows() {
            if !fixed[(m, k)].is_finite() {
                continue;
            }
            let mut trial = fixed.clone();
            for r in 0..cost.nrows() {
                if r != m {
                    trial[(r, k)] = f64::INFINITY;
                }
            }
            for kk in k + 1..cost.ncols() {
                trial[(m, kk)] = f64::INFINITY;
            }
            if let Ok(rows) = min_cost_assignment(&trial) {
                if assignment_cost(cost, &rows) <= best + tol {
                    fixed = trial;
                    chosen = Some(m);
                    break;
                }
            }
        }
        out.push(chosen.ok_or_else(|| Error::InfeasibleAssociation("tie-break lost feasibility".into()))?);
    }
    Ok(out)
}

/// Calls `visit` with every injective column-to-row map in lexicographic
/// order. Fails when there are more than `limit` of them.
pub fn for_each_assignment(n_rows: usize, n_cols: usize, limit: u128, mut visit: impl FnMut(&[usize])) -> Result<u128> {
    let count = (0..n_cols as u128).fold(1u128, |acc, i| acc.saturating_mul((n_rows as u128).saturating_sub(i)));
    if count > limit {
        return Err(Error::TooManyAssignments(count));
    }
    if n_cols > n_rows {
        return Ok(0);
    }
    let mut rows = vec![0usize; n_cols];
    let mut used = vec![false; n_rows];
    fn rec(k: usize, rows: &mut [usize], used: &mut [bool], visit: &mut dyn FnMut(&[usize])) {
        if k == rows.len() {
            visit(rows);
            return;
        }
        for m in 0..used.len() {
            if !used[m] {
                used[m] = true;
                rows[k] = m;
                rec(k + 1, rows, used, visit);
                used[m] = false;
            }
        }
    }
    rec(0, &mut rows, &mut used, &mut visit);
    Ok(count)
}
