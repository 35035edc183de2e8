//! Dense primal simplex for small LPs of the form
//! `min c^T x  s.t.  A x <= b, x >= 0` with `b >= 0`, so the slack basis is
//! feasible from the start. Bland's rule prevents cycling.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

const PIVOT_TOL: f64 = 1e-12;

pub fn minimize(c: &[f64], a: &DMatrix<f64>, b: &[f64]) -> Result<LpSolution> {
    let (rows, n) = a.shape();
    if c.len() != n || b.len() != rows {
        return Err(Error::Dimension(alloc::format!(
            "LP with {n} variables, {rows} rows, {} costs and {} bounds",
            c.len(),
            b.len()
        )));
    }
    if b.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::Dimension("LP right-hand side must be nonnegative".into()));
    }
    let width = n + rows + 1;
    // Tableau rows: constraints then the reduced-cost row; last column is the RHS.
    let mut t = DMatrix::zeros(rows + 1, width);
    for i in 0..rows {
        for j in 0..n {
            t[(i, j)] = a[(i, j)];
        }
        t[(i, n + i)] = 1.0;
        t[(i, width - 1)] = b[i];
    }
    for j in 0..n {
        t[(rows, j)] = c[j];
    }
    let mut basis: Vec<usize> = (n..n + rows).collect();
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let max_pivots = 50 * (rows + n + 1);
    let mut pivots = 0;
    loop {
        // Bland: lowest-index column with negative reduced cost.
        let Some(col) = (0..width - 1).find(|&j| t[(rows, j)] < -PIVOT_TOL * scale) else {
            break;
        };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..rows {
            let aij = t[(i, col)];
            if aij > PIVOT_TOL {
                let ratio = t[(i, width - 1)] / aij;
                let better = match leave {
                    None => true,
                    Some((r, best)) => ratio < best || (ratio == best && basis[i] < basis[r]),
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
        }
        let Some((row, _)) = leave else {
            return Err(Error::NonConvergence {
                what: "LP (unbounded)",
                iterations: pivots,
                residual: f64::INFINITY,
            });
        };
        let piv = t[(row, col)];
        for j in 0..width {
            t[(row, j)] /= piv;
        }
        for i in 0..=rows {
            if i != row {
                let f = t[(i, col)];
                if f != 0.0 {
                    for j in 0..width {
                        let v = t[(row, j)];
                        t[(i, j)] -= f * v;
                    }
                }
            }
        }
        // Pivot rounding can leave tiny negative right-hand sides.
        for i in 0..rows {
            if t[(i, width - 1)] < 0.0 {
                t[(i, width - 1)] = 0.0;
            }
        }
        basis[row] = col;
        pivots += 1;
        if pivots > max_pivots {
            return Err(Error::NonConvergence {
                what: "LP simplex",
                iterations: pivots,
                residual: f64::NAN,
            });
        }
    }
    let mut x = vec![0.0; n];
    for (i, &var) in basis.iter().enumerate() {
        if var < n {
            x[var] = t[(i, width - 1)];
        }
    }
    let objective = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
    Ok(LpSolution { x, objective, pivots })
}
