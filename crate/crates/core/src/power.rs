//! Power allocation by projected gradient descent over the capped simplex
//! `{p >= 0, sum p <= P_max}`.

use alloc::vec::Vec;

use num_traits::Float;

use crate::error::Result;
use crate::objective::{Criterion, Decision};
use crate::scenario::PgdOptions;

/// Euclidean projection onto `{p >= 0, sum p <= p_max}`.
pub fn project_capped_simplex(v: &[f64], p_max: f64) -> Vec<f64> {
    let clipped: Vec<f64> = v.iter().map(|x| x.max(0.0)).collect();
    if clipped.iter().sum::<f64>() <= p_max {
        return clipped;
    }
    // Sum cap active: p = max(v - tau, 0) with sum p = p_max.
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut prefix = 0.0;
    let mut tau = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        prefix += x;
        let t = (prefix - p_max) / (i + 1) as f64;
        let next = sorted.get(i + 1).copied().unwrap_or(f64::NEG_INFINITY);
        if t >= next {
            tau = t;
            break;
        }
    }
    let mut p: Vec<f64> = v.iter().map(|x| (x - tau).max(0.0)).collect();
    // Trim rounding so the budget holds exactly.
    let total: f64 = p.iter().sum();
    if total > p_max {
        let f = p_max / total;
        p.iter_mut().for_each(|x| *x *= f);
    }
    p
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerResult {
    pub power: Vec<f64>,
    /// Objective after each accepted iterate, starting with the initial point.
    pub trace: Vec<f64>,
    pub converged: bool,
}

const ARMIJO_SLOPE: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 60;

/// Projected gradient descent from the power in `dec`, with normalized
/// steps `rho / |grad|` and `rho` shrinking by `1 / (1 + rho_hat)` every
/// iteration. With `opts.armijo` each step is backtracked until the
/// objective decreases sufficiently.
pub fn solve_power<C: Criterion + ?Sized>(crit: &C, dec: &Decision, opts: &PgdOptions) -> Result<PowerResult> {
    let p_max = crit.problem().scenario.rf.p_max;
    let tol = opts.tol * p_max;
    let mut cur = dec.clone();
    cur.power = project_capped_simplex(&cur.power, p_max);
    let mut value = crit.value_or_inf(&cur);
    let mut trace = alloc::vec![value];
    let mut rho = opts.step0 * p_max;
    let mut converged = false;
    if !value.is_finite() {
        return Ok(PowerResult {
            power: cur.power,
            trace,
            converged,
        });
    }
    for _ in 0..opts.max_iter {
        let grad = crit.gradient(&cur)?.power;
        let norm = grad.norm();
        if norm == 0.0 {
            converged = true;
            break;
        }
        let mut step = rho / norm;
        let mut accepted = None;
        for _ in 0..=MAX_BACKTRACKS {
            let trial: Vec<f64> = cur.power.iter().zip(grad.iter()).map(|(p, g)| p - step * g).collect();
            let trial = project_capped_simplex(&trial, p_max);
            let decrease: f64 = cur.power.iter().zip(&trial).zip(grad.iter()).map(|((p, q), g)| g * (p - q)).sum();
            let cand = Decision {
                power: trial,
                ..cur.clone()
            };
            let v = crit.value_or_inf(&cand);
            if !opts.armijo && v.is_finite() {
                accepted = Some((cand, v));
                break;
            }
            if v <= value - ARMIJO_SLOPE * decrease && v.is_finite() {
                accepted = Some((cand, v));
                break;
            }
            step *= BACKTRACK;
        }
        let Some((next, v)) = accepted else {
            converged = true;
            break;
        };
        let moved = next.power.iter().zip(&cur.power).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        cur = next;
        value = v;
        trace.push(value);
        if moved < tol {
            converged = true;
            break;
        }
        rho /= 1.0 + opts.rho_hat;
    }
    Ok(PowerResult {
        power: cur.power,
        trace,
        converged,
    })
}
