//! UAV-robot association by penalty-DC: relax the binary association to
//! its polytope, penalize `sum(theta - theta^2)`, linearize the concave
//! part at the previous iterate and solve each convex subproblem with
//! Frank-Wolfe. The linear oracle over the polytope is an assignment
//! problem, whose vertices are exactly the binary associations.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::assignment::{for_each_assignment, min_cost_assignment, min_cost_assignment_lex, to_matrix};
use crate::control::{lqr_cost_from_throughput, lqr_cost_slope};
use crate::error::{Error, Result};
use crate::objective::{Decision, Problem};
use crate::scenario::{PenaltyDcOptions, Point};

/// Enumeration limit of the exhaustive oracle.
pub const ORACLE_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct AssociationResult {
    /// Binary association.
    pub theta: DMatrix<f64>,
    /// Last relaxed iterate before rounding.
    pub relaxed: DMatrix<f64>,
    /// Penalized objective after each outer iteration.
    pub trace: Vec<f64>,
    /// False when some inner solve hit its iteration cap.
    pub inner_converged: bool,
}

/// The association subproblem at fixed rates: `sum_k b_k(X_k(theta))`
/// divided by `scale`. The sensing term does not depend on the association.
struct ControlCost<'a> {
    problem: &'a Problem,
    rates: &'a DMatrix<f64>,
    scale: f64,
}

impl ControlCost<'_> {
    fn throughput(&self, theta: &DMatrix<f64>, k: usize) -> f64 {
        self.problem.scenario.rf.uses_per_step * theta.column(k).dot(&self.rates.column(k))
    }

    /// `+inf` outside the stability region.
    fn value(&self, theta: &DMatrix<f64>) -> f64 {
        let mut total = 0.0;
        for (k, plant) in self.problem.plants.iter().enumerate() {
            match lqr_cost_from_throughput(plant, self.throughput(theta, k)) {
                Ok(b) => total += b,
                Err(_) => return f64::INFINITY,
            }
        }
        total / self.scale
    }

    fn gradient(&self, theta: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        let c = self.problem.scenario.rf.uses_per_step;
        let mut g = DMatrix::zeros(theta.nrows(), theta.ncols());
        for (k, plant) in self.problem.plants.iter().enumerate() {
            let slope = lqr_cost_slope(plant, self.throughput(theta, k)).ok()?;
            for m in 0..theta.nrows() {
                g[(m, k)] = slope * c * self.rates[(m, k)] / self.scale;
            }
        }
        Some(g)
    }
}

fn frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(b).sum()
}

/// `sum(theta - theta^2)`, zero exactly on binary matrices.
pub fn binary_gap(theta: &DMatrix<f64>) -> f64 {
    theta.iter().map(|t| t - t * t).sum()
}

/// Frank-Wolfe on `F(theta) + mu sum(theta) - mu sum(a^2 + 2a(theta - a))`
/// from `start`, `a` the anchor. Returns the final iterate and whether the
/// duality gap reached `opts.inner_tol`.
fn frank_wolfe(
    cost: &ControlCost,
    anchor: &DMatrix<f64>,
    start: &DMatrix<f64>,
    mu: f64,
    opts: &PenaltyDcOptions,
) -> Result<(DMatrix<f64>, bool)> {
    // Gradient of the linearized penalty is constant.
    let lin = anchor.map(|a| mu * (1.0 - 2.0 * a));
    let total_grad = |theta: &DMatrix<f64>| cost.gradient(theta).map(|g| g + &lin);
    let mut theta = start.clone();
    for _ in 0..opts.inner_max {
        let grad = total_grad(&theta)
            .ok_or_else(|| Error::InfeasibleAssociation("Frank-Wolfe iterate left the stability region".into()))?;
        let vertex = to_matrix(&min_cost_assignment(&grad)?, theta.nrows());
        let dir = &vertex - &theta;
        let gap = -frobenius(&grad, &dir);
        let scale = cost.value(&theta).abs() + mu * theta.ncols() as f64;
        if gap <= opts.inner_tol * scale.max(1e-300) {
            return Ok((theta, true));
        }
        let slope_at = |t: f64| {
            let x = &theta + &dir * t;
            total_grad(&x).map_or(f64::INFINITY, |g| frobenius(&g, &dir))
        };
        // The objective is convex along the segment, so its slope is monotone.
        let step = if slope_at(1.0) <= 0.0 {
            1.0
        } else {
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if slope_at(mid) <= 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        };
        if step == 0.0 {
            return Ok((theta, true));
        }
        theta += &dir * step;
    }
    Ok((theta, false))
}

/// One convex subproblem of the penalty-DC scheme at fixed rates.
pub fn solve_relaxed_subproblem(
    problem: &Problem,
    rates: &DMatrix<f64>,
    anchor: &DMatrix<f64>,
    mu: f64,
    opts: &PenaltyDcOptions,
) -> Result<(DMatrix<f64>, bool)> {
    let mut cost = ControlCost { problem, rates, scale: 1.0 };
    cost.scale = cost.value(anchor);
    if !cost.scale.is_finite() {
        return Err(Error::InfeasibleAssociation("anchor violates the stability condition".into()));
    }
    frank_wolfe(&cost, anchor, anchor, mu, opts)
}

/// Maximum-weight binary association using the relaxed entries as weights.
/// Ties go to the lowest UAV index, robot by robot.
pub fn round_and_repair(relaxed: &DMatrix<f64>) -> DMatrix<f64> {
    let rows = min_cost_assignment_lex(&-relaxed).expect("relaxed association has at least as many UAVs as robots");
    to_matrix(&rows, relaxed.nrows())
}

/// Each robot served by the closest available UAV, minimizing the total distance.
pub fn nearest_association(positions: &[Point], robots: &[Point]) -> Result<DMatrix<f64>> {
    let d = DMatrix::from_fn(positions.len(), robots.len(), |m, k| (positions[m] - robots[k]).norm());
    Ok(to_matrix(&min_cost_assignment_lex(&d)?, positions.len()))
}

/// Association maximizing the sum of link rates.
pub fn max_rate_association(rates: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(to_matrix(&min_cost_assignment_lex(&-rates)?, rates.nrows()))
}

/// Penalty-DC association at the power and positions of `dec`.
///
/// Starts from the nearest-UAV association, falling back to the current
/// association and then the max-rate association when the nearer ones
/// violate the stability condition. Returns the better of the rounded
/// result and the start.
pub fn solve_association(problem: &Problem, dec: &Decision, opts: &PenaltyDcOptions) -> Result<AssociationResult> {
    let links = problem.links(&dec.power, &dec.positions)?;
    let mut cost = ControlCost {
        problem,
        rates: &links.rate,
        scale: 1.0,
    };
    let candidates = [
        nearest_association(&dec.positions, &problem.scenario.geometry.robots)?,
        dec.theta.clone(),
        max_rate_association(&links.rate)?,
    ];
    let start = candidates
        .iter()
        .find(|t| cost.value(t).is_finite())
        .cloned()
        .ok_or_else(|| Error::InfeasibleAssociation("no stable starting association".into()))?;
    // Measure the cost relative to the start so the penalty weight is dimensionless.
    cost.scale = cost.value(&start);

    let mut mu = opts.mu0;
    let mut theta = start.clone();
    let mut trace = Vec::new();
    let mut inner_converged = true;
    let mut prev = cost.value(&theta) + mu * binary_gap(&theta);
    for _ in 0..opts.max_outer {
        let (next, ok) = frank_wolfe(&cost, &theta, &theta, mu, opts)?;
        inner_converged &= ok;
        theta = next;
        let omega = cost.value(&theta) + mu * binary_gap(&theta);
        trace.push(omega);
        let done = (omega - prev).abs() <= opts.tol * prev.abs() && binary_gap(&theta) <= 1e-9;
        prev = omega;
        if done {
            break;
        }
        mu = (mu * opts.growth).min(opts.mu_max);
    }
    let rounded = round_and_repair(&theta);
    let best = if cost.value(&rounded) <= cost.value(&start) { rounded } else { start };
    Ok(AssociationResult {
        theta: best,
        relaxed: theta,
        trace,
        inner_converged,
    })
}

/// Globally optimal binary association by enumeration, first optimum in
/// lexicographic order.
pub fn exhaustive_oracle(problem: &Problem, dec: &Decision) -> Result<DMatrix<f64>> {
    let (m, k) = dec.theta.shape();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for_each_assignment(m, k, ORACLE_LIMIT, |rows| {
        let trial = Decision {
            theta: to_matrix(rows, m),
            ..dec.clone()
        };
        let v = problem.value_or_inf(&trial);
        if v.is_finite() && best.as_ref().is_none_or(|(b, _)| v < *b) {
            best = Some((v, rows.to_vec()));
        }
    })?;
    best.map(|(_, rows)| to_matrix(&rows, m))
        .ok_or_else(|| Error::InfeasibleAssociation("every association violates the stability condition".into()))
}

/// Control-only association cost `sum_k b_k / psi_c` at the rates of `dec`.
pub fn association_cost(problem: &Problem, dec: &Decision, theta: &DMatrix<f64>) -> Result<f64> {
    let links = problem.links(&dec.power, &dec.positions)?;
    Ok(ControlCost {
        problem,
        rates: &links.rate,
        scale: problem.scenario.weights.psi_c,
    }
    .value(theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::PlantSpec;
    use crate::scenario::{random_positions, Scenario};
    use alloc::vec;

    fn problem(robots: Vec<Point>, n_uav: usize, rates: &[f64], eta: f64) -> Problem {
        let mut s = Scenario::default();
        s.geometry.robots = robots;
        s.geometry.n_uav = n_uav;
        s.plants = rates.iter().map(|&g| PlantSpec::with_entropy_rate(25, g, 1e-3, 1e-3)).collect();
        s.weights.eta = eta;
        Problem::new(s).unwrap()
    }

    fn decision(pr: &Problem, positions: Vec<Point>, power: Vec<f64>) -> Decision {
        let theta = nearest_association(&positions, &pr.scenario.geometry.robots).unwrap();
        Decision { theta, power, positions }
    }

    #[test]
    fn rounding_rules() {
        let b = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(round_and_repair(&b), b);
        let r = round_and_repair(&DMatrix::from_row_slice(2, 1, &[0.6, 0.4]));
        assert_eq!(r, DMatrix::from_row_slice(2, 1, &[1.0, 0.0]));
        let tied = DMatrix::from_element(2, 2, 0.5);
        assert_eq!(round_and_repair(&tied), DMatrix::identity(2, 2));
    }

    #[test]
    fn single_pair_is_forced() {
        let pr = problem(vec![Point::new(20.0, 20.0, 0.0)], 1, &[3.0], 0.5);
        let dec = decision(&pr, vec![Point::new(30.0, 30.0, 100.0)], vec![0.5]);
        let out = solve_association(&pr, &dec, &PenaltyDcOptions::default()).unwrap();
        assert_eq!(out.theta, DMatrix::from_element(1, 1, 1.0));
    }

    #[test]
    fn dominant_uav_wins_relaxed_subproblem() {
        let pr = problem(vec![Point::new(20.0, 20.0, 0.0)], 2, &[3.0], 1.0);
        // UAV 1 above the robot, UAV 0 far and nearly silent.
        let positions = vec![Point::new(95.0, 95.0, 100.0), Point::new(20.0, 20.0, 100.0)];
        let dec = Decision {
            theta: DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            power: vec![0.01, 0.5],
            positions,
        };
        let rates = pr.links(&dec.power, &dec.positions).unwrap().rate;
        assert!(rates[(1, 0)] > rates[(0, 0)]);
        let split = DMatrix::from_row_slice(2, 1, &[0.5, 0.5]);
        let (theta, ok) = solve_relaxed_subproblem(&pr, &rates, &split, 0.0, &PenaltyDcOptions::default()).unwrap();
        assert!(ok);
        assert!((theta[(1, 0)] - 1.0).abs() < 1e-9);
        let out = solve_association(&pr, &dec, &PenaltyDcOptions::default()).unwrap();
        assert_eq!(out.theta, DMatrix::from_row_slice(2, 1, &[0.0, 1.0]));
        assert_eq!(exhaustive_oracle(&pr, &dec).unwrap(), out.theta);
    }

    #[test]
    fn large_penalty_keeps_binary_anchor() {
        let pr = problem(vec![Point::new(20.0, 20.0, 0.0)], 2, &[3.0], 1.0);
        let dec = Decision {
            theta: DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            power: vec![0.3, 0.3],
            positions: vec![Point::new(40.0, 20.0, 100.0), Point::new(20.0, 20.0, 100.0)],
        };
        let rates = pr.links(&dec.power, &dec.positions).unwrap().rate;
        let (theta, _) = solve_relaxed_subproblem(&pr, &rates, &dec.theta, 1e6, &PenaltyDcOptions::default()).unwrap();
        assert_eq!(theta, dec.theta);
    }

    #[test]
    fn symmetric_tie_returns_a_vertex() {
        let pr = problem(vec![Point::new(50.0, 50.0, 0.0)], 2, &[3.0], 1.0);
        let dec = Decision {
            theta: DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            power: vec![0.3, 0.3],
            positions: vec![Point::new(30.0, 50.0, 100.0), Point::new(70.0, 50.0, 100.0)],
        };
        let rates = pr.links(&dec.power, &dec.positions).unwrap().rate;
        let (theta, _) = solve_relaxed_subproblem(&pr, &rates, &dec.theta, 0.0, &PenaltyDcOptions::default()).unwrap();
        assert!(binary_gap(&theta) < 1e-12);
        let out = solve_association(&pr, &dec, &PenaltyDcOptions::default()).unwrap();
        assert_eq!(out.theta, DMatrix::from_row_slice(2, 1, &[1.0, 0.0]));
        assert_eq!(exhaustive_oracle(&pr, &dec).unwrap(), out.theta);
    }

    #[test]
    fn single_robot_gets_fastest_uav() {
        let pr = problem(vec![Point::new(20.0, 80.0, 0.0)], 4, &[3.0], 1.0);
        let positions = random_positions(&pr.scenario.geometry, 5).unwrap();
        let dec = decision(&pr, positions, vec![0.1, 0.2, 0.05, 0.3]);
        let rates = pr.links(&dec.power, &dec.positions).unwrap().rate;
        let best = (0..4).max_by(|&a, &b| rates[(a, 0)].total_cmp(&rates[(b, 0)])).unwrap();
        let out = solve_association(&pr, &dec, &PenaltyDcOptions::default()).unwrap();
        assert_eq!(out.theta[(best, 0)], 1.0);
    }

    #[test]
    fn relaxed_iterate_ends_near_binary() {
        let pr = problem(Scenario::default().geometry.robots, 4, &[3.0, 6.0, 9.0], 1.0);
        for seed in 0..10 {
            let positions = random_positions(&pr.scenario.geometry, seed).unwrap();
            let dec = decision(&pr, positions, vec![0.2; 4]);
            let Ok(out) = solve_association(&pr, &dec, &PenaltyDcOptions::default()) else {
                continue;
            };
            assert!(binary_gap(&out.relaxed) <= 1e-3);
            crate::channel::check_association(&out.theta, 0.0).unwrap();
        }
    }
}
