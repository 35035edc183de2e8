//! Alternating optimization over association, power and positions.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::assignment::{min_cost_assignment_lex, to_matrix};
use crate::assoc::{nearest_association, solve_association};
use crate::channel::throughput_per_robot;
use crate::control::lqr_cost_from_throughput;
use crate::error::{Error, Result};
use crate::objective::{Criterion, Decision, ObjectiveBreakdown, Problem, StabilityShortfall};
use crate::position::solve_positions;
use crate::power::solve_power;
use crate::scenario::random_positions;

/// One row of the convergence trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub objective: f64,
    pub lqr_sum: f64,
    pub det_fim: f64,
    pub crb_sum: f64,
}

impl From<&ObjectiveBreakdown> for IterationRecord {
    fn from(b: &ObjectiveBreakdown) -> Self {
        Self {
            objective: b.value,
            lqr_sum: b.lqr_sum,
            det_fim: b.det_fim,
            crb_sum: b.crb_sum,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    /// Entry 0 is the starting decision, then one entry per outer iteration.
    pub iterations: Vec<IterationRecord>,
    pub final_decision: Decision,
    pub per_robot_cost: DVector<f64>,
    pub converged: bool,
    /// Seconds. The core never reads a clock; callers fill this in.
    pub wall_time: f64,
    pub seed: u64,
    /// Trade-off weight actually used.
    pub eta: f64,
    /// Power budget actually used, watts.
    pub p_max: f64,
    pub stability_enforced: bool,
    /// Whether the stability restoration phase had to move the start.
    pub restored: bool,
}

impl SolveReport {
    pub fn last(&self) -> &IterationRecord {
        self.iterations.last().expect("a report always holds the starting point")
    }
}

/// How each block is treated by the outer loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    /// Optimized; the update is kept only if it does not raise the objective.
    Optimize,
    /// Left at its starting value.
    Fixed,
    /// Recomputed from a closed-form rule each iteration and kept whenever
    /// the result is admissible.
    Rule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Blocks {
    pub association: Block,
    pub power: Block,
    pub positions: Block,
}

impl Blocks {
    pub const ALL: Self = Self {
        association: Block::Optimize,
        power: Block::Optimize,
        positions: Block::Optimize,
    };
}

/// Rule-based power or association used by [`Block::Rule`].
pub trait Rules {
    fn association(&self, _problem: &Problem, dec: &Decision) -> Result<DMatrix<f64>> {
        Ok(dec.theta.clone())
    }

    fn power(&self, _problem: &Problem, dec: &Decision) -> Result<Vec<f64>> {
        Ok(dec.power.clone())
    }
}

/// No rules: every `Block::Rule` leaves its block unchanged.
pub struct NoRules;

impl Rules for NoRules {}

/// Random feasible positions, equal power split and nearest-UAV association.
pub fn initial_decision(problem: &Problem, seed: u64) -> Result<Decision> {
    let sc = &problem.scenario;
    let positions = random_positions(&sc.geometry, seed)?;
    let theta = nearest_association(&positions, &sc.geometry.robots)?;
    let n = sc.n_uav();
    Ok(Decision {
        theta,
        power: alloc::vec![sc.rf.p_max / n as f64; n],
        positions,
    })
}

/// Association minimizing the stability shortfall at the current SINRs.
fn shortfall_association(crit: &StabilityShortfall, dec: &Decision) -> Result<DMatrix<f64>> {
    let problem = crit.problem;
    let links = problem.links(&dec.power, &dec.positions)?;
    let target = crit.target_sinr();
    let cost = DMatrix::from_fn(dec.n_uav(), target.len(), |m, k| {
        let s = crit.shortfall(k, links.sinr[(m, k)]);
        s * s
    });
    Ok(to_matrix(&min_cost_assignment_lex(&cost)?, dec.n_uav()))
}

/// Rounds of the restoration phase, independent of the outer budget.
pub const RESTORE_MAX_ROUNDS: usize = 30;

fn is_stable(problem: &Problem, dec: &Decision) -> Result<bool> {
    match problem.evaluate(dec) {
        Ok(_) => Ok(true),
        Err(Error::StabilityViolated { .. }) => Ok(false),
        Err(e) => Err(e),
    }
}

/// Moves an unstable start into the region where every robot's throughput
/// exceeds its entropy rate, by alternating the subsolvers on the squared
/// shortfall. Returns the decision and whether anything changed.
pub fn restore_stability(problem: &Problem, dec: &Decision, blocks: Blocks) -> Result<(Decision, bool)> {
    if !problem.enforce_stability || is_stable(problem, dec)? {
        return Ok((dec.clone(), false));
    }
    let crit = StabilityShortfall::new(problem);
    let opts = &problem.scenario.solver;
    let mut cur = dec.clone();
    let mut value = crit.value(&cur)?;
    for _ in 0..RESTORE_MAX_ROUNDS {
        let before = value;
        if blocks.association == Block::Optimize {
            let trial = Decision {
                theta: shortfall_association(&crit, &cur)?,
                ..cur.clone()
            };
            let v = crit.value(&trial)?;
            if v < value {
                cur = trial;
                value = v;
            }
        }
        if blocks.power == Block::Optimize {
            cur.power = solve_power(&crit, &cur, &opts.pgd)?.power;
            value = crit.value(&cur)?;
        }
        if blocks.positions == Block::Optimize {
            cur.positions = solve_positions(&crit, &cur, &opts.sca)?.positions;
            value = crit.value(&cur)?;
        }
        if value == 0.0 || before - value <= opts.tol * before {
            break;
        }
    }
    // Still unstable: the evaluation error names the robot.
    problem.evaluate(&cur)?;
    Ok((cur, true))
}

fn relative_change(new: f64, old: f64) -> f64 {
    if new == old {
        0.0
    } else {
        (new - old).abs() / old.abs()
    }
}

/// Outer loop from a given start. Blocks marked `Optimize` are kept only if
/// they do not raise the objective, so the trace is nonincreasing whenever
/// no block is a `Rule`.
pub fn solve_from(problem: &Problem, start: &Decision, blocks: Blocks, rules: &dyn Rules, seed: u64) -> Result<SolveReport> {
    let sc = &problem.scenario;
    let opts = &sc.solver;
    let (mut cur, restored) = restore_stability(problem, start, blocks)?;
    let mut eval = problem.evaluate(&cur)?;
    let mut iterations = alloc::vec![IterationRecord::from(&eval)];
    let mut converged = false;

    // Keeps `trial` if admissible and, for optimized blocks, no worse.
    let consider = |cur: &mut Decision, eval: &mut ObjectiveBreakdown, trial: Decision, block: Block| -> Result<()> {
        let new = match problem.evaluate(&trial) {
            Ok(b) => b,
            Err(Error::StabilityViolated { .. }) => return Ok(()),
            Err(e) => return Err(e),
        };
        if block == Block::Rule || new.value <= eval.value {
            *cur = trial;
            *eval = new;
        }
        Ok(())
    };

    for _ in 0..opts.max_iter {
        let prev = eval.value;
        match blocks.association {
            // The association subproblem carries no signal without a control term.
            Block::Optimize if problem.eta() > 0.0 => {
                let theta = solve_association(problem, &cur, &opts.dc)?.theta;
                let trial = Decision { theta, ..cur.clone() };
                consider(&mut cur, &mut eval, trial, Block::Optimize)?;
            }
            Block::Rule => {
                let theta = rules.association(problem, &cur)?;
                let trial = Decision { theta, ..cur.clone() };
                consider(&mut cur, &mut eval, trial, Block::Rule)?;
            }
            _ => {}
        }
        match blocks.power {
            Block::Optimize => {
                let power = solve_power(problem, &cur, &opts.pgd)?.power;
                let trial = Decision { power, ..cur.clone() };
                consider(&mut cur, &mut eval, trial, Block::Optimize)?;
            }
            Block::Rule => {
                let power = rules.power(problem, &cur)?;
                let trial = Decision { power, ..cur.clone() };
                consider(&mut cur, &mut eval, trial, Block::Rule)?;
            }
            Block::Fixed => {}
        }
        if blocks.positions == Block::Optimize {
            let positions = solve_positions(problem, &cur, &opts.sca)?.positions;
            let trial = Decision { positions, ..cur.clone() };
            consider(&mut cur, &mut eval, trial, Block::Optimize)?;
        }
        iterations.push(IterationRecord::from(&eval));
        if relative_change(eval.value, prev) < opts.tol {
            converged = true;
            break;
        }
    }

    Ok(SolveReport {
        iterations,
        per_robot_cost: eval.per_robot_cost.clone(),
        final_decision: cur,
        converged,
        wall_time: 0.0,
        seed,
        eta: problem.eta(),
        p_max: sc.rf.p_max,
        stability_enforced: problem.enforce_stability,
        restored,
    })
}

/// The full co-design solve from the seeded starting point.
pub fn solve(problem: &Problem) -> Result<SolveReport> {
    let seed = problem.scenario.seed;
    let start = initial_decision(problem, seed)?;
    solve_from(problem, &start, Blocks::ALL, &NoRules, seed)
}

/// Per-robot LQR cost of a decision in closed form.
pub fn recover_lqr_costs(problem: &Problem, dec: &Decision) -> Result<DVector<f64>> {
    let links = problem.links(&dec.power, &dec.positions)?;
    let x = throughput_per_robot(&dec.theta, &links.rate, problem.scenario.rf.uses_per_step)?;
    let mut out = DVector::zeros(x.len());
    for (k, plant) in problem.plants.iter().enumerate() {
        out[k] = lqr_cost_from_throughput(plant, x[k]).map_err(|e| match e {
            Error::StabilityViolated { f, .. } => Error::StabilityViolated { robot: k, f },
            other => other,
        })?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{equal_power, random_positioning, sensing_only};
    use crate::control::{lqr_cost_from_throughput, PlantSpec};
    use crate::scenario::{min_pairwise_distance, Point, Scenario};
    use alloc::vec;

    fn problem(seed: u64) -> Problem {
        let mut s = Scenario::default();
        s.seed = seed;
        Problem::new(s).unwrap()
    }

    #[test]
    fn trace_is_monotone_and_final_feasible() {
        let base = problem(0);
        for seed in 0..20 {
            let mut s = base.scenario.clone();
            s.seed = seed;
            let pr = Problem::with_plants(s, base.plants.clone()).unwrap();
            let r = solve(&pr).unwrap();
            for w in r.iterations.windows(2) {
                assert!(w[1].objective <= w[0].objective + 1e-9 * w[0].objective.abs());
            }
            r.final_decision.check(&pr.scenario, 1e-9).unwrap();
            assert!(min_pairwise_distance(&r.final_decision.positions) >= 25.0 * (1.0 - 1e-9));
            let costs = recover_lqr_costs(&pr, &r.final_decision).unwrap();
            for k in 0..costs.len() {
                assert!(costs[k] >= pr.plants[k].b_min);
                assert_eq!(costs[k], r.per_robot_cost[k]);
            }
        }
    }

    #[test]
    fn same_seed_same_report() {
        let pr = problem(3);
        assert_eq!(solve(&pr).unwrap(), solve(&pr).unwrap());
    }

    #[test]
    fn zero_budget_returns_the_start() {
        let pr = problem(1);
        let start = solve(&pr).unwrap().final_decision;
        let mut s = pr.scenario.clone();
        s.solver.max_iter = 0;
        let pr0 = Problem::with_plants(s, pr.plants.clone()).unwrap();
        let r = solve_from(&pr0, &start, Blocks::ALL, &NoRules, 1).unwrap();
        assert_eq!(r.final_decision, start);
        assert_eq!(r.iterations.len(), 1);
        assert!(!r.converged && !r.restored);
    }

    #[test]
    fn unbounded_throughput_gives_the_floor() {
        let pr = problem(1);
        for pl in &pr.plants {
            assert_eq!(lqr_cost_from_throughput(pl, f64::INFINITY).unwrap(), pl.b_min);
        }
    }

    #[test]
    fn restoration_reaches_stability() {
        let pr = problem(1);
        let start = initial_decision(&pr, 1).unwrap();
        assert!(matches!(pr.evaluate(&start), Err(Error::StabilityViolated { .. })));
        let (dec, moved) = restore_stability(&pr, &start, Blocks::ALL).unwrap();
        assert!(moved);
        pr.evaluate(&dec).unwrap();
    }

    #[test]
    fn unreachable_entropy_rate_is_reported() {
        let mut s = Scenario::default();
        s.plants[1] = PlantSpec::with_entropy_rate(25, 400.0, 1e-3, 1e-3);
        let pr = Problem::new(s).unwrap();
        assert!(matches!(solve(&pr), Err(Error::StabilityViolated { robot: 1, .. })));
    }

    #[test]
    fn equal_power_keeps_the_split() {
        let pr = problem(2);
        let r = equal_power(&pr).unwrap();
        let share = pr.scenario.rf.p_max / 4.0;
        assert!(r.final_decision.power.iter().all(|&p| p == share));
    }

    #[test]
    fn single_uav_equal_power_matches_full_solve() {
        let mut s = Scenario::default();
        s.geometry.n_uav = 1;
        s.geometry.robots = vec![Point::new(40.0, 40.0, 0.0)];
        s.plants.truncate(1);
        let pr = Problem::new(s).unwrap();
        let a = solve(&pr).unwrap();
        let b = equal_power(&pr).unwrap();
        assert_eq!(a.final_decision, b.final_decision);
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn random_positioning_keeps_positions() {
        let pr = problem(4);
        let r = random_positioning(&pr).unwrap();
        assert_eq!(r.final_decision.positions, random_positions(&pr.scenario.geometry, 4).unwrap());
    }

    #[test]
    fn sensing_only_metadata() {
        let pr = problem(5);
        let r = sensing_only(&pr).unwrap();
        assert_eq!(r.eta, 0.0);
        assert!(!r.stability_enforced);
        assert_eq!(r.p_max, 0.5 * pr.scenario.rf.p_max);
        let total: f64 = r.final_decision.power.iter().sum();
        assert!((total - r.p_max).abs() <= 1e-9 * r.p_max);
    }
}
