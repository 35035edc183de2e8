//! Benchmark schemes that degrade one block of the co-design.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::ao::{initial_decision, solve_from, Block, Blocks, NoRules, Rules, SolveReport};
use crate::assignment::from_matrix;
use crate::assoc::nearest_association;
use crate::error::{Error, Result};
use crate::objective::{Decision, Problem};

/// Power fixed at `P_max / M`; association and positions optimized.
pub fn equal_power(problem: &Problem) -> Result<SolveReport> {
    let seed = problem.scenario.seed;
    let start = initial_decision(problem, seed)?;
    let blocks = Blocks {
        power: Block::Fixed,
        ..Blocks::ALL
    };
    solve_from(problem, &start, blocks, &NoRules, seed)
}

/// Positions fixed at the seeded random placement; association and power
/// optimized.
pub fn random_positioning(problem: &Problem) -> Result<SolveReport> {
    let seed = problem.scenario.seed;
    let start = initial_decision(problem, seed)?;
    let blocks = Blocks {
        positions: Block::Fixed,
        ..Blocks::ALL
    };
    solve_from(problem, &start, blocks, &NoRules, seed)
}

/// Classic interference-free water filling `p_i = max(L - inv_gain_i, 0)`
/// with the level `L` set by bisection so the powers sum to `p_max`.
/// `inv_gain_i` is the noise-to-gain ratio of link i.
pub fn water_filling_levels(inv_gain: &[f64], p_max: f64) -> Vec<f64> {
    if inv_gain.is_empty() {
        return Vec::new();
    }
    let spent = |level: f64| inv_gain.iter().map(|g| (level - g).max(0.0)).sum::<f64>();
    let mut lo = 0.0;
    let mut hi = p_max + inv_gain.iter().fold(0.0f64, |a, &g| a.max(g));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if spent(mid) > p_max {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    inv_gain.iter().map(|g| (lo - g).max(0.0)).collect()
}

struct WaterFilling;

impl Rules for WaterFilling {
    fn association(&self, problem: &Problem, dec: &Decision) -> Result<DMatrix<f64>> {
        nearest_association(&dec.positions, &problem.scenario.geometry.robots)
    }

    fn power(&self, problem: &Problem, dec: &Decision) -> Result<Vec<f64>> {
        water_filling_power(problem, dec)
    }
}

/// Water-filling power for the links in `dec.theta`; UAVs without a robot
/// share whatever budget is left.
pub fn water_filling_power(problem: &Problem, dec: &Decision) -> Result<Vec<f64>> {
    let sc = &problem.scenario;
    let links = problem.links(&dec.power, &dec.positions)?;
    let rows = from_matrix(&dec.theta);
    if rows.iter().any(|&m| m == usize::MAX) {
        return Err(Error::InfeasibleAssociation("water filling needs a binary association".into()));
    }
    let inv: Vec<f64> = rows
        .iter()
        .enumerate()
        .map(|(k, &m)| sc.rf.noise_comm / links.gains[(m, k)])
        .collect();
    let levels = water_filling_levels(&inv, sc.rf.p_max);
    let mut power = alloc::vec![0.0; dec.n_uav()];
    for (k, &m) in rows.iter().enumerate() {
        power[m] = levels[k];
    }
    let idle: Vec<usize> = (0..dec.n_uav()).filter(|m| !rows.contains(m)).collect();
    let residual = (sc.rf.p_max - levels.iter().sum::<f64>()).max(0.0);
    if !idle.is_empty() {
        for &m in &idle {
            power[m] = residual / idle.len() as f64;
        }
    }
    Ok(power)
}

/// Nearest-UAV association with water-filling power, both re-applied each
/// iteration, and positions by SCA.
pub fn water_filling(problem: &Problem) -> Result<SolveReport> {
    let seed = problem.scenario.seed;
    let mut start = initial_decision(problem, seed)?;
    start.power = water_filling_power(problem, &start)?;
    let blocks = Blocks {
        association: Block::Rule,
        power: Block::Rule,
        positions: Block::Optimize,
    };
    solve_from(problem, &start, blocks, &WaterFilling, seed)
}

/// Sensing alone (`eta = 0`) at half the power budget, with the stability
/// constraints waived.
pub fn sensing_only(problem: &Problem) -> Result<SolveReport> {
    let mut sc = problem.scenario.clone();
    sc.weights.eta = 0.0;
    sc.rf.p_max *= 0.5;
    let mut sensing = Problem::with_plants(sc, problem.plants.clone())?;
    sensing.enforce_stability = false;
    let seed = sensing.scenario.seed;
    let start = initial_decision(&sensing, seed)?;
    solve_from(&sensing, &start, Blocks::ALL, &NoRules, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_gains_split_equally() {
        let p = water_filling_levels(&[1e-5; 3], 0.6);
        for x in &p {
            assert!((x - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn two_link_levels_match_closed_form() {
        // Both links active: 2L - (1e-5 + 1e-4) = 0.5.
        let inv = [1e-14 / 1e-9, 1e-14 / 1e-10];
        let p = water_filling_levels(&inv, 0.5);
        let level = (0.5 + inv[0] + inv[1]) / 2.0;
        assert!((p[0] - (level - inv[0])).abs() < 1e-12);
        assert!((p[1] - (level - inv[1])).abs() < 1e-12);
        assert!((p[0] + p[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn weak_link_gets_nothing() {
        let p = water_filling_levels(&[1e-5, 10.0], 0.5);
        assert!((p[0] - 0.5).abs() < 1e-12);
        assert_eq!(p[1], 0.0);
    }
}
