//! UAV placement by successive convex approximation. Each step linearizes
//! the objective and the collision constraints at the current positions and
//! solves the resulting LP inside an infinity-norm trust region.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lp;
use crate::objective::{Criterion, Decision};
use crate::scenario::{Point, ScaOptions};

/// Linearized collision constraint `normal . (q_m - q_r) >= offset`,
/// a global inner approximation of `|q_m - q_r| >= d_min`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionCut {
    pub m: usize,
    pub r: usize,
    /// `2 (q_m - q_r)` at the anchor.
    pub normal: nalgebra::Vector3<f64>,
    /// `d_min^2 + |q_m - q_r|^2` at the anchor.
    pub offset: f64,
}

impl CollisionCut {
    pub fn lhs(&self, qm: &Point, qr: &Point) -> f64 {
        self.normal.dot(&(qm - qr))
    }

    pub fn holds(&self, qm: &Point, qr: &Point, tol: f64) -> bool {
        self.lhs(qm, qr) >= self.offset - tol
    }
}

/// Cuts for every UAV pair from a feasible anchor.
pub fn linearize_collision(anchor: &[Point], d_min: f64) -> Result<Vec<CollisionCut>> {
    let mut cuts = Vec::new();
    for m in 0..anchor.len() {
        for r in m + 1..anchor.len() {
            let delta = anchor[m] - anchor[r];
            let dist = delta.norm();
            if dist == 0.0 {
                return Err(Error::CoincidentPoints("two UAVs share a position"));
            }
            if dist < d_min * (1.0 - 1e-12) {
                return Err(Error::InvalidScenario(alloc::format!(
                    "anchor UAVs {m} and {r} are {dist} m apart, below d_min"
                )));
            }
            cuts.push(CollisionCut {
                m,
                r,
                normal: delta * 2.0,
                offset: d_min * d_min + delta.norm_squared(),
            });
        }
    }
    Ok(cuts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaStep {
    pub positions: Vec<Point>,
    pub accepted: bool,
    /// Objective at the returned positions.
    pub value: f64,
}

/// One trust-region step from the positions in `dec`.
pub fn sca_step<C: Criterion + ?Sized>(crit: &C, dec: &Decision, trust: f64) -> Result<ScaStep> {
    let geo = &crit.problem().scenario.geometry;
    let anchor = &dec.positions;
    let base = crit.value(dec)?;
    let grad = crit.gradient(dec)?.positions;
    let dims: &[usize] = if geo.fixed_altitude().is_some() { &[0, 1] } else { &[0, 1, 2] };
    let nd = dims.len();
    let n_uav = anchor.len();
    let n_x = n_uav * nd;
    let bounds = [&geo.area_x, &geo.area_y, &geo.altitude];

    // Displacement x = u_plus - u_minus with u_plus <= hi, u_minus <= -lo.
    let mut lo = alloc::vec![0.0; n_x];
    let mut hi = alloc::vec![0.0; n_x];
    let mut cost = alloc::vec![0.0; 2 * n_x];
    for m in 0..n_uav {
        for (j, &axis) in dims.iter().enumerate() {
            let v = m * nd + j;
            lo[v] = (-trust).max(bounds[axis].lo - anchor[m][axis]).min(0.0);
            hi[v] = trust.min(bounds[axis].hi - anchor[m][axis]).max(0.0);
            cost[v] = grad[m][axis];
            cost[n_x + v] = -grad[m][axis];
        }
    }
    let cuts = linearize_collision(anchor, geo.d_min)?;
    let rows = cuts.len() + 2 * n_x;
    let mut a = DMatrix::zeros(rows, 2 * n_x);
    let mut b = alloc::vec![0.0; rows];
    for (i, cut) in cuts.iter().enumerate() {
        // -normal . (x_m - x_r) <= |delta|^2 - d_min^2
        for (j, &axis) in dims.iter().enumerate() {
            let (vm, vr) = (cut.m * nd + j, cut.r * nd + j);
            a[(i, vm)] = -cut.normal[axis];
            a[(i, n_x + vm)] = cut.normal[axis];
            a[(i, vr)] = cut.normal[axis];
            a[(i, n_x + vr)] = -cut.normal[axis];
        }
        b[i] = (cut.lhs(&anchor[cut.m], &anchor[cut.r]) - cut.offset).max(0.0);
    }
    for v in 0..n_x {
        a[(cuts.len() + v, v)] = 1.0;
        b[cuts.len() + v] = hi[v];
        a[(cuts.len() + n_x + v, n_x + v)] = 1.0;
        b[cuts.len() + n_x + v] = -lo[v];
    }
    let sol = lp::minimize(&cost, &a, &b)?;

    let mut positions = anchor.clone();
    let mut moved = false;
    for m in 0..n_uav {
        for (j, &axis) in dims.iter().enumerate() {
            let v = m * nd + j;
            let x = sol.x[v] - sol.x[n_x + v];
            if x != 0.0 {
                moved = true;
                positions[m][axis] = bounds[axis].clamp(anchor[m][axis] + x);
            }
        }
    }
    if !moved {
        return Ok(ScaStep {
            positions,
            accepted: true,
            value: base,
        });
    }
    // The cuts are inner approximations, so the true constraint must hold.
    for cut in &cuts {
        let d = (positions[cut.m] - positions[cut.r]).norm();
        debug_assert!(d >= geo.d_min * (1.0 - 1e-9), "SCA step broke spacing: {d}");
    }
    let trial = Decision {
        positions,
        ..dec.clone()
    };
    let value = crit.value_or_inf(&trial);
    if value < base {
        Ok(ScaStep {
            positions: trial.positions,
            accepted: true,
            value,
        })
    } else {
        Ok(ScaStep {
            positions: anchor.clone(),
            accepted: false,
            value: base,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionResult {
    pub positions: Vec<Point>,
    /// Objective after each accepted step, starting with the initial value.
    pub trace: Vec<f64>,
    pub converged: bool,
}

pub fn solve_positions<C: Criterion + ?Sized>(crit: &C, dec: &Decision, opts: &ScaOptions) -> Result<PositionResult> {
    let mut cur = dec.clone();
    let mut value = crit.value(&cur)?;
    let mut trace = alloc::vec![value];
    let mut trust = opts.trust0;
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let step = sca_step(crit, &cur, trust)?;
        if step.accepted {
            if step.positions == cur.positions {
                converged = true;
                break;
            }
            let gain = value - step.value;
            cur.positions = step.positions;
            value = step.value;
            trace.push(value);
            if gain <= opts.tol * value.abs().max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        } else {
            trust *= opts.shrink;
            if trust < opts.trust_min {
                converged = true;
                break;
            }
        }
    }
    Ok(PositionResult {
        positions: cur.positions,
        trace,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assoc::nearest_association;
    use crate::control::PlantSpec;
    use crate::objective::Problem;
    use crate::scenario::{min_pairwise_distance, random_positions, Interval, Scenario};
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cut_is_tight_at_spacing() {
        let a = [Point::new(0.0, 0.0, 100.0), Point::new(25.0, 0.0, 100.0)];
        let cuts = linearize_collision(&a, 25.0).unwrap();
        assert_eq!(cuts.len(), 1);
        assert!((cuts[0].lhs(&a[0], &a[1]) - 2.0 * 625.0).abs() < 1e-9);
        assert!((cuts[0].lhs(&a[0], &a[1]) - cuts[0].offset).abs() < 1e-9);
        assert!(linearize_collision(&[a[0], a[0]], 25.0).is_err());
    }

    #[test]
    fn cuts_imply_true_spacing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = [Point::new(10.0, 40.0, 100.0), Point::new(40.0, 60.0, 100.0)];
        let cut = linearize_collision(&a, 25.0).unwrap()[0];
        let mut hits = 0;
        for _ in 0..10_000 {
            let p = Point::new(rng.random_range(-50.0..150.0), rng.random_range(-50.0..150.0), rng.random_range(50.0..150.0));
            let q = Point::new(rng.random_range(-50.0..150.0), rng.random_range(-50.0..150.0), rng.random_range(50.0..150.0));
            if cut.holds(&p, &q, 0.0) {
                hits += 1;
                assert!((p - q).norm() >= 25.0 - 1e-9);
            }
        }
        assert!(hits > 100);
    }

    fn scenario(eta: f64) -> Scenario {
        let mut s = Scenario::default();
        s.plants = [2.0, 4.0, 6.0].iter().map(|&g| PlantSpec::with_entropy_rate(25, g, 1e-3, 1e-3)).collect();
        s.weights.eta = eta;
        s
    }

    fn decision(s: &Scenario, seed: u64) -> Decision {
        let positions = random_positions(&s.geometry, seed).unwrap();
        Decision {
            theta: nearest_association(&positions, &s.geometry.robots).unwrap(),
            power: vec![s.rf.p_max / s.n_uav() as f64; s.n_uav()],
            positions,
        }
    }

    #[test]
    fn stationary_point_is_kept() {
        let mut s = scenario(1.0);
        s.geometry.robots = vec![Point::new(40.0, 60.0, 0.0)];
        s.plants.truncate(1);
        s.geometry.n_uav = 1;
        let pr = Problem::new(s).unwrap();
        let dec = Decision {
            theta: DMatrix::from_element(1, 1, 1.0),
            power: vec![0.5],
            positions: vec![Point::new(40.0, 60.0, 100.0)],
        };
        let step = sca_step(&pr, &dec, 10.0).unwrap();
        assert!(step.accepted);
        assert_eq!(step.positions, dec.positions);
    }

    #[test]
    fn sensing_step_approaches_target() {
        let mut s = scenario(0.0);
        s.geometry.n_uav = 3;
        s.geometry.target = Point::new(50.0, 50.0, 0.0);
        let pr = Problem::new(s).unwrap();
        let dec = Decision {
            theta: DMatrix::identity(3, 3),
            power: vec![0.2; 3],
            positions: vec![Point::new(5.0, 5.0, 100.0), Point::new(95.0, 10.0, 100.0), Point::new(20.0, 95.0, 100.0)],
        };
        let step = sca_step(&pr, &dec, 10.0).unwrap();
        assert!(step.accepted && step.value < pr.evaluate(&dec).unwrap().value);
        let dist = |q: &[Point]| q.iter().map(|p| (p - pr.scenario.geometry.target).norm()).sum::<f64>();
        assert!(dist(&step.positions) < dist(&dec.positions));
    }

    #[test]
    fn iterates_stay_feasible_and_descend() {
        for eta in [0.0, 0.5, 1.0] {
            let pr = Problem::new(scenario(eta)).unwrap();
            for seed in 0..5 {
                let dec = decision(&pr.scenario, seed);
                let Ok(out) = solve_positions(&pr, &dec, &ScaOptions::default()) else {
                    continue;
                };
                for w in out.trace.windows(2) {
                    assert!(w[1] < w[0]);
                }
                assert!(min_pairwise_distance(&out.positions) >= 25.0 * (1.0 - 1e-9));
                for q in &out.positions {
                    assert_eq!(q.z, 100.0);
                    assert!(pr.scenario.geometry.contains(q, 1e-9));
                }
            }
        }
    }

    #[test]
    fn three_dimensional_box_is_respected() {
        let mut s = scenario(0.5);
        s.geometry.altitude = Interval::new(60.0, 120.0);
        let pr = Problem::new(s).unwrap();
        let dec = decision(&pr.scenario, 4);
        let out = solve_positions(&pr, &dec, &ScaOptions::default()).unwrap();
        for q in &out.positions {
            assert!(pr.scenario.geometry.contains(q, 1e-9));
        }
        assert!(min_pairwise_distance(&out.positions) >= 25.0 * (1.0 - 1e-9));
    }

    #[test]
    fn single_link_matches_grid_search() {
        let mut s = scenario(1.0);
        s.geometry.robots = vec![Point::new(33.0, 71.0, 0.0)];
        s.plants.truncate(1);
        s.geometry.n_uav = 1;
        let pr = Problem::new(s).unwrap();
        let dec = Decision {
            theta: DMatrix::from_element(1, 1, 1.0),
            power: vec![1e-4],
            positions: vec![Point::new(90.0, 10.0, 100.0)],
        };
        // The control term is nearly flat at this range, so only the trust
        // radius stops the loop.
        let opts = ScaOptions { tol: 0.0, ..ScaOptions::default() };
        let out = solve_positions(&pr, &dec, &opts).unwrap();
        let mut best = (f64::INFINITY, Point::zeros());
        for x in 0..=100 {
            for y in 0..=100 {
                let q = Point::new(x as f64, y as f64, 100.0);
                let v = pr.value_or_inf(&Decision { positions: vec![q], ..dec.clone() });
                if v < best.0 {
                    best = (v, q);
                }
            }
        }
        assert!((out.positions[0] - best.1).norm() <= 2.0, "{:?} vs {:?}", out.positions[0], best.1);
    }
}
