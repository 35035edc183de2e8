//! The weighted co-design objective
//! `phi = (eta/psi_c) sum_k b_k - ((1-eta)/psi_s) det(Phi_s)`
//! and its analytic gradients in transmit power and UAV positions.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Vector3};
use num_traits::Float;

use crate::channel::{check_association, gain_matrix, throughput_per_robot, FblModel, LinkState};
use crate::control::{derive_plant, lqr_cost_from_throughput, lqr_cost_slope, PlantDerived};
use crate::error::{Error, Result};
use crate::scenario::{Point, Scenario, SensingNormalizer};
use crate::sensing::{det_grad_positions, det_grad_power, det_upper_bound, fim_position, FimTerms};

/// The optimization variables: association, transmit power and UAV positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    /// `M x K`, `theta[(m, k)] = 1` when UAV `m` serves robot `k`.
    pub theta: DMatrix<f64>,
    pub power: Vec<f64>,
    pub positions: Vec<Point>,
}

impl Decision {
    pub fn n_uav(&self) -> usize {
        self.power.len()
    }

    /// Checks every constraint of the joint problem with slack `tol`.
    pub fn check(&self, scenario: &Scenario, tol: f64) -> Result<()> {
        let g = &scenario.geometry;
        let (m, k) = self.theta.shape();
        if m != g.n_uav || k != g.robots.len() || self.power.len() != m || self.positions.len() != m {
            return Err(Error::Dimension(alloc::format!(
                "decision is {m}x{k} with {} powers and {} positions for {} UAVs and {} robots",
                self.power.len(),
                self.positions.len(),
                g.n_uav,
                g.robots.len()
            )));
        }
        check_association(&self.theta, tol)?;
        if self.power.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::InvalidScenario("negative transmit power".into()));
        }
        let total: f64 = self.power.iter().sum();
        if total > scenario.rf.p_max * (1.0 + 1e-12) + 1e-15 {
            return Err(Error::InvalidScenario(alloc::format!(
                "total power {total} exceeds the budget {}",
                scenario.rf.p_max
            )));
        }
        for (i, q) in self.positions.iter().enumerate() {
            if !g.contains(q, tol) {
                return Err(Error::InvalidScenario(alloc::format!("UAV {i} leaves the flight area")));
            }
            for (j, r) in self.positions.iter().enumerate().skip(i + 1) {
                if (q - r).norm() < g.d_min - tol {
                    return Err(Error::InvalidScenario(alloc::format!(
                        "UAVs {i} and {j} are closer than d_min"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveBreakdown {
    pub value: f64,
    pub lqr_sum: f64,
    pub det_fim: f64,
    /// `tr(Phi_s^-1)`, `+inf` when the geometry is rank deficient.
    pub crb_sum: f64,
    pub per_robot_cost: DVector<f64>,
    /// Bits per control step.
    pub per_robot_throughput: DVector<f64>,
}

/// Gradient of the objective in both continuous blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub power: DVector<f64>,
    pub positions: Vec<Vector3<f64>>,
}

/// A scenario with its plant quantities solved once.
#[derive(Debug, Clone)]
pub struct Problem {
    pub scenario: Scenario,
    pub plants: Vec<PlantDerived>,
    pub fbl: FblModel,
    /// The resolved sensing normalizer.
    pub psi_s: f64,
    /// When false, robots that violate the stability condition get an
    /// infinite cost instead of an error. Only meaningful with `eta = 0`.
    pub enforce_stability: bool,
}

impl Problem {
    pub fn new(scenario: Scenario) -> Result<Self> {
        scenario.validate()?;
        let opts = &scenario.solver;
        let plants = derive_plants(&scenario.plants, opts.riccati_tol, opts.riccati_max_iter)?;
        Self::with_plants(scenario, plants)
    }

    /// Reuses already-derived plants; they must belong to `scenario`.
    pub fn with_plants(scenario: Scenario, plants: Vec<PlantDerived>) -> Result<Self> {
        scenario.validate()?;
        if plants.len() != scenario.n_robot() {
            return Err(Error::Dimension(alloc::format!(
                "{} derived plants for {} robots",
                plants.len(),
                scenario.n_robot()
            )));
        }
        let fbl = FblModel::from_rf(&scenario.rf)?;
        let psi_s = match scenario.weights.psi_s {
            SensingNormalizer::Fixed(v) => v,
            SensingNormalizer::DetBound => det_upper_bound(&scenario.geometry, &scenario.rf)?,
        };
        Ok(Self {
            scenario,
            plants,
            fbl,
            psi_s,
            enforce_stability: true,
        })
    }

    pub fn eta(&self) -> f64 {
        self.scenario.weights.eta
    }

    fn control_weight(&self) -> f64 {
        self.eta() / self.scenario.weights.psi_c
    }

    fn sensing_weight(&self) -> f64 {
        (1.0 - self.eta()) / self.psi_s
    }

    pub fn links(&self, power: &[f64], positions: &[Point]) -> Result<LinkState> {
        LinkState::compute(positions, &self.scenario.geometry.robots, power, &self.scenario.rf, &self.fbl)
    }

    /// Per-robot LQR cost and throughput for a (possibly relaxed) association
    /// at fixed rates.
    pub fn control_costs(&self, theta: &DMatrix<f64>, rates: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let x = throughput_per_robot(theta, rates, self.scenario.rf.uses_per_step)?;
        let mut b = DVector::zeros(x.len());
        for (k, plant) in self.plants.iter().enumerate() {
            b[k] = match lqr_cost_from_throughput(plant, x[k]) {
                Ok(v) => v,
                Err(Error::StabilityViolated { f, .. }) => {
                    if self.enforce_stability {
                        return Err(Error::StabilityViolated { robot: k, f });
                    }
                    f64::INFINITY
                }
                Err(e) => return Err(e),
            };
        }
        Ok((b, x))
    }

    /// The control part `(eta/psi_c) sum_k b_k`, zero when `eta = 0`.
    pub fn control_term(&self, costs: &DVector<f64>) -> f64 {
        if self.eta() == 0.0 {
            0.0
        } else {
            self.eta() * costs.sum() / self.scenario.weights.psi_c
        }
    }

    pub fn evaluate(&self, dec: &Decision) -> Result<ObjectiveBreakdown> {
        let links = self.links(&dec.power, &dec.positions)?;
        let (costs, x) = self.control_costs(&dec.theta, &links.rate)?;
        let target = &self.scenario.geometry.target;
        let det_fim = FimTerms::new(&dec.power, &dec.positions, target, &self.scenario.rf)?.det();
        let crb_sum = fim_position(&dec.power, &dec.positions, target, &self.scenario.rf)?.crb_sum;
        let value = self.control_term(&costs) - (1.0 - self.eta()) * det_fim / self.psi_s;
        Ok(ObjectiveBreakdown {
            value,
            lqr_sum: costs.sum(),
            det_fim,
            crb_sum,
            per_robot_cost: costs,
            per_robot_throughput: x,
        })
    }

    /// Objective value, `+inf` where the decision is not admissible.
    pub fn value_or_inf(&self, dec: &Decision) -> f64 {
        self.evaluate(dec).map_or(f64::INFINITY, |b| b.value)
    }

    /// Gradient in power and positions of a function of the SINR matrix,
    /// given its partial derivatives `weight[m,k] = d/dGamma[m,k]`.
    pub fn sinr_gradient(&self, dec: &Decision, weight: &DMatrix<f64>) -> Result<Gradient> {
        let sc = &self.scenario;
        let robots = &sc.geometry.robots;
        let noise = sc.rf.noise_comm;
        let (n_uav, n_robot) = (dec.n_uav(), robots.len());
        let h = gain_matrix(&dec.positions, robots, sc.rf.alpha0)?;
        let p = &dec.power;
        let mut grad_p = DVector::zeros(n_uav);
        let mut grad_q = vec![Vector3::zeros(); n_uav];
        for k in 0..n_robot {
            let total: f64 = (0..n_uav).map(|i| p[i] * h[(i, k)]).sum();
            for m in 0..n_uav {
                let w = weight[(m, k)];
                if w == 0.0 {
                    continue;
                }
                let denom = total - p[m] * h[(m, k)] + noise;
                let cross = p[m] * h[(m, k)] / (denom * denom);
                for j in 0..n_uav {
                    // dGamma[m,k]/dp_j and dGamma[m,k]/dh[j,k]
                    let (dg_dp, dg_dh) = if j == m {
                        (h[(m, k)] / denom, p[m] / denom)
                    } else {
                        (-cross * h[(j, k)], -cross * p[j])
                    };
                    grad_p[j] += w * dg_dp;
                    let diff = dec.positions[j] - robots[k];
                    // dh/dq = -2 h (q - u) / |q - u|^2
                    grad_q[j] += diff * (w * dg_dh * -2.0 * h[(j, k)] / diff.norm_squared());
                }
            }
        }
        Ok(Gradient {
            power: grad_p,
            positions: grad_q,
        })
    }

    /// Gradient of `sum_k weight[k] * X_k`, where `X_k` is robot k's
    /// throughput under `dec.theta`.
    pub fn throughput_gradient(&self, dec: &Decision, weight: &DVector<f64>) -> Result<Gradient> {
        let links = self.links(&dec.power, &dec.positions)?;
        let c = self.scenario.rf.uses_per_step;
        let w = DMatrix::from_fn(dec.n_uav(), weight.len(), |m, k| {
            let th = dec.theta[(m, k)];
            if th == 0.0 || weight[k] == 0.0 {
                0.0
            } else {
                weight[k] * c * th * self.fbl.rate_slope(links.sinr[(m, k)])
            }
        });
        self.sinr_gradient(dec, &w)
    }

    pub fn gradient(&self, dec: &Decision) -> Result<Gradient> {
        let sc = &self.scenario;
        let n_uav = dec.n_uav();
        let p = &dec.power;
        let mut grad = Gradient {
            power: DVector::zeros(n_uav),
            positions: vec![Vector3::zeros(); n_uav],
        };

        if self.eta() > 0.0 {
            let links = self.links(p, &dec.positions)?;
            let (_, x) = self.control_costs(&dec.theta, &links.rate)?;
            let mut weight = DVector::zeros(x.len());
            for k in 0..x.len() {
                let slope = lqr_cost_slope(&self.plants[k], x[k]).map_err(|e| match e {
                    Error::StabilityViolated { f, .. } => Error::StabilityViolated { robot: k, f },
                    other => other,
                })?;
                weight[k] = self.control_weight() * slope;
            }
            grad = self.throughput_gradient(dec, &weight)?;
        }

        if self.eta() < 1.0 {
            let terms = FimTerms::new(p, &dec.positions, &sc.geometry.target, &sc.rf)?;
            let ws = self.sensing_weight();
            grad.power -= det_grad_power(&terms, &sc.rf) * ws;
            for (g, d) in grad.positions.iter_mut().zip(det_grad_positions(&terms, p, &sc.rf)) {
                *g -= d * ws;
            }
        }

        Ok(grad)
    }

    pub fn grad_power(&self, dec: &Decision) -> Result<DVector<f64>> {
        Ok(self.gradient(dec)?.power)
    }

    pub fn grad_positions(&self, dec: &Decision) -> Result<Vec<Vector3<f64>>> {
        Ok(self.gradient(dec)?.positions)
    }
}

/// A smooth function of `(power, positions)` at a fixed association, as
/// seen by the power and position subsolvers.
pub trait Criterion {
    fn problem(&self) -> &Problem;

    /// Errors where the decision is not admissible.
    fn value(&self, dec: &Decision) -> Result<f64>;

    fn gradient(&self, dec: &Decision) -> Result<Gradient>;

    fn value_or_inf(&self, dec: &Decision) -> f64 {
        self.value(dec).unwrap_or(f64::INFINITY)
    }
}

impl Criterion for Problem {
    fn problem(&self) -> &Problem {
        self
    }

    fn value(&self, dec: &Decision) -> Result<f64> {
        Ok(self.evaluate(dec)?.value)
    }

    fn gradient(&self, dec: &Decision) -> Result<Gradient> {
        Problem::gradient(self, dec)
    }
}

/// Squared stability shortfall in log-SINR,
/// `sum_k max(0, ln(gamma*_k + e_k) - ln(Gamma_k + e_k))^2`, where `gamma*_k`
/// is the SINR at which robot k's throughput clears its entropy rate by
/// half its state dimension (`f_k = 1`) and `e_k = 1e-6 gamma*_k` keeps the
/// logarithm finite at zero power. Zero once every robot has that margin.
/// Unlike a throughput shortfall it keeps a gradient where the rate is
/// clamped at zero. Requires a binary association.
#[derive(Debug, Clone)]
pub struct StabilityShortfall<'a> {
    pub problem: &'a Problem,
    target: Vec<f64>,
}

const SHORTFALL_FLOOR: f64 = 1e-6;

impl<'a> StabilityShortfall<'a> {
    pub fn new(problem: &'a Problem) -> Self {
        let c = problem.scenario.rf.uses_per_step;
        let target = problem
            .plants
            .iter()
            .map(|pl| problem.fbl.required_sinr((pl.entropy_rate + 0.5 * pl.iota as f64) / c))
            .collect();
        Self { problem, target }
    }

    /// SINR each robot needs.
    pub fn target_sinr(&self) -> &[f64] {
        &self.target
    }

    /// Serving SINR of each robot and the matrix of SINRs.
    fn serving(&self, dec: &Decision) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let links = self.problem.links(&dec.power, &dec.positions)?;
        let served = (0..self.target.len())
            .map(|k| (0..dec.n_uav()).map(|m| dec.theta[(m, k)] * links.sinr[(m, k)]).sum())
            .collect();
        Ok((served, links.sinr))
    }

    /// Log-SINR gap of robot k at serving SINR `gamma`.
    pub fn shortfall(&self, k: usize, gamma: f64) -> f64 {
        let e = SHORTFALL_FLOOR * self.target[k];
        ((self.target[k] + e).ln() - (gamma + e).ln()).max(0.0)
    }
}

impl Criterion for StabilityShortfall<'_> {
    fn problem(&self) -> &Problem {
        self.problem
    }

    fn value(&self, dec: &Decision) -> Result<f64> {
        let (served, _) = self.serving(dec)?;
        Ok(served.iter().enumerate().map(|(k, &g)| {
            let s = self.shortfall(k, g);
            s * s
        }).sum())
    }

    fn gradient(&self, dec: &Decision) -> Result<Gradient> {
        let (served, _) = self.serving(dec)?;
        let w = DMatrix::from_fn(dec.n_uav(), served.len(), |m, k| {
            let s = self.shortfall(k, served[k]);
            if s == 0.0 {
                0.0
            } else {
                -2.0 * s * dec.theta[(m, k)] / (served[k] + SHORTFALL_FLOOR * self.target[k])
            }
        });
        self.problem.sinr_gradient(dec, &w)
    }
}

/// Derives each distinct plant once; identical plants share the result.
pub fn derive_plants(
    specs: &[crate::control::PlantSpec],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<PlantDerived>> {
    let mut out: Vec<PlantDerived> = Vec::with_capacity(specs.len());
    for (k, spec) in specs.iter().enumerate() {
        if let Some(j) = specs[..k].iter().position(|s| s == spec) {
            let copy = out[j].clone();
            out.push(copy);
        } else {
            out.push(derive_plant(spec, tol, max_iter)?);
        }
    }
    Ok(out)
}
