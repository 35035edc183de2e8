//! Experiment scenarios: geometry, RF constants, control plants, objective
//! weights and solver options.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::Vector3;
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::RateConvention;
use crate::control::PlantSpec;
use crate::error::{Error, Result};
use crate::units::{db_to_linear, dbm_to_watts, dbw_to_watts};

/// A point in meters.
pub type Point = Vector3<f64>;

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64, tol: f64) -> bool {
        x >= self.lo - tol && x <= self.hi + tol
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.max(self.lo).min(self.hi)
    }

    fn is_valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub area_x: Interval,
    pub area_y: Interval,
    /// UAV height range; a degenerate interval pins every UAV at that altitude.
    pub altitude: Interval,
    pub d_min: f64,
    pub robots: Vec<Point>,
    pub target: Point,
    pub n_uav: usize,
}

impl Geometry {
    /// The common altitude when UAV height is pinned.
    pub fn fixed_altitude(&self) -> Option<f64> {
        (self.altitude.lo == self.altitude.hi).then_some(self.altitude.lo)
    }

    pub fn contains(&self, q: &Point, tol: f64) -> bool {
        self.area_x.contains(q.x, tol) && self.area_y.contains(q.y, tol) && self.altitude.contains(q.z, tol)
    }

    /// Number of points of a `d_min`-spaced lattice inside the flight box.
    /// A lattice this large is a packing witness.
    pub fn lattice_capacity(&self) -> usize {
        let per_axis = |iv: &Interval| (iv.width() / self.d_min).floor() as usize + 1;
        per_axis(&self.area_x) * per_axis(&self.area_y) * per_axis(&self.altitude)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidScenario(msg.into()));
        if !(self.area_x.is_valid() && self.area_y.is_valid()) {
            return bad("flight area intervals must be finite and non-empty");
        }
        if !self.altitude.is_valid() || !(self.altitude.lo > 0.0) {
            return bad("altitude must be positive");
        }
        if !(self.d_min > 0.0) || !self.d_min.is_finite() {
            return bad("d_min must be positive");
        }
        if self.robots.is_empty() {
            return bad("at least one robot is required");
        }
        if self.n_uav < self.robots.len() {
            return bad("n_uav < robot count");
        }
        let finite = |p: &Point| p.iter().all(|c| c.is_finite());
        if !self.robots.iter().all(finite) || !finite(&self.target) {
            return bad("robot and target coordinates must be finite");
        }
        if self.lattice_capacity() < self.n_uav {
            return Err(Error::InvalidScenario(format!(
                "no packing of {} UAVs at spacing {} m fits the flight area",
                self.n_uav, self.d_min
            )));
        }
        Ok(())
    }
}

/// Radio constants, all linear SI.
#[derive(Debug, Clone, PartialEq)]
pub struct RfParams {
    /// Communication channel gain at 1 m.
    pub alpha0: f64,
    /// Two-way sensing channel gain at 1 m.
    pub beta0: f64,
    /// Receiver noise at each robot, W.
    pub noise_comm: f64,
    /// Echo receiver noise at the UAVs, W.
    pub noise_sense: f64,
    /// Channel bandwidth, Hz.
    pub bandwidth: f64,
    /// Processing gain as a multiple of the bandwidth.
    pub gp_factor: f64,
    /// Ranging constant of the echo-noise model.
    pub rho: f64,
    /// Block error rate.
    pub bler: f64,
    /// Blocklength in channel uses.
    pub blocklength: f64,
    /// Channel uses available per control step.
    pub uses_per_step: f64,
    /// Network transmit power budget, W.
    pub p_max: f64,
    pub rate_convention: RateConvention,
}

impl RfParams {
    /// Processing gain `G_p`.
    pub fn processing_gain(&self) -> f64 {
        self.gp_factor * self.bandwidth
    }

    /// Echo SNR coefficient `G_p beta0 / (rho sigma0^2)`: the range-noise
    /// variance is `d^4 / (p * coefficient)`.
    pub fn sensing_coefficient(&self) -> f64 {
        self.processing_gain() * self.beta0 / (self.rho * self.noise_sense)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha0", self.alpha0),
            ("beta0", self.beta0),
            ("noise_comm", self.noise_comm),
            ("noise_sense", self.noise_sense),
            ("bandwidth", self.bandwidth),
            ("gp_factor", self.gp_factor),
            ("rho", self.rho),
            ("uses_per_step", self.uses_per_step),
            ("p_max", self.p_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidScenario(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.bler > 0.0 && self.bler < 0.5) {
            return Err(Error::InvalidScenario(format!("bler must lie in (0, 0.5), got {}", self.bler)));
        }
        if !(self.blocklength >= 1.0) {
            return Err(Error::InvalidScenario(format!("blocklength must be >= 1, got {}", self.blocklength)));
        }
        Ok(())
    }
}

/// How the sensing term of the objective is normalized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SensingNormalizer {
    /// A fixed positive constant.
    Fixed(f64),
    /// The analytic upper bound of the FIM determinant over the flight
    /// box at full budget (see [`crate::sensing::det_upper_bound`]).
    DetBound,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveWeights {
    /// Control priority in `[0, 1]`.
    pub eta: f64,
    /// Control normalizer.
    pub psi_c: f64,
    /// Sensing normalizer.
    pub psi_s: SensingNormalizer,
}

impl ObjectiveWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::InvalidScenario(format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        if !(self.psi_c > 0.0) {
            return Err(Error::InvalidScenario("psi_c must be positive".into()));
        }
        if let SensingNormalizer::Fixed(v) = self.psi_s {
            if !(v > 0.0) {
                return Err(Error::InvalidScenario("psi_s must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Penalty-DC association options.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyDcOptions {
    pub mu0: f64,
    pub mu_max: f64,
    /// Penalty growth factor per outer iteration.
    pub growth: f64,
    /// Relative change of the penalized objective that stops the outer loop.
    pub tol: f64,
    pub max_outer: usize,
    /// Frank-Wolfe gap that stops the inner loop.
    pub inner_tol: f64,
    pub inner_max: usize,
}

impl Default for PenaltyDcOptions {
    fn default() -> Self {
        Self {
            mu0: 1e-3,
            mu_max: 1e6,
            growth: 10.0,
            tol: 1e-4,
            max_outer: 30,
            inner_tol: 1e-10,
            inner_max: 500,
        }
    }
}

/// Projected-gradient power allocation options. Step and tolerance are
/// fractions of the power budget so that one option set serves every budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgdOptions {
    /// Initial step as a fraction of `p_max`.
    pub step0: f64,
    /// The step shrinks by `1 / (1 + rho_hat)` every iteration.
    pub rho_hat: f64,
    /// Stopping threshold on `|p - p'|` as a fraction of `p_max`.
    pub tol: f64,
    pub max_iter: usize,
    /// Backtrack until the objective decreases (sufficient-decrease test).
    pub armijo: bool,
}

impl Default for PgdOptions {
    fn default() -> Self {
        Self {
            step0: 0.1,
            rho_hat: 0.1,
            tol: 1e-8,
            max_iter: 500,
            armijo: true,
        }
    }
}

/// Trust-region SCA options for UAV placement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaOptions {
    pub trust0: f64,
    pub trust_min: f64,
    pub shrink: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ScaOptions {
    fn default() -> Self {
        Self {
            trust0: 10.0,
            trust_min: 0.1,
            shrink: 0.5,
            tol: 1e-6,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Relative objective change that stops the alternating loop.
    pub tol: f64,
    pub max_iter: usize,
    /// Riccati fixed-point tolerance and iteration cap.
    pub riccati_tol: f64,
    pub riccati_max_iter: usize,
    pub dc: PenaltyDcOptions,
    pub pgd: PgdOptions,
    pub sca: ScaOptions,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            max_iter: 30,
            riccati_tol: 1e-12,
            riccati_max_iter: 100_000,
            dc: PenaltyDcOptions::default(),
            pgd: PgdOptions::default(),
            sca: ScaOptions::default(),
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidScenario(msg.into()));
        if !(self.tol > 0.0 && self.riccati_tol > 0.0) {
            return bad("solver tolerances must be positive");
        }
        let dc = &self.dc;
        if !(dc.mu0 > 0.0 && dc.growth > 1.0 && dc.mu_max >= dc.mu0 && dc.tol > 0.0 && dc.inner_tol > 0.0) {
            return bad("penalty-DC options need mu0 > 0, growth > 1, mu_max >= mu0 and positive tolerances");
        }
        let pgd = &self.pgd;
        if !(pgd.step0 > 0.0 && pgd.rho_hat > 0.0 && pgd.tol > 0.0) {
            return bad("PGD options need positive step0, rho_hat and tol");
        }
        let sca = &self.sca;
        if !(sca.trust0 > sca.trust_min && sca.trust_min > 0.0 && sca.shrink > 0.0 && sca.shrink < 1.0) {
            return bad("SCA options need trust0 > trust_min > 0 and shrink in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub geometry: Geometry,
    pub rf: RfParams,
    pub weights: ObjectiveWeights,
    /// One plant per robot, in robot order.
    pub plants: Vec<PlantSpec>,
    pub solver: SolverOptions,
    pub seed: u64,
}

/// Values used when a scenario leaves a field unspecified.
pub mod defaults {
    use super::*;

    pub const AREA: Interval = Interval::new(0.0, 100.0);
    pub const ALTITUDE: f64 = 100.0;
    pub const D_MIN: f64 = 25.0;
    pub const N_UAV: usize = 4;
    pub const ROBOTS: [[f64; 3]; 3] = [[20.0, 20.0, 0.0], [80.0, 30.0, 0.0], [50.0, 80.0, 0.0]];
    pub const TARGET: [f64; 3] = [70.0, 70.0, 0.0];

    pub const ALPHA0_DB: f64 = -49.0;
    pub const BETA0_DB: f64 = -50.0;
    pub const NOISE_DBM: f64 = -110.0;
    pub const BANDWIDTH: f64 = 500e3;
    pub const GP_FACTOR: f64 = 0.1;
    pub const RHO: f64 = 200.0;
    pub const BLER: f64 = 1e-5;
    pub const BLOCKLENGTH: f64 = 1024.0;
    pub const USES_PER_STEP: f64 = 100.0;
    pub const P_MAX_DBW: f64 = -1.0;

    pub const IOTA: usize = 25;
    pub const SIGMA_V: f64 = 1e-3;
    pub const SIGMA_W: f64 = 1e-3;
    pub const ENTROPY_RANGE: Interval = Interval::new(0.0, 50.0);

    pub const ETA: f64 = 0.5;
    pub const PSI_C: f64 = 30.0;

    pub const SEED: u64 = 1;

    pub fn geometry() -> Geometry {
        Geometry {
            area_x: AREA,
            area_y: AREA,
            altitude: Interval::point(ALTITUDE),
            d_min: D_MIN,
            robots: ROBOTS.iter().map(|r| Point::new(r[0], r[1], r[2])).collect(),
            target: Point::new(TARGET[0], TARGET[1], TARGET[2]),
            n_uav: N_UAV,
        }
    }

    pub fn rf() -> RfParams {
        RfParams {
            alpha0: db_to_linear(ALPHA0_DB),
            beta0: db_to_linear(BETA0_DB),
            noise_comm: dbm_to_watts(NOISE_DBM),
            noise_sense: dbm_to_watts(NOISE_DBM),
            bandwidth: BANDWIDTH,
            gp_factor: GP_FACTOR,
            rho: RHO,
            bler: BLER,
            blocklength: BLOCKLENGTH,
            uses_per_step: USES_PER_STEP,
            p_max: dbw_to_watts(P_MAX_DBW),
            rate_convention: RateConvention::Bits,
        }
    }

    pub fn weights() -> ObjectiveWeights {
        ObjectiveWeights {
            eta: ETA,
            psi_c: PSI_C,
            psi_s: SensingNormalizer::DetBound,
        }
    }
}

/// Draws `count` entropy rates uniformly from `range`, reproducibly.
pub fn draw_entropy_rates(count: usize, range: Interval, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_e47_0b1e);
    (0..count)
        .map(|_| {
            if range.width() > 0.0 {
                rng.random_range(range.lo..range.hi)
            } else {
                range.lo
            }
        })
        .collect()
}

/// Identity-structured plants realizing the given entropy rates.
pub fn plants_from_entropy_rates(iota: usize, rates: &[f64], sigma_v: f64, sigma_w: f64) -> Vec<PlantSpec> {
    rates
        .iter()
        .map(|&g| PlantSpec::with_entropy_rate(iota, g, sigma_v, sigma_w))
        .collect()
}

impl Default for Scenario {
    fn default() -> Self {
        let geometry = defaults::geometry();
        let rates = draw_entropy_rates(geometry.robots.len(), defaults::ENTROPY_RANGE, defaults::SEED);
        Self {
            plants: plants_from_entropy_rates(defaults::IOTA, &rates, defaults::SIGMA_V, defaults::SIGMA_W),
            geometry,
            rf: defaults::rf(),
            weights: defaults::weights(),
            solver: SolverOptions::default(),
            seed: defaults::SEED,
        }
    }
}

impl Scenario {
    pub fn n_uav(&self) -> usize {
        self.geometry.n_uav
    }

    pub fn n_robot(&self) -> usize {
        self.geometry.robots.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.rf.validate()?;
        self.weights.validate()?;
        self.solver.validate()?;
        if self.plants.len() != self.geometry.robots.len() {
            return Err(Error::InvalidScenario(format!(
                "{} plants for {} robots",
                self.plants.len(),
                self.geometry.robots.len()
            )));
        }
        for plant in &self.plants {
            plant.validate()?;
        }
        Ok(())
    }
}

const PLACEMENT_ROUNDS: usize = 200;
const PLACEMENT_TRIES: usize = 500;

/// Uniform random UAV placement inside the flight box with pairwise
/// spacing at least `d_min`, by sequential rejection sampling. Deterministic
/// for a given seed.
pub fn random_positions(geometry: &Geometry, seed: u64) -> Result<Vec<Point>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = |rng: &mut ChaCha8Rng, iv: &Interval| {
        if iv.width() > 0.0 {
            rng.random_range(iv.lo..=iv.hi)
        } else {
            iv.lo
        }
    };
    let d2 = geometry.d_min * geometry.d_min;
    for _ in 0..PLACEMENT_ROUNDS {
        let mut placed: Vec<Point> = Vec::with_capacity(geometry.n_uav);
        'point: for _ in 0..geometry.n_uav {
            for _ in 0..PLACEMENT_TRIES {
                let q = Point::new(
                    sample(&mut rng, &geometry.area_x),
                    sample(&mut rng, &geometry.area_y),
                    sample(&mut rng, &geometry.altitude),
                );
                if placed.iter().all(|p| (p - q).norm_squared() >= d2) {
                    placed.push(q);
                    continue 'point;
                }
            }
            break;
        }
        if placed.len() == geometry.n_uav {
            return Ok(placed);
        }
    }
    Err(Error::PackingFailed {
        n_uav: geometry.n_uav,
        d_min: geometry.d_min,
        attempts: PLACEMENT_ROUNDS,
    })
}

/// Smallest pairwise distance, `+inf` for fewer than two points.
pub fn min_pairwise_distance(points: &[Point]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.min((a - b).norm());
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_scenario_is_valid() {
        let s = Scenario::default();
        s.validate().unwrap();
        assert_eq!(s.n_uav(), 4);
        assert_eq!(s.n_robot(), 3);
        assert_eq!(s.geometry.fixed_altitude(), Some(100.0));
        assert!((s.rf.processing_gain() - 5e4).abs() < 1e-9);
        for p in &s.plants {
            assert_eq!(p.iota(), 25);
        }
    }

    #[test]
    fn too_few_uavs_is_rejected() {
        let mut s = Scenario::default();
        s.geometry.n_uav = 2;
        let err = s.validate().unwrap_err();
        assert!(matches!(err, Error::InvalidScenario(ref m) if m.contains("n_uav < robot count")));
    }

    #[test]
    fn single_uav_placement() {
        let mut g = defaults::geometry();
        g.n_uav = 1;
        let pts = random_positions(&g, 3).unwrap();
        assert_eq!(pts.len(), 1);
        assert!(g.contains(&pts[0], 0.0));
    }

    #[test]
    fn four_uavs_respect_spacing() {
        let g = defaults::geometry();
        let pts = random_positions(&g, 7).unwrap();
        assert_eq!(pts.len(), 4);
        assert!(min_pairwise_distance(&pts) >= 25.0);
    }

    #[test]
    fn overfull_area_fails() {
        let mut g = defaults::geometry();
        g.n_uav = 50;
        assert!(g.validate().is_err());
        assert!(matches!(random_positions(&g, 1), Err(Error::PackingFailed { .. })));
    }

    #[test]
    fn placement_is_deterministic() {
        let g = defaults::geometry();
        assert_eq!(random_positions(&g, 11).unwrap(), random_positions(&g, 11).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn placements_always_feasible(seed in any::<u64>()) {
            let g = defaults::geometry();
            let pts = random_positions(&g, seed).unwrap();
            prop_assert!(min_pairwise_distance(&pts) >= g.d_min);
            for q in &pts {
                prop_assert!(g.contains(q, 0.0));
                prop_assert_eq!(q.z, 100.0);
            }
        }
    }
}
