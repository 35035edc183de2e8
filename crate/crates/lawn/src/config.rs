//! TOML scenario files. Decibel quantities carry their unit in the key
//! (`_db`, `_dbm`, `_dbw`); everything else is linear SI.

use std::path::Path;

use lawn_core::channel::RateConvention;
use lawn_core::scenario::{
    defaults, draw_entropy_rates, plants_from_entropy_rates, Geometry, Interval, ObjectiveWeights, PenaltyDcOptions,
    PgdOptions, Point, RfParams, ScaOptions, Scenario, SensingNormalizer, SolverOptions,
};
use lawn_core::units::{db_to_linear, dbm_to_watts, dbw_to_watts, linear_to_db, watts_to_dbm, watts_to_dbw};
use serde::{Deserialize, Serialize};

use crate::error::AppError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioFile {
    /// Seeds the random starting placement.
    pub seed: u64,
    pub geometry: GeometrySection,
    pub rf: RfSection,
    pub control: ControlSection,
    pub objective: ObjectiveSection,
    pub solver: SolverSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometrySection {
    pub area_x: [f64; 2],
    pub area_y: [f64; 2],
    /// Equal bounds pin every UAV at that height.
    pub altitude: [f64; 2],
    pub d_min: f64,
    pub n_uav: usize,
    pub robots: Vec<[f64; 3]>,
    pub target: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    Bits,
    Nats,
}

impl From<Convention> for RateConvention {
    fn from(c: Convention) -> Self {
        match c {
            Convention::Bits => RateConvention::Bits,
            Convention::Nats => RateConvention::Nats,
        }
    }
}

impl From<RateConvention> for Convention {
    fn from(c: RateConvention) -> Self {
        match c {
            RateConvention::Bits => Convention::Bits,
            RateConvention::Nats => Convention::Nats,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RfSection {
    pub alpha0_db: f64,
    pub beta0_db: f64,
    pub noise_comm_dbm: f64,
    pub noise_sense_dbm: f64,
    pub bandwidth: f64,
    pub gp_factor: f64,
    pub rho: f64,
    pub bler: f64,
    pub blocklength: f64,
    pub uses_per_step: f64,
    pub p_max_dbw: f64,
    pub rate_convention: Convention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlSection {
    pub iota: usize,
    /// Process noise variance per state.
    pub sigma_v: f64,
    /// Observation noise variance per output.
    pub sigma_w: f64,
    /// One entropy rate per robot, bits per step. When absent they are drawn
    /// uniformly from `entropy_range`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entropy_rates: Option<Vec<f64>>,
    pub entropy_range: [f64; 2],
    /// Seed of the entropy-rate draw; defaults to the scenario seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entropy_seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PsiS {
    Fixed(f64),
    Named(NamedNormalizer),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedNormalizer {
    DetBound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveSection {
    pub eta: f64,
    pub psi_c: f64,
    /// A positive number or `"det_bound"`.
    pub psi_s: PsiS,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DcSection {
    pub mu0: f64,
    pub mu_max: f64,
    pub growth: f64,
    pub tol: f64,
    pub max_outer: usize,
    pub inner_tol: f64,
    pub inner_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PgdSection {
    pub step0: f64,
    pub rho_hat: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub armijo: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScaSection {
    pub trust0: f64,
    pub trust_min: f64,
    pub shrink: f64,
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub tol: f64,
    pub max_iter: usize,
    pub riccati_tol: f64,
    pub riccati_max_iter: usize,
    pub dc: DcSection,
    pub pgd: PgdSection,
    pub sca: ScaSection,
}

fn pair(iv: &Interval) -> [f64; 2] {
    [iv.lo, iv.hi]
}

fn interval(v: [f64; 2]) -> Interval {
    Interval::new(v[0], v[1])
}

impl Default for GeometrySection {
    fn default() -> Self {
        Self::from(&defaults::geometry())
    }
}

impl From<&Geometry> for GeometrySection {
    fn from(g: &Geometry) -> Self {
        Self {
            area_x: pair(&g.area_x),
            area_y: pair(&g.area_y),
            altitude: pair(&g.altitude),
            d_min: g.d_min,
            n_uav: g.n_uav,
            robots: g.robots.iter().map(|r| [r.x, r.y, r.z]).collect(),
            target: [g.target.x, g.target.y, g.target.z],
        }
    }
}

impl GeometrySection {
    pub fn to_geometry(&self) -> Geometry {
        Geometry {
            area_x: interval(self.area_x),
            area_y: interval(self.area_y),
            altitude: interval(self.altitude),
            d_min: self.d_min,
            robots: self.robots.iter().map(|r| Point::new(r[0], r[1], r[2])).collect(),
            target: Point::new(self.target[0], self.target[1], self.target[2]),
            n_uav: self.n_uav,
        }
    }
}

impl Default for RfSection {
    fn default() -> Self {
        Self {
            alpha0_db: defaults::ALPHA0_DB,
            beta0_db: defaults::BETA0_DB,
            noise_comm_dbm: defaults::NOISE_DBM,
            noise_sense_dbm: defaults::NOISE_DBM,
            bandwidth: defaults::BANDWIDTH,
            gp_factor: defaults::GP_FACTOR,
            rho: defaults::RHO,
            bler: defaults::BLER,
            blocklength: defaults::BLOCKLENGTH,
            uses_per_step: defaults::USES_PER_STEP,
            p_max_dbw: defaults::P_MAX_DBW,
            rate_convention: Convention::Bits,
        }
    }
}

impl From<&RfParams> for RfSection {
    fn from(rf: &RfParams) -> Self {
        Self {
            alpha0_db: linear_to_db(rf.alpha0),
            beta0_db: linear_to_db(rf.beta0),
            noise_comm_dbm: watts_to_dbm(rf.noise_comm),
            noise_sense_dbm: watts_to_dbm(rf.noise_sense),
            bandwidth: rf.bandwidth,
            gp_factor: rf.gp_factor,
            rho: rf.rho,
            bler: rf.bler,
            blocklength: rf.blocklength,
            uses_per_step: rf.uses_per_step,
            p_max_dbw: watts_to_dbw(rf.p_max),
            rate_convention: rf.rate_convention.into(),
        }
    }
}

impl RfSection {
    pub fn to_rf(&self) -> RfParams {
        RfParams {
            alpha0: db_to_linear(self.alpha0_db),
            beta0: db_to_linear(self.beta0_db),
            noise_comm: dbm_to_watts(self.noise_comm_dbm),
            noise_sense: dbm_to_watts(self.noise_sense_dbm),
            bandwidth: self.bandwidth,
            gp_factor: self.gp_factor,
            rho: self.rho,
            bler: self.bler,
            blocklength: self.blocklength,
            uses_per_step: self.uses_per_step,
            p_max: dbw_to_watts(self.p_max_dbw),
            rate_convention: self.rate_convention.into(),
        }
    }
}

impl Default for ControlSection {
    fn default() -> Self {
        let n = defaults::ROBOTS.len();
        Self {
            iota: defaults::IOTA,
            sigma_v: defaults::SIGMA_V,
            sigma_w: defaults::SIGMA_W,
            entropy_rates: Some(draw_entropy_rates(n, defaults::ENTROPY_RANGE, defaults::SEED)),
            entropy_range: pair(&defaults::ENTROPY_RANGE),
            entropy_seed: None,
        }
    }
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        Self::from(&defaults::weights())
    }
}

impl From<&ObjectiveWeights> for ObjectiveSection {
    fn from(w: &ObjectiveWeights) -> Self {
        Self {
            eta: w.eta,
            psi_c: w.psi_c,
            psi_s: match w.psi_s {
                SensingNormalizer::Fixed(v) => PsiS::Fixed(v),
                SensingNormalizer::DetBound => PsiS::Named(NamedNormalizer::DetBound),
            },
        }
    }
}

impl ObjectiveSection {
    pub fn to_weights(&self) -> ObjectiveWeights {
        ObjectiveWeights {
            eta: self.eta,
            psi_c: self.psi_c,
            psi_s: match self.psi_s {
                PsiS::Fixed(v) => SensingNormalizer::Fixed(v),
                PsiS::Named(NamedNormalizer::DetBound) => SensingNormalizer::DetBound,
            },
        }
    }
}

impl Default for DcSection {
    fn default() -> Self {
        Self::from(&PenaltyDcOptions::default())
    }
}

impl From<&PenaltyDcOptions> for DcSection {
    fn from(o: &PenaltyDcOptions) -> Self {
        Self {
            mu0: o.mu0,
            mu_max: o.mu_max,
            growth: o.growth,
            tol: o.tol,
            max_outer: o.max_outer,
            inner_tol: o.inner_tol,
            inner_max: o.inner_max,
        }
    }
}

impl Default for PgdSection {
    fn default() -> Self {
        Self::from(&PgdOptions::default())
    }
}

impl From<&PgdOptions> for PgdSection {
    fn from(o: &PgdOptions) -> Self {
        Self {
            step0: o.step0,
            rho_hat: o.rho_hat,
            tol: o.tol,
            max_iter: o.max_iter,
            armijo: o.armijo,
        }
    }
}

impl Default for ScaSection {
    fn default() -> Self {
        Self::from(&ScaOptions::default())
    }
}

impl From<&ScaOptions> for ScaSection {
    fn from(o: &ScaOptions) -> Self {
        Self {
            trust0: o.trust0,
            trust_min: o.trust_min,
            shrink: o.shrink,
            tol: o.tol,
            max_iter: o.max_iter,
        }
    }
}

impl Default for SolverSection {
    fn default() -> Self {
        Self::from(&SolverOptions::default())
    }
}

impl From<&SolverOptions> for SolverSection {
    fn from(o: &SolverOptions) -> Self {
        Self {
            tol: o.tol,
            max_iter: o.max_iter,
            riccati_tol: o.riccati_tol,
            riccati_max_iter: o.riccati_max_iter,
            dc: (&o.dc).into(),
            pgd: (&o.pgd).into(),
            sca: (&o.sca).into(),
        }
    }
}

impl SolverSection {
    pub fn to_options(&self) -> SolverOptions {
        let (dc, pgd, sca) = (&self.dc, &self.pgd, &self.sca);
        SolverOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            riccati_tol: self.riccati_tol,
            riccati_max_iter: self.riccati_max_iter,
            dc: PenaltyDcOptions {
                mu0: dc.mu0,
                mu_max: dc.mu_max,
                growth: dc.growth,
                tol: dc.tol,
                max_outer: dc.max_outer,
                inner_tol: dc.inner_tol,
                inner_max: dc.inner_max,
            },
            pgd: PgdOptions {
                step0: pgd.step0,
                rho_hat: pgd.rho_hat,
                tol: pgd.tol,
                max_iter: pgd.max_iter,
                armijo: pgd.armijo,
            },
            sca: ScaOptions {
                trust0: sca.trust0,
                trust_min: sca.trust_min,
                shrink: sca.shrink,
                tol: sca.tol,
                max_iter: sca.max_iter,
            },
        }
    }
}

impl Default for ScenarioFile {
    fn default() -> Self {
        Self {
            seed: defaults::SEED,
            geometry: GeometrySection::default(),
            rf: RfSection::default(),
            control: ControlSection::default(),
            objective: ObjectiveSection::default(),
            solver: SolverSection::default(),
        }
    }
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, AppError> {
        toml::from_str(text).map_err(|e| AppError::Input(format!("scenario: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::Input(format!("cannot read scenario {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| AppError::Input(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario sections always serialize")
    }

    /// The entropy rates in force, drawn if the file does not list them.
    pub fn entropy_rates(&self) -> Vec<f64> {
        match &self.control.entropy_rates {
            Some(r) => r.clone(),
            None => draw_entropy_rates(
                self.geometry.robots.len(),
                interval(self.control.entropy_range),
                self.control.entropy_seed.unwrap_or(self.seed),
            ),
        }
    }

    pub fn to_scenario(&self) -> Result<Scenario, AppError> {
        let c = &self.control;
        let rates = self.entropy_rates();
        if rates.len() != self.geometry.robots.len() {
            return Err(AppError::Input(format!(
                "{} entropy rates for {} robots",
                rates.len(),
                self.geometry.robots.len()
            )));
        }
        if c.iota == 0 || !(c.sigma_v >= 0.0 && c.sigma_w >= 0.0) {
            return Err(AppError::Input("control: iota must be positive and noise variances nonnegative".into()));
        }
        let scenario = Scenario {
            geometry: self.geometry.to_geometry(),
            rf: self.rf.to_rf(),
            weights: self.objective.to_weights(),
            plants: plants_from_entropy_rates(c.iota, &rates, c.sigma_v, c.sigma_w),
            solver: self.solver.to_options(),
            seed: self.seed,
        };
        scenario.validate().map_err(|e| AppError::Input(e.to_string()))?;
        Ok(scenario)
    }

    /// File form of a scenario whose plants all share one identity
    /// structure and noise level.
    pub fn from_scenario(s: &Scenario) -> Result<Self, AppError> {
        let mut shape = None;
        let mut rates = Vec::with_capacity(s.plants.len());
        for p in &s.plants {
            let (iota, a, sv, sw) = p
                .as_scaled_identity()
                .ok_or_else(|| AppError::Input("only identity-structured plants have a file form".into()))?;
            if *shape.get_or_insert((iota, sv, sw)) != (iota, sv, sw) {
                return Err(AppError::Input("plants differ in dimension or noise".into()));
            }
            rates.push(iota as f64 * a.abs().log2());
        }
        let (iota, sigma_v, sigma_w) = shape.unwrap_or((defaults::IOTA, defaults::SIGMA_V, defaults::SIGMA_W));
        Ok(Self {
            seed: s.seed,
            geometry: (&s.geometry).into(),
            rf: (&s.rf).into(),
            control: ControlSection {
                iota,
                sigma_v,
                sigma_w,
                entropy_rates: Some(rates),
                entropy_range: pair(&defaults::ENTROPY_RANGE),
                entropy_seed: None,
            },
            objective: (&s.weights).into(),
            solver: (&s.solver).into(),
        })
    }
}
