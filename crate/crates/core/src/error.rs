use alloc::string::String;

/// Errors raised by the co-design library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("entropy rate undefined: state matrix is singular")]
    EntropyRateUndefined,

    #[error("assuredly-stable condition violated for robot {robot}: f = {f:e}")]
    StabilityViolated { robot: usize, f: f64 },

    #[error("target cost {target:e} is at or below the minimum cost floor {floor:e}")]
    BelowCostFloor { target: f64, floor: f64 },

    #[error("coincident points: {0}")]
    CoincidentPoints(&'static str),

    #[error("could not place {n_uav} UAVs at spacing {d_min} m after {attempts} attempts")]
    PackingFailed {
        n_uav: usize,
        d_min: f64,
        attempts: usize,
    },

    #[error("UAV {uav} has zero power: target is unilluminated")]
    Unilluminated { uav: usize },

    #[error("probability {0} outside the open unit interval")]
    InvalidProbability(f64),

    #[error("infeasible association: {0}")]
    InfeasibleAssociation(String),

    #[error("enumeration of {0} assignments exceeds the oracle limit")]
    TooManyAssignments(u128),

    #[error("closed loop diverged at step {step}")]
    UnstableClosedLoop { step: usize },

    #[error("every Monte Carlo trial failed to converge ({trials} trials)")]
    AllTrialsFailed { trials: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub type Result<T> = core::result::Result<T, Error>;
