//! Geometry-to-rate pipeline: LoS path loss, SINR with co-channel
//! interference, and the short-packet (finite-blocklength) rate.

use alloc::format;
use core::f64::consts::{LN_2, LOG2_E, SQRT_2};

use nalgebra::{DMatrix, DVector};
use num_traits::Float;


use crate::error::{Error, Result};
use crate::scenario::{Point, RfParams};

/// Unit of the dispersion penalty in the short-packet rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RateConvention {
    /// Capacity and dispersion penalty both in bits per channel use.
    #[default]
    Bits,
    /// Base-2 capacity with the penalty left in nats, as typeset.
    Nats,
}

impl RateConvention {
    fn penalty_scale(self) -> f64 {
        match self {
            RateConvention::Bits => LOG2_E,
            RateConvention::Nats => 1.0,
        }
    }
}

/// Free-space gain `alpha0 / |q - u|^2`.
pub fn channel_gain(q: &Point, u: &Point, alpha0: f64) -> Result<f64> {
    let d2 = (q - u).norm_squared();
    if d2 == 0.0 {
        return Err(Error::CoincidentPoints("UAV and robot"));
    }
    Ok(alpha0 / d2)
}

/// `M x K` gain matrix.
pub fn gain_matrix(positions: &[Point], robots: &[Point], alpha0: f64) -> Result<DMatrix<f64>> {
    let mut h = DMatrix::zeros(positions.len(), robots.len());
    for (m, q) in positions.iter().enumerate() {
        for (k, u) in robots.iter().enumerate() {
            h[(m, k)] = channel_gain(q, u, alpha0)?;
        }
    }
    Ok(h)
}

/// SINR of link `(m, k)`; every other UAV interferes in proportion to its power.
pub fn sinr(m: usize, k: usize, power: &[f64], gains: &DMatrix<f64>, noise: f64) -> f64 {
    let interference: f64 = (0..power.len())
        .filter(|&i| i != m)
        .map(|i| power[i] * gains[(i, k)])
        .sum();
    power[m] * gains[(m, k)] / (interference + noise)
}

/// Gaussian tail `Q(x) = P(N(0,1) > x)`.
pub fn gaussian_q(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

fn gaussian_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * core::f64::consts::PI).sqrt()
}

/// Inverse of the Gaussian tail: the `x` with `Q(x) = eps`.
///
/// Acklam's rational approximation of the normal quantile, polished by
/// Halley steps on `Q`.
pub fn inverse_gaussian_q(eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidProbability(eps));
    }
    if eps == 0.5 {
        return Ok(0.0);
    }
    // Work in the lower tail and reflect: Q^-1(eps) = -Phi^-1(eps).
    let lower = eps.min(1.0 - eps);
    let mut x = -acklam_quantile(lower);
    for _ in 0..3 {
        let err = gaussian_q(x) - lower;
        let pdf = gaussian_pdf(x);
        if pdf == 0.0 {
            break;
        }
        // Halley on g(x) = Q(x) - p, g' = -pdf, g'' = x pdf.
        let u = -err / pdf;
        x -= u / (1.0 + 0.5 * x * u);
    }
    Ok(if eps > 0.5 { -x } else { x })
}

fn acklam_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let p_low = 0.024_25;
    if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Precomputed constants of the short-packet rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FblModel {
    /// `Q^-1(eps) / sqrt(l)`, times `log2 e` under [`RateConvention::Bits`].
    penalty: f64,
}

impl FblModel {
    pub fn new(blocklength: f64, bler: f64, convention: RateConvention) -> Result<Self> {
        if !(blocklength >= 1.0) {
            return Err(Error::InvalidScenario(format!("blocklength {blocklength} < 1")));
        }
        let q_inv = inverse_gaussian_q(bler)?;
        Ok(Self {
            penalty: q_inv / blocklength.sqrt() * convention.penalty_scale(),
        })
    }

    pub fn from_rf(rf: &RfParams) -> Result<Self> {
        Self::new(rf.blocklength, rf.bler, rf.rate_convention)
    }

    /// Rate in bits per channel use, clamped at zero.
    pub fn rate(&self, gamma: f64) -> f64 {
        let one_plus = 1.0 + gamma;
        let dispersion = 1.0 - one_plus.powi(-2);
        let r = one_plus.log2() - dispersion.max(0.0).sqrt() * self.penalty;
        r.max(0.0)
    }

    /// `dR/dGamma`; zero where the clamp is active.
    pub fn rate_slope(&self, gamma: f64) -> f64 {
        if self.rate(gamma) <= 0.0 {
            return 0.0;
        }
        let one_plus = 1.0 + gamma;
        let dispersion = 1.0 - one_plus.powi(-2);
        1.0 / (one_plus * LN_2) - self.penalty * one_plus.powi(-3) / dispersion.sqrt()
    }

    /// Smallest SINR whose rate reaches `rate` bits per use, by bisection.
    pub fn required_sinr(&self, rate: f64) -> f64 {
        if rate <= 0.0 {
            return 0.0;
        }
        let mut hi = 1.0;
        while self.rate(hi) < rate {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.rate(mid) < rate {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * hi {
                break;
            }
        }
        hi
    }
}

/// `max(0, log2(1+gamma) - sqrt(V/l) Q^-1(eps) [log2 e])` with `V = 1 - (1+gamma)^-2`.
pub fn fbl_rate(gamma: f64, blocklength: f64, bler: f64, convention: RateConvention) -> Result<f64> {
    if blocklength.is_infinite() {
        return Ok((1.0 + gamma).log2());
    }
    Ok(FblModel::new(blocklength, bler, convention)?.rate(gamma))
}

/// Gains, SINRs and rates of every UAV-robot pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkState {
    pub gains: DMatrix<f64>,
    pub sinr: DMatrix<f64>,
    pub rate: DMatrix<f64>,
}

impl LinkState {
    pub fn compute(
        positions: &[Point],
        robots: &[Point],
        power: &[f64],
        rf: &RfParams,
        model: &FblModel,
    ) -> Result<Self> {
        let gains = gain_matrix(positions, robots, rf.alpha0)?;
        Ok(Self::from_gains(gains, power, rf.noise_comm, model))
    }

    pub fn from_gains(gains: DMatrix<f64>, power: &[f64], noise: f64, model: &FblModel) -> Self {
        let (n_uav, n_robot) = gains.shape();
        let sinr = DMatrix::from_fn(n_uav, n_robot, |m, k| sinr(m, k, power, &gains, noise));
        let rate = sinr.map(|g| model.rate(g));
        Self { gains, sinr, rate }
    }
}

/// Checks the association polytope: entries in `[0,1]`, each UAV serves
/// at most one robot, each robot is served exactly once.
pub fn check_association(theta: &DMatrix<f64>, tol: f64) -> Result<()> {
    if theta.iter().any(|&t| !(t >= -tol && t <= 1.0 + tol)) {
        return Err(Error::InfeasibleAssociation("entries must lie in [0, 1]".into()));
    }
    for (m, row) in theta.row_iter().enumerate() {
        if row.sum() > 1.0 + tol {
            return Err(Error::InfeasibleAssociation(format!("UAV {m} serves more than one robot")));
        }
    }
    for (k, col) in theta.column_iter().enumerate() {
        if (col.sum() - 1.0).abs() > tol {
            return Err(Error::InfeasibleAssociation(format!(
                "robot {k} has association mass {}",
                col.sum()
            )));
        }
    }
    Ok(())
}

/// `X_k = c_use * sum_m theta[m,k] R[m,k]` in bits per control step.
pub fn throughput_per_robot(
    theta: &DMatrix<f64>,
    rates: &DMatrix<f64>,
    uses_per_step: f64,
) -> Result<DVector<f64>> {
    if theta.shape() != rates.shape() {
        return Err(Error::Dimension(format!(
            "association {:?} vs rates {:?}",
            theta.shape(),
            rates.shape()
        )));
    }
    check_association(theta, 1e-9)?;
    Ok(DVector::from_fn(theta.ncols(), |k, _| {
        uses_per_step * theta.column(k).dot(&rates.column(k))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn required_sinr_inverts_rate() {
        let model = FblModel::new(1024.0, 1e-5, RateConvention::Bits).unwrap();
        for target in [0.01, 0.5, 1.0, 4.0, 12.0] {
            let g = model.required_sinr(target);
            assert!((model.rate(g) - target).abs() < 1e-9 * target.max(1.0));
            assert!(model.rate(g * (1.0 - 1e-6)) < target);
        }
        assert_eq!(model.required_sinr(0.0), 0.0);
    }
    use proptest::prelude::*;

    fn bisect_q(eps: f64) -> f64 {
        let (mut lo, mut hi) = (-40.0f64, 40.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if gaussian_q(mid) > eps {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn gain_examples() {
        let o = Point::zeros();
        assert_eq!(channel_gain(&Point::new(1.0, 0.0, 0.0), &o, 1.0).unwrap(), 1.0);
        let g = channel_gain(&Point::new(0.0, 0.0, 100.0), &o, 1.2589e-5).unwrap();
        assert!((g - 1.2589e-9).abs() < 1e-22);
        let near = channel_gain(&Point::new(3.0, 4.0, 0.0), &o, 2.0).unwrap();
        let far = channel_gain(&Point::new(6.0, 8.0, 0.0), &o, 2.0).unwrap();
        assert!((near / far - 4.0).abs() < 1e-12);
        assert!(channel_gain(&o, &o, 1.0).is_err());
    }

    #[test]
    fn sinr_examples() {
        let h = DMatrix::from_element(1, 1, 1.2589e-9);
        let g = sinr(0, 0, &[0.2], &h, 1e-14);
        assert!((g - 2.5178e4).abs() < 1e-9 * 2.5178e4);

        let h = DMatrix::from_element(2, 1, 1e-9);
        let g = sinr(0, 0, &[0.3, 0.3], &h, 1e-30);
        assert!((g - 1.0).abs() < 1e-12);
        assert_eq!(sinr(0, 0, &[0.0, 0.3], &h, 1e-14), 0.0);
    }

    #[test]
    fn sinr_interference_two_routes() {
        let h = DMatrix::from_row_slice(3, 2, &[1e-9, 2e-9, 3e-10, 5e-10, 7e-10, 1e-10]);
        let p = [0.1, 0.25, 0.4];
        for k in 0..2 {
            let total: f64 = (0..3).map(|i| p[i] * h[(i, k)]).sum();
            for m in 0..3 {
                let own = p[m] * h[(m, k)];
                let alt = own / (total - own + 1e-14);
                assert!((sinr(m, k, &p, &h, 1e-14) - alt).abs() <= 1e-12 * alt);
            }
        }
    }

    #[test]
    fn q_inverse_examples() {
        assert_eq!(inverse_gaussian_q(0.5).unwrap(), 0.0);
        let x = inverse_gaussian_q(1e-5).unwrap();
        assert!((x - bisect_q(1e-5)).abs() < 1e-9);
        assert!((x - 4.26489).abs() < 1e-5);
        for eps in [1e-12, 1e-7, 0.01, 0.2, 0.7, 0.99] {
            let x = inverse_gaussian_q(eps).unwrap();
            assert!((gaussian_q(x) - eps).abs() <= 1e-9, "eps={eps}");
            // 1 - eps is rounded; reflect the rounded complement exactly.
            let c = 1.0 - eps;
            let y = inverse_gaussian_q(c).unwrap();
            assert!((inverse_gaussian_q(1.0 - c).unwrap() + y).abs() < 1e-8, "eps={eps}");
        }
        assert!(inverse_gaussian_q(0.0).is_err());
        assert!(inverse_gaussian_q(1.0).is_err());
    }

    #[test]
    fn fbl_rate_examples() {
        assert_eq!(fbl_rate(0.0, 1024.0, 1e-5, RateConvention::Bits).unwrap(), 0.0);
        assert_eq!(fbl_rate(1.0, f64::INFINITY, 1e-5, RateConvention::Bits).unwrap(), 1.0);
        // Oracle: bisection Q^-1 with direct evaluation.
        let expected = 1.0 - (0.75f64 / 1024.0).sqrt() * bisect_q(1e-5) * LOG2_E;
        let r = fbl_rate(1.0, 1024.0, 1e-5, RateConvention::Bits).unwrap();
        assert!((r - expected).abs() < 1e-12);
        assert!((r - 0.8335).abs() < 5e-5);
        let nats = fbl_rate(1.0, 1024.0, 1e-5, RateConvention::Nats).unwrap();
        assert!(nats > r);
    }

    #[test]
    fn throughput_examples() {
        let theta = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let rates = DMatrix::from_row_slice(2, 1, &[2.0, 4.0]);
        assert_eq!(throughput_per_robot(&theta, &rates, 100.0).unwrap()[0], 200.0);
        let half = DMatrix::from_row_slice(2, 1, &[0.5, 0.5]);
        assert_eq!(throughput_per_robot(&half, &rates, 1.0).unwrap()[0], 3.0);
        let none = DMatrix::from_row_slice(2, 1, &[0.0, 0.0]);
        assert!(throughput_per_robot(&none, &rates, 1.0).is_err());
        let zero_rates = DMatrix::zeros(2, 1);
        assert_eq!(throughput_per_robot(&theta, &zero_rates, 1.0).unwrap()[0], 0.0);
    }

    #[test]
    fn rate_slope_matches_differences() {
        let model = FblModel::new(1024.0, 1e-5, RateConvention::Bits).unwrap();
        for g in [0.05, 0.3, 1.0, 5.0, 100.0] {
            let h = 1e-6 * g;
            let fd = (model.rate(g + h) - model.rate(g - h)) / (2.0 * h);
            assert!((fd - model.rate_slope(g)).abs() < 1e-6 * fd.abs().max(1e-3), "g={g}");
        }
    }

    proptest! {
        #[test]
        fn fbl_below_shannon_and_increasing_in_l(gamma in 0.0f64..1e4, l in 1.0f64..1e5) {
            let shannon = (1.0 + gamma).log2();
            let r = fbl_rate(gamma, l, 1e-5, RateConvention::Bits).unwrap();
            prop_assert!(r <= shannon);
            prop_assert!(fbl_rate(gamma, 2.0 * l, 1e-5, RateConvention::Bits).unwrap() >= r);
        }
    }

    #[test]
    fn fbl_monotone_in_sinr_on_grid() {
        for l in [100.0, 256.0, 1024.0, 4096.0] {
            for eps in [1e-9, 1e-5, 1e-2, 0.1] {
                let model = FblModel::new(l, eps, RateConvention::Bits).unwrap();
                let grid: alloc::vec::Vec<f64> = (0..2000).map(|i| 1e-4 * 1.01f64.powi(i)).collect();
                for w in grid.windows(2) {
                    assert!(model.rate(w[1]) >= model.rate(w[0]), "l={l} eps={eps} g={}", w[0]);
                }
            }
        }
    }
}
