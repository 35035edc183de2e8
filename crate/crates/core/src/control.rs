//! Steady-state LQG quantities and the throughput-to-LQR-cost map.
//!
//! Each robot is a discrete-time linear plant `x' = A x + B z + v`,
//! observed as `y = C x + w`. With unconstrained communication the
//! average LQR cost settles at `b_min`; with a link delivering `X` bits
//! per control step the achievable cost is
//!
//! ```text
//! b(X) = Omega / (2^f - 1) + b_min,   f = (2 / iota) (X - g)
//! ```
//!
//! where `g = log2 |det A|` is the intrinsic entropy rate and
//! `Omega = iota * det(N M)^(1/iota)`.

use alloc::string::ToString;
use core::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector};
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// One robot's control system.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantSpec {
    /// State matrix, `iota x iota`.
    pub a: DMatrix<f64>,
    /// Input matrix, `iota x kappa`.
    pub b: DMatrix<f64>,
    /// Observation matrix, `zeta x iota`.
    pub c: DMatrix<f64>,
    /// State weight.
    pub q: DMatrix<f64>,
    /// Input weight.
    pub r: DMatrix<f64>,
    /// Process noise covariance.
    pub sigma_v: DMatrix<f64>,
    /// Observation noise covariance.
    pub sigma_w: DMatrix<f64>,
}

impl PlantSpec {
    /// `A = a_scale * I`, `B = C = Q = I`, `R = 0`, isotropic noises.
    pub fn scaled_identity(iota: usize, a_scale: f64, sigma_v: f64, sigma_w: f64) -> Self {
        let eye = DMatrix::<f64>::identity(iota, iota);
        Self {
            a: &eye * a_scale,
            b: eye.clone(),
            c: eye.clone(),
            q: eye.clone(),
            r: DMatrix::zeros(iota, iota),
            sigma_v: &eye * sigma_v,
            sigma_w: &eye * sigma_w,
        }
    }

    /// Scaled-identity plant realizing a target entropy rate `g` (bits per step):
    /// `A = 2^(g/iota) I`.
    pub fn with_entropy_rate(iota: usize, entropy_rate: f64, sigma_v: f64, sigma_w: f64) -> Self {
        Self::scaled_identity(iota, 2f64.powf(entropy_rate / iota as f64), sigma_v, sigma_w)
    }

    /// Recognizes the [`PlantSpec::scaled_identity`] form and returns
    /// `(iota, a_scale, sigma_v, sigma_w)`.
    pub fn as_scaled_identity(&self) -> Option<(usize, f64, f64, f64)> {
        let n = self.iota();
        let eye = DMatrix::<f64>::identity(n, n);
        let a_scale = self.a[(0, 0)];
        let sv = self.sigma_v[(0, 0)];
        let sw = self.sigma_w[(0, 0)];
        let same = self.a == &eye * a_scale
            && self.b == eye
            && self.c == eye
            && self.q == eye
            && self.r == DMatrix::zeros(n, n)
            && self.sigma_v == &eye * sv
            && self.sigma_w == &eye * sw;
        same.then_some((n, a_scale, sv, sw))
    }

    pub fn iota(&self) -> usize {
        self.a.nrows()
    }

    pub fn kappa(&self) -> usize {
        self.b.ncols()
    }

    pub fn zeta(&self) -> usize {
        self.c.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, k, z) = (self.iota(), self.kappa(), self.zeta());
        let dims_ok = self.a.shape() == (n, n)
            && self.b.shape() == (n, k)
            && self.c.shape() == (z, n)
            && self.q.shape() == (n, n)
            && self.r.shape() == (k, k)
            && self.sigma_v.shape() == (n, n)
            && self.sigma_w.shape() == (z, z);
        if n == 0 || !dims_ok {
            return Err(Error::Dimension("plant matrices have inconsistent shapes".to_string()));
        }
        for (name, m) in [
            ("Q", &self.q),
            ("R", &self.r),
            ("Sigma_v", &self.sigma_v),
            ("Sigma_w", &self.sigma_w),
        ] {
            if !is_symmetric_psd(m) {
                return Err(Error::InvalidScenario(alloc::format!(
                    "{name} must be symmetric positive semidefinite"
                )));
            }
        }
        if log_abs_det(&self.a).is_none() {
            return Err(Error::EntropyRateUndefined);
        }
        Ok(())
    }
}

/// Steady-state quantities derived from a [`PlantSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlantDerived {
    pub iota: usize,
    /// Cost Riccati solution.
    pub s: DMatrix<f64>,
    pub m: DMatrix<f64>,
    /// Prior (predicted) error covariance of the steady-state Kalman filter.
    pub p: DMatrix<f64>,
    pub k_gain: DMatrix<f64>,
    /// Posterior error covariance.
    pub sigma: DMatrix<f64>,
    pub n: DMatrix<f64>,
    /// Intrinsic entropy rate, bits per control step.
    pub entropy_rate: f64,
    /// Cost-gap coefficient `iota * det(N M)^(1/iota)`.
    pub omega: f64,
    /// LQR cost floor under unconstrained communication.
    pub b_min: f64,
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn is_symmetric_psd(m: &DMatrix<f64>) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.norm().max(1.0);
    if (m - m.transpose()).norm() > 1e-12 * scale {
        return false;
    }
    let eig = m.clone().symmetric_eigenvalues();
    eig.iter().all(|&l| l >= -1e-12 * scale)
}

/// `ln |det m|` via LU, `None` when singular.
pub(crate) fn log_abs_det(m: &DMatrix<f64>) -> Option<f64> {
    let lu = m.clone().lu();
    let u = lu.u();
    let mut acc = 0.0;
    for i in 0..u.nrows() {
        let d = u[(i, i)].abs();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        acc += d.ln();
    }
    Some(acc)
}

fn inverse(m: DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    m.try_inverse().ok_or(Error::Singular(what))
}

fn cost_gain(spec: &PlantSpec, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let bt = spec.b.transpose();
    let g = &spec.r + &bt * s * &spec.b;
    if spec.r.iter().all(|&x| x == 0.0) {
        // R = 0: the inverse below is of B'SB alone.
        let min_eig = symmetrize(&g)
            .symmetric_eigenvalues()
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b));
        if min_eig <= 0.0 {
            return Err(Error::Singular("B'SB (R = 0 requires S positive definite)"));
        }
    }
    let g_inv = inverse(g, "R + B'SB")?;
    Ok(symmetrize(&(s * &spec.b * g_inv * bt * s)))
}

/// Fixed-point solve of `S = Q + A'(S - M)A`, `M = S B (R + B'SB)^-1 B'S`,
/// starting from `S = Q`.
pub fn solve_cost_riccati(
    spec: &PlantSpec,
    tol: f64,
    max_iter: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let at = spec.a.transpose();
    let mut s = spec.q.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let m = cost_gain(spec, &s)?;
        let next = symmetrize(&(&spec.q + &at * (&s - &m) * &spec.a));
        residual = (&next - &s).norm();
        let converged = residual <= tol * (1.0 + next.norm());
        s = next;
        if !residual.is_finite() {
            break;
        }
        if converged {
            let m = cost_gain(spec, &s)?;
            return Ok((s, m));
        }
    }
    Err(Error::NonConvergence {
        what: "cost Riccati iteration",
        iterations: max_iter,
        residual,
    })
}

/// Residual Frobenius norms of the two cost Riccati equations.
pub fn cost_riccati_residuals(spec: &PlantSpec, s: &DMatrix<f64>, m: &DMatrix<f64>) -> (f64, f64) {
    let r_s = (&spec.q + spec.a.transpose() * (s - m) * &spec.a - s).norm();
    let g = &spec.r + spec.b.transpose() * s * &spec.b;
    let r_m = match g.try_inverse() {
        Some(gi) => (s * &spec.b * gi * spec.b.transpose() * s - m).norm(),
        None => f64::INFINITY,
    };
    (r_s, r_m)
}

/// Steady-state Kalman filter quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanSteady {
    pub p: DMatrix<f64>,
    pub k_gain: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub n: DMatrix<f64>,
}

fn kalman_gain(spec: &PlantSpec, p: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let ct = spec.c.transpose();
    let innov = symmetrize(&(&spec.c * p * &ct + &spec.sigma_w));
    if innov.iter().all(|&x| x == 0.0) {
        // Noise-free and already exact: nothing to correct.
        return Ok((DMatrix::zeros(spec.iota(), spec.zeta()), innov));
    }
    let k = p * &ct * inverse(innov.clone(), "innovation covariance")?;
    Ok((k, innov))
}

/// Fixed-point solve of the filter Riccati equation starting from `P = Sigma_v`.
pub fn solve_kalman_steady(spec: &PlantSpec, tol: f64, max_iter: usize) -> Result<KalmanSteady> {
    let at = spec.a.transpose();
    let mut p = spec.sigma_v.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let (k, innov) = kalman_gain(spec, &p)?;
        let next = symmetrize(
            &(&spec.a * &p * &at - &spec.a * &k * &innov * k.transpose() * &at + &spec.sigma_v),
        );
        residual = (&next - &p).norm();
        let converged = residual <= tol * (1.0 + next.norm());
        p = next;
        if !residual.is_finite() {
            break;
        }
        if converged {
            let (k, innov) = kalman_gain(spec, &p)?;
            let sigma = symmetrize(&(&p - &k * &innov * k.transpose()));
            let n = symmetrize(&(&spec.a * &sigma * &at - &sigma + &spec.sigma_v));
            return Ok(KalmanSteady {
                p,
                k_gain: k,
                sigma,
                n,
            });
        }
    }
    Err(Error::NonConvergence {
        what: "Kalman Riccati iteration",
        iterations: max_iter,
        residual,
    })
}

/// Residual Frobenius norm of the filter Riccati equation at `p`.
pub fn kalman_residual(spec: &PlantSpec, p: &DMatrix<f64>) -> f64 {
    match kalman_gain(spec, p) {
        Ok((k, innov)) => {
            let at = spec.a.transpose();
            let rhs = &spec.a * p * &at - &spec.a * &k * &innov * k.transpose() * &at + &spec.sigma_v;
            (rhs - p).norm()
        }
        Err(_) => f64::INFINITY,
    }
}

/// Solves both Riccati equations and assembles `b_min`, `g` and `Omega`.
pub fn derive_plant(spec: &PlantSpec, tol: f64, max_iter: usize) -> Result<PlantDerived> {
    let iota = spec.iota();
    let ln_det_a = log_abs_det(&spec.a).ok_or(Error::EntropyRateUndefined)?;
    let entropy_rate = ln_det_a / LN_2;

    let (s, m) = solve_cost_riccati(spec, tol, max_iter)?;
    let kf = solve_kalman_steady(spec, tol, max_iter)?;

    let b_min = (&spec.sigma_v * &s).trace()
        + (&kf.sigma * &s * spec.a.transpose() * &m * &spec.a).trace();

    // det(NM) = det N det M, taken in the log domain so iota = 25 does not underflow.
    let omega = match (log_abs_det(&kf.n), log_abs_det(&m)) {
        (Some(ln), Some(lm)) => iota as f64 * ((ln + lm) / iota as f64).exp(),
        _ => 0.0,
    };

    Ok(PlantDerived {
        iota,
        s,
        m,
        p: kf.p,
        k_gain: kf.k_gain,
        sigma: kf.sigma,
        n: kf.n,
        entropy_rate,
        omega,
        b_min,
    })
}

impl PlantDerived {
    /// Rate exponent `f = (2/iota)(X - g)`.
    pub fn rate_exponent(&self, throughput: f64) -> f64 {
        2.0 / self.iota as f64 * (throughput - self.entropy_rate)
    }
}

/// Closed-form LQR cost achievable with `throughput` bits per control step.
///
/// Requires the exponent `f` to be strictly positive. Large `f` returns
/// exactly `b_min` (the `Omega` term underflows to zero rather than overflowing).
pub fn lqr_cost_from_throughput(derived: &PlantDerived, throughput: f64) -> Result<f64> {
    let f = derived.rate_exponent(throughput);
    if !(f > 0.0) {
        return Err(Error::StabilityViolated { robot: 0, f });
    }
    Ok(derived.omega / (f * LN_2).exp_m1() + derived.b_min)
}

/// `d b / d X` at `throughput`. Same precondition as [`lqr_cost_from_throughput`].
pub fn lqr_cost_slope(derived: &PlantDerived, throughput: f64) -> Result<f64> {
    let f = derived.rate_exponent(throughput);
    if !(f > 0.0) {
        return Err(Error::StabilityViolated { robot: 0, f });
    }
    // 2^f / (2^f - 1)^2 = 1 / ((2^f - 1)(1 - 2^-f))
    let up = (f * LN_2).exp_m1();
    let down = -(-f * LN_2).exp_m1();
    let db_df = -derived.omega * LN_2 / (up * down);
    Ok(db_df * 2.0 / derived.iota as f64)
}

/// Throughput needed to reach `b_target`; inverse of [`lqr_cost_from_throughput`].
pub fn required_throughput(derived: &PlantDerived, b_target: f64) -> Result<f64> {
    let gap = b_target - derived.b_min;
    if !(gap > 0.0) {
        return Err(Error::BelowCostFloor {
            target: b_target,
            floor: derived.b_min,
        });
    }
    Ok(derived.entropy_rate + derived.iota as f64 / 2.0 * (derived.omega / gap).ln_1p() / LN_2)
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Runs the plant under the steady-state Kalman estimator and LQR gain with
/// unconstrained communication and returns the empirical average of
/// `x'Qx + z'Rz` over `steps` steps.
pub fn simulate_lqg(spec: &PlantSpec, steps: usize, seed: u64, tol: f64, max_iter: usize) -> Result<f64> {
    let (s, _) = solve_cost_riccati(spec, tol, max_iter)?;
    let kf = solve_kalman_steady(spec, tol, max_iter)?;
    let bt = spec.b.transpose();
    let lqr_gain = inverse(&spec.r + &bt * &s * &spec.b, "R + B'SB")? * &bt * &s * &spec.a;

    let n = spec.iota();
    let zeta = spec.zeta();
    let v_root = psd_sqrt(&spec.sigma_v);
    let w_root = psd_sqrt(&spec.sigma_w);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |len: usize| DVector::<f64>::from_fn(len, |_, _| StandardNormal.sample(&mut rng));

    let mut x = DVector::<f64>::zeros(n);
    let mut x_prior = DVector::<f64>::zeros(n);
    let mut total = 0.0;
    for step in 0..steps {
        let y = &spec.c * &x + &w_root * draw(zeta);
        let x_post = &x_prior + &kf.k_gain * (y - &spec.c * &x_prior);
        let z = -&lqr_gain * &x_post;
        total += x.dot(&(&spec.q * &x)) + z.dot(&(&spec.r * &z));
        x = &spec.a * &x + &spec.b * &z + &v_root * draw(n);
        x_prior = &spec.a * &x_post + &spec.b * &z;
        if !(x.norm() < 1e12) {
            return Err(Error::UnstableClosedLoop { step });
        }
    }
    Ok(total / steps.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-12;
    const MAX_ITER: usize = 100_000;

    fn scalar(a: f64, sv: f64, sw: f64) -> PlantSpec {
        PlantSpec::scaled_identity(1, a, sv, sw)
    }

    #[test]
    fn cost_riccati_scalar_and_deadbeat() {
        let (s, m) = solve_cost_riccati(&scalar(2.0, 1e-3, 1e-3), TOL, MAX_ITER).unwrap();
        assert!((s[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((m[(0, 0)] - 1.0).abs() < 1e-14);

        let mut zero = PlantSpec::scaled_identity(3, 1.0, 1e-3, 1e-3);
        zero.a = DMatrix::zeros(3, 3);
        let (s, m) = solve_cost_riccati(&zero, TOL, MAX_ITER).unwrap();
        assert!((s - DMatrix::<f64>::identity(3, 3)).norm() < 1e-14);
        assert!((m - DMatrix::<f64>::identity(3, 3)).norm() < 1e-14);
    }

    #[test]
    fn cost_riccati_replicated_scalar() {
        let spec = PlantSpec::with_entropy_rate(25, 25.0, 1e-3, 1e-3);
        let (s, m) = solve_cost_riccati(&spec, TOL, MAX_ITER).unwrap();
        let eye = DMatrix::<f64>::identity(25, 25);
        assert!((s - &eye).norm() < 1e-12);
        assert!((m - &eye).norm() < 1e-12);
    }

    #[test]
    fn kalman_scalar_quadratic() {
        // P^2 - 0.004 P - 1e-6 = 0
        let p_ref = (0.004 + (0.004f64 * 0.004 + 4e-6).sqrt()) / 2.0;
        let sigma_ref = p_ref * 1e-3 / (p_ref + 1e-3);
        let n_ref = 3.0 * sigma_ref + 1e-3;
        let kf = solve_kalman_steady(&scalar(2.0, 1e-3, 1e-3), TOL, MAX_ITER).unwrap();
        assert!((kf.p[(0, 0)] - p_ref).abs() < 1e-11);
        assert!((kf.sigma[(0, 0)] - sigma_ref).abs() < 1e-11);
        assert!((kf.n[(0, 0)] - n_ref).abs() < 1e-11);
        assert!((p_ref - 0.004_236_1).abs() < 1e-7);
        assert!((sigma_ref - 8.0902e-4).abs() < 1e-8);
        assert!((n_ref - 0.003_427_1).abs() < 1e-7);
    }

    #[test]
    fn kalman_limits() {
        let kf = solve_kalman_steady(&scalar(2.0, 1e-3, 0.0), TOL, MAX_ITER).unwrap();
        assert!(kf.sigma[(0, 0)].abs() < 1e-15);
        assert!((kf.n[(0, 0)] - 1e-3).abs() < 1e-15);

        let (sv, sw) = (2e-3, 5e-4);
        let kf = solve_kalman_steady(&scalar(0.0, sv, sw), TOL, MAX_ITER).unwrap();
        assert!((kf.p[(0, 0)] - sv).abs() < 1e-15);
        assert!((kf.sigma[(0, 0)] - sv * sw / (sv + sw)).abs() < 1e-15);
    }

    #[test]
    fn derived_scalar_values() {
        let d = derive_plant(&scalar(2.0, 1e-3, 1e-3), TOL, MAX_ITER).unwrap();
        assert!((d.b_min - 0.004_236_1).abs() < 1e-7);
        assert!((d.entropy_rate - 1.0).abs() < 1e-15);
        assert!((d.omega - 0.003_427_1).abs() < 1e-7);
        assert!((d.b_min - d.p[(0, 0)]).abs() < 1e-11);
    }

    #[test]
    fn singular_state_matrix_has_no_entropy_rate() {
        let mut spec = scalar(1.0, 1e-3, 1e-3);
        spec.a[(0, 0)] = 0.0;
        assert_eq!(derive_plant(&spec, TOL, MAX_ITER), Err(Error::EntropyRateUndefined));
        assert_eq!(spec.validate(), Err(Error::EntropyRateUndefined));
    }

    #[test]
    fn replicated_entropy_rate_recovered() {
        let d = derive_plant(&PlantSpec::with_entropy_rate(25, 25.0, 1e-3, 1e-3), TOL, MAX_ITER).unwrap();
        assert!((d.entropy_rate - 25.0).abs() < 1e-12);
        let scalar = derive_plant(&scalar(2.0, 1e-3, 1e-3), TOL, MAX_ITER).unwrap();
        assert!((d.b_min - 25.0 * scalar.b_min).abs() < 1e-12);
        assert!((d.omega - 25.0 * scalar.omega).abs() < 1e-12);
    }

    #[test]
    fn cost_map_examples() {
        let d = derive_plant(&scalar(2.0, 1e-3, 1e-3), TOL, MAX_ITER).unwrap();
        // f = 1
        let c1 = lqr_cost_from_throughput(&d, d.entropy_rate + 0.5).unwrap();
        assert!((c1 - (d.omega + d.b_min)).abs() < 1e-15);
        // f = 4
        let c4 = lqr_cost_from_throughput(&d, 3.0).unwrap();
        assert!((c4 - 0.004_464_6).abs() < 1e-7);
        assert!((c4 - (d.omega / 15.0 + d.b_min)).abs() < 1e-15);
        // Large throughput collapses to the floor exactly.
        assert_eq!(lqr_cost_from_throughput(&d, 1e6).unwrap(), d.b_min);
        assert!(matches!(
            lqr_cost_from_throughput(&d, d.entropy_rate),
            Err(Error::StabilityViolated { .. })
        ));
    }

    #[test]
    fn required_throughput_examples() {
        let d = derive_plant(&scalar(2.0, 1e-3, 1e-3), TOL, MAX_ITER).unwrap();
        let l = required_throughput(&d, d.b_min + d.omega).unwrap();
        assert!((l - (d.entropy_rate + 0.5)).abs() < 1e-12);
        let l = required_throughput(&d, d.omega / 15.0 + d.b_min).unwrap();
        assert!((l - 3.0).abs() < 1e-9);
        let l = required_throughput(&d, 1e12).unwrap();
        assert!((l - d.entropy_rate).abs() < 1e-9);
        assert!(matches!(required_throughput(&d, d.b_min), Err(Error::BelowCostFloor { .. })));
    }

    #[test]
    fn slope_matches_difference_quotient() {
        let d = derive_plant(&PlantSpec::with_entropy_rate(25, 30.0, 1e-3, 1e-3), TOL, MAX_ITER).unwrap();
        for x in [40.0, 60.0, 100.0, 300.0] {
            let h = 1e-3;
            let fd = (lqr_cost_from_throughput(&d, x + h).unwrap()
                - lqr_cost_from_throughput(&d, x - h).unwrap())
                / (2.0 * h);
            let an = lqr_cost_slope(&d, x).unwrap();
            assert!((fd - an).abs() <= 1e-5 * an.abs(), "x={x} fd={fd} an={an}");
        }
    }

    #[test]
    fn lqg_determinism_and_noiseless() {
        let spec = scalar(2.0, 1e-3, 1e-3);
        let a = simulate_lqg(&spec, 10, 3, TOL, MAX_ITER).unwrap();
        let b = simulate_lqg(&spec, 10, 3, TOL, MAX_ITER).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        let quiet = scalar(2.0, 0.0, 0.0);
        assert_eq!(simulate_lqg(&quiet, 100, 1, TOL, MAX_ITER).unwrap(), 0.0);
    }
}
