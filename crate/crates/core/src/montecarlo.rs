//! Monte Carlo localization: noisy ranges, a weighted Gauss-Newton
//! estimator and the RMSE against the CRB.

use alloc::vec::Vec;

use nalgebra::{Matrix3, Vector3};
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::objective::Decision;
use crate::scenario::{Point, RfParams};
use crate::sensing::{fim_position, range_noise_variance};

/// Noisy ranges from every UAV. Unpowered UAVs measure nothing: their range
/// is NaN and their variance infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeSample {
    pub d_hat: Vec<f64>,
    pub sigma2: Vec<f64>,
}

/// Per-UAV range variance, infinite where the UAV has no power.
pub fn range_variances(dec: &Decision, s: &Point, rf: &RfParams) -> Result<Vec<f64>> {
    dec.power
        .iter()
        .zip(&dec.positions)
        .map(|(&p, q)| {
            if p == 0.0 {
                Ok(f64::INFINITY)
            } else {
                range_noise_variance(p, (q - s).norm(), rf)
            }
        })
        .collect()
}

/// Draws `d_m + noise_scale * sigma_m * z_m` with standard normal `z_m`.
pub fn simulate_ranges_with(dec: &Decision, s: &Point, rf: &RfParams, rng: &mut ChaCha8Rng, noise_scale: f64) -> Result<RangeSample> {
    let sigma2 = range_variances(dec, s, rf)?;
    let d_hat = dec
        .positions
        .iter()
        .zip(&sigma2)
        .map(|(q, &v)| {
            let z: f64 = StandardNormal.sample(rng);
            if v.is_finite() {
                (q - s).norm() + noise_scale * v.sqrt() * z
            } else {
                f64::NAN
            }
        })
        .collect();
    Ok(RangeSample { d_hat, sigma2 })
}

pub fn simulate_ranges(dec: &Decision, s: &Point, rf: &RfParams, seed: u64) -> Result<RangeSample> {
    simulate_ranges_with(dec, s, rf, &mut ChaCha8Rng::seed_from_u64(seed), 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WlsEstimate {
    pub s: Point,
    pub converged: bool,
    pub iterations: usize,
}

const GN_MAX_ITER: usize = 100;
const GN_MAX_HALVINGS: usize = 60;
const GN_GRAD_RTOL: f64 = 1e-9;

fn wls_cost(d_hat: &[f64], positions: &[Point], weight: &[f64], s: &Point) -> f64 {
    (0..d_hat.len())
        .filter(|&m| weight[m] > 0.0)
        .map(|m| {
            let r = d_hat[m] - (positions[m] - s).norm();
            weight[m] * r * r
        })
        .sum()
}

/// Weighted least squares `min_s sum_m (d_hat_m - |q_m - s|)^2 / sigma2_m`
/// by Gauss-Newton with step halving. Non-convergence and singular normal
/// equations are reported through `converged = false`.
pub fn localize_wls(d_hat: &[f64], positions: &[Point], sigma2: &[f64], init: &Point) -> WlsEstimate {
    let weight: Vec<f64> = sigma2.iter().map(|&v| if v.is_finite() && v > 0.0 { 1.0 / v } else { 0.0 }).collect();
    let wsum: f64 = weight.iter().sum();
    let mut s = *init;
    let mut cost = wls_cost(d_hat, positions, &weight, &s);
    let fail = |s, iterations| WlsEstimate {
        s,
        converged: false,
        iterations,
    };
    for it in 0..GN_MAX_ITER {
        let mut normal = Matrix3::zeros();
        let mut grad = Vector3::zeros();
        for m in 0..d_hat.len() {
            if weight[m] == 0.0 {
                continue;
            }
            let diff = s - positions[m];
            let d = diff.norm();
            if d == 0.0 {
                return fail(s, it);
            }
            let u = diff / d;
            normal += u * u.transpose() * weight[m];
            grad += u * (weight[m] * (d_hat[m] - d));
        }
        if grad.norm() <= GN_GRAD_RTOL * wsum {
            return WlsEstimate {
                s,
                converged: true,
                iterations: it,
            };
        }
        let eig = normal.symmetric_eigenvalues();
        if eig.min() <= 1e-12 * normal.trace() {
            return fail(s, it);
        }
        let Some(step) = normal.cholesky().map(|c| c.solve(&grad)) else {
            return fail(s, it);
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..GN_MAX_HALVINGS {
            let trial = s + step * t;
            let c = wls_cost(d_hat, positions, &weight, &trial);
            if c < cost {
                s = trial;
                cost = c;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // No descent left along the Gauss-Newton direction.
            return WlsEstimate {
                s,
                converged: grad.norm() <= GN_GRAD_RTOL.sqrt() * wsum,
                iterations: it,
            };
        }
    }
    fail(s, GN_MAX_ITER)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmseResult {
    pub rmse: f64,
    /// Square root of the CRB sum.
    pub crb_sqrt: f64,
    pub trials: usize,
    pub failures: usize,
}

/// Offset of the estimator's starting point from the true target, meters.
pub const INIT_OFFSET: f64 = 5.0;

/// Estimates the target `trials` times from fresh noise. Trial `i` draws
/// from stream `i` of a generator seeded with `seed`.
pub fn rmse_experiment(dec: &Decision, s: &Point, rf: &RfParams, trials: usize, seed: u64) -> Result<RmseResult> {
    let crb = fim_position(&dec.power, &dec.positions, s, rf)?.crb_sum;
    let init = s + Vector3::repeat(INIT_OFFSET / 3.0.sqrt());
    let mut sq = 0.0;
    let mut ok = 0usize;
    for i in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let sample = simulate_ranges_with(dec, s, rf, &mut rng, 1.0)?;
        let est = localize_wls(&sample.d_hat, &dec.positions, &sample.sigma2, &init);
        if est.converged {
            sq += (est.s - s).norm_squared();
            ok += 1;
        }
    }
    if ok == 0 {
        return Err(Error::AllTrialsFailed { trials });
    }
    Ok(RmseResult {
        rmse: (sq / ok as f64).sqrt(),
        crb_sqrt: crb.sqrt(),
        trials,
        failures: trials - ok,
    })
}
