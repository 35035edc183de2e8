//! Range-based target sensing: echo noise, Fisher information and the
//! Cramér-Rao bound on the target position.
//!
//! Each UAV measures its range to the target with variance
//! `sigma_m^2 = d^4 / (p_m kappa)`, `kappa = G_p beta0 / (rho sigma0^2)`.
//! Since the variance itself depends on `d`, the per-range information is
//! `1/sigma^2 + 8/d^2`, and the position FIM is
//! `sum_m (p_m kappa / d^4 + 8 / d^2) u_m u_m^T` with `u_m` the unit vector
//! from the target to UAV `m`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3xX, SymmetricEigen, Vector3};
use num_traits::Float;

use crate::error::{Error, Result};
use crate::scenario::{Geometry, Point, RfParams};

/// Relative eigenvalue threshold below which the FIM counts as singular.
pub const SINGULAR_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FimSummary {
    pub phi_s: Matrix3<f64>,
    pub det: f64,
    /// `tr(phi_s^-1)`, `+inf` when singular.
    pub crb_sum: f64,
    /// Per-UAV range variance, `+inf` for a UAV with zero power.
    pub per_uav_sigma2: DVector<f64>,
    /// Numerical rank of `phi_s`.
    pub rank: usize,
}

impl FimSummary {
    pub fn is_singular(&self) -> bool {
        self.rank < 3
    }
}

/// Range-noise variance `rho sigma0^2 d^4 / (p G_p beta0)`.
pub fn range_noise_variance(p: f64, d: f64, rf: &RfParams) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::CoincidentPoints("UAV and target"));
    }
    if !(p > 0.0) {
        return Err(Error::Unilluminated { uav: 0 });
    }
    Ok(d.powi(4) / (p * rf.sensing_coefficient()))
}

/// Diagonal FIM of the range vector: `1/sigma_m^2 + 8/d_m^2`.
pub fn fim_distances(p: &[f64], d: &[f64], rf: &RfParams) -> Result<DMatrix<f64>> {
    if p.len() != d.len() {
        return Err(Error::Dimension(alloc::format!("{} powers for {} distances", p.len(), d.len())));
    }
    let mut out = DMatrix::zeros(d.len(), d.len());
    for (m, (&pm, &dm)) in p.iter().zip(d).enumerate() {
        let var = range_noise_variance(pm, dm, rf).map_err(|e| match e {
            Error::Unilluminated { .. } => Error::Unilluminated { uav: m },
            other => other,
        })?;
        out[(m, m)] = 1.0 / var + 8.0 / (dm * dm);
    }
    Ok(out)
}

/// Jacobian of the ranges with respect to the UAV positions, one unit
/// column `(q_m - s)/d_m` per UAV.
pub fn range_jacobian(positions: &[Point], s: &Point) -> Result<Matrix3xX<f64>> {
    let mut j = Matrix3xX::zeros(positions.len());
    for (m, q) in positions.iter().enumerate() {
        let v = q - s;
        let d = v.norm();
        if !(d > 0.0) {
            return Err(Error::CoincidentPoints("UAV and target"));
        }
        j.set_column(m, &(v / d));
    }
    Ok(j)
}

/// Weight `alpha_m` with `phi_s = sum_m alpha_m v_m v_m^T`, `v_m = q_m - s`,
/// and its derivative in `d`.
fn direction_weight(p: f64, d: f64, kappa: f64) -> (f64, f64) {
    let d2 = d * d;
    let d4 = d2 * d2;
    let alpha = p * kappa / (d4 * d2) + 8.0 / d4;
    let dalpha = -6.0 * p * kappa / (d4 * d2 * d) - 32.0 / (d4 * d);
    (alpha, dalpha)
}

fn check_inputs(p: &[f64], positions: &[Point], s: &Point) -> Result<()> {
    if p.len() != positions.len() {
        return Err(Error::Dimension(alloc::format!("{} powers for {} UAVs", p.len(), positions.len())));
    }
    if positions.is_empty() {
        return Err(Error::Dimension("at least one UAV is required".into()));
    }
    if p.iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::InvalidScenario("negative transmit power".into()));
    }
    if positions.iter().any(|q| !((q - s).norm() > 0.0)) {
        return Err(Error::CoincidentPoints("UAV and target"));
    }
    Ok(())
}

/// Position FIM assembled entrywise from the coordinate differences.
pub fn fim_matrix(p: &[f64], positions: &[Point], s: &Point, rf: &RfParams) -> Result<Matrix3<f64>> {
    check_inputs(p, positions, s)?;
    let kappa = rf.sensing_coefficient();
    let mut phi = Matrix3::zeros();
    for (&pm, q) in p.iter().zip(positions) {
        let v = q - s;
        let (alpha, _) = direction_weight(pm, v.norm(), kappa);
        for i in 0..3 {
            for j in 0..3 {
                phi[(i, j)] += alpha * v[i] * v[j];
            }
        }
    }
    Ok(phi)
}

/// Position FIM through the chain rule `J Phi(d) J^T`. Requires every
/// UAV to transmit.
pub fn fim_matrix_chain_rule(p: &[f64], positions: &[Point], s: &Point, rf: &RfParams) -> Result<Matrix3<f64>> {
    check_inputs(p, positions, s)?;
    let d: Vec<f64> = positions.iter().map(|q| (q - s).norm()).collect();
    let jac = range_jacobian(positions, s)?;
    let phi_d = fim_distances(p, &d, rf)?;
    Ok(&jac * phi_d * jac.transpose())
}

pub fn fim_position(p: &[f64], positions: &[Point], s: &Point, rf: &RfParams) -> Result<FimSummary> {
    let terms = FimTerms::new(p, positions, s, rf)?;
    let kappa = rf.sensing_coefficient();
    let per_uav_sigma2 = DVector::from_iterator(
        p.len(),
        p.iter().zip(positions).map(|(&pm, q)| {
            if pm > 0.0 {
                (q - s).norm().powi(4) / (pm * kappa)
            } else {
                f64::INFINITY
            }
        }),
    );
    let phi_s = terms.matrix();
    let trace = phi_s.trace();
    let eig = SymmetricEigen::new(phi_s).eigenvalues;
    let rank = eig.iter().filter(|&&l| trace > 0.0 && l >= SINGULAR_RTOL * trace).count();
    let (det, crb_sum) = if rank < 3 {
        (0.0, f64::INFINITY)
    } else {
        let det = terms.det();
        (det, terms.adjugate().trace() / det)
    };
    Ok(FimSummary {
        phi_s,
        det,
        crb_sum,
        per_uav_sigma2,
        rank,
    })
}

/// The FIM kept as its rank-one terms `alpha_m v_m v_m^T`. Determinant and
/// adjugate follow from Cauchy-Binet as sums of nonnegative terms, which
/// stays accurate when the geometry is nearly flat.
#[derive(Debug, Clone)]
pub struct FimTerms {
    pub v: Vec<Vector3<f64>>,
    pub alpha: Vec<f64>,
}

impl FimTerms {
    pub fn new(p: &[f64], positions: &[Point], s: &Point, rf: &RfParams) -> Result<Self> {
        check_inputs(p, positions, s)?;
        let kappa = rf.sensing_coefficient();
        let v: Vec<Vector3<f64>> = positions.iter().map(|q| q - s).collect();
        let alpha = v.iter().zip(p).map(|(v, &pm)| direction_weight(pm, v.norm(), kappa).0).collect();
        Ok(Self { v, alpha })
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        self.v
            .iter()
            .zip(&self.alpha)
            .fold(Matrix3::zeros(), |acc, (v, &a)| acc + v * v.transpose() * a)
    }

    /// `sum_{i<j<k} a_i a_j a_k det[v_i v_j v_k]^2`.
    pub fn det(&self) -> f64 {
        let n = self.v.len();
        let mut total = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let w = self.v[i].cross(&self.v[j]);
                for k in j + 1..n {
                    let t = w.dot(&self.v[k]);
                    total += self.alpha[i] * self.alpha[j] * self.alpha[k] * t * t;
                }
            }
        }
        total
    }

    /// `sum_{i<j} a_i a_j (v_i x v_j)(v_i x v_j)^T`.
    pub fn adjugate(&self) -> Matrix3<f64> {
        let n = self.v.len();
        let mut adj = Matrix3::zeros();
        for i in 0..n {
            for j in i + 1..n {
                let w = self.v[i].cross(&self.v[j]);
                adj += w * w.transpose() * (self.alpha[i] * self.alpha[j]);
            }
        }
        adj
    }
}

/// Cofactor-expansion determinant of a 3x3 matrix.
pub fn det3(a: &Matrix3<f64>) -> f64 {
    a[(0, 0)] * (a[(1, 1)] * a[(2, 2)] - a[(1, 2)] * a[(2, 1)])
        - a[(0, 1)] * (a[(1, 0)] * a[(2, 2)] - a[(1, 2)] * a[(2, 0)])
        + a[(0, 2)] * (a[(1, 0)] * a[(2, 1)] - a[(1, 1)] * a[(2, 0)])
}

/// Adjugate, so that `a * adj(a) = det(a) I`. Defined for singular `a`.
pub fn adjugate3(a: &Matrix3<f64>) -> Matrix3<f64> {
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| a[(r0, c0)] * a[(r1, c1)] - a[(r0, c1)] * a[(r1, c0)];
    Matrix3::new(
        c(1, 2, 1, 2),
        -c(0, 2, 1, 2),
        c(0, 1, 1, 2),
        -c(1, 2, 0, 2),
        c(0, 2, 0, 2),
        -c(0, 1, 0, 2),
        c(1, 2, 0, 1),
        -c(0, 2, 0, 1),
        c(0, 1, 0, 1),
    )
}

/// `d det(phi_s) / d p_m = kappa / d^4 * u^T adj(phi_s) u`.
pub fn det_grad_power(terms: &FimTerms, rf: &RfParams) -> DVector<f64> {
    let adj = terms.adjugate();
    let kappa = rf.sensing_coefficient();
    DVector::from_iterator(
        terms.v.len(),
        terms.v.iter().map(|v| {
            let d2 = v.norm_squared();
            kappa / (d2 * d2 * d2) * (v.transpose() * adj * v)[0]
        }),
    )
}

/// Gradient of `det(phi_s)` with respect to each UAV position.
pub fn det_grad_positions(terms: &FimTerms, p: &[f64], rf: &RfParams) -> Vec<Vector3<f64>> {
    let adj = terms.adjugate();
    let kappa = rf.sensing_coefficient();
    terms
        .v
        .iter()
        .zip(p)
        .map(|(v, &pm)| {
            let d = v.norm();
            let (alpha, dalpha) = direction_weight(pm, d, kappa);
            let av = adj * v;
            v * (dalpha / d * v.dot(&av)) + av * (2.0 * alpha)
        })
        .collect()
}

/// Distance from `s` to the nearest point of the UAV flight box.
pub fn min_target_distance(geometry: &Geometry) -> f64 {
    let s = &geometry.target;
    let gap = |x: f64, lo: f64, hi: f64| (lo - x).max(0.0).max(x - hi);
    let dx = gap(s.x, geometry.area_x.lo, geometry.area_x.hi);
    let dy = gap(s.y, geometry.area_y.lo, geometry.area_y.hi);
    let dz = gap(s.z, geometry.altitude.lo, geometry.altitude.hi);
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Upper bound on `det(phi_s)` over every feasible decision:
/// `(tr/3)^3` with `tr <= kappa P_max / h^4 + 8 M / h^2`, `h` the smallest
/// UAV-target distance the flight box allows.
pub fn det_upper_bound(geometry: &Geometry, rf: &RfParams) -> Result<f64> {
    let h = min_target_distance(geometry);
    if !(h > 0.0) {
        return Err(Error::InvalidScenario(
            "target lies inside the flight box; the FIM determinant is unbounded".into(),
        ));
    }
    let h2 = h * h;
    let trace = rf.sensing_coefficient() * rf.p_max / (h2 * h2) + 8.0 * geometry.n_uav as f64 / h2;
    Ok((trace / 3.0).powi(3))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::defaults;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn rf() -> RfParams {
        let mut rf = defaults::rf();
        rf.noise_sense = 1e-14;
        rf.beta0 = 1e-5;
        rf
    }

    #[test]
    fn variance_example() {
        let v = range_noise_variance(0.2, 100.0, &rf()).unwrap();
        assert_relative_eq!(v, 2.0e-3, max_relative = 1e-12);
        assert_relative_eq!(range_noise_variance(0.2, 200.0, &rf()).unwrap(), 16.0 * v, max_relative = 1e-12);
        assert_relative_eq!(range_noise_variance(0.4, 100.0, &rf()).unwrap(), 0.5 * v, max_relative = 1e-12);
        assert!(matches!(range_noise_variance(0.0, 100.0, &rf()), Err(Error::Unilluminated { .. })));
    }

    #[test]
    fn distance_fim_example() {
        let f = fim_distances(&[0.2, 0.2, 0.0], &[100.0, 100.0, 50.0], &rf());
        assert!(matches!(f, Err(Error::Unilluminated { uav: 2 })));
        let f = fim_distances(&[0.2, 0.2], &[100.0, 100.0], &rf()).unwrap();
        assert_relative_eq!(f[(0, 0)], 500.0008, max_relative = 1e-12);
        assert_eq!(f[(0, 0)], f[(1, 1)]);
        assert_eq!(f[(0, 1)], 0.0);
    }

    #[test]
    fn jacobian_examples() {
        let s = Point::new(1.0, 2.0, 3.0);
        let j = range_jacobian(&[s + Vector3::new(7.0, 0.0, 0.0), s + Vector3::new(3.0, 0.0, 4.0)], &s).unwrap();
        assert_relative_eq!(j[(0, 0)], 1.0);
        assert_relative_eq!(j[(0, 1)], 0.6, epsilon = 1e-15);
        assert_relative_eq!(j[(2, 1)], 0.8, epsilon = 1e-15);
        assert!(range_jacobian(&[s], &s).is_err());
    }

    #[test]
    fn colinear_uavs_are_singular() {
        let s = Point::new(70.0, 70.0, 0.0);
        let pos = [Point::new(70.0, 70.0, 100.0), Point::new(70.0, 70.0, 150.0)];
        let f = fim_position(&[0.2, 0.3], &pos, &s, &rf()).unwrap();
        assert_eq!(f.rank, 1);
        assert_eq!(f.det, 0.0);
        assert_eq!(f.crb_sum, f64::INFINITY);
        assert!(det3(&f.phi_s).abs() <= 1e-12 * f.phi_s.norm().powi(3));
    }

    #[test]
    fn cauchy_binet_matches_cofactors() {
        let s = Point::new(70.0, 70.0, 0.0);
        let q = [
            Point::new(10.0, 20.0, 100.0),
            Point::new(80.0, 40.0, 100.0),
            Point::new(60.0, 90.0, 100.0),
            Point::new(30.0, 70.0, 100.0),
        ];
        let terms = FimTerms::new(&[0.1, 0.2, 0.05, 0.3], &q, &s, &rf()).unwrap();
        let phi = terms.matrix();
        assert_relative_eq!(terms.det(), det3(&phi), max_relative = 1e-9);
        assert_relative_eq!(terms.adjugate(), adjugate3(&phi), max_relative = 1e-9);
    }

    #[test]
    fn adjugate_identity() {
        let a = Matrix3::new(4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0);
        let prod = a * adjugate3(&a);
        assert_relative_eq!(prod, Matrix3::identity() * det3(&a), epsilon = 1e-12);
        assert_relative_eq!(det3(&a), a.determinant(), epsilon = 1e-12);
    }

    #[test]
    fn upper_bound_dominates_default() {
        let g = defaults::geometry();
        let rf = defaults::rf();
        let bound = det_upper_bound(&g, &rf).unwrap();
        let pos = [
            Point::new(70.0, 70.0, 100.0),
            Point::new(45.0, 70.0, 100.0),
            Point::new(70.0, 45.0, 100.0),
            Point::new(95.0, 95.0, 100.0),
        ];
        let p = [rf.p_max / 4.0; 4];
        let f = fim_position(&p, &pos, &g.target, &rf).unwrap();
        assert!(f.det > 0.0 && f.det <= bound);
    }

    fn scene() -> impl Strategy<Value = (Vec<f64>, Vec<Point>, Point)> {
        (1usize..6)
            .prop_flat_map(|m| {
                (
                    proptest::collection::vec(1e-3f64..1.0, m),
                    proptest::collection::vec((0.0f64..100.0, 0.0f64..100.0, 20.0f64..150.0), m),
                    (0.0f64..100.0, 0.0f64..100.0, -5.0f64..5.0),
                )
            })
            .prop_map(|(p, q, s)| {
                (
                    p,
                    q.into_iter().map(|(x, y, z)| Point::new(x, y, z)).collect(),
                    Point::new(s.0, s.1, s.2),
                )
            })
    }

    fn rotation(a: f64, b: f64) -> Matrix3<f64> {
        let rz = Matrix3::new(a.cos(), -a.sin(), 0.0, a.sin(), a.cos(), 0.0, 0.0, 0.0, 1.0);
        let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, b.cos(), -b.sin(), 0.0, b.sin(), b.cos());
        rz * rx
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn chain_rule_matches_entrywise((p, q, s) in scene()) {
            let a = fim_matrix(&p, &q, &s, &rf()).unwrap();
            let b = fim_matrix_chain_rule(&p, &q, &s, &rf()).unwrap();
            prop_assert!((a - b).norm() <= 1e-10 * a.norm());
            prop_assert!((a - a.transpose()).norm() <= 1e-12 * a.norm());
            let eig = SymmetricEigen::new(a).eigenvalues;
            prop_assert!(eig.min() >= -1e-9 * a.trace());
        }

        #[test]
        fn permutation_invariant((p, q, s) in scene()) {
            let a = fim_matrix(&p, &q, &s, &rf()).unwrap();
            let mut pr = p.clone();
            let mut qr = q.clone();
            pr.reverse();
            qr.reverse();
            let b = fim_matrix(&pr, &qr, &s, &rf()).unwrap();
            prop_assert!((a - b).norm() <= 1e-12 * a.norm());
        }

        #[test]
        fn more_power_more_information((p, q, s) in scene(), which in 0usize..6, bump in 1.0f64..3.0) {
            let base = fim_position(&p, &q, &s, &rf()).unwrap();
            prop_assume!(!base.is_singular());
            let mut p2 = p.clone();
            let m = which % p.len();
            p2[m] *= bump;
            let more = fim_position(&p2, &q, &s, &rf()).unwrap();
            prop_assert!(more.det >= base.det * (1.0 - 1e-12));
            prop_assert!(more.crb_sum <= base.crb_sum * (1.0 + 1e-12));
        }

        #[test]
        fn rotation_invariant((p, q, s) in scene(), a in 0.0f64..6.3, b in 0.0f64..6.3) {
            let base = fim_position(&p, &q, &s, &rf()).unwrap();
            prop_assume!(!base.is_singular());
            let r = rotation(a, b);
            let qr: Vec<Point> = q.iter().map(|x| r * x).collect();
            let rot = fim_position(&p, &qr, &(r * s), &rf()).unwrap();
            prop_assert!((rot.det - base.det).abs() <= 1e-9 * base.det);
            prop_assert!((rot.crb_sum - base.crb_sum).abs() <= 1e-9 * base.crb_sum);
        }

        #[test]
        fn det_gradients_match_differences((p, q, s) in scene()) {
            let terms = FimTerms::new(&p, &q, &s, &rf()).unwrap();
            let det = |p: &[f64], q: &[Point]| FimTerms::new(p, q, &s, &rf()).unwrap().det();
            // Natural magnitude of the determinant, robust when it vanishes.
            let scale = (terms.matrix().trace() / 3.0).powi(3);
            let gp = det_grad_power(&terms, &rf());
            for m in 0..p.len() {
                let h = 1e-6 * p[m];
                let mut hi = p.clone();
                let mut lo = p.clone();
                hi[m] += h;
                lo[m] -= h;
                let fd = (det(&hi, &q) - det(&lo, &q)) / (2.0 * h);
                prop_assert!((fd - gp[m]).abs() <= 1e-5 * gp[m].abs() + 1e-9 * scale / p[m]);
            }
            let gq = det_grad_positions(&terms, &p, &rf());
            for m in 0..q.len() {
                for i in 0..3 {
                    let h = 1e-5;
                    let mut hi = q.clone();
                    let mut lo = q.clone();
                    hi[m][i] += h;
                    lo[m][i] -= h;
                    let fd = (det(&p, &hi) - det(&p, &lo)) / (2.0 * h);
                    prop_assert!((fd - gq[m][i]).abs() <= 1e-5 * gq[m][i].abs() + 1e-9 * scale);
                }
            }
        }
    }
}
