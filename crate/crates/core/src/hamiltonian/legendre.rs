//! The Legendre bridge `p = ∂L/∂qd`, `H = p·qd − L`, and the identities
//! relating the partials of a Lagrangian and its Hamiltonian partner.

use super::{
    check_dim, solve_checked, HamiltonianError, HamiltonianProblem, LagrangianProblem, PhasePoint,
    VelocityPoint,
};

const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX_ITER: usize = 50;

/// Momentum `p = ∂L/∂qd` and Hamiltonian value `p·qd − L` at `v`.
pub fn legendre_to_hamiltonian(
    lp: &LagrangianProblem,
    v: &VelocityPoint,
) -> Result<(Vec<f64>, f64), HamiltonianError> {
    let (l, _, _, p) = lp.derivatives(v)?;
    let h = p.iter().zip(&v.qd).map(|(a, b)| a * b).sum::<f64>() - l;
    Ok((p, h))
}

/// Solves `∂L/∂qd (t, q, qd) = p` for `qd` by Newton's method from `start`
/// (zero velocity when `None`).
pub fn legendre_invert(
    lp: &LagrangianProblem,
    t: f64,
    q: &[f64],
    p: &[f64],
    start: Option<&[f64]>,
) -> Result<Vec<f64>, HamiltonianError> {
    let n = lp.dim();
    check_dim(n, q.len())?;
    check_dim(n, p.len())?;
    let scale = p.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut v = VelocityPoint::new(t, q.to_vec(), start.map_or(vec![0.0; n], <[f64]>::to_vec));
    check_dim(n, v.qd.len())?;
    let mut residual = f64::INFINITY;
    for _ in 0..NEWTON_MAX_ITER {
        let (_, _, _, lqd) = lp.derivatives(&v)?;
        let g: Vec<f64> = lqd.iter().zip(p).map(|(a, b)| a - b).collect();
        residual = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let m = lp.velocity_hessian(&v)?;
        if residual <= NEWTON_TOL * scale {
            // a singular Hessian here means the solution is not unique
            let cond = super::condition_number(&m);
            if !(cond <= super::MAX_CONDITION) {
                return Err(HamiltonianError::SingularHessian { cond });
            }
            return Ok(v.qd);
        }
        let neg: Vec<f64> = g.iter().map(|x| -x).collect();
        let step = solve_checked(&m, &neg)?;
        let mut biggest = 0.0f64;
        for (x, d) in v.qd.iter_mut().zip(&step) {
            *x += d;
            biggest = biggest.max(d.abs() / x.abs().max(1.0));
        }
        // stalled at roundoff
        if biggest <= 4.0 * f64::EPSILON && residual <= 1e3 * NEWTON_TOL * scale {
            return Ok(v.qd);
        }
    }
    Err(HamiltonianError::NoConvergence {
        iterations: NEWTON_MAX_ITER,
        residual,
    })
}

/// Maximum residuals of the Legendre identities over a sample set.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LegendreResiduals {
    /// `|qd − ∂H/∂p|`
    pub velocity: f64,
    /// `|∂L/∂q + ∂H/∂q|`
    pub position: f64,
    /// `|∂L/∂t + ∂H/∂t|`
    pub time: f64,
    /// `|H − (p·qd − L)|`; the three identities above cannot see additive
    /// constants in `H`, this one can.
    pub value: f64,
}

impl LegendreResiduals {
    pub fn max_identity(&self) -> f64 {
        self.velocity.max(self.position).max(self.time)
    }

    /// The derivative identities hold but the values differ.
    pub fn constant_blind(&self, tol: f64) -> bool {
        self.max_identity() <= tol && self.value > tol
    }
}

/// Evaluates the identities at `(t, q, p(q, qd))` for every sample.
pub fn verify_legendre_identities(
    lp: &LagrangianProblem,
    hp: &HamiltonianProblem,
    samples: &[VelocityPoint],
) -> Result<LegendreResiduals, HamiltonianError> {
    check_dim(lp.dim(), hp.dim())?;
    let mut r = LegendreResiduals::default();
    for v in samples {
        let (l, lt, lq, p) = lp.derivatives(v)?;
        let pt = PhasePoint::new(v.t, v.q.clone(), p);
        let (h, hq, hp_) = hp.derivatives(pt.t, &pt.q, &pt.p)?;
        let ht = hp.time_partial(&pt)?;
        for j in 0..lp.dim() {
            r.velocity = r.velocity.max((v.qd[j] - hp_[j]).abs());
            r.position = r.position.max((lq[j] + hq[j]).abs());
        }
        r.time = r.time.max((lt + ht).abs());
        let legendre: f64 = pt.p.iter().zip(&v.qd).map(|(a, b)| a * b).sum::<f64>() - l;
        r.value = r.value.max((h - legendre).abs());
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lag(src: &str) -> LagrangianProblem {
        LagrangianProblem::parse(1, src).unwrap()
    }

    fn vp(q: f64, qd: f64) -> VelocityPoint {
        VelocityPoint::new(0.0, vec![q], vec![qd])
    }

    #[test]
    fn forward_transform_examples() {
        let (p, h) = legendre_to_hamiltonian(&lag("qd^2/2 - q^2/2"), &vp(0.0, 2.0)).unwrap();
        assert_eq!((p, h), (vec![2.0], 2.0));
        let (p, h) = legendre_to_hamiltonian(&lag("qd^2/2"), &vp(0.0, 0.0)).unwrap();
        assert_eq!((p, h), (vec![0.0], 0.0));
        let (p, h) = legendre_to_hamiltonian(&lag("cosh(qd)"), &vp(0.0, 0.5)).unwrap();
        let s = 0.5f64.sinh();
        assert!((p[0] - s).abs() < 1e-15);
        assert!((h - (0.5 * s - 0.5f64.cosh())).abs() < 1e-10);
        assert!((h + 0.867078).abs() < 1e-6);
    }

    #[test]
    fn inverse_transform_examples() {
        let qd = legendre_invert(&lag("qd^2/2"), 0.0, &[0.0], &[4.0], None).unwrap();
        assert_eq!(qd, vec![4.0]);
        let qd = legendre_invert(&lag("2*qd^2/2"), 0.0, &[0.0], &[4.0], None).unwrap();
        assert_eq!(qd, vec![2.0]);

        // bisection oracle on sinh(qd) = 1
        let (mut lo, mut hi) = (0.0f64, 2.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid.sinh() < 1.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        let qd = legendre_invert(&lag("cosh(qd)"), 0.0, &[0.0], &[1.0], None).unwrap();
        assert!((qd[0] - lo).abs() < 1e-8);
        assert!((qd[0] - 0.881373587).abs() < 1e-8);
    }

    #[test]
    fn degenerate_lagrangian_is_singular() {
        for p in [1.0, 2.0] {
            let r = legendre_invert(&lag("qd"), 0.0, &[0.0], &[p], None);
            assert!(
                matches!(r, Err(HamiltonianError::SingularHessian { .. })),
                "{r:?}"
            );
        }
    }

    #[test]
    fn coupled_two_dimensional_inverse() {
        let lp = LagrangianProblem::parse(2, "qd1^2 + qd1*qd2 + qd2^2 + exp(qd1)/10").unwrap();
        let v = VelocityPoint::new(0.0, vec![0.0, 0.0], vec![0.3, -0.7]);
        let (p, _) = legendre_to_hamiltonian(&lp, &v).unwrap();
        let back = legendre_invert(&lp, 0.0, &v.q, &p, None).unwrap();
        assert!((back[0] - 0.3).abs() < 1e-12 && (back[1] + 0.7).abs() < 1e-12);
    }

    #[test]
    fn start_override_is_used() {
        // L = (qd - 5)^4/4 + (qd - 5)^2/2 has p = 0 at qd = 5
        let lp = lag("(qd - 5)^4/4 + (qd - 5)^2/2");
        let qd = legendre_invert(&lp, 0.0, &[0.0], &[0.0], Some(&[4.9])).unwrap();
        assert!((qd[0] - 5.0).abs() < 1e-12);
    }

    fn samples(n: usize) -> Vec<VelocityPoint> {
        (0..n)
            .map(|k| {
                let a = k as f64 * 0.37;
                vp(a.sin() * 2.0, (1.3 * a).cos() * 1.5)
            })
            .collect()
    }

    #[test]
    fn oscillator_pair_satisfies_identities() {
        let lp = lag("qd^2/2 - q^2/2");
        let hp = HamiltonianProblem::parse(1, "p^2/2 + q^2/2").unwrap();
        let r = verify_legendre_identities(&lp, &hp, &samples(100)).unwrap();
        assert!(r.max_identity() <= 1e-10 && r.value <= 1e-10, "{r:?}");
    }

    #[test]
    fn additive_constant_is_invisible_to_identities() {
        let lp = lag("qd^2/2");
        let hp = HamiltonianProblem::parse(1, "p^2/2 + 1").unwrap();
        let r = verify_legendre_identities(&lp, &hp, &samples(10)).unwrap();
        assert_eq!((r.velocity, r.position, r.time), (0.0, 0.0, 0.0));
        assert_eq!(r.value, 1.0);
        assert!(r.constant_blind(1e-10));
    }

    #[test]
    fn mismatched_potential_shows_in_position_identity() {
        let lp = lag("qd^2/2");
        let hp = HamiltonianProblem::parse(1, "p^2/2 + q").unwrap();
        let r = verify_legendre_identities(&lp, &hp, &samples(10)).unwrap();
        assert_eq!(r.position, 1.0);
        assert_eq!(r.velocity, 0.0);
    }

    #[test]
    fn time_identity() {
        let lp = lag("qd^2/2 - t*q");
        let hp = HamiltonianProblem::parse(1, "p^2/2 + t*q").unwrap();
        let r = verify_legendre_identities(&lp, &hp, &samples(10)).unwrap();
        assert!(r.max_identity() < 1e-14);
        let wrong = HamiltonianProblem::parse(1, "p^2/2 + t*q + t").unwrap();
        let r = verify_legendre_identities(&lp, &wrong, &samples(10)).unwrap();
        assert!((r.time - 1.0).abs() < 1e-14);
    }
}
