//! Lagrangian and Hamiltonian mechanics on top of compiled expressions.
//!
//! Hamiltonians are compiled over `t, q1..qn, p1..pn` and Lagrangians over
//! `t, q1..qn, qd1..qdn`; values are passed in that slot order.

mod flow;
mod invariants;
mod legendre;

use nalgebra::{DMatrix, DVector};

use crate::expr::{Alphabet, Compiled, ExprError, Expression};
use crate::forms::FormsError;

pub use flow::{
    equivalence_check, hamiltonian_flow, lagrange_flow, LagrangeSample, LagrangeTrajectory, Method,
    Trajectory, TrajectorySample,
};
pub use invariants::{
    canonical_check, poincare_invariance, CanonicalMap, CanonicalReport, PoincareReport,
};
pub use legendre::{
    legendre_invert, legendre_to_hamiltonian, verify_legendre_identities, LegendreResiduals,
};

/// Largest Hessian condition number accepted by Newton and explicit-form
/// solves.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HamiltonianError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Forms(#[from] FormsError),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("velocity Hessian is singular (condition estimate {cond:e})")]
    SingularHessian { cond: f64 },
    #[error(
        "Newton iteration did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("verlet requires a Hamiltonian declared separable")]
    SeparabilityNotDeclared,
    #[error("step must be positive and the interval non-empty (dt = {dt}, length = {length})")]
    BadStep { dt: f64, length: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub t: f64,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhasePoint {
    pub fn new(t: f64, q: Vec<f64>, p: Vec<f64>) -> Self {
        PhasePoint { t, q, p }
    }

    fn slots(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(1 + 2 * self.q.len());
        v.push(self.t);
        v.extend(&self.q);
        v.extend(&self.p);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VelocityPoint {
    pub t: f64,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
}

impl VelocityPoint {
    pub fn new(t: f64, q: Vec<f64>, qd: Vec<f64>) -> Self {
        VelocityPoint { t, q, qd }
    }

    fn slots(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(1 + 2 * self.q.len());
        v.push(self.t);
        v.extend(&self.q);
        v.extend(&self.qd);
        v
    }
}

fn check_dim(expected: usize, found: usize) -> Result<(), HamiltonianError> {
    if expected == found {
        Ok(())
    } else {
        Err(HamiltonianError::DimensionMismatch { expected, found })
    }
}

/// `H(t, q, p)` with an optional separability declaration `H = T(p) + V(q)`.
#[derive(Debug, Clone)]
pub struct HamiltonianProblem {
    n: usize,
    h: Compiled,
    separable: bool,
}

impl HamiltonianProblem {
    pub fn new(n: usize, h: &Expression) -> Result<Self, HamiltonianError> {
        Ok(HamiltonianProblem {
            n,
            h: Compiled::new(h, &Alphabet::hamiltonian(n))?,
            separable: false,
        })
    }

    pub fn parse(n: usize, src: &str) -> Result<Self, HamiltonianError> {
        Self::new(n, &Expression::parse(src)?)
    }

    /// Declares `H = T(p) + V(q)`, enabling the verlet integrator.
    pub fn separable(mut self, yes: bool) -> Self {
        self.separable = yes;
        self
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn is_separable(&self) -> bool {
        self.separable
    }

    pub fn compiled(&self) -> &Compiled {
        &self.h
    }

    pub fn is_autonomous(&self) -> bool {
        !self.h.depends_on(0)
    }

    pub fn check(&self, pt: &PhasePoint) -> Result<(), HamiltonianError> {
        check_dim(self.n, pt.q.len())?;
        check_dim(self.n, pt.p.len())
    }

    pub fn value(&self, pt: &PhasePoint) -> Result<f64, HamiltonianError> {
        self.check(pt)?;
        Ok(self.h.value(&pt.slots())?)
    }

    /// `(H, ∂H/∂q, ∂H/∂p)`.
    pub fn derivatives(
        &self,
        t: f64,
        q: &[f64],
        p: &[f64],
    ) -> Result<(f64, Vec<f64>, Vec<f64>), HamiltonianError> {
        let mut vals = Vec::with_capacity(1 + 2 * self.n);
        vals.push(t);
        vals.extend(q);
        vals.extend(p);
        let wrt: Vec<usize> = (1..=2 * self.n).collect();
        let (h, mut d) = self.h.value_and_partials(&vals, &wrt)?;
        let dp = d.split_off(self.n);
        Ok((h, d, dp))
    }

    /// `H` with `(∂H/∂q, ∂H/∂p)` written into `grad`; `vals` is scratch.
    pub(crate) fn derivatives_into(
        &self,
        t: f64,
        q: &[f64],
        p: &[f64],
        vals: &mut Vec<f64>,
        grad: &mut [f64],
    ) -> Result<f64, HamiltonianError> {
        vals.clear();
        vals.push(t);
        vals.extend(q);
        vals.extend(p);
        Ok(self.h.value_and_partials_span(vals, 1, grad)?)
    }

    /// `∂H/∂t`.
    pub fn time_partial(&self, pt: &PhasePoint) -> Result<f64, HamiltonianError> {
        Ok(self.h.partials(&pt.slots(), &[0])?[0])
    }
}

/// `L(t, q, qd)`.
#[derive(Debug, Clone)]
pub struct LagrangianProblem {
    n: usize,
    l: Compiled,
}

impl LagrangianProblem {
    pub fn new(n: usize, l: &Expression) -> Result<Self, HamiltonianError> {
        Ok(LagrangianProblem {
            n,
            l: Compiled::new(l, &Alphabet::lagrangian(n))?,
        })
    }

    pub fn parse(n: usize, src: &str) -> Result<Self, HamiltonianError> {
        Self::new(n, &Expression::parse(src)?)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn compiled(&self) -> &Compiled {
        &self.l
    }

    pub fn check(&self, v: &VelocityPoint) -> Result<(), HamiltonianError> {
        check_dim(self.n, v.q.len())?;
        check_dim(self.n, v.qd.len())
    }

    pub fn value(&self, v: &VelocityPoint) -> Result<f64, HamiltonianError> {
        self.check(v)?;
        Ok(self.l.value(&v.slots())?)
    }

    /// `(L, ∂L/∂t, ∂L/∂q, ∂L/∂qd)`.
    pub fn derivatives(
        &self,
        v: &VelocityPoint,
    ) -> Result<(f64, f64, Vec<f64>, Vec<f64>), HamiltonianError> {
        self.check(v)?;
        let wrt: Vec<usize> = (0..=2 * self.n).collect();
        let (l, mut d) = self.l.value_and_partials(&v.slots(), &wrt)?;
        let dqd = d.split_off(1 + self.n);
        let dq = d.split_off(1);
        Ok((l, d[0], dq, dqd))
    }

    /// Full Hessian over `(t, q, qd)`.
    fn full_hessian(&self, v: &VelocityPoint) -> Result<Vec<Vec<f64>>, HamiltonianError> {
        let wrt: Vec<usize> = (0..=2 * self.n).collect();
        Ok(self.l.hessian(&v.slots(), &wrt)?)
    }

    /// `∂²L/∂qd²` at `v`.
    pub fn velocity_hessian(&self, v: &VelocityPoint) -> Result<Vec<Vec<f64>>, HamiltonianError> {
        self.check(v)?;
        let wrt: Vec<usize> = (1 + self.n..=2 * self.n).collect();
        Ok(self.l.hessian(&v.slots(), &wrt)?)
    }
}

/// Condition estimate `σ_max / σ_min` (infinite when singular).
pub fn condition_number(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    if n == 0 {
        return 1.0;
    }
    let mat = DMatrix::from_fn(n, n, |i, j| m[i][j]);
    let sv = mat.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves `m x = rhs`, rejecting ill-conditioned `m`.
pub(crate) fn solve_checked(m: &[Vec<f64>], rhs: &[f64]) -> Result<Vec<f64>, HamiltonianError> {
    let cond = condition_number(m);
    if !(cond <= MAX_CONDITION) {
        return Err(HamiltonianError::SingularHessian { cond });
    }
    let n = m.len();
    let mat = DMatrix::from_fn(n, n, |i, j| m[i][j]);
    let b = DVector::from_column_slice(rhs);
    let x = mat
        .lu()
        .solve(&b)
        .ok_or(HamiltonianError::SingularHessian { cond })?;
    Ok(x.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivative_split() {
        let hp = HamiltonianProblem::parse(2, "p1^2/2 + 3*p2 + q1*q2 + t").unwrap();
        let (h, dq, dp) = hp.derivatives(1.0, &[2.0, 3.0], &[4.0, 5.0]).unwrap();
        assert_eq!(h, 8.0 + 15.0 + 6.0 + 1.0);
        assert_eq!(dq, vec![3.0, 2.0]);
        assert_eq!(dp, vec![4.0, 3.0]);
        assert!(!hp.is_autonomous());
    }

    #[test]
    fn lagrangian_derivative_split() {
        let lp = LagrangianProblem::parse(1, "qd^2/2 - q^2/2 + 2*t*qd").unwrap();
        let v = VelocityPoint::new(1.0, vec![3.0], vec![2.0]);
        let (l, lt, lq, lqd) = lp.derivatives(&v).unwrap();
        assert_eq!(l, 2.0 - 4.5 + 4.0);
        assert_eq!(lt, 4.0);
        assert_eq!(lq, vec![-3.0]);
        assert_eq!(lqd, vec![4.0]);
        assert_eq!(lp.velocity_hessian(&v).unwrap(), vec![vec![1.0]]);
    }

    #[test]
    fn alphabet_is_enforced() {
        assert!(matches!(
            HamiltonianProblem::parse(1, "p^2 + qd"),
            Err(HamiltonianError::Expr(ExprError::NotInAlphabet { .. }))
        ));
        assert!(LagrangianProblem::parse(1, "p*qd").is_err());
    }

    #[test]
    fn dimension_checks() {
        let hp = HamiltonianProblem::parse(2, "p1^2").unwrap();
        let pt = PhasePoint::new(0.0, vec![0.0], vec![0.0, 0.0]);
        assert!(matches!(
            hp.value(&pt),
            Err(HamiltonianError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn conditioning() {
        assert_eq!(condition_number(&[vec![0.0]]), f64::INFINITY);
        assert!((condition_number(&[vec![2.0, 0.0], vec![0.0, 0.5]]) - 4.0).abs() < 1e-12);
        assert!(matches!(
            solve_checked(&[vec![1.0, 1.0], vec![1.0, 1.0]], &[1.0, 2.0]),
            Err(HamiltonianError::SingularHessian { .. })
        ));
        assert_eq!(solve_checked(&[vec![2.0]], &[4.0]).unwrap(), vec![2.0]);
    }
}
