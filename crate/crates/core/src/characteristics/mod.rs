//! Characteristic strips of first-order PDEs.
//!
//! Two problem kinds are supported:
//!
//! * general `F(x, u, p) = 0`, integrated along the Charpit system
//!   `dx/ds = F_p`, `dp/ds = −(F_x + p F_u)`, `du/ds = p·F_p`;
//! * evolution `u_t + E(t, x, p) = 0`, integrated along
//!   `dx/dt = E_p`, `dp/dt = −E_x`, `du/dt = p·E_p − E`.
//!
//! The `du` equations are chosen so that `du = p_i dx^i` (respectively
//! `du = −E dt + p_j dx^j`) holds along every strip.

mod family;
mod strip;

use crate::expr::{Alphabet, Compiled, ExprError, Expression};
use crate::forms::FormsError;

pub use family::{
    branches_at, detect_crossing, integrate_family, jump_scan, seed_from_initial_data, Crossing,
    JumpReport, SeedGrid, SeedSet, StripFamily,
};
pub use strip::{integrate_strip, CharacteristicStrip, StripSample, Truncation};

/// Largest `|F|` accepted at an initial jet.
pub const INITIAL_JET_TOL: f64 = 1e-10;
/// Strips are truncated once `|F|` exceeds this.
pub const STRIP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CharError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Forms(#[from] FormsError),
    #[error("initial jet is off the solution manifold: |F| = {residual:e}")]
    InitialJetOffManifold { residual: f64 },
    #[error("integration failed at parameter {param}: {reason}")]
    StepFailure {
        last_good: JetPoint,
        param: f64,
        reason: String,
    },
    #[error("seed list is empty")]
    EmptySeeds,
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("step must be positive and the interval non-empty (dt = {dt}, length = {length})")]
    BadStep { dt: f64, length: f64 },
    #[error("time {t} outside the family range [{lo}, {hi}]")]
    OutOfRange { t: f64, lo: f64, hi: f64 },
    #[error("operation requires a {0} problem")]
    WrongKind(&'static str),
    #[error("operation requires a one-dimensional family")]
    NotOneDimensional,
}

/// A point `(x, u, p)` of first-jet space.
#[derive(Debug, Clone, PartialEq)]
pub struct JetPoint {
    pub x: Vec<f64>,
    pub u: f64,
    pub p: Vec<f64>,
}

impl JetPoint {
    pub fn new(x: Vec<f64>, u: f64, p: Vec<f64>) -> Self {
        JetPoint { x, u, p }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdeKind {
    General,
    Evolution,
}

/// Right-hand side of a characteristic system at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Rhs {
    pub dx: Vec<f64>,
    pub du: f64,
    pub dp: Vec<f64>,
}

/// Either `F(x1..xn, u, p1..pn)` or `E(t, x1..xn, p1..pn)`.
#[derive(Debug, Clone)]
pub struct PdeProblem {
    n: usize,
    kind: PdeKind,
    func: Compiled,
}

impl PdeProblem {
    pub fn general(n: usize, f: &Expression) -> Result<Self, CharError> {
        Ok(PdeProblem {
            n,
            kind: PdeKind::General,
            func: Compiled::new(f, &Alphabet::general_pde(n))?,
        })
    }

    pub fn evolution(n: usize, e: &Expression) -> Result<Self, CharError> {
        Ok(PdeProblem {
            n,
            kind: PdeKind::Evolution,
            func: Compiled::new(e, &Alphabet::evolution(n))?,
        })
    }

    pub fn parse_general(n: usize, src: &str) -> Result<Self, CharError> {
        Self::general(n, &Expression::parse(src)?)
    }

    pub fn parse_evolution(n: usize, src: &str) -> Result<Self, CharError> {
        Self::evolution(n, &Expression::parse(src)?)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> PdeKind {
        self.kind
    }

    pub fn compiled(&self) -> &Compiled {
        &self.func
    }

    fn check_jet(&self, j: &JetPoint) -> Result<(), CharError> {
        for len in [j.x.len(), j.p.len()] {
            if len != self.n {
                return Err(CharError::DimensionMismatch {
                    expected: self.n,
                    found: len,
                });
            }
        }
        Ok(())
    }

    fn general_slots(&self, j: &JetPoint) -> Vec<f64> {
        let mut v = j.x.clone();
        v.push(j.u);
        v.extend(&j.p);
        v
    }

    fn evolution_slots(&self, t: f64, x: &[f64], p: &[f64]) -> Vec<f64> {
        let mut v = Vec::with_capacity(1 + 2 * self.n);
        v.push(t);
        v.extend(x);
        v.extend(p);
        v
    }

    /// `F(j)` for the general kind.
    pub fn residual(&self, j: &JetPoint) -> Result<f64, CharError> {
        if self.kind != PdeKind::General {
            return Err(CharError::WrongKind("general"));
        }
        self.check_jet(j)?;
        Ok(self.func.value(&self.general_slots(j))?)
    }

    /// `E(t, x, p)` for the evolution kind.
    pub fn evolution_value(&self, t: f64, x: &[f64], p: &[f64]) -> Result<f64, CharError> {
        if self.kind != PdeKind::Evolution {
            return Err(CharError::WrongKind("evolution"));
        }
        Ok(self.func.value(&self.evolution_slots(t, x, p))?)
    }
}

/// Charpit right-hand side together with `F(j)`.
pub(crate) fn charpit_with_value(prob: &PdeProblem, j: &JetPoint) -> Result<(Rhs, f64), CharError> {
    if prob.kind != PdeKind::General {
        return Err(CharError::WrongKind("general"));
    }
    prob.check_jet(j)?;
    let n = prob.n;
    let wrt: Vec<usize> = (0..=2 * n).collect();
    let (f, d) = prob.func.value_and_partials(&prob.general_slots(j), &wrt)?;
    let (fx, rest) = d.split_at(n);
    let fu = rest[0];
    let fp = &rest[1..];
    let dp = (0..n).map(|i| -(fx[i] + j.p[i] * fu)).collect();
    let du = fp.iter().zip(&j.p).map(|(a, b)| a * b).sum();
    Ok((
        Rhs {
            dx: fp.to_vec(),
            du,
            dp,
        },
        f,
    ))
}

/// `dx/ds = F_p`, `dp/ds = −(F_x + p F_u)`, `du/ds = p·F_p`.
pub fn charpit_rhs(prob: &PdeProblem, j: &JetPoint) -> Result<Rhs, CharError> {
    Ok(charpit_with_value(prob, j)?.0)
}

/// `dx/dt = E_p`, `dp/dt = −E_x`, `du/dt = p·E_p − E`.
pub fn evolution_rhs(prob: &PdeProblem, t: f64, x: &[f64], p: &[f64]) -> Result<Rhs, CharError> {
    if prob.kind != PdeKind::Evolution {
        return Err(CharError::WrongKind("evolution"));
    }
    let n = prob.n;
    for len in [x.len(), p.len()] {
        if len != n {
            return Err(CharError::DimensionMismatch {
                expected: n,
                found: len,
            });
        }
    }
    let wrt: Vec<usize> = (1..=2 * n).collect();
    let (e, d) = prob
        .func
        .value_and_partials(&prob.evolution_slots(t, x, p), &wrt)?;
    let (ex, ep) = d.split_at(n);
    let du = ep.iter().zip(p).map(|(a, b)| a * b).sum::<f64>() - e;
    Ok(Rhs {
        dx: ep.to_vec(),
        du,
        dp: ex.iter().map(|v| -v).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charpit_examples() {
        let eik = PdeProblem::parse_general(2, "p1^2 + p2^2 - 1").unwrap();
        let r = charpit_rhs(&eik, &JetPoint::new(vec![0.0, 0.0], 0.0, vec![1.0, 0.0])).unwrap();
        assert_eq!(
            r,
            Rhs {
                dx: vec![2.0, 0.0],
                du: 2.0,
                dp: vec![0.0, 0.0]
            }
        );

        let lin = PdeProblem::parse_general(1, "p1 - 3").unwrap();
        let r = charpit_rhs(&lin, &JetPoint::new(vec![7.0], -1.0, vec![3.0])).unwrap();
        assert_eq!(
            r,
            Rhs {
                dx: vec![1.0],
                du: 3.0,
                dp: vec![0.0]
            }
        );

        for (x, p) in [([1.0, -2.0], [0.6, 0.8]), ([5.0, 0.5], [-1.0, 0.0])] {
            let r = charpit_rhs(&eik, &JetPoint::new(x.to_vec(), 3.0, p.to_vec())).unwrap();
            assert_eq!(r.dp, vec![0.0, 0.0]);
        }
    }

    #[test]
    fn charpit_u_dependence() {
        // F = p1 + u: dp = -(0 + p·1)
        let f = PdeProblem::parse_general(1, "p1 + u").unwrap();
        let r = charpit_rhs(&f, &JetPoint::new(vec![0.0], 2.0, vec![-2.0])).unwrap();
        assert_eq!(r.dp, vec![2.0]);
        assert_eq!(r.du, -2.0);
    }

    #[test]
    fn evolution_examples() {
        let adv = PdeProblem::parse_evolution(1, "3*p1").unwrap();
        let r = evolution_rhs(&adv, 0.4, &[1.0], &[-2.0]).unwrap();
        assert_eq!(
            r,
            Rhs {
                dx: vec![3.0],
                du: 0.0,
                dp: vec![0.0]
            }
        );

        let burgers = PdeProblem::parse_evolution(1, "p1^2/2").unwrap();
        let r = evolution_rhs(&burgers, 0.0, &[0.0], &[-1.0]).unwrap();
        assert_eq!(
            r,
            Rhs {
                dx: vec![-1.0],
                du: 0.5,
                dp: vec![0.0]
            }
        );

        let osc = PdeProblem::parse_evolution(1, "(p1^2 + x1^2)/2").unwrap();
        let r = evolution_rhs(&osc, 0.0, &[1.0], &[0.0]).unwrap();
        assert_eq!(
            r,
            Rhs {
                dx: vec![0.0],
                du: -0.5,
                dp: vec![-1.0]
            }
        );
    }

    #[test]
    fn kinds_and_alphabets() {
        assert!(PdeProblem::parse_evolution(1, "u + p1").is_err());
        assert!(PdeProblem::parse_general(1, "t + p1").is_err());
        let adv = PdeProblem::parse_evolution(1, "3*p1").unwrap();
        let j = JetPoint::new(vec![0.0], 0.0, vec![0.0]);
        assert_eq!(charpit_rhs(&adv, &j), Err(CharError::WrongKind("general")));
        let eik = PdeProblem::parse_general(1, "p1^2 - 1").unwrap();
        assert!(matches!(
            charpit_rhs(&eik, &JetPoint::new(vec![0.0, 1.0], 0.0, vec![1.0])),
            Err(CharError::DimensionMismatch { .. })
        ));
    }
}
