use rayon::prelude::*;

use super::{hamiltonian_flow, HamiltonianError, HamiltonianProblem, Method, PhasePoint};
use crate::expr::{Alphabet, Compiled, Expression};
use crate::forms::{loop_integral, PhaseLoop};

#[derive(Debug, Clone, PartialEq)]
pub struct PoincareReport {
    pub initial: f64,
    pub transported: f64,
    pub drift: f64,
    pub end_loop: PhaseLoop,
}

/// Transports every loop point with its own flow call and compares
/// `∮ p·dq − H dt` before and after.
pub fn poincare_invariance(
    hp: &HamiltonianProblem,
    loop0: &PhaseLoop,
    t_end: f64,
    dt: f64,
    method: Method,
) -> Result<PoincareReport, HamiltonianError> {
    let initial = loop_integral(loop0, Some(hp.compiled()))?;
    let points = loop0
        .points
        .par_iter()
        .map(|pt| {
            let tr = hamiltonian_flow(hp, pt, t_end, dt, method)?;
            Ok(tr.last().point.clone())
        })
        .collect::<Result<Vec<_>, HamiltonianError>>()?;
    let end_loop = PhaseLoop {
        points,
        closure: loop0.closure,
    };
    let transported = loop_integral(&end_loop, Some(hp.compiled()))?;
    Ok(PoincareReport {
        initial,
        transported,
        drift: (transported - initial).abs(),
        end_loop,
    })
}

/// A time-independent phase-space map `(q, p) ↦ (Q, P)` with an optional
/// generating function `W(q, p)` for `p dq = P dQ + dW`.
#[derive(Debug, Clone)]
pub struct CanonicalMap {
    n: usize,
    q: Vec<Compiled>,
    p: Vec<Compiled>,
    w: Option<Compiled>,
}

impl CanonicalMap {
    pub fn new(
        q: &[Expression],
        p: &[Expression],
        w: Option<&Expression>,
    ) -> Result<Self, HamiltonianError> {
        let n = q.len();
        super::check_dim(n, p.len())?;
        let a = Alphabet::phase(n);
        let compile = |e: &Expression| Compiled::new(e, &a);
        Ok(CanonicalMap {
            n,
            q: q.iter().map(compile).collect::<Result<_, _>>()?,
            p: p.iter().map(compile).collect::<Result<_, _>>()?,
            w: w.map(compile).transpose()?,
        })
    }

    pub fn parse(q: &[&str], p: &[&str], w: Option<&str>) -> Result<Self, HamiltonianError> {
        let parse = |s: &&str| Expression::parse(s);
        let q: Vec<Expression> = q.iter().map(parse).collect::<Result<_, _>>()?;
        let p: Vec<Expression> = p.iter().map(parse).collect::<Result<_, _>>()?;
        let w = w.map(Expression::parse).transpose()?;
        Self::new(&q, &p, w.as_ref())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn apply(&self, pt: &PhasePoint) -> Result<PhasePoint, HamiltonianError> {
        let vals = self.slots(pt)?;
        let eval = |cs: &[Compiled]| {
            cs.iter()
                .map(|c| c.value(&vals))
                .collect::<Result<Vec<_>, _>>()
        };
        Ok(PhasePoint::new(pt.t, eval(&self.q)?, eval(&self.p)?))
    }

    fn slots(&self, pt: &PhasePoint) -> Result<Vec<f64>, HamiltonianError> {
        super::check_dim(self.n, pt.q.len())?;
        super::check_dim(self.n, pt.p.len())?;
        let mut v = pt.q.clone();
        v.extend(&pt.p);
        Ok(v)
    }

    /// Rows `(Q1..Qn, P1..Pn)`, columns `(q1..qn, p1..pn)`.
    pub fn jacobian(&self, pt: &PhasePoint) -> Result<Vec<Vec<f64>>, HamiltonianError> {
        let vals = self.slots(pt)?;
        self.q
            .iter()
            .chain(&self.p)
            .map(|c| c.gradient(&vals).map_err(Into::into))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanonicalReport {
    /// `max |JᵀΩJ − Ω|` over the sample points.
    pub symplectic: f64,
    /// `max |∮p dq − ∮P dQ|` over the probe loops.
    pub form: f64,
    /// `max |p dq − P dQ − dW|` coefficientwise, when `W` is given.
    pub generating: Option<f64>,
}

fn omega(n: usize, i: usize, j: usize) -> f64 {
    if j == i + n {
        1.0
    } else if i == j + n {
        -1.0
    } else {
        0.0
    }
}

pub fn canonical_check(
    map: &CanonicalMap,
    samples: &[PhasePoint],
    loops: &[PhaseLoop],
) -> Result<CanonicalReport, HamiltonianError> {
    let n = map.dim();
    let m = 2 * n;
    let mut symplectic = 0.0f64;
    let mut generating = map.w.as_ref().map(|_| 0.0f64);
    for pt in samples {
        let jac = map.jacobian(pt)?;
        for i in 0..m {
            for j in 0..m {
                let mut s = 0.0;
                for a in 0..m {
                    for b in 0..m {
                        let o = omega(n, a, b);
                        if o != 0.0 {
                            s += jac[a][i] * o * jac[b][j];
                        }
                    }
                }
                symplectic = symplectic.max((s - omega(n, i, j)).abs());
            }
        }
        if let (Some(w), Some(worst)) = (&map.w, generating.as_mut()) {
            let vals = map.slots(pt)?;
            let dw = w.gradient(&vals)?;
            let big_p = map.apply(pt)?.p;
            for c in 0..m {
                let own = if c < n { pt.p[c] } else { 0.0 };
                let pulled: f64 = (0..n).map(|k| big_p[k] * jac[k][c]).sum();
                *worst = worst.max((own - pulled - dw[c]).abs());
            }
        }
    }

    let mut form = 0.0f64;
    for lp in loops {
        let mapped = PhaseLoop {
            points: lp
                .points
                .iter()
                .map(|pt| map.apply(pt))
                .collect::<Result<_, _>>()?,
            closure: lp.closure,
        };
        let before = loop_integral(lp, None)?;
        let after = loop_integral(&mapped, None)?;
        form = form.max((before - after).abs());
    }
    Ok(CanonicalReport {
        symplectic,
        form,
        generating,
    })
}
