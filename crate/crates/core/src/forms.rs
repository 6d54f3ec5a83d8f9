//! Numerical diagnostics for the 1-form `θ = p_i dx^i`.
//!
//! A curve carries an interior differential when `du = p_i dx^i` holds
//! along it; [`closure_residual`] measures the per-step defect of that
//! relation. [`commutator_of_field`] measures `K_ij = ∂p_j/∂x^i − ∂p_i/∂x^j`
//! for a field of candidate derivatives, which vanishes iff `θ` is closed.

use crate::expr::{Alphabet, Compiled, ExprError, Expression};
use crate::hamiltonian::PhasePoint;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FormsError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("curve needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("curve parameter must be strictly increasing (record {0})")]
    NonMonotone(usize),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("loop is not closed: endpoint mismatch {gap:e}")]
    LoopNotClosed { gap: f64 },
    #[error("loop spans several times; a Hamiltonian is required for the -H dt term")]
    MissingHamiltonian,
    #[error("finite-difference step must be positive")]
    BadStep,
}

/// Antisymmetric matrix `K_ij`, built from its upper triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct CommutatorMatrix {
    n: usize,
    k: Vec<Vec<f64>>,
}

impl CommutatorMatrix {
    pub fn from_upper(n: usize, mut upper: impl FnMut(usize, usize) -> f64) -> Self {
        let mut k = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = upper(i, j);
                k[i][j] = v;
                k[j][i] = -v;
            }
        }
        CommutatorMatrix { n, k }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.k[i][j]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.k
    }

    /// Euclidean norm over the independent components `i < j`.
    pub fn norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                s += self.k[i][j] * self.k[i][j];
            }
        }
        s.sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.k.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DiffMode {
    Exact,
    /// Central differences with step `h·max(1, |x_i|)`; `h` defaults to 1e-5.
    FiniteDifference {
        h: Option<f64>,
    },
}

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// `K_ij = ∂p_j/∂x^i − ∂p_i/∂x^j` for a field `p(x)` given as `n`
/// expressions in `x1..xn`.
pub fn commutator_of_field(
    p_field: &[Expression],
    point: &[f64],
    mode: DiffMode,
) -> Result<CommutatorMatrix, FormsError> {
    let n = point.len();
    if p_field.len() != n {
        return Err(FormsError::DimensionMismatch {
            expected: n,
            found: p_field.len(),
        });
    }
    let alphabet = Alphabet::spatial(n);
    let comps = p_field
        .iter()
        .map(|e| Compiled::new(e, &alphabet))
        .collect::<Result<Vec<_>, _>>()?;
    // jac[j][i] = ∂p_j/∂x^i
    let jac: Vec<Vec<f64>> = match mode {
        DiffMode::Exact => comps
            .iter()
            .map(|c| c.gradient(point))
            .collect::<Result<_, _>>()?,
        DiffMode::FiniteDifference { h } => {
            let h = h.unwrap_or(DEFAULT_FD_STEP);
            if !(h > 0.0) {
                return Err(FormsError::BadStep);
            }
            let mut jac = vec![vec![0.0; n]; n];
            let mut x = point.to_vec();
            for i in 0..n {
                let hi = h * point[i].abs().max(1.0);
                x[i] = point[i] + hi;
                let plus = comps
                    .iter()
                    .map(|c| c.value(&x))
                    .collect::<Result<Vec<_>, _>>()?;
                x[i] = point[i] - hi;
                let minus = comps
                    .iter()
                    .map(|c| c.value(&x))
                    .collect::<Result<Vec<_>, _>>()?;
                x[i] = point[i];
                for j in 0..n {
                    jac[j][i] = (plus[j] - minus[j]) / (2.0 * hi);
                }
            }
            jac
        }
    };
    Ok(CommutatorMatrix::from_upper(n, |i, j| {
        jac[j][i] - jac[i][j]
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRecord {
    pub param: f64,
    pub x: Vec<f64>,
    pub u: f64,
    pub p: Vec<f64>,
}

/// Ordered samples `(s, x, u, p)` along a curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSample {
    records: Vec<CurveRecord>,
}

impl CurveSample {
    pub fn new(records: Vec<CurveRecord>) -> Result<Self, FormsError> {
        if let Some(first) = records.first() {
            let n = first.x.len();
            for (k, r) in records.iter().enumerate() {
                for len in [r.x.len(), r.p.len()] {
                    if len != n {
                        return Err(FormsError::DimensionMismatch {
                            expected: n,
                            found: len,
                        });
                    }
                }
                if k > 0 && !(r.param > records[k - 1].param) {
                    return Err(FormsError::NonMonotone(k));
                }
            }
        }
        Ok(CurveSample { records })
    }

    pub fn records(&self) -> &[CurveRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.records.first().map_or(0, |r| r.x.len())
    }
}

fn midpoint_increment(a: &CurveRecord, b: &CurveRecord) -> f64 {
    midpoint_sum(a.p.iter().zip(&b.p).zip(a.x.iter().zip(&b.x)))
}

fn midpoint_sum<'a>(pairs: impl Iterator<Item = ((&'a f64, &'a f64), (&'a f64, &'a f64))>) -> f64 {
    pairs
        .map(|((pa, pb), (xa, xb))| 0.5 * (pa + pb) * (xb - xa))
        .sum()
}

/// One entry of [`closure_defects`]: `|Δu − p̄·Δx| / Δs`, with `pairs`
/// yielding `((p_a, p_b), (x_a, x_b))` per component.
pub fn step_defect<'a>(
    ds: f64,
    du: f64,
    pairs: impl Iterator<Item = ((&'a f64, &'a f64), (&'a f64, &'a f64))>,
) -> f64 {
    (du - midpoint_sum(pairs)).abs() / ds
}

/// Per-step defects `|Δu − p̄·Δx| / Δs`; one entry per step.
pub fn closure_defects(curve: &CurveSample) -> Result<Vec<f64>, FormsError> {
    if curve.len() < 2 {
        return Err(FormsError::TooFewSamples(curve.len()));
    }
    Ok(curve
        .records
        .windows(2)
        .map(|w| {
            let (a, b) = (&w[0], &w[1]);
            step_defect(
                b.param - a.param,
                b.u - a.u,
                a.p.iter().zip(&b.p).zip(a.x.iter().zip(&b.x)),
            )
        })
        .collect())
}

/// Largest per-step defect of `du = p_i dx^i` along the curve.
pub fn closure_residual(curve: &CurveSample) -> Result<f64, FormsError> {
    Ok(closure_defects(curve)?.into_iter().fold(0.0, f64::max))
}

/// Reconstructs `u` from its initial value by trapezoid accumulation of
/// `p_i dx^i`.
pub fn interior_differential(curve: &CurveSample) -> Result<Vec<f64>, FormsError> {
    if curve.len() < 2 {
        return Err(FormsError::TooFewSamples(curve.len()));
    }
    let mut u = curve.records[0].u;
    let mut out = Vec::with_capacity(curve.len());
    out.push(u);
    for w in curve.records.windows(2) {
        u += midpoint_increment(&w[0], &w[1]);
        out.push(u);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopClosure {
    /// The last point connects back to the first.
    Wraparound,
    /// The last point repeats the first and is dropped.
    Repeated,
}

pub const LOOP_CLOSURE_TOL: f64 = 1e-12;

/// A closed discrete loop of phase points.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseLoop {
    pub points: Vec<PhasePoint>,
    pub closure: LoopClosure,
}

impl PhaseLoop {
    pub fn wraparound(points: Vec<PhasePoint>) -> Self {
        PhaseLoop {
            points,
            closure: LoopClosure::Wraparound,
        }
    }

    /// `N` points on the circle of the given radius in the `(q_axis, p_axis)`
    /// plane, counter-clockwise, at time `t`.
    pub fn circle(
        t: f64,
        center_q: &[f64],
        center_p: &[f64],
        radius: f64,
        axis: usize,
        points: usize,
    ) -> Self {
        let pts = (0..points)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / points as f64;
                let mut q = center_q.to_vec();
                let mut p = center_p.to_vec();
                q[axis] += radius * a.cos();
                p[axis] += radius * a.sin();
                PhasePoint { t, q, p }
            })
            .collect();
        Self::wraparound(pts)
    }

    pub fn reversed(&self) -> Self {
        let mut points = self.points.clone();
        points.reverse();
        PhaseLoop {
            points,
            closure: self.closure,
        }
    }

    /// Distinct points in cyclic order.
    pub fn cycle(&self) -> Result<&[PhasePoint], FormsError> {
        match self.closure {
            LoopClosure::Wraparound => Ok(&self.points),
            LoopClosure::Repeated => {
                let (Some(first), Some(last)) = (self.points.first(), self.points.last()) else {
                    return Ok(&[]);
                };
                let gap = first
                    .q
                    .iter()
                    .zip(&last.q)
                    .chain(first.p.iter().zip(&last.p))
                    .map(|(a, b)| (a - b).abs())
                    .fold((first.t - last.t).abs(), f64::max);
                if gap > LOOP_CLOSURE_TOL {
                    return Err(FormsError::LoopNotClosed { gap });
                }
                Ok(&self.points[..self.points.len() - 1])
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LoopRule {
    /// Closed trapezoid rule (the polygon/shoelace value); O(N⁻²).
    Trapezoid,
    /// Trapezoid with one Richardson step against the stride-2 trapezoid;
    /// O(N⁻⁴) on smooth loops. Falls back to the trapezoid below 5 points.
    #[default]
    Richardson,
}

/// Periodic central difference over the loop index.
fn cyclic_difference(vals: &[f64], k: usize, stride: usize) -> f64 {
    let m = vals.len();
    let fwd = vals[(k + stride) % m];
    let back = vals[(k + m * stride - stride) % m];
    (fwd - back) / (2.0 * stride as f64)
}

/// `∮ (p·dq − H dt)` with the default rule.
pub fn loop_integral(lp: &PhaseLoop, hamiltonian: Option<&Compiled>) -> Result<f64, FormsError> {
    loop_integral_with(lp, hamiltonian, LoopRule::default())
}

/// `∮ (p·dq − H dt)`. The `H dt` term is only evaluated when the loop spans
/// more than one time; `hamiltonian` is compiled over `t, q1..qn, p1..pn`.
pub fn loop_integral_with(
    lp: &PhaseLoop,
    hamiltonian: Option<&Compiled>,
    rule: LoopRule,
) -> Result<f64, FormsError> {
    let pts = lp.cycle()?;
    let m = pts.len();
    if m == 0 {
        return Ok(0.0);
    }
    let n = pts[0].q.len();
    for pt in pts {
        for len in [pt.q.len(), pt.p.len()] {
            if len != n {
                return Err(FormsError::DimensionMismatch {
                    expected: n,
                    found: len,
                });
            }
        }
    }
    let richardson = rule == LoopRule::Richardson && m >= 5;
    let deriv = |vals: &[f64], k: usize| {
        if richardson {
            (4.0 * cyclic_difference(vals, k, 1) - cyclic_difference(vals, k, 2)) / 3.0
        } else {
            cyclic_difference(vals, k, 1)
        }
    };

    let mut total = 0.0;
    for j in 0..n {
        let q: Vec<f64> = pts.iter().map(|pt| pt.q[j]).collect();
        total += (0..m).map(|k| pts[k].p[j] * deriv(&q, k)).sum::<f64>();
    }

    let t: Vec<f64> = pts.iter().map(|pt| pt.t).collect();
    if t.iter().any(|&tk| tk != t[0]) {
        let h = hamiltonian.ok_or(FormsError::MissingHamiltonian)?;
        for (k, pt) in pts.iter().enumerate() {
            let mut vals = Vec::with_capacity(2 * n + 1);
            vals.push(pt.t);
            vals.extend(&pt.q);
            vals.extend(&pt.p);
            total -= h.value(&vals)? * deriv(&t, k);
        }
    }
    Ok(total)
}
