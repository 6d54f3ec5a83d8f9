//! Grid-level measurements of the commutator of `θ = p_i dx^i`, and reports
//! pairing them with closure residuals along strips.

use rayon::prelude::*;

use crate::expr::{Alphabet, Compiled, ExprError, Expression};
use crate::forms::{closure_residual, CommutatorMatrix, CurveSample, FormsError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiagError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Forms(#[from] FormsError),
    #[error("axis {axis} has {count} nodes; at least 3 are needed")]
    GridTooSmall { axis: usize, count: usize },
    #[error("axis {axis} has an empty or invalid range")]
    BadRange { axis: usize },
    #[error("grid field has no {0} values")]
    MissingValues(&'static str),
    #[error("expected {expected} values, got {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Values of `u` and/or `p` on a tensor grid, row-major with the last axis
/// fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    lo: Vec<f64>,
    hi: Vec<f64>,
    counts: Vec<usize>,
    u: Option<Vec<f64>>,
    p: Option<Vec<Vec<f64>>>,
}

impl GridField {
    /// An empty field; every axis needs at least three nodes.
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, counts: Vec<usize>) -> Result<Self, DiagError> {
        let n = counts.len();
        for len in [lo.len(), hi.len()] {
            if len != n {
                return Err(DiagError::DimensionMismatch {
                    expected: n,
                    found: len,
                });
            }
        }
        for (axis, &count) in counts.iter().enumerate() {
            if count < 3 {
                return Err(DiagError::GridTooSmall { axis, count });
            }
            if !(hi[axis] > lo[axis]) || !(hi[axis] - lo[axis]).is_finite() {
                return Err(DiagError::BadRange { axis });
            }
        }
        Ok(Self::raw(lo, hi, counts))
    }

    fn raw(lo: Vec<f64>, hi: Vec<f64>, counts: Vec<usize>) -> Self {
        GridField {
            lo,
            hi,
            counts,
            u: None,
            p: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        let c = self.counts[axis];
        if c < 2 {
            return 0.0;
        }
        (self.hi[axis] - self.lo[axis]) / (c - 1) as f64
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        let c = self.counts[axis];
        if c < 2 {
            return self.lo[axis];
        }
        let w = i as f64 / (c - 1) as f64;
        self.lo[axis] + w * (self.hi[axis] - self.lo[axis])
    }

    fn strides(&self) -> Vec<usize> {
        (0..self.dim())
            .map(|a| self.counts[a + 1..].iter().product())
            .collect()
    }

    pub fn index(&self, flat: usize) -> Vec<usize> {
        let mut rem = flat;
        self.strides()
            .into_iter()
            .map(|s| {
                let i = rem / s;
                rem %= s;
                i
            })
            .collect()
    }

    pub fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().zip(self.strides()).map(|(i, s)| i * s).sum()
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        self.index(flat)
            .into_iter()
            .enumerate()
            .map(|(a, i)| self.coord(a, i))
            .collect()
    }

    pub fn u(&self) -> Option<&[f64]> {
        self.u.as_deref()
    }

    pub fn p(&self) -> Option<&[Vec<f64>]> {
        self.p.as_deref()
    }

    pub fn with_u(mut self, u: Vec<f64>) -> Result<Self, DiagError> {
        if u.len() != self.len() {
            return Err(DiagError::LengthMismatch {
                expected: self.len(),
                found: u.len(),
            });
        }
        self.u = Some(u);
        Ok(self)
    }

    pub fn with_p(mut self, p: Vec<Vec<f64>>) -> Result<Self, DiagError> {
        if p.len() != self.len() {
            return Err(DiagError::LengthMismatch {
                expected: self.len(),
                found: p.len(),
            });
        }
        if let Some(bad) = p.iter().find(|v| v.len() != self.dim()) {
            return Err(DiagError::DimensionMismatch {
                expected: self.dim(),
                found: bad.len(),
            });
        }
        self.p = Some(p);
        Ok(self)
    }

    /// Samples `u(x1..xn)` at every node.
    pub fn sample_u(self, u: &Expression) -> Result<Self, DiagError> {
        let c = Compiled::new(u, &Alphabet::spatial(self.dim()))?;
        let vals = (0..self.len())
            .map(|k| c.value(&self.node(k)))
            .collect::<Result<Vec<_>, _>>()?;
        self.with_u(vals)
    }

    /// Samples the components `p1..pn` at every node.
    pub fn sample_p(self, p: &[Expression]) -> Result<Self, DiagError> {
        let n = self.dim();
        if p.len() != n {
            return Err(DiagError::DimensionMismatch {
                expected: n,
                found: p.len(),
            });
        }
        let a = Alphabet::spatial(n);
        let cs = p
            .iter()
            .map(|e| Compiled::new(e, &a))
            .collect::<Result<Vec<_>, _>>()?;
        let vals = (0..self.len())
            .map(|k| {
                let x = self.node(k);
                cs.iter()
                    .map(|c| c.value(&x))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.with_p(vals)
    }

    fn check_interior(&self) -> Result<(), DiagError> {
        for (axis, &count) in self.counts.iter().enumerate() {
            if count < 3 {
                return Err(DiagError::GridTooSmall { axis, count });
            }
        }
        Ok(())
    }

    /// The grid with one boundary layer removed on every axis.
    fn interior_grid(&self) -> GridField {
        let n = self.dim();
        GridField::raw(
            (0..n).map(|a| self.coord(a, 1)).collect(),
            (0..n).map(|a| self.coord(a, self.counts[a] - 2)).collect(),
            self.counts.iter().map(|c| c - 2).collect(),
        )
    }

    /// Full-grid flat index of interior node `k` of [`interior_grid`].
    fn lift(&self, interior: &GridField, k: usize) -> usize {
        let idx: Vec<usize> = interior.index(k).into_iter().map(|i| i + 1).collect();
        self.flat(&idx)
    }

    fn restrict<T: Clone>(&self, interior: &GridField, vals: &[T]) -> Vec<T> {
        (0..interior.len())
            .map(|k| vals[self.lift(interior, k)].clone())
            .collect()
    }
}

/// Column of the grid across which `p` jumps.
#[derive(Debug, Clone, PartialEq)]
pub struct Kink {
    pub axis: usize,
    /// The jump lies between node `index` and `index + 1` along `axis`.
    pub index: usize,
    pub position: f64,
    pub jump: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonidentityReport {
    /// Interior nodes, carrying the restricted input values.
    pub interior: GridField,
    pub k: Vec<CommutatorMatrix>,
    pub norms: Vec<f64>,
    pub max: f64,
    pub mean: f64,
    pub min: f64,
    /// Interior flat index and position of `max`.
    pub argmax: usize,
    pub argmax_x: Vec<f64>,
    pub kinks: Vec<Kink>,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Columns whose neighbour `|Δp|` exceeds ten times the median neighbour
/// difference of the whole grid.
fn find_kinks(g: &GridField, p: &[Vec<f64>]) -> Vec<Kink> {
    let strides = g.strides();
    let mut all = Vec::new();
    // per axis, per column: largest jump across the column
    let mut cols: Vec<Vec<f64>> = g
        .counts
        .iter()
        .map(|&c| vec![0.0; c.saturating_sub(1)])
        .collect();
    for flat in 0..g.len() {
        let idx = g.index(flat);
        for a in 0..g.dim() {
            if idx[a] + 1 < g.counts[a] {
                let d = diff_norm(&p[flat], &p[flat + strides[a]]);
                all.push(d);
                let c = &mut cols[a][idx[a]];
                *c = c.max(d);
            }
        }
    }
    let scale = p.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let threshold = (10.0 * median(all)).max(64.0 * f64::EPSILON * scale);
    let mut out = Vec::new();
    for (axis, col) in cols.iter().enumerate() {
        for (index, &jump) in col.iter().enumerate() {
            if jump > threshold {
                out.push(Kink {
                    axis,
                    index,
                    position: 0.5 * (g.coord(axis, index) + g.coord(axis, index + 1)),
                    jump,
                });
            }
        }
    }
    out
}

/// Central-difference `K_ij = ∂p_j/∂x^i − ∂p_i/∂x^j` at the interior nodes.
pub fn commutator_field(g: &GridField) -> Result<NonidentityReport, DiagError> {
    let p = g.p().ok_or(DiagError::MissingValues("p"))?;
    g.check_interior()?;
    let n = g.dim();
    let strides = g.strides();
    let h: Vec<f64> = (0..n).map(|a| g.spacing(a)).collect();
    let mut interior = g.interior_grid();

    let k: Vec<CommutatorMatrix> = (0..interior.len())
        .into_par_iter()
        .map(|ki| {
            let c = g.lift(&interior, ki);
            // d(a, b) = ∂p_b/∂x^a
            let d =
                |a: usize, b: usize| (p[c + strides[a]][b] - p[c - strides[a]][b]) / (2.0 * h[a]);
            CommutatorMatrix::from_upper(n, |i, j| d(i, j) - d(j, i))
        })
        .collect();
    let norms: Vec<f64> = k.iter().map(CommutatorMatrix::norm).collect();
    let (mut max, mut argmax, mut min, mut sum) = (f64::NEG_INFINITY, 0, f64::INFINITY, 0.0);
    for (i, &v) in norms.iter().enumerate() {
        if v > max {
            max = v;
            argmax = i;
        }
        min = min.min(v);
        sum += v;
    }
    let mean = sum / norms.len() as f64;
    let argmax_x = interior.node(argmax);
    let kinks = find_kinks(g, p);

    if let Some(u) = g.u() {
        interior.u = Some(g.restrict(&interior, u));
    }
    interior.p = Some(g.restrict(&interior, p));
    Ok(NonidentityReport {
        interior,
        k,
        norms,
        max,
        mean,
        min,
        argmax,
        argmax_x,
        kinks,
    })
}

/// Central-difference gradient of `u`, returned on the interior nodes.
pub fn differentiate_scalar_field(g: &GridField) -> Result<GridField, DiagError> {
    let u = g.u().ok_or(DiagError::MissingValues("u"))?;
    g.check_interior()?;
    let n = g.dim();
    let strides = g.strides();
    let mut interior = g.interior_grid();
    let p = (0..interior.len())
        .into_par_iter()
        .map(|k| {
            let c = g.lift(&interior, k);
            (0..n)
                .map(|a| (u[c + strides[a]] - u[c - strides[a]]) / (2.0 * g.spacing(a)))
                .collect()
        })
        .collect();
    interior.u = Some(g.restrict(&interior, u));
    interior.p = Some(p);
    Ok(interior)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnOffReport {
    /// `closure_residual` of each curve, in input order.
    pub strip_residuals: Vec<f64>,
    pub on_max: Option<f64>,
    pub on_min: Option<f64>,
    pub grid: NonidentityReport,
    pub family_absent: bool,
}

/// Closure residuals along `curves` next to the commutator norms of `g`.
/// A grid with only `u` values is differentiated first.
pub fn compare_on_off(curves: &[CurveSample], g: &GridField) -> Result<OnOffReport, DiagError> {
    for c in curves {
        if c.dim() != g.dim() {
            return Err(DiagError::DimensionMismatch {
                expected: g.dim(),
                found: c.dim(),
            });
        }
    }
    let grid = if g.p().is_some() {
        commutator_field(g)?
    } else {
        commutator_field(&differentiate_scalar_field(g)?)?
    };
    let strip_residuals = curves
        .iter()
        .map(closure_residual)
        .collect::<Result<Vec<_>, _>>()?;
    let on_max = strip_residuals.iter().copied().reduce(f64::max);
    let on_min = strip_residuals.iter().copied().reduce(f64::min);
    Ok(OnOffReport {
        family_absent: curves.is_empty(),
        strip_residuals,
        on_max,
        on_min,
        grid,
    })
}
