use rayon::prelude::*;

use super::strip::integrate_raw;
use super::{CharError, CharacteristicStrip, JetPoint, PdeProblem, Truncation};
use crate::expr::{Alphabet, Compiled, Expression};

/// A tensor grid of seed positions, last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedGrid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub counts: Vec<usize>,
}

impl SeedGrid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, counts: Vec<usize>) -> Self {
        SeedGrid { lo, hi, counts }
    }

    /// `count` points on `[lo, hi]`.
    pub fn line(lo: f64, hi: f64, count: usize) -> Self {
        SeedGrid::new(vec![lo], vec![hi], vec![count])
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn coord(&self, axis: usize, i: usize) -> f64 {
        let c = self.counts[axis];
        if c <= 1 {
            return self.lo[axis];
        }
        let w = i as f64 / (c - 1) as f64;
        self.lo[axis] + w * (self.hi[axis] - self.lo[axis])
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        let total = self.len();
        let mut out = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rem = flat;
            let mut x = vec![0.0; self.dim()];
            for axis in (0..self.dim()).rev() {
                x[axis] = self.coord(axis, rem % self.counts[axis]);
                rem /= self.counts[axis];
            }
            out.push(x);
        }
        out
    }
}

/// Initial jets plus the index shape they were laid out on. A shape with
/// one entry per space dimension is a tensor grid; otherwise the seeds
/// form a chain in list order.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSet {
    pub jets: Vec<JetPoint>,
    pub shape: Vec<usize>,
}

impl SeedSet {
    pub fn chain(jets: Vec<JetPoint>) -> Self {
        let shape = vec![jets.len()];
        SeedSet { jets, shape }
    }

    pub fn len(&self) -> usize {
        self.jets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jets.is_empty()
    }
}

/// Jets `(x0, u0(x0), ∇u0(x0))` on the nodes of `grid`.
pub fn seed_from_initial_data(
    prob: &PdeProblem,
    u0: &Expression,
    grid: &SeedGrid,
) -> Result<SeedSet, CharError> {
    let n = prob.dim();
    for len in [grid.dim(), grid.lo.len(), grid.hi.len()] {
        if len != n {
            return Err(CharError::DimensionMismatch {
                expected: n,
                found: len,
            });
        }
    }
    let c = Compiled::new(u0, &Alphabet::spatial(n))?;
    let wrt: Vec<usize> = (0..n).collect();
    let jets = grid
        .points()
        .into_iter()
        .map(|x| {
            let (u, p) = c.value_and_partials(&x, &wrt)?;
            Ok(JetPoint::new(x, u, p))
        })
        .collect::<Result<Vec<_>, CharError>>()?;
    Ok(SeedSet {
        jets,
        shape: grid.counts.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StripFamily {
    pub strips: Vec<CharacteristicStrip>,
    pub shape: Vec<usize>,
    pub t0: f64,
    pub step: f64,
    /// Seeds whose strip could not start, with the reason. Their entry in
    /// `strips` holds only the seed.
    pub failures: Vec<(usize, CharError)>,
}

/// `(x, p)` of one strip.
type PhasePoint = (Vec<f64>, Vec<f64>);

impl StripFamily {
    pub fn len(&self) -> usize {
        self.strips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strips.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.strips.first().map_or(0, |s| s.samples[0].jet.dim())
    }

    /// Number of grid samples every strip has.
    pub fn common_len(&self) -> usize {
        self.strips
            .iter()
            .map(|s| s.samples.len())
            .min()
            .unwrap_or(0)
    }

    pub fn param_range(&self) -> (f64, f64) {
        let k = self.common_len().max(1) - 1;
        (self.t0, self.param_at(k))
    }

    fn param_at(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.step
    }

    pub fn any_truncated(&self) -> bool {
        self.strips.iter().any(|s| s.truncated.is_some())
    }

    /// Strip positions and momenta linearly interpolated at parameter `t`.
    fn states_at(&self, t: f64) -> Result<Vec<PhasePoint>, CharError> {
        let (lo, hi) = self.param_range();
        let slack = 1e-12 * self.step;
        if !(t >= lo - slack && t <= hi + slack) {
            return Err(CharError::OutOfRange { t, lo, hi });
        }
        let k_max = self.common_len() - 1;
        let (k, w) = if k_max == 0 {
            (0, 0.0)
        } else {
            let s = ((t - lo) / self.step).clamp(0.0, k_max as f64);
            let k = (s.floor() as usize).min(k_max - 1);
            (k, s - k as f64)
        };
        Ok(self
            .strips
            .iter()
            .map(|st| {
                let a = &st.samples[k].jet;
                if w == 0.0 {
                    return (a.x.clone(), a.p.clone());
                }
                let b = &st.samples[k + 1].jet;
                let lerp = |u: &[f64], v: &[f64]| {
                    u.iter()
                        .zip(v)
                        .map(|(x, y)| x + w * (y - x))
                        .collect::<Vec<_>>()
                };
                (lerp(&a.x, &b.x), lerp(&a.p, &b.p))
            })
            .collect())
    }
}

/// One strip per seed from `t0` to `t_end`, integrated in parallel and
/// assembled in seed order.
pub fn integrate_family(
    prob: &PdeProblem,
    seeds: &SeedSet,
    t0: f64,
    t_end: f64,
    dt: f64,
) -> Result<StripFamily, CharError> {
    if seeds.is_empty() {
        return Err(CharError::EmptySeeds);
    }
    let length = t_end - t0;
    if !(dt > 0.0) || !(length > 0.0) || !dt.is_finite() || !length.is_finite() {
        return Err(CharError::BadStep { dt, length });
    }
    for j in &seeds.jets {
        prob.check_jet(j)?;
    }
    let results: Vec<_> = seeds
        .jets
        .par_iter()
        .map(|j| integrate_raw(prob, j, t0, length, dt))
        .collect();
    let step = crate::ode::Grid::new(t0, length, dt).h;
    let mut strips = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => strips.push(s),
            Err(e) => {
                let jet = seeds.jets[i].clone();
                strips.push(CharacteristicStrip {
                    kind: prob.kind(),
                    samples: vec![super::StripSample {
                        param: t0,
                        f_residual: prob.residual(&jet).ok().map(f64::abs),
                        e_value: prob.evolution_value(t0, &jet.x, &jet.p).ok(),
                        jet,
                    }],
                    step,
                    truncated: Some(Truncation {
                        at_param: t0,
                        reason: e.to_string(),
                    }),
                });
                failures.push((i, e));
            }
        }
    }
    Ok(StripFamily {
        strips,
        shape: seeds.shape.clone(),
        t0,
        step,
        failures,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Crossing {
    pub t: f64,
    pub x: Vec<f64>,
    /// Seed indices of the cell whose Jacobian vanished.
    pub strips: Vec<usize>,
}

struct Cell {
    verts: Vec<usize>,
    det0: f64,
}

fn det(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    nalgebra::DMatrix::from_fn(n, n, |i, j| m[j][i]).determinant()
}

fn edge(f: &StripFamily, a: usize, b: usize, k: usize) -> Vec<f64> {
    let xa = &f.strips[a].samples[k].jet.x;
    let xb = &f.strips[b].samples[k].jet.x;
    xb.iter().zip(xa).map(|(u, v)| u - v).collect()
}

impl Cell {
    fn jacobian(&self, f: &StripFamily, k: usize) -> f64 {
        let base = self.verts[0];
        if self.verts.len() == 2 {
            // chain: projection onto the initial edge
            let e0 = edge(f, base, self.verts[1], 0);
            let ek = edge(f, base, self.verts[1], k);
            return e0.iter().zip(&ek).map(|(a, b)| a * b).sum::<f64>() / self.det0;
        }
        let cols: Vec<Vec<f64>> = self.verts[1..]
            .iter()
            .map(|&v| edge(f, base, v, k))
            .collect();
        det(&cols) / self.det0
    }
}

fn cells(f: &StripFamily) -> Vec<Cell> {
    let n = f.dim();
    let total = f.len();
    let grid = f.shape.len() == n && n > 1 && f.shape.iter().product::<usize>() == total;
    let mut out = Vec::new();
    if !grid {
        for i in 0..total.saturating_sub(1) {
            let e0 = edge(f, i, i + 1, 0);
            let d = e0.iter().map(|v| v * v).sum::<f64>();
            if d > 0.0 {
                out.push(Cell {
                    verts: vec![i, i + 1],
                    det0: d,
                });
            }
        }
        return out;
    }
    let strides: Vec<usize> = (0..n).map(|a| f.shape[a + 1..].iter().product()).collect();
    'flat: for flat in 0..total {
        let mut rem = flat;
        for a in 0..n {
            let idx = rem / strides[a];
            rem %= strides[a];
            if idx + 1 >= f.shape[a] {
                continue 'flat;
            }
        }
        let mut verts = vec![flat];
        verts.extend(strides.iter().map(|s| flat + s));
        let cols: Vec<Vec<f64>> = verts[1..].iter().map(|&v| edge(f, flat, v, 0)).collect();
        let d = det(&cols);
        if d != 0.0 && d.is_finite() {
            out.push(Cell { verts, det0: d });
        }
    }
    out
}

fn worst(cells: &[Cell], f: &StripFamily, k: usize) -> (f64, usize) {
    cells
        .iter()
        .enumerate()
        .map(|(i, c)| (c.jacobian(f, k), i))
        .fold(
            (f64::INFINITY, 0),
            |acc, v| if v.0 < acc.0 { v } else { acc },
        )
}

/// Earliest time at which the discrete Jacobian of the map `x0 ↦ x(t; x0)`
/// reaches zero on some seed cell, or `None` if it stays positive.
///
/// The stored grid is scanned coarsely, the first sign change is bracketed
/// and bisected to a single step, and the crossing time is interpolated
/// linearly inside that step.
pub fn detect_crossing(family: &StripFamily) -> Option<Crossing> {
    if family.len() < 3 {
        return None;
    }
    let big_k = family.common_len();
    if big_k < 2 {
        return None;
    }
    let cells = cells(family);
    if cells.is_empty() {
        return None;
    }
    let hit = |k: usize| worst(&cells, family, k).0 <= 0.0;
    let stride = (big_k / 64).max(1);
    let mut prev = 0;
    let mut found = None;
    let mut k = stride.min(big_k - 1);
    loop {
        if hit(k) {
            found = Some(k);
            break;
        }
        if k == big_k - 1 {
            break;
        }
        prev = k;
        k = (k + stride).min(big_k - 1);
    }
    let (mut lo, mut hi) = (prev, found?);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if hit(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let (j_hi, c) = worst(&cells, family, hi);
    let cell = &cells[c];
    let j_lo = cell.jacobian(family, lo);
    let w = if j_lo > 0.0 && j_lo > j_hi {
        (j_lo / (j_lo - j_hi)).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let n = family.dim();
    let mut x = vec![0.0; n];
    for &v in &cell.verts {
        let a = &family.strips[v].samples[lo].jet.x;
        let b = &family.strips[v].samples[hi].jet.x;
        for i in 0..n {
            x[i] += a[i] + w * (b[i] - a[i]);
        }
    }
    for xi in &mut x {
        *xi /= cell.verts.len() as f64;
    }
    Some(Crossing {
        t: family.param_at(lo) + w * family.step,
        x,
        strips: cell.verts.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpReport {
    pub t: f64,
    /// Largest `|Δp|` between neighbours ordered by position.
    pub max_gap: f64,
    /// Midpoint of the two strips realising `max_gap`.
    pub location: Vec<f64>,
    pub pair: (usize, usize),
    /// Largest `|Δp|` between neighbours in seed order.
    pub seed_order_max_gap: f64,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Momentum gaps between neighbouring strips at parameter `t`.
///
/// In one dimension strips are ordered by their position at `t`; in higher
/// dimensions, and for the seed-order figure, the seed order is used.
pub fn jump_scan(family: &StripFamily, t: f64) -> Result<JumpReport, CharError> {
    if family.is_empty() {
        return Err(CharError::EmptySeeds);
    }
    let states = family.states_at(t)?;
    let seed_order: Vec<usize> = (0..states.len()).collect();
    let mut order = seed_order.clone();
    if family.dim() == 1 {
        order.sort_by(|&a, &b| states[a].0[0].total_cmp(&states[b].0[0]).then(a.cmp(&b)));
    }
    let scan = |ord: &[usize]| {
        let mut best = (0.0f64, (ord[0], ord[0]));
        for w in ord.windows(2) {
            let g = dist(&states[w[0]].1, &states[w[1]].1);
            if g > best.0 {
                best = (g, (w[0], w[1]));
            }
        }
        best
    };
    let (max_gap, pair) = scan(&order);
    let (seed_order_max_gap, _) = scan(&seed_order);
    let location = states[pair.0]
        .0
        .iter()
        .zip(&states[pair.1].0)
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    Ok(JumpReport {
        t,
        max_gap,
        location,
        pair,
        seed_order_max_gap,
    })
}

/// Momentum values of every branch of a one-dimensional family passing
/// through `x` at parameter `t`, in seed order.
pub fn branches_at(family: &StripFamily, t: f64, x: f64) -> Result<Vec<f64>, CharError> {
    if family.dim() != 1 {
        return Err(CharError::NotOneDimensional);
    }
    let states = family.states_at(t)?;
    let mut out = Vec::new();
    for w in states.windows(2) {
        let (xa, pa) = (w[0].0[0], w[0].1[0]);
        let (xb, pb) = (w[1].0[0], w[1].1[0]);
        let inside = (xa <= x && x < xb) || (xb <= x && x < xa);
        if inside {
            let s = (x - xa) / (xb - xa);
            out.push(pa + s * (pb - pa));
        }
    }
    Ok(out)
}
