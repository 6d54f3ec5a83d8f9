use super::{
    check_dim, legendre_to_hamiltonian, solve_checked, HamiltonianError, HamiltonianProblem,
    LagrangianProblem, PhasePoint, VelocityPoint,
};
use crate::ode::{rk4_step, Grid, Rk4};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Rk4,
    /// Kick–drift–kick Störmer–Verlet; separable Hamiltonians only.
    Verlet,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Rk4 => "rk4",
            Method::Verlet => "verlet",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub point: PhasePoint,
    /// Accumulated action `∫ (p·q̇ − H) dt`, zero at the start.
    pub action: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<TrajectorySample>,
    pub step: f64,
    pub method: Method,
}

impl Trajectory {
    pub fn last(&self) -> &TrajectorySample {
        self.samples.last().expect("trajectory is never empty")
    }
}

fn grid_for(t0: f64, t_end: f64, dt: f64) -> Result<Grid, HamiltonianError> {
    let length = t_end - t0;
    if !(dt > 0.0) || !(length > 0.0) || !dt.is_finite() || !length.is_finite() {
        return Err(HamiltonianError::BadStep { dt, length });
    }
    Ok(Grid::new(t0, length, dt))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Integrates `dq/dt = ∂H/∂p`, `dp/dt = −∂H/∂q` from `start` to `t_end`,
/// accumulating the action `ds = p·dq − H dt` by the trapezoid rule.
pub fn hamiltonian_flow(
    hp: &HamiltonianProblem,
    start: &PhasePoint,
    t_end: f64,
    dt: f64,
    method: Method,
) -> Result<Trajectory, HamiltonianError> {
    hp.check(start)?;
    if method == Method::Verlet && !hp.is_separable() {
        return Err(HamiltonianError::SeparabilityNotDeclared);
    }
    let grid = grid_for(start.t, t_end, dt)?;
    let n = hp.dim();
    let h = grid.h;

    let mut vals = Vec::with_capacity(1 + 2 * n);
    let mut grad = vec![0.0; 2 * n];
    let mut lagrangian_density = |t: f64, q: &[f64], p: &[f64]| -> Result<f64, HamiltonianError> {
        let hv = hp.derivatives_into(t, q, p, &mut vals, &mut grad)?;
        Ok(dot(p, &grad[n..]) - hv)
    };

    let mut samples = Vec::with_capacity(grid.steps + 1);
    let mut density = lagrangian_density(start.t, &start.q, &start.p)?;
    samples.push(TrajectorySample {
        point: start.clone(),
        action: 0.0,
    });
    let mut action = 0.0;

    let mut y = start.q.clone();
    y.extend(&start.p);
    let mut y1 = vec![0.0; 2 * n];
    let mut rk4 = Rk4::new(2 * n);
    let mut vals = Vec::with_capacity(1 + 2 * n);
    let mut g = vec![0.0; 2 * n];
    let mut p_half = vec![0.0; n];

    for k in 0..grid.steps {
        let t = grid.at(k);
        match method {
            Method::Rk4 => {
                rk4.step(t, &y, h, &mut y1, |t, y, f| {
                    hp.derivatives_into(t, &y[..n], &y[n..], &mut vals, f)?;
                    // f holds (H_q, H_p); the flow is (H_p, −H_q)
                    f.rotate_left(n);
                    f[n..].iter_mut().for_each(|v| *v = -*v);
                    Ok::<_, HamiltonianError>(())
                })?;
                std::mem::swap(&mut y, &mut y1);
            }
            Method::Verlet => {
                let (q, p) = y.split_at_mut(n);
                hp.derivatives_into(t, q, p, &mut vals, &mut g)?;
                for i in 0..n {
                    p_half[i] = p[i] - 0.5 * h * g[i];
                }
                hp.derivatives_into(t + 0.5 * h, q, &p_half, &mut vals, &mut g)?;
                for i in 0..n {
                    q[i] += h * g[n + i];
                }
                hp.derivatives_into(t + h, q, &p_half, &mut vals, &mut g)?;
                for i in 0..n {
                    p[i] = p_half[i] - 0.5 * h * g[i];
                }
            }
        }
        let t1 = grid.at(k + 1);
        let (q, p) = y.split_at(n);
        let next = lagrangian_density(t1, q, p)?;
        action += 0.5 * h * (density + next);
        density = next;
        samples.push(TrajectorySample {
            point: PhasePoint::new(t1, q.to_vec(), p.to_vec()),
            action,
        });
    }
    Ok(Trajectory {
        samples,
        step: h,
        method,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LagrangeSample {
    pub point: VelocityPoint,
    /// Induced momentum `∂L/∂qd`.
    pub p: Vec<f64>,
    /// Accumulated `∫ L dt`.
    pub action: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LagrangeTrajectory {
    pub samples: Vec<LagrangeSample>,
    pub step: f64,
}

/// `q̈` from `M q̈ = ∂L/∂q − (∂²L/∂qd∂q) qd − ∂²L/∂qd∂t`, `M = ∂²L/∂qd²`.
fn acceleration(lp: &LagrangianProblem, v: &VelocityPoint) -> Result<Vec<f64>, HamiltonianError> {
    let n = lp.dim();
    let (_, _, lq, _) = lp.derivatives(v)?;
    let hess = lp.full_hessian(v)?;
    let mass: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| hess[1 + n + i][1 + n + j]).collect())
        .collect();
    let rhs: Vec<f64> = (0..n)
        .map(|i| {
            let row = &hess[1 + n + i];
            let mixed: f64 = (0..n).map(|j| row[1 + j] * v.qd[j]).sum();
            lq[i] - mixed - row[0]
        })
        .collect();
    solve_checked(&mass, &rhs)
}

/// Integrates the Euler–Lagrange equation in explicit form with RK4 on
/// `(q, qd)`, attaching `p = ∂L/∂qd` at every grid point.
pub fn lagrange_flow(
    lp: &LagrangianProblem,
    start: &VelocityPoint,
    t_end: f64,
    dt: f64,
) -> Result<LagrangeTrajectory, HamiltonianError> {
    lp.check(start)?;
    let grid = grid_for(start.t, t_end, dt)?;
    let n = lp.dim();
    let h = grid.h;

    let attach = |v: VelocityPoint| -> Result<(LagrangeSample, f64), HamiltonianError> {
        let (l, _, _, p) = lp.derivatives(&v)?;
        Ok((
            LagrangeSample {
                point: v,
                p,
                action: 0.0,
            },
            l,
        ))
    };

    let mut samples = Vec::with_capacity(grid.steps + 1);
    let (first, mut l_prev) = attach(start.clone())?;
    // fail early on a degenerate start
    acceleration(lp, start)?;
    samples.push(first);
    let mut y = start.q.clone();
    y.extend(&start.qd);
    let mut action = 0.0;
    for k in 0..grid.steps {
        y = rk4_step(grid.at(k), &y, h, |t, y| {
            let v = VelocityPoint::new(t, y[..n].to_vec(), y[n..].to_vec());
            let mut f = y[n..].to_vec();
            f.extend(acceleration(lp, &v)?);
            Ok::<_, HamiltonianError>(f)
        })?;
        let v = VelocityPoint::new(grid.at(k + 1), y[..n].to_vec(), y[n..].to_vec());
        let (mut s, l) = attach(v)?;
        action += 0.5 * h * (l_prev + l);
        l_prev = l;
        s.action = action;
        samples.push(s);
    }
    Ok(LagrangeTrajectory { samples, step: h })
}

/// Runs both descriptions from Legendre-matched starts and returns the
/// largest `|q_L − q_H|∞ + |p_L − p_H|∞` over the shared grid.
pub fn equivalence_check(
    lp: &LagrangianProblem,
    hp: &HamiltonianProblem,
    start: &VelocityPoint,
    t_end: f64,
    dt: f64,
) -> Result<f64, HamiltonianError> {
    check_dim(lp.dim(), hp.dim())?;
    let (p0, _) = legendre_to_hamiltonian(lp, start)?;
    let lag = lagrange_flow(lp, start, t_end, dt)?;
    let ham = hamiltonian_flow(
        hp,
        &PhasePoint::new(start.t, start.q.clone(), p0),
        t_end,
        dt,
        Method::Rk4,
    )?;
    let sup = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
    };
    Ok(lag
        .samples
        .iter()
        .zip(&ham.samples)
        .map(|(l, h)| sup(&l.point.q, &h.point.q) + sup(&l.p, &h.point.p))
        .fold(0.0, f64::max))
}
