use super::{CharError, JetPoint, PdeKind, PdeProblem, INITIAL_JET_TOL, STRIP_TOL};
use crate::forms::{step_defect, CurveRecord, CurveSample, FormsError};
use crate::ode::{Grid, Rk4};

#[derive(Debug, Clone, PartialEq)]
pub struct StripSample {
    /// `s` for general strips, `t` for evolution strips.
    pub param: f64,
    pub jet: JetPoint,
    /// `|F|` (general kind).
    pub f_residual: Option<f64>,
    /// `E(t, x, p)` (evolution kind).
    pub e_value: Option<f64>,
}

/// Why and where a strip stopped early.
#[derive(Debug, Clone, PartialEq)]
pub struct Truncation {
    pub at_param: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharacteristicStrip {
    pub kind: PdeKind,
    pub samples: Vec<StripSample>,
    pub step: f64,
    pub truncated: Option<Truncation>,
}

impl CharacteristicStrip {
    pub fn last(&self) -> &StripSample {
        self.samples.last().expect("strip is never empty")
    }

    pub fn max_residual(&self) -> Option<f64> {
        self.samples
            .iter()
            .filter_map(|s| s.f_residual)
            .reduce(f64::max)
    }

    /// The strip as a curve carrying `du = θ`. Evolution strips are lifted
    /// to `(t, x)` with `θ = −E dt + p·dx`.
    pub fn curve(&self) -> Result<CurveSample, FormsError> {
        let recs = self
            .samples
            .iter()
            .map(|s| match self.kind {
                PdeKind::General => CurveRecord {
                    param: s.param,
                    x: s.jet.x.clone(),
                    u: s.jet.u,
                    p: s.jet.p.clone(),
                },
                PdeKind::Evolution => {
                    let mut x = Vec::with_capacity(1 + s.jet.x.len());
                    x.push(s.param);
                    x.extend(&s.jet.x);
                    let mut p = Vec::with_capacity(1 + s.jet.p.len());
                    p.push(-s.e_value.unwrap_or(f64::NAN));
                    p.extend(&s.jet.p);
                    CurveRecord {
                        param: s.param,
                        x,
                        u: s.jet.u,
                        p,
                    }
                }
            })
            .collect();
        CurveSample::new(recs)
    }

    /// Per-step closure defects of [`CharacteristicStrip::curve`], computed
    /// without materialising it.
    pub fn closure_defects(&self) -> Result<Vec<f64>, FormsError> {
        if self.samples.len() < 2 {
            return Err(FormsError::TooFewSamples(self.samples.len()));
        }
        Ok(self
            .samples
            .windows(2)
            .map(|w| {
                let (a, b) = (&w[0], &w[1]);
                let (ds, du) = (b.param - a.param, b.jet.u - a.jet.u);
                let jet_pairs = a
                    .jet
                    .p
                    .iter()
                    .zip(&b.jet.p)
                    .zip(a.jet.x.iter().zip(&b.jet.x));
                match self.kind {
                    PdeKind::General => step_defect(ds, du, jet_pairs),
                    PdeKind::Evolution => {
                        let ea = -a.e_value.unwrap_or(f64::NAN);
                        let eb = -b.e_value.unwrap_or(f64::NAN);
                        let time = ((&ea, &eb), (&a.param, &b.param));
                        step_defect(ds, du, std::iter::once(time).chain(jet_pairs))
                    }
                }
            })
            .collect())
    }

    pub fn closure_residual(&self) -> Result<f64, FormsError> {
        Ok(self.closure_defects()?.into_iter().fold(0.0, f64::max))
    }
}

fn pack(j: &JetPoint) -> Vec<f64> {
    let mut y = j.x.clone();
    y.push(j.u);
    y.extend(&j.p);
    y
}

fn unpack(y: &[f64], n: usize) -> JetPoint {
    JetPoint::new(y[..n].to_vec(), y[n], y[n + 1..].to_vec())
}

/// Characteristic equations on the packed state `(x, u, p)` with reusable
/// scratch. The general alphabet is laid out exactly like the state.
struct Packed<'a> {
    prob: &'a PdeProblem,
    n: usize,
    vals: Vec<f64>,
    grad: Vec<f64>,
}

impl<'a> Packed<'a> {
    fn new(prob: &'a PdeProblem) -> Self {
        let n = prob.dim();
        Packed {
            prob,
            n,
            vals: vec![0.0; 2 * n + 1],
            grad: vec![0.0; 2 * n + 1],
        }
    }

    fn evolution_vals(&mut self, t: f64, y: &[f64]) {
        let n = self.n;
        self.vals[0] = t;
        self.vals[1..=n].copy_from_slice(&y[..n]);
        self.vals[n + 1..].copy_from_slice(&y[n + 1..]);
    }

    /// Writes `y'` into `out` and returns `F` or `E` at the same point.
    fn rhs(&mut self, t: f64, y: &[f64], out: &mut [f64]) -> Result<f64, CharError> {
        let n = self.n;
        let f = self.prob.compiled();
        let (x_part, rest) = out.split_at_mut(n);
        let (u_part, p_part) = rest.split_at_mut(1);
        let p = &y[n + 1..];
        match self.prob.kind() {
            PdeKind::General => {
                let g = &mut self.grad;
                let v = f.value_and_partials_span(y, 0, g)?;
                let (fx, rest) = g.split_at(n);
                let (fu, fp) = (rest[0], &rest[1..]);
                x_part.copy_from_slice(fp);
                u_part[0] = fp.iter().zip(p).map(|(a, b)| a * b).sum();
                for i in 0..n {
                    p_part[i] = -(fx[i] + p[i] * fu);
                }
                Ok(v)
            }
            PdeKind::Evolution => {
                self.evolution_vals(t, y);
                let g = &mut self.grad[..2 * n];
                let e = f.value_and_partials_span(&self.vals, 1, g)?;
                let (ex, ep) = g.split_at(n);
                x_part.copy_from_slice(ep);
                u_part[0] = ep.iter().zip(p).map(|(a, b)| a * b).sum::<f64>() - e;
                for i in 0..n {
                    p_part[i] = -ex[i];
                }
                Ok(e)
            }
        }
    }

    fn annotation(&self, v: f64) -> (Option<f64>, Option<f64>) {
        match self.prob.kind() {
            PdeKind::General => (Some(v.abs()), None),
            PdeKind::Evolution => (None, Some(v)),
        }
    }

    /// `(|F|, E)` as recorded on each sample.
    fn annotate(&mut self, t: f64, y: &[f64]) -> Result<(Option<f64>, Option<f64>), CharError> {
        let f = self.prob.compiled();
        match self.prob.kind() {
            PdeKind::General => Ok((Some(f.value(y)?.abs()), None)),
            PdeKind::Evolution => {
                self.evolution_vals(t, y);
                Ok((None, Some(f.value(&self.vals)?)))
            }
        }
    }
}

/// Integrates one strip and never fails after the initial checks: a failing
/// step truncates the strip and records why.
pub(crate) fn integrate_raw(
    prob: &PdeProblem,
    j0: &JetPoint,
    t0: f64,
    length: f64,
    dt: f64,
) -> Result<CharacteristicStrip, CharError> {
    prob.check_jet(j0)?;
    if !(dt > 0.0) || !(length > 0.0) || !dt.is_finite() || !length.is_finite() {
        return Err(CharError::BadStep { dt, length });
    }
    let n = prob.dim();
    let grid = Grid::new(t0, length, dt);

    let mut eq = Packed::new(prob);
    let mut y = pack(j0);
    let (f0, e0) = eq.annotate(t0, &y)?;
    if let Some(r) = f0 {
        if !(r <= INITIAL_JET_TOL) {
            return Err(CharError::InitialJetOffManifold { residual: r });
        }
    }
    let mut samples = Vec::with_capacity(grid.steps + 1);
    samples.push(StripSample {
        param: t0,
        jet: j0.clone(),
        f_residual: f0,
        e_value: e0,
    });

    let mut y1 = vec![0.0; y.len()];
    let mut rk4 = Rk4::new(y.len());
    let mut truncated = None;
    // the first stage of each step is evaluated together with the previous
    // sample's annotation whenever that succeeds
    let mut have_k1 = false;
    for k in 0..grid.steps {
        let (t, t1) = (grid.at(k), grid.at(k + 1));
        let rhs = |t: f64, y: &[f64], out: &mut [f64]| eq.rhs(t, y, out).map(drop);
        let step = if have_k1 {
            rk4.step_after_first(t, &y, grid.h, &mut y1, rhs)
        } else {
            rk4.step(t, &y, grid.h, &mut y1, rhs)
        }
        .and_then(|()| {
            let fe = match eq.rhs(t1, &y1, rk4.first_stage()) {
                Ok(v) => {
                    have_k1 = true;
                    eq.annotation(v)
                }
                Err(_) => {
                    have_k1 = false;
                    eq.annotate(t1, &y1)?
                }
            };
            if y1.iter().any(|v| !v.is_finite()) {
                return Err(CharError::StepFailure {
                    last_good: unpack(&y, n),
                    param: t1,
                    reason: "non-finite state".into(),
                });
            }
            Ok(fe)
        });
        match step {
            Ok((f, e)) => {
                if let Some(r) = f {
                    if !(r <= STRIP_TOL) {
                        truncated = Some(Truncation {
                            at_param: t1,
                            reason: format!("|F| = {r:e} exceeds {STRIP_TOL:e}"),
                        });
                        break;
                    }
                }
                std::mem::swap(&mut y, &mut y1);
                samples.push(StripSample {
                    param: t1,
                    jet: unpack(&y, n),
                    f_residual: f,
                    e_value: e,
                });
            }
            Err(err) => {
                let reason = match err {
                    CharError::StepFailure { reason, .. } => reason,
                    other => other.to_string(),
                };
                truncated = Some(Truncation {
                    at_param: t1,
                    reason,
                });
                break;
            }
        }
    }
    Ok(CharacteristicStrip {
        kind: prob.kind(),
        samples,
        step: grid.h,
        truncated,
    })
}

/// Fixed-step RK4 strip from `j0` over `[t0, t0 + length]`.
///
/// `t0` is the starting parameter: the time for evolution problems, the
/// Charpit parameter (conventionally 0) for general ones. A strip that
/// cannot take a single step is a [`CharError::StepFailure`]; later
/// failures truncate the strip and set [`CharacteristicStrip::truncated`].
pub fn integrate_strip(
    prob: &PdeProblem,
    j0: &JetPoint,
    t0: f64,
    length: f64,
    dt: f64,
) -> Result<CharacteristicStrip, CharError> {
    let strip = integrate_raw(prob, j0, t0, length, dt)?;
    if strip.samples.len() == 1 {
        if let Some(tr) = &strip.truncated {
            return Err(CharError::StepFailure {
                last_good: j0.clone(),
                param: t0,
                reason: tr.reason.clone(),
            });
        }
    }
    Ok(strip)
}
