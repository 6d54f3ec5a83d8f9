//! Executes a validated [`ProblemSpec`] and assembles the report and CSVs.

use std::path::Path;

use charlab_core::characteristics::{
    branches_at, detect_crossing, integrate_family, jump_scan, seed_from_initial_data, JetPoint,
    PdeKind, PdeProblem, SeedSet, StripFamily,
};
use charlab_core::diagnostics::{
    commutator_field, compare_on_off, differentiate_scalar_field, GridField, NonidentityReport,
};
use charlab_core::forms::{
    closure_defects, loop_integral_with, CurveRecord, CurveSample, LoopRule, PhaseLoop,
};
use charlab_core::hamiltonian::{
    canonical_check, equivalence_check, hamiltonian_flow, lagrange_flow, poincare_invariance,
    verify_legendre_identities, CanonicalMap, HamiltonianProblem, LagrangianProblem, PhasePoint,
    VelocityPoint,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::report::{Reading, RunReport};
use crate::spec::{Box_, GridSpec, GridValues, JetCurve, Kind, Problem, ProblemSpec, Seeds, Start};

/// A module error together with the scenario key or section that led to it.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{context}: {message}")]
pub struct RunError {
    pub context: String,
    pub message: String,
}

trait Context<T> {
    fn ctx(self, context: &str) -> Result<T, RunError>;
}

impl<T, E: std::fmt::Display> Context<T> for Result<T, E> {
    fn ctx(self, context: &str) -> Result<T, RunError> {
        self.map_err(|e| RunError {
            context: context.to_string(),
            message: e.to_string(),
        })
    }
}

/// Report plus named output files, in write order.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub report: RunReport,
    pub files: Vec<(String, String)>,
}

impl RunOutput {
    pub fn file(&self, name: &str) -> Option<&str> {
        self.files
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| c.as_str())
    }

    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, content) in &self.files {
            std::fs::write(dir.join(name), content)?;
        }
        Ok(())
    }
}

fn f(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(f).unwrap_or_default()
}

fn push_row(out: &mut String, cells: impl IntoIterator<Item = String>) {
    let row: Vec<String> = cells.into_iter().collect();
    out.push_str(&row.join(","));
    out.push('\n');
}

fn numbered(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}{i}"))
}

fn strided(len: usize, stride: usize) -> impl Iterator<Item = usize> {
    (0..len).filter(move |k| k % stride == 0 || *k + 1 == len)
}

pub fn run(spec: &ProblemSpec) -> Result<RunOutput, RunError> {
    let mut report = RunReport::default();
    report.info("case", Reading::Text(spec.name.clone()));
    report.info("kind", Reading::Text(spec.kind.name().into()));
    report.info("dim", Reading::Count(spec.dim));
    report.num("dt", spec.integration.dt);
    let mut files = Vec::new();
    match &spec.problem {
        Problem::Pde(prob) => run_pde(spec, prob, &mut report, &mut files)?,
        Problem::Hamiltonian(hp) => run_hamiltonian(spec, hp, &mut report, &mut files)?,
        Problem::Lagrangian {
            lagrangian,
            partner,
        } => run_lagrangian(spec, lagrangian, partner.as_ref(), &mut report, &mut files)?,
    }
    files.push(("report.txt".to_string(), report.render()));
    Ok(RunOutput { report, files })
}

fn curve_seeds(c: &JetCurve) -> Result<SeedSet, RunError> {
    let jets = (0..c.count)
        .map(|k| {
            let s = if c.count == 1 {
                c.lo
            } else {
                c.lo + (c.hi - c.lo) * k as f64 / (c.count - 1) as f64
            };
            let eval = |e: &charlab_core::expr::Compiled| e.value(&[s]);
            let x =
                c.x.iter()
                    .map(eval)
                    .collect::<Result<Vec<_>, _>>()
                    .ctx("[seeds] x")?;
            let u = eval(&c.u).ctx("[seeds] u")?;
            let p =
                c.p.iter()
                    .map(eval)
                    .collect::<Result<Vec<_>, _>>()
                    .ctx("[seeds] p")?;
            Ok(JetPoint::new(x, u, p))
        })
        .collect::<Result<Vec<_>, RunError>>()?;
    Ok(SeedSet::chain(jets))
}

/// Seeds and integrates the strip family of a PDE scenario.
pub fn pde_family(spec: &ProblemSpec) -> Result<StripFamily, RunError> {
    let Problem::Pde(prob) = &spec.problem else {
        return Err(RunError {
            context: "[problem]".into(),
            message: format!("kind {} has no strips", spec.kind.name()),
        });
    };
    let integ = &spec.integration;
    let seeds = match spec.seeds.as_ref().expect("validated") {
        Seeds::Curve(c) => curve_seeds(c)?,
        Seeds::Grid(g) => seed_from_initial_data(prob, spec.u0.as_ref().expect("validated"), g)
            .ctx("[problem] u0")?,
    };
    let (t0, t_end) = match spec.kind {
        Kind::GeneralPde => (0.0, integ.end),
        _ => (integ.t0, integ.end),
    };
    let fam = integrate_family(prob, &seeds, t0, t_end, integ.dt).ctx("[integration]")?;
    if let Some((i, e)) = fam.failures.first() {
        return Err(RunError {
            context: "[seeds]".into(),
            message: format!("seed {i} could not be integrated: {e}"),
        });
    }
    Ok(fam)
}

fn run_pde(
    spec: &ProblemSpec,
    prob: &PdeProblem,
    report: &mut RunReport,
    files: &mut Vec<(String, String)>,
) -> Result<(), RunError> {
    let fam = pde_family(spec)?;
    report.info("strips", Reading::Count(fam.len()));
    report.info("steps", Reading::Count(fam.common_len().saturating_sub(1)));
    let truncated = fam.strips.iter().filter(|s| s.truncated.is_some()).count();
    report.info("truncated_strips", Reading::Count(truncated));

    let defects = fam
        .strips
        .iter()
        .map(|s| s.closure_defects())
        .collect::<Result<Vec<_>, _>>()
        .ctx("[seeds]")?;
    if prob.kind() == PdeKind::General {
        let max_f = fam
            .strips
            .iter()
            .filter_map(|s| s.max_residual())
            .fold(0.0, f64::max);
        report.check("max_F", Some(max_f), spec.tolerances.f);
    }
    let closure = defects.iter().flatten().copied().fold(0.0, f64::max);
    report.check("closure_residual", Some(closure), spec.tolerances.closure);

    if prob.kind() == PdeKind::Evolution {
        evolution_diagnostics(spec, &fam, report)?;
    }
    if let Some(g) = &spec.grid {
        let field = sample_grid(g)?;
        let nonid = if prob.kind() == PdeKind::General {
            let curves = fam
                .strips
                .iter()
                .map(|s| s.curve())
                .collect::<Result<Vec<_>, _>>()
                .ctx("[seeds]")?;
            let cmp = compare_on_off(&curves, &field).ctx("[grid]")?;
            report.check("on_strip_closure_max", cmp.on_max, spec.tolerances.closure);
            cmp.grid
        } else {
            let field = if field.p().is_none() {
                differentiate_scalar_field(&field).ctx("[grid]")?
            } else {
                field
            };
            commutator_field(&field).ctx("[grid]")?
        };
        grid_report(spec, &nonid, report);
        files.push(("grid.csv".into(), grid_csv(&nonid)));
    }
    files.push(("strips.csv".into(), strips_csv(&fam, &defects, spec.stride)));
    Ok(())
}

fn evolution_diagnostics(
    spec: &ProblemSpec,
    fam: &StripFamily,
    report: &mut RunReport,
) -> Result<(), RunError> {
    let d = &spec.diagnostics;
    let tol = &spec.tolerances;
    let crossing = detect_crossing(fam);
    match &crossing {
        Some(c) => {
            report.num("crossing_t", c.t);
            let x: Vec<String> = c.x.iter().map(|v| format!("{v:e}")).collect();
            report.info("crossing_x", Reading::Text(x.join(" ")));
        }
        None => report.info("crossing_t", Reading::Missing),
    }
    if let Some(expected) = d.expect_crossing {
        report.check(
            "crossing_t_error",
            crossing.as_ref().map(|c| (c.t - expected).abs()),
            tol.crossing,
        );
    }
    for &t in &d.jump_t {
        let j = jump_scan(fam, t).ctx("[diagnostics] jump_t")?;
        report.num(format!("jump_gap(t={t})"), j.max_gap);
        let x: Vec<String> = j.location.iter().map(|v| format!("{v:e}")).collect();
        report.info(format!("jump_location(t={t})"), Reading::Text(x.join(" ")));
        report.num(format!("jump_gap_seed_order(t={t})"), j.seed_order_max_gap);
    }
    if let Some(x) = d.branch_x {
        let t = d.branch_t.unwrap_or(spec.integration.end);
        let ps = branches_at(fam, t, x).ctx("[diagnostics] branch_x")?;
        report.info("branch_count", Reading::Count(ps.len()));
        let spread = match (
            ps.iter().copied().reduce(f64::min),
            ps.iter().copied().reduce(f64::max),
        ) {
            (Some(lo), Some(hi)) => hi - lo,
            _ => 0.0,
        };
        report.num("branch_spread", spread);
        if let Some(expected) = d.expect_branch_spread {
            report.check(
                "branch_spread_error",
                Some((spread - expected).abs()),
                tol.branch,
            );
        }
    }
    Ok(())
}

fn sample_grid(g: &GridSpec) -> Result<GridField, RunError> {
    let field = GridField::new(g.lo.clone(), g.hi.clone(), g.counts.clone()).ctx("[grid]")?;
    match &g.values {
        GridValues::U(u) => field.sample_u(u).ctx("[grid] u"),
        GridValues::P(p) => field.sample_p(p).ctx("[grid] p"),
    }
}

fn grid_report(spec: &ProblemSpec, r: &NonidentityReport, report: &mut RunReport) {
    report.info("grid_nodes", Reading::Count(r.norms.len()));
    report.num("grid_K_max", r.max);
    report.num("grid_K_mean", r.mean);
    report.num("grid_K_min", r.min);
    report.info("grid_kinks", Reading::Count(r.kinks.len()));
    if let Some(expected) = spec.diagnostics.expect_k_norm {
        let dev = r
            .norms
            .iter()
            .map(|k| (k - expected).abs())
            .fold(0.0, f64::max);
        report.check("grid_K_error", Some(dev), spec.tolerances.k_norm);
    }
}

fn grid_csv(r: &NonidentityReport) -> String {
    let g = &r.interior;
    let n = g.dim();
    let mut out = String::new();
    let idx_names = (0..n).map(|a| match (n, a) {
        (..=4, 0) => "i".to_string(),
        (..=4, 1) => "j".to_string(),
        (..=4, 2) => "k".to_string(),
        (..=4, 3) => "l".to_string(),
        _ => format!("i{}", a + 1),
    });
    push_row(
        &mut out,
        idx_names
            .chain(numbered("x", n))
            .chain(["u".to_string()])
            .chain(numbered("p", n))
            .chain(["K_norm".to_string()]),
    );
    for (flat, norm) in r.norms.iter().enumerate() {
        let idx = g.index(flat).into_iter().map(|i| i.to_string());
        let x = g.node(flat).into_iter().map(f);
        let u = g.u().map(|u| f(u[flat])).unwrap_or_default();
        let p: Vec<String> = match g.p() {
            Some(p) => p[flat].iter().copied().map(f).collect(),
            None => vec![String::new(); n],
        };
        push_row(&mut out, idx.chain(x).chain([u]).chain(p).chain([f(*norm)]));
    }
    out
}

fn strips_csv(fam: &StripFamily, defects: &[Vec<f64>], stride: usize) -> String {
    let n = fam.dim();
    let mut out = String::new();
    push_row(
        &mut out,
        ["strip_id".to_string(), "param".to_string()]
            .into_iter()
            .chain(numbered("x", n))
            .chain(["u".to_string()])
            .chain(numbered("p", n))
            .chain(["F_residual".to_string(), "closure_defect".to_string()]),
    );
    for (id, (s, d)) in fam.strips.iter().zip(defects).enumerate() {
        for k in strided(s.samples.len(), stride) {
            let smp = &s.samples[k];
            let defect = if k == 0 { None } else { d.get(k - 1).copied() };
            push_row(
                &mut out,
                [id.to_string(), f(smp.param)]
                    .into_iter()
                    .chain(smp.jet.x.iter().copied().map(f))
                    .chain([f(smp.jet.u)])
                    .chain(smp.jet.p.iter().copied().map(f))
                    .chain([opt(smp.f_residual), opt(defect)]),
            );
        }
    }
    out
}

/// One row of a time-parameterised trajectory.
struct Row<'a> {
    t: f64,
    q: &'a [f64],
    action: f64,
    p: &'a [f64],
    energy: f64,
}

/// Defects of `ds = p·dq − E dt` along the lifted curve `(t, q)`.
fn trajectory_defects(rows: &[Row<'_>]) -> Option<Vec<f64>> {
    let recs = rows
        .iter()
        .map(|r| {
            let mut x = Vec::with_capacity(1 + r.q.len());
            x.push(r.t);
            x.extend_from_slice(r.q);
            let mut p = Vec::with_capacity(1 + r.p.len());
            p.push(-r.energy);
            p.extend_from_slice(r.p);
            CurveRecord {
                param: r.t,
                x,
                u: r.action,
                p,
            }
        })
        .collect();
    CurveSample::new(recs)
        .ok()
        .and_then(|c| closure_defects(&c).ok())
}

fn trajectory_csv(rows: &[Row<'_>], defects: Option<&[f64]>, stride: usize) -> String {
    let n = rows.first().map_or(0, |r| r.q.len());
    let e0 = rows.first().map_or(0.0, |r| r.energy);
    let mut out = String::new();
    push_row(
        &mut out,
        ["strip_id".to_string(), "param".to_string()]
            .into_iter()
            .chain(numbered("q", n))
            .chain(["s".to_string()])
            .chain(numbered("p", n))
            .chain(["F_residual".to_string(), "closure_defect".to_string()]),
    );
    for k in strided(rows.len(), stride) {
        let r = &rows[k];
        let defect = match (k, defects) {
            (1.., Some(d)) => d.get(k - 1).copied(),
            _ => None,
        };
        push_row(
            &mut out,
            ["0".to_string(), f(r.t)]
                .into_iter()
                .chain(r.q.iter().copied().map(f))
                .chain([f(r.action)])
                .chain(r.p.iter().copied().map(f))
                .chain([f(r.energy - e0), opt(defect)]),
        );
    }
    out
}

/// Largest deviation from the first energy, and the ratio of the largest
/// deviation in the trailing half to that in the leading half.
fn energy_summary(energies: &[f64]) -> (f64, Option<f64>) {
    let e0 = energies[0];
    let dev: Vec<f64> = energies.iter().map(|e| (e - e0).abs()).collect();
    let drift = dev.iter().copied().fold(0.0, f64::max);
    let half = dev.len() / 2;
    let lead = dev[..half].iter().copied().fold(0.0, f64::max);
    let trail = dev[half..].iter().copied().fold(0.0, f64::max);
    (drift, (lead > 0.0).then(|| trail / lead))
}

fn run_hamiltonian(
    spec: &ProblemSpec,
    hp: &HamiltonianProblem,
    report: &mut RunReport,
    files: &mut Vec<(String, String)>,
) -> Result<(), RunError> {
    let integ = &spec.integration;
    let tol = &spec.tolerances;
    let st = spec.start.as_ref().expect("validated");
    let start = PhasePoint::new(st.t, st.q.clone(), st.v.clone());
    report.info("method", Reading::Text(integ.method.name().into()));
    let tr = hamiltonian_flow(hp, &start, integ.end, integ.dt, integ.method).ctx("[problem] H")?;
    let energies = tr
        .samples
        .iter()
        .map(|s| hp.value(&s.point))
        .collect::<Result<Vec<_>, _>>()
        .ctx("[problem] H")?;
    report.info("steps", Reading::Count(tr.samples.len() - 1));
    report.num("action_final", tr.last().action);
    let (drift, growth) = energy_summary(&energies);
    if hp.is_autonomous() {
        report.check("energy_drift", Some(drift), tol.energy);
        report.info(
            "energy_growth_ratio",
            growth.map_or(Reading::Missing, Reading::Num),
        );
    } else {
        report.num("energy_change", drift);
    }
    let rows: Vec<Row<'_>> = tr
        .samples
        .iter()
        .zip(&energies)
        .map(|(s, &e)| Row {
            t: s.point.t,
            q: &s.point.q,
            action: s.action,
            p: &s.point.p,
            energy: e,
        })
        .collect();
    let defects = trajectory_defects(&rows);
    if let Some(d) = &defects {
        report.num(
            "action_closure_residual",
            d.iter().copied().fold(0.0, f64::max),
        );
    }
    files.push((
        "trajectory.csv".into(),
        trajectory_csv(&rows, defects.as_deref(), spec.stride),
    ));

    if let Some(l) = &spec.loop_ {
        let lp = PhaseLoop::circle(l.t, &l.center_q, &l.center_p, l.radius, l.axis, l.points);
        let trap = loop_integral_with(&lp, None, LoopRule::Trapezoid).ctx("[loop]")?;
        let pr = poincare_invariance(hp, &lp, l.t_end, integ.dt, integ.method).ctx("[loop]")?;
        report.num("loop_integral_initial", pr.initial);
        report.num("loop_integral_initial_trapezoid", trap);
        report.num("loop_integral_transported", pr.transported);
        report.check("loop_drift", Some(pr.drift), tol.loop_);
        files.push(("loop.csv".into(), loop_csv(&lp, &pr.end_loop)));
    }

    if let Some(c) = &spec.canonical {
        let map = CanonicalMap::new(&c.q, &c.p, c.w.as_ref()).ctx("[canonical]")?;
        let n = spec.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(c.samples.seed);
        let samples: Vec<PhasePoint> = (0..c.samples.count)
            .map(|_| {
                let q = uniform(&mut rng, &c.samples, n);
                let p = uniform(&mut rng, &c.samples, n);
                PhasePoint::new(0.0, q, p)
            })
            .collect();
        let loops: Vec<PhaseLoop> = (0..n)
            .map(|a| {
                PhaseLoop::circle(
                    0.0,
                    &vec![0.0; n],
                    &vec![0.0; n],
                    c.loop_radius,
                    a,
                    c.loop_points,
                )
            })
            .collect();
        let cr = canonical_check(&map, &samples, &loops).ctx("[canonical]")?;
        report.check("canonical_symplectic", Some(cr.symplectic), tol.symplectic);
        report.check("canonical_form", Some(cr.form), tol.form);
        if let Some(g) = cr.generating {
            report.check("canonical_generating", Some(g), tol.generating);
        }
    }
    Ok(())
}

fn uniform(rng: &mut ChaCha8Rng, b: &Box_, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(b.lo..b.hi)).collect()
}

fn loop_csv(initial: &PhaseLoop, transported: &PhaseLoop) -> String {
    let n = initial.points.first().map_or(0, |p| p.q.len());
    let mut out = String::new();
    push_row(
        &mut out,
        ["stage".to_string(), "index".to_string(), "t".to_string()]
            .into_iter()
            .chain(numbered("q", n))
            .chain(numbered("p", n)),
    );
    for (stage, lp) in [("initial", initial), ("transported", transported)] {
        for (k, pt) in lp.points.iter().enumerate() {
            push_row(
                &mut out,
                [stage.to_string(), k.to_string(), f(pt.t)]
                    .into_iter()
                    .chain(pt.q.iter().copied().map(f))
                    .chain(pt.p.iter().copied().map(f)),
            );
        }
    }
    out
}

fn run_lagrangian(
    spec: &ProblemSpec,
    lp: &LagrangianProblem,
    partner: Option<&HamiltonianProblem>,
    report: &mut RunReport,
    files: &mut Vec<(String, String)>,
) -> Result<(), RunError> {
    let integ = &spec.integration;
    let tol = &spec.tolerances;
    let Start { t, q, v } = spec.start.clone().expect("validated");
    let start = VelocityPoint::new(t, q, v);
    let tr = lagrange_flow(lp, &start, integ.end, integ.dt).ctx("[problem] L")?;
    let energies = tr
        .samples
        .iter()
        .map(|s| {
            let l = lp.value(&s.point)?;
            Ok(s.p.iter().zip(&s.point.qd).map(|(a, b)| a * b).sum::<f64>() - l)
        })
        .collect::<Result<Vec<_>, charlab_core::hamiltonian::HamiltonianError>>()
        .ctx("[problem] L")?;
    report.info("steps", Reading::Count(tr.samples.len() - 1));
    report.num("action_final", tr.samples.last().map_or(0.0, |s| s.action));
    let (drift, _) = energy_summary(&energies);
    report.num("energy_change", drift);
    let rows: Vec<Row<'_>> = tr
        .samples
        .iter()
        .zip(&energies)
        .map(|(s, &e)| Row {
            t: s.point.t,
            q: &s.point.q,
            action: s.action,
            p: &s.p,
            energy: e,
        })
        .collect();
    let defects = trajectory_defects(&rows);
    if let Some(d) = &defects {
        report.num(
            "action_closure_residual",
            d.iter().copied().fold(0.0, f64::max),
        );
    }
    files.push((
        "trajectory.csv".into(),
        trajectory_csv(&rows, defects.as_deref(), spec.stride),
    ));

    if let Some(hp) = partner {
        let dev = equivalence_check(lp, hp, &start, integ.end, integ.dt).ctx("[problem] H")?;
        report.check("equivalence_deviation", Some(dev), tol.equivalence);
        let b = spec.samples.clone().unwrap_or(Box_ {
            count: 100,
            seed: 0,
            lo: -1.0,
            hi: 1.0,
        });
        let n = spec.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(b.seed);
        let pts: Vec<VelocityPoint> = (0..b.count)
            .map(|_| {
                let t = rng.gen_range(b.lo..b.hi);
                let q = uniform(&mut rng, &b, n);
                let qd = uniform(&mut rng, &b, n);
                VelocityPoint::new(t, q, qd)
            })
            .collect();
        let r = verify_legendre_identities(lp, hp, &pts).ctx("[samples]")?;
        report.check("legendre_velocity", Some(r.velocity), tol.legendre);
        report.check("legendre_position", Some(r.position), tol.legendre);
        report.check("legendre_time", Some(r.time), tol.legendre);
        report.check("legendre_value", Some(r.value), tol.legendre);
    }
    Ok(())
}
