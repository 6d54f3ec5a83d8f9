//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line
//! with its measured values; the process exits non-zero if any fails.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use charlab::cases::{self, CASES};
use charlab::report::RunReport;
use charlab::run::{pde_family, run};
use charlab::spec::load_spec_str;
use charlab_core::characteristics::{
    branches_at, detect_crossing, integrate_family, integrate_strip, seed_from_initial_data,
    JetPoint, PdeProblem, SeedGrid,
};
use charlab_core::diagnostics::{commutator_field, GridField};
use charlab_core::expr::{Alphabet, Compiled, Expression};
use charlab_core::forms::{loop_integral_with, LoopRule, PhaseLoop};
use charlab_core::hamiltonian::{
    canonical_check, equivalence_check, hamiltonian_flow, poincare_invariance,
    verify_legendre_identities, CanonicalMap, HamiltonianProblem, LagrangianProblem, Method,
    PhasePoint, VelocityPoint,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

/// Collects named checks; the first failing one is reported.
#[derive(Default)]
struct Checks {
    notes: Vec<String>,
    failed: Vec<String>,
}

impl Checks {
    fn le(&mut self, name: &str, value: f64, bound: f64) {
        self.note(name, value, "≤", bound, value <= bound);
    }

    fn ge(&mut self, name: &str, value: f64, bound: f64) {
        self.note(name, value, "≥", bound, value >= bound);
    }

    fn note(&mut self, name: &str, value: f64, rel: &str, bound: f64, ok: bool) {
        let line = format!("{name} = {value:.3e} {rel} {bound:.1e}");
        if !ok {
            self.failed.push(line.clone());
        }
        self.notes.push(line);
    }

    fn truth(&mut self, name: &str, ok: bool) {
        self.notes.push(format!("{name}: {ok}"));
        if !ok {
            self.failed.push(name.to_string());
        }
    }

    fn finish(self) -> Outcome {
        if self.failed.is_empty() {
            Ok(self.notes.join("; "))
        } else {
            Err(format!(
                "{} | {}",
                self.failed.join("; "),
                self.notes.join("; ")
            ))
        }
    }
}

fn run_case(name: &str) -> RunReport {
    let c = cases::find(name).expect("bundled case");
    let spec = load_spec_str(c.source, c.name).expect("bundled case validates");
    run(&spec).expect("bundled case runs").report
}

fn report_value(r: &RunReport, key: &str) -> f64 {
    r.value(key).unwrap_or(f64::NAN)
}

// 1. The PDE is a first integral of the Charpit flow.
fn first_integral() -> Outcome {
    let mut c = Checks::default();
    let r = run_case("eikonal");
    c.le(
        "eikonal rays max|F| (dt 1e-3, length 5)",
        report_value(&r, "max_F"),
        1e-8,
    );

    // A graded index bends the rays, so the RK4 error is visible.
    let graded = PdeProblem::parse_general(2, "p1^2 + p2^2 - (1 + 0.5*x1^2)").unwrap();
    let mut fine_max = 0.0f64;
    let mut worst_ratio = f64::INFINITY;
    for a in [0.3f64, 1.2, 2.5] {
        let j0 = JetPoint::new(vec![0.0, 0.0], 0.0, vec![a.cos(), a.sin()]);
        let err = |dt: f64| {
            integrate_strip(&graded, &j0, 0.0, 5.0, dt)
                .ok()
                .and_then(|s| s.max_residual())
                .unwrap_or(f64::NAN)
        };
        fine_max = fine_max.max(err(1e-3));
        worst_ratio = worst_ratio.min(err(4e-2) / err(2e-2));
    }
    c.le("graded-index max|F| (dt 1e-3)", fine_max, 1e-8);
    c.ge("error ratio dt 4e-2 -> 2e-2", worst_ratio, 10.0);
    c.finish()
}

// 2. Closure on strips; non-closure of a rotational field.
fn closure() -> Outcome {
    let mut c = Checks::default();
    let mut worst = 0.0f64;
    let mut names = 0;
    let mut all_stepped = true;
    for case in CASES {
        let spec = load_spec_str(case.source, case.name).unwrap();
        if !matches!(spec.problem, charlab::spec::Problem::Pde(_)) {
            continue;
        }
        names += 1;
        let fam = pde_family(&spec).unwrap();
        all_stepped &= !fam.strips.is_empty();
        for s in &fam.strips {
            all_stepped &= s.samples.len() >= 2;
            worst = worst.max(s.closure_residual().unwrap_or(f64::INFINITY));
        }
    }
    c.truth("six strip corpora examined", names == 6);
    c.truth(
        "every corpus has strips with at least one step",
        all_stepped,
    );
    c.le("worst strip closure defect", worst, 1e-8);

    let g = GridField::new(vec![-1.0, -1.0], vec![1.0, 1.0], vec![21, 21])
        .unwrap()
        .sample_p(&[
            Expression::parse("x2").unwrap(),
            Expression::parse("-x1").unwrap(),
        ])
        .unwrap();
    let nonid = commutator_field(&g).unwrap();
    let dev = nonid
        .norms
        .iter()
        .map(|k| (k - 2.0).abs())
        .fold(0.0, f64::max);
    c.le("|K| deviation from 2 for p = (y, -x)", dev, 1e-6);
    let r = run_case("nongradient");
    c.le(
        "bundled nongradient grid |K| deviation",
        report_value(&r, "grid_K_error"),
        1e-6,
    );
    c.finish()
}

// 3. A Hamiltonian read as an evolution equation.
fn hamiltonian_as_characteristics() -> Outcome {
    let mut c = Checks::default();
    let prob = PdeProblem::parse_evolution(1, "(p1^2 + x1^2)/2").unwrap();
    let hp = HamiltonianProblem::parse(1, "(p^2 + q^2)/2").unwrap();
    let dt = 1e-3;
    let strip = integrate_strip(
        &prob,
        &JetPoint::new(vec![1.0], 0.0, vec![0.0]),
        0.0,
        10.0,
        dt,
    )
    .unwrap();
    let traj = hamiltonian_flow(
        &hp,
        &PhasePoint::new(0.0, vec![1.0], vec![0.0]),
        10.0,
        dt,
        Method::Rk4,
    )
    .unwrap();
    c.truth("same grid", strip.samples.len() == traj.samples.len());
    let sup = strip
        .samples
        .iter()
        .zip(&traj.samples)
        .map(|(s, h)| {
            (s.jet.x[0] - h.point.q[0])
                .abs()
                .max((s.jet.p[0] - h.point.p[0]).abs())
        })
        .fold(0.0, f64::max);
    c.le("sup |(x, p) - (q, p)| over T = 10", sup, 1e-10);
    c.finish()
}

// 4. Lagrangian and Hamiltonian descriptions agree.
fn lagrange_hamilton() -> Outcome {
    let mut c = Checks::default();
    for name in ["oscillator_pair", "free_particle_pair"] {
        let r = run_case(name);
        c.le(
            &format!("{name} equivalence (T = 10)"),
            report_value(&r, "equivalence_deviation"),
            1e-6,
        );
    }
    let pairs = [
        (1, "qd^2/2 - q^2/2", "p^2/2 + q^2/2"),
        (2, "(qd1^2 + qd2^2)/2", "(p1^2 + p2^2)/2"),
        (1, "qd^2/2 - q^4/4 + t*q", "p^2/2 + q^4/4 - t*q"),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for (n, l, h) in pairs {
        let lp = LagrangianProblem::parse(n, l).unwrap();
        let hp = HamiltonianProblem::parse(n, h).unwrap();
        let pts: Vec<VelocityPoint> = (0..100)
            .map(|_| {
                let mut draw = || {
                    (0..n)
                        .map(|_| rng.gen_range(-2.0..2.0))
                        .collect::<Vec<f64>>()
                };
                let (q, qd) = (draw(), draw());
                VelocityPoint::new(rng.gen_range(0.0..3.0), q, qd)
            })
            .collect();
        let r = verify_legendre_identities(&lp, &hp, &pts).unwrap();
        worst = worst.max(r.max_identity()).max(r.value);
    }
    c.le(
        "Legendre identity residual, 100 samples per pair",
        worst,
        1e-10,
    );

    let lp = LagrangianProblem::parse(1, "qd^2/2 - q^2/2").unwrap();
    let wrong = HamiltonianProblem::parse(1, "p^2/2").unwrap();
    let dev = equivalence_check(
        &lp,
        &wrong,
        &VelocityPoint::new(0.0, vec![1.0], vec![0.0]),
        1.0,
        1e-3,
    )
    .unwrap();
    c.ge("mismatched pair deviation by T = 1", dev, 0.1);
    c.finish()
}

// 5. The loop integral of p dq - H dt is carried along by the flow.
fn poincare() -> Outcome {
    let mut c = Checks::default();
    for (name, h) in [("oscillator", "(p^2 + q^2)/2"), ("shear", "p^2/2")] {
        let hp = HamiltonianProblem::parse(1, h).unwrap();
        let lp = PhaseLoop::circle(0.0, &[0.0], &[0.0], 1.0, 0, 256);
        let r = poincare_invariance(&hp, &lp, 1.0, 1e-3, Method::Rk4).unwrap();
        c.le(&format!("{name} |ΔI| (N 256, T 1)"), r.drift, 1e-6);
        c.le(&format!("{name} |I(0) + π|"), (r.initial + PI).abs(), 1e-4);
    }
    let err = |n: usize| {
        let lp = PhaseLoop::circle(0.0, &[0.0], &[0.0], 1.0, 0, n);
        (loop_integral_with(&lp, None, LoopRule::Trapezoid).unwrap() + PI).abs()
    };
    let ratio = err(128) / err(256);
    c.ge("trapezoid error ratio N 128 -> 256", ratio, 3.9);
    c.le("trapezoid error ratio N 128 -> 256", ratio, 4.1);
    c.finish()
}

// 6. Canonical maps keep the symplectic form; a dilation does not.
fn canonical() -> Outcome {
    let mut c = Checks::default();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let samples: Vec<PhasePoint> = (0..100)
        .map(|_| {
            PhasePoint::new(
                0.0,
                vec![rng.gen_range(-2.0..2.0)],
                vec![rng.gen_range(-2.0..2.0)],
            )
        })
        .collect();
    let loops = [
        PhaseLoop::circle(0.0, &[0.0], &[0.0], 1.0, 0, 256),
        PhaseLoop::circle(0.0, &[0.5], &[-0.3], 0.7, 0, 256),
    ];
    let maps: [(&str, [&str; 2]); 4] = [
        ("identity", ["q", "p"]),
        ("scaling", ["3*q", "p/3"]),
        (
            "rotation",
            ["q*cos(0.7) + p*sin(0.7)", "p*cos(0.7) - q*sin(0.7)"],
        ),
        ("stretch", ["2*q", "2*p"]),
    ];
    for (name, [q, p]) in maps {
        let map = CanonicalMap::parse(&[q], &[p], None).unwrap();
        let r = canonical_check(&map, &samples, &loops).unwrap();
        if name == "stretch" {
            c.ge("stretch symplectic residual", r.symplectic, 0.5);
            c.ge("stretch form residual", r.form, 0.5);
        } else {
            c.le(&format!("{name} symplectic residual"), r.symplectic, 1e-10);
            c.le(&format!("{name} form residual"), r.form, 1e-4);
        }
    }
    c.finish()
}

/// Nonzero root of `x = 2 tanh x` by bisection.
fn bisection_root() -> f64 {
    let g = |x: f64| x - 2.0 * x.tanh();
    let (mut lo, mut hi) = (1.0, 3.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(lo) * g(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

// 7. Strips cross at t* and the solution branches afterwards.
fn crossing() -> Outcome {
    let mut c = Checks::default();
    let prob = PdeProblem::parse_evolution(1, "p1^2/2").unwrap();
    let mut tanh_family = None;
    for (label, u0, lo, hi, count) in [
        ("-x^2/2", "-x1^2/2", -2.0, 2.0, 41),
        ("-log cosh x", "-log(cosh(x1))", -4.0, 4.0, 201),
    ] {
        let seeds = seed_from_initial_data(
            &prob,
            &Expression::parse(u0).unwrap(),
            &SeedGrid::line(lo, hi, count),
        )
        .unwrap();
        let fam = integrate_family(&prob, &seeds, 0.0, 2.0, 1e-3).unwrap();
        let t = detect_crossing(&fam).map_or(f64::NAN, |x| x.t);
        c.le(&format!("|t* - 1| for u0 = {label}"), (t - 1.0).abs(), 1e-2);
        tanh_family = Some(fam);
    }
    let fam = tanh_family.unwrap();
    let ps = branches_at(&fam, 2.0, 0.0).unwrap();
    c.truth("three branches at (t 2, x 0)", ps.len() == 3);
    let spread =
        ps.iter().copied().fold(f64::MIN, f64::max) - ps.iter().copied().fold(f64::MAX, f64::min);
    let x0 = bisection_root();
    c.le(
        "|branch Δp - 2 tanh(x0*)|",
        (spread - 2.0 * x0.tanh()).abs(),
        1e-2,
    );
    c.finish()
}

const AD_CORPUS: &[&str] = &[
    "p1^2 + p2^2 - 1",
    "x1*p1 + x2*p2 - u",
    "sin(x1)*cos(x2) + exp(-u)",
    "log(1 + x1^2) - sqrt(p1 + p2)",
    "tanh(p1)*sinh(x2)/cosh(u)",
    "tan(x1/3) + x2^3 - 2*x1*x2^2",
    "(x1 + p1)^(x2/2)",
    "u^-2 + 1/(p1*p2)",
    "exp(x1*p2)*tanh(u - x2)",
    "sin(x1/3)*cos(p2/3) + cosh(u)*x2",
];

// 8. Forward-mode derivatives against central differences.
fn ad_correctness() -> Outcome {
    let mut c = Checks::default();
    let alpha = Alphabet::general_pde(2);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut g_worst, mut h_worst) = (0.0f64, 0.0f64);
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(1.0);
    for _ in 0..100 {
        let src = AD_CORPUS[rng.gen_range(0..AD_CORPUS.len())];
        let comp = Compiled::new(&Expression::parse(src).unwrap(), &alpha).unwrap();
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(0.2..2.0)).collect();
        let all: Vec<usize> = (0..5).collect();
        let grad = comp.gradient(&x).unwrap();
        let hess = comp.hessian(&x, &all).unwrap();
        let shifted = |i: usize, h: f64| {
            let mut y = x.clone();
            y[i] += h;
            y
        };
        for i in 0..5 {
            let h = 1e-6;
            let fd = (comp.value(&shifted(i, h)).unwrap() - comp.value(&shifted(i, -h)).unwrap())
                / (2.0 * h);
            g_worst = g_worst.max(rel(grad[i], fd));
            let h = 1e-4;
            let gp = comp.gradient(&shifted(i, h)).unwrap();
            let gm = comp.gradient(&shifted(i, -h)).unwrap();
            for j in 0..5 {
                h_worst = h_worst.max(rel(hess[j][i], (gp[j] - gm[j]) / (2.0 * h)));
            }
        }
    }
    c.le("gradient relative error", g_worst, 1e-6);
    c.le("Hessian relative error", h_worst, 1e-6);
    c.finish()
}

// 9. Verlet keeps the energy error bounded; RK4 drifts.
fn symplectic_contract() -> Outcome {
    let mut c = Checks::default();
    let hp = HamiltonianProblem::parse(1, "(p^2 + q^2)/2")
        .unwrap()
        .separable(true);
    let start = PhasePoint::new(0.0, vec![1.0], vec![0.0]);
    let deviations = |m: Method| {
        let tr = hamiltonian_flow(&hp, &start, 1000.0, 1e-2, m).unwrap();
        tr.samples
            .iter()
            .map(|s| (hp.value(&s.point).unwrap() - 0.5).abs())
            .collect::<Vec<f64>>()
    };
    let v = deviations(Method::Verlet);
    let half = v.len() / 2;
    let lead = v[..half].iter().copied().fold(0.0, f64::max);
    let trail = v[half..].iter().copied().fold(0.0, f64::max);
    c.le("verlet max energy error", lead.max(trail), 1e-3);
    c.le("verlet trailing/leading half max", trail / lead, 1.5);

    let r = deviations(Method::Rk4);
    // checkpoints every 50 time units
    let checkpoints: Vec<f64> = (1..=20).map(|k| r[k * 5000]).collect();
    let monotone = checkpoints.windows(2).all(|w| w[1] > w[0]);
    c.truth(
        "rk4 energy error strictly increasing at checkpoints",
        monotone,
    );
    c.notes
        .push(format!("rk4 final energy error = {:.3e}", checkpoints[19]));
    c.finish()
}

fn run_binary(case: &str, threads: &str, dir: &Path) -> Result<i32, String> {
    let status = Command::new(env!("CARGO_BIN_EXE_charlab"))
        .args(["run", case, "--quiet", "--out"])
        .arg(dir)
        .env("CHARLAB_THREADS", threads)
        .stderr(std::process::Stdio::null())
        .status()
        .map_err(|e| e.to_string())?;
    status
        .code()
        .ok_or_else(|| format!("{case}: terminated by signal"))
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

// 10. Byte-identical output across runs and thread counts.
fn determinism() -> Outcome {
    let mut c = Checks::default();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut compared = 0;
    for case in CASES {
        let mut runs = Vec::new();
        for (k, threads) in ["1", "1", "4", "4"].iter().enumerate() {
            let dir = tmp.path().join(format!("{}-{k}", case.name));
            let code = run_binary(case.name, threads, &dir)?;
            let expected = if case.expect_ok { 0 } else { 1 };
            if code != expected {
                c.truth(
                    &format!("{} exit code {code} (want {expected})", case.name),
                    false,
                );
            }
            runs.push(read_dir_sorted(&dir));
        }
        let same = runs.iter().all(|r| *r == runs[0]) && !runs[0].is_empty();
        c.truth(&format!("{} identical", case.name), same);
        compared += runs[0].len();
    }
    c.notes = vec![format!(
        "{} cases, {compared} files each compared over 4 runs",
        CASES.len()
    )];
    c.finish()
}

type Criterion = (&'static str, fn() -> Outcome, Duration);

fn main() {
    let criteria: [Criterion; 10] = [
        (
            "first integral along Charpit strips",
            first_integral,
            Duration::from_secs(1),
        ),
        (
            "closure on strips, nonclosure off them",
            closure,
            Duration::from_secs(1),
        ),
        (
            "Hamiltonian flow as characteristics",
            hamiltonian_as_characteristics,
            Duration::from_secs(1),
        ),
        (
            "Lagrange-Hamilton equivalence",
            lagrange_hamilton,
            Duration::from_secs(2),
        ),
        ("loop integral invariance", poincare, Duration::from_secs(5)),
        (
            "canonical transformations",
            canonical,
            Duration::from_secs(1),
        ),
        (
            "crossing time and branches",
            crossing,
            Duration::from_secs(5),
        ),
        (
            "forward-mode derivatives",
            ad_correctness,
            Duration::from_secs(1),
        ),
        (
            "symplectic integrator contract",
            symplectic_contract,
            Duration::from_secs(10),
        ),
        (
            "deterministic CLI output",
            determinism,
            Duration::from_secs(20),
        ),
    ];
    let mut failures = 0;
    for (k, (name, f, budget)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(_) | Err(_) if took > budget => Err(format!(
                "took {:.2}s, budget {:.0}s | {}",
                took.as_secs_f64(),
                budget.as_secs_f64(),
                outcome.unwrap_or_else(|e| e)
            )),
            o => o,
        };
        match outcome {
            Ok(detail) => println!(
                "PASS [{:>2}] {name} ({:.2}s): {detail}",
                k + 1,
                took.as_secs_f64()
            ),
            Err(detail) => {
                failures += 1;
                println!(
                    "FAIL [{:>2}] {name} ({:.2}s): {detail}",
                    k + 1,
                    took.as_secs_f64()
                );
            }
        }
    }
    if failures > 0 {
        println!("{failures} of 10 criteria failed");
        std::process::exit(1);
    }
    println!("all 10 criteria passed");
}
