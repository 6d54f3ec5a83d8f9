//! Validation of a parsed scenario into a [`ProblemSpec`].

use std::path::{Path, PathBuf};

use charlab_core::characteristics::{PdeProblem, SeedGrid};
use charlab_core::expr::{Alphabet, Compiled, ExprError, Expression};
use charlab_core::hamiltonian::{HamiltonianProblem, LagrangianProblem, Method};

use crate::scenario::{self, Entry, ParseError, Scenario, Section, Value};

#[derive(Debug, thiserror::Error)]
pub enum SpecError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("{}{message}", line_prefix(*.line))]
    Validation {
        line: Option<usize>,
        message: String,
    },
    #[error("line {line}: `{key}`: {source}")]
    Expression {
        key: String,
        line: usize,
        source: ExprError,
    },
}

fn line_prefix(line: Option<usize>) -> String {
    line.map_or(String::new(), |l| format!("line {l}: "))
}

fn invalid(line: Option<usize>, message: impl Into<String>) -> SpecError {
    SpecError::Validation {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    GeneralPde,
    EvolutionHj,
    Hamiltonian,
    Lagrangian,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::GeneralPde => "general_pde",
            Kind::EvolutionHj => "evolution_hj",
            Kind::Hamiltonian => "hamiltonian",
            Kind::Lagrangian => "lagrangian",
        }
    }

    fn from_name(s: &str) -> Option<Kind> {
        [
            Kind::GeneralPde,
            Kind::EvolutionHj,
            Kind::Hamiltonian,
            Kind::Lagrangian,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone)]
pub struct Integration {
    pub dt: f64,
    /// `t_end` for timed kinds, `length` for general PDEs.
    pub end: f64,
    pub t0: f64,
    pub method: Method,
}

/// Jets `(x(s), u(s), p(s))` on `count` values of `s` in `[lo, hi]`.
#[derive(Debug, Clone)]
pub struct JetCurve {
    pub x: Vec<Compiled>,
    pub u: Compiled,
    pub p: Vec<Compiled>,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub enum Seeds {
    Curve(JetCurve),
    Grid(SeedGrid),
}

#[derive(Debug, Clone)]
pub struct Start {
    pub t: f64,
    pub q: Vec<f64>,
    /// `p` for Hamiltonian runs, `qd` for Lagrangian ones.
    pub v: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LoopSpec {
    pub t: f64,
    pub center_q: Vec<f64>,
    pub center_p: Vec<f64>,
    pub radius: f64,
    /// Zero-based.
    pub axis: usize,
    pub points: usize,
    pub t_end: f64,
}

#[derive(Debug, Clone)]
pub struct Box_ {
    pub count: usize,
    pub seed: u64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone)]
pub struct CanonicalSpec {
    pub q: Vec<Expression>,
    pub p: Vec<Expression>,
    pub w: Option<Expression>,
    pub samples: Box_,
    pub loop_points: usize,
    pub loop_radius: f64,
}

#[derive(Debug, Clone)]
pub enum GridValues {
    U(Expression),
    P(Vec<Expression>),
}

#[derive(Debug, Clone)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub counts: Vec<usize>,
    pub values: GridValues,
}

#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    pub jump_t: Vec<f64>,
    pub branch_x: Option<f64>,
    /// Defaults to the end of the integration interval.
    pub branch_t: Option<f64>,
    pub expect_crossing: Option<f64>,
    pub expect_branch_spread: Option<f64>,
    pub expect_k_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tolerances {
    pub f: f64,
    pub closure: f64,
    pub energy: f64,
    pub loop_: f64,
    pub legendre: f64,
    pub equivalence: f64,
    pub symplectic: f64,
    pub form: f64,
    pub generating: f64,
    pub crossing: f64,
    pub branch: f64,
    pub k_norm: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            f: 1e-8,
            closure: 1e-8,
            energy: 1e-6,
            loop_: 1e-6,
            legendre: 1e-10,
            equivalence: 1e-6,
            symplectic: 1e-10,
            form: 1e-4,
            generating: 1e-10,
            crossing: 1e-2,
            branch: 1e-2,
            k_norm: 1e-6,
        }
    }
}

const TOLERANCE_KEYS: &[&str] = &[
    "tol_F",
    "tol_closure",
    "tol_energy",
    "tol_loop",
    "tol_legendre",
    "tol_equivalence",
    "tol_symplectic",
    "tol_form",
    "tol_generating",
    "tol_crossing",
    "tol_branch",
    "tol_k_norm",
];

#[derive(Debug, Clone)]
pub enum Problem {
    Pde(PdeProblem),
    Hamiltonian(HamiltonianProblem),
    Lagrangian {
        lagrangian: LagrangianProblem,
        partner: Option<HamiltonianProblem>,
    },
}

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub kind: Kind,
    pub dim: usize,
    pub problem: Problem,
    pub u0: Option<Expression>,
    pub integration: Integration,
    pub seeds: Option<Seeds>,
    pub start: Option<Start>,
    pub loop_: Option<LoopSpec>,
    pub canonical: Option<CanonicalSpec>,
    pub samples: Option<Box_>,
    pub grid: Option<GridSpec>,
    pub diagnostics: Diagnostics,
    pub tolerances: Tolerances,
    pub output_dir: Option<PathBuf>,
    pub stride: usize,
}

/// Typed access to one section.
struct Sec<'a> {
    name: &'a str,
    sec: Option<&'a Section>,
}

impl<'a> Sec<'a> {
    fn entry(&self, key: &str) -> Option<&'a Entry> {
        self.sec.and_then(|s| s.get(key))
    }

    fn line(&self) -> Option<usize> {
        self.sec.map(|s| s.line)
    }

    fn missing(&self, key: &str) -> SpecError {
        invalid(self.line(), format!("[{}] requires `{key}`", self.name))
    }

    fn wrong(e: &Entry, want: &str) -> SpecError {
        invalid(
            Some(e.line),
            format!("`{}` must be {want}, found {}", e.key, e.value.type_name()),
        )
    }

    fn num(&self, key: &str) -> Result<Option<f64>, SpecError> {
        match self.entry(key) {
            None => Ok(None),
            Some(e) => match e.value {
                Value::Num(x) => Ok(Some(x)),
                _ => Err(Self::wrong(e, "a number")),
            },
        }
    }

    fn req_num(&self, key: &str) -> Result<f64, SpecError> {
        self.num(key)?.ok_or_else(|| self.missing(key))
    }

    fn positive(&self, key: &str) -> Result<Option<f64>, SpecError> {
        let v = self.num(key)?;
        if let (Some(x), Some(e)) = (v, self.entry(key)) {
            if !(x > 0.0) {
                return Err(invalid(Some(e.line), format!("{key} must be positive")));
            }
        }
        Ok(v)
    }

    fn count(&self, key: &str, min: usize) -> Result<Option<usize>, SpecError> {
        match self.num(key)? {
            None => Ok(None),
            Some(x) => {
                let e = self.entry(key).unwrap();
                if x.fract() != 0.0 || x < min as f64 || x > 1e9 {
                    return Err(invalid(
                        Some(e.line),
                        format!("{key} must be an integer ≥ {min}"),
                    ));
                }
                Ok(Some(x as usize))
            }
        }
    }

    fn boolean(&self, key: &str) -> Result<Option<bool>, SpecError> {
        match self.entry(key) {
            None => Ok(None),
            Some(e) => match e.value {
                Value::Bool(b) => Ok(Some(b)),
                _ => Err(Self::wrong(e, "true or false")),
            },
        }
    }

    fn string(&self, key: &str) -> Result<Option<&'a str>, SpecError> {
        match self.entry(key) {
            None => Ok(None),
            Some(e) => match &e.value {
                Value::Str(s) => Ok(Some(s)),
                _ => Err(Self::wrong(e, "a quoted string")),
            },
        }
    }

    fn expr(&self, key: &str) -> Result<Option<(Expression, usize)>, SpecError> {
        let Some(src) = self.string(key)? else {
            return Ok(None);
        };
        let line = self.entry(key).unwrap().line;
        Expression::parse(src)
            .map(|e| Some((e, line)))
            .map_err(|source| SpecError::Expression {
                key: key.into(),
                line,
                source,
            })
    }

    fn req_expr(&self, key: &str) -> Result<(Expression, usize), SpecError> {
        self.expr(key)?.ok_or_else(|| self.missing(key))
    }

    /// A list of `n` numbers; a bare number is accepted when `n == 1`.
    fn nums(&self, key: &str, n: usize) -> Result<Option<Vec<f64>>, SpecError> {
        let Some(e) = self.entry(key) else {
            return Ok(None);
        };
        let v = match &e.value {
            Value::Num(x) => vec![*x],
            Value::List(items) => items
                .iter()
                .map(|v| match v {
                    Value::Num(x) => Ok(*x),
                    _ => Err(Self::wrong(e, "a list of numbers")),
                })
                .collect::<Result<_, _>>()?,
            _ => return Err(Self::wrong(e, "a number or list of numbers")),
        };
        if v.len() != n {
            return Err(invalid(
                Some(e.line),
                format!("`{key}` needs {n} values, found {}", v.len()),
            ));
        }
        Ok(Some(v))
    }

    fn any_nums(&self, key: &str) -> Result<Option<Vec<f64>>, SpecError> {
        let n = match self.entry(key).map(|e| &e.value) {
            Some(Value::List(items)) => items.len(),
            _ => 1,
        };
        self.nums(key, n)
    }

    fn exprs(&self, key: &str, n: usize) -> Result<Option<(Vec<Expression>, usize)>, SpecError> {
        let Some(e) = self.entry(key) else {
            return Ok(None);
        };
        let srcs: Vec<&str> = match &e.value {
            Value::Str(s) if n == 1 => vec![s],
            Value::List(items) => items
                .iter()
                .map(|v| match v {
                    Value::Str(s) => Ok(s.as_str()),
                    _ => Err(Self::wrong(e, "a list of quoted expressions")),
                })
                .collect::<Result<_, _>>()?,
            _ => return Err(Self::wrong(e, "a list of quoted expressions")),
        };
        if srcs.len() != n {
            return Err(invalid(
                Some(e.line),
                format!("`{key}` needs {n} expressions, found {}", srcs.len()),
            ));
        }
        let exprs = srcs
            .iter()
            .map(|s| {
                Expression::parse(s).map_err(|source| SpecError::Expression {
                    key: key.into(),
                    line: e.line,
                    source,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Some((exprs, e.line)))
    }
}

fn compile(e: &Expression, a: &Alphabet, key: &str, line: usize) -> Result<Compiled, SpecError> {
    Compiled::new(e, a).map_err(|source| SpecError::Expression {
        key: key.into(),
        line,
        source,
    })
}

/// Re-labels a core construction error as an expression error on `key`.
fn on_key<T, E>(r: Result<T, E>, key: &str, line: usize) -> Result<T, SpecError>
where
    E: std::fmt::Display,
{
    r.map_err(|e| invalid(Some(line), format!("`{key}`: {e}")))
}

fn allowed_sections(kind: Kind) -> &'static [&'static str] {
    match kind {
        Kind::GeneralPde => &[
            "problem",
            "integration",
            "seeds",
            "grid",
            "diagnostics",
            "tolerances",
            "output",
        ],
        Kind::EvolutionHj => &[
            "problem",
            "integration",
            "seeds",
            "grid",
            "diagnostics",
            "tolerances",
            "output",
        ],
        Kind::Hamiltonian => &[
            "problem",
            "integration",
            "start",
            "loop",
            "canonical",
            "tolerances",
            "output",
        ],
        Kind::Lagrangian => &[
            "problem",
            "integration",
            "start",
            "samples",
            "tolerances",
            "output",
        ],
    }
}

fn allowed_keys(kind: Kind, section: &str) -> &'static [&'static str] {
    match (section, kind) {
        ("problem", Kind::GeneralPde) => &["kind", "dim", "F"],
        ("problem", Kind::EvolutionHj) => &["kind", "dim", "E", "u0"],
        ("problem", Kind::Hamiltonian) => &["kind", "dim", "H", "separable"],
        ("problem", Kind::Lagrangian) => &["kind", "dim", "L", "H"],
        ("integration", Kind::GeneralPde) => &["dt", "length", "method"],
        ("integration", _) => &["dt", "t_end", "t0", "method"],
        ("seeds", Kind::GeneralPde) => &["x", "u", "p", "lo", "hi", "count"],
        ("seeds", _) => &["lo", "hi", "count"],
        ("start", Kind::Hamiltonian) => &["t", "q", "p"],
        ("start", _) => &["t", "q", "qd"],
        ("loop", _) => &[
            "t", "center_q", "center_p", "radius", "axis", "points", "t_end",
        ],
        ("canonical", _) => &[
            "Q",
            "P",
            "W",
            "samples",
            "seed",
            "lo",
            "hi",
            "loop_points",
            "loop_radius",
        ],
        ("samples", _) => &["count", "seed", "lo", "hi"],
        ("grid", _) => &["lo", "hi", "count", "u", "p"],
        ("diagnostics", Kind::EvolutionHj) => &[
            "jump_t",
            "branch_x",
            "branch_t",
            "expect_crossing",
            "expect_branch_spread",
            "expect_k_norm",
        ],
        ("diagnostics", _) => &["expect_k_norm"],
        ("tolerances", _) => TOLERANCE_KEYS,
        ("output", _) => &["dir", "stride"],
        _ => &[],
    }
}

fn check_shape(sc: &Scenario, kind: Kind) -> Result<(), SpecError> {
    let sections = allowed_sections(kind);
    for s in &sc.sections {
        if !sections.contains(&s.name.as_str()) {
            return Err(invalid(
                Some(s.line),
                format!("section [{}] is not valid for kind {}", s.name, kind.name()),
            ));
        }
        let keys = allowed_keys(kind, &s.name);
        for e in &s.entries {
            if !keys.contains(&e.key.as_str()) {
                return Err(invalid(
                    Some(e.line),
                    format!(
                        "key `{}` is not valid in [{}] for kind {}",
                        e.key,
                        s.name,
                        kind.name()
                    ),
                ));
            }
        }
    }
    Ok(())
}

pub fn load_spec(path: &Path) -> Result<ProblemSpec, SpecError> {
    let text = std::fs::read_to_string(path).map_err(|e| SpecError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let name = path.file_stem().map_or_else(
        || "scenario".to_string(),
        |s| s.to_string_lossy().into_owned(),
    );
    load_spec_str(&text, &name)
}

pub fn load_spec_str(text: &str, name: &str) -> Result<ProblemSpec, SpecError> {
    let sc = scenario::parse(text)?;
    let sec = |n: &'static str| Sec {
        name: n,
        sec: sc.section(n),
    };

    let problem = sec("problem");
    if problem.sec.is_none() {
        return Err(invalid(None, "missing [problem] section"));
    }
    let kind_src = problem
        .string("kind")?
        .ok_or_else(|| problem.missing("kind"))?;
    let kind = Kind::from_name(kind_src).ok_or_else(|| {
        invalid(
            problem.entry("kind").map(|e| e.line),
            format!("unknown kind `{kind_src}` (expected general_pde, evolution_hj, hamiltonian or lagrangian)"),
        )
    })?;
    check_shape(&sc, kind)?;
    let dim = problem
        .count("dim", 1)?
        .ok_or_else(|| problem.missing("dim"))?;

    // integration
    let integ = sec("integration");
    if integ.sec.is_none() {
        return Err(invalid(None, "missing [integration] section"));
    }
    let dt = integ.positive("dt")?.ok_or_else(|| integ.missing("dt"))?;
    let end_key = if kind == Kind::GeneralPde {
        "length"
    } else {
        "t_end"
    };
    let t0 = integ.num("t0")?.unwrap_or(0.0);
    let end = match kind {
        Kind::GeneralPde => integ.positive("length")?,
        _ => integ.num("t_end")?,
    }
    .ok_or_else(|| integ.missing(end_key))?;
    if kind != Kind::GeneralPde && !(end > t0) {
        return Err(invalid(
            integ.entry("t_end").map(|e| e.line),
            "t_end must be greater than t0",
        ));
    }
    let method = match integ.string("method")? {
        None | Some("rk4") => Method::Rk4,
        Some("verlet") if kind == Kind::Hamiltonian => Method::Verlet,
        Some(other) => {
            return Err(invalid(
                integ.entry("method").map(|e| e.line),
                format!("method `{other}` is not available for kind {}", kind.name()),
            ))
        }
    };

    let mut spec = ProblemSpec {
        name: name.to_string(),
        kind,
        dim,
        problem: Problem::Pde(PdeProblem::parse_general(1, "p1").expect("placeholder")),
        u0: None,
        integration: Integration {
            dt,
            end,
            t0,
            method,
        },
        seeds: None,
        start: None,
        loop_: None,
        canonical: None,
        samples: None,
        grid: None,
        diagnostics: Diagnostics::default(),
        tolerances: Tolerances::default(),
        output_dir: None,
        stride: 1,
    };

    match kind {
        Kind::GeneralPde => {
            let (f, line) = problem.req_expr("F")?;
            compile(&f, &Alphabet::general_pde(dim), "F", line)?;
            spec.problem = Problem::Pde(on_key(PdeProblem::general(dim, &f), "F", line)?);
        }
        Kind::EvolutionHj => {
            let (e, line) = problem.req_expr("E")?;
            compile(&e, &Alphabet::evolution(dim), "E", line)?;
            spec.problem = Problem::Pde(on_key(PdeProblem::evolution(dim, &e), "E", line)?);
            let (u0, line) = problem.req_expr("u0")?;
            compile(&u0, &Alphabet::spatial(dim), "u0", line)?;
            spec.u0 = Some(u0);
        }
        Kind::Hamiltonian => {
            let (h, line) = problem.req_expr("H")?;
            compile(&h, &Alphabet::hamiltonian(dim), "H", line)?;
            let separable = problem.boolean("separable")?.unwrap_or(false);
            if method == Method::Verlet && !separable {
                return Err(invalid(
                    integ.entry("method").map(|e| e.line),
                    "method verlet requires separable = true in [problem]",
                ));
            }
            spec.problem = Problem::Hamiltonian(
                on_key(HamiltonianProblem::new(dim, &h), "H", line)?.separable(separable),
            );
        }
        Kind::Lagrangian => {
            let (l, line) = problem.req_expr("L")?;
            compile(&l, &Alphabet::lagrangian(dim), "L", line)?;
            let lagrangian = on_key(LagrangianProblem::new(dim, &l), "L", line)?;
            let partner = match problem.expr("H")? {
                None => None,
                Some((h, line)) => {
                    compile(&h, &Alphabet::hamiltonian(dim), "H", line)?;
                    Some(on_key(HamiltonianProblem::new(dim, &h), "H", line)?)
                }
            };
            spec.problem = Problem::Lagrangian {
                lagrangian,
                partner,
            };
        }
    }

    // seeds
    let seeds = sec("seeds");
    match kind {
        Kind::GeneralPde | Kind::EvolutionHj if seeds.sec.is_none() => {
            return Err(invalid(None, "missing [seeds] section"));
        }
        Kind::GeneralPde => {
            let a = Alphabet::new(vec!["s".to_string()]);
            let (x, xl) = seeds.exprs("x", dim)?.ok_or_else(|| seeds.missing("x"))?;
            let (u, ul) = seeds.req_expr("u")?;
            let (p, pl) = seeds.exprs("p", dim)?.ok_or_else(|| seeds.missing("p"))?;
            let many = |v: &[Expression], key, line| {
                v.iter()
                    .map(|e| compile(e, &a, key, line))
                    .collect::<Result<Vec<_>, _>>()
            };
            let lo = seeds.req_num("lo")?;
            let hi = seeds.req_num("hi")?;
            let count = seeds
                .count("count", 1)?
                .ok_or_else(|| seeds.missing("count"))?;
            if hi < lo {
                return Err(invalid(
                    seeds.entry("hi").map(|e| e.line),
                    "hi must not be below lo",
                ));
            }
            spec.seeds = Some(Seeds::Curve(JetCurve {
                x: many(&x, "x", xl)?,
                u: compile(&u, &a, "u", ul)?,
                p: many(&p, "p", pl)?,
                lo,
                hi,
                count,
            }));
        }
        Kind::EvolutionHj => {
            let lo = seeds.nums("lo", dim)?.ok_or_else(|| seeds.missing("lo"))?;
            let hi = seeds.nums("hi", dim)?.ok_or_else(|| seeds.missing("hi"))?;
            let counts = match seeds.entry("count") {
                None => return Err(seeds.missing("count")),
                Some(e) => {
                    let v = seeds.nums("count", dim)?.unwrap();
                    if v.iter().any(|c| c.fract() != 0.0 || *c < 1.0) {
                        return Err(invalid(Some(e.line), "seed count must be at least 1"));
                    }
                    v.into_iter().map(|c| c as usize).collect()
                }
            };
            if lo.iter().zip(&hi).any(|(a, b)| b < a) {
                return Err(invalid(
                    seeds.entry("hi").map(|e| e.line),
                    "hi must not be below lo",
                ));
            }
            spec.seeds = Some(Seeds::Grid(SeedGrid::new(lo, hi, counts)));
        }
        _ => {}
    }

    // start
    if matches!(kind, Kind::Hamiltonian | Kind::Lagrangian) {
        let st = sec("start");
        if st.sec.is_none() {
            return Err(invalid(None, "missing [start] section"));
        }
        let vkey = if kind == Kind::Hamiltonian { "p" } else { "qd" };
        let t = st.num("t")?.unwrap_or(t0);
        if t != t0 {
            return Err(invalid(
                st.entry("t").map(|e| e.line),
                "[start] t must equal the integration t0",
            ));
        }
        spec.start = Some(Start {
            t,
            q: st.nums("q", dim)?.ok_or_else(|| st.missing("q"))?,
            v: st.nums(vkey, dim)?.ok_or_else(|| st.missing(vkey))?,
        });
    }

    // loop
    let lp = sec("loop");
    if lp.sec.is_some() {
        let axis = lp.count("axis", 1)?.unwrap_or(1);
        if axis > dim {
            return Err(invalid(
                lp.entry("axis").map(|e| e.line),
                format!("axis must be between 1 and {dim}"),
            ));
        }
        let t = lp.num("t")?.unwrap_or(t0);
        let t_end = lp.num("t_end")?.unwrap_or(end);
        if !(t_end > t) {
            return Err(invalid(
                lp.entry("t_end").map(|e| e.line),
                "loop t_end must be greater than its t",
            ));
        }
        spec.loop_ = Some(LoopSpec {
            t,
            center_q: lp.nums("center_q", dim)?.unwrap_or(vec![0.0; dim]),
            center_p: lp.nums("center_p", dim)?.unwrap_or(vec![0.0; dim]),
            radius: lp.positive("radius")?.unwrap_or(1.0),
            axis: axis - 1,
            points: lp.count("points", 1)?.unwrap_or(256),
            t_end,
        });
    }

    // canonical
    let can = sec("canonical");
    if can.sec.is_some() {
        let (q, ql) = can.exprs("Q", dim)?.ok_or_else(|| can.missing("Q"))?;
        let (p, pl) = can.exprs("P", dim)?.ok_or_else(|| can.missing("P"))?;
        let phase = Alphabet::phase(dim);
        for e in &q {
            compile(e, &phase, "Q", ql)?;
        }
        for e in &p {
            compile(e, &phase, "P", pl)?;
        }
        let w = match can.expr("W")? {
            None => None,
            Some((w, line)) => {
                compile(&w, &phase, "W", line)?;
                Some(w)
            }
        };
        spec.canonical = Some(CanonicalSpec {
            q,
            p,
            w,
            samples: sample_box(&can, "samples")?,
            loop_points: can.count("loop_points", 1)?.unwrap_or(256),
            loop_radius: can.positive("loop_radius")?.unwrap_or(1.0),
        });
    }

    // samples
    let smp = sec("samples");
    if smp.sec.is_some() {
        spec.samples = Some(sample_box(&smp, "count")?);
    }

    // grid
    let grid = sec("grid");
    if grid.sec.is_some() {
        let lo = grid.nums("lo", dim)?.ok_or_else(|| grid.missing("lo"))?;
        let hi = grid.nums("hi", dim)?.ok_or_else(|| grid.missing("hi"))?;
        let counts: Vec<usize> = grid
            .nums("count", dim)?
            .ok_or_else(|| grid.missing("count"))?
            .into_iter()
            .map(|c| {
                if c.fract() == 0.0 && c >= 3.0 {
                    Ok(c as usize)
                } else {
                    Err(())
                }
            })
            .collect::<Result<_, _>>()
            .map_err(|_| {
                invalid(
                    grid.entry("count").map(|e| e.line),
                    "grid count must be an integer ≥ 3",
                )
            })?;
        if lo.iter().zip(&hi).any(|(a, b)| !(b > a)) {
            return Err(invalid(
                grid.entry("hi").map(|e| e.line),
                "grid hi must exceed lo",
            ));
        }
        let spatial = Alphabet::spatial(dim);
        let values = match (grid.expr("u")?, grid.exprs("p", dim)?) {
            (Some((u, line)), None) => {
                compile(&u, &spatial, "u", line)?;
                GridValues::U(u)
            }
            (None, Some((p, line))) => {
                for e in &p {
                    compile(e, &spatial, "p", line)?;
                }
                GridValues::P(p)
            }
            _ => {
                return Err(invalid(
                    grid.line(),
                    "[grid] needs exactly one of `u` or `p`",
                ))
            }
        };
        spec.grid = Some(GridSpec {
            lo,
            hi,
            counts,
            values,
        });
    }

    // diagnostics
    let diag = sec("diagnostics");
    spec.diagnostics = Diagnostics {
        jump_t: diag.any_nums("jump_t")?.unwrap_or_default(),
        branch_x: diag.num("branch_x")?,
        branch_t: diag.num("branch_t")?,
        expect_crossing: diag.num("expect_crossing")?,
        expect_branch_spread: diag.num("expect_branch_spread")?,
        expect_k_norm: diag.num("expect_k_norm")?,
    };
    if spec.diagnostics.expect_k_norm.is_some() && spec.grid.is_none() {
        return Err(invalid(
            diag.entry("expect_k_norm").map(|e| e.line),
            "expect_k_norm needs a [grid] section",
        ));
    }
    if spec.diagnostics.branch_x.is_some() && dim != 1 {
        return Err(invalid(
            diag.entry("branch_x").map(|e| e.line),
            "branch_x needs dim = 1",
        ));
    }
    if spec.diagnostics.branch_t.is_some() && spec.diagnostics.branch_x.is_none() {
        return Err(invalid(
            diag.entry("branch_t").map(|e| e.line),
            "branch_t needs branch_x",
        ));
    }
    if spec.diagnostics.expect_branch_spread.is_some() && spec.diagnostics.branch_x.is_none() {
        return Err(invalid(
            diag.entry("expect_branch_spread").map(|e| e.line),
            "expect_branch_spread needs branch_x",
        ));
    }

    // tolerances
    let tol = sec("tolerances");
    let t = &mut spec.tolerances;
    for (key, slot) in TOLERANCE_KEYS.iter().zip([
        &mut t.f,
        &mut t.closure,
        &mut t.energy,
        &mut t.loop_,
        &mut t.legendre,
        &mut t.equivalence,
        &mut t.symplectic,
        &mut t.form,
        &mut t.generating,
        &mut t.crossing,
        &mut t.branch,
        &mut t.k_norm,
    ]) {
        if let Some(v) = tol.positive(key)? {
            *slot = v;
        }
    }

    // output
    let out = sec("output");
    spec.output_dir = out.string("dir")?.map(PathBuf::from);
    spec.stride = out.count("stride", 1)?.unwrap_or(1);
    Ok(spec)
}

fn sample_box(s: &Sec<'_>, count_key: &str) -> Result<Box_, SpecError> {
    let lo = s.num("lo")?.unwrap_or(-1.0);
    let hi = s.num("hi")?.unwrap_or(1.0);
    if !(hi > lo) {
        return Err(invalid(s.entry("hi").map(|e| e.line), "hi must exceed lo"));
    }
    let seed = s.count("seed", 0)?.unwrap_or(0) as u64;
    Ok(Box_ {
        count: s.count(count_key, 1)?.unwrap_or(100),
        seed,
        lo,
        hi,
    })
}

impl ProblemSpec {
    /// Applies command-line overrides; `t_end` sets `length` for general PDEs.
    pub fn override_integration(
        &mut self,
        dt: Option<f64>,
        t_end: Option<f64>,
    ) -> Result<(), SpecError> {
        if let Some(dt) = dt {
            if !(dt > 0.0) || !dt.is_finite() {
                return Err(invalid(None, "dt must be positive"));
            }
            self.integration.dt = dt;
        }
        if let Some(end) = t_end {
            let ok = match self.kind {
                Kind::GeneralPde => end > 0.0,
                _ => end > self.integration.t0,
            };
            if !ok || !end.is_finite() {
                return Err(invalid(
                    None,
                    "t_end must be greater than t0 (length must be positive)",
                ));
            }
            self.integration.end = end;
        }
        Ok(())
    }
}
