//! Scalar expressions with exact first and second derivatives.
//!
//! Expressions are parsed once and are immutable afterwards. Evaluation is
//! generic over [`Scalar`], so the same tree walk yields plain values,
//! gradients (one `Dual<f64>` pass per variable) and Hessians
//! (`Dual<Dual<f64>>`).

mod dual;
mod parser;
mod tape;

use std::collections::HashMap;
use std::fmt;

pub use dual::{Dual, Scalar};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: expected {expected}, found {found}")]
    Syntax {
        offset: usize,
        expected: String,
        found: String,
    },
    #[error("unknown function '{name}' at byte {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("function '{name}' at byte {offset} takes {expected} argument(s), got {found}")]
    Arity {
        name: String,
        expected: usize,
        found: usize,
        offset: usize,
    },
    #[error("domain error in {op}: `{subexpr}`")]
    Domain { op: &'static str, subexpr: String },
    #[error("variable '{0}' is not bound")]
    Unbound(String),
    #[error("variable '{name}' is not allowed here (allowed: {allowed})")]
    NotInAlphabet { name: String, allowed: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Sinh,
    Cosh,
    Tanh,
    Abs,
    Min,
    Max,
}

impl Func {
    const ALL: [(Func, &'static str); 12] = [
        (Func::Sin, "sin"),
        (Func::Cos, "cos"),
        (Func::Tan, "tan"),
        (Func::Exp, "exp"),
        (Func::Log, "log"),
        (Func::Sqrt, "sqrt"),
        (Func::Sinh, "sinh"),
        (Func::Cosh, "cosh"),
        (Func::Tanh, "tanh"),
        (Func::Abs, "abs"),
        (Func::Min, "min"),
        (Func::Max, "max"),
    ];

    pub fn from_name(name: &str) -> Option<Func> {
        Self::ALL.iter().find(|(_, n)| *n == name).map(|(f, _)| *f)
    }

    pub fn name(self) -> &'static str {
        Self::ALL
            .iter()
            .find(|(f, _)| *f == self)
            .map(|(_, n)| *n)
            .unwrap()
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    /// Index into the owning expression's variable list.
    Var(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

impl Node {
    fn has_vars(&self) -> bool {
        match self {
            Node::Num(_) => false,
            Node::Var(_) => true,
            Node::Neg(a) => a.has_vars(),
            Node::Bin(_, a, b) => a.has_vars() || b.has_vars(),
            Node::Call(_, args) => args.iter().any(Node::has_vars),
        }
    }

    fn remap(&self, to: &[usize]) -> Node {
        match self {
            Node::Num(v) => Node::Num(*v),
            Node::Var(i) => Node::Var(to[*i]),
            Node::Neg(a) => Node::Neg(Box::new(a.remap(to))),
            Node::Bin(op, a, b) => Node::Bin(*op, Box::new(a.remap(to)), Box::new(b.remap(to))),
            Node::Call(f, args) => Node::Call(*f, args.iter().map(|a| a.remap(to)).collect()),
        }
    }
}

struct Printer<'a> {
    node: &'a Node,
    vars: &'a [String],
}

impl fmt::Display for Printer<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sub = |node| Printer {
            node,
            vars: self.vars,
        };
        match self.node {
            Node::Num(v) if *v < 0.0 => write!(f, "(-{:?})", -v),
            Node::Num(v) => write!(f, "{v:?}"),
            Node::Var(i) => f.write_str(&self.vars[*i]),
            Node::Neg(a) => write!(f, "(-{})", sub(a)),
            Node::Bin(op, a, b) => write!(f, "({} {} {})", sub(a), op.symbol(), sub(b)),
            Node::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{}", sub(a))?;
                }
                f.write_str(")")
            }
        }
    }
}

/// A parsed expression together with its free variables in order of first
/// appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    root: Node,
    vars: Vec<String>,
}

impl fmt::Display for Expression {
    /// Canonical fully parenthesised form; re-parses to an equivalent tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        Printer {
            node: &self.root,
            vars: &self.vars,
        }
        .fmt(f)
    }
}

impl std::str::FromStr for Expression {
    type Err = ExprError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Expression::parse(s)
    }
}

impl Expression {
    pub fn parse(text: &str) -> Result<Expression, ExprError> {
        let mut p = parser::Parser::new(text)?;
        let root = p.parse_all()?;
        Ok(Expression { root, vars: p.vars })
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn free_vars(&self) -> &[String] {
        &self.vars
    }

    /// Rename variables; names mapped onto the same target are merged.
    pub fn rename(&self, map: &[(&str, &str)]) -> Expression {
        let mut vars: Vec<String> = Vec::new();
        let mut to = Vec::with_capacity(self.vars.len());
        for v in &self.vars {
            let target = map
                .iter()
                .find(|(from, _)| from == v)
                .map_or(v.as_str(), |(_, t)| *t);
            let idx = match vars.iter().position(|w| w == target) {
                Some(i) => i,
                None => {
                    vars.push(target.to_string());
                    vars.len() - 1
                }
            };
            to.push(idx);
        }
        Expression {
            root: self.root.remap(&to),
            vars,
        }
    }

    fn slots(&self, b: &Bindings) -> Result<Vec<f64>, ExprError> {
        self.vars
            .iter()
            .map(|v| b.get(v).ok_or_else(|| ExprError::Unbound(v.clone())))
            .collect()
    }

    pub fn eval(&self, b: &Bindings) -> Result<f64, ExprError> {
        let vals = self.slots(b)?;
        self.eval_slots(&vals)
    }

    /// Partial derivatives with respect to `wrt`; names that do not occur in
    /// the expression have derivative zero.
    pub fn grad(&self, wrt: &[&str], b: &Bindings) -> Result<Vec<f64>, ExprError> {
        let vals = self.slots(b)?;
        let idx: Vec<Option<usize>> = wrt.iter().map(|w| self.var_index(w)).collect();
        let mut out = vec![0.0; wrt.len()];
        if idx.iter().all(Option::is_none) {
            self.eval_slots(&vals)?;
        }
        for (k, i) in idx.iter().enumerate() {
            if let Some(i) = *i {
                out[k] = self.dual_pass(&vals, i)?.eps;
            }
        }
        Ok(out)
    }

    pub fn hessian(&self, wrt: &[&str], b: &Bindings) -> Result<Vec<Vec<f64>>, ExprError> {
        let vals = self.slots(b)?;
        let idx: Vec<Option<usize>> = wrt.iter().map(|w| self.var_index(w)).collect();
        self.hessian_slots(&vals, &idx)
    }

    fn var_index(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v == name)
    }

    fn eval_slots(&self, vals: &[f64]) -> Result<f64, ExprError> {
        let v = self.eval_generic(&self.root, vals)?;
        self.check_finite(v)
    }

    fn dual_pass(&self, vals: &[f64], seed: usize) -> Result<Dual<f64>, ExprError> {
        let duals: Vec<Dual<f64>> = vals
            .iter()
            .enumerate()
            .map(|(k, &v)| Dual::new(v, if k == seed { 1.0 } else { 0.0 }))
            .collect();
        let v = self.eval_generic(&self.root, &duals)?;
        self.check_finite(v)
    }

    fn hessian_slots(
        &self,
        vals: &[f64],
        idx: &[Option<usize>],
    ) -> Result<Vec<Vec<f64>>, ExprError> {
        let m = idx.len();
        let mut h = vec![vec![0.0; m]; m];
        if idx.iter().all(Option::is_none) {
            self.eval_slots(vals)?;
        }
        for a in 0..m {
            for b in 0..m {
                if let (Some(i), Some(j)) = (idx[a], idx[b]) {
                    let duals: Vec<Dual<Dual<f64>>> = vals
                        .iter()
                        .enumerate()
                        .map(|(k, &v)| {
                            let inner = if k == j { 1.0 } else { 0.0 };
                            let outer = if k == i { 1.0 } else { 0.0 };
                            Dual::new(Dual::new(v, inner), Dual::new(outer, 0.0))
                        })
                        .collect();
                    let r = self.eval_generic(&self.root, &duals)?;
                    h[a][b] = self.check_finite(r)?.eps.eps;
                }
            }
        }
        for a in 0..m {
            for b in (a + 1)..m {
                let s = 0.5 * (h[a][b] + h[b][a]);
                h[a][b] = s;
                h[b][a] = s;
            }
        }
        Ok(h)
    }

    fn check_finite<T: Scalar>(&self, v: T) -> Result<T, ExprError> {
        if v.all_finite() {
            Ok(v)
        } else {
            Err(ExprError::Domain {
                op: "non-finite result",
                subexpr: self.to_string(),
            })
        }
    }

    fn domain(&self, op: &'static str, node: &Node) -> ExprError {
        ExprError::Domain {
            op,
            subexpr: Printer {
                node,
                vars: &self.vars,
            }
            .to_string(),
        }
    }

    fn eval_generic<T: Scalar>(&self, node: &Node, vals: &[T]) -> Result<T, ExprError> {
        Ok(match node {
            Node::Num(v) => T::constant(*v),
            Node::Var(i) => vals[*i],
            Node::Neg(a) => -self.eval_generic(a, vals)?,
            Node::Bin(op, a, b) => {
                let x = self.eval_generic(a, vals)?;
                match op {
                    BinOp::Add => x + self.eval_generic(b, vals)?,
                    BinOp::Sub => x - self.eval_generic(b, vals)?,
                    BinOp::Mul => x * self.eval_generic(b, vals)?,
                    BinOp::Div => {
                        let y = self.eval_generic(b, vals)?;
                        if y.real() == 0.0 {
                            return Err(self.domain("division by zero", node));
                        }
                        x / y
                    }
                    BinOp::Pow => {
                        if b.has_vars() {
                            if x.real() <= 0.0 {
                                return Err(self.domain("power of non-positive base", node));
                            }
                            (self.eval_generic(b, vals)? * x.ln()).exp()
                        } else {
                            let c: f64 = self.eval_generic(b, &[])?;
                            if x.real() == 0.0 && c < 0.0 {
                                return Err(self.domain("division by zero", node));
                            }
                            if x.real() < 0.0 && c.fract() != 0.0 {
                                return Err(self.domain("fractional power of negative base", node));
                            }
                            x.powc(c)
                        }
                    }
                }
            }
            Node::Call(func, args) => {
                let x = self.eval_generic(&args[0], vals)?;
                match func {
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Tan => x.tan(),
                    Func::Exp => x.exp(),
                    Func::Log => {
                        if x.real() <= 0.0 {
                            return Err(self.domain("log of non-positive value", node));
                        }
                        x.ln()
                    }
                    Func::Sqrt => {
                        if x.real() < 0.0 {
                            return Err(self.domain("sqrt of negative value", node));
                        }
                        x.sqrt()
                    }
                    Func::Sinh => x.sinh(),
                    Func::Cosh => x.cosh(),
                    Func::Tanh => x.tanh(),
                    Func::Abs => x.abs(),
                    Func::Min | Func::Max => {
                        let y = self.eval_generic(&args[1], vals)?;
                        let take_x = if *func == Func::Min {
                            x.real() <= y.real()
                        } else {
                            x.real() >= y.real()
                        };
                        if take_x {
                            x
                        } else {
                            y
                        }
                    }
                }
            }
        })
    }
}

/// Variable name → value.
#[derive(Debug, Clone, Default)]
pub struct Bindings(HashMap<String, f64>);

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, v: f64) -> Self {
        self.0.insert(name.to_string(), v);
        self
    }

    pub fn set(&mut self, name: &str, v: f64) {
        self.0.insert(name.to_string(), v);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.0.get(name).copied()
    }
}

impl<'a> FromIterator<(&'a str, f64)> for Bindings {
    fn from_iter<I: IntoIterator<Item = (&'a str, f64)>>(iter: I) -> Self {
        Bindings(iter.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
    }
}

/// Ordered variable alphabet for one problem kind.
///
/// One-dimensional alphabets also accept the bare names `x`, `q`, `p`, `qd`
/// for `x1`, `q1`, `p1`, `qd1`; two-dimensional spatial alphabets accept
/// `x`, `y` for `x1`, `x2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Alphabet {
    names: Vec<String>,
    aliases: Vec<(String, usize)>,
}

impl Alphabet {
    pub fn new(names: Vec<String>) -> Self {
        let mut a = Alphabet {
            names,
            aliases: Vec::new(),
        };
        for stem in ["x", "q", "p", "qd"] {
            let one = format!("{stem}1");
            if a.index_of(&one).is_some() && a.index_of(&format!("{stem}2")).is_none() {
                a.add_alias(stem, &one);
            }
        }
        if a.index_of("x2").is_some() && a.index_of("x3").is_none() {
            a.add_alias("x", "x1");
            a.add_alias("y", "x2");
        }
        a
    }

    fn add_alias(&mut self, alias: &str, target: &str) {
        if let Some(i) = self.index_of(target) {
            if !self.aliases.iter().any(|(a, _)| a == alias) {
                self.aliases.push((alias.to_string(), i));
            }
        }
    }

    fn indexed(stem: &str, n: usize) -> impl Iterator<Item = String> + '_ {
        (1..=n).map(move |i| format!("{stem}{i}"))
    }

    /// `x1..xn`
    pub fn spatial(n: usize) -> Self {
        Self::new(Self::indexed("x", n).collect())
    }

    /// `x1..xn, u, p1..pn`
    pub fn general_pde(n: usize) -> Self {
        let mut v: Vec<String> = Self::indexed("x", n).collect();
        v.push("u".into());
        v.extend(Self::indexed("p", n));
        Self::new(v)
    }

    /// `t, x1..xn, p1..pn`
    pub fn evolution(n: usize) -> Self {
        let mut v = vec!["t".to_string()];
        v.extend(Self::indexed("x", n));
        v.extend(Self::indexed("p", n));
        Self::new(v)
    }

    /// `t, q1..qn, p1..pn`
    pub fn hamiltonian(n: usize) -> Self {
        let mut v = vec!["t".to_string()];
        v.extend(Self::indexed("q", n));
        v.extend(Self::indexed("p", n));
        Self::new(v)
    }

    /// `t, q1..qn, qd1..qdn`
    pub fn lagrangian(n: usize) -> Self {
        let mut v = vec!["t".to_string()];
        v.extend(Self::indexed("q", n));
        v.extend(Self::indexed("qd", n));
        Self::new(v)
    }

    /// `q1..qn, p1..pn`
    pub fn phase(n: usize) -> Self {
        let mut v: Vec<String> = Self::indexed("q", n).collect();
        v.extend(Self::indexed("p", n));
        Self::new(v)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name).or_else(|| {
            self.aliases
                .iter()
                .find(|(a, _)| a == name)
                .map(|(_, i)| *i)
        })
    }
}

/// An expression bound to an [`Alphabet`]: values are passed as a slice in
/// alphabet order.
#[derive(Debug, Clone)]
pub struct Compiled {
    expr: Expression,
    /// expression variable index → alphabet index
    slot: Vec<usize>,
    /// alphabet index → expression variable index
    local: Vec<Option<usize>>,
    width: usize,
    tape: Option<tape::Tape>,
}

impl Compiled {
    pub fn new(expr: &Expression, alphabet: &Alphabet) -> Result<Self, ExprError> {
        let mut renames = Vec::new();
        for v in &expr.vars {
            let i = alphabet
                .index_of(v)
                .ok_or_else(|| ExprError::NotInAlphabet {
                    name: v.clone(),
                    allowed: alphabet.names().join(", "),
                })?;
            renames.push((v.as_str(), alphabet.names()[i].as_str()));
        }
        // aliases collapse onto their canonical names
        let expr = expr.rename(&renames);
        let slot: Vec<usize> = expr
            .vars
            .iter()
            .map(|v| alphabet.index_of(v).unwrap())
            .collect();
        let mut local = vec![None; alphabet.len()];
        for (e, &a) in slot.iter().enumerate() {
            local[a] = Some(e);
        }
        let tape = tape::Tape::build(&expr.root, |n| expr.eval_generic::<f64>(n, &[]).ok());
        Ok(Compiled {
            expr,
            slot,
            local,
            width: alphabet.len(),
            tape,
        })
    }

    pub fn expression(&self) -> &Expression {
        &self.expr
    }

    /// Whether alphabet slot `i` occurs in the expression.
    pub fn depends_on(&self, i: usize) -> bool {
        self.slot.contains(&i)
    }

    fn gather(&self, vals: &[f64]) -> Vec<f64> {
        debug_assert_eq!(vals.len(), self.width);
        self.slot.iter().map(|&s| vals[s]).collect()
    }

    fn local_index(&self, slot: usize) -> Option<usize> {
        self.local.get(slot).copied().flatten()
    }

    pub fn value(&self, vals: &[f64]) -> Result<f64, ExprError> {
        debug_assert_eq!(vals.len(), self.width);
        if let Some(v) = self.tape.as_ref().and_then(|t| t.value(vals, &self.slot)) {
            return Ok(v);
        }
        self.expr.eval_slots(&self.gather(vals))
    }

    /// Value and partials with respect to the alphabet slots in `wrt`.
    pub fn value_and_partials(
        &self,
        vals: &[f64],
        wrt: &[usize],
    ) -> Result<(f64, Vec<f64>), ExprError> {
        let mut out = vec![0.0; wrt.len()];
        let v = self.value_and_partials_into(vals, wrt, &mut out)?;
        Ok((v, out))
    }

    /// As [`Compiled::value_and_partials`], writing the partials into `out`.
    pub fn value_and_partials_into(
        &self,
        vals: &[f64],
        wrt: &[usize],
        out: &mut [f64],
    ) -> Result<f64, ExprError> {
        debug_assert_eq!(wrt.len(), out.len());
        self.partials_by(vals, |k| wrt[k], out)
    }

    /// Partials for the contiguous slots `first..first + out.len()`.
    pub fn value_and_partials_span(
        &self,
        vals: &[f64],
        first: usize,
        out: &mut [f64],
    ) -> Result<f64, ExprError> {
        self.partials_by(vals, |k| first + k, out)
    }

    fn partials_by(
        &self,
        vals: &[f64],
        wrt: impl Fn(usize) -> usize,
        out: &mut [f64],
    ) -> Result<f64, ExprError> {
        debug_assert_eq!(vals.len(), self.width);
        if let Some(t) = &self.tape {
            let m = self.slot.len();
            let mut stack = [0.0; 16];
            let mut heap = Vec::new();
            let grad = if m <= stack.len() {
                &mut stack[..m]
            } else {
                heap.resize(m, 0.0);
                &mut heap[..]
            };
            if let Some(v) = t.value_and_grad(vals, &self.slot, grad) {
                for (k, o) in out.iter_mut().enumerate() {
                    *o = self.local_index(wrt(k)).map_or(0.0, |e| grad[e]);
                }
                return Ok(v);
            }
        }
        let wrt: Vec<usize> = (0..out.len()).map(wrt).collect();
        self.tree_value_and_partials(vals, &wrt, out)
    }

    fn tree_value_and_partials(
        &self,
        vals: &[f64],
        wrt: &[usize],
        out: &mut [f64],
    ) -> Result<f64, ExprError> {
        let local = self.gather(vals);
        let mut value = None;
        for (k, &w) in wrt.iter().enumerate() {
            out[k] = 0.0;
            if let Some(e) = self.local_index(w) {
                let d = self.expr.dual_pass(&local, e)?;
                out[k] = d.eps;
                value.get_or_insert(d.re);
            }
        }
        match value {
            Some(v) => Ok(v),
            None => self.expr.eval_slots(&local),
        }
    }

    pub fn partials(&self, vals: &[f64], wrt: &[usize]) -> Result<Vec<f64>, ExprError> {
        Ok(self.value_and_partials(vals, wrt)?.1)
    }

    /// Full gradient in alphabet order.
    pub fn gradient(&self, vals: &[f64]) -> Result<Vec<f64>, ExprError> {
        let all: Vec<usize> = (0..self.width).collect();
        self.partials(vals, &all)
    }

    /// Symmetric matrix of second partials over the alphabet slots in `wrt`.
    pub fn hessian(&self, vals: &[f64], wrt: &[usize]) -> Result<Vec<Vec<f64>>, ExprError> {
        let idx: Vec<Option<usize>> = wrt.iter().map(|&w| self.local_index(w)).collect();
        self.expr.hessian_slots(&self.gather(vals), &idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(pairs: &[(&str, f64)]) -> Bindings {
        pairs.iter().copied().collect()
    }

    #[test]
    fn precedence_matches_grammar() {
        let e = Expression::parse("p1^2 + p2^2 - 1").unwrap();
        assert_eq!(e.to_string(), "(((p1 ^ 2.0) + (p2 ^ 2.0)) - 1.0)");
        let e = Expression::parse("-x1^2/2").unwrap();
        assert_eq!(e.eval(&b(&[("x1", 2.0)])).unwrap(), -2.0);
        let e = Expression::parse("2^3^2").unwrap();
        assert_eq!(e.eval(&Bindings::new()).unwrap(), 512.0);
        let e = Expression::parse("2^-1").unwrap();
        assert_eq!(e.eval(&Bindings::new()).unwrap(), 0.5);
        let e = Expression::parse("1 - 2 - 3").unwrap();
        assert_eq!(e.eval(&Bindings::new()).unwrap(), -4.0);
        let e = Expression::parse("8 / 4 / 2").unwrap();
        assert_eq!(e.eval(&Bindings::new()).unwrap(), 1.0);
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        match Expression::parse("sin(") {
            Err(ExprError::Syntax { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("{other:?}"),
        }
        match Expression::parse("x1 + * 2") {
            Err(ExprError::Syntax { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            Expression::parse("(x1"),
            Err(ExprError::Syntax { offset: 3, .. })
        ));
        assert!(matches!(
            Expression::parse("x1 x2"),
            Err(ExprError::Syntax { offset: 3, .. })
        ));
    }

    #[test]
    fn unknown_function_and_arity() {
        assert_eq!(
            Expression::parse("1 + foo(x1)"),
            Err(ExprError::UnknownFunction {
                name: "foo".into(),
                offset: 4
            })
        );
        assert!(matches!(
            Expression::parse("max(x1)"),
            Err(ExprError::Arity {
                expected: 2,
                found: 1,
                ..
            })
        ));
    }

    #[test]
    fn eval_examples() {
        let e = Expression::parse("p1^2 + p2^2 - 1").unwrap();
        assert_eq!(e.eval(&b(&[("p1", 1.0), ("p2", 0.0)])).unwrap(), 0.0);
        let e = Expression::parse("q^2/2 + p^2/2").unwrap();
        assert_eq!(e.eval(&b(&[("q", 0.0), ("p", 2.0)])).unwrap(), 2.0);
        let e = Expression::parse("log(x1)").unwrap();
        match e.eval(&b(&[("x1", 0.0)])) {
            Err(ExprError::Domain { subexpr, .. }) => assert_eq!(subexpr, "log(x1)"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn domain_errors() {
        let zero = b(&[("x", 0.0), ("y", -1.0)]);
        for src in ["1/x", "sqrt(y)", "y^0.5", "x^-1", "x^y"] {
            let e = Expression::parse(src).unwrap();
            assert!(
                matches!(e.eval(&zero), Err(ExprError::Domain { .. })),
                "{src}"
            );
        }
        let e = Expression::parse("2 + 1/(x - x)").unwrap();
        match e.eval(&zero) {
            Err(ExprError::Domain { op, subexpr }) => {
                assert_eq!(op, "division by zero");
                assert_eq!(subexpr, "(1.0 / (x - x))");
            }
            other => panic!("{other:?}"),
        }
        let e = Expression::parse("exp(x)").unwrap();
        assert!(e.eval(&b(&[("x", 1000.0)])).is_err());
    }

    #[test]
    fn unbound_and_extra_bindings() {
        let e = Expression::parse("x1 + x2").unwrap();
        assert_eq!(
            e.eval(&b(&[("x1", 1.0)])),
            Err(ExprError::Unbound("x2".into()))
        );
        assert_eq!(e.eval(&b(&[("x1", 1.0), ("x2", 2.0), ("z", 9.0)])), Ok(3.0));
    }

    #[test]
    fn free_vars_in_order_of_appearance() {
        let e = Expression::parse("p2*x1 + sin(p2) - u").unwrap();
        assert_eq!(e.free_vars(), ["p2", "x1", "u"]);
        assert!(Expression::parse("3*4").unwrap().free_vars().is_empty());
    }

    #[test]
    fn grad_examples() {
        let e = Expression::parse("p1^2+p2^2-1").unwrap();
        let g = e
            .grad(&["p1", "p2"], &b(&[("p1", 1.0), ("p2", 0.0)]))
            .unwrap();
        assert_eq!(g, vec![2.0, 0.0]);
        let e = Expression::parse("x1*p1").unwrap();
        let g = e
            .grad(&["x1", "p1"], &b(&[("x1", 3.0), ("p1", 5.0)]))
            .unwrap();
        assert_eq!(g, vec![5.0, 3.0]);
        let e = Expression::parse("x1").unwrap();
        let g = e.grad(&["x1", "x2"], &b(&[("x1", 3.0)])).unwrap();
        assert_eq!(g, vec![1.0, 0.0]);
    }

    #[test]
    fn sin_derivative_against_central_difference() {
        let e = Expression::parse("sin(x1)").unwrap();
        let x = 0.7;
        let g = e.grad(&["x1"], &b(&[("x1", x)])).unwrap()[0];
        let h = 1e-6;
        let fd = ((x + h).sin() - (x - h).sin()) / (2.0 * h);
        assert!((g - fd).abs() < 1e-9);
        assert!((g - 0.7648421872844885).abs() < 1e-12);
    }

    #[test]
    fn hessian_examples() {
        let e = Expression::parse("qd^2/2").unwrap();
        assert_eq!(
            e.hessian(&["qd"], &b(&[("qd", 7.0)])).unwrap(),
            vec![vec![1.0]]
        );
        let e = Expression::parse("q1^2*q2").unwrap();
        let h = e
            .hessian(&["q1", "q2"], &b(&[("q1", 1.0), ("q2", 2.0)]))
            .unwrap();
        assert_eq!(h, vec![vec![4.0, 2.0], vec![2.0, 0.0]]);
        let e = Expression::parse("cosh(qd)").unwrap();
        let h = e.hessian(&["qd"], &b(&[("qd", 0.5)])).unwrap();
        // second central difference of cosh, step 1e-4
        let s = 1e-4;
        let fd = ((0.5f64 + s).cosh() - 2.0 * 0.5f64.cosh() + (0.5f64 - s).cosh()) / (s * s);
        assert!((h[0][0] - fd).abs() < 1e-6);
        assert!((h[0][0] - 1.1276259652063807).abs() < 1e-8);
    }

    #[test]
    fn abs_min_max_derivatives() {
        let e = Expression::parse("abs(x)").unwrap();
        assert_eq!(e.grad(&["x"], &b(&[("x", 0.0)])).unwrap(), vec![0.0]);
        assert_eq!(e.grad(&["x"], &b(&[("x", -3.0)])).unwrap(), vec![-1.0]);
        let e = Expression::parse("min(x, 2*y) + max(x, y)").unwrap();
        let g = e.grad(&["x", "y"], &b(&[("x", 1.0), ("y", 3.0)])).unwrap();
        assert_eq!(g, vec![1.0, 1.0]);
    }

    #[test]
    fn printer_round_trip() {
        for src in [
            "-x1^2/2",
            "2^-1*sin(x - -y)",
            "1e-5 + 3.25e10*x",
            "max(-x, y)^2",
        ] {
            let e = Expression::parse(src).unwrap();
            let again = Expression::parse(&e.to_string()).unwrap();
            let bind = b(&[("x1", 0.3), ("x", 1.7), ("y", -0.4)]);
            assert_eq!(e.eval(&bind).unwrap(), again.eval(&bind).unwrap(), "{src}");
        }
    }

    #[test]
    fn rename_merges_and_relabels() {
        let e = Expression::parse("q^2 + p*q").unwrap();
        let r = e.rename(&[("q", "x1"), ("p", "p1")]);
        assert_eq!(r.free_vars(), ["x1", "p1"]);
        assert_eq!(r.to_string(), "((x1 ^ 2.0) + (p1 * x1))");
    }

    #[test]
    fn compiled_with_aliases() {
        let a = Alphabet::hamiltonian(1);
        let c = Compiled::new(&Expression::parse("p^2/2 + q1^2/2 + q").unwrap(), &a).unwrap();
        let vals = [0.0, 2.0, 3.0];
        assert_eq!(c.value(&vals).unwrap(), 4.5 + 2.0 + 2.0);
        assert_eq!(c.gradient(&vals).unwrap(), vec![0.0, 3.0, 3.0]);
        let h = c.hessian(&vals, &[1, 2]).unwrap();
        assert_eq!(h, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let err = Compiled::new(&Expression::parse("z").unwrap(), &a).unwrap_err();
        assert!(matches!(err, ExprError::NotInAlphabet { .. }));
        assert!(c.depends_on(1) && !c.depends_on(0));
    }

    #[test]
    fn spatial_aliases() {
        let a = Alphabet::spatial(2);
        assert_eq!(a.index_of("x"), Some(0));
        assert_eq!(a.index_of("y"), Some(1));
        let a = Alphabet::general_pde(2);
        assert_eq!(a.index_of("p"), None);
        assert_eq!(a.names(), ["x1", "x2", "u", "p1", "p2"]);
    }

    #[test]
    fn tape_agrees_with_tree() {
        let a = Alphabet::general_pde(2);
        let srcs = [
            "p1^2 + p2^2 - (1 + 0.5*x1^2)",
            "sin(x1*p2) / (2 + cos(u)) - tanh(x2)^3",
            "x1^u * sqrt(1 + p1^2) + log(2 + sinh(p2)^2)",
            "abs(x1 - x2) + min(p1, u) * max(p2, -u) + exp(-x1^2) * tan(0.1*p1)",
            "-(u - x1)^-2 + cosh(p1/3)",
        ];
        let pts = [
            [0.3, -0.7, 1.2, 0.4, -0.9],
            [1.1, 0.2, 0.5, -1.3, 0.8],
            [0.9, 0.9, 2.0, 0.0, 0.1],
        ];
        let all: Vec<usize> = (0..a.len()).collect();
        for src in srcs {
            let c = Compiled::new(&Expression::parse(src).unwrap(), &a).unwrap();
            assert!(c.tape.is_some(), "{src}");
            for x in &pts {
                let (v, g) = c.value_and_partials(x, &all).unwrap();
                let mut gt = vec![0.0; all.len()];
                let vt = c.tree_value_and_partials(x, &all, &mut gt).unwrap();
                assert!((v - vt).abs() <= 1e-14 * (1.0 + vt.abs()), "{src}");
                assert!((c.value(x).unwrap() - vt).abs() <= 1e-14 * (1.0 + vt.abs()));
                for (p, q) in g.iter().zip(&gt) {
                    assert!(
                        (p - q).abs() <= 1e-12 * (1.0 + q.abs()),
                        "{src}: {g:?} vs {gt:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn tape_defers_errors_to_tree() {
        let a = Alphabet::spatial(2);
        let c = Compiled::new(&Expression::parse("1 + 1/(x1 - x2)").unwrap(), &a).unwrap();
        match c.value_and_partials(&[1.0, 1.0], &[0, 1]) {
            Err(ExprError::Domain { op, subexpr }) => {
                assert_eq!(op, "division by zero");
                assert_eq!(subexpr, "(1.0 / (x1 - x2))");
            }
            other => panic!("{other:?}"),
        }
        // infinite slope of sqrt at 0 poisons every forward pass
        let c = Compiled::new(&Expression::parse("sqrt(x1) + x2").unwrap(), &a).unwrap();
        assert!(c.value_and_partials(&[0.0, 1.0], &[1]).is_err());
        assert_eq!(c.value(&[0.0, 1.0]).unwrap(), 1.0);
        // exponent that cannot be folded disables the tape
        let c = Compiled::new(&Expression::parse("x1^(1/0)").unwrap(), &a).unwrap();
        assert!(c.tape.is_none());
        assert!(c.value(&[2.0, 0.0]).is_err());
    }
}
