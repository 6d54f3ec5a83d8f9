//! Flat instruction list for fast value-and-gradient evaluation.
//!
//! One forward sweep records values and local slopes, one reverse sweep
//! accumulates adjoints. Any domain problem or non-finite intermediate makes
//! the sweep return `None`; callers then defer to the tree evaluator, which
//! owns error reporting.

use super::{BinOp, Func, Node};

#[derive(Debug, Clone, Copy)]
enum Op {
    Const(f64),
    Var(usize),
    Neg(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    /// Constant exponent, folded at build time.
    PowC(usize, f64),
    /// `x²`, the commonest constant power; same rounding as `powi(2)`.
    Square(usize),
    /// `exp(b ln a)`
    PowV(usize, usize),
    Unary(Func, usize),
    Min(usize, usize),
    Max(usize, usize),
}

#[derive(Debug, Clone)]
pub(super) struct Tape {
    ops: Vec<Op>,
}

/// Tapes up to this length run entirely on the stack.
const STACK: usize = 32;

struct Scratch<'a> {
    val: &'a mut [f64],
    slope: &'a mut [[f64; 2]],
    adj: &'a mut [f64],
}

fn with_scratch<R>(n: usize, f: impl FnOnce(Scratch<'_>) -> R) -> R {
    if n <= STACK {
        let mut val = [0.0; STACK];
        let mut slope = [[0.0; 2]; STACK];
        let mut adj = [0.0; STACK];
        f(Scratch {
            val: &mut val[..n],
            slope: &mut slope[..n],
            adj: &mut adj[..n],
        })
    } else {
        let mut val = vec![0.0; n];
        let mut slope = vec![[0.0; 2]; n];
        let mut adj = vec![0.0; n];
        f(Scratch {
            val: &mut val,
            slope: &mut slope,
            adj: &mut adj,
        })
    }
}

impl Tape {
    /// `None` when a constant exponent cannot be folded; the tree path is
    /// then used unconditionally.
    pub(super) fn build(root: &Node, fold: impl Fn(&Node) -> Option<f64>) -> Option<Tape> {
        let mut t = Tape { ops: Vec::new() };
        t.emit(root, &fold)?;
        Some(t)
    }

    fn push(&mut self, op: Op) -> usize {
        self.ops.push(op);
        self.ops.len() - 1
    }

    fn emit(&mut self, node: &Node, fold: &impl Fn(&Node) -> Option<f64>) -> Option<usize> {
        Some(match node {
            Node::Num(v) => self.push(Op::Const(*v)),
            Node::Var(i) => self.push(Op::Var(*i)),
            Node::Neg(a) => {
                let a = self.emit(a, fold)?;
                self.push(Op::Neg(a))
            }
            Node::Bin(BinOp::Pow, a, b) if !b.has_vars() => {
                let c = fold(b)?;
                let a = self.emit(a, fold)?;
                self.push(if c == 2.0 {
                    Op::Square(a)
                } else {
                    Op::PowC(a, c)
                })
            }
            Node::Bin(op, a, b) => {
                let a = self.emit(a, fold)?;
                let b = self.emit(b, fold)?;
                self.push(match op {
                    BinOp::Add => Op::Add(a, b),
                    BinOp::Sub => Op::Sub(a, b),
                    BinOp::Mul => Op::Mul(a, b),
                    BinOp::Div => Op::Div(a, b),
                    BinOp::Pow => Op::PowV(a, b),
                })
            }
            Node::Call(f @ (Func::Min | Func::Max), args) => {
                let a = self.emit(&args[0], fold)?;
                let b = self.emit(&args[1], fold)?;
                self.push(if *f == Func::Min {
                    Op::Min(a, b)
                } else {
                    Op::Max(a, b)
                })
            }
            Node::Call(f, args) => {
                let a = self.emit(&args[0], fold)?;
                self.push(Op::Unary(*f, a))
            }
        })
    }

    /// Value only. `vals` is in alphabet order; `slot` maps expression
    /// variables into it.
    pub(super) fn value(&self, vals: &[f64], slot: &[usize]) -> Option<f64> {
        with_scratch(self.ops.len(), |mut s| {
            self.forward(vals, slot, &mut s, false)
        })
    }

    /// Value and `∂/∂var` for every expression variable, written to `grad`.
    pub(super) fn value_and_grad(
        &self,
        vals: &[f64],
        slot: &[usize],
        grad: &mut [f64],
    ) -> Option<f64> {
        let n = self.ops.len();
        with_scratch(n, |mut s| {
            let v = self.forward(vals, slot, &mut s, true)?;
            let Scratch { slope, adj, .. } = s;
            adj[n - 1] = 1.0;
            grad.iter_mut().for_each(|g| *g = 0.0);
            for k in (0..n).rev() {
                let w = adj[k];
                if w == 0.0 {
                    continue;
                }
                let [da, db] = slope[k];
                match self.ops[k] {
                    Op::Const(_) => {}
                    Op::Var(i) => grad[i] += w,
                    Op::Neg(a) | Op::PowC(a, _) | Op::Square(a) | Op::Unary(_, a) => {
                        adj[a] += w * da
                    }
                    Op::Add(a, b)
                    | Op::Sub(a, b)
                    | Op::Mul(a, b)
                    | Op::Div(a, b)
                    | Op::PowV(a, b)
                    | Op::Min(a, b)
                    | Op::Max(a, b) => {
                        adj[a] += w * da;
                        adj[b] += w * db;
                    }
                }
            }
            grad.iter().all(|g| g.is_finite()).then_some(v)
        })
    }

    fn forward(
        &self,
        vals: &[f64],
        slot: &[usize],
        s: &mut Scratch<'_>,
        slopes: bool,
    ) -> Option<f64> {
        let n = self.ops.len();
        let mut poison = 0.0;
        for (k, op) in self.ops.iter().enumerate() {
            let v = &s.val[..k];
            let (x, d) = match *op {
                Op::Const(c) => (c, [0.0, 0.0]),
                Op::Var(i) => (vals[slot[i]], [0.0, 0.0]),
                Op::Neg(a) => (-v[a], [-1.0, 0.0]),
                Op::Add(a, b) => (v[a] + v[b], [1.0, 1.0]),
                Op::Sub(a, b) => (v[a] - v[b], [1.0, -1.0]),
                Op::Mul(a, b) => (v[a] * v[b], [v[b], v[a]]),
                Op::Div(a, b) => {
                    if v[b] == 0.0 {
                        return None;
                    }
                    let q = v[a] / v[b];
                    (q, [1.0 / v[b], -q / v[b]])
                }
                Op::PowC(a, c) => {
                    let x = v[a];
                    if (x == 0.0 && c < 0.0) || (x < 0.0 && c.fract() != 0.0) {
                        return None;
                    }
                    if c == 0.0 {
                        (1.0, [0.0, 0.0])
                    } else {
                        let slope = if slopes { powc(x, c - 1.0) * c } else { 0.0 };
                        (powc(x, c), [slope, 0.0])
                    }
                }
                Op::Square(a) => (v[a] * v[a], [v[a] * 2.0, 0.0]),
                Op::PowV(a, b) => {
                    let x = v[a];
                    if x <= 0.0 {
                        return None;
                    }
                    let l = x.ln();
                    let r = (v[b] * l).exp();
                    (r, [r * v[b] / x, r * l])
                }
                Op::Unary(f, a) => {
                    let x = v[a];
                    match f {
                        Func::Sin => (x.sin(), [x.cos(), 0.0]),
                        Func::Cos => (x.cos(), [-x.sin(), 0.0]),
                        Func::Tan => {
                            let t = x.tan();
                            (t, [1.0 + t * t, 0.0])
                        }
                        Func::Exp => {
                            let e = x.exp();
                            (e, [e, 0.0])
                        }
                        Func::Log => {
                            if x <= 0.0 {
                                return None;
                            }
                            (x.ln(), [1.0 / x, 0.0])
                        }
                        Func::Sqrt => {
                            if x < 0.0 {
                                return None;
                            }
                            let r = x.sqrt();
                            (r, [0.5 / r, 0.0])
                        }
                        Func::Sinh => (x.sinh(), [x.cosh(), 0.0]),
                        Func::Cosh => (x.cosh(), [x.sinh(), 0.0]),
                        Func::Tanh => {
                            let t = x.tanh();
                            (t, [1.0 - t * t, 0.0])
                        }
                        Func::Abs => {
                            let sg = if x > 0.0 {
                                1.0
                            } else if x < 0.0 {
                                -1.0
                            } else {
                                0.0
                            };
                            (x.abs(), [sg, 0.0])
                        }
                        Func::Min | Func::Max => unreachable!("binary"),
                    }
                }
                Op::Min(a, b) => {
                    if v[a] <= v[b] {
                        (v[a], [1.0, 0.0])
                    } else {
                        (v[b], [0.0, 1.0])
                    }
                }
                Op::Max(a, b) => {
                    if v[a] >= v[b] {
                        (v[a], [1.0, 0.0])
                    } else {
                        (v[b], [0.0, 1.0])
                    }
                }
            };
            // `v * 0` is ±0 for finite v and NaN otherwise
            poison += x * 0.0;
            if slopes {
                poison += (d[0] + d[1]) * 0.0;
            }
            s.val[k] = x;
            s.slope[k] = d;
        }
        (poison == 0.0).then(|| s.val[n - 1])
    }
}

fn powc(x: f64, c: f64) -> f64 {
    if c.fract() == 0.0 && c.abs() <= i32::MAX as f64 {
        x.powi(c as i32)
    } else {
        x.powf(c)
    }
}
