//! Plain-text run report: one `name = value [tol, pass|fail]` line per scalar.

use std::fmt::{self, Write as _};

#[derive(Debug, Clone, PartialEq)]
pub enum Reading {
    Num(f64),
    Count(usize),
    Text(String),
    /// A quantity that could not be produced, such as a crossing time when
    /// no crossing occurred.
    Missing,
}

impl fmt::Display for Reading {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reading::Num(x) => write!(f, "{x:e}"),
            Reading::Count(n) => write!(f, "{n}"),
            Reading::Text(s) => write!(f, "{s}"),
            Reading::Missing => write!(f, "none"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub name: String,
    pub value: Reading,
    /// Upper bound the value must respect.
    pub tol: Option<f64>,
}

impl Line {
    /// Checked lines pass when the value is finite and within `tol`;
    /// unchecked numeric lines only need to be finite.
    pub fn passes(&self) -> bool {
        match (&self.value, self.tol) {
            (Reading::Num(x), Some(tol)) => x.is_finite() && *x <= tol,
            (Reading::Num(x), None) => x.is_finite(),
            (Reading::Missing, Some(_)) => false,
            _ => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunReport {
    pub lines: Vec<Line>,
}

impl RunReport {
    pub fn info(&mut self, name: impl Into<String>, value: Reading) {
        self.lines.push(Line {
            name: name.into(),
            value,
            tol: None,
        });
    }

    pub fn num(&mut self, name: impl Into<String>, x: f64) {
        self.info(name, Reading::Num(x));
    }

    pub fn check(&mut self, name: impl Into<String>, x: Option<f64>, tol: f64) {
        self.lines.push(Line {
            name: name.into(),
            value: x.map_or(Reading::Missing, Reading::Num),
            tol: Some(tol),
        });
    }

    pub fn get(&self, name: &str) -> Option<&Reading> {
        self.lines.iter().find(|l| l.name == name).map(|l| &l.value)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        match self.get(name)? {
            Reading::Num(x) => Some(*x),
            Reading::Count(n) => Some(*n as f64),
            _ => None,
        }
    }

    pub fn ok(&self) -> bool {
        self.lines.iter().all(Line::passes)
    }

    pub fn failures(&self) -> Vec<&Line> {
        self.lines.iter().filter(|l| !l.passes()).collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for l in &self.lines {
            match l.tol {
                Some(tol) => {
                    let verdict = if l.passes() { "pass" } else { "fail" };
                    writeln!(out, "{} = {} [{tol:e}, {verdict}]", l.name, l.value).unwrap();
                }
                None if !l.passes() => writeln!(out, "{} = {} [fail]", l.name, l.value).unwrap(),
                None => writeln!(out, "{} = {}", l.name, l.value).unwrap(),
            }
        }
        writeln!(out, "status = {}", if self.ok() { "ok" } else { "fail" }).unwrap();
        out
    }
}
