//! Line-oriented scenario syntax: `[section]` headers, `key = value` pairs,
//! `#` comments. Values are double-quoted strings, numbers, booleans, or flat
//! bracketed lists of those.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Str(String),
    Num(f64),
    Bool(bool),
    List(Vec<Value>),
}

impl Value {
    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Str(_) => "string",
            Value::Num(_) => "number",
            Value::Bool(_) => "boolean",
            Value::List(_) => "list",
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Str(s) => write!(f, "{s:?}"),
            Value::Num(x) => write!(f, "{x}"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::List(items) => {
                write!(f, "[")?;
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{v}")?;
                }
                write!(f, "]")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: Value,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub line: usize,
    pub entries: Vec<Entry>,
}

impl Section {
    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scenario {
    pub sections: Vec<Section>,
}

impl Scenario {
    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> ParseError {
    ParseError {
        line,
        message: message.into(),
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Drops a trailing comment, respecting quoted strings.
fn strip_comment(line: &str) -> &str {
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in line.char_indices() {
        if in_str {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_str = false;
            }
        } else if c == '"' {
            in_str = true;
        } else if c == '#' {
            return &line[..i];
        }
    }
    line
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
    line: usize,
}

impl Cursor<'_> {
    fn rest(&self) -> &str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn value(&mut self, nested: bool) -> Result<Value, ParseError> {
        self.skip_ws();
        match self.peek() {
            None => Err(err(self.line, "missing value")),
            Some('"') => self.string(),
            Some('[') => {
                if nested {
                    return Err(err(self.line, "nested lists are not supported"));
                }
                self.list()
            }
            Some(_) => {
                let end = self
                    .rest()
                    .find([',', ']'])
                    .map_or(self.src.len(), |i| self.pos + i);
                let word = self.src[self.pos..end].trim();
                self.pos = end;
                match word {
                    "true" => Ok(Value::Bool(true)),
                    "false" => Ok(Value::Bool(false)),
                    _ => word
                        .parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .map(Value::Num)
                        .ok_or_else(|| {
                            err(
                                self.line,
                                format!("cannot read value `{word}` (strings need double quotes)"),
                            )
                        }),
                }
            }
        }
    }

    fn string(&mut self) -> Result<Value, ParseError> {
        let mut out = String::new();
        let mut chars = self.rest().char_indices().skip(1);
        while let Some((i, c)) = chars.next() {
            match c {
                '"' => {
                    self.pos += i + 1;
                    return Ok(Value::Str(out));
                }
                '\\' => match chars.next() {
                    Some((_, '"')) => out.push('"'),
                    Some((_, '\\')) => out.push('\\'),
                    Some((_, other)) => {
                        return Err(err(self.line, format!("unknown escape `\\{other}`")))
                    }
                    None => break,
                },
                _ => out.push(c),
            }
        }
        Err(err(self.line, "unterminated string"))
    }

    fn list(&mut self) -> Result<Value, ParseError> {
        self.pos += 1;
        let mut items = Vec::new();
        self.skip_ws();
        if self.peek() == Some(']') {
            self.pos += 1;
            return Ok(Value::List(items));
        }
        loop {
            items.push(self.value(true)?);
            self.skip_ws();
            match self.peek() {
                Some(',') => self.pos += 1,
                Some(']') => {
                    self.pos += 1;
                    return Ok(Value::List(items));
                }
                _ => return Err(err(self.line, "expected `,` or `]` in list")),
            }
        }
    }
}

pub fn parse(text: &str) -> Result<Scenario, ParseError> {
    let mut sc = Scenario::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = strip_comment(raw).trim();
        if body.is_empty() {
            continue;
        }
        if let Some(inner) = body.strip_prefix('[') {
            let name = inner
                .strip_suffix(']')
                .ok_or_else(|| err(line, "section header must end with `]`"))?
                .trim();
            if !is_ident(name) {
                return Err(err(line, format!("invalid section name `{name}`")));
            }
            if sc.section(name).is_some() {
                return Err(err(line, format!("section [{name}] appears twice")));
            }
            sc.sections.push(Section {
                name: name.to_string(),
                line,
                entries: Vec::new(),
            });
            continue;
        }
        let (key, rest) = body
            .split_once('=')
            .ok_or_else(|| err(line, "expected `key = value` or `[section]`"))?;
        let key = key.trim();
        if !is_ident(key) {
            return Err(err(line, format!("invalid key `{key}`")));
        }
        let section = sc
            .sections
            .last_mut()
            .ok_or_else(|| err(line, format!("key `{key}` appears before any section")))?;
        if section.get(key).is_some() {
            return Err(err(
                line,
                format!("key `{key}` repeated in [{}]", section.name),
            ));
        }
        let mut cur = Cursor {
            src: rest,
            pos: 0,
            line,
        };
        let value = cur.value(false)?;
        cur.skip_ws();
        if !cur.rest().is_empty() {
            return Err(err(
                line,
                format!("unexpected trailing text `{}`", cur.rest()),
            ));
        }
        section.entries.push(Entry {
            key: key.to_string(),
            value,
            line,
        });
    }
    Ok(sc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_values() {
        let sc = parse(
            "# header\n[problem]\nkind = \"evolution_hj\"  # trailing\ndim = 1\nE = \"p1^2/2\"\n\n[seeds]\nlo = -2\nhi = 2.5e0\ncount = 41\nflag = true\nlist = [1, -2.5, \"a#b\"]\nempty = []\n",
        )
        .unwrap();
        assert_eq!(sc.sections.len(), 2);
        let p = sc.section("problem").unwrap();
        assert_eq!(
            p.get("kind").unwrap().value,
            Value::Str("evolution_hj".into())
        );
        assert_eq!(p.get("dim").unwrap().line, 4);
        let s = sc.section("seeds").unwrap();
        assert_eq!(s.get("lo").unwrap().value, Value::Num(-2.0));
        assert_eq!(s.get("hi").unwrap().value, Value::Num(2.5));
        assert_eq!(s.get("flag").unwrap().value, Value::Bool(true));
        assert_eq!(
            s.get("list").unwrap().value,
            Value::List(vec![
                Value::Num(1.0),
                Value::Num(-2.5),
                Value::Str("a#b".into())
            ])
        );
        assert_eq!(s.get("empty").unwrap().value, Value::List(vec![]));
    }

    #[test]
    fn escapes() {
        let sc = parse("[a]\ns = \"q\\\"x\\\\\"\n").unwrap();
        assert_eq!(sc.sections[0].entries[0].value, Value::Str("q\"x\\".into()));
    }

    #[test]
    fn errors_carry_lines() {
        let cases = [
            ("[a]\nx = 1\nx = 2\n", 3),
            ("dim = 1\n", 1),
            ("[a]\n\nx = unquoted\n", 3),
            ("[a]\nx = \"open\n", 2),
            ("[a\n", 1),
            ("[a]\nx = [1, [2]]\n", 2),
            ("[a]\nx = 1 2\n", 2),
            ("[a]\njunk\n", 2),
            ("[a]\n[a]\n", 2),
            ("[a]\nx = nan\n", 2),
            ("[a]\nx = inf\n", 2),
        ];
        for (src, line) in cases {
            let e = parse(src).unwrap_err();
            assert_eq!(e.line, line, "{src:?}: {e}");
        }
    }
}
