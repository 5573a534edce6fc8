//! A tiny arithmetic-expression language in a single variable `z`.
//!
//! Grammar (usual precedence, `^` right-associative and binding tighter than
//! unary minus):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | 'z' | ('log' | 'exp') '(' expr ')' | '(' expr ')'
//! ```
//!
//! Parsed expressions carry their symbolic derivative, so custom potentials
//! get an exact `U'` rather than a finite-difference estimate.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use core::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("unexpected character {ch:?} at offset {pos}")]
    UnexpectedChar { ch: char, pos: usize },
    #[error("unexpected end of expression")]
    UnexpectedEnd,
    #[error("unknown identifier {name:?} at offset {pos}")]
    UnknownIdent { name: String, pos: usize },
    #[error("trailing input at offset {pos}")]
    Trailing { pos: usize },
    #[error("malformed number at offset {pos}")]
    BadNumber { pos: usize },
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Var,
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Log(Box<Node>),
    Exp(Box<Node>),
}

use Node::*;

fn c(v: f64) -> Box<Node> {
    Box::new(Const(v))
}

impl Node {
    fn eval(&self, z: f64) -> f64 {
        match self {
            Const(v) => *v,
            Var => z,
            Neg(a) => -a.eval(z),
            Add(a, b) => a.eval(z) + b.eval(z),
            Sub(a, b) => a.eval(z) - b.eval(z),
            Mul(a, b) => a.eval(z) * b.eval(z),
            Div(a, b) => a.eval(z) / b.eval(z),
            Pow(a, b) => {
                let base = a.eval(z);
                match **b {
                    Const(e) if e == libm::round(e) && libm::fabs(e) < 64.0 => powi(base, e as i32),
                    _ => libm::pow(base, b.eval(z)),
                }
            }
            Log(a) => libm::log(a.eval(z)),
            Exp(a) => libm::exp(a.eval(z)),
        }
    }

    fn is_const(&self) -> Option<f64> {
        match self {
            Const(v) => Some(*v),
            _ => None,
        }
    }

    fn depends_on_var(&self) -> bool {
        match self {
            Const(_) => false,
            Var => true,
            Neg(a) | Log(a) | Exp(a) => a.depends_on_var(),
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | Pow(a, b) => {
                a.depends_on_var() || b.depends_on_var()
            }
        }
    }

    fn derivative(&self) -> Node {
        match self {
            Const(_) => Const(0.0),
            Var => Const(1.0),
            Neg(a) => neg(a.derivative()),
            Add(a, b) => add(a.derivative(), b.derivative()),
            Sub(a, b) => sub(a.derivative(), b.derivative()),
            Mul(a, b) => add(
                mul(a.derivative(), (**b).clone()),
                mul((**a).clone(), b.derivative()),
            ),
            Div(a, b) => div(
                sub(
                    mul(a.derivative(), (**b).clone()),
                    mul((**a).clone(), b.derivative()),
                ),
                Pow(b.clone(), c(2.0)),
            ),
            Pow(a, b) if !b.depends_on_var() => {
                // d(a^e) = e a^(e-1) a'
                let e = (**b).clone();
                let reduced = match e.is_const() {
                    Some(v) => Const(v - 1.0),
                    None => Sub(Box::new(e.clone()), c(1.0)),
                };
                mul(mul(e, Pow(a.clone(), Box::new(reduced))), a.derivative())
            }
            Pow(a, b) => {
                // d(a^b) = a^b (b' log a + b a'/a)
                let term = add(
                    mul(b.derivative(), Log(a.clone())),
                    div(mul((**b).clone(), a.derivative()), (**a).clone()),
                );
                mul(self.clone(), term)
            }
            Log(a) => div(a.derivative(), (**a).clone()),
            Exp(a) => mul(self.clone(), a.derivative()),
        }
    }
}

fn powi(base: f64, e: i32) -> f64 {
    let mut acc = 1.0;
    for _ in 0..e.unsigned_abs() {
        acc *= base;
    }
    if e < 0 {
        1.0 / acc
    } else {
        acc
    }
}

// Constant-folding constructors keep derivative trees small.
fn neg(a: Node) -> Node {
    match a {
        Const(v) => Const(-v),
        other => Neg(Box::new(other)),
    }
}

fn add(a: Node, b: Node) -> Node {
    match (a.is_const(), b.is_const()) {
        (Some(x), Some(y)) => Const(x + y),
        (Some(0.0), _) => b,
        (_, Some(0.0)) => a,
        _ => Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Node, b: Node) -> Node {
    match (a.is_const(), b.is_const()) {
        (Some(x), Some(y)) => Const(x - y),
        (Some(0.0), _) => neg(b),
        (_, Some(0.0)) => a,
        _ => Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Node, b: Node) -> Node {
    match (a.is_const(), b.is_const()) {
        (Some(x), Some(y)) => Const(x * y),
        (Some(x), _) | (_, Some(x)) if x == 0.0 => Const(0.0),
        (Some(1.0), _) => b,
        (_, Some(1.0)) => a,
        _ => Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Node, b: Node) -> Node {
    match (a.is_const(), b.is_const()) {
        (Some(0.0), _) => Const(0.0),
        (_, Some(1.0)) => a,
        (Some(x), Some(y)) => Const(x / y),
        _ => Div(Box::new(a), Box::new(b)),
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, ch: u8) -> Result<(), ParseError> {
        match self.peek() {
            Some(c) if c == ch => {
                self.pos += 1;
                Ok(())
            }
            Some(c) => Err(ParseError::UnexpectedChar {
                ch: c as char,
                pos: self.pos,
            }),
            None => Err(ParseError::UnexpectedEnd),
        }
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    lhs = Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(b'-') => {
                    self.pos += 1;
                    lhs = Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    lhs = Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some(b'/') => {
                    self.pos += 1;
                    lhs = Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        let start = match self.peek() {
            Some(_) => self.pos,
            None => return Err(ParseError::UnexpectedEnd),
        };
        let ch = self.src[start];
        if ch == b'(' {
            self.pos += 1;
            let inner = self.expr()?;
            self.expect(b')')?;
            return Ok(inner);
        }
        if ch.is_ascii_digit() || ch == b'.' {
            return self.number();
        }
        if ch.is_ascii_alphabetic() {
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
                self.pos += 1;
            }
            let name = core::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
            return match name {
                "z" => Ok(Var),
                "log" | "exp" => {
                    self.expect(b'(')?;
                    let arg = Box::new(self.expr()?);
                    self.expect(b')')?;
                    Ok(if name == "log" { Log(arg) } else { Exp(arg) })
                }
                _ => Err(ParseError::UnknownIdent {
                    name: name.to_string(),
                    pos: start,
                }),
            };
        }
        Err(ParseError::UnexpectedChar {
            ch: ch as char,
            pos: start,
        })
    }

    fn number(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        let s = self.src;
        let digits = |p: &mut usize| {
            while *p < s.len() && s[*p].is_ascii_digit() {
                *p += 1;
            }
        };
        digits(&mut self.pos);
        if self.pos < s.len() && s[self.pos] == b'.' {
            self.pos += 1;
            digits(&mut self.pos);
        }
        if self.pos < s.len() && (s[self.pos] == b'e' || s[self.pos] == b'E') {
            let mut p = self.pos + 1;
            if p < s.len() && (s[p] == b'+' || s[p] == b'-') {
                p += 1;
            }
            if p < s.len() && s[p].is_ascii_digit() {
                self.pos = p;
                digits(&mut self.pos);
            }
        }
        let text = core::str::from_utf8(&s[start..self.pos]).unwrap_or("");
        text.parse::<f64>()
            .map(Const)
            .map_err(|_| ParseError::BadNumber { pos: start })
    }
}

/// A parsed expression in `z` together with its symbolic derivative.
#[derive(Debug, Clone)]
pub struct Expression {
    source: String,
    value: Node,
    derivative: Node,
}

impl Expression {
    pub fn parse(source: &str) -> Result<Self, ParseError> {
        let mut parser = Parser {
            src: source.as_bytes(),
            pos: 0,
        };
        let value = parser.expr()?;
        if parser.peek().is_some() {
            return Err(ParseError::Trailing { pos: parser.pos });
        }
        let derivative = value.derivative();
        Ok(Self {
            source: source.to_string(),
            value,
            derivative,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, z: f64) -> f64 {
        self.value.eval(z)
    }

    pub fn eval_derivative(&self, z: f64) -> f64 {
        self.derivative.eval(z)
    }
}

impl PartialEq for Expression {
    fn eq(&self, other: &Self) -> bool {
        self.value == other.value
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl core::str::FromStr for Expression {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

#[cfg(feature = "serde")]
impl serde::Serialize for Expression {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.source)
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for Expression {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Self::parse(&s).map_err(serde::de::Error::custom)
    }
}
