//! Closed-form function descriptors parsed from config strings.
//!
//! Grammar: numeric literals, `pi`, coordinates `x1`, `x2`, the height `xn`
//! and time `t`, the operators `+ - * / ^` with unary minus, parentheses, and
//! the functions `sin cos exp log sqrt tanh abs pow min max`.

use crate::error::{LabError, Result};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    /// Spatial coordinate, zero-based (`x1` -> X(0)).
    X(usize),
    /// Height coordinate `xn` (alias for the last coordinate in full-space contexts).
    Xn,
    /// Time.
    T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Neg,
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Tanh,
    Abs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Unary(Unary, Box<Expr>),
    Binary(Binary, Box<Expr>, Box<Expr>),
}

/// Evaluation point: spatial coordinates, optional height slot, time.
#[derive(Debug, Clone, Copy)]
pub struct Point<'a> {
    pub x: &'a [f64],
    pub xn: Option<f64>,
    pub t: f64,
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        Parser::new(src)?.parse()
    }

    pub fn eval(&self, p: Point<'_>) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(Var::X(k)) => p.x[*k],
            Expr::Var(Var::Xn) => p.xn.expect("xn not available; call validate first"),
            Expr::Var(Var::T) => p.t,
            Expr::Unary(op, a) => {
                let v = a.eval(p);
                match op {
                    Unary::Neg => -v,
                    Unary::Sin => v.sin(),
                    Unary::Cos => v.cos(),
                    Unary::Exp => v.exp(),
                    Unary::Log => v.ln(),
                    Unary::Sqrt => v.sqrt(),
                    Unary::Tanh => v.tanh(),
                    Unary::Abs => v.abs(),
                }
            }
            Expr::Binary(op, a, b) => {
                let (l, r) = (a.eval(p), b.eval(p));
                match op {
                    Binary::Add => l + r,
                    Binary::Sub => l - r,
                    Binary::Mul => l * r,
                    Binary::Div => l / r,
                    Binary::Pow => l.powf(r),
                    Binary::Min => l.min(r),
                    Binary::Max => l.max(r),
                }
            }
        }
    }

    /// Evaluate as a height function f(x, t); `xn` must not occur.
    pub fn eval_graph(&self, x: &[f64], t: f64) -> f64 {
        self.eval(Point { x, xn: None, t })
    }

    /// Evaluate as an ambient function g(x, xn, t).
    pub fn eval_ambient(&self, x: &[f64], xn: f64, t: f64) -> f64 {
        self.eval(Point { x, xn: Some(xn), t })
    }

    /// Check the variables used fit the context: at most `sdim` spatial
    /// coordinates, `xn` only if `allow_xn`.
    pub fn validate(&self, sdim: usize, allow_xn: bool) -> Result<()> {
        match self {
            Expr::Const(_) => Ok(()),
            Expr::Var(Var::X(k)) => {
                if *k < sdim {
                    Ok(())
                } else {
                    Err(LabError::Expr(format!(
                        "coordinate x{} not available (only {} spatial coordinate(s))",
                        k + 1,
                        sdim
                    )))
                }
            }
            Expr::Var(Var::Xn) => {
                if allow_xn {
                    Ok(())
                } else {
                    Err(LabError::Expr(
                        "height variable xn not allowed in this context".into(),
                    ))
                }
            }
            Expr::Var(Var::T) => Ok(()),
            Expr::Unary(_, a) => a.validate(sdim, allow_xn),
            Expr::Binary(_, a, b) => {
                a.validate(sdim, allow_xn)?;
                b.validate(sdim, allow_xn)
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(Var::X(k)) => write!(f, "x{}", k + 1),
            Expr::Var(Var::Xn) => write!(f, "xn"),
            Expr::Var(Var::T) => write!(f, "t"),
            Expr::Unary(Unary::Neg, a) => write!(f, "(-{a})"),
            Expr::Unary(op, a) => {
                let name = match op {
                    Unary::Sin => "sin",
                    Unary::Cos => "cos",
                    Unary::Exp => "exp",
                    Unary::Log => "log",
                    Unary::Sqrt => "sqrt",
                    Unary::Tanh => "tanh",
                    Unary::Abs => "abs",
                    Unary::Neg => unreachable!(),
                };
                write!(f, "{name}({a})")
            }
            Expr::Binary(op, a, b) => match op {
                Binary::Add => write!(f, "({a} + {b})"),
                Binary::Sub => write!(f, "({a} - {b})"),
                Binary::Mul => write!(f, "({a} * {b})"),
                Binary::Div => write!(f, "({a} / {b})"),
                Binary::Pow => write!(f, "({a} ^ {b})"),
                Binary::Min => write!(f, "min({a}, {b})"),
                Binary::Max => write!(f, "max({a}, {b})"),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn new(src: &str) -> Result<Parser> {
        let mut toks = Vec::new();
        let bytes: Vec<char> = src.chars().collect();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i];
            match c {
                ' ' | '\t' | '\n' | '\r' => i += 1,
                '+' => {
                    toks.push(Tok::Plus);
                    i += 1;
                }
                '-' | '−' => {
                    toks.push(Tok::Minus);
                    i += 1;
                }
                '*' | '×' => {
                    toks.push(Tok::Star);
                    i += 1;
                }
                '/' => {
                    toks.push(Tok::Slash);
                    i += 1;
                }
                '^' => {
                    toks.push(Tok::Caret);
                    i += 1;
                }
                '(' => {
                    toks.push(Tok::LParen);
                    i += 1;
                }
                ')' => {
                    toks.push(Tok::RParen);
                    i += 1;
                }
                ',' => {
                    toks.push(Tok::Comma);
                    i += 1;
                }
                c if c.is_ascii_digit() || c == '.' => {
                    let start = i;
                    while i < bytes.len()
                        && (bytes[i].is_ascii_digit()
                            || bytes[i] == '.'
                            || bytes[i] == 'e'
                            || bytes[i] == 'E'
                            || ((bytes[i] == '+' || bytes[i] == '-')
                                && i > start
                                && (bytes[i - 1] == 'e' || bytes[i - 1] == 'E')))
                    {
                        i += 1;
                    }
                    let s: String = bytes[start..i].iter().collect();
                    let v: f64 = s
                        .parse()
                        .map_err(|_| LabError::Expr(format!("bad number literal '{s}'")))?;
                    toks.push(Tok::Num(v));
                }
                c if c.is_ascii_alphabetic() || c == '_' => {
                    let start = i;
                    while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == '_') {
                        i += 1;
                    }
                    toks.push(Tok::Ident(bytes[start..i].iter().collect()));
                }
                other => {
                    return Err(LabError::Expr(format!("unexpected character '{other}'")));
                }
            }
        }
        Ok(Parser { toks, pos: 0 })
    }

    fn parse(&mut self) -> Result<Expr> {
        let e = self.expr()?;
        if self.pos != self.toks.len() {
            return Err(LabError::Expr(format!(
                "trailing tokens after expression (at token {})",
                self.pos
            )));
        }
        Ok(e)
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, t: &Tok, what: &str) -> Result<()> {
        match self.bump() {
            Some(ref got) if got == t => Ok(()),
            got => Err(LabError::Expr(format!("expected {what}, got {got:?}"))),
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.bump();
                    let rhs = self.term()?;
                    lhs = Expr::Binary(Binary::Add, Box::new(lhs), Box::new(rhs));
                }
                Some(Tok::Minus) => {
                    self.bump();
                    let rhs = self.term()?;
                    lhs = Expr::Binary(Binary::Sub, Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.bump();
                    let rhs = self.unary()?;
                    lhs = Expr::Binary(Binary::Mul, Box::new(lhs), Box::new(rhs));
                }
                Some(Tok::Slash) => {
                    self.bump();
                    let rhs = self.unary()?;
                    lhs = Expr::Binary(Binary::Div, Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if matches!(self.peek(), Some(Tok::Minus)) {
            self.bump();
            let inner = self.unary()?;
            return Ok(Expr::Unary(Unary::Neg, Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if matches!(self.peek(), Some(Tok::Caret)) {
            self.bump();
            // right associative, and `-` binds tighter in the exponent
            let exp = self.unary()?;
            return Ok(Expr::Binary(Binary::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.bump() {
            Some(Tok::Num(v)) => Ok(Expr::Const(v)),
            Some(Tok::LParen) => {
                let e = self.expr()?;
                self.expect(&Tok::RParen, "')'")?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                if matches!(self.peek(), Some(Tok::LParen)) {
                    self.bump();
                    let mut args = vec![self.expr()?];
                    while matches!(self.peek(), Some(Tok::Comma)) {
                        self.bump();
                        args.push(self.expr()?);
                    }
                    self.expect(&Tok::RParen, "')'")?;
                    return Self::call(&name, args);
                }
                match name.as_str() {
                    "xn" => Ok(Expr::Var(Var::Xn)),
                    "t" => Ok(Expr::Var(Var::T)),
                    "pi" => Ok(Expr::Const(std::f64::consts::PI)),
                    s if s.starts_with('x') => {
                        let k: usize = s[1..]
                            .parse()
                            .map_err(|_| LabError::Expr(format!("unknown variable '{s}'")))?;
                        if k == 0 {
                            return Err(LabError::Expr("coordinates are 1-based (x1, x2)".into()));
                        }
                        Ok(Expr::Var(Var::X(k - 1)))
                    }
                    s => Err(LabError::Expr(format!("unknown identifier '{s}'"))),
                }
            }
            got => Err(LabError::Expr(format!("expected a value, got {got:?}"))),
        }
    }

    fn call(name: &str, mut args: Vec<Expr>) -> Result<Expr> {
        let unary = |op, mut args: Vec<Expr>| {
            if args.len() != 1 {
                return Err(LabError::Expr(format!("{name} takes one argument")));
            }
            Ok(Expr::Unary(op, Box::new(args.remove(0))))
        };
        match name {
            "sin" => unary(Unary::Sin, args),
            "cos" => unary(Unary::Cos, args),
            "exp" => unary(Unary::Exp, args),
            "log" => unary(Unary::Log, args),
            "sqrt" => unary(Unary::Sqrt, args),
            "tanh" => unary(Unary::Tanh, args),
            "abs" => unary(Unary::Abs, args),
            "pow" | "min" | "max" => {
                if args.len() != 2 {
                    return Err(LabError::Expr(format!("{name} takes two arguments")));
                }
                let b = args.remove(1);
                let a = args.remove(0);
                let op = match name {
                    "pow" => Binary::Pow,
                    "min" => Binary::Min,
                    _ => Binary::Max,
                };
                Ok(Expr::Binary(op, Box::new(a), Box::new(b)))
            }
            other => Err(LabError::Expr(format!("unknown function '{other}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: &str, x: &[f64], xn: f64, t: f64) -> f64 {
        Expr::parse(src).unwrap().eval_ambient(x, xn, t)
    }

    #[test]
    fn arithmetic_and_precedence() {
        assert_eq!(ev("1 + 2 * 3", &[], 0.0, 0.0), 7.0);
        assert_eq!(ev("(1 + 2) * 3", &[], 0.0, 0.0), 9.0);
        assert_eq!(ev("2 ^ 3 ^ 2", &[], 0.0, 0.0), 512.0); // right assoc
        assert_eq!(ev("-2 ^ 2", &[], 0.0, 0.0), -4.0); // pow binds tighter than unary minus
        assert_eq!(ev("6 / 3 / 2", &[], 0.0, 0.0), 1.0);
    }

    #[test]
    fn variables_and_functions() {
        assert_eq!(ev("x1 * t + xn", &[2.0], 5.0, 3.0), 11.0);
        let v = ev("t - log(cos(0.5 * x1))", &[0.0], 0.0, 1.0);
        assert!((v - 1.0).abs() < 1e-15);
        assert_eq!(ev("min(3, max(1, 2))", &[], 0.0, 0.0), 2.0);
        assert_eq!(ev("pow(2, 10)", &[], 0.0, 0.0), 1024.0);
        assert!((ev("sin(pi)", &[], 0.0, 0.0)).abs() < 1e-15);
    }

    #[test]
    fn validation_gates() {
        let e = Expr::parse("x2 + xn").unwrap();
        assert!(e.validate(2, true).is_ok());
        assert!(e.validate(1, true).is_err()); // x2 out of range
        assert!(Expr::parse("xn").unwrap().validate(2, false).is_err());
        assert!(Expr::parse("x1 +").is_err());
        assert!(Expr::parse("foo(1)").is_err());
        assert!(Expr::parse("x0").is_err());
    }

    #[test]
    fn display_roundtrip() {
        for src in ["t - log(cos(x1))", "min(x1, 2) ^ 2 + abs(xn)", "-x1 * t"] {
            let e = Expr::parse(src).unwrap();
            let back = Expr::parse(&e.to_string()).unwrap();
            let p = Point {
                x: &[0.37],
                xn: Some(-0.82),
                t: 0.41,
            };
            assert_eq!(e.eval(p), back.eval(p));
        }
    }
}
