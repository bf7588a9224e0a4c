//! A small arithmetic expression language evaluated on jets, used for inline
//! metrics, densities and immersions in run configurations.
//!
//! Grammar: `+ - * / ^` (also `− × ÷`), unary minus, parentheses, numbers,
//! the constants `pi` and `e`, functions `exp log ln sin cos tan sinh cosh
//! tanh sqrt pow(a, b)` and named variables.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, WsecError};
use crate::jet::Jet;
use crate::manifold::{MetricDensitySpec, MetricField, ScalarField};

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Bin(Op, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Tan,
    Sinh,
    Cosh,
    Tanh,
    Sqrt,
    Pow,
}

impl Func {
    fn lookup(name: &str) -> Option<(Func, usize)> {
        Some(match name {
            "exp" => (Func::Exp, 1),
            "log" | "ln" => (Func::Log, 1),
            "sin" => (Func::Sin, 1),
            "cos" => (Func::Cos, 1),
            "tan" => (Func::Tan, 1),
            "sinh" => (Func::Sinh, 1),
            "cosh" => (Func::Cosh, 1),
            "tanh" => (Func::Tanh, 1),
            "sqrt" => (Func::Sqrt, 1),
            "pow" => (Func::Pow, 2),
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

fn tokenize(src: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            c if c.is_whitespace() => i += 1,
            '0'..='9' | '.' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text: String = chars[start..i].iter().collect();
                let v = text.parse::<f64>().map_err(|_| WsecError::Config(format!("bad number '{text}' in '{src}'")))?;
                out.push(Tok::Num(v));
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Tok::Ident(chars[start..i].iter().collect()));
            }
            '+' | '-' | '*' | '/' | '^' => {
                out.push(Tok::Op(c));
                i += 1;
            }
            '−' => {
                out.push(Tok::Op('-'));
                i += 1;
            }
            '×' | '·' => {
                out.push(Tok::Op('*'));
                i += 1;
            }
            '÷' => {
                out.push(Tok::Op('/'));
                i += 1;
            }
            '(' => {
                out.push(Tok::LParen);
                i += 1;
            }
            ')' => {
                out.push(Tok::RParen);
                i += 1;
            }
            ',' => {
                out.push(Tok::Comma);
                i += 1;
            }
            _ => return Err(WsecError::Config(format!("unexpected character '{c}' in '{src}'"))),
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<Tok>,
    pos: usize,
    vars: &'a [String],
    src: &'a str,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> WsecError {
        WsecError::Config(format!("{msg} in expression '{}'", self.src))
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek() {
            let op = if *c == '+' { Op::Add } else { Op::Sub };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(c @ ('*' | '/'))) = self.peek() {
            let op = if *c == '*' { Op::Mul } else { Op::Div };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(Tok::Op('-')) => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some(Tok::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    // right associative, binds tighter than unary minus on its left
    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Bin(Op::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.next() {
            Some(Tok::Num(v)) => Ok(Expr::Num(v)),
            Some(Tok::LParen) => {
                let e = self.expr()?;
                match self.next() {
                    Some(Tok::RParen) => Ok(e),
                    _ => Err(self.err("missing ')'")),
                }
            }
            Some(Tok::Ident(name)) => {
                if let Some(Tok::LParen) = self.peek() {
                    let (f, arity) = Func::lookup(&name).ok_or_else(|| self.err(&format!("unknown function '{name}'")))?;
                    self.pos += 1;
                    let mut args = vec![self.expr()?];
                    while let Some(Tok::Comma) = self.peek() {
                        self.pos += 1;
                        args.push(self.expr()?);
                    }
                    match self.next() {
                        Some(Tok::RParen) => {}
                        _ => return Err(self.err("missing ')' after arguments")),
                    }
                    if args.len() != arity {
                        return Err(self.err(&format!("'{name}' takes {arity} argument(s), got {}", args.len())));
                    }
                    return Ok(Expr::Call(f, args));
                }
                if let Some(i) = self.vars.iter().position(|v| *v == name) {
                    return Ok(Expr::Var(i));
                }
                match name.as_str() {
                    "pi" => Ok(Expr::Num(std::f64::consts::PI)),
                    "e" => Ok(Expr::Num(std::f64::consts::E)),
                    _ => Err(self.err(&format!("unknown variable '{name}'"))),
                }
            }
            Some(t) => Err(self.err(&format!("unexpected token {t:?}"))),
            None => Err(self.err("unexpected end")),
        }
    }
}

impl Expr {
    /// Parses `src` with the given variable names bound to argument slots.
    pub fn parse(src: &str, vars: &[String]) -> Result<Expr> {
        let toks = tokenize(src)?;
        let mut p = Parser { toks, pos: 0, vars, src };
        let e = p.expr()?;
        if p.pos != p.toks.len() {
            return Err(p.err("trailing input"));
        }
        Ok(e)
    }

    fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Num(v) => Some(*v),
            Expr::Neg(a) => a.as_const().map(|v| -v),
            _ => None,
        }
    }

    pub fn eval(&self, x: &[Jet]) -> Jet {
        match self {
            Expr::Num(v) => Jet::constant(*v),
            Expr::Var(i) => x[*i],
            Expr::Neg(a) => -a.eval(x),
            Expr::Bin(op, a, b) => {
                let l = a.eval(x);
                match op {
                    Op::Add => l + b.eval(x),
                    Op::Sub => l - b.eval(x),
                    Op::Mul => l * b.eval(x),
                    Op::Div => l / b.eval(x),
                    Op::Pow => pow(l, b, x),
                }
            }
            Expr::Call(f, args) => {
                let a = args[0].eval(x);
                match f {
                    Func::Exp => a.exp(),
                    Func::Log => a.ln(),
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Tan => a.tan(),
                    Func::Sinh => a.sinh(),
                    Func::Cosh => a.cosh(),
                    Func::Tanh => a.tanh(),
                    Func::Sqrt => a.sqrt(),
                    Func::Pow => pow(a, &args[1], x),
                }
            }
        }
    }

    pub fn eval_f64(&self, x: &[f64]) -> f64 {
        self.eval(&Jet::consts(x)).value()
    }
}

fn pow(base: Jet, exp: &Expr, x: &[Jet]) -> Jet {
    match exp.as_const() {
        Some(k) if k.fract() == 0.0 && k.abs() <= 64.0 => base.powi(k as i32),
        Some(k) => base.powf(k),
        None => base.pow(exp.eval(x)),
    }
}

/// Variable names x1..xn.
pub fn coordinate_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).collect()
}

/// Variable names for immersion parameters: u1..um, plus `u` as an alias
/// of u1 when m = 1.
fn parameter_names(m: usize) -> Vec<String> {
    let mut v: Vec<String> = (1..=m).map(|i| format!("u{i}")).collect();
    if m == 1 {
        v.push("u".into());
    }
    v
}

pub fn parse_scalar(src: &str, n: usize) -> Result<ScalarField> {
    let e = Arc::new(Expr::parse(src, &coordinate_names(n))?);
    Ok(Arc::new(move |x: &[Jet]| e.eval(x)))
}

/// Parses an immersion u ↦ (x1(u), …, xn(u)) from m parameters.
pub fn parse_immersion(srcs: &[String], m: usize) -> Result<crate::tube::Immersion> {
    let names = parameter_names(m);
    let alias = names.len() > m;
    let exprs: Vec<Expr> = srcs.iter().map(|s| Expr::parse(s, &names)).collect::<Result<_>>()?;
    Ok(Arc::new(move |u: &[Jet]| {
        if alias {
            let ext = [u[0], u[0]];
            exprs.iter().map(|e| e.eval(&ext)).collect()
        } else {
            exprs.iter().map(|e| e.eval(u)).collect()
        }
    }))
}

/// Metric given either as a full matrix of expressions or as a conformal
/// factor c(x) with g = c·δ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricExpr {
    Matrix(Vec<Vec<String>>),
    Conformal { conformal: String },
}

/// Inline space definition inside a run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InlineSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub dim: usize,
    #[serde(default)]
    pub metric: Option<MetricExpr>,
    #[serde(default)]
    pub density: Option<String>,
    /// Sampling box, one (lo, hi) pair per coordinate.
    #[serde(rename = "box", default)]
    pub bounds: Option<Vec<(f64, f64)>>,
    #[serde(default)]
    pub periods: Option<Vec<f64>>,
}

fn default_name() -> String {
    "inline".into()
}

impl InlineSpec {
    /// Builds the space and checks that metric and density evaluate to finite
    /// second-order jets at the box center and that the metric is positive
    /// definite there.
    pub fn build(&self) -> Result<MetricDensitySpec> {
        let n = self.dim;
        if n == 0 || n > crate::jet::MAX_DIM {
            return Err(WsecError::Config(format!("inline dimension {n} out of range")));
        }
        let names = coordinate_names(n);
        let metric: MetricField = match &self.metric {
            None => Arc::new(move |_x: &[Jet]| {
                (0..n * n).map(|k| Jet::constant(if k / n == k % n { 1.0 } else { 0.0 })).collect()
            }),
            Some(MetricExpr::Conformal { conformal }) => {
                let c = Expr::parse(conformal, &names)?;
                Arc::new(move |x: &[Jet]| {
                    let v = c.eval(x);
                    (0..n * n).map(|k| if k / n == k % n { v } else { Jet::constant(0.0) }).collect()
                })
            }
            Some(MetricExpr::Matrix(rows)) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(WsecError::Config(format!("metric must be {n}x{n}")));
                }
                let mut es = Vec::with_capacity(n * n);
                for i in 0..n {
                    for j in 0..n {
                        let a = Expr::parse(&rows[i][j], &names)?;
                        if j < i {
                            let b = Expr::parse(&rows[j][i], &names)?;
                            if a != b {
                                return Err(WsecError::Config(format!("metric entries ({i},{j}) and ({j},{i}) differ")));
                            }
                        }
                        es.push(a);
                    }
                }
                Arc::new(move |x: &[Jet]| es.iter().map(|e| e.eval(x)).collect())
            }
        };
        let density = match &self.density {
            Some(d) => parse_scalar(d, n)?,
            None => Arc::new(|_x: &[Jet]| Jet::constant(0.0)) as ScalarField,
        };
        let bounds = self.bounds.clone().unwrap_or_else(|| vec![(-1.0, 1.0); n]);
        if bounds.len() != n {
            return Err(WsecError::Config(format!("box must have {n} intervals")));
        }
        let mut spec = MetricDensitySpec::new(self.name.clone(), n, metric, density).with_box(bounds.clone());
        if let Some(p) = &self.periods {
            if p.len() != n {
                return Err(WsecError::Config(format!("periods must have {n} entries")));
            }
            spec = spec.with_periods(p.clone());
        }
        let center: Vec<f64> = bounds.iter().map(|(a, b)| 0.5 * (a + b)).collect();
        let x = Jet::seed(&center, 2);
        let g = (spec.metric)(&x);
        let phi = (spec.density)(&x);
        if !g.iter().all(|j| j.is_finite()) || !phi.is_finite() {
            return Err(WsecError::Config(format!("'{}' does not differentiate cleanly at {center:?}", self.name)));
        }
        spec.metric_at(&center)
            .cholesky()
            .ok_or_else(|| WsecError::Config(format!("metric of '{}' is not positive definite at {center:?}", self.name)))?;
        Ok(spec)
    }
}
