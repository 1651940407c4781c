//! Closed-form scalar fields of one or two variables.
//!
//! Expressions are parsed once into a small tree and then evaluated either
//! as plain `f64` or as a [`Jet2`] carrying value, gradient and Hessian.
//! Parse errors carry 1-based character positions; end of input is
//! reported at `len + 1`.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("function `{name}` at offset {offset} takes {expected} argument(s), found {found}")]
    Arity { name: String, offset: usize, expected: usize, found: usize },
    #[error("domain error: {op} at argument {arg}")]
    Domain { op: &'static str, arg: f64 },
    #[error("non-finite result while evaluating `{0}`")]
    NonFinite(String),
}

/// Value, gradient and Hessian of a scalar in two variables.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet2 {
    pub v: f64,
    pub g: [f64; 2],
    /// Packed symmetric Hessian `[h11, h12, h22]`.
    pub h: [f64; 3],
}

impl Jet2 {
    pub fn constant(v: f64) -> Self {
        Jet2 { v, ..Default::default() }
    }

    pub fn var(index: usize, v: f64) -> Self {
        let mut j = Jet2::constant(v);
        j.g[index] = 1.0;
        j
    }

    /// Compose with a scalar function given its value and first two derivatives at `self.v`.
    pub fn chain(self, f: f64, d1: f64, d2: f64) -> Self {
        let [g1, g2] = self.g;
        Jet2 {
            v: f,
            g: [d1 * g1, d1 * g2],
            h: [d1 * self.h[0] + d2 * g1 * g1, d1 * self.h[1] + d2 * g1 * g2, d1 * self.h[2] + d2 * g2 * g2],
        }
    }

    pub fn hessian(&self) -> [[f64; 2]; 2] {
        [[self.h[0], self.h[1]], [self.h[1], self.h[2]]]
    }

    /// First and second derivative along a fixed direction `d`.
    pub fn directional(&self, d: [f64; 2]) -> (f64, f64) {
        let first = self.g[0] * d[0] + self.g[1] * d[1];
        let second = self.h[0] * d[0] * d[0] + 2.0 * self.h[1] * d[0] * d[1] + self.h[2] * d[1] * d[1];
        (first, second)
    }

    pub fn is_finite(&self) -> bool {
        self.v.is_finite() && self.g.iter().all(|x| x.is_finite()) && self.h.iter().all(|x| x.is_finite())
    }

    pub fn recip(self) -> Self {
        let r = 1.0 / self.v;
        self.chain(r, -r * r, 2.0 * r * r * r)
    }
}

impl Add for Jet2 {
    type Output = Jet2;
    fn add(self, o: Jet2) -> Jet2 {
        Jet2 {
            v: self.v + o.v,
            g: [self.g[0] + o.g[0], self.g[1] + o.g[1]],
            h: [self.h[0] + o.h[0], self.h[1] + o.h[1], self.h[2] + o.h[2]],
        }
    }
}

impl Sub for Jet2 {
    type Output = Jet2;
    fn sub(self, o: Jet2) -> Jet2 {
        self + (-o)
    }
}

impl Neg for Jet2 {
    type Output = Jet2;
    fn neg(self) -> Jet2 {
        Jet2 { v: -self.v, g: [-self.g[0], -self.g[1]], h: [-self.h[0], -self.h[1], -self.h[2]] }
    }
}

impl Mul for Jet2 {
    type Output = Jet2;
    fn mul(self, o: Jet2) -> Jet2 {
        let (a, b) = (self, o);
        Jet2 {
            v: a.v * b.v,
            g: [a.v * b.g[0] + b.v * a.g[0], a.v * b.g[1] + b.v * a.g[1]],
            h: [
                a.v * b.h[0] + b.v * a.h[0] + 2.0 * a.g[0] * b.g[0],
                a.v * b.h[1] + b.v * a.h[1] + a.g[0] * b.g[1] + a.g[1] * b.g[0],
                a.v * b.h[2] + b.v * a.h[2] + 2.0 * a.g[1] * b.g[1],
            ],
        }
    }
}

impl Mul<f64> for Jet2 {
    type Output = Jet2;
    fn mul(self, c: f64) -> Jet2 {
        Jet2 { v: self.v * c, g: [self.g[0] * c, self.g[1] * c], h: [self.h[0] * c, self.h[1] * c, self.h[2] * c] }
    }
}

impl Div for Jet2 {
    type Output = Jet2;
    fn div(self, o: Jet2) -> Jet2 {
        self * o.recip()
    }
}

/// Operations the evaluator needs from its number type.
trait Scalar: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self> {
    fn cst(c: f64) -> Self;
    fn val(&self) -> f64;
    fn apply(self, f: f64, d1: f64, d2: f64) -> Self;
}

impl Scalar for f64 {
    fn cst(c: f64) -> Self {
        c
    }
    fn val(&self) -> f64 {
        *self
    }
    fn apply(self, f: f64, _d1: f64, _d2: f64) -> Self {
        f
    }
}

impl Scalar for Jet2 {
    fn cst(c: f64) -> Self {
        Jet2::constant(c)
    }
    fn val(&self) -> f64 {
        self.v
    }
    fn apply(self, f: f64, d1: f64, d2: f64) -> Self {
        self.chain(f, d1, d2)
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
    Tanh,
    Sinh,
    Cosh,
    Atan,
    Sech,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" | "ln" => Func::Log,
            "sqrt" => Func::Sqrt,
            "tanh" => Func::Tanh,
            "sinh" => Func::Sinh,
            "cosh" => Func::Cosh,
            "atan" => Func::Atan,
            "sech" => Func::Sech,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Tanh => "tanh",
            Func::Sinh => "sinh",
            Func::Cosh => "cosh",
            Func::Atan => "atan",
            Func::Sech => "sech",
        }
    }

    /// Value and first two derivatives at `x`.
    fn eval3(self, x: f64) -> Result<(f64, f64, f64), ExprError> {
        Ok(match self {
            Func::Sin => (x.sin(), x.cos(), -x.sin()),
            Func::Cos => (x.cos(), -x.sin(), -x.cos()),
            Func::Tan => {
                let t = x.tan();
                let s = 1.0 + t * t;
                (t, s, 2.0 * t * s)
            }
            Func::Exp => {
                let e = x.exp();
                (e, e, e)
            }
            Func::Log => {
                if x <= 0.0 {
                    return Err(ExprError::Domain { op: "log", arg: x });
                }
                (x.ln(), 1.0 / x, -1.0 / (x * x))
            }
            Func::Sqrt => {
                if x < 0.0 {
                    return Err(ExprError::Domain { op: "sqrt", arg: x });
                }
                let r = x.sqrt();
                (r, 0.5 / r, -0.25 / (r * x))
            }
            Func::Tanh => {
                let t = x.tanh();
                let s = 1.0 - t * t;
                (t, s, -2.0 * t * s)
            }
            Func::Sinh => (x.sinh(), x.cosh(), x.sinh()),
            Func::Cosh => (x.cosh(), x.sinh(), x.cosh()),
            Func::Atan => {
                let d = 1.0 / (1.0 + x * x);
                (x.atan(), d, -2.0 * x * d * d)
            }
            Func::Sech => {
                let s = 1.0 / x.cosh();
                let t = x.tanh();
                (s, -s * t, s * (t * t - s * s))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constant {
    Pi,
    E,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    Const(Constant),
    Var(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

impl Node {
    fn precedence(&self) -> u8 {
        match self {
            Node::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
            Node::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
            Node::Neg(_) => 3,
            Node::Bin(BinOp::Pow, ..) => 4,
            _ => 5,
        }
    }

    fn is_constant(&self) -> bool {
        match self {
            Node::Num(_) | Node::Const(_) => true,
            Node::Var(_) => false,
            Node::Neg(a) | Node::Call(_, a) => a.is_constant(),
            Node::Bin(_, a, b) => a.is_constant() && b.is_constant(),
        }
    }

    fn eval<S: Scalar>(&self, vars: &[S]) -> Result<S, ExprError> {
        match self {
            Node::Num(c) => Ok(S::cst(*c)),
            Node::Const(Constant::Pi) => Ok(S::cst(std::f64::consts::PI)),
            Node::Const(Constant::E) => Ok(S::cst(std::f64::consts::E)),
            Node::Var(i) => Ok(vars[*i]),
            Node::Neg(a) => Ok(-a.eval(vars)?),
            Node::Call(f, a) => {
                let x = a.eval(vars)?;
                let (v, d1, d2) = f.eval3(x.val())?;
                Ok(x.apply(v, d1, d2))
            }
            Node::Bin(op, a, b) => {
                let x = a.eval(vars)?;
                match op {
                    BinOp::Add => Ok(x + b.eval(vars)?),
                    BinOp::Sub => Ok(x - b.eval(vars)?),
                    BinOp::Mul => Ok(x * b.eval(vars)?),
                    BinOp::Div => {
                        let y = b.eval(vars)?;
                        let d = y.val();
                        if d == 0.0 {
                            return Err(ExprError::Domain { op: "division", arg: d });
                        }
                        let r = 1.0 / d;
                        Ok(x * y.apply(r, -r * r, 2.0 * r * r * r))
                    }
                    BinOp::Pow => pow(x, b, vars),
                }
            }
        }
    }
}

fn pow<S: Scalar>(x: S, exponent: &Node, vars: &[S]) -> Result<S, ExprError> {
    let a = x.val();
    if exponent.is_constant() {
        let c: f64 = exponent.eval::<f64>(&[0.0, 0.0])?;
        if c == 0.0 {
            return Ok(S::cst(1.0));
        }
        if c.fract() == 0.0 && c.abs() < 1e9 {
            let n = c as i32;
            if a == 0.0 && n < 0 {
                return Err(ExprError::Domain { op: "power", arg: a });
            }
            let d1 = c * a.powi(n - 1);
            let d2 = if n == 1 { 0.0 } else { c * (c - 1.0) * a.powi(n - 2) };
            return Ok(x.apply(a.powi(n), d1, d2));
        }
        if a < 0.0 || (a == 0.0 && c < 0.0) {
            return Err(ExprError::Domain { op: "power", arg: a });
        }
        return Ok(x.apply(a.powf(c), c * a.powf(c - 1.0), c * (c - 1.0) * a.powf(c - 2.0)));
    }
    if a <= 0.0 {
        return Err(ExprError::Domain { op: "power", arg: a });
    }
    let y = exponent.eval(vars)?;
    let l = x.apply(a.ln(), 1.0 / a, -1.0 / (a * a));
    let e = (y * l).val().exp();
    Ok((y * l).apply(e, e, e))
}

/// A parsed expression together with its variable names.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    pub root: Node,
    vars: Vec<String>,
    source: String,
}

impl Expression {
    /// Parse a field expression in the variables `y1`, `y2`.
    pub fn parse(src: &str) -> Result<Self, ExprError> {
        Self::parse_with_vars(src, &["y1", "y2"])
    }

    /// Parse a curve expression in the single variable `s`.
    pub fn parse_curve(src: &str) -> Result<Self, ExprError> {
        Self::parse_with_vars(src, &["s"])
    }

    pub fn parse_with_vars(src: &str, vars: &[&str]) -> Result<Self, ExprError> {
        assert!(vars.len() <= 2, "at most two variables are supported");
        let mut p = Parser { chars: src.chars().collect(), pos: 0, vars };
        let root = p.expr()?;
        p.skip_ws();
        if p.pos < p.chars.len() {
            return Err(p.syntax(format!("unexpected `{}`", p.chars[p.pos])));
        }
        Ok(Expression { root, vars: vars.iter().map(|s| s.to_string()).collect(), source: src.to_string() })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn is_constant(&self) -> bool {
        self.root.is_constant()
    }

    pub fn eval(&self, y: [f64; 2]) -> Result<f64, ExprError> {
        let v = self.root.eval(&y)?;
        if !v.is_finite() {
            return Err(ExprError::NonFinite(self.source.clone()));
        }
        Ok(v)
    }

    pub fn jet(&self, y: [f64; 2]) -> Result<Jet2, ExprError> {
        let j = self.root.eval(&[Jet2::var(0, y[0]), Jet2::var(1, y[1])])?;
        if !j.is_finite() {
            return Err(ExprError::NonFinite(self.source.clone()));
        }
        Ok(j)
    }

    /// Value, first and second derivative of a one-variable expression.
    pub fn eval_curve(&self, s: f64) -> Result<(f64, f64, f64), ExprError> {
        let j = self.jet([s, 0.0])?;
        Ok((j.v, j.g[0], j.h[0]))
    }

    /// Canonical text that re-parses to the same tree.
    pub fn pretty(&self) -> String {
        let mut out = String::new();
        self.write_node(&self.root, &mut out);
        out
    }

    fn write_child(&self, node: &Node, min_prec: u8, out: &mut String) {
        if node.precedence() < min_prec {
            out.push('(');
            self.write_node(node, out);
            out.push(')');
        } else {
            self.write_node(node, out);
        }
    }

    fn write_node(&self, node: &Node, out: &mut String) {
        match node {
            Node::Num(c) => {
                if *c < 0.0 {
                    out.push_str(&format!("({c:?})"));
                } else {
                    out.push_str(&format!("{c:?}"));
                }
            }
            Node::Const(Constant::Pi) => out.push_str("pi"),
            Node::Const(Constant::E) => out.push('e'),
            Node::Var(i) => out.push_str(&self.vars[*i]),
            Node::Neg(a) => {
                out.push('-');
                self.write_child(a, 3, out);
            }
            Node::Call(f, a) => {
                out.push_str(f.name());
                out.push('(');
                self.write_node(a, out);
                out.push(')');
            }
            Node::Bin(op, a, b) => {
                let (sym, p) = match op {
                    BinOp::Add => (" + ", 1),
                    BinOp::Sub => (" - ", 1),
                    BinOp::Mul => (" * ", 2),
                    BinOp::Div => (" / ", 2),
                    BinOp::Pow => ("^", 4),
                };
                if *op == BinOp::Pow {
                    self.write_child(a, 5, out);
                    out.push_str(sym);
                    self.write_child(b, 3, out);
                } else {
                    self.write_child(a, p, out);
                    out.push_str(sym);
                    self.write_child(b, p + 1, out);
                }
            }
        }
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.pretty())
    }
}

struct Parser<'a> {
    chars: Vec<char>,
    pos: usize,
    vars: &'a [&'a str],
}

impl Parser<'_> {
    fn syntax(&self, message: String) -> ExprError {
        ExprError::Syntax { offset: self.pos + 1, message }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        while let Some(c @ ('+' | '-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(c @ ('*' | '/')) = self.peek() {
            self.pos += 1;
            let rhs = self.unary()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        match self.peek() {
            Some('-') => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if self.peek() == Some('^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        match self.peek() {
            None => Err(self.syntax("unexpected end of input".into())),
            Some('(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(')') {
                    return Err(self.syntax("expected `)`".into()));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) if c.is_alphabetic() || c == '_' => self.ident(),
            Some(c) => Err(self.syntax(format!("unexpected `{c}`"))),
        }
    }

    fn number(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        let n = self.chars.len();
        while self.pos < n && (self.chars[self.pos].is_ascii_digit() || self.chars[self.pos] == '.') {
            self.pos += 1;
        }
        if self.pos < n && matches!(self.chars[self.pos], 'e' | 'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < n && matches!(self.chars[self.pos], '+' | '-') {
                self.pos += 1;
            }
            if self.pos < n && self.chars[self.pos].is_ascii_digit() {
                while self.pos < n && self.chars[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            } else {
                // `2e` followed by something else: treat `e` as the next token.
                self.pos = save;
            }
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        text.parse::<f64>()
            .map(Node::Num)
            .map_err(|_| ExprError::Syntax { offset: start + 1, message: format!("malformed number `{text}`") })
    }

    fn ident(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        while self.pos < self.chars.len() && (self.chars[self.pos].is_alphanumeric() || self.chars[self.pos] == '_') {
            self.pos += 1;
        }
        let name: String = self.chars[start..self.pos].iter().collect();
        if let Some(i) = self.vars.iter().position(|v| *v == name) {
            return Ok(Node::Var(i));
        }
        match name.as_str() {
            "pi" => return Ok(Node::Const(Constant::Pi)),
            "e" => return Ok(Node::Const(Constant::E)),
            _ => {}
        }
        let Some(func) = Func::from_name(&name) else {
            return Err(ExprError::UnknownIdentifier { name, offset: start + 1 });
        };
        if self.peek() != Some('(') {
            return Err(ExprError::Arity { name, offset: start + 1, expected: 1, found: 0 });
        }
        self.pos += 1;
        if self.peek() == Some(')') {
            return Err(ExprError::Arity { name, offset: start + 1, expected: 1, found: 0 });
        }
        let arg = self.expr()?;
        let mut found = 1;
        while self.peek() == Some(',') {
            self.pos += 1;
            self.expr()?;
            found += 1;
        }
        if found != 1 {
            return Err(ExprError::Arity { name, offset: start + 1, expected: 1, found });
        }
        if self.peek() != Some(')') {
            return Err(self.syntax("expected `)`".into()));
        }
        self.pos += 1;
        Ok(Node::Call(func, Box::new(arg)))
    }
}

/// Named pair of anisotropy coefficients and potential.
#[derive(Debug, Clone)]
pub struct Fields {
    pub a1: Expression,
    pub a2: Expression,
    pub v: Expression,
}

/// Jets of the three fields at one point.
#[derive(Debug, Clone, Copy)]
pub struct FieldJets {
    pub a1: Jet2,
    pub a2: Jet2,
    pub v: Jet2,
}

impl Fields {
    pub fn parse(a1: &str, a2: &str, v: &str) -> Result<Self, ExprError> {
        Ok(Fields { a1: Expression::parse(a1)?, a2: Expression::parse(a2)?, v: Expression::parse(v)? })
    }

    pub fn jets(&self, y: [f64; 2]) -> Result<FieldJets, ExprError> {
        Ok(FieldJets { a1: self.a1.jet(y)?, a2: self.a2.jet(y)?, v: self.v.jet(y)? })
    }
}
