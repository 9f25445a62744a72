//! Scalar field expressions over `(q1, q2, q3, t)`.
//!
//! Grammar:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := base ('^' int)?
//! base   := number | ident | ident '(' expr ')' | '(' expr ')' | '-' base
//! ```
//!
//! Identifiers are the variables `q1 q2 q3 t`, declared parameters, and the
//! functions `sin cos exp sqrt`. Exponents are integer literals, optionally
//! signed. The parameter `c` is always declared and bound to the speed
//! constant at evaluation time.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Parameter name always available to expressions.
pub const SPEED_PARAM: &str = "c";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("lexical error at byte {offset}: unexpected character {found:?}")]
    Lexical { offset: usize, found: char },
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("division by constant zero at byte {offset}")]
    ZeroDivisor { offset: usize },
    #[error("parameter `{0}` is not bound")]
    UnboundParameter(String),
    #[error("expression evaluated to a non-finite value ({value}) at q=({q1}, {q2}, {q3}), t={t}")]
    NonFinite { value: f64, q1: f64, q2: f64, q3: f64, t: f64 },
}

impl ExprError {
    /// Stable machine-readable tag.
    pub fn code(&self) -> &'static str {
        match self {
            ExprError::Lexical { .. } => "lexical",
            ExprError::Syntax { .. } => "syntax",
            ExprError::UnknownIdentifier { .. } => "unknown-identifier",
            ExprError::ZeroDivisor { .. } => "zero-divisor",
            ExprError::UnboundParameter(_) => "unbound-parameter",
            ExprError::NonFinite { .. } => "non-finite",
        }
    }

    pub fn offset(&self) -> Option<usize> {
        match self {
            ExprError::Lexical { offset, .. }
            | ExprError::Syntax { offset, .. }
            | ExprError::UnknownIdentifier { offset, .. }
            | ExprError::ZeroDivisor { offset } => Some(*offset),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    Q1,
    Q2,
    Q3,
    T,
}

impl Var {
    pub const SPATIAL: [Var; 3] = [Var::Q1, Var::Q2, Var::Q3];

    pub fn name(self) -> &'static str {
        match self {
            Var::Q1 => "q1",
            Var::Q2 => "q2",
            Var::Q3 => "q3",
            Var::T => "t",
        }
    }

    fn from_name(s: &str) -> Option<Var> {
        match s {
            "q1" => Some(Var::Q1),
            "q2" => Some(Var::Q2),
            "q3" => Some(Var::Q3),
            "t" => Some(Var::T),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        match s {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "sqrt" => Some(Func::Sqrt),
            _ => None,
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Exp => x.exp(),
            Func::Sqrt => x.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Var(Var),
    Param(String),
    Neg(Expr),
    Call(Func, Expr),
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Mul(Expr, Expr),
    Div(Expr, Expr),
    Pow(Expr, i32),
}

/// An immutable expression tree. Cloning is cheap.
#[derive(Clone, PartialEq)]
pub struct Expr(Arc<Node>);

/// Parameter values keyed by name.
pub type Params = BTreeMap<String, f64>;

impl Expr {
    fn node(n: Node) -> Self {
        Expr(Arc::new(n))
    }

    pub fn constant(x: f64) -> Self {
        Self::node(Node::Const(x))
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn var(v: Var) -> Self {
        Self::node(Node::Var(v))
    }

    pub fn param(name: &str) -> Self {
        Self::node(Node::Param(name.to_string()))
    }

    pub fn call(f: Func, arg: Expr) -> Self {
        Self::node(Node::Call(f, arg))
    }

    /// Parses `src`, accepting `declared` parameter names plus `c`.
    pub fn parse(src: &str, declared: &[&str]) -> Result<Expr, ExprError> {
        let tokens = lex(src)?;
        let mut p = Parser { tokens, pos: 0, declared, end: src.len() };
        let e = p.expr()?;
        if p.pos < p.tokens.len() {
            let t = &p.tokens[p.pos];
            return Err(ExprError::Syntax { offset: t.offset, message: format!("unexpected {}", t.kind.describe()) });
        }
        Ok(e)
    }

    pub fn as_constant(&self) -> Option<f64> {
        match &*self.0 {
            Node::Const(x) => Some(*x),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_constant() == Some(0.0)
    }

    /// Names of the parameters referenced by this expression.
    pub fn parameters(&self) -> Vec<String> {
        fn walk(e: &Expr, out: &mut Vec<String>) {
            match &*e.0 {
                Node::Param(n) => {
                    if !out.contains(n) {
                        out.push(n.clone())
                    }
                }
                Node::Const(_) | Node::Var(_) => {}
                Node::Neg(a) | Node::Call(_, a) | Node::Pow(a, _) => walk(a, out),
                Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                    walk(a, out);
                    walk(b, out)
                }
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out
    }

    /// Evaluates at `(q, t)`. Non-finite results are reported as errors.
    pub fn eval(&self, q: [f64; 3], t: f64, params: &Params) -> Result<f64, ExprError> {
        let v = self.eval_raw(q, t, params)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ExprError::NonFinite { value: v, q1: q[0], q2: q[1], q3: q[2], t })
        }
    }

    fn eval_raw(&self, q: [f64; 3], t: f64, params: &Params) -> Result<f64, ExprError> {
        Ok(match &*self.0 {
            Node::Const(x) => *x,
            Node::Var(Var::Q1) => q[0],
            Node::Var(Var::Q2) => q[1],
            Node::Var(Var::Q3) => q[2],
            Node::Var(Var::T) => t,
            Node::Param(n) => *params.get(n).ok_or_else(|| ExprError::UnboundParameter(n.clone()))?,
            Node::Neg(a) => -a.eval_raw(q, t, params)?,
            Node::Call(f, a) => f.apply(a.eval_raw(q, t, params)?),
            Node::Add(a, b) => a.eval_raw(q, t, params)? + b.eval_raw(q, t, params)?,
            Node::Sub(a, b) => a.eval_raw(q, t, params)? - b.eval_raw(q, t, params)?,
            Node::Mul(a, b) => a.eval_raw(q, t, params)? * b.eval_raw(q, t, params)?,
            Node::Div(a, b) => a.eval_raw(q, t, params)? / b.eval_raw(q, t, params)?,
            Node::Pow(a, n) => a.eval_raw(q, t, params)?.powi(*n),
        })
    }

    /// Exact symbolic derivative with local simplification.
    pub fn diff(&self, v: Var) -> Expr {
        match &*self.0 {
            Node::Const(_) | Node::Param(_) => Expr::zero(),
            Node::Var(w) => Expr::constant(if *w == v { 1.0 } else { 0.0 }),
            Node::Neg(a) => neg(a.diff(v)),
            Node::Call(f, a) => {
                let da = a.diff(v);
                if da.is_zero() {
                    return Expr::zero();
                }
                let outer = match f {
                    Func::Sin => Expr::call(Func::Cos, a.clone()),
                    Func::Cos => neg(Expr::call(Func::Sin, a.clone())),
                    Func::Exp => self.clone(),
                    Func::Sqrt => div(Expr::constant(1.0), mul(Expr::constant(2.0), self.clone())),
                };
                mul(outer, da)
            }
            Node::Add(a, b) => add(a.diff(v), b.diff(v)),
            Node::Sub(a, b) => sub(a.diff(v), b.diff(v)),
            Node::Mul(a, b) => add(mul(a.diff(v), b.clone()), mul(a.clone(), b.diff(v))),
            Node::Div(a, b) => {
                let (da, db) = (a.diff(v), b.diff(v));
                if db.is_zero() {
                    return div(da, b.clone());
                }
                div(sub(mul(da, b.clone()), mul(a.clone(), db)), pow(b.clone(), 2))
            }
            Node::Pow(a, n) => {
                let da = a.diff(v);
                if *n == 0 || da.is_zero() {
                    return Expr::zero();
                }
                mul(mul(Expr::constant(*n as f64), pow(a.clone(), n - 1)), da)
            }
        }
    }

    fn precedence(&self) -> u8 {
        match &*self.0 {
            Node::Add(..) | Node::Sub(..) => 1,
            Node::Mul(..) | Node::Div(..) => 2,
            Node::Pow(..) => 3,
            Node::Neg(_) => 4,
            Node::Const(x) if *x < 0.0 || (*x == 0.0 && x.is_sign_negative()) => 4,
            _ => 5,
        }
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({self})")
    }
}

/// Canonical printer; `parse(print(e))` reproduces `e` for any parsed `e`.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn wrap(f: &mut fmt::Formatter<'_>, e: &Expr, parens: bool) -> fmt::Result {
            if parens {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        }
        match &*self.0 {
            Node::Const(x) => {
                if *x < 0.0 || (*x == 0.0 && x.is_sign_negative()) {
                    write!(f, "-{}", -x)
                } else {
                    write!(f, "{x}")
                }
            }
            Node::Var(v) => f.write_str(v.name()),
            Node::Param(n) => f.write_str(n),
            Node::Neg(a) => {
                f.write_str("-")?;
                wrap(f, a, a.precedence() < 4)
            }
            Node::Call(func, a) => write!(f, "{}({a})", func.name()),
            Node::Add(a, b) => {
                wrap(f, a, a.precedence() < 1)?;
                f.write_str(" + ")?;
                wrap(f, b, b.precedence() <= 1)
            }
            Node::Sub(a, b) => {
                wrap(f, a, a.precedence() < 1)?;
                f.write_str(" - ")?;
                wrap(f, b, b.precedence() <= 1)
            }
            Node::Mul(a, b) => {
                wrap(f, a, a.precedence() < 2)?;
                f.write_str("*")?;
                wrap(f, b, b.precedence() <= 2)
            }
            Node::Div(a, b) => {
                wrap(f, a, a.precedence() < 2)?;
                f.write_str("/")?;
                wrap(f, b, b.precedence() <= 2)
            }
            Node::Pow(a, n) => {
                // `-x^2` parses as `(-x)^2`, so only plain atoms go bare.
                wrap(f, a, a.precedence() < 5)?;
                write!(f, "^{n}")
            }
        }
    }
}

// Simplifying constructors.

pub fn neg(a: Expr) -> Expr {
    match &*a.0 {
        Node::Const(x) => Expr::constant(-x),
        Node::Neg(inner) => inner.clone(),
        _ => Expr::node(Node::Neg(a)),
    }
}

pub fn add(a: Expr, b: Expr) -> Expr {
    match (a.as_constant(), b.as_constant()) {
        (Some(x), Some(y)) => Expr::constant(x + y),
        (Some(0.0), _) => b,
        (_, Some(0.0)) => a,
        _ => match &*b.0 {
            Node::Neg(inner) => Expr::node(Node::Sub(a, inner.clone())),
            _ => Expr::node(Node::Add(a, b)),
        },
    }
}

pub fn sub(a: Expr, b: Expr) -> Expr {
    match (a.as_constant(), b.as_constant()) {
        (Some(x), Some(y)) => Expr::constant(x - y),
        (Some(0.0), _) => neg(b),
        (_, Some(0.0)) => a,
        _ => Expr::node(Node::Sub(a, b)),
    }
}

pub fn mul(a: Expr, b: Expr) -> Expr {
    match (a.as_constant(), b.as_constant()) {
        (Some(x), Some(y)) => Expr::constant(x * y),
        (Some(0.0), _) | (_, Some(0.0)) => Expr::zero(),
        (Some(1.0), _) => b,
        (_, Some(1.0)) => a,
        (Some(-1.0), _) => neg(b),
        (_, Some(-1.0)) => neg(a),
        _ => Expr::node(Node::Mul(a, b)),
    }
}

/// Panics if `b` is the constant zero; callers never build such a node.
pub fn div(a: Expr, b: Expr) -> Expr {
    assert!(!b.is_zero(), "division by constant zero");
    match (a.as_constant(), b.as_constant()) {
        (Some(x), Some(y)) => Expr::constant(x / y),
        (Some(0.0), _) => Expr::zero(),
        (_, Some(1.0)) => a,
        _ => Expr::node(Node::Div(a, b)),
    }
}

pub fn pow(a: Expr, n: i32) -> Expr {
    match (a.as_constant(), n) {
        (_, 0) => Expr::constant(1.0),
        (_, 1) => a,
        (Some(x), _) => Expr::constant(x.powi(n)),
        _ => Expr::node(Node::Pow(a, n)),
    }
}

// Lexer.

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

impl TokKind {
    fn describe(&self) -> String {
        match self {
            TokKind::Num(x) => format!("number {x}"),
            TokKind::Ident(s) => format!("identifier `{s}`"),
            TokKind::Plus => "`+`".into(),
            TokKind::Minus => "`-`".into(),
            TokKind::Star => "`*`".into(),
            TokKind::Slash => "`/`".into(),
            TokKind::Caret => "`^`".into(),
            TokKind::LParen => "`(`".into(),
            TokKind::RParen => "`)`".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokKind,
    offset: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let ch = bytes[i];
        let start = i;
        let kind = match ch {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => TokKind::Plus,
            b'-' => TokKind::Minus,
            b'*' => TokKind::Star,
            b'/' => TokKind::Slash,
            b'^' => TokKind::Caret,
            b'(' => TokKind::LParen,
            b')' => TokKind::RParen,
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text = &src[start..i];
                let value = text.parse::<f64>().map_err(|_| ExprError::Syntax {
                    offset: start,
                    message: format!("malformed number `{text}`"),
                })?;
                out.push(Token { kind: TokKind::Num(value), offset: start });
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push(Token { kind: TokKind::Ident(src[start..i].to_string()), offset: start });
                continue;
            }
            _ => {
                let found = src[start..].chars().next().unwrap_or('\u{fffd}');
                return Err(ExprError::Lexical { offset: start, found });
            }
        };
        out.push(Token { kind, offset: start });
        i += 1;
    }
    Ok(out)
}

// Recursive-descent parser.

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    declared: &'a [&'a str],
    end: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&TokKind> {
        self.tokens.get(self.pos).map(|t| &t.kind)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |t| t.offset)
    }

    fn unexpected(&self, wanted: &str) -> ExprError {
        let found = self.peek().map_or_else(|| "end of input".to_string(), TokKind::describe);
        ExprError::Syntax { offset: self.offset(), message: format!("expected {wanted}, found {found}") }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(TokKind::Plus) => {
                    self.pos += 1;
                    lhs = Expr::node(Node::Add(lhs, self.term()?));
                }
                Some(TokKind::Minus) => {
                    self.pos += 1;
                    lhs = Expr::node(Node::Sub(lhs, self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(TokKind::Star) => {
                    self.pos += 1;
                    lhs = Expr::node(Node::Mul(lhs, self.factor()?));
                }
                Some(TokKind::Slash) => {
                    self.pos += 1;
                    let at = self.offset();
                    let rhs = self.factor()?;
                    if rhs.is_zero() {
                        return Err(ExprError::ZeroDivisor { offset: at });
                    }
                    lhs = Expr::node(Node::Div(lhs, rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ExprError> {
        let base = self.base()?;
        if self.peek() != Some(&TokKind::Caret) {
            return Ok(base);
        }
        self.pos += 1;
        let negative = if self.peek() == Some(&TokKind::Minus) {
            self.pos += 1;
            true
        } else {
            false
        };
        match self.peek() {
            Some(TokKind::Num(x)) if x.fract() == 0.0 && x.abs() <= i32::MAX as f64 => {
                let n = *x as i32;
                self.pos += 1;
                Ok(Expr::node(Node::Pow(base, if negative { -n } else { n })))
            }
            _ => Err(self.unexpected("integer exponent")),
        }
    }

    fn base(&mut self) -> Result<Expr, ExprError> {
        let offset = self.offset();
        match self.peek().cloned() {
            Some(TokKind::Num(x)) => {
                self.pos += 1;
                Ok(Expr::constant(x))
            }
            Some(TokKind::Minus) => {
                self.pos += 1;
                Ok(Expr::node(Node::Neg(self.base()?)))
            }
            Some(TokKind::LParen) => {
                self.pos += 1;
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Some(TokKind::Ident(name)) => {
                self.pos += 1;
                if let Some(func) = Func::from_name(&name) {
                    if self.peek() != Some(&TokKind::LParen) {
                        return Err(self.unexpected("`(` after function name"));
                    }
                    self.pos += 1;
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    return Ok(Expr::call(func, arg));
                }
                if let Some(v) = Var::from_name(&name) {
                    return Ok(Expr::var(v));
                }
                if name == SPEED_PARAM || self.declared.contains(&name.as_str()) {
                    return Ok(Expr::param(&name));
                }
                Err(ExprError::UnknownIdentifier { name, offset })
            }
            _ => Err(self.unexpected("operand")),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ExprError> {
        if self.peek() == Some(&TokKind::RParen) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.unexpected("`)`"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(s: &str) -> Expr {
        Expr::parse(s, &["B0", "k", "A0", "E1"]).unwrap()
    }

    #[test]
    fn parses_product() {
        assert_eq!(p("q1*t"), mul_raw(Expr::var(Var::Q1), Expr::var(Var::T)));
    }

    fn mul_raw(a: Expr, b: Expr) -> Expr {
        Expr::node(Node::Mul(a, b))
    }

    #[test]
    fn parses_plane_wave_phase() {
        let want = Expr::call(Func::Sin, Expr::node(Node::Sub(Expr::var(Var::Q1), Expr::var(Var::T))));
        assert_eq!(p("sin(q1 - t)"), want);
        assert_eq!(p("  sin ( q1-t )"), want);
    }

    #[test]
    fn dangling_operator_offset() {
        let err = Expr::parse("q1 + ", &[]).unwrap_err();
        assert_eq!(err.code(), "syntax");
        assert_eq!(err.offset(), Some(5));
    }

    #[test]
    fn error_kinds_are_distinct() {
        assert_eq!(Expr::parse("q1 # 2", &[]).unwrap_err(), ExprError::Lexical { offset: 3, found: '#' });
        assert_eq!(
            Expr::parse("2*w", &[]).unwrap_err(),
            ExprError::UnknownIdentifier { name: "w".into(), offset: 2 }
        );
        assert_eq!(Expr::parse("q1/0", &[]).unwrap_err().code(), "zero-divisor");
        assert_eq!(Expr::parse("q1^1.5", &[]).unwrap_err().code(), "syntax");
        assert_eq!(Expr::parse("(q1", &[]).unwrap_err().code(), "syntax");
        assert_eq!(Expr::parse("q1 q2", &[]).unwrap_err().offset(), Some(3));
        assert_eq!(Expr::parse("sin q1", &[]).unwrap_err().code(), "syntax");
    }

    #[test]
    fn evaluates() {
        let none = Params::new();
        assert_eq!(p("q1*t").eval([2.0, 0.0, 0.0], 3.0, &none).unwrap(), 6.0);
        assert_eq!(p("sin(q1 - t)").eval([0.0; 3], 0.0, &none).unwrap(), 0.0);
        let params = Params::from([("B0".to_string(), 1.0)]);
        assert_eq!(p("B0*q1/2").eval([4.0, 0.0, 0.0], 0.0, &params).unwrap(), 2.0);
        assert_eq!(p("-2^2").eval([0.0; 3], 0.0, &none).unwrap(), 4.0);
        assert_eq!(p("2^-1").eval([0.0; 3], 0.0, &none).unwrap(), 0.5);
    }

    #[test]
    fn eval_errors() {
        let none = Params::new();
        assert_eq!(p("B0*q1").eval([1.0; 3], 0.0, &none).unwrap_err(), ExprError::UnboundParameter("B0".into()));
        assert_eq!(p("1/q1").eval([0.0; 3], 0.0, &none).unwrap_err().code(), "non-finite");
        assert_eq!(p("sqrt(q1)").eval([-1.0, 0.0, 0.0], 0.0, &none).unwrap_err().code(), "non-finite");
    }

    #[test]
    fn derivative_forms() {
        assert_eq!(p("q1^2").diff(Var::Q1).to_string(), "2*q1");
        assert_eq!(p("sin(q1 - t)").diff(Var::T).to_string(), "-cos(q1 - t)");
        assert!(p("q1*t").diff(Var::Q2).is_zero());
        assert!(p("5").diff(Var::T).is_zero());
    }

    #[test]
    fn printer_examples() {
        for (src, printed) in [
            ("q1 - (q2 - t)", "q1 - (q2 - t)"),
            ("q1/(q2*t)", "q1/(q2*t)"),
            ("-(q1^2)", "-(q1^2)"),
            ("(-q1)^2", "(-q1)^2"),
            ("-q1^2", "(-q1)^2"),
            ("2*(q1 + t)", "2*(q1 + t)"),
        ] {
            assert_eq!(p(src).to_string(), printed, "{src}");
        }
    }

    // Independent oracle: 4th-order central differences of eval.
    fn fd(e: &Expr, v: Var, q: [f64; 3], t: f64, params: &Params) -> f64 {
        let h = 1e-3;
        let at = |dx: f64| {
            let (mut qq, mut tt) = (q, t);
            match v {
                Var::Q1 => qq[0] += dx,
                Var::Q2 => qq[1] += dx,
                Var::Q3 => qq[2] += dx,
                Var::T => tt += dx,
            }
            e.eval(qq, tt, params).unwrap()
        };
        (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h)
    }

    #[test]
    fn diff_matches_finite_differences() {
        let params = Params::from([("k".to_string(), 2.0), ("c".to_string(), 1.5)]);
        let exprs = [
            "k/sqrt(q1^2 + q2^2 + q3^2)",
            "sin(q1 - c*t)*exp(-q2^2/2)",
            "q1^3*t - cos(q2*q3)/(2 + q1^2)",
            "(q1 + q2)^-2 + sqrt(4 + t^2)",
        ];
        let mut rng = 17u64;
        let mut next = || {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((rng >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for src in exprs {
            let e = p(src);
            for _ in 0..100 {
                let q = [1.5 + 0.5 * next(), 1.5 + 0.5 * next(), 1.5 + 0.5 * next()];
                let t = next();
                for v in [Var::Q1, Var::Q2, Var::Q3, Var::T] {
                    let exact = e.diff(v).eval(q, t, &params).unwrap();
                    let approx = fd(&e, v, q, t, &params);
                    let scale = exact.abs().max(1.0);
                    assert!((exact - approx).abs() <= 1e-8 * scale, "{src} d/{v:?}: {exact} vs {approx}");
                }
            }
        }
    }

    fn arb_expr() -> impl Strategy<Value = String> {
        let leaf = prop_oneof![
            (0u32..20).prop_map(|n| n.to_string()),
            Just("q1".to_string()),
            Just("q2".to_string()),
            Just("t".to_string()),
            Just("k".to_string()),
            (1u32..100).prop_map(|n| format!("{}.25", n)),
        ];
        leaf.prop_recursive(4, 32, 3, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone(), prop::sample::select(vec!["+", "-", "*"]))
                    .prop_map(|(a, b, op)| format!("({a}) {op} ({b})")),
                (inner.clone(), -3i32..4).prop_map(|(a, n)| format!("({a})^{n}")),
                inner.clone().prop_map(|a| format!("-{a}")),
                inner.clone().prop_map(|a| format!("-({a})")),
                (inner.clone(), prop::sample::select(vec!["sin", "cos", "exp", "sqrt"]))
                    .prop_map(|(a, f)| format!("{f}({a})")),
                inner.prop_map(|a| format!("({a})/(q1 + 3)")),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(src in arb_expr()) {
            let first = p(&src);
            let again = p(&first.to_string());
            prop_assert_eq!(&first, &again);
            let d = first.diff(Var::Q1);
            prop_assert_eq!(&p(&d.to_string()).to_string(), &d.to_string());
        }
    }
}
