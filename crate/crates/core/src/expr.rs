//! Expression trees over the coordinates `x1..xd` with forward-mode
//! evaluation of value, gradient and Hessian.
//!
//! The grammar is ordinary infix arithmetic:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' ['-'] integer)?
//! atom   := number | 'x'<index> | func '(' expr ')' | '(' expr ')'
//! func   := sin | cos | exp
//! ```
//!
//! Only smooth primitives are accepted; `abs` and similar kinks are rejected
//! at parse time because the conical norm is the one non-smooth term a
//! potential may carry.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("unexpected character {found:?} at offset {offset}")]
    UnexpectedChar { found: char, offset: usize },
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("function `{0}` is not smooth and cannot appear in a field expression")]
    NonSmoothFunction(String),
    #[error("coordinate x{index} out of range for dimension {dim}")]
    CoordinateOutOfRange { index: usize, dim: usize },
    #[error("malformed number `{0}`")]
    BadNumber(String),
    #[error("exponent must be an integer literal")]
    NonIntegerExponent,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Zero-based coordinate index (`x1` is `Var(0)`).
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Powi(Box<Expr>, i32),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Exp(Box<Expr>),
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self, ExprError> {
        let mut p = Parser { src: src.as_bytes(), pos: 0 };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos < p.src.len() {
            return Err(ExprError::UnexpectedChar { found: p.src[p.pos] as char, offset: p.pos });
        }
        Ok(e)
    }

    pub fn constant(v: f64) -> Self {
        Expr::Const(v)
    }

    pub fn var(i: usize) -> Self {
        Expr::Var(i)
    }

    /// Largest coordinate index referenced, plus one.
    pub fn arity(&self) -> usize {
        match self {
            Expr::Const(_) => 0,
            Expr::Var(i) => i + 1,
            Expr::Neg(a) | Expr::Powi(a, _) | Expr::Sin(a) | Expr::Cos(a) | Expr::Exp(a) => a.arity(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => a.arity().max(b.arity()),
        }
    }

    /// True when the expression references no coordinate.
    pub fn is_constant(&self) -> bool {
        self.arity() == 0
    }

    /// Structural test for an affine map of the coordinates.
    pub fn is_affine(&self) -> bool {
        match self {
            Expr::Const(_) | Expr::Var(_) => true,
            Expr::Neg(a) => a.is_affine(),
            Expr::Add(a, b) | Expr::Sub(a, b) => a.is_affine() && b.is_affine(),
            Expr::Mul(a, b) => (a.is_constant() && b.is_affine()) || (b.is_constant() && a.is_affine()),
            Expr::Div(a, b) => b.is_constant() && a.is_affine(),
            Expr::Powi(a, n) => a.is_constant() || *n == 0 || (*n == 1 && a.is_affine()),
            Expr::Sin(a) | Expr::Cos(a) | Expr::Exp(a) => a.is_constant(),
        }
    }

    pub fn is_zero_const(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }

    pub fn value<T: Real>(&self, x: &[T]) -> T {
        match self {
            Expr::Const(c) => T::lit(*c),
            Expr::Var(i) => x[*i],
            Expr::Neg(a) => -a.value(x),
            Expr::Add(a, b) => a.value(x) + b.value(x),
            Expr::Sub(a, b) => a.value(x) - b.value(x),
            Expr::Mul(a, b) => a.value(x) * b.value(x),
            Expr::Div(a, b) => a.value(x) / b.value(x),
            Expr::Powi(a, n) => a.value(x).powi(*n),
            Expr::Sin(a) => a.value(x).sin(),
            Expr::Cos(a) => a.value(x).cos(),
            Expr::Exp(a) => a.value(x).exp(),
        }
    }

    pub fn jet<T: Real>(&self, x: &[T]) -> Jet<T> {
        let d = x.len();
        match self {
            Expr::Const(c) => Jet::constant(T::lit(*c), d),
            Expr::Var(i) => Jet::variable(x[*i], *i, d),
            Expr::Neg(a) => a.jet(x).neg(),
            Expr::Add(a, b) => a.jet(x).add(&b.jet(x)),
            Expr::Sub(a, b) => a.jet(x).sub(&b.jet(x)),
            Expr::Mul(a, b) => a.jet(x).mul(&b.jet(x)),
            Expr::Div(a, b) => a.jet(x).mul(&b.jet(x).recip()),
            Expr::Powi(a, n) => {
                let u = a.jet(x);
                let n = *n;
                let v = u.value;
                let nf = T::lit(n as f64);
                let f1 = if n == 0 { T::zero() } else { nf * v.powi(n - 1) };
                let f2 = if n == 0 || n == 1 { T::zero() } else { nf * T::lit((n - 1) as f64) * v.powi(n - 2) };
                u.chain(v.powi(n), f1, f2)
            }
            Expr::Sin(a) => {
                let u = a.jet(x);
                let (s, c) = u.value.sin_cos();
                u.chain(s, c, -s)
            }
            Expr::Cos(a) => {
                let u = a.jet(x);
                let (s, c) = u.value.sin_cos();
                u.chain(c, -s, -c)
            }
            Expr::Exp(a) => {
                let u = a.jet(x);
                let e = u.value.exp();
                u.chain(e, e, e)
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => {
                if *c < 0.0 {
                    write!(f, "({c:?})")
                } else {
                    write!(f, "{c:?}")
                }
            }
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Powi(a, n) => write!(f, "({a})^{n}"),
            Expr::Sin(a) => write!(f, "sin({a})"),
            Expr::Cos(a) => write!(f, "cos({a})"),
            Expr::Exp(a) => write!(f, "exp({a})"),
        }
    }
}

impl Serialize for Expr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Expr::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Second-order forward-mode jet: value, gradient and (dense, symmetric) Hessian.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet<T> {
    pub value: T,
    pub grad: Vec<T>,
    pub hess: Vec<T>,
}

impl<T: Real> Jet<T> {
    pub fn constant(value: T, d: usize) -> Self {
        Self { value, grad: vec![T::zero(); d], hess: vec![T::zero(); d * d] }
    }

    pub fn variable(value: T, index: usize, d: usize) -> Self {
        let mut j = Self::constant(value, d);
        j.grad[index] = T::one();
        j
    }

    pub fn dim(&self) -> usize {
        self.grad.len()
    }

    pub fn hess_at(&self, i: usize, j: usize) -> T {
        self.hess[i * self.dim() + j]
    }

    pub fn neg(&self) -> Self {
        self.map_linear(-T::one())
    }

    pub fn scale(&self, s: T) -> Self {
        self.map_linear(s)
    }

    fn map_linear(&self, s: T) -> Self {
        Self {
            value: self.value * s,
            grad: self.grad.iter().map(|&g| g * s).collect(),
            hess: self.hess.iter().map(|&h| h * s).collect(),
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        Self {
            value: self.value + o.value,
            grad: self.grad.iter().zip(&o.grad).map(|(&a, &b)| a + b).collect(),
            hess: self.hess.iter().zip(&o.hess).map(|(&a, &b)| a + b).collect(),
        }
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.add(&o.neg())
    }

    pub fn mul(&self, o: &Self) -> Self {
        let d = self.dim();
        let mut hess = vec![T::zero(); d * d];
        for i in 0..d {
            for j in 0..d {
                hess[i * d + j] = self.hess[i * d + j] * o.value
                    + o.hess[i * d + j] * self.value
                    + self.grad[i] * o.grad[j]
                    + o.grad[i] * self.grad[j];
            }
        }
        Self {
            value: self.value * o.value,
            grad: self.grad.iter().zip(&o.grad).map(|(&a, &b)| a * o.value + b * self.value).collect(),
            hess,
        }
    }

    pub fn recip(&self) -> Self {
        let v = self.value;
        let r = T::one() / v;
        self.chain(r, -r * r, T::lit(2.0) * r * r * r)
    }

    pub fn sqrt(&self) -> Self {
        let s = self.value.sqrt();
        let f1 = T::lit(0.5) / s;
        let f2 = -T::lit(0.25) / (s * s * s);
        self.chain(s, f1, f2)
    }

    /// Composes with a scalar function given its value and first two derivatives at `self.value`.
    pub fn chain(&self, f0: T, f1: T, f2: T) -> Self {
        let d = self.dim();
        let mut hess = vec![T::zero(); d * d];
        for i in 0..d {
            for j in 0..d {
                hess[i * d + j] = f1 * self.hess[i * d + j] + f2 * self.grad[i] * self.grad[j];
            }
        }
        Self { value: f0, grad: self.grad.iter().map(|&g| f1 * g).collect(), hess }
    }
}

/// A smooth scalar field on R^d.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawField")]
pub struct ScalarField {
    expr: Expr,
    dim: usize,
}

#[derive(Deserialize)]
struct RawField {
    expr: Expr,
    dim: usize,
}

impl TryFrom<RawField> for ScalarField {
    type Error = ExprError;

    fn try_from(raw: RawField) -> Result<Self, ExprError> {
        Self::new(raw.expr, raw.dim)
    }
}

impl ScalarField {
    pub fn new(expr: Expr, dim: usize) -> Result<Self, ExprError> {
        let arity = expr.arity();
        if arity > dim {
            return Err(ExprError::CoordinateOutOfRange { index: arity, dim });
        }
        Ok(Self { expr, dim })
    }

    pub fn parse(src: &str, dim: usize) -> Result<Self, ExprError> {
        Self::new(Expr::parse(src)?, dim)
    }

    pub fn constant(c: f64, dim: usize) -> Self {
        Self { expr: Expr::Const(c), dim }
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_identically_zero(&self) -> bool {
        self.expr.is_zero_const()
    }

    pub fn value<T: Real>(&self, x: &[T]) -> T {
        debug_assert_eq!(x.len(), self.dim);
        self.expr.value(x)
    }

    pub fn jet<T: Real>(&self, x: &[T]) -> Jet<T> {
        debug_assert_eq!(x.len(), self.dim);
        self.expr.jet(x)
    }

    pub fn gradient<T: Real>(&self, x: &[T]) -> Vec<T> {
        self.jet(x).grad
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<(), ExprError> {
        match self.peek() {
            Some(b) if b == c => {
                self.pos += 1;
                Ok(())
            }
            Some(b) => Err(ExprError::UnexpectedChar { found: b as char, offset: self.pos }),
            None => Err(ExprError::UnexpectedEnd),
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        while let Some(op @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == b'+' {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(op @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == b'*' {
                Expr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some(b'+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let neg = if self.peek() == Some(b'-') {
                self.pos += 1;
                true
            } else {
                false
            };
            self.skip_ws();
            let start = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if start == self.pos || self.src.get(self.pos) == Some(&b'.') {
                return Err(ExprError::NonIntegerExponent);
            }
            let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
            let n: i32 = text.parse().map_err(|_| ExprError::BadNumber(text.to_string()))?;
            return Ok(Expr::Powi(Box::new(base), if neg { -n } else { n }));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let c = self.peek().ok_or(ExprError::UnexpectedEnd)?;
        if c == b'(' {
            self.pos += 1;
            let e = self.expr()?;
            self.expect(b')')?;
            return Ok(e);
        }
        if c.is_ascii_digit() || c == b'.' {
            return self.number();
        }
        if c.is_ascii_alphabetic() {
            let start = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphabetic() {
                self.pos += 1;
            }
            let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap().to_string();
            if name == "x" {
                let dstart = self.pos;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
                if dstart == self.pos {
                    return Err(ExprError::UnexpectedEnd);
                }
                let idx: usize = std::str::from_utf8(&self.src[dstart..self.pos]).unwrap().parse().unwrap();
                if idx == 0 {
                    return Err(ExprError::CoordinateOutOfRange { index: 0, dim: 0 });
                }
                return Ok(Expr::Var(idx - 1));
            }
            let build: fn(Box<Expr>) -> Expr = match name.as_str() {
                "sin" => Expr::Sin,
                "cos" => Expr::Cos,
                "exp" => Expr::Exp,
                "abs" | "sqrt" | "sign" | "max" | "min" => return Err(ExprError::NonSmoothFunction(name)),
                _ => return Err(ExprError::UnknownFunction(name)),
            };
            self.expect(b'(')?;
            let arg = self.expr()?;
            self.expect(b')')?;
            return Ok(build(Box::new(arg)));
        }
        Err(ExprError::UnexpectedChar { found: c as char, offset: self.pos })
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_digit() || self.src[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < self.src.len() && (self.src[self.pos] == b'e' || self.src[self.pos] == b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.src.len() && (self.src[self.pos] == b'-' || self.src[self.pos] == b'+') {
                self.pos += 1;
            }
            let dstart = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if dstart == self.pos {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse::<f64>().map(Expr::Const).map_err(|_| ExprError::BadNumber(text.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_grad(f: &ScalarField, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += h;
                xm[i] -= h;
                (f.value(&xp) - f.value(&xm)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn parses_precedence_and_unary_minus() {
        let f = ScalarField::parse("-x1^2 + 3*x2/2 - (1+x1)*x2", 2).unwrap();
        let v = f.value(&[2.0, 4.0]);
        assert_eq!(v, -4.0 + 6.0 - 12.0);
        let g = ScalarField::parse("1.5e-1*x1", 1).unwrap();
        assert!((g.value(&[2.0]) - 0.3_f64).abs() < 1e-15);
    }

    #[test]
    fn rejects_kinks_and_bad_input() {
        assert_eq!(Expr::parse("abs(x1)"), Err(ExprError::NonSmoothFunction("abs".into())));
        assert!(matches!(Expr::parse("tanh(x1)"), Err(ExprError::UnknownFunction(_))));
        assert_eq!(Expr::parse("x1^0.5"), Err(ExprError::NonIntegerExponent));
        assert!(Expr::parse("x1 +").is_err());
        assert!(ScalarField::parse("x3", 2).is_err());
    }

    #[test]
    fn jet_matches_closed_form() {
        let f = ScalarField::parse("exp(x1)*sin(x2) + x1^3/x2", 2).unwrap();
        let (a, b) = (0.3_f64, 1.7_f64);
        let j = f.jet(&[a, b]);
        assert!((j.grad[0] - (a.exp() * b.sin() + 3.0 * a * a / b)).abs() < 1e-13);
        assert!((j.grad[1] - (a.exp() * b.cos() - a.powi(3) / (b * b))).abs() < 1e-13);
        assert!((j.hess_at(0, 0) - (a.exp() * b.sin() + 6.0 * a / b)).abs() < 1e-13);
        assert!((j.hess_at(0, 1) - (a.exp() * b.cos() - 3.0 * a * a / (b * b))).abs() < 1e-13);
        assert_eq!(j.hess_at(0, 1), j.hess_at(1, 0));
        assert!((j.hess_at(1, 1) - (-a.exp() * b.sin() + 2.0 * a.powi(3) / b.powi(3))).abs() < 1e-13);
    }

    #[test]
    fn display_round_trips() {
        let src = "x1*(-2.5) - cos(x2)^-2 / exp(x1 - 1)";
        let e = Expr::parse(src).unwrap();
        let back = Expr::parse(&e.to_string()).unwrap();
        for x in [[0.2, 0.4], [-1.0, 2.0]] {
            assert_eq!(e.value(&x), back.value(&x));
        }
    }

    #[test]
    fn affine_detection() {
        assert!(Expr::parse("x1/3 - 2*x2 + exp(1)").unwrap().is_affine());
        assert!(!Expr::parse("x1*x2").unwrap().is_affine());
        assert!(!Expr::parse("sin(x1)").unwrap().is_affine());
        assert!(Expr::parse("(2)^3*x1").unwrap().is_affine());
    }

    #[test]
    fn f32_evaluation() {
        let f = ScalarField::parse("x1^2/2", 1).unwrap();
        let j = f.jet(&[3.0_f32]);
        assert_eq!(j.grad[0], 3.0);
        assert_eq!(j.hess[0], 1.0);
    }

    mod prop {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn gradient_matches_central_differences(x in -1.5..1.5f64, y in -1.5..1.5f64, z in -1.5..1.5f64) {
                let f = ScalarField::parse("sin(x1*x2) + exp(x3/2)*x1^2 - cos(x2)^3 + x1*x2*x3", 3).unwrap();
                let p = [x, y, z];
                let g = f.gradient(&p);
                let fd = fd_grad(&f, &p, 1e-5);
                let scale = g.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
                for i in 0..3 {
                    prop_assert!((g[i] - fd[i]).abs() / scale <= 1e-6);
                }
                let j = f.jet(&p);
                for i in 0..3 {
                    let mut xp = p; xp[i] += 1e-5;
                    let mut xm = p; xm[i] -= 1e-5;
                    let (gp, gm) = (f.gradient(&xp), f.gradient(&xm));
                    for k in 0..3 {
                        let fdh = (gp[k] - gm[k]) / 2e-5;
                        prop_assert!((j.hess_at(i, k) - fdh).abs() / scale.max(1.0) <= 1e-6);
                    }
                }
            }
        }
    }
}
