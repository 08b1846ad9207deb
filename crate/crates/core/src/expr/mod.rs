//! Immutable expression trees over named real variables.
//!
//! Trees are built by [`parse`], evaluated with [`Expr::eval`] against a set of
//! [`Bindings`], and differentiated exactly with [`Expr::diff`]. Nodes are shared
//! through `Arc`, so cloning an `Expr` is cheap and trees can cross threads.

mod diff;
mod parser;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use parser::{parse, ParseError};

/// Elementary functions understood by the parser and the differentiator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sqrt,
    Exp,
    Ln,
    Sin,
    Cos,
    Sinh,
    Cosh,
    Arctan,
    Abs,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sqrt => "sqrt",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sinh => "sinh",
            Func::Cosh => "cosh",
            Func::Arctan => "arctan",
            Func::Abs => "abs",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sqrt" => Func::Sqrt,
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sinh" => Func::Sinh,
            "cosh" => Func::Cosh,
            "arctan" => Func::Arctan,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    pub const ALL: [Func; 9] = [
        Func::Sqrt,
        Func::Exp,
        Func::Ln,
        Func::Sin,
        Func::Cos,
        Func::Sinh,
        Func::Cosh,
        Func::Arctan,
        Func::Abs,
    ];

    fn apply(self, x: f64) -> Option<f64> {
        let y = match self {
            Func::Sqrt if x < 0.0 => return None,
            Func::Sqrt => x.sqrt(),
            Func::Exp => x.exp(),
            Func::Ln if x <= 0.0 => return None,
            Func::Ln => x.ln(),
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Sinh => x.sinh(),
            Func::Cosh => x.cosh(),
            Func::Arctan => x.atan(),
            Func::Abs => x.abs(),
        };
        Some(y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    fn symbol(self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
            BinaryOp::Pow => '^',
        }
    }
}

/// A single node of an expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Var(String),
    Neg(Expr),
    Binary(BinaryOp, Expr, Expr),
    Call(Func, Expr),
}

/// Shared, immutable expression tree.
#[derive(Clone, PartialEq)]
pub struct Expr(Arc<Node>);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("{reason} in `{subtree}`")]
    Domain { reason: &'static str, subtree: String },
}

/// Variable name to value map used for evaluation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Bindings(BTreeMap<String, f64>);

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.set(name, value);
        self
    }

    pub fn set(&mut self, name: &str, value: f64) {
        if let Some(slot) = self.0.get_mut(name) {
            *slot = value;
        } else {
            self.0.insert(name.to_string(), value);
        }
    }

    pub fn get(&self, name: &str) -> Result<f64, EvalError> {
        self.0
            .get(name)
            .copied()
            .ok_or_else(|| EvalError::Unbound(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

impl<const N: usize> From<[(&str, f64); N]> for Bindings {
    fn from(pairs: [(&str, f64); N]) -> Self {
        let mut b = Bindings::new();
        for (k, v) in pairs {
            b.set(k, v);
        }
        b
    }
}

impl Expr {
    pub fn node(&self) -> &Node {
        &self.0
    }

    pub fn constant(value: f64) -> Expr {
        Expr(Arc::new(Node::Const(value)))
    }

    pub fn var(name: &str) -> Expr {
        Expr(Arc::new(Node::Var(name.to_string())))
    }

    pub fn as_const(&self) -> Option<f64> {
        match self.node() {
            Node::Const(c) => Some(*c),
            _ => None,
        }
    }

    // Builders fold a node only when every child is a literal and the
    // folded value is finite. No other rewriting happens.

    pub fn neg(a: Expr) -> Expr {
        if let Some(c) = a.as_const() {
            return Expr::constant(-c);
        }
        Expr(Arc::new(Node::Neg(a)))
    }

    pub fn binary(op: BinaryOp, a: Expr, b: Expr) -> Expr {
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            if let Some(v) = apply_binary(op, x, y).filter(|v| v.is_finite()) {
                return Expr::constant(v);
            }
        }
        Expr(Arc::new(Node::Binary(op, a, b)))
    }

    pub fn call(f: Func, a: Expr) -> Expr {
        if let Some(x) = a.as_const() {
            if let Some(v) = f.apply(x).filter(|v| v.is_finite()) {
                return Expr::constant(v);
            }
        }
        Expr(Arc::new(Node::Call(f, a)))
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::binary(BinaryOp::Add, a, b)
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::binary(BinaryOp::Mul, a, b)
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        Expr::binary(BinaryOp::Div, a, b)
    }

    pub fn pow(a: Expr, b: Expr) -> Expr {
        Expr::binary(BinaryOp::Pow, a, b)
    }

    pub fn powi(a: Expr, n: i32) -> Expr {
        Expr::pow(a, Expr::constant(n as f64))
    }

    /// Evaluates the tree. Children are visited left to right.
    pub fn eval(&self, b: &Bindings) -> Result<f64, EvalError> {
        match self.node() {
            Node::Const(c) => Ok(*c),
            Node::Var(name) => b.get(name),
            Node::Neg(a) => Ok(-a.eval(b)?),
            Node::Binary(op, l, r) => {
                let x = l.eval(b)?;
                let y = r.eval(b)?;
                match *op {
                    BinaryOp::Div if y == 0.0 => Err(self.domain("division by zero")),
                    BinaryOp::Pow => {
                        if pow_exponent_is_int(y) {
                            if x == 0.0 && y < 0.0 {
                                return Err(self.domain("zero to a negative power"));
                            }
                            Ok(int_pow(x, y as i64))
                        } else if x > 0.0 {
                            Ok(x.powf(y))
                        } else {
                            Err(self.domain("non-integer power of non-positive base"))
                        }
                    }
                    _ => Ok(apply_binary(*op, x, y).expect("non-pow binary op")),
                }
            }
            Node::Call(f, a) => {
                let x = a.eval(b)?;
                f.apply(x).ok_or_else(|| {
                    self.domain(match f {
                        Func::Sqrt => "square root of a negative number",
                        _ => "logarithm of a non-positive number",
                    })
                })
            }
        }
    }

    fn domain(&self, reason: &'static str) -> EvalError {
        EvalError::Domain {
            reason,
            subtree: self.to_string(),
        }
    }

    /// Exact partial derivative with respect to `var`.
    pub fn diff(&self, var: &str) -> Expr {
        diff::diff(self, var)
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self.node() {
            Node::Const(_) => {}
            Node::Var(v) => {
                out.insert(v.clone());
            }
            Node::Neg(a) | Node::Call(_, a) => a.collect_vars(out),
            Node::Binary(_, l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
        }
    }

    pub fn contains_var(&self, var: &str) -> bool {
        match self.node() {
            Node::Const(_) => false,
            Node::Var(v) => v == var,
            Node::Neg(a) | Node::Call(_, a) => a.contains_var(var),
            Node::Binary(_, l, r) => l.contains_var(var) || r.contains_var(var),
        }
    }

    /// Replaces every occurrence of `var` by `with`, returning a new tree.
    pub fn subst(&self, var: &str, with: &Expr) -> Expr {
        if !self.contains_var(var) {
            return self.clone();
        }
        match self.node() {
            Node::Const(_) => self.clone(),
            Node::Var(v) if v == var => with.clone(),
            Node::Var(_) => self.clone(),
            Node::Neg(a) => Expr::neg(a.subst(var, with)),
            Node::Call(f, a) => Expr::call(*f, a.subst(var, with)),
            Node::Binary(op, l, r) => Expr::binary(*op, l.subst(var, with), r.subst(var, with)),
        }
    }

    /// Simultaneous renaming, e.g. `(u, s) -> (X, Y)`.
    pub fn rename(&self, pairs: &[(&str, &str)]) -> Expr {
        match self.node() {
            Node::Const(_) => self.clone(),
            Node::Var(v) => match pairs.iter().find(|(from, _)| from == v) {
                Some((_, to)) => Expr::var(to),
                None => self.clone(),
            },
            Node::Neg(a) => Expr::neg(a.rename(pairs)),
            Node::Call(f, a) => Expr::call(*f, a.rename(pairs)),
            Node::Binary(op, l, r) => Expr::binary(*op, l.rename(pairs), r.rename(pairs)),
        }
    }

    pub fn depth(&self) -> usize {
        match self.node() {
            Node::Const(_) | Node::Var(_) => 1,
            Node::Neg(a) | Node::Call(_, a) => 1 + a.depth(),
            Node::Binary(_, l, r) => 1 + l.depth().max(r.depth()),
        }
    }

    fn precedence(&self) -> u8 {
        match self.node() {
            Node::Const(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => 3,
            Node::Const(_) | Node::Var(_) | Node::Call(..) => 5,
            Node::Neg(_) => 3,
            Node::Binary(BinaryOp::Add | BinaryOp::Sub, ..) => 1,
            Node::Binary(BinaryOp::Mul | BinaryOp::Div, ..) => 2,
            Node::Binary(BinaryOp::Pow, ..) => 4,
        }
    }
}

fn apply_binary(op: BinaryOp, x: f64, y: f64) -> Option<f64> {
    Some(match op {
        BinaryOp::Add => x + y,
        BinaryOp::Sub => x - y,
        BinaryOp::Mul => x * y,
        BinaryOp::Div if y == 0.0 => return None,
        BinaryOp::Div => x / y,
        BinaryOp::Pow if pow_exponent_is_int(y) => {
            if x == 0.0 && y < 0.0 {
                return None;
            }
            int_pow(x, y as i64)
        }
        BinaryOp::Pow if x > 0.0 => x.powf(y),
        BinaryOp::Pow => return None,
    })
}

fn pow_exponent_is_int(y: f64) -> bool {
    y.fract() == 0.0 && y.abs() <= 1024.0
}

/// Integer power by repeated squaring; a fixed multiplication order keeps
/// results reproducible across platforms.
fn int_pow(x: f64, n: i64) -> f64 {
    let mut base = x;
    let mut k = n.unsigned_abs();
    let mut acc = 1.0;
    while k > 0 {
        if k & 1 == 1 {
            acc *= base;
        }
        base *= base;
        k >>= 1;
    }
    if n < 0 {
        1.0 / acc
    } else {
        acc
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({self})")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node() {
            Node::Const(c) => write!(f, "{c}"),
            Node::Var(v) => f.write_str(v),
            Node::Neg(a) => {
                f.write_str("-")?;
                write_child(f, a, a.precedence() < 3)
            }
            Node::Call(func, a) => write!(f, "{}({a})", func.name()),
            Node::Binary(op, l, r) => {
                let p = self.precedence();
                let (lp, rp) = match op {
                    // right-associative
                    BinaryOp::Pow => (l.precedence() <= p, r.precedence() < 3),
                    _ => (l.precedence() < p, r.precedence() <= p),
                };
                write_child(f, l, lp)?;
                write!(f, "{}", op.symbol())?;
                write_child(f, r, rp)
            }
        }
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, e: &Expr, paren: bool) -> fmt::Result {
    if paren {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl std::str::FromStr for Expr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

impl serde::Serialize for Expr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for Expr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        parse(&text).map_err(serde::de::Error::custom)
    }
}

/// Decides equivalence of two trees by evaluating both at seeded random
/// points. Points where either side fails to evaluate are skipped; at
/// least half of the points must be usable.
pub fn equivalent_by_sampling(
    a: &Expr,
    b: &Expr,
    ranges: &[(&str, f64, f64)],
    samples: usize,
    seed: u64,
    rel_tol: f64,
) -> bool {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut usable = 0;
    for _ in 0..samples {
        let mut bind = Bindings::new();
        for (name, lo, hi) in ranges {
            bind.set(name, rng.gen_range(*lo..*hi));
        }
        let (Ok(x), Ok(y)) = (a.eval(&bind), b.eval(&bind)) else {
            continue;
        };
        usable += 1;
        if (x - y).abs() > rel_tol * (1.0 + x.abs().max(y.abs())) {
            return false;
        }
    }
    usable * 2 >= samples
}
