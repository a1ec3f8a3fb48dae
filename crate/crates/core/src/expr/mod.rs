//! Symbolic scalar expressions over configuration variables `x1..xn` and
//! named parameters.
//!
//! An [`Expr`] is an immutable, reference-counted tree. Cloning is cheap and
//! expressions can be shared freely between threads.

mod integrate;
mod num;
mod numfn;
mod parse;
mod simplify;
mod tape;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use integrate::{integrate_univariate, IntegrationError};
pub use num::{Num, Rational};
pub use numfn::{NumFn, NumFnTable};
pub use parse::{parse_expr, ParseContext, ParseError, ParseErrorKind};
pub use simplify::simplify;
pub use tape::Tape;

/// Parameter name to value bindings.
pub type Params = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("logarithm of non-positive value {0}")]
    LnDomain(f64),
    #[error("unbound parameter `{0}`")]
    UnboundParam(String),
    #[error("variable x{0} outside point of dimension {1}")]
    VarOutOfRange(usize, usize),
}

#[derive(Debug)]
pub enum Node {
    Const(Num),
    /// Zero-based configuration coordinate; `Var(0)` prints as `x1`.
    Var(usize),
    Param(Arc<str>),
    Add(Vec<Expr>),
    Mul(Vec<Expr>),
    Neg(Expr),
    Div(Expr, Expr),
    Pow(Expr, i32),
    Sin(Expr),
    Cos(Expr),
    Exp(Expr),
    Ln(Expr),
    /// Opaque tabulated univariate function applied to an argument.
    NumFn(Arc<NumFn>, Expr),
}

struct Inner {
    node: Node,
    /// Set on nodes produced by `simplify`, which skips them on re-entry.
    canonical: bool,
    /// Bit `i` set when `Var(i)` occurs below; saturated for `i >= 64`.
    var_mask: u64,
}

fn mask_of(node: &Node) -> u64 {
    let child = |e: &Expr| e.0.var_mask;
    match node {
        Node::Const(_) | Node::Param(_) => 0,
        Node::Var(i) => {
            if *i < 64 {
                1u64 << i
            } else {
                u64::MAX
            }
        }
        Node::Add(v) | Node::Mul(v) => v.iter().fold(0, |m, e| m | child(e)),
        Node::Div(a, b) => child(a) | child(b),
        Node::Neg(a)
        | Node::Pow(a, _)
        | Node::Sin(a)
        | Node::Cos(a)
        | Node::Exp(a)
        | Node::Ln(a)
        | Node::NumFn(_, a) => child(a),
    }
}

#[derive(Clone)]
pub struct Expr(Arc<Inner>);

impl Expr {
    pub fn node(&self) -> &Node {
        &self.0.node
    }

    fn wrap(node: Node) -> Expr {
        let canonical = matches!(node, Node::Const(_) | Node::Var(_) | Node::Param(_));
        let var_mask = mask_of(&node);
        Expr(Arc::new(Inner { node, canonical, var_mask }))
    }

    pub(crate) fn wrap_canonical(node: Node) -> Expr {
        let var_mask = mask_of(&node);
        Expr(Arc::new(Inner { node, canonical: true, var_mask }))
    }

    pub(crate) fn is_canonical(&self) -> bool {
        self.0.canonical
    }

    pub fn constant(value: impl Into<Num>) -> Expr {
        Expr::wrap(Node::Const(value.into()))
    }

    pub fn int(v: i64) -> Expr {
        Expr::constant(Num::int(v))
    }

    pub fn zero() -> Expr {
        Expr::constant(Num::ZERO)
    }

    pub fn one() -> Expr {
        Expr::constant(Num::ONE)
    }

    /// Zero-based variable index.
    pub fn var(index: usize) -> Expr {
        Expr::wrap(Node::Var(index))
    }

    pub fn param(name: &str) -> Expr {
        Expr::wrap(Node::Param(Arc::from(name)))
    }

    /// Sum with exact zeros dropped.
    pub fn add(terms: Vec<Expr>) -> Expr {
        let mut kept: Vec<Expr> = terms.into_iter().filter(|t| !t.is_zero()).collect();
        match kept.len() {
            0 => Expr::zero(),
            1 => kept.pop().unwrap(),
            _ => Expr::wrap(Node::Add(kept)),
        }
    }

    /// Product with exact ones dropped; any exact zero factor collapses it.
    pub fn mul(factors: Vec<Expr>) -> Expr {
        if factors.iter().any(Expr::is_zero) {
            return Expr::zero();
        }
        let mut kept: Vec<Expr> = factors.into_iter().filter(|f| !f.is_one()).collect();
        match kept.len() {
            0 => Expr::one(),
            1 => kept.pop().unwrap(),
            _ => Expr::wrap(Node::Mul(kept)),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::add(vec![a, Expr::neg(b)])
    }

    pub fn neg(a: Expr) -> Expr {
        match a.node() {
            Node::Const(c) => Expr::constant(c.neg()),
            Node::Neg(inner) => inner.clone(),
            _ => Expr::wrap(Node::Neg(a)),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        if b.is_one() {
            return a;
        }
        if a.is_zero() {
            return Expr::zero();
        }
        Expr::wrap(Node::Div(a, b))
    }

    pub fn pow(base: Expr, k: i32) -> Expr {
        match k {
            0 => Expr::one(),
            1 => base,
            _ => Expr::wrap(Node::Pow(base, k)),
        }
    }

    pub fn sin(a: Expr) -> Expr {
        Expr::wrap(Node::Sin(a))
    }

    pub fn cos(a: Expr) -> Expr {
        Expr::wrap(Node::Cos(a))
    }

    pub fn exp(a: Expr) -> Expr {
        Expr::wrap(Node::Exp(a))
    }

    pub fn ln(a: Expr) -> Expr {
        Expr::wrap(Node::Ln(a))
    }

    pub fn numfn(f: Arc<NumFn>, arg: Expr) -> Expr {
        Expr::wrap(Node::NumFn(f, arg))
    }

    pub fn scale(c: impl Into<Num>, a: Expr) -> Expr {
        Expr::mul(vec![Expr::constant(c), a])
    }

    pub fn as_const(&self) -> Option<Num> {
        match self.node() {
            Node::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const().is_some_and(Num::is_zero)
    }

    pub fn is_one(&self) -> bool {
        self.as_const().is_some_and(Num::is_one)
    }

    pub fn is_const(&self) -> bool {
        self.as_const().is_some()
    }

    /// Evaluate at configuration `x` with parameter bindings.
    pub fn eval(&self, x: &[f64], params: &Params) -> Result<f64, EvalError> {
        Ok(match self.node() {
            Node::Const(c) => c.to_f64(),
            Node::Var(i) => *x.get(*i).ok_or(EvalError::VarOutOfRange(*i + 1, x.len()))?,
            Node::Param(name) => *params
                .get(name.as_ref())
                .ok_or_else(|| EvalError::UnboundParam(name.to_string()))?,
            Node::Add(ts) => {
                let mut acc = 0.0;
                for t in ts {
                    acc += t.eval(x, params)?;
                }
                acc
            }
            Node::Mul(fs) => {
                let mut acc = 1.0;
                for f in fs {
                    acc *= f.eval(x, params)?;
                }
                acc
            }
            Node::Neg(a) => -a.eval(x, params)?,
            Node::Div(a, b) => {
                let d = b.eval(x, params)?;
                if d == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                a.eval(x, params)? / d
            }
            Node::Pow(b, k) => {
                let v = b.eval(x, params)?;
                if v == 0.0 && *k < 0 {
                    return Err(EvalError::DivisionByZero);
                }
                v.powi(*k)
            }
            Node::Sin(a) => a.eval(x, params)?.sin(),
            Node::Cos(a) => a.eval(x, params)?.cos(),
            Node::Exp(a) => a.eval(x, params)?.exp(),
            Node::Ln(a) => {
                let v = a.eval(x, params)?;
                if v <= 0.0 {
                    return Err(EvalError::LnDomain(v));
                }
                v.ln()
            }
            Node::NumFn(f, a) => f.eval(a.eval(x, params)?),
        })
    }

    /// Exact partial derivative with respect to the zero-based variable `i`,
    /// simplified.
    pub fn diff(&self, i: usize) -> Expr {
        simplify(&self.diff_raw(i))
    }

    /// Partial derivative without the final simplification pass.
    pub fn diff_raw(&self, i: usize) -> Expr {
        if !self.depends_on(i) {
            return Expr::zero();
        }
        match self.node() {
            Node::Const(_) | Node::Param(_) => Expr::zero(),
            Node::Var(j) => {
                if *j == i {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Node::Add(ts) => Expr::add(ts.iter().map(|t| t.diff_raw(i)).collect()),
            Node::Mul(fs) => {
                let mut terms = Vec::with_capacity(fs.len());
                for (k, f) in fs.iter().enumerate() {
                    let df = f.diff_raw(i);
                    if df.is_zero() {
                        continue;
                    }
                    let mut factors: Vec<Expr> = Vec::with_capacity(fs.len());
                    factors.extend(fs[..k].iter().cloned());
                    factors.push(df);
                    factors.extend(fs[k + 1..].iter().cloned());
                    terms.push(Expr::mul(factors));
                }
                Expr::add(terms)
            }
            Node::Neg(a) => Expr::neg(a.diff_raw(i)),
            Node::Div(a, b) => {
                let da = a.diff_raw(i);
                let db = b.diff_raw(i);
                let num = Expr::sub(
                    Expr::mul(vec![da, b.clone()]),
                    Expr::mul(vec![a.clone(), db]),
                );
                Expr::div(num, Expr::pow(b.clone(), 2))
            }
            Node::Pow(b, k) => Expr::mul(vec![
                Expr::int(*k as i64),
                Expr::pow(b.clone(), k - 1),
                b.diff_raw(i),
            ]),
            Node::Sin(a) => Expr::mul(vec![Expr::cos(a.clone()), a.diff_raw(i)]),
            Node::Cos(a) => Expr::neg(Expr::mul(vec![Expr::sin(a.clone()), a.diff_raw(i)])),
            Node::Exp(a) => Expr::mul(vec![self.clone(), a.diff_raw(i)]),
            Node::Ln(a) => Expr::div(a.diff_raw(i), a.clone()),
            Node::NumFn(f, a) => Expr::mul(vec![f.derivative_at(a), a.diff_raw(i)]),
        }
    }

    /// Replace variables by expressions; `None` keeps the variable.
    pub fn substitute(&self, map: &dyn Fn(usize) -> Option<Expr>) -> Expr {
        match self.node() {
            Node::Var(j) => map(*j).unwrap_or_else(|| self.clone()),
            Node::Const(_) | Node::Param(_) => self.clone(),
            Node::Add(ts) => Expr::add(ts.iter().map(|t| t.substitute(map)).collect()),
            Node::Mul(fs) => Expr::mul(fs.iter().map(|f| f.substitute(map)).collect()),
            Node::Neg(a) => Expr::neg(a.substitute(map)),
            Node::Div(a, b) => Expr::div(a.substitute(map), b.substitute(map)),
            Node::Pow(b, k) => Expr::pow(b.substitute(map), *k),
            Node::Sin(a) => Expr::sin(a.substitute(map)),
            Node::Cos(a) => Expr::cos(a.substitute(map)),
            Node::Exp(a) => Expr::exp(a.substitute(map)),
            Node::Ln(a) => Expr::ln(a.substitute(map)),
            Node::NumFn(f, a) => Expr::numfn(f.clone(), a.substitute(map)),
        }
    }

    /// Replace parameters by their bound values where available.
    pub fn bind_params(&self, params: &Params) -> Expr {
        match self.node() {
            Node::Param(name) => match params.get(name.as_ref()) {
                Some(v) => Expr::constant(*v),
                None => self.clone(),
            },
            Node::Var(_) | Node::Const(_) => self.clone(),
            Node::Add(ts) => Expr::add(ts.iter().map(|t| t.bind_params(params)).collect()),
            Node::Mul(fs) => Expr::mul(fs.iter().map(|f| f.bind_params(params)).collect()),
            Node::Neg(a) => Expr::neg(a.bind_params(params)),
            Node::Div(a, b) => Expr::div(a.bind_params(params), b.bind_params(params)),
            Node::Pow(b, k) => Expr::pow(b.bind_params(params), *k),
            Node::Sin(a) => Expr::sin(a.bind_params(params)),
            Node::Cos(a) => Expr::cos(a.bind_params(params)),
            Node::Exp(a) => Expr::exp(a.bind_params(params)),
            Node::Ln(a) => Expr::ln(a.bind_params(params)),
            Node::NumFn(f, a) => Expr::numfn(f.clone(), a.bind_params(params)),
        }
    }

    pub fn children(&self) -> Vec<&Expr> {
        match self.node() {
            Node::Const(_) | Node::Var(_) | Node::Param(_) => Vec::new(),
            Node::Add(v) | Node::Mul(v) => v.iter().collect(),
            Node::Div(a, b) => vec![a, b],
            Node::Neg(a)
            | Node::Pow(a, _)
            | Node::Sin(a)
            | Node::Cos(a)
            | Node::Exp(a)
            | Node::Ln(a)
            | Node::NumFn(_, a) => vec![a],
        }
    }

    pub fn depends_on(&self, i: usize) -> bool {
        let m = self.0.var_mask;
        if m == u64::MAX || i >= 64 {
            return self.free_vars().contains(&i);
        }
        m & (1u64 << i) != 0
    }

    /// True when no configuration variable occurs.
    pub fn is_var_free(&self) -> bool {
        self.0.var_mask == 0
    }

    /// Zero-based indices of all variables that occur.
    pub fn free_vars(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<usize>) {
        if let Node::Var(j) = self.node() {
            out.insert(*j);
        }
        for c in self.children() {
            c.collect_vars(out);
        }
    }

    pub fn params(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_params(&mut out);
        out
    }

    fn collect_params(&self, out: &mut BTreeSet<String>) {
        if let Node::Param(p) = self.node() {
            out.insert(p.to_string());
        }
        for c in self.children() {
            c.collect_params(out);
        }
    }

    pub fn numfns(&self) -> Vec<Arc<NumFn>> {
        let mut out: Vec<Arc<NumFn>> = Vec::new();
        self.collect_numfns(&mut out);
        out
    }

    fn collect_numfns(&self, out: &mut Vec<Arc<NumFn>>) {
        if let Node::NumFn(f, _) = self.node() {
            if !out.iter().any(|g| Arc::ptr_eq(f, g)) {
                out.push(f.clone());
            }
        }
        for c in self.children() {
            c.collect_numfns(out);
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children().into_iter().map(Expr::node_count).sum::<usize>()
    }

    fn variant_rank(&self) -> u8 {
        match self.node() {
            Node::Const(_) => 0,
            Node::Param(_) => 1,
            Node::Var(_) => 2,
            Node::Add(_) => 3,
            Node::Mul(_) => 4,
            Node::Pow(..) => 5,
            Node::Neg(_) => 6,
            Node::Div(..) => 7,
            Node::Sin(_) => 8,
            Node::Cos(_) => 9,
            Node::Exp(_) => 10,
            Node::Ln(_) => 11,
            Node::NumFn(..) => 12,
        }
    }
}

fn cmp_slices(a: &[Expr], b: &[Expr]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.cmp(y) {
            Ordering::Equal => {}
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

impl Ord for Expr {
    fn cmp(&self, other: &Expr) -> Ordering {
        if Arc::ptr_eq(&self.0, &other.0) {
            return Ordering::Equal;
        }
        match self.variant_rank().cmp(&other.variant_rank()) {
            Ordering::Equal => {}
            o => return o,
        }
        match (self.node(), other.node()) {
            (Node::Const(a), Node::Const(b)) => a.total_cmp(b),
            (Node::Param(a), Node::Param(b)) => a.cmp(b),
            (Node::Var(a), Node::Var(b)) => a.cmp(b),
            (Node::Add(a), Node::Add(b)) | (Node::Mul(a), Node::Mul(b)) => cmp_slices(a, b),
            (Node::Pow(a, j), Node::Pow(b, k)) => a.cmp(b).then(j.cmp(k)),
            (Node::Div(a1, a2), Node::Div(b1, b2)) => a1.cmp(b1).then_with(|| a2.cmp(b2)),
            (Node::Neg(a), Node::Neg(b))
            | (Node::Sin(a), Node::Sin(b))
            | (Node::Cos(a), Node::Cos(b))
            | (Node::Exp(a), Node::Exp(b))
            | (Node::Ln(a), Node::Ln(b)) => a.cmp(b),
            (Node::NumFn(f, a), Node::NumFn(g, b)) => f.name().cmp(g.name()).then_with(|| a.cmp(b)),
            _ => unreachable!("variant ranks matched"),
        }
    }
}

impl PartialOrd for Expr {
    fn partial_cmp(&self, other: &Expr) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Expr {
    fn eq(&self, other: &Expr) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Expr {}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({self})")
    }
}

// Printing precedence levels.
const P_ADD: u8 = 1;
const P_MUL: u8 = 2;
const P_NEG: u8 = 3;
const P_POW: u8 = 4;
const P_ATOM: u8 = 5;

fn const_prec(c: Num) -> u8 {
    if c.is_negative() {
        P_NEG
    } else if let Num::Rat(r) = c {
        if r.is_integer() {
            P_ATOM
        } else {
            P_MUL
        }
    } else {
        P_ATOM
    }
}

impl Expr {
    fn prec(&self) -> u8 {
        match self.node() {
            Node::Const(c) => const_prec(*c),
            Node::Add(_) => P_ADD,
            Node::Mul(_) | Node::Div(..) => P_MUL,
            Node::Neg(_) => P_NEG,
            Node::Pow(..) => P_POW,
            _ => P_ATOM,
        }
    }

    /// For a subtraction-style rendering: `Some(|t|)` if the term reads as
    /// negative.
    fn negated_term(&self) -> Option<Expr> {
        match self.node() {
            Node::Const(c) if c.is_negative() => Some(Expr::constant(c.neg())),
            Node::Neg(a) => Some(a.clone()),
            Node::Mul(fs) => match fs.first().and_then(Expr::as_const) {
                Some(c) if c.is_negative() => {
                    let mut rest: Vec<Expr> = Vec::with_capacity(fs.len());
                    if !c.neg().is_one() {
                        rest.push(Expr::constant(c.neg()));
                    }
                    rest.extend(fs[1..].iter().cloned());
                    Some(if rest.len() == 1 { rest.pop().unwrap() } else { Expr::wrap(Node::Mul(rest)) })
                }
                _ => None,
            },
            _ => None,
        }
    }

    fn fmt_at(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        if self.prec() < min_prec {
            f.write_str("(")?;
            self.fmt_bare(f)?;
            f.write_str(")")
        } else {
            self.fmt_bare(f)
        }
    }

    fn fmt_bare(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node() {
            Node::Const(c) => write!(f, "{c}"),
            Node::Var(i) => write!(f, "x{}", i + 1),
            Node::Param(p) => f.write_str(p),
            Node::Add(ts) => {
                for (k, t) in ts.iter().enumerate() {
                    if k == 0 {
                        t.fmt_at(f, P_ADD)?;
                    } else if let Some(abs) = t.negated_term() {
                        f.write_str(" - ")?;
                        abs.fmt_at(f, P_MUL)?;
                    } else {
                        f.write_str(" + ")?;
                        t.fmt_at(f, P_ADD)?;
                    }
                }
                Ok(())
            }
            Node::Mul(fs) => {
                let mut numer: Vec<&Expr> = Vec::new();
                let mut denom: Vec<Expr> = Vec::new();
                for x in fs {
                    match x.node() {
                        Node::Pow(b, k) if *k < 0 => denom.push(Expr::pow(b.clone(), -k)),
                        _ => numer.push(x),
                    }
                }
                if numer.is_empty() {
                    f.write_str("1")?;
                }
                for (k, x) in numer.iter().enumerate() {
                    if k == 0 {
                        x.fmt_at(f, P_MUL)?;
                    } else {
                        f.write_str("*")?;
                        x.fmt_at(f, P_POW)?;
                    }
                }
                if !denom.is_empty() {
                    f.write_str("/")?;
                    if denom.len() == 1 {
                        denom[0].fmt_at(f, P_POW)?;
                    } else {
                        Expr::wrap(Node::Mul(denom)).fmt_at(f, P_ATOM)?;
                    }
                }
                Ok(())
            }
            Node::Neg(a) => {
                f.write_str("-")?;
                a.fmt_at(f, P_MUL)
            }
            Node::Div(a, b) => {
                a.fmt_at(f, P_MUL)?;
                f.write_str("/")?;
                b.fmt_at(f, P_POW)
            }
            Node::Pow(b, k) => {
                b.fmt_at(f, P_ATOM)?;
                if *k < 0 {
                    write!(f, "^({k})")
                } else {
                    write!(f, "^{k}")
                }
            }
            Node::Sin(a) => write!(f, "sin({a})"),
            Node::Cos(a) => write!(f, "cos({a})"),
            Node::Exp(a) => write!(f, "exp({a})"),
            Node::Ln(a) => write!(f, "ln({a})"),
            Node::NumFn(g, a) => write!(f, "{}({a})", g.name()),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_at(f, 0)
    }
}

/// A configuration point, optionally carrying a velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub x: Vec<f64>,
    pub y: Option<Vec<f64>>,
}

impl Point {
    pub fn new(x: Vec<f64>) -> Point {
        Point { x, y: None }
    }

    pub fn with_velocity(x: Vec<f64>, y: Vec<f64>) -> Point {
        assert_eq!(x.len(), y.len(), "velocity length must match configuration");
        Point { x, y: Some(y) }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}
