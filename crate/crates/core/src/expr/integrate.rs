//! Table-driven antiderivatives in a single variable.
//!
//! Handles linear combinations of `x^k`, `x^k sin(a x + b)`, `x^k cos(a x + b)`
//! and `x^k exp(a x + b)` with `k >= 0` and parameter-valued coefficients.

use thiserror::Error;

use super::{simplify, Expr, Node};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegrationError {
    #[error("integrand depends on x{0} besides the integration variable")]
    NotUnivariate(usize),
    #[error("no antiderivative found for term `{0}`")]
    NotFound(String),
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Sin,
    Cos,
    Exp,
}

/// Antiderivative `F` of `f` in the zero-based variable `i`, normalized so
/// that `F = 0` at `x_i = 0`.
pub fn integrate_univariate(f: &Expr, i: usize) -> Result<Expr, IntegrationError> {
    if let Some(&j) = f.free_vars().iter().find(|&&j| j != i) {
        return Err(IntegrationError::NotUnivariate(j));
    }
    let f = simplify(f);
    let terms: Vec<Expr> = match f.node() {
        Node::Add(ts) => ts.clone(),
        _ => vec![f.clone()],
    };
    let mut parts = Vec::with_capacity(terms.len());
    for t in &terms {
        parts.push(integrate_term(t, i)?);
    }
    let raw = simplify(&Expr::add(parts));
    let at_zero = simplify(&raw.substitute(&|j| if j == i { Some(Expr::zero()) } else { None }));
    Ok(simplify(&Expr::sub(raw, at_zero)))
}

fn integrate_term(t: &Expr, i: usize) -> Result<Expr, IntegrationError> {
    let not_found = || IntegrationError::NotFound(t.to_string());
    let factors: Vec<Expr> = match t.node() {
        Node::Mul(fs) => fs.clone(),
        _ => vec![t.clone()],
    };
    let mut coeff = Vec::new();
    let mut power: u32 = 0;
    let mut transcendental: Option<(Kind, Expr, Expr)> = None;
    for fac in factors {
        if !fac.depends_on(i) {
            coeff.push(fac);
            continue;
        }
        match fac.node() {
            Node::Var(_) => power += 1,
            Node::Pow(b, k) if matches!(b.node(), Node::Var(_)) && *k > 0 => power += *k as u32,
            Node::Sin(a) | Node::Cos(a) | Node::Exp(a) if transcendental.is_none() => {
                let kind = match fac.node() {
                    Node::Sin(_) => Kind::Sin,
                    Node::Cos(_) => Kind::Cos,
                    _ => Kind::Exp,
                };
                let slope = a.diff(i);
                if !slope.is_var_free() || slope.is_zero() {
                    return Err(not_found());
                }
                transcendental = Some((kind, a.clone(), slope));
            }
            _ => return Err(not_found()),
        }
    }
    let x = Expr::var(i);
    let body = match transcendental {
        None => Expr::mul(vec![
            Expr::constant(super::Num::ratio(1, power as i64 + 1)),
            Expr::pow(x, power as i32 + 1),
        ]),
        Some((kind, arg, slope)) => by_parts(kind, power, &x, &arg, &slope),
    };
    coeff.push(body);
    Ok(Expr::mul(coeff))
}

/// `∫ x^k T(arg) dx` for affine `arg` with constant `slope`.
fn by_parts(kind: Kind, k: u32, x: &Expr, arg: &Expr, slope: &Expr) -> Expr {
    let inv = Expr::pow(slope.clone(), -1);
    let xk = Expr::pow(x.clone(), k as i32);
    // first antiderivative of T and the kind it turns into
    let (prim, sign, next) = match kind {
        Kind::Exp => (Expr::exp(arg.clone()), 1, Kind::Exp),
        Kind::Sin => (Expr::cos(arg.clone()), -1, Kind::Cos),
        Kind::Cos => (Expr::sin(arg.clone()), 1, Kind::Sin),
    };
    let lead = Expr::mul(vec![Expr::int(sign), inv.clone(), xk, prim]);
    if k == 0 {
        return lead;
    }
    let rest = by_parts(next, k - 1, x, arg, slope);
    Expr::sub(lead, Expr::mul(vec![Expr::int(sign * k as i64), inv, rest]))
}
