//! Canonicalizing simplifier.
//!
//! Sums are flattened and like terms collected, products are flattened with
//! powers of equal bases merged, constants are folded exactly when possible,
//! and small products of sums are expanded. No trigonometric rewriting is
//! attempted beyond parity of `sin`/`cos`.

use super::{Expr, Node, Num};

/// Largest number of terms a product of sums may expand into.
const EXPAND_LIMIT: usize = 64;

pub fn simplify(e: &Expr) -> Expr {
    if e.is_canonical() {
        return e.clone();
    }
    match e.node() {
        Node::Const(_) | Node::Var(_) | Node::Param(_) => e.clone(),
        Node::Add(ts) => add_canon(ts.iter().map(simplify).collect()),
        Node::Mul(fs) => mul_canon(fs.iter().map(simplify).collect()),
        Node::Neg(a) => mul_canon(vec![Expr::int(-1), simplify(a)]),
        Node::Div(a, b) => mul_canon(vec![simplify(a), pow_canon(simplify(b), -1)]),
        Node::Pow(b, k) => pow_canon(simplify(b), *k),
        Node::Sin(a) => sin_canon(simplify(a)),
        Node::Cos(a) => cos_canon(simplify(a)),
        Node::Exp(a) => exp_canon(simplify(a)),
        Node::Ln(a) => ln_canon(simplify(a)),
        Node::NumFn(f, a) => {
            let a = simplify(a);
            match a.as_const() {
                Some(c) => Expr::constant(Num::real(f.eval(c.to_f64()))),
                None => Expr::wrap_canonical(Node::NumFn(f.clone(), a)),
            }
        }
    }
}

/// Split a canonical term into its numeric coefficient and remaining part.
fn split_coefficient(t: &Expr) -> (Num, Option<Expr>) {
    match t.node() {
        Node::Const(c) => (*c, None),
        Node::Mul(fs) => match fs[0].as_const() {
            Some(c) => {
                let rest = if fs.len() == 2 {
                    fs[1].clone()
                } else {
                    Expr::wrap_canonical(Node::Mul(fs[1..].to_vec()))
                };
                (c, Some(rest))
            }
            None => (Num::ONE, Some(t.clone())),
        },
        _ => (Num::ONE, Some(t.clone())),
    }
}

fn scaled(c: Num, key: Expr) -> Expr {
    if c.is_one() {
        return key;
    }
    let mut fs = vec![Expr::constant(c)];
    match key.node() {
        Node::Mul(inner) => fs.extend(inner.iter().cloned()),
        _ => fs.push(key),
    }
    Expr::wrap_canonical(Node::Mul(fs))
}

fn add_canon(terms: Vec<Expr>) -> Expr {
    let mut items: Vec<(Num, Option<Expr>)> = Vec::with_capacity(terms.len());
    for t in &terms {
        match t.node() {
            Node::Add(sub) => items.extend(sub.iter().map(split_coefficient)),
            _ => items.push(split_coefficient(t)),
        }
    }
    items.sort_by(|a, b| a.1.cmp(&b.1));
    let mut merged: Vec<(Num, Option<Expr>)> = Vec::with_capacity(items.len());
    for (c, key) in items {
        match merged.last_mut() {
            Some((acc, k)) if *k == key => *acc = acc.add(c),
            _ => merged.push((c, key)),
        }
    }
    let mut out: Vec<Expr> = merged
        .into_iter()
        .filter(|(c, _)| !c.is_zero())
        .map(|(c, key)| match key {
            None => Expr::constant(c),
            Some(k) => scaled(c, k),
        })
        .collect();
    match out.len() {
        0 => Expr::zero(),
        1 => out.pop().unwrap(),
        _ => Expr::wrap_canonical(Node::Add(out)),
    }
}

fn pow_node(base: Expr, k: i32) -> Expr {
    if k == 1 {
        base
    } else {
        Expr::wrap_canonical(Node::Pow(base, k))
    }
}

fn mul_canon(factors: Vec<Expr>) -> Expr {
    let mut coef = Num::ONE;
    let mut bases: Vec<(Expr, i32)> = Vec::with_capacity(factors.len());
    fn push(f: &Expr, coef: &mut Num, bases: &mut Vec<(Expr, i32)>) {
        match f.node() {
            Node::Const(c) => *coef = coef.mul(*c),
            Node::Mul(fs) => {
                for g in fs {
                    push(g, coef, bases);
                }
            }
            Node::Pow(b, k) => bases.push((b.clone(), *k)),
            _ => bases.push((f.clone(), 1)),
        }
    }
    for f in &factors {
        push(f, &mut coef, &mut bases);
    }
    if coef.is_zero() {
        return Expr::zero();
    }
    bases.sort_by(|a, b| a.0.cmp(&b.0));
    let mut merged: Vec<(Expr, i32)> = Vec::with_capacity(bases.len());
    for (b, k) in bases {
        match merged.last_mut() {
            Some((mb, mk)) if *mb == b => *mk += k,
            _ => merged.push((b, k)),
        }
    }
    merged.retain(|(_, k)| *k != 0);

    // Fold constant bases that survived (only a negative power of zero can).
    let mut kept: Vec<(Expr, i32)> = Vec::with_capacity(merged.len());
    for (b, k) in merged {
        match b.as_const().and_then(|c| c.powi(k)) {
            Some(v) => coef = coef.mul(v),
            None => kept.push((b, k)),
        }
    }
    if coef.is_zero() {
        return Expr::zero();
    }

    // Expand products of sums when the result stays small.
    let mut expand_count = 1usize;
    let mut has_sum = false;
    for (b, k) in &kept {
        if let Node::Add(ts) = b.node() {
            if *k >= 1 {
                has_sum = true;
                for _ in 0..*k {
                    expand_count = expand_count.saturating_mul(ts.len());
                }
            }
        }
    }
    if has_sum && expand_count <= EXPAND_LIMIT {
        let mut others: Vec<Expr> = vec![Expr::constant(coef)];
        let mut combos: Vec<Vec<Expr>> = vec![Vec::new()];
        for (b, k) in &kept {
            match b.node() {
                Node::Add(ts) if *k >= 1 => {
                    for _ in 0..*k {
                        let mut next = Vec::with_capacity(combos.len() * ts.len());
                        for prefix in &combos {
                            for t in ts {
                                let mut c = prefix.clone();
                                c.push(t.clone());
                                next.push(c);
                            }
                        }
                        combos = next;
                    }
                }
                _ => others.push(pow_node(b.clone(), *k)),
            }
        }
        let terms: Vec<Expr> = combos
            .into_iter()
            .map(|mut c| {
                c.extend(others.iter().cloned());
                mul_canon(c)
            })
            .collect();
        return add_canon(terms);
    }

    let mut out: Vec<Expr> = Vec::with_capacity(kept.len() + 1);
    if !coef.is_one() {
        out.push(Expr::constant(coef));
    }
    out.extend(kept.into_iter().map(|(b, k)| pow_node(b, k)));
    match out.len() {
        0 => Expr::constant(coef),
        1 => out.pop().unwrap(),
        _ => Expr::wrap_canonical(Node::Mul(out)),
    }
}

fn pow_canon(b: Expr, k: i32) -> Expr {
    match k {
        0 => return Expr::one(),
        1 => return b,
        _ => {}
    }
    match b.node() {
        Node::Const(c) => match c.powi(k) {
            Some(v) => Expr::constant(v),
            None => Expr::wrap_canonical(Node::Pow(b.clone(), k)),
        },
        Node::Pow(inner, j) => pow_canon(inner.clone(), j * k),
        Node::Mul(fs) => mul_canon(fs.iter().map(|f| pow_canon(f.clone(), k)).collect()),
        Node::Add(_) if k >= 2 => mul_canon(vec![Expr::wrap_canonical(Node::Pow(b.clone(), k))]),
        _ => Expr::wrap_canonical(Node::Pow(b, k)),
    }
}

/// Leading coefficient of a canonical expression is negative.
fn reads_negative(a: &Expr) -> bool {
    match a.node() {
        Node::Const(c) => c.is_negative(),
        Node::Mul(fs) => fs[0].as_const().is_some_and(Num::is_negative),
        _ => false,
    }
}

fn negate(a: Expr) -> Expr {
    mul_canon(vec![Expr::int(-1), a])
}

fn sin_canon(a: Expr) -> Expr {
    if let Some(c) = a.as_const() {
        return if c.is_zero() { Expr::zero() } else { Expr::constant(Num::real(c.to_f64().sin())) };
    }
    if reads_negative(&a) {
        return negate(Expr::wrap_canonical(Node::Sin(negate(a))));
    }
    Expr::wrap_canonical(Node::Sin(a))
}

fn cos_canon(a: Expr) -> Expr {
    if let Some(c) = a.as_const() {
        return if c.is_zero() { Expr::one() } else { Expr::constant(Num::real(c.to_f64().cos())) };
    }
    if reads_negative(&a) {
        return Expr::wrap_canonical(Node::Cos(negate(a)));
    }
    Expr::wrap_canonical(Node::Cos(a))
}

fn exp_canon(a: Expr) -> Expr {
    if let Some(c) = a.as_const() {
        return if c.is_zero() { Expr::one() } else { Expr::constant(Num::real(c.to_f64().exp())) };
    }
    Expr::wrap_canonical(Node::Exp(a))
}

fn ln_canon(a: Expr) -> Expr {
    if let Some(c) = a.as_const() {
        if c.is_one() {
            return Expr::zero();
        }
        if !c.is_negative() && !c.is_zero() {
            return Expr::constant(Num::real(c.to_f64().ln()));
        }
    }
    if let Node::Exp(inner) = a.node() {
        return inner.clone();
    }
    Expr::wrap_canonical(Node::Ln(a))
}
