//! Flattened evaluation of expression DAGs.
//!
//! Derivatives share subtrees heavily, so walking the tree re-evaluates the
//! same node many times. A [`Tape`] visits each distinct node once.

use std::collections::HashMap;
use std::sync::Arc;

use super::{EvalError, Expr, Node, NumFn, Params};

enum Op {
    Const(f64),
    Var(usize),
    Add(Vec<usize>),
    Mul(Vec<usize>),
    Neg(usize),
    Div(usize, usize),
    Pow(usize, i32),
    Sin(usize),
    Cos(usize),
    Exp(usize),
    Ln(usize),
    NumFn(Arc<NumFn>, usize),
}

/// Several expressions compiled together, with parameters bound.
pub struct Tape {
    ops: Vec<Op>,
    roots: Vec<usize>,
}

struct Builder<'a> {
    ops: Vec<Op>,
    seen: HashMap<*const super::Inner, usize>,
    vars: HashMap<usize, usize>,
    params: &'a Params,
}

impl Builder<'_> {
    fn push(&mut self, op: Op) -> usize {
        self.ops.push(op);
        self.ops.len() - 1
    }

    fn visit(&mut self, e: &Expr) -> Result<usize, EvalError> {
        let key = Arc::as_ptr(&e.0);
        if let Some(&slot) = self.seen.get(&key) {
            return Ok(slot);
        }
        let op = match e.node() {
            Node::Const(c) => Op::Const(c.to_f64()),
            Node::Var(i) => {
                if let Some(&slot) = self.vars.get(i) {
                    self.seen.insert(key, slot);
                    return Ok(slot);
                }
                let slot = self.push(Op::Var(*i));
                self.vars.insert(*i, slot);
                self.seen.insert(key, slot);
                return Ok(slot);
            }
            Node::Param(name) => Op::Const(
                *self.params.get(name.as_ref()).ok_or_else(|| EvalError::UnboundParam(name.to_string()))?,
            ),
            Node::Add(ts) => Op::Add(ts.iter().map(|t| self.visit(t)).collect::<Result<_, _>>()?),
            Node::Mul(fs) => Op::Mul(fs.iter().map(|t| self.visit(t)).collect::<Result<_, _>>()?),
            Node::Neg(a) => Op::Neg(self.visit(a)?),
            Node::Div(a, b) => {
                let a = self.visit(a)?;
                Op::Div(a, self.visit(b)?)
            }
            Node::Pow(a, k) => Op::Pow(self.visit(a)?, *k),
            Node::Sin(a) => Op::Sin(self.visit(a)?),
            Node::Cos(a) => Op::Cos(self.visit(a)?),
            Node::Exp(a) => Op::Exp(self.visit(a)?),
            Node::Ln(a) => Op::Ln(self.visit(a)?),
            Node::NumFn(f, a) => Op::NumFn(f.clone(), self.visit(a)?),
        };
        let slot = self.push(op);
        self.seen.insert(key, slot);
        Ok(slot)
    }
}

impl Tape {
    pub fn compile(exprs: &[Expr], params: &Params) -> Result<Tape, EvalError> {
        let mut b = Builder { ops: Vec::new(), seen: HashMap::new(), vars: HashMap::new(), params };
        let roots = exprs.iter().map(|e| b.visit(e)).collect::<Result<_, _>>()?;
        Ok(Tape { ops: b.ops, roots })
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Values at `x` together with a running error scale: the rounding error
    /// of each value is a modest multiple of `ε` times its scale. Sums add
    /// the scales of their terms, so cancellation shows up as a scale much
    /// larger than the value.
    pub fn eval_with_scale(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>), EvalError> {
        let v = self.values(x)?;
        let mut m = vec![0.0; self.ops.len()];
        for (slot, op) in self.ops.iter().enumerate() {
            let own = v[slot].abs();
            m[slot] = match op {
                Op::Const(_) | Op::Var(_) => own,
                Op::Add(ts) => ts.iter().map(|&t| m[t]).sum(),
                Op::Mul(fs) => fs.iter().map(|&t| m[t]).product(),
                Op::Neg(a) => m[*a],
                Op::Div(a, b) => m[*a] / v[*b].abs() + v[*a].abs() * m[*b] / (v[*b] * v[*b]),
                Op::Pow(a, k) => own + (*k as f64).abs() * v[*a].abs().powi(k - 1) * m[*a],
                Op::Sin(a) => own + v[*a].cos().abs() * m[*a],
                Op::Cos(a) => own + v[*a].sin().abs() * m[*a],
                Op::Exp(a) => own * (1.0 + m[*a]),
                Op::Ln(a) => own + m[*a] / v[*a].abs(),
                Op::NumFn(_, a) => own + m[*a],
            };
        }
        Ok((self.roots.iter().map(|&r| v[r]).collect(), self.roots.iter().map(|&r| m[r]).collect()))
    }

    /// Values of the compiled expressions at `x`.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        let v = self.values(x)?;
        Ok(self.roots.iter().map(|&r| v[r]).collect())
    }

    fn values(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut v = vec![0.0; self.ops.len()];
        for (slot, op) in self.ops.iter().enumerate() {
            v[slot] = match op {
                Op::Const(c) => *c,
                Op::Var(i) => *x.get(*i).ok_or(EvalError::VarOutOfRange(*i + 1, x.len()))?,
                Op::Add(ts) => ts.iter().map(|&t| v[t]).sum(),
                Op::Mul(fs) => fs.iter().map(|&t| v[t]).product(),
                Op::Neg(a) => -v[*a],
                Op::Div(a, b) => {
                    if v[*b] == 0.0 {
                        return Err(EvalError::DivisionByZero);
                    }
                    v[*a] / v[*b]
                }
                Op::Pow(a, k) => {
                    if v[*a] == 0.0 && *k < 0 {
                        return Err(EvalError::DivisionByZero);
                    }
                    v[*a].powi(*k)
                }
                Op::Sin(a) => v[*a].sin(),
                Op::Cos(a) => v[*a].cos(),
                Op::Exp(a) => v[*a].exp(),
                Op::Ln(a) => {
                    if v[*a] <= 0.0 {
                        return Err(EvalError::LnDomain(v[*a]));
                    }
                    v[*a].ln()
                }
                Op::NumFn(f, a) => f.eval(v[*a]),
            };
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_tree_eval() {
        let x = Expr::var(0);
        let s = Expr::sin(Expr::mul(vec![Expr::param("k"), x.clone()]));
        let e = Expr::add(vec![s.clone(), Expr::mul(vec![s.clone(), s]), Expr::div(Expr::one(), x)]);
        let mut p = Params::new();
        p.insert("k".into(), 2.0);
        let tape = Tape::compile(&[e.clone(), Expr::var(1)], &p).unwrap();
        assert!(tape.len() < e.node_count());
        let got = tape.eval(&[0.3, 4.0]).unwrap();
        assert_eq!(got[0], e.eval(&[0.3, 4.0], &p).unwrap());
        assert_eq!(got[1], 4.0);
        assert_eq!(tape.eval(&[0.0, 1.0]).unwrap_err(), EvalError::DivisionByZero);
        assert!(matches!(Tape::compile(&[Expr::param("q")], &p), Err(EvalError::UnboundParam(_))));
    }

    #[test]
    fn scale_exposes_cancellation() {
        // (x + 1e8) − 1e8 evaluates to about x but carries scale ~2e8
        let x = Expr::var(0);
        let big = Expr::constant(1e8);
        let e = Expr::add(vec![Expr::add(vec![x.clone(), big.clone()]), Expr::neg(big)]);
        let tape = Tape::compile(&[e, x], &Params::new()).unwrap();
        let (v, m) = tape.eval_with_scale(&[0.5]).unwrap();
        assert_eq!(v, vec![0.5, 0.5]);
        assert!(m[0] > 1e8 && m[1] == 0.5);
    }
}
