use crate::expr::{simplify, EvalError, Expr, Params};

use super::{MechanicalSystem, VectorFieldSym};

/// `L_X f = ∂f/∂x^i X^i`.
pub fn lie_derivative_fn(f: &Expr, x: &VectorFieldSym) -> Expr {
    let terms = x
        .0
        .iter()
        .enumerate()
        .filter(|(i, xi)| !xi.is_zero() && f.depends_on(*i))
        .map(|(i, xi)| Expr::mul(vec![f.diff(i), xi.clone()]))
        .collect();
    simplify(&Expr::add(terms))
}

/// `[X, Y] = ∂Y/∂x X − ∂X/∂x Y`.
pub fn lie_bracket(x: &VectorFieldSym, y: &VectorFieldSym) -> VectorFieldSym {
    assert_eq!(x.dim(), y.dim(), "field dimensions differ");
    let comps = (0..x.dim())
        .map(|i| {
            let a = lie_derivative_fn(&y.0[i], x);
            let b = lie_derivative_fn(&x.0[i], y);
            simplify(&Expr::sub(a, b))
        })
        .collect();
    VectorFieldSym(comps)
}

/// `∇_X Y = (∂Y^i/∂x^j X^j + Γ^i_jk X^j Y^k) ∂/∂x^i`.
pub fn covariant_derivative(sys: &MechanicalSystem, x: &VectorFieldSym, y: &VectorFieldSym) -> VectorFieldSym {
    assert!(x.dim() == sys.n() && y.dim() == sys.n(), "field dimensions differ");
    let mut terms: Vec<Vec<Expr>> = (0..sys.n()).map(|i| vec![lie_derivative_fn(&y.0[i], x)]).collect();
    for (&(i, j, k), gam) in sys.gamma_entries() {
        terms[i].push(Expr::mul(vec![gam.clone(), x.0[j].clone(), y.0[k].clone()]));
        if j != k {
            terms[i].push(Expr::mul(vec![gam.clone(), x.0[k].clone(), y.0[j].clone()]));
        }
    }
    VectorFieldSym(terms.into_iter().map(|t| simplify(&Expr::add(t))).collect())
}

/// `∇²_{X,Y} Z = ∇_X ∇_Y Z − ∇_{∇_X Y} Z`.
pub fn second_covariant_derivative(
    sys: &MechanicalSystem,
    x: &VectorFieldSym,
    y: &VectorFieldSym,
    z: &VectorFieldSym,
) -> VectorFieldSym {
    let nyz = covariant_derivative(sys, y, z);
    let first = covariant_derivative(sys, x, &nyz);
    let nxy = covariant_derivative(sys, x, y);
    let second = covariant_derivative(sys, &nxy, z);
    first.sub(&second)
}

/// `∇²_{X,Y} β = L_X L_Y β − L_{∇_X Y} β` for a function `β`.
pub fn second_covariant_fn(sys: &MechanicalSystem, x: &VectorFieldSym, y: &VectorFieldSym, beta: &Expr) -> Expr {
    let a = lie_derivative_fn(&lie_derivative_fn(beta, y), x);
    let b = lie_derivative_fn(beta, &covariant_derivative(sys, x, y));
    simplify(&Expr::sub(a, b))
}

pub fn evaluate_field(x: &VectorFieldSym, p: &[f64], params: &Params) -> Result<Vec<f64>, EvalError> {
    x.eval(p, params)
}
