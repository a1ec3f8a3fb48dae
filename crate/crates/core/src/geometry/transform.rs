use nalgebra::{DMatrix, DVector};

use crate::expr::{simplify, Expr};

use super::{MechanicalSystem, SystemError, VectorFieldSym};

/// Closed loop under `u = γ_jk y^j y^k + α + β ũ`:
/// `Γ̃^i_jk = Γ^i_jk − g^i γ_jk`, `ẽ = e + g α`, `g̃ = g β`.
pub fn apply_feedback(
    sys: &MechanicalSystem,
    alpha: &Expr,
    beta: &Expr,
    gamma: &[Vec<Expr>],
) -> Result<MechanicalSystem, SystemError> {
    let n = sys.n();
    let g = sys.g();
    let mut entries = Vec::new();
    for i in 0..n {
        for j in 0..n {
            for k in j..n {
                let t = simplify(&Expr::sub(
                    sys.christoffel(i, j, k),
                    Expr::mul(vec![g.0[i].clone(), gamma[j][k].clone()]),
                ));
                if !t.is_zero() {
                    entries.push(((i, j, k), t));
                }
            }
        }
    }
    let e = sys.e().add(&g.scale(alpha));
    let g_new = g.scale(beta);
    MechanicalSystem::new(n, entries, e, g_new, sys.domain().clone(), sys.params().clone())
}

/// The system in coordinates `x̃ = T x + c`, with the tangent lift
/// `ỹ = T y`. The domain becomes the image of the old one.
pub fn linear_change(sys: &MechanicalSystem, t: &DMatrix<f64>, c: &DVector<f64>) -> Result<MechanicalSystem, SystemError> {
    let n = sys.n();
    assert!(t.nrows() == n && t.ncols() == n && c.len() == n, "transformation size mismatch");
    let t_inv = t.clone().try_inverse().expect("coordinate change must be invertible");
    // x = T^{-1} (x̃ − c)
    let back: Vec<Expr> = (0..n)
        .map(|i| {
            let shift: f64 = -(0..n).map(|j| t_inv[(i, j)] * c[j]).sum::<f64>();
            let mut terms: Vec<Expr> = (0..n)
                .filter(|&j| t_inv[(i, j)] != 0.0)
                .map(|j| Expr::scale(t_inv[(i, j)], Expr::var(j)))
                .collect();
            if shift != 0.0 {
                terms.push(Expr::constant(shift));
            }
            simplify(&Expr::add(terms))
        })
        .collect();
    let pull = |e: &Expr| simplify(&e.substitute(&|j| Some(back[j].clone())));
    let push = |v: &VectorFieldSym| -> VectorFieldSym {
        let pulled: Vec<Expr> = v.0.iter().map(pull).collect();
        VectorFieldSym(
            (0..n)
                .map(|a| {
                    simplify(&Expr::add(
                        (0..n)
                            .filter(|&i| t[(a, i)] != 0.0 && !pulled[i].is_zero())
                            .map(|i| Expr::scale(t[(a, i)], pulled[i].clone()))
                            .collect(),
                    ))
                })
                .collect(),
        )
    };
    let gamma_pulled: Vec<((usize, usize, usize), Expr)> =
        sys.gamma_entries().iter().map(|(&k, v)| (k, pull(v))).collect();
    let mut entries = Vec::new();
    for a in 0..n {
        for b in 0..n {
            for cc in b..n {
                let mut terms = Vec::new();
                for ((i, j, k), gam) in &gamma_pulled {
                    let coef = |j: usize, k: usize| t[(a, *i)] * t_inv[(j, b)] * t_inv[(k, cc)];
                    let mut w = coef(*j, *k);
                    if j != k {
                        w += coef(*k, *j);
                    }
                    if w != 0.0 {
                        terms.push(Expr::scale(w, gam.clone()));
                    }
                }
                let s = simplify(&Expr::add(terms));
                if !s.is_zero() {
                    entries.push(((a, b, cc), s));
                }
            }
        }
    }
    let domain = sys.domain().mapped(t, c).expect("invertible");
    MechanicalSystem::new(n, entries, push(sys.e()), push(sys.g()), domain, sys.params().clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Params;
    use crate::sampling::Domain;

    #[test]
    fn linear_change_matches_pushforward() {
        // Γ^1_12 = x2, e = (x2, sin x1), g = (1, x1)
        let sys = MechanicalSystem::new(
            2,
            vec![((0, 0, 1), Expr::var(1))],
            VectorFieldSym(vec![Expr::var(1), Expr::sin(Expr::var(0))]),
            VectorFieldSym(vec![Expr::one(), Expr::var(0)]),
            Domain::from_bounds(&[(-1.0, 1.0), (-1.0, 1.0)]).unwrap(),
            Params::new(),
        )
        .unwrap();
        let t = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, -1.0, 3.0]);
        let c = DVector::from_vec(vec![0.5, 0.25]);
        let s2 = linear_change(&sys, &t, &c).unwrap();
        let x = [0.3, -0.4];
        let xt: Vec<f64> = (&t * DVector::from_column_slice(&x) + &c).iter().copied().collect();
        let p = Params::new();
        let e = DVector::from_vec(sys.e().eval(&x, &p).unwrap());
        let et = DVector::from_vec(s2.e().eval(&xt, &p).unwrap());
        assert!((&t * e - et).norm() < 1e-14);
        // tensor rule for a linear map: Γ̃^a_bc = T^a_i Γ^i_jk Tinv^j_b Tinv^k_c
        let ti = t.clone().try_inverse().unwrap();
        let g = sys.eval_gamma(&x).unwrap();
        let gt = s2.eval_gamma(&xt).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                for cc in 0..2 {
                    let mut want = 0.0;
                    for i in 0..2 {
                        for j in 0..2 {
                            for k in 0..2 {
                                want += t[(a, i)] * g[(i * 2 + j) * 2 + k] * ti[(j, b)] * ti[(k, cc)];
                            }
                        }
                    }
                    assert!((gt[(a * 2 + b) * 2 + cc] - want).abs() < 1e-13);
                }
            }
        }
        assert!(s2.domain().contains(&xt));
    }

    #[test]
    fn feedback_action() {
        let sys = MechanicalSystem::new(
            2,
            vec![],
            VectorFieldSym(vec![Expr::var(1), Expr::zero()]),
            VectorFieldSym(vec![Expr::zero(), Expr::one()]),
            Domain::from_bounds(&[(-1.0, 1.0), (-1.0, 1.0)]).unwrap(),
            Params::new(),
        )
        .unwrap();
        let gamma = vec![vec![Expr::var(0), Expr::int(2)], vec![Expr::int(2), Expr::zero()]];
        let cl = apply_feedback(&sys, &Expr::var(0), &Expr::int(3), &gamma).unwrap();
        assert_eq!(cl.christoffel(1, 0, 0), simplify(&Expr::neg(Expr::var(0))));
        assert_eq!(cl.christoffel(1, 1, 0), Expr::int(-2));
        assert_eq!(cl.e().0[1], Expr::var(0));
        assert_eq!(cl.g().0[1], Expr::int(3));
    }
}
