use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::checker::SamplingPlan;
use crate::expr::{integrate_univariate, simplify, Expr, NumFn};
use crate::geometry::MechanicalSystem;
use crate::linalg::least_squares;
use crate::sampling::domain_samples;

use super::{eval_at, MechanicalDiffeo, MechanicalFeedback, PointEval, SynthesisError};

pub const LAMBDA_MAX_DEGREE: usize = 4;
/// Relative tolerance for the polynomial fit and the level-set check.
pub const LAMBDA_TOL: f64 = 1e-7;
/// Knots used when `H` has no closed form.
pub const H_KNOTS: usize = 401;

#[derive(Debug, Clone, PartialEq)]
pub enum Lambda {
    Zero,
    /// Polynomial in the placeholder `x1`, standing for `s = h(x)`.
    Poly(Expr),
}

/// Read `λ(s) = Γ̃^n_nn` of the first-pass closed loop as a polynomial in
/// `s = φ_n(x)`. Independence from the other coordinates is tested by moving
/// along level sets of `φ_n`.
pub fn extract_lambda(
    sys: &MechanicalSystem,
    diffeo: &MechanicalDiffeo,
    feedback: &MechanicalFeedback,
    plan: &SamplingPlan,
) -> Result<Lambda, SynthesisError> {
    let n = sys.n();
    let last = n * n * n - 1;
    let h = &diffeo.phi[n - 1];
    let pts = domain_samples(sys.domain(), plan.sample_count, plan.rng_seed);
    let mut ss = Vec::with_capacity(pts.len());
    let mut vs = Vec::with_capacity(pts.len());
    let mut significant = false;
    let eval = PointEval::new(sys, diffeo, Some(feedback))?;
    for x in &pts {
        let (phi, t) = eval.at(x)?;
        let v = t.gamma[last];
        significant |= v.abs() > plan.membership_tol * t.gamma_scale;
        ss.push(phi[n - 1]);
        vs.push(v);
    }
    if !significant {
        return Ok(Lambda::Zero);
    }
    let v_scale = vs.iter().fold(1.0f64, |a, v| a.max(v.abs()));

    // level-set probe
    let grad: Vec<Expr> = (0..n).map(|i| h.diff(i)).collect();
    for (idx, x) in pts.iter().enumerate().take(8) {
        if let Some(moved) = along_level_set(sys, h, &grad, x, ss[idx], idx as u64)? {
            let v = eval.at(&moved)?.1.gamma[last];
            let spread = (v - vs[idx]).abs() / v_scale;
            if spread > LAMBDA_TOL {
                return Err(SynthesisError::LambdaNotUnivariate { witness: x.clone(), spread });
            }
        }
    }

    // lowest-degree polynomial in the normalized variable (s − mid)/half
    let lo = ss.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ss.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mid = 0.5 * (lo + hi);
    let half = (0.5 * (hi - lo)).max(1e-12);
    let rhs = DVector::from_column_slice(&vs);
    let mut best = f64::INFINITY;
    for deg in 0..=LAMBDA_MAX_DEGREE {
        let a = DMatrix::from_fn(ss.len(), deg + 1, |r, c| ((ss[r] - mid) / half).powi(c as i32));
        let coef = least_squares(&a, &rhs);
        let resid = (&rhs - &a * &coef).amax() / v_scale;
        best = best.min(resid);
        if resid <= LAMBDA_TOL {
            return Ok(Lambda::Poly(monomial_poly(coef.as_slice(), mid, half)));
        }
    }
    Err(SynthesisError::FitFailed(best))
}

/// Expand `Σ c_d ((s − m)/w)^d` into monomials of `x1`, snapping
/// near-integer and negligible coefficients.
fn monomial_poly(c: &[f64], m: f64, w: f64) -> Expr {
    let deg = c.len() - 1;
    let mut mono = vec![0.0; deg + 1];
    for (d, &cd) in c.iter().enumerate() {
        // ((s − m)/w)^d = w^−d Σ_k C(d,k) s^k (−m)^(d−k)
        let mut binom = 1.0;
        for k in 0..=d {
            mono[k] += cd * binom * (-m).powi((d - k) as i32) / w.powi(d as i32);
            binom = binom * (d - k) as f64 / (k + 1) as f64;
        }
    }
    let top = mono.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let terms = mono
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > 1e-9 * top)
        .map(|(k, &v)| {
            let r = v.round();
            let coeff = if (v - r).abs() <= 1e-8 * v.abs().max(1.0) { Expr::int(r as i64) } else { Expr::constant(v) };
            Expr::mul(vec![coeff, Expr::pow(Expr::var(0), k as i32)])
        })
        .collect();
    simplify(&Expr::add(terms))
}

/// A nearby point with the same value of `h`, or `None` when the gradient
/// vanishes or the step leaves the domain.
fn along_level_set(
    sys: &MechanicalSystem,
    h: &Expr,
    grad: &[Expr],
    x: &[f64],
    s: f64,
    salt: u64,
) -> Result<Option<Vec<f64>>, SynthesisError> {
    let n = x.len();
    let p = sys.params();
    let eval_grad = |y: &[f64]| grad.iter().map(|c| eval_at(c, y, p)).collect::<Result<Vec<f64>, _>>();
    let gx = eval_grad(x)?;
    let gn2: f64 = gx.iter().map(|v| v * v).sum();
    if gn2 == 0.0 {
        return Ok(None);
    }
    let bounds = sys.domain().bounds();
    let width = bounds.iter().map(|(a, b)| b - a).fold(f64::INFINITY, f64::min);
    // deterministic direction from the sample index
    let dir: Vec<f64> = (0..n).map(|i| (((i as u64 + 1) * 2_654_435_761 + salt * 40_503) % 1000) as f64 / 500.0 - 1.0).collect();
    let proj: f64 = dir.iter().zip(&gx).map(|(a, b)| a * b).sum::<f64>() / gn2;
    let tangent: Vec<f64> = dir.iter().zip(&gx).map(|(a, b)| a - proj * b).collect();
    let tn = tangent.iter().map(|v| v * v).sum::<f64>().sqrt();
    if tn == 0.0 {
        return Ok(None);
    }
    let step = 0.1 * width;
    let mut y: Vec<f64> = x.iter().zip(&tangent).map(|(a, t)| a + step * t / tn).collect();
    for _ in 0..50 {
        let r = eval_at(h, &y, p)? - s;
        if r.abs() <= 1e-14 * s.abs().max(1.0) {
            break;
        }
        let gy = eval_grad(&y)?;
        let g2: f64 = gy.iter().map(|v| v * v).sum();
        if g2 == 0.0 {
            return Ok(None);
        }
        for (yi, gi) in y.iter_mut().zip(&gy) {
            *yi -= r * gi / g2;
        }
    }
    if !sys.domain().contains(&y) || (eval_at(h, &y, p)? - s).abs() > 1e-12 * s.abs().max(1.0) {
        return Ok(None);
    }
    Ok(Some(y))
}

/// `h* = H(h0)` with `H' = Λ = exp(∫ λ)`. `H` is closed form when the
/// integral has one, otherwise tabulated over `range` (values of `h0`).
pub fn lambda_correct(h0: &Expr, lambda: &Expr, range: (f64, f64)) -> Expr {
    if lambda.is_zero() {
        return h0.clone();
    }
    let big_lambda = simplify(&Expr::exp(
        integrate_univariate(lambda, 0).expect("lambda is a polynomial in one variable"),
    ));
    let outer = match integrate_univariate(&big_lambda, 0) {
        Ok(closed) => closed,
        Err(_) => {
            let f = NumFn::tabulate("H", big_lambda, range.0, range.1, H_KNOTS);
            Expr::numfn(Arc::new(f), Expr::var(0))
        }
    };
    simplify(&outer.substitute(&|j| if j == 0 { Some(h0.clone()) } else { None }))
}
