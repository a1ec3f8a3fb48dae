use crate::checker::SamplingPlan;
use crate::expr::{integrate_univariate, simplify, Expr};
use crate::geometry::MechanicalSystem;
use crate::sampling::{domain_samples, identically_zero};

use super::{eval_at, SynthesisError};

/// A verified linearizing output.
#[derive(Debug, Clone)]
pub struct LinearizingOutput {
    pub h: Expr,
    /// Largest normalized `|L_(ad^j g) h|` over samples, `j <= n − 2`.
    pub annihilation_residual: f64,
    /// Smallest normalized `|L_(ad^(n−1) g) h|` over samples.
    pub transversality_margin: f64,
    /// How `h` was obtained.
    pub method: String,
}

/// `|⟨a, b⟩| / (‖a‖ ‖b‖)`, 0 when `b` vanishes and 1 when only `a` does.
fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nb == 0.0 {
        return 0.0;
    }
    if na == 0.0 {
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).abs()
}

/// Check `L_(ad_e^j g) h = 0` for `j <= n − 2` and `L_(ad_e^(n−1) g) h ≠ 0`
/// on the domain samples.
pub fn verify_output(sys: &MechanicalSystem, h: &Expr, plan: &SamplingPlan) -> Result<LinearizingOutput, SynthesisError> {
    verify_with(sys, h, plan, "given".into())
}

fn verify_with(
    sys: &MechanicalSystem,
    h: &Expr,
    plan: &SamplingPlan,
    method: String,
) -> Result<LinearizingOutput, SynthesisError> {
    let n = sys.n();
    let p = sys.params();
    let h = simplify(h);
    let grad: Vec<Expr> = (0..n).map(|i| h.diff(i)).collect();
    let ad = sys.ad_sequence(n - 1);
    let mut worst: f64 = 0.0;
    let mut margin = f64::INFINITY;
    for x in domain_samples(sys.domain(), plan.sample_count, plan.rng_seed) {
        let dh: Vec<f64> = grad.iter().map(|c| eval_at(c, &x, p)).collect::<Result<_, _>>()?;
        for (j, field) in ad.iter().enumerate() {
            let v = field.eval(&x, p).map_err(|error| SynthesisError::Eval { witness: x.clone(), error })?;
            let c = cosine(&dh, &v);
            if j + 1 < n {
                if !(c <= plan.membership_tol) {
                    return Err(SynthesisError::AnnihilationFailed { j, witness: x, residual: c });
                }
                worst = worst.max(c);
            } else {
                let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                let m = if nv == 0.0 { 0.0 } else { c };
                if !(m > plan.rank_tol) {
                    return Err(SynthesisError::TransversalityFailed { witness: x, margin: m });
                }
                margin = margin.min(m);
            }
        }
    }
    Ok(LinearizingOutput { h, annihilation_residual: worst, transversality_margin: margin, method })
}

fn det(m: &[Vec<Expr>]) -> Expr {
    match m.len() {
        0 => Expr::one(),
        1 => m[0][0].clone(),
        k => {
            let mut terms = Vec::new();
            for c in 0..k {
                if m[0][c].is_zero() {
                    continue;
                }
                let minor: Vec<Vec<Expr>> = m[1..]
                    .iter()
                    .map(|row| row.iter().enumerate().filter(|&(j, _)| j != c).map(|(_, v)| v.clone()).collect())
                    .collect();
                let t = Expr::mul(vec![m[0][c].clone(), det(&minor)]);
                terms.push(if c % 2 == 0 { t } else { Expr::neg(t) });
            }
            simplify(&Expr::add(terms))
        }
    }
}

/// One-form `ω` annihilating `g, ad_e g, …, ad_e^(n−2) g`: the generalized
/// cross product `ω_i = (−1)^i det(M without row i)` (zero-based `i`).
pub fn annihilator(sys: &MechanicalSystem) -> Vec<Expr> {
    let n = sys.n();
    let gens = sys.ad_sequence(n - 2);
    (0..n)
        .map(|i| {
            let rows: Vec<Vec<Expr>> =
                (0..n).filter(|&r| r != i).map(|r| gens.iter().map(|v| v.0[r].clone()).collect()).collect();
            let d = det(&rows);
            if i % 2 == 0 {
                d
            } else {
                simplify(&Expr::neg(d))
            }
        })
        .collect()
}

/// Search for `h` with `dh` proportional to the annihilator of `E^(n−2)`.
///
/// The annihilator is normalized by each nonvanishing component in turn
/// (last first); if every normalized component `ω_i/ω_k` depends on `x^i`
/// alone, `h = Σ ∫ ω_i/ω_k dx^i`. Coordinates that the check cannot rule out
/// are frozen at the domain center before integration.
fn snap(v: f64) -> Expr {
    let r = v.round();
    if (v - r).abs() <= 1e-12 * v.abs().max(1.0) {
        Expr::int(r as i64)
    } else {
        Expr::constant(v)
    }
}

pub fn find_output(sys: &MechanicalSystem, plan: &SamplingPlan) -> Result<LinearizingOutput, SynthesisError> {
    let n = sys.n();
    let p = sys.params();
    let dom = sys.domain();
    let omega = annihilator(sys);
    let center = dom.center();
    let mut last_err = SynthesisError::NotFound("annihilator of E^(n-2) vanishes".into());
    for k in (0..n).rev() {
        if identically_zero(&omega[k], dom, p, plan.rng_seed).zero {
            continue;
        }
        let ratios: Vec<Expr> =
            omega.iter().map(|w| simplify(&Expr::mul(vec![w.clone(), Expr::pow(omega[k].clone(), -1)]))).collect();
        let separable = ratios.iter().enumerate().all(|(i, r)| {
            r.free_vars()
                .iter()
                .filter(|&&j| j != i)
                .all(|&j| identically_zero(&r.diff(j), dom, p, plan.rng_seed).zero)
        });
        if !separable {
            last_err = SynthesisError::NotFound("annihilator of E^(n-2) is not separable after normalization".into());
            continue;
        }
        // ratios that are constant only numerically (a common factor the
        // simplifier could not cancel) are replaced by their value
        let constant: Vec<bool> = ratios
            .iter()
            .map(|r| r.free_vars().iter().all(|&j| identically_zero(&r.diff(j), dom, p, plan.rng_seed).zero))
            .collect();
        let mut parts = Vec::with_capacity(n);
        for (i, r) in ratios.iter().enumerate() {
            let frozen = if constant[i] && !r.is_var_free() {
                match r.eval(&center, p) {
                    Ok(v) => Expr::mul(vec![snap(v), Expr::var(i)]),
                    Err(e) => {
                        last_err = SynthesisError::Eval { witness: center.clone(), error: e };
                        break;
                    }
                }
            } else {
                simplify(&r.substitute(&|j| if j != i { Some(Expr::constant(center[j])) } else { None }))
            };
            if constant[i] && !r.is_var_free() {
                parts.push(simplify(&frozen));
                continue;
            }
            match integrate_univariate(&frozen, i) {
                Ok(f) => parts.push(f),
                Err(e) => {
                    last_err = SynthesisError::NotFound(format!("cannot integrate component {}: {e}", i + 1));
                    break;
                }
            }
        }
        if parts.len() < n {
            continue;
        }
        let h = simplify(&Expr::add(parts));
        let method = if constant.iter().all(|&c| c) {
            format!("constant annihilator, normalized by component {}", k + 1)
        } else {
            format!("separable annihilator, normalized by component {}", k + 1)
        };
        match verify_with(sys, &h, plan, method) {
            Ok(out) => return Ok(out),
            Err(e) => last_err = e,
        }
    }
    Err(last_err)
}
