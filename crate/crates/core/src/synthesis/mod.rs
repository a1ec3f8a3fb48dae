//! Construction of the linearizing output, mechanical diffeomorphism and
//! mechanical feedback, and numerical verification of the result.

mod lambda;
mod output;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::checker::SamplingPlan;
use crate::expr::{simplify, EvalError, Expr, Params, Tape};
use crate::geometry::{lie_derivative_fn, MechanicalSystem};
use crate::linalg::{conditioning, controllability_rank, least_squares};
use crate::sampling::domain_samples;

pub use lambda::{extract_lambda, lambda_correct, Lambda};
pub use output::{annihilator, find_output, verify_output, LinearizingOutput};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthesisError {
    #[error("L_(ad_e^{j} g) h does not vanish (normalized residual {residual:.3e} at {witness:?})")]
    AnnihilationFailed { j: usize, witness: Vec<f64>, residual: f64 },
    #[error("L_(ad_e^(n-1) g) h vanishes (normalized margin {margin:.3e} at {witness:?})")]
    TransversalityFailed { witness: Vec<f64>, margin: f64 },
    #[error("no linearizing output found: {0}")]
    NotFound(String),
    #[error("Jacobian of phi is singular at {witness:?}")]
    SingularJacobian { witness: Vec<f64> },
    #[error("L_g L_e^(n-1) h vanishes at {witness:?}")]
    DecouplingSingular { witness: Vec<f64> },
    #[error("{object} residual {residual:.3e} exceeds tolerance at {witness:?}")]
    ResidualTooLarge { object: String, witness: Vec<f64>, residual: f64 },
    #[error("linear model is not controllable (Krylov rank {0})")]
    Uncontrollable(usize),
    #[error("Gamma~^n_nn varies along level sets of h by {spread:.3e} near {witness:?}")]
    LambdaNotUnivariate { witness: Vec<f64>, spread: f64 },
    #[error("no polynomial of degree <= 4 fits lambda (relative residual {0:.3e})")]
    FitFailed(f64),
    #[error("evaluation failed at {witness:?}: {error}")]
    Eval { witness: Vec<f64>, error: EvalError },
}

fn eval_at(e: &Expr, x: &[f64], p: &Params) -> Result<f64, SynthesisError> {
    e.eval(x, p).map_err(|error| SynthesisError::Eval { witness: x.to_vec(), error })
}

/// `φ = (L_e^{n−1} h, …, L_e h, h)` with its first and second derivatives.
#[derive(Debug, Clone)]
pub struct MechanicalDiffeo {
    pub phi: Vec<Expr>,
    /// `jacobian[a][i] = ∂φ_a/∂x^i`.
    pub jacobian: Vec<Vec<Expr>>,
    /// `hessians[a][j][k] = ∂²φ_a/∂x^j∂x^k`.
    pub hessians: Vec<Vec<Vec<Expr>>>,
}

impl MechanicalDiffeo {
    pub fn from_components(phi: Vec<Expr>) -> MechanicalDiffeo {
        let n = phi.len();
        let jacobian: Vec<Vec<Expr>> = phi.iter().map(|f| (0..n).map(|i| f.diff(i)).collect()).collect();
        let hessians = jacobian
            .iter()
            .map(|row| {
                let mut h = vec![vec![Expr::zero(); n]; n];
                for j in 0..n {
                    for k in j..n {
                        let v = row[j].diff(k);
                        h[j][k] = v.clone();
                        h[k][j] = v;
                    }
                }
                h
            })
            .collect();
        MechanicalDiffeo { phi, jacobian, hessians }
    }

    pub fn n(&self) -> usize {
        self.phi.len()
    }

    pub fn eval_phi(&self, x: &[f64], p: &Params) -> Result<Vec<f64>, SynthesisError> {
        self.phi.iter().map(|f| eval_at(f, x, p)).collect()
    }

    pub fn eval_jacobian(&self, x: &[f64], p: &Params) -> Result<DMatrix<f64>, SynthesisError> {
        let n = self.n();
        let mut m = DMatrix::zeros(n, n);
        for a in 0..n {
            for i in 0..n {
                m[(a, i)] = eval_at(&self.jacobian[a][i], x, p)?;
            }
        }
        Ok(m)
    }

    /// Tangent lift `(φ(x), Dφ(x) y)`.
    pub fn lift(&self, x: &[f64], y: &[f64], p: &Params) -> Result<(Vec<f64>, Vec<f64>), SynthesisError> {
        let xt = self.eval_phi(x, p)?;
        let yt = self.eval_jacobian(x, p)? * DVector::from_column_slice(y);
        Ok((xt, yt.iter().copied().collect()))
    }
}

/// `u = γ_jk y^j y^k + α + β ũ`.
#[derive(Debug, Clone)]
pub struct MechanicalFeedback {
    pub alpha: Expr,
    pub beta: Expr,
    /// Symmetric `n × n`.
    pub gamma: Vec<Vec<Expr>>,
}

impl MechanicalFeedback {
    pub fn identity(n: usize) -> MechanicalFeedback {
        MechanicalFeedback { alpha: Expr::zero(), beta: Expr::one(), gamma: vec![vec![Expr::zero(); n]; n] }
    }

    /// Control value at state `(x, y)` for new input `ũ`.
    pub fn control(&self, x: &[f64], y: &[f64], utilde: f64, p: &Params) -> Result<f64, EvalError> {
        let n = x.len();
        let mut quad = 0.0;
        for j in 0..n {
            for k in 0..n {
                if !self.gamma[j][k].is_zero() {
                    quad += self.gamma[j][k].eval(x, p)? * y[j] * y[k];
                }
            }
        }
        Ok(quad + self.alpha.eval(x, p)? + self.beta.eval(x, p)? * utilde)
    }
}

/// `ẏ̃ = E (x̃ + offset) + b ũ` with `x̃ = φ(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub e: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Translation applied to `φ` so the drift has no constant part.
    pub offset: DVector<f64>,
    pub fit_residual: f64,
}

impl LinearModel {
    /// Model state for original state `(x, y)`.
    pub fn state_of(
        &self,
        diffeo: &MechanicalDiffeo,
        x: &[f64],
        y: &[f64],
        p: &Params,
    ) -> Result<(Vec<f64>, Vec<f64>), SynthesisError> {
        let (mut xt, yt) = diffeo.lift(x, y, p)?;
        for (v, d) in xt.iter_mut().zip(self.offset.iter()) {
            *v += d;
        }
        Ok((xt, yt))
    }
}

/// Symbolic `φ` from an output `h`; Jacobian invertibility checked at samples.
pub fn build_diffeo(sys: &MechanicalSystem, h: &Expr, plan: &SamplingPlan) -> Result<MechanicalDiffeo, SynthesisError> {
    let n = sys.n();
    let mut chain = vec![simplify(h)];
    for _ in 1..n {
        let next = lie_derivative_fn(chain.last().unwrap(), sys.e());
        chain.push(next);
    }
    chain.reverse();
    let diffeo = MechanicalDiffeo::from_components(chain);
    for x in domain_samples(sys.domain(), plan.sample_count, plan.rng_seed) {
        let j = diffeo.eval_jacobian(&x, sys.params())?;
        let cols: Vec<Vec<f64>> = (0..n).map(|c| j.column(c).iter().copied().collect()).collect();
        if conditioning(&cols) <= plan.rank_tol {
            return Err(SynthesisError::SingularJacobian { witness: x });
        }
    }
    Ok(diffeo)
}

/// `β = 1/L_g φ1`, `α = −β L_e φ1`, `γ_jk = −β (∂²φ1/∂x^j∂x^k − ∂φ1/∂x^i Γ^i_jk)`.
pub fn build_feedback(
    sys: &MechanicalSystem,
    diffeo: &MechanicalDiffeo,
    plan: &SamplingPlan,
) -> Result<MechanicalFeedback, SynthesisError> {
    let n = sys.n();
    let phi1 = &diffeo.phi[0];
    let decoupling = lie_derivative_fn(phi1, sys.g());
    let p = sys.params();
    for x in domain_samples(sys.domain(), plan.sample_count, plan.rng_seed) {
        let d = eval_at(&decoupling, &x, p)?;
        let grad: f64 = diffeo.jacobian[0].iter().map(|c| c.eval(&x, p).unwrap_or(0.0).powi(2)).sum::<f64>().sqrt();
        let gn: f64 = sys.g().eval(&x, p).unwrap_or_default().iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(d.abs() > plan.rank_tol * (grad * gn).max(f64::MIN_POSITIVE)) {
            return Err(SynthesisError::DecouplingSingular { witness: x });
        }
    }
    let beta = simplify(&Expr::pow(decoupling, -1));
    let alpha = simplify(&Expr::neg(Expr::mul(vec![beta.clone(), lie_derivative_fn(phi1, sys.e())])));
    let mut gamma = vec![vec![Expr::zero(); n]; n];
    for j in 0..n {
        for k in j..n {
            let mut terms = vec![diffeo.hessians[0][j][k].clone()];
            for i in 0..n {
                let c = sys.christoffel(i, j, k);
                if !c.is_zero() && !diffeo.jacobian[0][i].is_zero() {
                    terms.push(Expr::neg(Expr::mul(vec![diffeo.jacobian[0][i].clone(), c])));
                }
            }
            let v = simplify(&Expr::neg(Expr::mul(vec![beta.clone(), Expr::add(terms)])));
            gamma[j][k] = v.clone();
            gamma[k][j] = v;
        }
    }
    Ok(MechanicalFeedback { alpha, beta, gamma })
}

/// Numeric objects of a system expressed in new coordinates at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Transformed {
    /// Row-major `[a][b][c]`.
    pub gamma: Vec<f64>,
    pub e: Vec<f64>,
    pub g: Vec<f64>,
    /// Magnitude of the terms combined into each `Γ̃` entry (for relative
    /// judgements of cancellation).
    pub gamma_scale: f64,
}

struct PointData {
    jac: DMatrix<f64>,
    jinv: DMatrix<f64>,
    hess: Vec<DMatrix<f64>>,
}

/// `Γ̃^a_bc = (J^a_i Γ^i_jk − H^a_jk) J⁻¹^j_b J⁻¹^k_c`, `ẽ = J e`, `g̃ = J g`.
fn push_forward(d: &PointData, gamma: &[f64], gamma_abs: &[f64], e: &[f64], g: &[f64]) -> Transformed {
    let n = d.jac.nrows();
    let mut out = vec![0.0; n * n * n];
    let mut scale: f64 = 1.0;
    let ji_abs = d.jinv.abs();
    for a in 0..n {
        // lower-index tensor in old coordinates, then contract with J⁻¹ twice
        let mut t = DMatrix::zeros(n, n);
        let mut t_abs = DMatrix::zeros(n, n);
        for j in 0..n {
            for k in 0..n {
                let mut s = -d.hess[a][(j, k)];
                let mut s_abs = d.hess[a][(j, k)].abs();
                for i in 0..n {
                    s += d.jac[(a, i)] * gamma[(i * n + j) * n + k];
                    s_abs += (d.jac[(a, i)] * gamma_abs[(i * n + j) * n + k]).abs();
                }
                t[(j, k)] = s;
                t_abs[(j, k)] = s_abs;
            }
        }
        let r = d.jinv.transpose() * t * &d.jinv;
        let r_abs = ji_abs.transpose() * t_abs * &ji_abs;
        for b in 0..n {
            for c in 0..n {
                out[(a * n + b) * n + c] = r[(b, c)];
                scale = scale.max(r_abs[(b, c)]);
            }
        }
    }
    let jm = |v: &[f64]| (&d.jac * DVector::from_column_slice(v)).iter().copied().collect::<Vec<f64>>();
    Transformed { gamma: out, e: jm(e), g: jm(g), gamma_scale: scale }
}

/// Everything needed to push a (closed-loop) system through `φ`, compiled
/// once and evaluated per point.
pub struct PointEval {
    tape: Tape,
    n: usize,
}

impl PointEval {
    /// `feedback = None` transforms the open loop.
    pub fn new(
        sys: &MechanicalSystem,
        diffeo: &MechanicalDiffeo,
        feedback: Option<&MechanicalFeedback>,
    ) -> Result<PointEval, SynthesisError> {
        let n = sys.n();
        let mut flat: Vec<Expr> = diffeo.phi.clone();
        flat.extend(diffeo.jacobian.iter().flatten().cloned());
        flat.extend(diffeo.hessians.iter().flatten().flatten().cloned());
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    flat.push(sys.christoffel(i, j, k));
                }
            }
        }
        flat.extend(sys.e().0.iter().cloned());
        flat.extend(sys.g().0.iter().cloned());
        let identity = MechanicalFeedback::identity(n);
        let fb = feedback.unwrap_or(&identity);
        flat.push(fb.alpha.clone());
        flat.push(fb.beta.clone());
        flat.extend(fb.gamma.iter().flatten().cloned());
        let tape = Tape::compile(&flat, sys.params())
            .map_err(|error| SynthesisError::Eval { witness: Vec::new(), error })?;
        Ok(PointEval { tape, n })
    }

    /// `(φ(x), transformed objects at x)`.
    pub fn at(&self, x: &[f64]) -> Result<(Vec<f64>, Transformed), SynthesisError> {
        let n = self.n;
        let (n2, n3) = (n * n, n * n * n);
        let v = self.tape.eval(x).map_err(|error| SynthesisError::Eval { witness: x.to_vec(), error })?;
        let mut off = 0;
        let mut take = |len: usize| {
            let s = &v[off..off + len];
            off += len;
            s
        };
        let phi = take(n).to_vec();
        let jac = DMatrix::from_row_slice(n, n, take(n2));
        let hess_flat = take(n3);
        let gamma = take(n3);
        let e = take(n);
        let g = take(n);
        let alpha = take(1)[0];
        let beta = take(1)[0];
        let gam = take(n2);
        if v.iter().any(|a| !a.is_finite()) {
            return Err(SynthesisError::Eval { witness: x.to_vec(), error: EvalError::DivisionByZero });
        }
        let cols: Vec<Vec<f64>> = (0..n).map(|c| jac.column(c).iter().copied().collect()).collect();
        let jinv = match jac.clone().try_inverse() {
            Some(m) if conditioning(&cols) > 1e-14 => m,
            _ => return Err(SynthesisError::SingularJacobian { witness: x.to_vec() }),
        };
        let hess = (0..n).map(|a| DMatrix::from_row_slice(n, n, &hess_flat[a * n2..(a + 1) * n2])).collect();
        let d = PointData { jac, jinv, hess };
        let mut cl = gamma.to_vec();
        let mut cl_abs: Vec<f64> = gamma.iter().map(|a| a.abs()).collect();
        for i in 0..n {
            for jk in 0..n2 {
                cl[i * n2 + jk] -= g[i] * gam[jk];
                cl_abs[i * n2 + jk] += (g[i] * gam[jk]).abs();
            }
        }
        let e_cl: Vec<f64> = e.iter().zip(g).map(|(ei, gi)| ei + gi * alpha).collect();
        let g_cl: Vec<f64> = g.iter().map(|gi| gi * beta).collect();
        Ok((phi, push_forward(&d, &cl, &cl_abs, &e_cl, &g_cl)))
    }
}

/// `(Γ̃, ẽ, g̃)` of `sys` in coordinates `x̃ = φ(x)` at the point `x`.
pub fn transform_at(
    sys: &MechanicalSystem,
    diffeo: &MechanicalDiffeo,
    x: &[f64],
) -> Result<Transformed, SynthesisError> {
    Ok(PointEval::new(sys, diffeo, None)?.at(x)?.1)
}

/// The closed loop under `feedback`, expressed in coordinates `φ`, at `x`.
pub fn closed_loop_at(
    sys: &MechanicalSystem,
    diffeo: &MechanicalDiffeo,
    feedback: &MechanicalFeedback,
    x: &[f64],
) -> Result<Transformed, SynthesisError> {
    Ok(PointEval::new(sys, diffeo, Some(feedback))?.at(x)?.1)
}

/// Check that the closed loop in coordinates `φ` is a controllable linear
/// mechanical system and return `(E, b)`.
pub fn verify_linearization(
    sys: &MechanicalSystem,
    diffeo: &MechanicalDiffeo,
    feedback: &MechanicalFeedback,
    plan: &SamplingPlan,
) -> Result<LinearModel, SynthesisError> {
    let n = sys.n();
    let tol = plan.membership_tol;
    let pts = domain_samples(sys.domain(), plan.sample_count, plan.rng_seed);
    let mut xs = Vec::with_capacity(pts.len());
    let mut es = Vec::with_capacity(pts.len());
    let mut gs = Vec::with_capacity(pts.len());
    let eval = PointEval::new(sys, diffeo, Some(feedback))?;
    for x in &pts {
        let (phi, t) = eval.at(x)?;
        let worst = t.gamma.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if worst > tol * t.gamma_scale {
            return Err(SynthesisError::ResidualTooLarge {
                object: "Christoffel symbols".into(),
                witness: x.clone(),
                residual: worst / t.gamma_scale,
            });
        }
        xs.push(phi);
        es.push(t.e);
        gs.push(t.g);
    }
    // g̃ must be constant
    let m = pts.len() as f64;
    let b = DVector::from_fn(n, |i, _| gs.iter().map(|g| g[i]).sum::<f64>() / m);
    let g_scale = b.amax().max(1.0);
    for (x, g) in pts.iter().zip(&gs) {
        let dev = g.iter().zip(b.iter()).fold(0.0f64, |acc, (a, c)| acc.max((a - c).abs()));
        if dev > tol * g_scale {
            return Err(SynthesisError::ResidualTooLarge {
                object: "input field".into(),
                witness: x.clone(),
                residual: dev / g_scale,
            });
        }
    }
    // ẽ ≈ E x̃ + c, least squares with per-column scaling
    let col_scale: Vec<f64> = (0..n).map(|j| xs.iter().fold(0.0f64, |a, x| a.max(x[j].abs())).max(1e-300)).collect();
    let design = DMatrix::from_fn(pts.len(), n + 1, |r, c| if c < n { xs[r][c] / col_scale[c] } else { 1.0 });
    let mut e_mat = DMatrix::zeros(n, n);
    let mut c_vec = DVector::zeros(n);
    let e_scale = es.iter().flatten().fold(1.0f64, |a, v| a.max(v.abs()));
    let mut fit_residual: f64 = 0.0;
    let mut fit_witness = pts[0].clone();
    for i in 0..n {
        let rhs = DVector::from_fn(pts.len(), |r, _| es[r][i]);
        let coef = least_squares(&design, &rhs);
        let resid = &rhs - &design * &coef;
        for (r, v) in resid.iter().enumerate() {
            if v.abs() / e_scale > fit_residual {
                fit_residual = v.abs() / e_scale;
                fit_witness = pts[r].clone();
            }
        }
        for j in 0..n {
            e_mat[(i, j)] = coef[j] / col_scale[j];
        }
        c_vec[i] = coef[n];
    }
    if fit_residual > tol {
        return Err(SynthesisError::ResidualTooLarge {
            object: "drift affine fit".into(),
            witness: fit_witness,
            residual: fit_residual,
        });
    }
    // entries whose contribution over the samples is below the tolerance are round-off
    for i in 0..n {
        for j in 0..n {
            if (e_mat[(i, j)] * col_scale[j]).abs() <= tol * e_scale {
                e_mat[(i, j)] = 0.0;
            }
        }
        if c_vec[i].abs() <= tol * e_scale {
            c_vec[i] = 0.0;
        }
    }
    let mut b = b;
    for v in b.iter_mut() {
        if v.abs() <= tol * g_scale {
            *v = 0.0;
        }
    }
    // absorb a constant drift by translating coordinates: E (x̃ + d) = E x̃ + c
    let offset = if c_vec.amax() > 0.0 {
        let d = least_squares(&e_mat, &c_vec);
        let miss = (&e_mat * &d - &c_vec).amax();
        if miss > tol * e_scale {
            return Err(SynthesisError::ResidualTooLarge {
                object: "drift offset".into(),
                witness: pts[0].clone(),
                residual: miss / e_scale,
            });
        }
        d
    } else {
        DVector::zeros(n)
    };
    let rank = controllability_rank(&e_mat, &b, plan.rank_tol);
    if rank < n {
        return Err(SynthesisError::Uncontrollable(rank));
    }
    Ok(LinearModel { e: e_mat, b, offset, fit_residual })
}

/// Everything produced by the synthesis pipeline.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub output: LinearizingOutput,
    /// Output actually used for `φ` (differs from `output.h` after a λ correction).
    pub h: Expr,
    pub lambda: Option<Expr>,
    pub diffeo: MechanicalDiffeo,
    pub feedback: MechanicalFeedback,
    pub model: LinearModel,
}

/// Find or verify `h`, build `φ` and the feedback, verify linearity, and
/// apply the λ correction when the first pass leaves `Γ̃^n_nn ≠ 0`.
pub fn synthesize(
    sys: &MechanicalSystem,
    h: Option<&Expr>,
    plan: &SamplingPlan,
) -> Result<Synthesis, SynthesisError> {
    let output = match h {
        Some(h) => verify_output(sys, h, plan)?,
        None => find_output(sys, plan)?,
    };
    let diffeo = build_diffeo(sys, &output.h, plan)?;
    let feedback = build_feedback(sys, &diffeo, plan)?;
    match verify_linearization(sys, &diffeo, &feedback, plan) {
        Ok(model) => Ok(Synthesis { h: output.h.clone(), output, lambda: None, diffeo, feedback, model }),
        Err(first @ SynthesisError::ResidualTooLarge { .. }) => {
            let lam = match extract_lambda(sys, &diffeo, &feedback, plan)? {
                Lambda::Zero => return Err(first),
                Lambda::Poly(l) => l,
            };
            let range = output_range(sys, &output.h, plan)?;
            let h_star = lambda_correct(&output.h, &lam, range);
            let diffeo = build_diffeo(sys, &h_star, plan)?;
            let feedback = build_feedback(sys, &diffeo, plan)?;
            let model = verify_linearization(sys, &diffeo, &feedback, plan)?;
            Ok(Synthesis { output, h: h_star, lambda: Some(lam), diffeo, feedback, model })
        }
        Err(e) => Err(e),
    }
}

/// Range of `h` over the domain samples, padded by 10%.
pub(crate) fn output_range(sys: &MechanicalSystem, h: &Expr, plan: &SamplingPlan) -> Result<(f64, f64), SynthesisError> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let count = plan.sample_count.max(256);
    for x in domain_samples(sys.domain(), count, plan.rng_seed ^ 0x5eed) {
        let v = eval_at(h, &x, sys.params())?;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let pad = 0.1 * (hi - lo).max(1e-3);
    Ok((lo - pad, hi + pad))
}
