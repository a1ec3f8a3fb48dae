#![allow(dead_code)]

use std::path::PathBuf;

use mechlin::expr::{simplify, Expr};
use mechlin::geometry::{MechanicalSystem, VectorFieldSym};
use mechlin::sampling::Domain;
use mechlin::system_file::SystemFile;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn systems_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../systems")
}

pub fn load(name: &str) -> MechanicalSystem {
    let text = std::fs::read_to_string(systems_dir().join(format!("{name}.json"))).unwrap();
    let file: SystemFile = serde_json::from_str(&text).unwrap();
    file.build().unwrap()
}

fn coeff(rng: &mut ChaCha8Rng) -> Expr {
    // small exact rationals keep simplify honest
    let num = rng.gen_range(-6i64..=6);
    let den = rng.gen_range(1i64..=4);
    Expr::div(Expr::int(if num == 0 { 1 } else { num }), Expr::int(den))
}

/// Random smooth scalar: sums of polynomial and trigonometric monomials in
/// `n` variables, with rational coefficients.
pub fn random_function(rng: &mut ChaCha8Rng, n: usize, terms: usize) -> Expr {
    let mut parts = Vec::with_capacity(terms);
    for _ in 0..terms {
        let a = Expr::var(rng.gen_range(0..n));
        let b = Expr::var(rng.gen_range(0..n));
        let t = match rng.gen_range(0..6) {
            0 => Expr::one(),
            1 => a,
            2 => Expr::mul(vec![a, b]),
            3 => Expr::sin(a),
            4 => Expr::mul(vec![Expr::cos(a), b]),
            _ => Expr::pow(a, 2),
        };
        parts.push(Expr::mul(vec![coeff(rng), t]));
    }
    simplify(&Expr::add(parts))
}

pub fn random_field(rng: &mut ChaCha8Rng, n: usize) -> VectorFieldSym {
    VectorFieldSym((0..n).map(|_| random_function(rng, n, 2)).collect())
}

pub fn unit_box(n: usize) -> Domain {
    Domain::from_bounds(&vec![(-1.0, 1.0); n]).unwrap()
}

pub fn random_point(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Random Christoffel symbols on up to `density` of the slots `(i, j ≤ k)`,
/// skipping rows in `skip`.
pub fn random_gamma(rng: &mut ChaCha8Rng, n: usize, density: f64, skip: &[usize]) -> Vec<((usize, usize, usize), Expr)> {
    let mut out = Vec::new();
    for i in (0..n).filter(|i| !skip.contains(i)) {
        for j in 0..n {
            for k in j..n {
                if rng.gen_bool(density) {
                    out.push(((i, j, k), random_function(rng, n, 2)));
                }
            }
        }
    }
    out
}

/// A generic system with random connection, drift and input field.
pub fn random_system(rng: &mut ChaCha8Rng, n: usize) -> MechanicalSystem {
    let gamma = random_gamma(rng, n, 0.4, &[]);
    let e = random_field(rng, n);
    let mut g = random_field(rng, n);
    g.0[0] = simplify(&Expr::add(vec![Expr::int(2), g.0[0].clone()]));
    MechanicalSystem::new(n, gamma, e, g, unit_box(n), Default::default()).unwrap()
}

/// `ẏ¹ = u`, `ẏ^i = −Γ^i_jk y^j y^k + x^{i−1}` with random `Γ` (`Γ¹ = 0`).
pub fn random_normal_form(rng: &mut ChaCha8Rng, n: usize) -> MechanicalSystem {
    let gamma = random_gamma(rng, n, 0.3, &[0]);
    let e = VectorFieldSym((0..n).map(|i| if i == 0 { Expr::zero() } else { Expr::var(i - 1) }).collect());
    let g = VectorFieldSym::coordinate(n, 0);
    MechanicalSystem::new(n, gamma, e, g, unit_box(n), Default::default()).unwrap()
}

/// Random controllable `(E, b)`.
pub fn random_lms(rng: &mut ChaCha8Rng, n: usize) -> (DMatrix<f64>, DVector<f64>) {
    loop {
        let e = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let b = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let mut k = DMatrix::zeros(n, n);
        let mut col = b.clone();
        for j in 0..n {
            k.set_column(j, &col);
            col = &e * col;
        }
        let sv = k.singular_values();
        if sv.min() > 1e-3 * sv.max() {
            return (e, b);
        }
    }
}

pub fn lms_system(e: &DMatrix<f64>, b: &DVector<f64>) -> MechanicalSystem {
    MechanicalSystem::linear(e, b, unit_box(b.len())).unwrap()
}

/// Random `(α, β, γ)` with `β` bounded away from zero on the unit box.
pub fn random_feedback(rng: &mut ChaCha8Rng, n: usize) -> (Expr, Expr, Vec<Vec<Expr>>) {
    let alpha = random_function(rng, n, 2);
    let sign = if rng.gen_bool(0.5) { 1 } else { -1 };
    let beta = simplify(&Expr::mul(vec![
        Expr::int(sign),
        Expr::add(vec![
            Expr::int(2),
            Expr::mul(vec![
                Expr::div(Expr::int(rng.gen_range(-3i64..=3)), Expr::int(4)),
                Expr::sin(Expr::var(rng.gen_range(0..n))),
            ]),
        ]),
    ]));
    let mut gamma = vec![vec![Expr::zero(); n]; n];
    for j in 0..n {
        for k in j..n {
            if rng.gen_bool(0.5) {
                let f = random_function(rng, n, 1);
                gamma[j][k] = f.clone();
                gamma[k][j] = f;
            }
        }
    }
    (alpha, beta, gamma)
}

/// Random well-conditioned `(T, c)`.
pub fn random_linear_change(rng: &mut ChaCha8Rng, n: usize) -> (DMatrix<f64>, DVector<f64>) {
    loop {
        let t = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } + rng.gen_range(-0.5..0.5));
        let sv = t.singular_values();
        if sv.min() > 0.2 * sv.max() {
            let c = DVector::from_fn(n, |_, _| rng.gen_range(-0.3..0.3));
            return (t, c);
        }
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (u, v)| m.max((u - v).abs()))
}

/// Closed form of `∇²_{ad^k g, ad^j g} e` (0-based `k`, `j`) for the normal
/// form, written out from the component formula rather than via `∇`.
pub fn normal_form_oracle(sys: &MechanicalSystem, k: usize, j: usize, x: &[f64]) -> Vec<f64> {
    let n = sys.n();
    let p = sys.params();
    let gam = sys.eval_gamma(x).unwrap();
    let g = |i: usize, a: usize, b: usize| -> f64 {
        if i >= n || a >= n || b >= n {
            0.0
        } else {
            gam[(i * n + a) * n + b]
        }
    };
    let e: Vec<f64> = (0..n).map(|s| if s == 0 { 0.0 } else { x[s - 1] }).collect();
    let sign = if (j + k) % 2 == 0 { 1.0 } else { -1.0 };
    (0..n)
        .map(|i| {
            let mut v = 0.0;
            for s in 0..n {
                v += sys.christoffel(i, j, s).diff(k).eval(x, p).unwrap() * e[s];
            }
            v += g(i, j, k + 1) + g(i, k, j + 1);
            if i > 0 {
                v -= g(i - 1, k, j);
            }
            for s in 0..n {
                for d in 0..n {
                    v += (g(d, j, s) * g(i, k, d) - g(d, k, j) * g(i, d, s)) * e[s];
                }
            }
            sign * v
        })
        .collect()
}

/// Largest deviation between the generic `∇²` and the closed form over all
/// `(k, j)` at the given points.
pub fn normal_form_deviation(sys: &MechanicalSystem, pts: &[Vec<f64>]) -> f64 {
    use mechlin::geometry::second_covariant_derivative;
    let n = sys.n();
    let ad = sys.ad_sequence(n - 1);
    let mut worst: f64 = 0.0;
    for k in 0..n {
        for j in 0..n {
            let field = second_covariant_derivative(sys, &ad[k], &ad[j], sys.e());
            for x in pts {
                let generic = field.eval(x, sys.params()).unwrap();
                worst = worst.max(max_abs_diff(&generic, &normal_form_oracle(sys, k, j, x)));
            }
        }
    }
    worst
}

/// Relative deviations of the `∇²` identities (slot linearity, linearity in
/// `Z`, product rule) for one random tuple.
pub fn second_derivative_identities(rng: &mut ChaCha8Rng) -> [f64; 3] {
    use mechlin::geometry::{covariant_derivative, lie_derivative_fn, second_covariant_derivative as d2};
    let n = rng.gen_range(2..=3);
    let sys = random_system(rng, n);
    let [x1, x2, y1, y2, z1, z2] = std::array::from_fn(|_| random_field(rng, n));
    let (al1, al2, beta) = (random_function(rng, n, 2), random_function(rng, n, 2), random_function(rng, n, 2));
    let (a1, a2) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
    let x = random_point(rng, n);
    let p = sys.params();
    let ev = |f: &VectorFieldSym| f.eval(&x, p).unwrap();
    let sc = |f: &Expr| f.eval(&x, p).unwrap();
    let combo = |c1: f64, u: &[f64], c2: f64, v: &[f64]| -> Vec<f64> { u.iter().zip(v).map(|(a, b)| c1 * a + c2 * b).collect() };
    let rel = |lhs: &[f64], rhs: &[f64]| {
        let scale = lhs.iter().chain(rhs).fold(1.0f64, |m, v| m.max(v.abs()));
        max_abs_diff(lhs, rhs) / scale
    };

    // (i) function-linearity in both lower slots
    let xs = x1.scale(&al1).add(&x2.scale(&al2));
    let ys = y1.scale(&al1).add(&y2.scale(&al2));
    let (f1, f2) = (sc(&al1), sc(&al2));
    let i_x = rel(&ev(&d2(&sys, &xs, &y1, &z1)), &combo(f1, &ev(&d2(&sys, &x1, &y1, &z1)), f2, &ev(&d2(&sys, &x2, &y1, &z1))));
    let i_y = rel(&ev(&d2(&sys, &x1, &ys, &z1)), &combo(f1, &ev(&d2(&sys, &x1, &y1, &z1)), f2, &ev(&d2(&sys, &x1, &y2, &z1))));

    // (ii) real-linearity in Z
    let zs = z1.scale(&Expr::constant(a1)).add(&z2.scale(&Expr::constant(a2)));
    let ii = rel(&ev(&d2(&sys, &x1, &y1, &zs)), &combo(a1, &ev(&d2(&sys, &x1, &y1, &z1)), a2, &ev(&d2(&sys, &x1, &y1, &z2))));

    // (iii) product rule
    let lhs = ev(&d2(&sys, &x1, &y1, &z1.scale(&beta)));
    let lx = sc(&lie_derivative_fn(&beta, &x1));
    let ly = sc(&lie_derivative_fn(&beta, &y1));
    let d2beta = sc(&lie_derivative_fn(&lie_derivative_fn(&beta, &y1), &x1))
        - sc(&lie_derivative_fn(&beta, &covariant_derivative(&sys, &x1, &y1)));
    let b = sc(&beta);
    let base = ev(&d2(&sys, &x1, &y1, &z1));
    let ny = ev(&covariant_derivative(&sys, &y1, &z1));
    let nx = ev(&covariant_derivative(&sys, &x1, &z1));
    let z = ev(&z1);
    let rhs: Vec<f64> = (0..n).map(|i| b * base[i] + lx * ny[i] + ly * nx[i] + d2beta * z[i]).collect();
    let iii = rel(&lhs, &rhs);
    [i_x.max(i_y), ii, iii]
}

pub fn statuses(report: &mechlin::checker::MFReport) -> Vec<(String, mechlin::checker::Status)> {
    report.verdicts.iter().map(|v| (v.condition.clone(), v.status)).collect()
}

/// Apply `count` random feedbacks and `count` random linear coordinate
/// changes; return a description of every transformed system whose verdict
/// statuses differ from the original's.
pub fn invariance_violations(
    sys: &MechanicalSystem,
    rng: &mut ChaCha8Rng,
    count: usize,
    plan: &mechlin::checker::SamplingPlan,
) -> Vec<String> {
    use mechlin::checker::check_all;
    use mechlin::geometry::{apply_feedback, linear_change};
    let n = sys.n();
    let base = statuses(&check_all(sys, plan).unwrap());
    let mut bad = Vec::new();
    for r in 0..count {
        let (alpha, beta, gamma) = random_feedback(rng, n);
        let fb = apply_feedback(sys, &alpha, &beta, &gamma).unwrap();
        let got = statuses(&check_all(&fb, plan).unwrap());
        if got != base {
            bad.push(format!("feedback {r}: {base:?} -> {got:?} (beta = {beta})"));
        }
        let (t, c) = random_linear_change(rng, n);
        let ch = linear_change(sys, &t, &c).unwrap();
        let got = statuses(&check_all(&ch, plan).unwrap());
        if got != base {
            bad.push(format!("coordinates {r}: {base:?} -> {got:?}"));
        }
    }
    bad
}
