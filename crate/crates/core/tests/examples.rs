use std::f64::consts::FRAC_PI_2;
use std::path::PathBuf;

use mechlin::checker::{check_all, check_mf1, check_mf4, check_n2, mf5_difference, Overall, SamplingPlan, Status};
use mechlin::expr::{parse_expr, Expr, Node, ParseContext};
use mechlin::geometry::{second_covariant_derivative, MechanicalSystem, VectorFieldSym};
use mechlin::sampling::{domain_samples, Domain};
use mechlin::synthesis::{
    build_diffeo, build_feedback, closed_loop_at, find_output, synthesize, transform_at, verify_output,
    SynthesisError,
};
use mechlin::system_file::SystemFile;

fn load(name: &str) -> MechanicalSystem {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../systems").join(format!("{name}.json"));
    let text = std::fs::read_to_string(&path).unwrap();
    let file: SystemFile = serde_json::from_str(&text).unwrap();
    file.build().unwrap()
}

fn expr(sys: &MechanicalSystem, text: &str) -> Expr {
    let names: Vec<&str> = sys.params().keys().map(String::as_str).collect();
    parse_expr(text, &ParseContext::new(sys.n(), &names)).unwrap()
}

fn grad_cosine(sys: &MechanicalSystem, a: &Expr, b: &Expr, x: &[f64]) -> f64 {
    let p = sys.params();
    let ga: Vec<f64> = (0..sys.n()).map(|i| a.diff(i).eval(x, p).unwrap()).collect();
    let gb: Vec<f64> = (0..sys.n()).map(|i| b.diff(i).eval(x, p).unwrap()).collect();
    let dot: f64 = ga.iter().zip(&gb).map(|(u, v)| u * v).sum();
    let na = ga.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = gb.iter().map(|v| v * v).sum::<f64>().sqrt();
    (dot / (na * nb)).abs()
}

struct Mu {
    mu1: f64,
    mu2: f64,
    mu3: f64,
    mu4: f64,
}

fn tora_mu(sys: &MechanicalSystem) -> Mu {
    let p = |k: &str| sys.params()[k];
    Mu {
        mu1: (p("k1") + p("k2")) / p("m1"),
        mu2: p("k2") / p("m1"),
        mu3: p("m3") * p("l3") / (p("m2") + p("m3")),
        mu4: p("k2") / (p("m2") + p("m3")),
    }
}

#[test]
fn example1_fails_mf5_with_d1() {
    let sys = load("example1");
    let plan = SamplingPlan::default();
    let v = check_n2(&sys, &plan).unwrap();
    assert_eq!(v[0].status, Status::Pass);
    assert_eq!(v[1].status, Status::Pass);
    assert_eq!(v[2].condition, "MF5'");
    assert_eq!(v[2].status, Status::Fail);
    let d = mf5_difference(&sys);
    assert_eq!(d, VectorFieldSym(vec![Expr::one(), Expr::zero()]));
    assert!((v[2].residual - 1.0).abs() < 1e-9);
    assert_eq!(check_all(&sys, &plan).unwrap().overall, Overall::NotLinearizable);
}

#[test]
fn iwp_pipeline() {
    let sys = load("iwp");
    let plan = SamplingPlan::default();
    let report = check_all(&sys, &plan).unwrap();
    assert_eq!(report.overall, Overall::Linearizable, "{report:?}");
    for id in ["MF3'", "MF5'"] {
        assert!(report.verdict(id).unwrap().residual < 1e-10);
    }
    let known_h = expr(&sys, "(md+J2)/J2*x1 + x2");
    let out = find_output(&sys, &plan).unwrap();
    assert!(out.method.starts_with("constant"), "{}", out.method);
    for x in domain_samples(sys.domain(), 64, 3) {
        assert!((grad_cosine(&sys, &out.h, &known_h, &x) - 1.0).abs() < 1e-10);
    }
    assert!(verify_output(&sys, &known_h, &plan).is_ok());
    assert!(matches!(
        verify_output(&sys, &Expr::var(0), &plan),
        Err(SynthesisError::AnnihilationFailed { j: 0, .. })
    ));

    // φ = (L_e h, h) with L_e h = (m0/J2) sin x1
    let diffeo = build_diffeo(&sys, &known_h, &plan).unwrap();
    let p = sys.params();
    for x in domain_samples(sys.domain(), 16, 5) {
        let want = p["m0"] / p["J2"] * x[0].sin();
        assert!((diffeo.phi[0].eval(&x, p).unwrap() - want).abs() < 1e-12);
    }

    let syn = synthesize(&sys, Some(&known_h), &plan).unwrap();
    assert!(syn.lambda.is_none());
    let m = &syn.model;
    let want_e = [[0.0, 0.0], [1.0, 0.0]];
    for i in 0..2 {
        for j in 0..2 {
            assert!((m.e[(i, j)] - want_e[i][j]).abs() < 1e-8, "{}", m.e);
        }
    }
    assert!((m.b[0] - 1.0).abs() < 1e-12 && m.b[1].abs() < 1e-12);
    assert!(m.fit_residual < 1e-8);
}

#[test]
fn iwp_closed_loop_first_row_cancels() {
    // open loop: ẏ̃² picks up −(m0/J2) sin x1 y1 y1 before feedback
    let sys = load("iwp");
    let plan = SamplingPlan::default();
    let h = expr(&sys, "(md+J2)/J2*x1 + x2");
    let diffeo = build_diffeo(&sys, &h, &plan).unwrap();
    let fb = build_feedback(&sys, &diffeo, &plan).unwrap();
    let p = sys.params();
    for x in domain_samples(sys.domain(), 32, 9) {
        let open = transform_at(&sys, &diffeo, &x).unwrap();
        // Γ̃^1_bc = −H^1_jk Jinv Jinv; in original velocities the coefficient of y1 y1 is −(m0/J2) sin x1
        let jac = diffeo.eval_jacobian(&x, p).unwrap();
        let y = [1.0, 0.0];
        let yt = &jac * nalgebra::DVector::from_column_slice(&y);
        let mut quad = 0.0;
        for b in 0..2 {
            for c in 0..2 {
                quad -= open.gamma[b * 2 + c] * yt[b] * yt[c];
            }
        }
        assert!((quad + p["m0"] / p["J2"] * x[0].sin()).abs() < 1e-10);
        let closed = closed_loop_at(&sys, &diffeo, &fb, &x).unwrap();
        assert!(closed.gamma.iter().all(|v| v.abs() <= 1e-10 * closed.gamma_scale));
    }
}

#[test]
fn tora3_pipeline() {
    let sys = load("tora3");
    let plan = SamplingPlan::default();
    let mu = tora_mu(&sys);
    let report = check_all(&sys, &plan).unwrap();
    assert_eq!(report.overall, Overall::Linearizable, "{report:?}");

    // ∇²_{g,g} e = (μ2μ3 sin x3) ∂1 − (μ3μ4 sin x3) ∂2, the only nonzero MF4 field
    let ad = sys.ad_sequence(2);
    let p = sys.params();
    for x in domain_samples(sys.domain(), 32, 11) {
        for k in 0..3 {
            for j in 0..3 {
                let f = second_covariant_derivative(&sys, &ad[k], &ad[j], sys.e()).eval(&x, p).unwrap();
                if (k, j) == (0, 0) {
                    let s = x[2].sin();
                    assert!((f[0] - mu.mu2 * mu.mu3 * s).abs() < 1e-10);
                    assert!((f[1] + mu.mu3 * mu.mu4 * s).abs() < 1e-10);
                    assert!(f[2].abs() < 1e-12);
                } else {
                    assert!(f.iter().all(|v| v.abs() < 1e-9), "({k},{j}) {f:?}");
                }
            }
        }
    }
    for v in check_mf4(&sys, &plan).unwrap() {
        assert!(v.residual < 1e-9, "{v:?}");
    }

    let known_h = expr(&sys, "k2/(m2+m3)/(k2/m1)*x1 + x2 + m3*l3/(m2+m3)*sin(x3)");
    let syn = synthesize(&sys, None, &plan).unwrap();
    for x in domain_samples(sys.domain(), 64, 13) {
        assert!((grad_cosine(&sys, &syn.output.h, &known_h, &x) - 1.0).abs() < 1e-9);
    }
    // with this h, L_e h = μ4(μ2 − μ1)/μ2 x1
    let diffeo = build_diffeo(&sys, &known_h, &plan).unwrap();
    for x in domain_samples(sys.domain(), 16, 17) {
        let want = mu.mu4 * (mu.mu2 - mu.mu1) / mu.mu2 * x[0];
        assert!((diffeo.phi[1].eval(&x, p).unwrap() - want).abs() < 1e-9 * want.abs().max(1.0));
    }
    let m = &syn.model;
    let chain = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
    for i in 0..3 {
        for j in 0..3 {
            assert!((m.e[(i, j)] - chain[i][j]).abs() < 1e-7, "{}", m.e);
        }
    }
    assert!((m.b[0] - 1.0).abs() < 1e-9 && m.b[1].abs() < 1e-9 && m.b[2].abs() < 1e-9);
}

#[test]
fn tora3_wide_box_hits_singular_set() {
    let sys = load("tora3");
    let wide = sys.with_domain(Domain::from_bounds(&[(-0.5, 0.5), (-0.5, 0.5), (-2.0, 2.0)]).unwrap()).unwrap();
    let v = check_mf1(&wide, &SamplingPlan::default());
    assert_ne!(v.status, Status::Pass);
    let w = v.witness.unwrap();
    assert!((w[2].abs() - FRAC_PI_2).abs() < 0.05, "{w:?}");
}

#[test]
fn tora3_original_form_agrees() {
    let sys = load("tora3_full");
    let plan = SamplingPlan::default();
    let report = check_all(&sys, &plan).unwrap();
    assert_eq!(report.overall, Overall::Linearizable, "{report:?}");
    // same configuration coordinates as the normalized form, so the same h
    let normalized = load("tora3");
    let known_h = expr(&normalized, "k2/(m2+m3)/(k2/m1)*x1 + x2 + m3*l3/(m2+m3)*sin(x3)");
    let syn = synthesize(&sys, Some(&known_h), &plan).unwrap();
    assert!(syn.lambda.is_none());
    assert_eq!(syn.model.e.nrows(), 3);
    assert!(syn.model.fit_residual < 1e-8);
}

#[test]
fn nonseparable_annihilator() {
    let sys = load("nonseparable");
    let plan = SamplingPlan::default();
    assert!(matches!(find_output(&sys, &plan), Err(SynthesisError::NotFound(_))));
    let h = expr(&sys, "x3 + x1*x2");
    assert!(verify_output(&sys, &h, &plan).is_ok());
    let syn = synthesize(&sys, Some(&h), &plan).unwrap();
    assert_eq!(syn.model.e.nrows(), 3);
}

fn manufactured() -> MechanicalSystem {
    // normal form with Γ²₂₂ = x2: ẏ1 = u, ẏ2 = −x2 y2 y2 + x1
    MechanicalSystem::new(
        2,
        vec![((1, 1, 1), Expr::var(1))],
        VectorFieldSym(vec![Expr::zero(), Expr::var(0)]),
        VectorFieldSym(vec![Expr::one(), Expr::zero()]),
        Domain::from_bounds(&[(-1.0, 1.0), (-1.0, 1.0)]).unwrap(),
        Default::default(),
    )
    .unwrap()
}

#[test]
fn lambda_correction_linearizes() {
    let sys = manufactured();
    let plan = SamplingPlan::default();
    assert_eq!(check_all(&sys, &plan).unwrap().overall, Overall::Linearizable);
    let syn = synthesize(&sys, None, &plan).unwrap();
    let lam = syn.lambda.clone().expect("first pass leaves λ");
    // h0 = ±x2, so λ(s) = ±s
    let l1 = lam.eval(&[1.0], &Default::default()).unwrap();
    assert!((l1.abs() - 1.0).abs() < 1e-9 && lam.eval(&[0.0], &Default::default()).unwrap().abs() < 1e-9, "{lam}");
    assert!(matches!(syn.h.node(), Node::NumFn(..)) || !syn.h.numfns().is_empty());
    let m = &syn.model;
    assert!(m.e[(0, 0)].abs() < 1e-8 && m.e[(0, 1)].abs() < 1e-8);
    assert!((m.e[(1, 0)] - 1.0).abs() < 1e-8 && m.e[(1, 1)].abs() < 1e-8);
    assert!((m.b[0] - 1.0).abs() < 1e-10 && m.b[1].abs() < 1e-10);
    assert!(m.fit_residual < 1e-8);
}
