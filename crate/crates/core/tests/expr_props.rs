use mechlin::expr::{integrate_univariate, simplify, Expr, Params};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed};

fn config(cases: u32) -> Config {
    Config { cases, rng_seed: RngSeed::Fixed(0x65787072), failure_persistence: None, ..Config::default() }
}

fn arb_expr(n: usize) -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0..n).prop_map(Expr::var),
        (-5i64..=5).prop_map(Expr::int),
        ((-9i64..=9), (1i64..=7)).prop_map(|(a, b)| Expr::div(Expr::int(a), Expr::int(b))),
    ];
    leaf.prop_recursive(4, 24, 3, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 2..4).prop_map(Expr::add),
            prop::collection::vec(inner.clone(), 2..3).prop_map(Expr::mul),
            inner.clone().prop_map(Expr::neg),
            inner.clone().prop_map(Expr::sin),
            inner.clone().prop_map(Expr::cos),
            inner.clone().prop_map(|e| Expr::exp(Expr::scale(0.25, Expr::sin(e)))),
            (inner.clone(), 0i32..=3).prop_map(|(e, k)| Expr::pow(e, k)),
            (inner.clone(), inner).prop_map(|(a, b)| Expr::div(a, Expr::add(vec![Expr::int(3), Expr::cos(b)]))),
        ]
    })
}

/// Univariate integrands in `x1` of the shapes that appear in outputs and
/// λ corrections.
fn arb_univariate() -> impl Strategy<Value = Expr> {
    let x = Expr::var(0);
    let atom = prop_oneof![
        (0i32..=5).prop_map({
            let x = x.clone();
            move |k| Expr::pow(x.clone(), k)
        }),
        (1i64..=3).prop_map({
            let x = x.clone();
            move |a| Expr::sin(Expr::scale(a, x.clone()))
        }),
        (1i64..=3).prop_map({
            let x = x.clone();
            move |a| Expr::cos(Expr::scale(a, x.clone()))
        }),
        (-2i64..=2).prop_map({
            let x = x.clone();
            move |a| Expr::exp(Expr::scale(a, x.clone()))
        }),
        Just(Expr::mul(vec![x.clone(), Expr::cos(x.clone())])),
        Just(Expr::mul(vec![Expr::sin(x.clone()), Expr::cos(x.clone())])),
        Just(Expr::div(Expr::one(), Expr::add(vec![Expr::int(2), x.clone()]))),
    ];
    prop::collection::vec(((-6i64..=6), atom), 1..4)
        .prop_map(|terms| Expr::add(terms.into_iter().map(|(c, a)| Expr::mul(vec![Expr::int(c), a])).collect()))
}

fn grid(n: usize, count: usize) -> Vec<Vec<f64>> {
    // deterministic spread over [-1.5, 1.5]^n
    (0..count)
        .map(|k| (0..n).map(|i| ((k * 7919 + i * 104_729) % 1000) as f64 / 1000.0 * 3.0 - 1.5).collect())
        .collect()
}

proptest! {
    #![proptest_config(config(128))]

    #[test]
    fn integration_round_trips(f in arb_univariate()) {
        let p = Params::new();
        if let Ok(big_f) = integrate_univariate(&f, 0) {
            let d = big_f.diff(0);
            for x in grid(1, 100) {
                let (a, b) = (d.eval(&x, &p).unwrap(), f.eval(&x, &p).unwrap());
                prop_assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{} vs {} at {:?}", a, b, x);
            }
        }
    }

    #[test]
    fn diff_is_linear(f in arb_expr(3), g in arb_expr(3), a in -4i64..=4, b in -4i64..=4, i in 0usize..3) {
        let p = Params::new();
        let combo = Expr::add(vec![Expr::scale(a, f.clone()), Expr::scale(b, g.clone())]);
        let lhs = combo.diff(i);
        let (df, dg) = (f.diff(i), g.diff(i));
        for x in grid(3, 20) {
            if let (Ok(l), Ok(u), Ok(v)) = (lhs.eval(&x, &p), df.eval(&x, &p), dg.eval(&x, &p)) {
                let r = a as f64 * u + b as f64 * v;
                prop_assert!((l - r).abs() <= 1e-9 * r.abs().max(1.0), "{} vs {}", l, r);
            }
        }
    }

    #[test]
    fn simplify_is_idempotent(f in arb_expr(3)) {
        let once = simplify(&f);
        prop_assert_eq!(simplify(&once), once);
    }

    #[test]
    fn simplify_preserves_value(f in arb_expr(3)) {
        let p = Params::new();
        let s = simplify(&f);
        for x in grid(3, 10) {
            if let (Ok(a), Ok(b)) = (f.eval(&x, &p), s.eval(&x, &p)) {
                prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{} vs {}", a, b);
            }
        }
    }
}
