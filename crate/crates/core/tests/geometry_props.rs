mod common;

use common::*;
use mechlin::expr::Expr;
use mechlin::geometry::{covariant_derivative, lie_bracket, lie_derivative_fn, VectorFieldSym};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config(cases: u32) -> Config {
    Config { cases, rng_seed: RngSeed::Fixed(0x6e6f726d), failure_persistence: None, ..Config::default() }
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(1.0f64, |m, v| m.max(v.abs()));
    max_abs_diff(a, b) / scale
}

proptest! {
    #![proptest_config(config(48))]

    #[test]
    fn normal_form_second_derivative_matches_closed_form(seed in any::<u64>(), n in 3usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sys = random_normal_form(&mut rng, n);
        let pts: Vec<Vec<f64>> = (0..4).map(|_| random_point(&mut rng, n)).collect();
        let dev = normal_form_deviation(&sys, &pts);
        prop_assert!(dev < 1e-9, "deviation {}", dev);
    }

    #[test]
    fn second_derivative_identities_hold(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [slots, z, product] = second_derivative_identities(&mut rng);
        prop_assert!(slots < 1e-9, "slot linearity {}", slots);
        prop_assert!(z < 1e-9, "Z linearity {}", z);
        prop_assert!(product < 1e-9, "product rule {}", product);
    }

    #[test]
    fn jacobi_identity(seed in any::<u64>(), n in 2usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [x, y, z] = std::array::from_fn(|_| random_field(&mut rng, n));
        let sum = lie_bracket(&x, &lie_bracket(&y, &z))
            .add(&lie_bracket(&y, &lie_bracket(&z, &x)))
            .add(&lie_bracket(&z, &lie_bracket(&x, &y)));
        let p = Default::default();
        for _ in 0..5 {
            let pt = random_point(&mut rng, n);
            let v = sum.eval(&pt, &p).unwrap();
            prop_assert!(v.iter().all(|c| c.abs() < 1e-9), "{:?}", v);
        }
    }

    #[test]
    fn covariant_derivative_is_function_linear_and_leibniz(seed in any::<u64>(), n in 2usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sys = random_system(&mut rng, n);
        let (x, y) = (random_field(&mut rng, n), random_field(&mut rng, n));
        let f = random_function(&mut rng, n, 3);
        let scaled = covariant_derivative(&sys, &x.scale(&f), &y);
        let plain = covariant_derivative(&sys, &x, &y);
        let leib = covariant_derivative(&sys, &x, &y.scale(&f));
        let lf = lie_derivative_fn(&f, &x);
        let p = sys.params();
        for _ in 0..10 {
            let pt = random_point(&mut rng, n);
            let fv = f.eval(&pt, p).unwrap();
            let base = plain.eval(&pt, p).unwrap();
            let lhs = scaled.eval(&pt, p).unwrap();
            let rhs: Vec<f64> = base.iter().map(|v| fv * v).collect();
            prop_assert!(rel(&lhs, &rhs) < 1e-10);
            let yv = y.eval(&pt, p).unwrap();
            let lv = lf.eval(&pt, p).unwrap();
            let rhs: Vec<f64> = base.iter().zip(&yv).map(|(b, c)| fv * b + lv * c).collect();
            prop_assert!(rel(&leib.eval(&pt, p).unwrap(), &rhs) < 1e-10);
        }
    }
}

#[test]
fn coordinate_fields_of_normal_form_alternate_sign() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sys = random_normal_form(&mut rng, 4);
    let ad = sys.ad_sequence(3);
    for (k, field) in ad.iter().enumerate() {
        let sign = if k % 2 == 0 { 1 } else { -1 };
        let mut expect = VectorFieldSym::zero(4);
        expect.0[k] = Expr::int(sign);
        assert_eq!(field, &expect, "ad^{k} g");
    }
}
