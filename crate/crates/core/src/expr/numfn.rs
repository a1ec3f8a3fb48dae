//! Tabulated antiderivatives used where no closed form is available.
//!
//! A [`NumFn`] represents `H(s) = ∫_0^s H'(t) dt` for a symbolic derivative
//! `H'` written in the placeholder variable `x1`. Values come from quintic
//! Hermite interpolation on a knot table (exact first and second derivatives
//! at the knots) and fall
//! back to adaptive quadrature outside the tabulated range. Differentiation
//! goes through the symbolic `H'`, so derivatives of any order stay exact.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Expr, Params};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumFnTable {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
    pub slopes: Vec<f64>,
    pub curvatures: Vec<f64>,
}

pub struct NumFn {
    name: String,
    derivative: Expr,
    table: NumFnTable,
}

impl fmt::Debug for NumFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NumFn({}, d/ds = {})", self.name, self.derivative)
    }
}

impl NumFn {
    /// Tabulate `∫_0^s derivative` on `knot_count` uniform knots over `[lo, hi]`.
    pub fn tabulate(name: &str, derivative: Expr, lo: f64, hi: f64, knot_count: usize) -> NumFn {
        assert!(hi > lo && knot_count >= 2, "invalid tabulation range");
        let slope = |s: f64| eval_univariate(&derivative, s);
        let knots: Vec<f64> = (0..knot_count)
            .map(|i| lo + (hi - lo) * i as f64 / (knot_count - 1) as f64)
            .collect();
        let slopes: Vec<f64> = knots.iter().map(|&s| slope(s)).collect();
        let second = derivative.diff(0);
        let curvatures: Vec<f64> = knots.iter().map(|&s| eval_univariate(&second, s)).collect();
        // Anchor at the knot nearest the origin, then accumulate outward.
        let anchor = knots
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap();
        let mut values = vec![0.0; knot_count];
        values[anchor] = adaptive_simpson(&slope, 0.0, knots[anchor], 1e-13);
        for i in anchor + 1..knot_count {
            values[i] = values[i - 1] + adaptive_simpson(&slope, knots[i - 1], knots[i], 1e-13);
        }
        for i in (0..anchor).rev() {
            values[i] = values[i + 1] - adaptive_simpson(&slope, knots[i], knots[i + 1], 1e-13);
        }
        NumFn { name: name.to_string(), derivative, table: NumFnTable { knots, values, slopes, curvatures } }
    }

    pub fn from_table(name: &str, derivative: Expr, table: NumFnTable) -> NumFn {
        NumFn { name: name.to_string(), derivative, table }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// `H'` in the placeholder variable `x1`.
    pub fn derivative(&self) -> &Expr {
        &self.derivative
    }

    pub fn table(&self) -> &NumFnTable {
        &self.table
    }

    /// `H'(arg)` as an expression.
    pub fn derivative_at(&self, arg: &Expr) -> Expr {
        self.derivative.substitute(&|j| if j == 0 { Some(arg.clone()) } else { None })
    }

    pub fn eval(&self, s: f64) -> f64 {
        let t = &self.table;
        let (lo, hi) = (t.knots[0], *t.knots.last().unwrap());
        if !(lo..=hi).contains(&s) {
            let slope = |u: f64| eval_univariate(&self.derivative, u);
            return adaptive_simpson(&slope, 0.0, s, 1e-13);
        }
        let i = match t.knots.partition_point(|&k| k <= s) {
            0 => 0,
            p if p >= t.knots.len() => t.knots.len() - 2,
            p => p - 1,
        };
        let (x0, x1) = (t.knots[i], t.knots[i + 1]);
        let h = x1 - x0;
        let u = (s - x0) / h;
        let (u2, u3) = (u * u, u * u * u);
        let (u4, u5) = (u3 * u, u3 * u2);
        let b0 = 1.0 - 10.0 * u3 + 15.0 * u4 - 6.0 * u5;
        let b1 = u - 6.0 * u3 + 8.0 * u4 - 3.0 * u5;
        let b2 = 0.5 * (u2 - 3.0 * u3 + 3.0 * u4 - u5);
        let b3 = 0.5 * (u3 - 2.0 * u4 + u5);
        let b4 = -4.0 * u3 + 7.0 * u4 - 3.0 * u5;
        let b5 = 10.0 * u3 - 15.0 * u4 + 6.0 * u5;
        b0 * t.values[i]
            + b1 * h * t.slopes[i]
            + b2 * h * h * t.curvatures[i]
            + b3 * h * h * t.curvatures[i + 1]
            + b4 * h * t.slopes[i + 1]
            + b5 * t.values[i + 1]
    }
}

fn eval_univariate(e: &Expr, s: f64) -> f64 {
    e.eval(&[s], &Params::new()).unwrap_or(f64::NAN)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` (either orientation).
pub(crate) fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (fa, fb) = (f(a), f(b));
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(a, b, fa, fm, fb);
    refine(f, a, b, fa, fm, fb, whole, tol, 48)
}

#[allow(clippy::too_many_arguments)]
fn refine(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    refine(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + refine(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrature_polynomial_and_exp() {
        let f = |x: f64| x * x;
        assert!((adaptive_simpson(&f, 0.0, 3.0, 1e-12) - 9.0).abs() < 1e-12);
        let g = |x: f64| x.exp();
        assert!((adaptive_simpson(&g, 1.0, -1.0, 1e-12) - (1f64.exp().recip() - 1f64.exp())).abs() < 1e-11);
    }

    #[test]
    fn tabulated_gaussian_integral() {
        // H'(s) = exp(s^2/2); reference by direct quadrature
        let d = Expr::exp(Expr::mul(vec![
            Expr::constant(super::super::Num::ratio(1, 2)),
            Expr::pow(Expr::var(0), 2),
        ]));
        let h = NumFn::tabulate("H0", d, -2.0, 2.0, 257);
        for &s in &[-1.9, -0.7, 0.0, 0.3, 1.234, 2.0] {
            let reference = adaptive_simpson(&|u: f64| (0.5 * u * u).exp(), 0.0, s, 1e-14);
            assert!((h.eval(s) - reference).abs() < 1e-9, "s={s}");
        }
        // outside the table: direct quadrature
        let reference = adaptive_simpson(&|u: f64| (0.5 * u * u).exp(), 0.0, 2.5, 1e-14);
        assert!((h.eval(2.5) - reference).abs() < 1e-10);
    }
}
