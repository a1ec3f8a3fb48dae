//! Domains, quasi-random sampling and the "identically zero" test.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::expr::{simplify, Expr, Params};

/// Region of configuration space: an axis-aligned box, optionally pushed
/// forward through an invertible affine map `x -> A x + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    lo: Vec<f64>,
    hi: Vec<f64>,
    affine: Option<Affine>,
}

#[derive(Debug, Clone, PartialEq)]
struct Affine {
    a: DMatrix<f64>,
    a_inv: DMatrix<f64>,
    offset: DVector<f64>,
}

impl Domain {
    /// Box with per-axis bounds; `None` if an axis is empty or not finite.
    pub fn from_bounds(bounds: &[(f64, f64)]) -> Option<Domain> {
        if bounds.iter().any(|&(l, h)| !(l.is_finite() && h.is_finite() && l < h)) {
            return None;
        }
        Some(Domain {
            lo: bounds.iter().map(|b| b.0).collect(),
            hi: bounds.iter().map(|b| b.1).collect(),
            affine: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Bounds of the underlying box (before any affine map).
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.lo.iter().copied().zip(self.hi.iter().copied()).collect()
    }

    pub fn is_box(&self) -> bool {
        self.affine.is_none()
    }

    /// Map unit-cube coordinates to a point of the domain.
    pub fn point_from_unit(&self, u: &[f64]) -> Vec<f64> {
        let x: Vec<f64> = (0..self.dim()).map(|i| self.lo[i] + u[i] * (self.hi[i] - self.lo[i])).collect();
        match &self.affine {
            None => x,
            Some(m) => (&m.a * DVector::from_vec(x) + &m.offset).iter().copied().collect(),
        }
    }

    /// Inverse of [`Domain::point_from_unit`].
    pub fn unit_from_point(&self, x: &[f64]) -> Vec<f64> {
        let x: Vec<f64> = match &self.affine {
            None => x.to_vec(),
            Some(m) => (&m.a_inv * (DVector::from_column_slice(x) - &m.offset)).iter().copied().collect(),
        };
        (0..self.dim()).map(|i| (x[i] - self.lo[i]) / (self.hi[i] - self.lo[i])).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && self.unit_from_point(x).iter().all(|u| (0.0..=1.0).contains(u))
    }

    pub fn center(&self) -> Vec<f64> {
        self.point_from_unit(&vec![0.5; self.dim()])
    }

    /// Image of this domain under `x -> t x + c`; `None` if `t` is singular.
    pub fn mapped(&self, t: &DMatrix<f64>, c: &DVector<f64>) -> Option<Domain> {
        let t_inv = t.clone().try_inverse()?;
        let affine = match &self.affine {
            None => Affine { a: t.clone(), a_inv: t_inv, offset: c.clone() },
            Some(m) => Affine {
                a: t * &m.a,
                a_inv: &m.a_inv * &t_inv,
                offset: t * &m.offset + c,
            },
        };
        Some(Domain { lo: self.lo.clone(), hi: self.hi.clone(), affine: Some(affine) })
    }
}

fn primes(count: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    let mut c = 2u64;
    while out.len() < count {
        if out.iter().take_while(|&&p| p * p <= c).all(|&p| c % p != 0) {
            out.push(c);
        }
        c += 1;
    }
    out
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// `count` Halton points in the unit cube with a seeded Cranley–Patterson
/// rotation, so different seeds give different but equally uniform sets.
pub fn unit_samples(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let bases = primes(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
    (1..=count as u64)
        .map(|i| {
            bases
                .iter()
                .zip(&shift)
                .map(|(&b, &s)| (radical_inverse(i, b) + s).fract())
                .collect()
        })
        .collect()
}

/// Quasi-random points of `domain`.
pub fn domain_samples(domain: &Domain, count: usize, seed: u64) -> Vec<Vec<f64>> {
    unit_samples(domain.dim(), count, seed)
        .iter()
        .map(|u| domain.point_from_unit(u))
        .collect()
}

/// Which path decided an identically-zero query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZeroPath {
    Symbolic,
    Sampled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroTest {
    pub zero: bool,
    pub decided_by: ZeroPath,
    /// Largest absolute value seen while sampling (0 on the symbolic path).
    pub max_abs: f64,
}

pub const ZERO_SAMPLES: usize = 64;
pub const ZERO_TOL: f64 = 1e-10;

/// Zero when `simplify` folds `e` to the constant 0, or when every one of
/// 64 quasi-random domain samples evaluates below 1e-10 in absolute value.
pub fn identically_zero(e: &Expr, domain: &Domain, params: &Params, seed: u64) -> ZeroTest {
    let s = simplify(e);
    if s.is_zero() {
        return ZeroTest { zero: true, decided_by: ZeroPath::Symbolic, max_abs: 0.0 };
    }
    if let Some(c) = s.as_const() {
        return ZeroTest { zero: false, decided_by: ZeroPath::Symbolic, max_abs: c.to_f64().abs() };
    }
    let mut max_abs: f64 = 0.0;
    for x in domain_samples(domain, ZERO_SAMPLES, seed) {
        match s.eval(&x, params) {
            Ok(v) if v.is_finite() => max_abs = max_abs.max(v.abs()),
            _ => max_abs = f64::INFINITY,
        }
    }
    ZeroTest { zero: max_abs < ZERO_TOL, decided_by: ZeroPath::Sampled, max_abs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse_expr, ParseContext};

    #[test]
    fn halton_is_deterministic_and_in_cube() {
        let a = unit_samples(3, 50, 7);
        assert_eq!(a, unit_samples(3, 50, 7));
        assert_ne!(a, unit_samples(3, 50, 8));
        assert!(a.iter().flatten().all(|v| (0.0..1.0).contains(v)));
    }

    #[test]
    fn low_discrepancy_marginals() {
        let pts = unit_samples(2, 256, 1);
        for axis in 0..2 {
            let below = pts.iter().filter(|p| p[axis] < 0.5).count();
            assert!((below as i64 - 128).abs() <= 3);
        }
    }

    #[test]
    fn affine_domain_round_trip() {
        let d = Domain::from_bounds(&[(-1.0, 1.0), (0.0, 2.0)]).unwrap();
        let t = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 1.0]);
        let c = DVector::from_vec(vec![0.5, -1.0]);
        let m = d.mapped(&t, &c).unwrap();
        let u = [0.25, 0.75];
        let x = m.point_from_unit(&u);
        assert!((x[0] - (2.0 * -0.5 + 1.5 + 0.5)).abs() < 1e-15);
        let back = m.unit_from_point(&x);
        assert!((back[0] - 0.25).abs() < 1e-14 && (back[1] - 0.75).abs() < 1e-14);
        assert!(m.contains(&x));
        assert!(!m.contains(&[100.0, 0.0]));
        assert!(Domain::from_bounds(&[(1.0, 1.0)]).is_none());
    }

    #[test]
    fn zero_paths() {
        let d = Domain::from_bounds(&[(-1.0, 1.0), (-1.0, 1.0)]).unwrap();
        let c = ParseContext::new(2, &[] as &[&str]);
        let p = Params::new();
        let sym = identically_zero(&parse_expr("x2 - x2", &c).unwrap(), &d, &p, 0);
        assert_eq!((sym.zero, sym.decided_by), (true, ZeroPath::Symbolic));
        let trig = identically_zero(&parse_expr("sin(x1)^2 + cos(x1)^2 - 1", &c).unwrap(), &d, &p, 0);
        assert_eq!((trig.zero, trig.decided_by), (true, ZeroPath::Sampled));
        let nz = identically_zero(&parse_expr("x1*x2", &c).unwrap(), &d, &p, 0);
        assert!(!nz.zero);
    }
}
