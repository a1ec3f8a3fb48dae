//! Mechanical control systems and the differential-geometric operators on them.

mod ops;
mod transform;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::expr::{simplify, EvalError, Expr, Params, Tape};
use crate::sampling::{identically_zero, Domain};

pub use ops::{
    covariant_derivative, evaluate_field, lie_bracket, lie_derivative_fn, second_covariant_derivative,
    second_covariant_fn,
};
pub use transform::{apply_feedback, linear_change};

/// Symbolic vector field `X = X^i ∂/∂x^i`.
#[derive(Clone, PartialEq, Eq)]
pub struct VectorFieldSym(pub Vec<Expr>);

impl VectorFieldSym {
    pub fn new(components: Vec<Expr>) -> VectorFieldSym {
        VectorFieldSym(components)
    }

    pub fn zero(n: usize) -> VectorFieldSym {
        VectorFieldSym(vec![Expr::zero(); n])
    }

    /// Coordinate field `∂/∂x^i` (zero-based `i`).
    pub fn coordinate(n: usize, i: usize) -> VectorFieldSym {
        let mut v = VectorFieldSym::zero(n);
        v.0[i] = Expr::one();
        v
    }

    pub fn from_values(values: &[f64]) -> VectorFieldSym {
        VectorFieldSym(values.iter().map(|&v| Expr::constant(v)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn components(&self) -> &[Expr] {
        &self.0
    }

    pub fn scale(&self, f: &Expr) -> VectorFieldSym {
        VectorFieldSym(self.0.iter().map(|c| simplify(&Expr::mul(vec![f.clone(), c.clone()]))).collect())
    }

    pub fn add(&self, other: &VectorFieldSym) -> VectorFieldSym {
        assert_eq!(self.dim(), other.dim(), "field dimensions differ");
        VectorFieldSym(
            self.0.iter().zip(&other.0).map(|(a, b)| simplify(&Expr::add(vec![a.clone(), b.clone()]))).collect(),
        )
    }

    pub fn sub(&self, other: &VectorFieldSym) -> VectorFieldSym {
        assert_eq!(self.dim(), other.dim(), "field dimensions differ");
        VectorFieldSym(self.0.iter().zip(&other.0).map(|(a, b)| simplify(&Expr::sub(a.clone(), b.clone()))).collect())
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(Expr::is_zero)
    }

    pub fn eval(&self, x: &[f64], params: &Params) -> Result<Vec<f64>, EvalError> {
        self.0.iter().map(|c| c.eval(x, params)).collect()
    }
}

impl fmt::Debug for VectorFieldSym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{c}")?;
        }
        f.write_str(")")
    }
}

/// Fields compiled together for repeated evaluation at many points.
pub struct FieldTape {
    tape: Result<Tape, EvalError>,
    dim: usize,
}

impl FieldTape {
    pub fn new(fields: &[VectorFieldSym], params: &Params) -> FieldTape {
        let dim = fields.first().map_or(0, VectorFieldSym::dim);
        let flat: Vec<Expr> = fields.iter().flat_map(|f| f.0.iter().cloned()).collect();
        FieldTape { tape: Tape::compile(&flat, params), dim }
    }

    /// One vector per field.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, EvalError> {
        let tape = self.tape.as_ref().map_err(Clone::clone)?;
        let flat = tape.eval(x)?;
        Ok(flat.chunks(self.dim.max(1)).map(<[f64]>::to_vec).collect())
    }

    /// Fields and the norm of each field's rounding-error scale.
    pub fn eval_with_scale(&self, x: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<f64>), EvalError> {
        let tape = self.tape.as_ref().map_err(Clone::clone)?;
        let (flat, scale) = tape.eval_with_scale(x)?;
        let d = self.dim.max(1);
        let norms = scale.chunks(d).map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        Ok((flat.chunks(d).map(<[f64]>::to_vec).collect(), norms))
    }
}

/// Ordered generators of a distribution.
#[derive(Debug, Clone)]
pub struct Distribution(pub Vec<VectorFieldSym>);

impl Distribution {
    pub fn eval(&self, x: &[f64], params: &Params) -> Result<Vec<Vec<f64>>, EvalError> {
        self.0.iter().map(|v| v.eval(x, params)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SystemError {
    #[error("dimension must be at least 2, got {0}")]
    DimensionTooSmall(usize),
    #[error("`{field}` has {got} components, expected {expected}")]
    ComponentCount { field: &'static str, expected: usize, got: usize },
    #[error("Christoffel index ({0}, {1}, {2}) out of range")]
    IndexOutOfRange(usize, usize, usize),
    #[error("Christoffel symbol ({0}, {1}, {2}) given twice")]
    DuplicateSymbol(usize, usize, usize),
    #[error("parameter `{0}` is not bound")]
    UnboundParam(String),
    #[error("expression refers to x{0} beyond the dimension")]
    VariableOutOfRange(usize),
    #[error("domain dimension {0} does not match n = {1}")]
    DomainMismatch(usize, usize),
    #[error("input field g vanishes identically on the domain")]
    InputVanishes,
}

/// `ẋ = y`, `ẏ^i = −Γ^i_jk(x) y^j y^k + e^i(x) + g^i(x) u`.
pub struct MechanicalSystem {
    n: usize,
    /// Zero-based `(i, j, k)` with `j <= k`; absent entries are zero.
    gamma: BTreeMap<(usize, usize, usize), Expr>,
    e: VectorFieldSym,
    g: VectorFieldSym,
    domain: Domain,
    params: Params,
    ad_cache: Mutex<Vec<VectorFieldSym>>,
}

impl Clone for MechanicalSystem {
    fn clone(&self) -> MechanicalSystem {
        MechanicalSystem {
            n: self.n,
            gamma: self.gamma.clone(),
            e: self.e.clone(),
            g: self.g.clone(),
            domain: self.domain.clone(),
            params: self.params.clone(),
            ad_cache: Mutex::new(self.ad_cache.lock().unwrap().clone()),
        }
    }
}

impl fmt::Debug for MechanicalSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MechanicalSystem")
            .field("n", &self.n)
            .field("gamma", &self.gamma)
            .field("e", &self.e)
            .field("g", &self.g)
            .field("domain", &self.domain)
            .field("params", &self.params)
            .finish()
    }
}

impl MechanicalSystem {
    /// Validate and build. Christoffel entries may be given with either index
    /// order in the lower pair; each unordered pair may appear once.
    pub fn new(
        n: usize,
        gamma: Vec<((usize, usize, usize), Expr)>,
        e: VectorFieldSym,
        g: VectorFieldSym,
        domain: Domain,
        params: Params,
    ) -> Result<MechanicalSystem, SystemError> {
        if n < 2 {
            return Err(SystemError::DimensionTooSmall(n));
        }
        for (field, v) in [("e", &e), ("g", &g)] {
            if v.dim() != n {
                return Err(SystemError::ComponentCount { field, expected: n, got: v.dim() });
            }
        }
        if domain.dim() != n {
            return Err(SystemError::DomainMismatch(domain.dim(), n));
        }
        let mut map = BTreeMap::new();
        for ((i, j, k), expr) in gamma {
            if i >= n || j >= n || k >= n {
                return Err(SystemError::IndexOutOfRange(i, j, k));
            }
            let key = (i, j.min(k), j.max(k));
            if map.contains_key(&key) {
                return Err(SystemError::DuplicateSymbol(key.0, key.1, key.2));
            }
            map.insert(key, simplify(&expr));
        }
        map.retain(|_, v| !v.is_zero());
        let e = VectorFieldSym(e.0.iter().map(simplify).collect());
        let g = VectorFieldSym(g.0.iter().map(simplify).collect());
        let all = map.values().chain(&e.0).chain(&g.0);
        for expr in all {
            if let Some(&v) = expr.free_vars().iter().find(|&&v| v >= n) {
                return Err(SystemError::VariableOutOfRange(v + 1));
            }
            if let Some(p) = expr.params().into_iter().find(|p| !params.contains_key(p)) {
                return Err(SystemError::UnboundParam(p));
            }
        }
        if g.0.iter().all(|c| identically_zero(c, &domain, &params, 0).zero) {
            return Err(SystemError::InputVanishes);
        }
        Ok(MechanicalSystem { n, gamma: map, e, g, domain, params, ad_cache: Mutex::new(Vec::new()) })
    }

    /// Linear mechanical system `ẏ = E x + b u` (flat connection).
    pub fn linear(e: &DMatrix<f64>, b: &DVector<f64>, domain: Domain) -> Result<MechanicalSystem, SystemError> {
        let n = b.len();
        let drift = (0..n)
            .map(|i| {
                simplify(&Expr::add(
                    (0..n)
                        .filter(|&j| e[(i, j)] != 0.0)
                        .map(|j| Expr::scale(e[(i, j)], Expr::var(j)))
                        .collect(),
                ))
            })
            .collect();
        MechanicalSystem::new(
            n,
            Vec::new(),
            VectorFieldSym(drift),
            VectorFieldSym::from_values(b.as_slice()),
            domain,
            Params::new(),
        )
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn e(&self) -> &VectorFieldSym {
        &self.e
    }

    pub fn g(&self) -> &VectorFieldSym {
        &self.g
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    /// `Γ^i_jk` (zero-based, symmetric in `j, k`).
    pub fn christoffel(&self, i: usize, j: usize, k: usize) -> Expr {
        self.gamma.get(&(i, j.min(k), j.max(k))).cloned().unwrap_or_else(Expr::zero)
    }

    /// Stored nonzero symbols, keyed `(i, j, k)` with `j <= k`.
    pub fn gamma_entries(&self) -> &BTreeMap<(usize, usize, usize), Expr> {
        &self.gamma
    }

    pub fn with_domain(&self, domain: Domain) -> Result<MechanicalSystem, SystemError> {
        if domain.dim() != self.n {
            return Err(SystemError::DomainMismatch(domain.dim(), self.n));
        }
        let mut s = self.clone();
        s.domain = domain;
        Ok(s)
    }

    /// Numeric `Γ^i_jk(x)` in row-major `[i][j][k]` order.
    pub fn eval_gamma(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        let n = self.n;
        let mut out = vec![0.0; n * n * n];
        for (&(i, j, k), expr) in &self.gamma {
            let v = expr.eval(x, &self.params)?;
            out[(i * n + j) * n + k] = v;
            out[(i * n + k) * n + j] = v;
        }
        Ok(out)
    }

    /// `[g, ad_e g, …, ad_e^k g]`, memoized per system.
    pub fn ad_sequence(&self, k: usize) -> Vec<VectorFieldSym> {
        let mut cache = self.ad_cache.lock().unwrap();
        if cache.is_empty() {
            cache.push(self.g.clone());
        }
        while cache.len() <= k {
            let next = lie_bracket(&self.e, cache.last().unwrap());
            cache.push(next);
        }
        cache[..=k].to_vec()
    }

    /// `E^i = span{ad_e^j g : j <= i}`.
    pub fn distribution(&self, i: usize) -> Distribution {
        Distribution(self.ad_sequence(i))
    }
}
