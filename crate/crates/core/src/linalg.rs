//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Matrix whose columns are the given vectors.
pub fn columns(vectors: &[Vec<f64>]) -> DMatrix<f64> {
    let rows = vectors.first().map_or(0, Vec::len);
    DMatrix::from_fn(rows, vectors.len(), |r, c| vectors[c][r])
}

/// Singular values in decreasing order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Number of singular values above `tol` times the largest one.
pub fn numerical_rank(vectors: &[Vec<f64>], tol: f64) -> usize {
    let s = singular_values(&columns(vectors));
    match s.first() {
        Some(&top) if top > 0.0 && top.is_finite() => s.iter().filter(|&&v| v > tol * top).count(),
        _ => 0,
    }
}

/// Smallest over largest singular value; 0 for an all-zero or short set.
pub fn conditioning(vectors: &[Vec<f64>]) -> f64 {
    let m = columns(vectors);
    let full = m.nrows().min(m.ncols());
    let s = singular_values(&m);
    if s.len() < full || s.is_empty() || !(s[0] > 0.0) || s.iter().any(|v| !v.is_finite()) {
        return 0.0;
    }
    s[full - 1] / s[0]
}

/// Least-squares solution of `a c ≈ v` (minimum-norm for deficient `a`).
pub fn least_squares(a: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    if a.ncols() == 0 {
        return DVector::zeros(0);
    }
    let svd = a.clone().svd(true, true);
    let top = svd.singular_values.max();
    let eps = (top * 1e-13).max(f64::MIN_POSITIVE);
    svd.solve(v, eps).unwrap_or_else(|_| DVector::zeros(a.ncols()))
}

/// `min_c ‖v − Σ c_k D_k‖ / max(1, ‖v‖)`.
pub fn membership_residual(v: &[f64], span: &[Vec<f64>]) -> f64 {
    let vv = DVector::from_column_slice(v);
    let scale = vv.norm().max(1.0);
    if !vv.iter().all(|x| x.is_finite()) || span.iter().flatten().any(|x| !x.is_finite()) {
        return f64::INFINITY;
    }
    if span.is_empty() {
        return vv.norm() / scale;
    }
    let a = columns(span);
    let c = least_squares(&a, &vv);
    (vv - a * c).norm() / scale
}

/// Rank of the Krylov matrix `[b, Eb, …, E^{n−1} b]`.
pub fn controllability_rank(e: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> usize {
    let n = b.len();
    let mut cols = Vec::with_capacity(n);
    let mut v = b.clone();
    for _ in 0..n {
        cols.push(v.iter().copied().collect::<Vec<f64>>());
        v = e * v;
    }
    numerical_rank(&cols, tol)
}

/// Controllability indices of a single-input pair: always one chain of length
/// equal to the Krylov rank.
pub fn controllability_indices(e: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> Vec<usize> {
    vec![controllability_rank(e, b, tol)]
}
