//! Dense Hermitian helpers on top of nalgebra.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

type C = Complex64;

/// Eigen-decomposition of a Hermitian matrix: ascending eigenvalues and the
/// matching orthonormal eigenvectors as columns.
pub fn eigh(h: &DMatrix<C>) -> (Vec<f64>, DMatrix<C>) {
    let n = h.nrows();
    if n == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    if is_diagonal(h) {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| h[(a, a)].re.total_cmp(&h[(b, b)].re));
        let mut v = DMatrix::zeros(n, n);
        for (p, &i) in order.iter().enumerate() {
            v[(i, p)] = C::new(1.0, 0.0);
        }
        return (order.iter().map(|&i| h[(i, i)].re).collect(), v);
    }
    if h.iter().all(|z| z.im == 0.0) {
        let eig = SymmetricEigen::new(h.map(|z| z.re));
        let order = ascending(eig.eigenvalues.as_slice());
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = DMatrix::from_fn(n, n, |r, c| C::new(eig.eigenvectors[(r, order[c])], 0.0));
        return (values, vectors);
    }
    let eig = SymmetricEigen::new(h.clone());
    let order = ascending(eig.eigenvalues.as_slice());
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

fn ascending(v: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    order
}

pub fn is_diagonal(h: &DMatrix<C>) -> bool {
    let n = h.nrows();
    (0..n).all(|r| (0..n).all(|c| r == c || h[(r, c)] == C::new(0.0, 0.0)))
}

/// `V diag(f(λ)) V†`.
pub fn spectral_map(values: &[f64], vectors: &DMatrix<C>, f: impl Fn(f64) -> C) -> DMatrix<C> {
    let n = values.len();
    let mut scaled = vectors.clone();
    for (c, &lam) in values.iter().enumerate() {
        let z = f(lam);
        for r in 0..n {
            scaled[(r, c)] *= z;
        }
    }
    scaled * vectors.adjoint()
}

/// `exp(-i H t)` for Hermitian `H`. Diagonal input yields an exactly
/// diagonal result.
pub fn expm_hermitian(h: &DMatrix<C>, t: f64) -> DMatrix<C> {
    let n = h.nrows();
    if is_diagonal(h) {
        let mut u = DMatrix::zeros(n, n);
        for i in 0..n {
            u[(i, i)] = C::from_polar(1.0, -h[(i, i)].re * t);
        }
        return u;
    }
    let (vals, vecs) = eigh(h);
    spectral_map(&vals, &vecs, |e| C::from_polar(1.0, -e * t))
}

/// `max |(U†U - 1)_{ij}|`.
pub fn unitarity_error(u: &DMatrix<C>) -> f64 {
    let n = u.nrows();
    let p = u.adjoint() * u;
    let mut err: f64 = 0.0;
    for r in 0..n {
        for c in 0..n {
            let target = if r == c { 1.0 } else { 0.0 };
            err = err.max((p[(r, c)] - C::new(target, 0.0)).norm());
        }
    }
    err
}

pub fn max_abs(m: &DMatrix<C>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn min_eigenvalue(h: &DMatrix<C>) -> f64 {
    if h.nrows() == 0 {
        return 0.0;
    }
    if is_diagonal(h) {
        return (0..h.nrows()).map(|i| h[(i, i)].re).fold(f64::INFINITY, f64::min);
    }
    let vals = if h.iter().all(|z| z.im == 0.0) {
        h.map(|z| z.re).symmetric_eigenvalues()
    } else {
        h.clone().symmetric_eigenvalues()
    };
    vals.iter().copied().fold(f64::INFINITY, f64::min)
}
