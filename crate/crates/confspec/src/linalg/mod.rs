//! Sparse symmetric matrices and the iterative kernels built on them.

mod cg;
mod sparse;

pub use cg::{pcg_solve, CgOutcome};
pub use sparse::{CsrMatrix, Triplets};

use nalgebra::{DMatrix, DVector};

/// Eigenvalues and eigenvectors of a small dense symmetric matrix,
/// sorted ascending. Columns of the returned matrix are eigenvectors.
pub fn sym_eigen_sorted(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let m = a.nrows();
    let eig = a.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = DVector::from_fn(m, |i, _| eig.eigenvalues[order[i]]);
    let vectors = DMatrix::from_fn(m, m, |i, j| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

/// Smallest eigenvalue of a small dense symmetric matrix.
pub fn sym_eigen_min(a: &DMatrix<f64>) -> f64 {
    let eig = a.clone().symmetric_eigen();
    eig.eigenvalues.iter().fold(f64::INFINITY, |acc, &v| acc.min(v))
}

/// Euclidean dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm.
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// y += s * x
pub fn axpy(s: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}
