//! Jacobi-preconditioned conjugate gradients for the shifted SPD solves
//! inside the eigensolver and the harmonic-map replacement.

use super::sparse::CsrMatrix;
use super::{axpy, dot};

#[derive(Debug, Clone, Copy)]
pub struct CgOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Solves (A + shift * diag(m)) x = b with Jacobi preconditioning.
/// `m` is a diagonal mass weighting; pass an empty slice for pure A.
/// `x` carries the initial guess on entry and the solution on exit.
pub fn pcg_solve(
    a: &CsrMatrix,
    m_diag: &[f64],
    shift: f64,
    b: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    max_iter: usize,
) -> CgOutcome {
    let n = a.n();
    debug_assert_eq!(b.len(), n);
    debug_assert_eq!(x.len(), n);
    let shifted = |v: &[f64], out: &mut [f64]| {
        a.apply(v, out);
        if shift != 0.0 && !m_diag.is_empty() {
            for i in 0..n {
                out[i] += shift * m_diag[i] * v[i];
            }
        }
    };

    let mut precond = a.diagonal();
    for i in 0..n {
        if shift != 0.0 && !m_diag.is_empty() {
            precond[i] += shift * m_diag[i];
        }
        precond[i] = if precond[i].abs() > f64::MIN_POSITIVE { 1.0 / precond[i] } else { 1.0 };
    }

    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        x.fill(0.0);
        return CgOutcome { iterations: 0, relative_residual: 0.0, converged: true };
    }

    let mut r = vec![0.0; n];
    shifted(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(&precond).map(|(ri, pi)| ri * pi).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];

    let mut rel = dot(&r, &r).sqrt() / bnorm;
    let mut iters = 0;
    while rel > rel_tol && iters < max_iter {
        shifted(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            // Loss of positive definiteness at roundoff level; stop here.
            break;
        }
        let alpha = rz / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        for i in 0..n {
            z[i] = r[i] * precond[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rel = dot(&r, &r).sqrt() / bnorm;
        iters += 1;
    }
    CgOutcome { iterations: iters, relative_residual: rel, converged: rel <= rel_tol }
}

#[cfg(test)]
mod tests {
    use super::super::sparse::Triplets;
    use super::*;

    #[test]
    fn solves_tridiagonal_system() {
        let n = 50;
        let mut t = Triplets::new(n);
        for i in 0..n {
            t.push(i, i, 2.0);
            if i + 1 < n {
                t.push(i, i + 1, -1.0);
                t.push(i + 1, i, -1.0);
            }
        }
        let a = t.into_csr();
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let b = a.apply_alloc(&x_true);
        let mut x = vec![0.0; n];
        let out = pcg_solve(&a, &[], 0.0, &b, &mut x, 1e-12, 10 * n);
        assert!(out.converged, "cg failed: {out:?}");
        for i in 0..n {
            assert!((x[i] - x_true[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn shift_regularizes_singular_laplacian() {
        // Graph Laplacian of a path is singular; a mass shift fixes it.
        let n = 20;
        let mut t = Triplets::new(n);
        for i in 0..n {
            let deg = if i == 0 || i == n - 1 { 1.0 } else { 2.0 };
            t.push(i, i, deg);
            if i + 1 < n {
                t.push(i, i + 1, -1.0);
                t.push(i + 1, i, -1.0);
            }
        }
        let a = t.into_csr();
        let m = vec![1.0; n];
        let b = vec![1.0; n];
        let mut x = vec![0.0; n];
        let out = pcg_solve(&a, &m, 0.5, &b, &mut x, 1e-12, 400);
        assert!(out.converged);
        // With b constant the solution of (L + 0.5 I) x = 1 is x = 2.
        for xi in &x {
            assert!((xi - 2.0).abs() < 1e-8);
        }
    }
}
