//! Shift-invert block iteration for the smallest eigenpairs of
//! K x = λ M x with diagonal (lumped) M. The solver works on the scaled
//! operator S = D^{-1/2} K D^{-1/2}, deflates the exactly known constant
//! kernel vector, and refines a small block by Jacobi-PCG inverse
//! iteration with Rayleigh-Ritz extraction. Restarts re-randomize the
//! guard vectors when the residuals stagnate.

use crate::error::{Error, Result};
use crate::linalg::{dot, pcg_solve, sym_eigen_sorted, CsrMatrix};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Eigenvalues closer than this relative gap count as one multiplicity
/// group.
pub const MULT_TOL: f64 = 1e-6;

const MAX_SWEEPS: usize = 500;
const GUARD: usize = 6;

/// Result of a generalized eigensolve: the k+1 smallest pairs, extended
/// past k while the numerical multiplicity group of λ_k continues.
#[derive(Debug, Clone)]
pub struct Spectrum {
    /// Ascending; `eigenvalues[0]` is the constant-kernel value.
    pub eigenvalues: Vec<f64>,
    /// Nodal eigenfunctions, mass-orthonormal, same order.
    pub eigenfunctions: Vec<Vec<f64>>,
    /// The index that was requested.
    pub k: usize,
    /// Partition of the returned indices by relative gap < MULT_TOL.
    pub groups: Vec<Vec<usize>>,
    /// Relative residuals ‖Kx − λMx‖ / ‖Kx‖ per returned pair.
    pub residuals: Vec<f64>,
    pub sweeps: usize,
}

impl Spectrum {
    /// The multiplicity group containing index `idx`.
    pub fn group_of(&self, idx: usize) -> &[usize] {
        for g in &self.groups {
            if g.contains(&idx) {
                return g;
            }
        }
        unreachable!("groups partition the spectrum")
    }

    /// Indices whose eigenvalue lies within `rel_tol` (relative) of the
    /// one at `idx`, kernel index 0 excluded. Coarser than `group_of`:
    /// a state near but not at a degenerate point splits its multiplet
    /// wider than the solver's clustering, and a certificate built there
    /// must still treat the split multiplet as one group.
    pub fn group_within(&self, idx: usize, rel_tol: f64) -> Vec<usize> {
        let ev = &self.eigenvalues;
        let lam = ev[idx];
        let near = |i: usize| (ev[i] - lam).abs() <= rel_tol * lam.abs().max(f64::MIN_POSITIVE);
        let mut lo = idx;
        while lo > 1 && near(lo - 1) {
            lo -= 1;
        }
        let mut hi = idx;
        while hi + 1 < ev.len() && near(hi + 1) {
            hi += 1;
        }
        (lo..=hi).collect()
    }
}

pub fn eigensolve(stiffness: &CsrMatrix, mass: &[f64], k: usize, tol: f64) -> Result<Spectrum> {
    eigensolve_warm(stiffness, mass, k, tol, &[])
}

/// Like `eigensolve`, with initial guesses for the nonconstant
/// eigenfunctions (nodal values); used to warm-start along a density
/// ascent where consecutive spectra are close.
pub fn eigensolve_warm(
    stiffness: &CsrMatrix,
    mass: &[f64],
    k: usize,
    tol: f64,
    warm: &[Vec<f64>],
) -> Result<Spectrum> {
    if k < 1 {
        return Err(Error::InvalidInput("eigensolve requires k >= 1".into()));
    }
    let n = stiffness.n();
    if k + 1 > n {
        return Err(Error::IndexOutOfRange { k, available: n });
    }
    if mass.len() != n || mass.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::DegenerateDensity(
            "mass diagonal must be positive; assemble() floors it".into(),
        ));
    }

    let d_sqrt: Vec<f64> = mass.iter().map(|m| m.sqrt()).collect();
    let d_inv_sqrt: Vec<f64> = d_sqrt.iter().map(|s| 1.0 / s).collect();
    let s = stiffness.scaled_sym(&d_inv_sqrt);

    // The constant vector spans an exactly known piece of the kernel:
    // deflate it and report its Rayleigh quotient (roundoff-sized).
    let total_mass: f64 = mass.iter().sum();
    let ones = vec![1.0; n];
    let lam0 = (stiffness.quad(&ones) / total_mass).max(0.0);
    let inv_norm = 1.0 / total_mass.sqrt();
    let phi0: Vec<f64> = vec![inv_norm; n];
    let y0: Vec<f64> = d_sqrt.iter().map(|v| v * inv_norm).collect();

    let warm_y: Vec<Vec<f64>> = warm
        .iter()
        .filter(|x| x.len() == n)
        .map(|x| x.iter().zip(&d_sqrt).map(|(xi, di)| xi * di).collect())
        .collect();

    let out = block_iterate(&s, Some(&y0), k, tol, &warm_y, true, &d_sqrt)?;

    let mut eigenvalues = vec![lam0];
    let mut eigenfunctions = vec![phi0];
    let mut residuals = vec![xspace_residual(stiffness, mass, lam0, &eigenfunctions[0])];
    for (i, val) in out.vals.iter().enumerate() {
        eigenvalues.push(*val);
        let x: Vec<f64> =
            out.vecs[i].iter().zip(&d_inv_sqrt).map(|(yi, di)| yi * di).collect();
        residuals.push(xspace_residual(stiffness, mass, *val, &x));
        eigenfunctions.push(x);
    }
    let groups = multiplicity_groups(&eigenvalues);
    Ok(Spectrum { eigenvalues, eigenfunctions, k, groups, residuals, sweeps: out.sweeps })
}

/// Smallest Dirichlet eigenvalue of a restricted (kernel-free) pencil.
pub(crate) fn eigensolve_dirichlet(
    stiffness: &CsrMatrix,
    mass: &[f64],
    tol: f64,
) -> Result<f64> {
    let n = stiffness.n();
    if n == 0 {
        return Err(Error::InvalidInput("empty Dirichlet system".into()));
    }
    if mass.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::DegenerateDensity("Dirichlet mass must be positive".into()));
    }
    if n == 1 {
        return Ok(stiffness.get(0, 0) / mass[0]);
    }
    let d_sqrt: Vec<f64> = mass.iter().map(|m| m.sqrt()).collect();
    let d_inv_sqrt: Vec<f64> = d_sqrt.iter().map(|s| 1.0 / s).collect();
    let s = stiffness.scaled_sym(&d_inv_sqrt);
    let out = block_iterate(&s, None, 1, tol, &[], false, &d_sqrt)?;
    Ok(out.vals[0])
}

struct BlockOut {
    vals: Vec<f64>,
    vecs: Vec<Vec<f64>>,
    sweeps: usize,
}

/// Core iteration in the scaled (y) variables. `deflate` is a unit
/// vector kept out of the block; `need` is the number of wanted modes
/// beyond it. With `extend_group` the wanted set grows while the last
/// wanted eigenvalue's multiplicity group continues into the guard.
fn block_iterate(
    s: &CsrMatrix,
    deflate: Option<&[f64]>,
    need: usize,
    tol: f64,
    warm: &[Vec<f64>],
    extend_group: bool,
    d_sqrt: &[f64],
) -> Result<BlockOut> {
    let n = s.n();
    let avail = n - deflate.is_some() as usize;
    if need > avail {
        return Err(Error::IndexOutOfRange { k: need, available: avail });
    }
    let b = (need + GUARD).min(avail);
    let kdiag_max = s
        .diagonal()
        .iter()
        .zip(d_sqrt)
        .map(|(sd, d)| (sd * d * d).abs())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);

    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9 ^ n as u64);
    let mut block: Vec<Vec<f64>> = Vec::with_capacity(b);
    for w in warm.iter().take(b) {
        block.push(w.clone());
    }
    while block.len() < b {
        block.push((0..n).map(|_| rng.random::<f64>() - 0.5).collect());
    }

    let mut z = vec![vec![0.0; n]; b];
    let mut best = f64::INFINITY;
    let mut last_improved = 0;

    for sweep in 1..=MAX_SWEEPS {
        orthonormalize(&mut block, deflate, &mut rng);
        for j in 0..b {
            s.apply(&block[j], &mut z[j]);
        }
        // Rayleigh-Ritz on the block.
        let mut t = DMatrix::zeros(b, b);
        for i in 0..b {
            for j in i..b {
                let v = 0.5 * (dot(&block[i], &z[j]) + dot(&block[j], &z[i]));
                t[(i, j)] = v;
                t[(j, i)] = v;
            }
        }
        let (theta, u) = sym_eigen_sorted(&t);
        block = rotate(&block, &u);
        let zr = rotate(&z, &u);
        z = zr;

        let mut target = need;
        if extend_group {
            let anchor = theta[need - 1];
            while target < b.saturating_sub(1) {
                let gap = theta[target] - anchor;
                let denom = anchor.abs().max(theta[target].abs()).max(1e-9 * kdiag_max);
                if gap > MULT_TOL * denom {
                    break;
                }
                target += 1;
            }
        }

        // Convergence in the original variables: ‖Kx − λMx‖ ≤ tol·‖Kx‖,
        // with an absolute floor so exact-kernel modes cannot stall on
        // their own roundoff.
        let mut worst = 0.0f64;
        let mut ratios = vec![0.0; b];
        for i in 0..b {
            let mut xres2 = 0.0;
            let mut kx2 = 0.0;
            let mut xnorm2 = 0.0;
            for p in 0..n {
                let r = z[i][p] - theta[i] * block[i][p];
                xres2 += (d_sqrt[p] * r) * (d_sqrt[p] * r);
                kx2 += (d_sqrt[p] * z[i][p]) * (d_sqrt[p] * z[i][p]);
                let x = block[i][p] / d_sqrt[p];
                xnorm2 += x * x;
            }
            let floor = 1e-13 * kdiag_max * xnorm2.sqrt();
            ratios[i] = xres2.sqrt() / kx2.sqrt().max(floor);
            if i < target {
                worst = worst.max(ratios[i]);
            }
        }
        if worst <= tol {
            return Ok(BlockOut {
                vals: theta.as_slice()[..target].iter().map(|v| v.max(0.0)).collect(),
                vecs: block[..target].to_vec(),
                sweeps: sweep,
            });
        }

        if worst < 0.5 * best {
            best = worst;
            last_improved = sweep;
        } else if sweep - last_improved > 8 {
            // Stagnation: re-randomize the guard space.
            for vec in block.iter_mut().skip(target.max(need)) {
                for v in vec.iter_mut() {
                    *v = rng.random::<f64>() - 0.5;
                }
            }
            last_improved = sweep;
        }

        // Inverse-iterate the unconverged part of the block through the
        // shifted operator; locked (converged) columns are kept as-is.
        let sigma = (0.5 * theta[need - 1].abs()).max(1e-10 * kdiag_max);
        let ones: Vec<f64> = vec![1.0; n];
        for i in 0..b {
            if ratios[i] <= 0.3 * tol {
                continue;
            }
            let rhs = block[i].clone();
            let scale = 1.0 / (theta[i].abs() + sigma);
            for v in block[i].iter_mut() {
                *v *= scale;
            }
            let inner_tol = (0.1 * ratios[i]).clamp(0.05 * tol, 0.05);
            pcg_solve(s, &ones, sigma, &rhs, &mut block[i], inner_tol, 600);
        }
    }

    Err(Error::SolverFailure {
        what: format!("eigensolve did not reach tol {tol} in {MAX_SWEEPS} sweeps"),
        residuals: final_residuals(s, &block, d_sqrt),
    })
}

fn final_residuals(s: &CsrMatrix, block: &[Vec<f64>], d_sqrt: &[f64]) -> Vec<f64> {
    let n = s.n();
    let mut out = Vec::with_capacity(block.len());
    let mut sy = vec![0.0; n];
    for y in block {
        s.apply(y, &mut sy);
        let th = dot(y, &sy) / dot(y, y).max(f64::MIN_POSITIVE);
        let mut res2 = 0.0;
        for p in 0..n {
            let r = sy[p] - th * y[p];
            res2 += (d_sqrt[p] * r) * (d_sqrt[p] * r);
        }
        out.push(res2.sqrt());
    }
    out
}

/// ‖Kx − λMx‖ / ‖Kx‖ with a roundoff floor in the denominator.
fn xspace_residual(stiffness: &CsrMatrix, mass: &[f64], lam: f64, x: &[f64]) -> f64 {
    let kx = stiffness.apply_alloc(x);
    let mut res2 = 0.0f64;
    let mut kx2 = 0.0f64;
    for i in 0..x.len() {
        let r = kx[i] - lam * mass[i] * x[i];
        res2 += r * r;
        kx2 += kx[i] * kx[i];
    }
    let kdiag_max = stiffness
        .diagonal()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let xnorm = dot(x, x).sqrt();
    res2.sqrt() / kx2.sqrt().max(1e-13 * kdiag_max * xnorm)
}

/// Two-pass modified Gram-Schmidt against the deflation vector and the
/// earlier columns; near-null columns are replaced with fresh noise.
fn orthonormalize(block: &mut [Vec<f64>], deflate: Option<&[f64]>, rng: &mut ChaCha8Rng) {
    let b = block.len();
    for i in 0..b {
        let mut attempts = 0;
        loop {
            for _ in 0..2 {
                if let Some(y0) = deflate {
                    let c = dot(&block[i], y0);
                    for (v, w) in block[i].iter_mut().zip(y0) {
                        *v -= c * w;
                    }
                }
                for j in 0..i {
                    let (head, tail) = block.split_at_mut(i);
                    let c = dot(&tail[0], &head[j]);
                    for (v, w) in tail[0].iter_mut().zip(&head[j]) {
                        *v -= c * w;
                    }
                }
            }
            let norm = dot(&block[i], &block[i]).sqrt();
            if norm > 1e-10 {
                for v in block[i].iter_mut() {
                    *v /= norm;
                }
                break;
            }
            attempts += 1;
            assert!(attempts < 50, "cannot build an orthonormal block");
            for v in block[i].iter_mut() {
                *v = rng.random::<f64>() - 0.5;
            }
        }
    }
}

/// Columns of `vecs` times the (small) rotation `u`.
fn rotate(vecs: &[Vec<f64>], u: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let b = vecs.len();
    let n = vecs[0].len();
    let mut out = vec![vec![0.0; n]; b];
    for (j, outj) in out.iter_mut().enumerate() {
        for (i, vi) in vecs.iter().enumerate() {
            let c = u[(i, j)];
            if c != 0.0 {
                for p in 0..n {
                    outj[p] += c * vi[p];
                }
            }
        }
    }
    out
}

fn multiplicity_groups(vals: &[f64]) -> Vec<Vec<usize>> {
    let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in 0..vals.len() {
        let fresh = match groups.last() {
            None => true,
            Some(g) => {
                let j = *g.last().unwrap();
                let gap = vals[i] - vals[j];
                let denom = vals[i].abs().max(vals[j].abs()).max(1e-9 * scale);
                gap > MULT_TOL * denom
            }
        };
        if fresh {
            groups.push(vec![i]);
        } else {
            groups.last_mut().unwrap().push(i);
        }
    }
    groups
}
