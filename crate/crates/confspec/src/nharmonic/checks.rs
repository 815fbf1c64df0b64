//! A-priori estimates as runnable checks: the Bochner-type inequality
//! slack and the ε-regularity ratio.

use nalgebra::DMatrix;

use super::{grad_square_field, SphereMap};
use crate::error::{Error, Result};
use crate::geometry::{GeodesicBall, SimplicialManifold};

/// Volume-weighted projection of a per-cell field onto vertices.
/// Anchored at a local cell value so constant fields recover exactly
/// (and cancellation stays mild elsewhere).
fn nodal_recovery(mesh: &SimplicialManifold, per_cell: &[f64]) -> Vec<f64> {
    let nv = mesh.num_vertices();
    let mut out = vec![0.0; nv];
    for (v, slot) in out.iter_mut().enumerate() {
        let cells = mesh.cells_of_vertex(v);
        let anchor = per_cell[cells[0] as usize];
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for &qu in cells {
            let q = qu as usize;
            let w = mesh.volume(q);
            acc += w * (per_cell[q] - anchor);
            wsum += w;
        }
        *slot = anchor + acc / wsum;
    }
    out
}

#[derive(Debug, Clone)]
pub struct BochnerReport {
    /// Weak slack of the inequality against each nodal hat function.
    pub slack: Vec<f64>,
    pub min_slack: f64,
    /// Measured Rayleigh bounds of the coefficient matrix a^τ across
    /// cells; must sit inside [1/n, (n-1)/n].
    pub ellipticity: (f64, f64),
}

/// Tests the Bochner-type inequality
///   μ^{n-2} B (κ_g + B) ≥ −div(a^τ ∇μⁿ) + |∇²Ψ|² μ^{n-2}
///                         + ((n−2)/4) μ^{n-4} |∇B|²
/// weakly against nodal hat functions. |∇²Ψ|² is the recovered-gradient
/// proxy (P1 elements carry no second derivatives), so negative slack of
/// order the mesh size is discretization error, not a counterexample.
pub fn bochner_check(
    mesh: &SimplicialManifold,
    map: &SphereMap,
    tau: f64,
) -> Result<BochnerReport> {
    if !(tau > 0.0) {
        return Err(Error::InvalidInput(format!("bochner check requires tau > 0, got {tau}")));
    }
    let n = mesh.manifold_dim();
    let nf = n as f64;
    let dim = mesh.embed_dim();
    let comps = map.components();
    let nc = mesh.num_cells();
    let nv = mesh.num_vertices();
    let kappa = mesh.kappa_g().max(0.0);

    let b = grad_square_field(mesh, map);
    let mu: Vec<f64> = b.iter().map(|&x| (x + tau).sqrt()).collect();
    let u: Vec<f64> = mu.iter().map(|&m| m.powi(n as i32)).collect();
    let p_weight: Vec<f64> = match n {
        2 => vec![1.0; nc],
        _ => mu.iter().map(|&m| m.powi(n as i32 - 2)).collect(),
    };

    // Per-cell component gradients of the map.
    let mut cell_grads = vec![0.0f64; nc * comps * dim];
    for q in 0..nc {
        let cell = mesh.cell(q);
        for (i, &v) in cell.iter().enumerate() {
            let gc = mesh.grad_coeff(q, i);
            for a in 0..comps {
                let val = map.values[v as usize * comps + a];
                for d in 0..dim {
                    cell_grads[(q * comps + a) * dim + d] += val * gc[d];
                }
            }
        }
    }

    // Recovered-gradient Hessian proxy: project each gradient slot to
    // the vertices, differentiate again, sum the squares.
    let mut hess2 = vec![0.0f64; nc];
    let mut slot = vec![0.0f64; nc];
    for a in 0..comps {
        for d in 0..dim {
            for q in 0..nc {
                slot[q] = cell_grads[(q * comps + a) * dim + d];
            }
            let nodal = nodal_recovery(mesh, &slot);
            for (q, h) in hess2.iter_mut().enumerate() {
                let g = mesh.cell_gradient(q, &nodal);
                *h += g.iter().map(|x| x * x).sum::<f64>();
            }
        }
    }

    let u_node = nodal_recovery(mesh, &u);
    let b_node = nodal_recovery(mesh, &b);

    // a^τ per cell, with measured ellipticity.
    let mut ell_lo = f64::INFINITY;
    let mut ell_hi = f64::NEG_INFINITY;
    let mut flux = vec![[0.0f64; 4]; nc]; // a^τ ∇(μⁿ) per cell
    let mut grad_b_sq = vec![0.0f64; nc];
    for q in 0..nc {
        let gu = mesh.cell_gradient(q, &u_node);
        let gb = mesh.cell_gradient(q, &b_node);
        grad_b_sq[q] = gb.iter().map(|x| x * x).sum();

        let denom = b[q] + tau;
        let mut a_mat = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            a_mat[(i, i)] = 1.0 / nf;
            for j in 0..dim {
                let mut acc = 0.0;
                for a in 0..comps {
                    acc += cell_grads[(q * comps + a) * dim + i]
                        * cell_grads[(q * comps + a) * dim + j];
                }
                a_mat[(i, j)] += (nf - 2.0) / nf * acc / denom;
            }
        }
        let eig = a_mat.clone().symmetric_eigen();
        for &ev in eig.eigenvalues.iter() {
            ell_lo = ell_lo.min(ev);
            ell_hi = ell_hi.max(ev);
        }
        for i in 0..dim {
            let mut acc = 0.0;
            for j in 0..dim {
                acc += a_mat[(i, j)] * gu[j];
            }
            flux[q][i] = acc;
        }
    }
    assert!(
        ell_lo >= 1.0 / nf - 1e-10 && ell_hi <= (nf - 1.0) / nf + 1e-10,
        "a^tau ellipticity out of bounds: [{ell_lo}, {ell_hi}]"
    );

    // slack(v) = ∫ bulk φ_v − ∫ a^τ ∇μⁿ · ∇φ_v.
    let share = (n + 1) as f64;
    let mut slack = vec![0.0f64; nv];
    for q in 0..nc {
        let vol = mesh.volume(q);
        let mut bulk = p_weight[q] * b[q] * (kappa + b[q]) - hess2[q] * p_weight[q];
        if n > 2 {
            bulk -= (nf - 2.0) / 4.0 * mu[q].powi(n as i32 - 4) * grad_b_sq[q];
        }
        let cell = mesh.cell(q);
        for (i, &v) in cell.iter().enumerate() {
            let gc = mesh.grad_coeff(q, i);
            let dot: f64 = (0..dim).map(|d| flux[q][d] * gc[d]).sum();
            slack[v as usize] += vol * (bulk / share - dot);
        }
    }
    let min_slack = slack.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(BochnerReport { slack, min_slack, ellipticity: (ell_lo, ell_hi) })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct BallRegularity {
    pub center: usize,
    pub radius: f64,
    /// ∫_{B_r} |∇Ψ|ⁿ.
    pub energy: f64,
    /// rⁿ max_{B_{r/2}} |∇Ψ|ⁿ / energy (the empirical C_n).
    pub ratio: f64,
    /// Energy exceeded ε₀; ball not counted.
    pub skipped: bool,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct EpsRegularityReport {
    pub eps0: f64,
    pub balls: Vec<BallRegularity>,
    pub max_ratio: f64,
}

/// Measures the interior-gradient-estimate constant over the supplied
/// balls whose energy is below ε₀.
pub fn eps_regularity_check(
    mesh: &SimplicialManifold,
    map: &SphereMap,
    balls: &[GeodesicBall],
    eps0: f64,
) -> Result<EpsRegularityReport> {
    if !(eps0 > 0.0) {
        return Err(Error::InvalidInput(format!("eps0 must be positive, got {eps0}")));
    }
    let n = mesh.manifold_dim() as i32;
    let b = grad_square_field(mesh, map);
    let density = |q: usize| b[q].powi(n).sqrt(); // |∇Ψ|ⁿ = B^{n/2}

    let mut out = Vec::with_capacity(balls.len());
    let mut max_ratio = 0.0f64;
    for ball in balls {
        let energy: f64 = ball.cells.iter().map(|&q| mesh.volume(q) * density(q)).sum();
        if energy > eps0 {
            out.push(BallRegularity {
                center: ball.center,
                radius: ball.radius,
                energy,
                ratio: 0.0,
                skipped: true,
            });
            continue;
        }
        let dist = mesh.distances_from(ball.center);
        let half = ball.radius / 2.0;
        let peak = ball
            .cells
            .iter()
            .filter(|&&q| mesh.cell(q).iter().all(|&v| dist[v as usize] <= half))
            .map(|&q| density(q))
            .fold(0.0f64, f64::max);
        // Constant maps: 0/0 reads as 0 by convention.
        let ratio = if energy > 0.0 {
            ball.radius.powi(n) * peak / energy
        } else {
            0.0
        };
        max_ratio = max_ratio.max(ratio);
        out.push(BallRegularity {
            center: ball.center,
            radius: ball.radius,
            energy,
            ratio,
            skipped: false,
        });
    }
    Ok(EpsRegularityReport { eps0, balls: out, max_ratio })
}
