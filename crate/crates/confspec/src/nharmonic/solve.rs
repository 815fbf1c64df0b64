//! Projected descent for E_τ over nodal sphere maps, and harmonic
//! replacement on geodesic balls over a decreasing τ schedule.

use super::{el_weight, energy_gradient, grad_square_field, unit_masses, SphereMap};
use crate::error::{Error, Result};
use crate::geometry::{GeodesicBall, SimplicialManifold};

#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    /// Convergence threshold on the tangent EL residual norm.
    pub tol: f64,
    pub max_iters: usize,
    pub max_backtracks: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: 1e-8, max_iters: 4000, max_backtracks: 40 }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SolveReport {
    pub tau: f64,
    pub iterations: usize,
    pub energy: f64,
    pub residual: f64,
    pub converged: bool,
    /// Line search found no decreasing step (descent stopped early).
    pub stalled: bool,
}

/// Minimize E_τ over sphere maps with the frozen vertices of `init`
/// held fixed: gradient step in ℝ^{p+1} per node, nodal renormalization,
/// Barzilai–Borwein step lengths safeguarded by backtracking on strict
/// energy decrease.
pub fn solve_tau_harmonic(
    mesh: &SimplicialManifold,
    init: &SphereMap,
    tau: f64,
    cfg: SolverConfig,
) -> Result<(SphereMap, SolveReport)> {
    if !(tau > 0.0) {
        return Err(Error::InvalidInput(format!("solver requires tau > 0, got {tau}")));
    }
    let comps = init.components();
    let n = mesh.manifold_dim();
    let nv = mesh.num_vertices();
    let frozen = init.frozen_mask(nv);
    let masses = unit_masses(mesh);

    let energy_of = |vals: &[f64]| -> f64 {
        let probe = SphereMap { p: comps - 1, values: vals.to_vec(), boundary: vec![] };
        let b = grad_square_field(mesh, &probe);
        (0..mesh.num_cells())
            .map(|q| mesh.volume(q) * (b[q] + tau).powi(n as i32).sqrt())
            .sum()
    };

    // Tangential, mass-preconditioned gradient; returns the EL residual
    // norm alongside so convergence checks reuse the same evaluation.
    let tangent_gradient = |vals: &[f64]| -> (Vec<f64>, f64) {
        let probe = SphereMap { p: comps - 1, values: vals.to_vec(), boundary: vec![] };
        let b = grad_square_field(mesh, &probe);
        let weight = el_weight(&b, tau, n);
        let mut g = energy_gradient(mesh, &probe, tau, &weight);
        let mut res_sq = 0.0;
        for v in 0..nv {
            let row = &mut g[v * comps..(v + 1) * comps];
            if frozen[v] {
                row.iter_mut().for_each(|x| *x = 0.0);
                continue;
            }
            let psi = &vals[v * comps..(v + 1) * comps];
            let normal: f64 = row.iter().zip(psi).map(|(r, p)| r * p).sum();
            for (r, p) in row.iter_mut().zip(psi) {
                *r -= normal * p;
            }
            let sq: f64 = row.iter().map(|x| x * x).sum();
            res_sq += sq / masses[v];
        }
        (g, res_sq.sqrt() / n as f64)
    };

    let retract = |vals: &[f64], dir: &[f64], step: f64| -> Vec<f64> {
        let mut out = vals.to_vec();
        for v in 0..nv {
            if frozen[v] {
                continue;
            }
            let row = &mut out[v * comps..(v + 1) * comps];
            for (x, d) in row.iter_mut().zip(&dir[v * comps..(v + 1) * comps]) {
                *x -= step * d;
            }
            let norm: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            row.iter_mut().for_each(|x| *x /= norm);
        }
        out
    };

    let mut x = init.values.clone();
    let mut energy = energy_of(&x);
    let (mut grad, mut residual) = tangent_gradient(&x);
    let mut prev: Option<(Vec<f64>, Vec<f64>, f64)> = None; // (x, grad, step)
    let mut converged = residual < cfg.tol;
    let mut stalled = false;
    let mut iterations = 0;

    // Near the optimum the true decrease per step drops below the
    // rounding floor of the energy sum; a strictly monotone line search
    // would stall there with the residual still far from tol. Accept
    // against the worst recent energy plus that floor instead.
    let mut recent = [energy; 8];
    let round_slack =
        f64::EPSILON * mesh.num_cells() as f64 * (energy.abs() + tau * mesh.total_volume() + 1.0);

    while !converged && iterations < cfg.max_iters {
        iterations += 1;
        // Preconditioned direction d = M^{-1} g_tan.
        let dir: Vec<f64> = grad
            .iter()
            .enumerate()
            .map(|(i, g)| g / masses[i / comps])
            .collect();
        let slope: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
        if !(slope > 0.0) {
            stalled = true;
            break;
        }

        // BB1 step from the previous pair, else scale to a safe move.
        let mut step = match &prev {
            Some((px, pg, ps)) => {
                let mut dx_dx = 0.0;
                let mut dx_dg = 0.0;
                for i in 0..x.len() {
                    let dx = x[i] - px[i];
                    let dg = (grad[i] - pg[i]) / masses[i / comps];
                    dx_dx += dx * dx;
                    dx_dg += dx * dg;
                }
                if dx_dg > 0.0 {
                    (dx_dx / dx_dg).clamp(1e-6 * ps, 1e6 * ps)
                } else {
                    2.0 * ps
                }
            }
            None => {
                let max_d = dir.iter().fold(0.0f64, |a, &d| a.max(d.abs()));
                0.1 / max_d.max(1e-30)
            }
        };

        let e_ref = recent.iter().fold(f64::NEG_INFINITY, |a, &e| a.max(e));
        let mut accepted = false;
        for _ in 0..cfg.max_backtracks {
            let cand = retract(&x, &dir, step);
            let e_cand = energy_of(&cand);
            if e_cand < e_ref - 1e-4 * step * slope + round_slack {
                prev = Some((std::mem::take(&mut x), std::mem::take(&mut grad), step));
                x = cand;
                energy = e_cand;
                recent[iterations % recent.len()] = e_cand;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            stalled = true;
            break;
        }

        let (g_new, r_new) = tangent_gradient(&x);
        grad = g_new;
        residual = r_new;
        converged = residual < cfg.tol;
    }

    let map = SphereMap { p: comps - 1, values: x, boundary: init.boundary.clone() };
    debug_assert!(map
        .values
        .chunks(comps)
        .all(|row| (row.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-12));
    let report =
        SolveReport { tau, iterations, energy, residual, converged, stalled: stalled && !converged };
    Ok((map, report))
}

#[derive(Debug, Clone, Copy)]
pub struct ReplacementSchedule {
    /// Starting regularizer; `None` means the volume-weighted mean of
    /// B over the initial map.
    pub tau0: Option<f64>,
    /// Number of halvings after the first stage.
    pub halvings: usize,
}

impl Default for ReplacementSchedule {
    fn default() -> Self {
        Self { tau0: None, halvings: 20 }
    }
}

/// Replace the map inside `ball` by the (τ,n)-harmonic extension of its
/// boundary values, continuing over the decreasing schedule
/// τ_j = τ₀ 2^{-j} with warm starts. Vertices outside the ball interior
/// are untouched.
pub fn harmonic_replacement(
    mesh: &SimplicialManifold,
    map: &SphereMap,
    ball: &GeodesicBall,
    schedule: ReplacementSchedule,
    cfg: SolverConfig,
) -> Result<(SphereMap, Vec<SolveReport>)> {
    if ball.interior.is_empty() {
        return Err(Error::EmptyBall { center: ball.center, radius: ball.radius });
    }
    let nv = mesh.num_vertices();
    let mut interior = vec![false; nv];
    for &v in &ball.interior {
        interior[v] = true;
    }
    let frozen: Vec<u32> = (0..nv as u32).filter(|&v| !interior[v as usize]).collect();
    let mut current =
        SphereMap::new(mesh, map.target_dim(), map.values.clone(), frozen)?;

    let tau0 = match schedule.tau0 {
        Some(t) if t > 0.0 => t,
        Some(t) => return Err(Error::InvalidInput(format!("tau0 must be positive, got {t}"))),
        None => {
            let b = grad_square_field(mesh, map);
            let mean =
                (0..mesh.num_cells()).map(|q| mesh.volume(q) * b[q]).sum::<f64>()
                    / mesh.total_volume();
            // A constant map has B ≡ 0; any positive regularizer keeps
            // the stages well-posed (the solution is constant anyway).
            mean.max(1e-12)
        }
    };

    let mut reports = Vec::with_capacity(schedule.halvings + 1);
    for j in 0..=schedule.halvings {
        let tau = tau0 * (0.5f64).powi(j as i32);
        let (next, report) = solve_tau_harmonic(mesh, &current, tau, cfg)?;
        current = next;
        reports.push(report);
    }

    let out = SphereMap::new(mesh, map.target_dim(), current.values, map.boundary.clone())?;
    Ok((out, reports))
}
