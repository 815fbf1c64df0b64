//! Ascent of the normalized eigenvalue over density pairs: paired
//! subdifferential fields, a conditional-gradient direction finder for
//! the minimax pseudo-norm, backtracking steps, and the outer loop that
//! stops at a discrete Palais-Smale point.

mod direction;

pub use direction::{direction_find, SubgradientDirection};

use crate::error::{Error, Result};
use crate::geometry::SimplicialManifold;
use crate::spectrum::{
    assemble, eigensolve_warm, normalized_eigenvalue, AlphaNormalization, DensityPair, Spectrum,
};

/// Which functional the ascent drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AscentMode {
    /// λ̄_k(α,β), both densities free.
    Conformal,
    /// ν_k = λ_k(1,β)·∫β, alpha frozen at 1 and excluded from directions.
    NuMode,
}

/// The family of paired per-cell fields (ψ₁, ψ₂) parametrized by unit
/// coefficient vectors c over the multiplicity group at index k. The
/// pairing ⟨τ, ψ(c)⟩ is the exact directional derivative of the
/// objective at the current densities; at normalized densities the
/// fields reduce to |∇φ_c|² − λ̄ α^{2/(n-2)} and λ̄(1 − φ_c²).
pub struct PairedFields<'a> {
    mesh: &'a SimplicialManifold,
    funcs: Vec<&'a [f64]>,
    /// Current beta density, per cell (the dilation direction β̇ ∝ β
    /// pairs to zero with every c and seeds the direction finder).
    pub(crate) beta: &'a [f64],
    /// Indices of the multiplicity group inside the spectrum.
    pub group: Vec<usize>,
    /// Current objective value (λ̄_k or ν_k).
    pub lambda_bar: f64,
    /// Multiplies |∇φ_c|² in ψ₁: ∫β / (∫α^p)^{1/p} (1 at normalized).
    grad_scale: f64,
    /// Per-cell subtrahend of ψ₁: λ̄ α^{p-1} / ∫α^p (λ̄ α^{2/(n-2)} at
    /// normalized densities; λ̄ / (Vol·mean α) uniformly in 2d).
    alpha_term: Vec<f64>,
    /// 1 / ∫β: ψ₂ = λ̄ (inv_beta_mass − φ_c²).
    inv_beta_mass: f64,
    /// Directions may use the alpha slot (false in nu-mode).
    pub alpha_free: bool,
}

impl<'a> PairedFields<'a> {
    /// Dimension of the eigenspace family.
    pub fn m(&self) -> usize {
        self.funcs.len()
    }

    pub fn mesh(&self) -> &SimplicialManifold {
        self.mesh
    }

    /// Nodal values of φ_c = Σ c_i e_i.
    pub fn combine(&self, c: &[f64]) -> Vec<f64> {
        let n = self.mesh.num_vertices();
        let mut phi = vec![0.0; n];
        for (ci, f) in c.iter().zip(&self.funcs) {
            if *ci != 0.0 {
                for (p, fv) in phi.iter_mut().zip(*f) {
                    *p += ci * fv;
                }
            }
        }
        phi
    }

    /// Per-cell paired fields at coefficient vector c.
    pub fn psi(&self, c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let phi = self.combine(c);
        let nc = self.mesh.num_cells();
        let corners = self.mesh.manifold_dim() + 1;
        let mut psi1 = vec![0.0; nc];
        let mut psi2 = vec![0.0; nc];
        for q in 0..nc {
            let g = self.mesh.cell_gradient(q, &phi);
            let g2: f64 = g.iter().map(|v| v * v).sum();
            psi1[q] = self.grad_scale * g2 - self.alpha_term[q];
            let cell = self.mesh.cell(q);
            let avg_sq: f64 = cell
                .iter()
                .map(|&v| phi[v as usize] * phi[v as usize])
                .sum::<f64>()
                / corners as f64;
            psi2[q] = self.lambda_bar * (self.inv_beta_mass - avg_sq);
        }
        (psi1, psi2)
    }

    /// The m×m pairing matrix A(τ) and affine offset const(τ) such that
    /// ⟨τ, ψ(c)⟩ = cᵀ A(τ) c + const(τ) for unit c.
    pub fn pairing_matrices(
        &self,
        alpha_dot: &[f64],
        beta_dot: &[f64],
    ) -> (nalgebra::DMatrix<f64>, f64) {
        let m = self.m();
        let mut a = nalgebra::DMatrix::zeros(m, m);
        let mut offset = 0.0;
        for q in 0..self.mesh.num_cells() {
            let vol = self.mesh.volume(q);
            let ad = alpha_dot[q] * vol;
            let bd = beta_dot[q] * vol;
            if ad != 0.0 {
                let (av, ao) = self.vertex_matrices(q, false);
                a += av * ad;
                offset += ao * ad;
            }
            if bd != 0.0 {
                let (bv, bo) = self.vertex_matrices(q, true);
                a += bv * bd;
                offset += bo * bd;
            }
        }
        (a, offset)
    }

    /// min over unit c of ⟨τ, ψ(c)⟩ together with the minimizing c.
    pub fn pairing_value(&self, alpha_dot: &[f64], beta_dot: &[f64]) -> (f64, Vec<f64>) {
        let (a, offset) = self.pairing_matrices(alpha_dot, beta_dot);
        let (vals, vecs) = crate::linalg::sym_eigen_sorted(&a);
        (vals[0] + offset, vecs.column(0).iter().copied().collect())
    }

    /// Pairing data of the unit-mass atom on one cell: A and const of
    /// the simplex vertex with α̇ (or β̇) = 1/vol on `cell`.
    pub(crate) fn vertex_matrices(
        &self,
        cell: usize,
        beta_slot: bool,
    ) -> (nalgebra::DMatrix<f64>, f64) {
        let m = self.m();
        let mut a = nalgebra::DMatrix::zeros(m, m);
        if beta_slot {
            let cv = self.mesh.cell(cell);
            let corners = cv.len() as f64;
            for i in 0..m {
                for j in i..m {
                    let avg: f64 = cv
                        .iter()
                        .map(|&v| self.funcs[i][v as usize] * self.funcs[j][v as usize])
                        .sum::<f64>()
                        / corners;
                    let val = -self.lambda_bar * avg;
                    a[(i, j)] = val;
                    a[(j, i)] = val;
                }
            }
            (a, self.lambda_bar * self.inv_beta_mass)
        } else {
            let grads: Vec<[f64; 4]> =
                (0..m).map(|i| self.mesh.cell_gradient(cell, self.funcs[i])).collect();
            for i in 0..m {
                for j in i..m {
                    let dot: f64 = grads[i].iter().zip(&grads[j]).map(|(x, y)| x * y).sum();
                    let val = self.grad_scale * dot;
                    a[(i, j)] = val;
                    a[(j, i)] = val;
                }
            }
            (a, -self.alpha_term[cell])
        }
    }
}

/// Build the subdifferential family at index k. The multiplicity group
/// of λ_k must be fully contained in the computed spectrum.
pub fn subdifferential_elements<'a>(
    mesh: &'a SimplicialManifold,
    spectrum: &'a Spectrum,
    densities: &'a DensityPair,
    k: usize,
    mode: AscentMode,
) -> Result<PairedFields<'a>> {
    if k >= spectrum.eigenvalues.len() {
        return Err(Error::IndexOutOfRange { k, available: spectrum.eigenvalues.len() });
    }
    let group: Vec<usize> = spectrum.group_of(k).to_vec();
    if group.contains(&0) {
        return Err(Error::DegenerateDensity(
            "index k sits in the constant-kernel group; the objective is not differentiable there"
                .into(),
        ));
    }
    let funcs: Vec<&[f64]> = group.iter().map(|&i| spectrum.eigenfunctions[i].as_slice()).collect();

    let n = mesh.manifold_dim();
    let beta_mass = densities.beta_mass(mesh);
    let (lambda_bar, grad_scale, alpha_term, alpha_free) = match mode {
        AscentMode::NuMode => {
            let nu = spectrum.eigenvalues[k] * beta_mass;
            (nu, 0.0, vec![0.0; mesh.num_cells()], false)
        }
        AscentMode::Conformal => {
            let lb = normalized_eigenvalue(mesh, densities, spectrum, k)?;
            if n == 2 {
                let mean_alpha =
                    densities.alpha_integral(mesh, AlphaNormalization::FunctionalExponent);
                let scale = beta_mass / mean_alpha;
                let term = lb / (mesh.total_volume() * mean_alpha);
                (lb, scale, vec![term; mesh.num_cells()], true)
            } else {
                let p = AlphaNormalization::FunctionalExponent.exponent(n);
                let q_int = densities.alpha_integral(mesh, AlphaNormalization::FunctionalExponent);
                let scale = beta_mass / q_int.powf(1.0 / p);
                let term: Vec<f64> = densities
                    .alpha
                    .iter()
                    .map(|a| lb * a.powf(p - 1.0) / q_int)
                    .collect();
                (lb, scale, term, true)
            }
        }
    };

    Ok(PairedFields {
        mesh,
        funcs,
        beta: &densities.beta,
        group,
        lambda_bar,
        grad_scale,
        alpha_term,
        inv_beta_mass: 1.0 / beta_mass,
        alpha_free,
    })
}

/// Rescale to the constraint surface ∫β = 1 (and the alpha constraint of
/// `norm` when alpha participates); λ̄_k is unchanged by construction.
pub fn project_constraints(
    mesh: &SimplicialManifold,
    mut densities: DensityPair,
    norm: AlphaNormalization,
    mode: AscentMode,
) -> Result<DensityPair> {
    match mode {
        AscentMode::Conformal => densities.normalize(mesh, norm)?,
        AscentMode::NuMode => {
            let bm = densities.beta_mass(mesh);
            if !(bm > 0.0) {
                return Err(Error::DegenerateDensity("beta has zero total mass".into()));
            }
            for b in densities.beta.iter_mut() {
                *b /= bm;
            }
            densities.beta_normalized = true;
        }
    }
    Ok(densities)
}

/// One record per ascent iteration.
#[derive(Debug, Clone, serde::Serialize)]
pub struct HistoryEntry {
    pub lambda_bar: f64,
    /// |∂λ̄_k| estimate from the direction finder.
    pub grad_norm: f64,
    /// Accepted step size (0 when the iteration did not step).
    pub step: f64,
    pub group_size: usize,
    /// The multiplicity group at k changed shape vs the previous
    /// iteration (an eigenvalue-crossing event).
    pub crossing: bool,
    pub direction_converged: bool,
}

/// State of the ascent after some number of iterations.
pub struct AscentState {
    pub densities: DensityPair,
    pub spectrum: Spectrum,
    pub lambda_bar: f64,
    pub iterations: usize,
    pub history: Vec<HistoryEntry>,
    /// Line search failed to find an increasing step.
    pub stalled: bool,
    /// Final direction value fell below the stopping threshold.
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct StopRule {
    /// Stop when |∂λ̄_k| < delta_rel · λ̄_k.
    pub delta_rel: f64,
    pub max_iters: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        Self { delta_rel: 1e-4, max_iters: 200 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AscentOptions {
    pub normalization: AlphaNormalization,
    /// Conditional-gradient oracle budget per direction solve.
    pub fw_budget: usize,
    pub eigen_tol: f64,
    /// Initial line-search step.
    pub h0: f64,
    pub max_backtracks: usize,
    /// One-ring averaging of the direction before stepping.
    pub smooth_directions: bool,
    /// After the ascent stops, up to this many one-ring smoothing passes
    /// over the densities, each kept only while λ̄ stays within the stop
    /// tolerance. Conditional-gradient steps leave cell-scale roughness
    /// in directions the objective is flat along; the polish removes it
    /// without leaving the terminal level set. 0 disables.
    pub polish_passes: usize,
}

impl Default for AscentOptions {
    fn default() -> Self {
        Self {
            normalization: AlphaNormalization::FunctionalExponent,
            fw_budget: 200,
            eigen_tol: 1e-10,
            h0: 0.5,
            max_backtracks: 30,
            smooth_directions: false,
            polish_passes: 0,
        }
    }
}

/// Maximize λ̄_k over density pairs from `init`.
pub fn maximize(
    mesh: &SimplicialManifold,
    k: usize,
    init: DensityPair,
    stop: StopRule,
    opts: AscentOptions,
) -> Result<AscentState> {
    run_ascent(mesh, k, init, stop, opts, AscentMode::Conformal)
}

/// Maximize ν_k = λ_k(1, β)·∫β over beta alone.
pub fn nu_mode(
    mesh: &SimplicialManifold,
    k: usize,
    init_beta: Vec<f64>,
    stop: StopRule,
    opts: AscentOptions,
) -> Result<AscentState> {
    let init = DensityPair::new(mesh, vec![1.0; mesh.num_cells()], init_beta)?;
    run_ascent(mesh, k, init, stop, opts, AscentMode::NuMode)
}

fn run_ascent(
    mesh: &SimplicialManifold,
    k: usize,
    init: DensityPair,
    stop: StopRule,
    opts: AscentOptions,
    mode: AscentMode,
) -> Result<AscentState> {
    if init.alpha.iter().any(|&a| !(a > 0.0)) || init.beta.iter().any(|&b| !(b > 0.0)) {
        return Err(Error::DegenerateDensity("ascent requires positive initial densities".into()));
    }
    // At n = 2 every conformal pair has alpha = f^{(n-2)/2} constant, so the
    // conformal ascent varies beta alone: project the start onto constant
    // alpha (its volume mean) and keep the alpha slot out of the directions.
    let pin_alpha = mode == AscentMode::Conformal && mesh.manifold_dim() == 2;
    let init = if pin_alpha {
        let mean = init.alpha.iter().zip(mesh.volumes()).map(|(a, v)| a * v).sum::<f64>()
            / mesh.total_volume();
        DensityPair::new(mesh, vec![mean; mesh.num_cells()], init.beta)?
    } else {
        init
    };
    let mut pair = project_constraints(mesh, init, opts.normalization, mode)?;
    let (mut spectrum, mut lambda_bar) = evaluate(mesh, &pair, k, opts.eigen_tol, &[], mode)?;

    let mut history: Vec<HistoryEntry> = Vec::new();
    let mut stalled = false;
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..stop.max_iters {
        let mut fields = subdifferential_elements(mesh, &spectrum, &pair, k, mode)?;
        if pin_alpha {
            fields.alpha_free = false;
        }
        let mut dir = direction_find(&fields, opts.fw_budget);
        if opts.smooth_directions {
            smooth_one_ring(mesh, &mut dir.alpha_dot);
            smooth_one_ring(mesh, &mut dir.beta_dot);
        }
        let group_size = fields.group.len();
        let crossing = history
            .last()
            .map(|h: &HistoryEntry| h.group_size != group_size)
            .unwrap_or(false);
        history.push(HistoryEntry {
            lambda_bar,
            grad_norm: dir.value,
            step: 0.0,
            group_size,
            crossing,
            direction_converged: dir.converged,
        });
        iterations += 1;

        if dir.value < stop.delta_rel * lambda_bar.abs() {
            converged = true;
            break;
        }

        // Backtracking line search: largest h in the halving schedule
        // that strictly increases the objective.
        let warm: Vec<Vec<f64>> = spectrum.eigenfunctions[1..].to_vec();
        let mut accepted = false;
        let mut h = opts.h0;
        for _ in 0..opts.max_backtracks {
            let cand = step_densities(&pair, &dir.alpha_dot, &dir.beta_dot, h, mode);
            let cand = project_constraints(mesh, cand, opts.normalization, mode)?;
            match evaluate(mesh, &cand, k, opts.eigen_tol, &warm, mode) {
                Ok((spec_new, lb_new)) => {
                    if lb_new > lambda_bar {
                        pair = cand;
                        spectrum = spec_new;
                        lambda_bar = lb_new;
                        history.last_mut().unwrap().step = h;
                        accepted = true;
                        break;
                    }
                }
                Err(Error::SolverFailure { .. }) => {
                    // An ill-conditioned candidate is a rejected step,
                    // not a fatal error.
                }
                Err(e) => return Err(e),
            }
            h *= 0.5;
        }
        if !accepted {
            stalled = true;
            break;
        }
    }

    for _ in 0..opts.polish_passes {
        let mut cand = pair.clone();
        if mode == AscentMode::Conformal && !pin_alpha {
            smooth_one_ring(mesh, &mut cand.alpha);
        }
        smooth_one_ring(mesh, &mut cand.beta);
        cand.beta_normalized = false;
        cand.alpha_normalized = false;
        cand.conformal = false;
        let cand = project_constraints(mesh, cand, opts.normalization, mode)?;
        let warm: Vec<Vec<f64>> = spectrum.eigenfunctions[1..].to_vec();
        match evaluate(mesh, &cand, k, opts.eigen_tol, &warm, mode) {
            Ok((spec_new, lb_new)) if lb_new >= lambda_bar * (1.0 - stop.delta_rel) => {
                pair = cand;
                spectrum = spec_new;
                lambda_bar = lb_new;
            }
            Ok(_) => break,
            Err(Error::SolverFailure { .. }) => break,
            Err(e) => return Err(e),
        }
    }

    Ok(AscentState {
        densities: pair,
        spectrum,
        lambda_bar,
        iterations,
        history,
        stalled,
        converged,
    })
}

/// One accepted evaluation: assemble, eigensolve (warm-started), and
/// the mode's objective.
fn evaluate(
    mesh: &SimplicialManifold,
    pair: &DensityPair,
    k: usize,
    eigen_tol: f64,
    warm: &[Vec<f64>],
    mode: AscentMode,
) -> Result<(Spectrum, f64)> {
    let forms = assemble(mesh, pair);
    let spectrum = eigensolve_warm(&forms.stiffness, &forms.mass, k, eigen_tol, warm)?;
    let lambda_bar = match mode {
        AscentMode::Conformal => normalized_eigenvalue(mesh, pair, &spectrum, k)?,
        AscentMode::NuMode => spectrum.eigenvalues[k] * pair.beta_mass(mesh),
    };
    Ok((spectrum, lambda_bar))
}

fn step_densities(
    pair: &DensityPair,
    alpha_dot: &[f64],
    beta_dot: &[f64],
    h: f64,
    mode: AscentMode,
) -> DensityPair {
    let mut out = pair.clone();
    out.beta_normalized = false;
    out.alpha_normalized = false;
    out.conformal = false;
    if mode == AscentMode::Conformal {
        for (a, d) in out.alpha.iter_mut().zip(alpha_dot) {
            *a += h * d;
        }
    }
    for (b, d) in out.beta.iter_mut().zip(beta_dot) {
        *b += h * d;
    }
    out
}

/// Volume-weighted one-ring average of a per-cell field (cells sharing
/// at least one vertex).
fn smooth_one_ring(mesh: &SimplicialManifold, field: &mut Vec<f64>) {
    let nc = mesh.num_cells();
    let mut out = vec![0.0; nc];
    for q in 0..nc {
        let mut acc = 0.0;
        let mut wsum = 0.0;
        let mut seen = std::collections::HashSet::new();
        for &v in mesh.cell(q) {
            for &nb in mesh.cells_of_vertex(v as usize) {
                if seen.insert(nb) {
                    let w = mesh.volume(nb as usize);
                    acc += w * field[nb as usize];
                    wsum += w;
                }
            }
        }
        out[q] = acc / wsum;
    }
    *field = out;
}
