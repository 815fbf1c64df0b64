//! Conditional-gradient solver for the steepest-ascent direction
//! max_τ min_c ⟨τ, ψ(c)⟩ over the density simplex {α̇, β̇ ≥ 0,
//! ∫α̇ + ∫β̇ = 1}. The inner minimum over unit c is λ_min of the m×m
//! pairing matrix plus an affine offset, so the objective is concave
//! in τ and the simplex vertices (a unit-mass atom on one cell, in one
//! slot) are the linear oracle's candidates.

use nalgebra::DMatrix;

use super::PairedFields;
use crate::linalg::{sym_eigen_min, sym_eigen_sorted};

/// An ascent direction on the density simplex.
pub struct SubgradientDirection {
    /// Per-cell rates; both are nonnegative and ∫α̇ + ∫β̇ = 1.
    pub alpha_dot: Vec<f64>,
    pub beta_dot: Vec<f64>,
    /// Attained minimax value: the |∂λ̄_k| estimate. Nonpositive at a
    /// discretely critical pair.
    pub value: f64,
    /// Minimizing unit coefficient vector at the returned direction.
    pub witness: Vec<f64>,
    /// False only when the oracle budget ran out while the value was
    /// still improving by more than a 1e-3 relative step.
    pub converged: bool,
}

pub fn direction_find(fields: &PairedFields, budget: usize) -> SubgradientDirection {
    let mesh = fields.mesh();
    let nc = mesh.num_cells();
    let scale = fields.lambda_bar.abs().max(1.0);
    let gap_tol = 1e-10 * scale;

    // Seed at the dilation direction β̇ ∝ β: it pairs to zero with every
    // c, so the iterate starts at the exact optimum of critical pairs
    // and the attained value never goes negative.
    let beta_mass: f64 = (0..nc).map(|q| fields.beta[q] * mesh.volume(q)).sum();
    let mut alpha_dot = vec![0.0; nc];
    let mut beta_dot: Vec<f64> = fields.beta.iter().map(|b| b / beta_mass).collect();
    let (mut a_tau, mut off_tau) = fields.pairing_matrices(&alpha_dot, &beta_dot);
    let mut lmo_calls = 0;

    let (mut value, mut witness) = min_eig(&a_tau, off_tau);
    let mut last_rel = f64::INFINITY;
    let mut certified = false;

    while lmo_calls < budget {
        let (best, cell, beta_slot) = oracle(fields, &witness);
        lmo_calls += 1;
        if best - value <= gap_tol {
            certified = true;
            break;
        }

        let (a_v, off_v) = fields.vertex_matrices(cell, beta_slot);
        let gamma = line_search(&a_tau, off_tau, &a_v, off_v);
        if gamma <= 0.0 {
            // Numerically flat along the oracle direction: further
            // blending cannot move the value.
            certified = true;
            break;
        }
        let keep = 1.0 - gamma;
        a_tau = &a_tau * keep + &a_v * gamma;
        off_tau = off_tau * keep + off_v * gamma;
        for v in alpha_dot.iter_mut().chain(beta_dot.iter_mut()) {
            *v *= keep;
        }
        let slot = if beta_slot { &mut beta_dot } else { &mut alpha_dot };
        slot[cell] += gamma / mesh.volume(cell);

        let (nv, nw) = min_eig(&a_tau, off_tau);
        let improve = nv - value;
        last_rel = improve / value.abs().max(1e-9 * scale);
        value = nv;
        witness = nw;
        if improve <= f64::EPSILON * scale {
            break;
        }
    }

    // Pin the simplex constraint to working precision.
    let mass: f64 = (0..nc).map(|q| (alpha_dot[q] + beta_dot[q]) * mesh.volume(q)).sum();
    for v in alpha_dot.iter_mut().chain(beta_dot.iter_mut()) {
        *v /= mass;
    }

    SubgradientDirection {
        alpha_dot,
        beta_dot,
        // The dilation seed attains zero exactly, so a negative reading
        // can only be roundoff in the m×m eigensolve.
        value: value.max(0.0),
        witness,
        converged: certified || last_rel <= 1e-3,
    }
}

/// Linear oracle: the simplex vertex maximizing ⟨vertex, ∇F(τ)⟩, which
/// is the largest paired-field value over cells and admissible slots.
fn oracle(fields: &PairedFields, witness: &[f64]) -> (f64, usize, bool) {
    let (psi1, psi2) = fields.psi(witness);
    let mut best = f64::NEG_INFINITY;
    let mut cell = 0;
    let mut beta_slot = true;
    for (q, &v) in psi2.iter().enumerate() {
        if v > best {
            best = v;
            cell = q;
        }
    }
    if fields.alpha_free {
        for (q, &v) in psi1.iter().enumerate() {
            if v > best {
                best = v;
                cell = q;
                beta_slot = false;
            }
        }
    }
    (best, cell, beta_slot)
}

fn min_eig(a: &DMatrix<f64>, offset: f64) -> (f64, Vec<f64>) {
    let (vals, vecs) = sym_eigen_sorted(a);
    (vals[0] + offset, vecs.column(0).iter().copied().collect())
}

/// Maximize the concave g(γ) = λ_min((1-γ)A + γA_v) + affine offset on
/// [0, 1] by ternary search.
fn line_search(a_tau: &DMatrix<f64>, off_tau: f64, a_v: &DMatrix<f64>, off_v: f64) -> f64 {
    let g = |gamma: f64| -> f64 {
        let blend = a_tau * (1.0 - gamma) + a_v * gamma;
        sym_eigen_min(&blend) + off_tau * (1.0 - gamma) + off_v * gamma
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..60 {
        let third = (hi - lo) / 3.0;
        if g(lo + third) < g(hi - third) {
            lo += third;
        } else {
            hi -= third;
        }
    }
    // Snap to the far endpoint when it is no worse: a full jump onto
    // the oracle vertex keeps the iterate exactly sparse.
    let mut best = 0.5 * (lo + hi);
    if g(1.0) >= g(best) {
        best = 1.0;
    }
    // The blend must strictly improve on the current iterate; γ = 0
    // signals a numerically flat section to the caller.
    if g(best) > g(0.0) {
        best
    } else {
        0.0
    }
}
