//! Weighted eigenvalue problems for a density pair (alpha, beta):
//! stiffness form ∫|∇φ|²α dv against mass form ∫φ²β dv, their
//! generalized spectrum, the scale-invariant normalized eigenvalue, and
//! local Dirichlet eigenvalues on geodesic balls.

mod eigen;

pub use eigen::{eigensolve, eigensolve_warm, Spectrum, MULT_TOL};

use crate::error::{Error, Result};
use crate::geometry::{GeodesicBall, SimplicialManifold};
use crate::linalg::{CsrMatrix, Triplets};

/// Which power of alpha is pinned to unit integral when a density pair
/// is normalized. The eigenvalue functional's denominator uses
/// ∫α^{n/(n-2)}; an alternative convention normalizes ∫α^{n/2}. Both are
/// kept available because they disagree for n = 3 and the choice changes
/// the constraint surface of the ascent, not the functional itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlphaNormalization {
    /// ∫ α^{n/(n-2)} dv = 1 — matches the denominator of the normalized
    /// eigenvalue, so on the constraint surface λ̄_k = λ_k·∫β.
    #[default]
    FunctionalExponent,
    /// ∫ α^{n/2} dv = 1.
    HalfDimension,
}

impl AlphaNormalization {
    /// The exponent p in the constraint ∫α^p = 1 for manifold dimension
    /// n. In two dimensions both conventions degenerate and the mean of
    /// alpha is pinned instead (p = 1 with the integral taken against
    /// dv/Vol), which is what `exponent` returning 1.0 encodes.
    pub fn exponent(&self, n: usize) -> f64 {
        if n == 2 {
            return 1.0;
        }
        let nf = n as f64;
        match self {
            AlphaNormalization::FunctionalExponent => nf / (nf - 2.0),
            AlphaNormalization::HalfDimension => nf / 2.0,
        }
    }
}

/// Per-cell weights of the two quadratic forms: `alpha` multiplies the
/// Dirichlet (stiffness) integrand, `beta` the L² (mass) integrand.
/// The flags record which normalizations currently hold, so that the
/// scale-invariant quantities can skip redundant renormalization.
#[derive(Debug, Clone)]
pub struct DensityPair {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// ∫ β dv = 1 holds.
    pub beta_normalized: bool,
    /// The alpha constraint of `normalization` holds.
    pub alpha_normalized: bool,
    /// beta = alpha^{n/(n-2)} cellwise (pair induced by one conformal factor).
    pub conformal: bool,
}

impl DensityPair {
    /// Validated pair from raw per-cell values.
    pub fn new(mesh: &SimplicialManifold, alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        if alpha.len() != mesh.num_cells() || beta.len() != mesh.num_cells() {
            return Err(Error::InvalidInput(format!(
                "density lengths {}/{} do not match {} cells",
                alpha.len(),
                beta.len(),
                mesh.num_cells()
            )));
        }
        if alpha.iter().any(|v| !v.is_finite() || *v < 0.0)
            || beta.iter().any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(Error::DegenerateDensity("densities must be finite and >= 0".into()));
        }
        let total_beta: f64 =
            beta.iter().zip(mesh.volumes()).map(|(b, v)| b * v).sum();
        if !(total_beta > 0.0) {
            return Err(Error::DegenerateDensity("beta has zero total mass".into()));
        }
        Ok(Self { alpha, beta, beta_normalized: false, alpha_normalized: false, conformal: false })
    }

    /// Unit densities: the background metric itself.
    pub fn uniform(mesh: &SimplicialManifold) -> Self {
        let c = mesh.num_cells();
        Self {
            alpha: vec![1.0; c],
            beta: vec![1.0; c],
            beta_normalized: false,
            alpha_normalized: false,
            conformal: true,
        }
    }

    /// Pair induced by a per-cell conformal factor f > 0: alpha =
    /// f^{(n-2)/2}, beta = f^{n/2}, so that the eigenvalue problem is the
    /// Laplace problem of the conformal metric f·g. For n = 2 this
    /// degenerates to alpha ≡ 1, beta = f, matching the invariance of the
    /// two-dimensional Dirichlet energy.
    pub fn from_conformal_factor(mesh: &SimplicialManifold, f: &[f64]) -> Result<Self> {
        if f.len() != mesh.num_cells() {
            return Err(Error::InvalidInput(format!(
                "conformal factor length {} does not match {} cells",
                f.len(),
                mesh.num_cells()
            )));
        }
        if f.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::DegenerateDensity("conformal factor must be finite and >= 0".into()));
        }
        let n = mesh.manifold_dim() as f64;
        let alpha: Vec<f64> = f.iter().map(|v| v.powf((n - 2.0) / 2.0)).collect();
        let beta: Vec<f64> = f.iter().map(|v| v.powf(n / 2.0)).collect();
        let mut pair = Self::new(mesh, alpha, beta)?;
        pair.conformal = true;
        Ok(pair)
    }

    /// ∫ β dv.
    pub fn beta_mass(&self, mesh: &SimplicialManifold) -> f64 {
        self.beta.iter().zip(mesh.volumes()).map(|(b, v)| b * v).sum()
    }

    /// ∫ α^p dv for the exponent p of the given convention; for n = 2
    /// the mean of alpha over the manifold.
    pub fn alpha_integral(&self, mesh: &SimplicialManifold, norm: AlphaNormalization) -> f64 {
        let n = mesh.manifold_dim();
        let p = norm.exponent(n);
        let raw: f64 = self
            .alpha
            .iter()
            .zip(mesh.volumes())
            .map(|(a, v)| if p == 1.0 { a * v } else { a.powf(p) * v })
            .sum();
        if n == 2 {
            raw / mesh.total_volume()
        } else {
            raw
        }
    }

    /// Rescale alpha and beta (separately) so that ∫β = 1 and the alpha
    /// constraint of `norm` holds; sets the flags. Errors when either
    /// integral vanishes.
    pub fn normalize(&mut self, mesh: &SimplicialManifold, norm: AlphaNormalization) -> Result<()> {
        let bm = self.beta_mass(mesh);
        if !(bm > 0.0) {
            return Err(Error::DegenerateDensity("beta has zero total mass".into()));
        }
        let ai = self.alpha_integral(mesh, norm);
        if !(ai > 0.0) {
            return Err(Error::DegenerateDensity("alpha integral vanishes".into()));
        }
        let p = norm.exponent(mesh.manifold_dim());
        let alpha_scale = ai.powf(-1.0 / p);
        for a in self.alpha.iter_mut() {
            *a *= alpha_scale;
        }
        let beta_scale = 1.0 / bm;
        for b in self.beta.iter_mut() {
            *b *= beta_scale;
        }
        self.beta_normalized = true;
        self.alpha_normalized = true;
        // Under the functional exponent ∫β = ∫α^{n/(n-2)} for a conformal
        // pair, so the two rescalings stay compatible; the half-dimension
        // convention breaks the cellwise power relation.
        self.conformal &= mesh.manifold_dim() == 2
            || matches!(norm, AlphaNormalization::FunctionalExponent);
        Ok(())
    }
}

/// Assembled quadratic forms of a density pair: exact P1 stiffness and
/// vertex-lumped mass. The mass diagonal is floored to keep the
/// generalized problem definite when beta vanishes on whole vertex
/// stars; the floor's share of the total mass is reported so callers
/// can tell when it matters.
#[derive(Debug, Clone)]
pub struct Forms {
    pub stiffness: CsrMatrix,
    /// Diagonal of the lumped mass form, after flooring.
    pub mass: Vec<f64>,
    /// The floor value applied to the mass diagonal.
    pub mass_floor: f64,
    /// Number of vertices whose mass was raised to the floor.
    pub floored_vertices: usize,
    /// Floored mass added, as a fraction of the total mass.
    pub floor_share: f64,
}

/// Discretize ∫|∇φ|²α dv and ∫φ²β dv over P1 elements. The stiffness
/// uses the exact per-cell gradients, so its kernel contains the
/// constants by construction; the mass is lumped by vertex averaging
/// (each cell spreads β_c·vol_c equally on its n+1 corners), which makes
/// nodal quadrature of products against β exact for cellwise fields.
pub fn assemble(mesh: &SimplicialManifold, densities: &DensityPair) -> Forms {
    let n = mesh.manifold_dim();
    let dim = mesh.embed_dim();
    let nv = mesh.num_vertices();
    let corners = n + 1;

    let mut trip = Triplets::with_capacity(nv, mesh.num_cells() * corners * corners);
    let mut mass = vec![0.0f64; nv];
    for c in 0..mesh.num_cells() {
        let cell = mesh.cell(c);
        let vol = mesh.volume(c);
        let a = densities.alpha[c] * vol;
        let b = densities.beta[c] * vol / corners as f64;
        for i in 0..corners {
            let gi = mesh.grad_coeff(c, i);
            mass[cell[i] as usize] += b;
            for j in 0..corners {
                let gj = mesh.grad_coeff(c, j);
                let dot: f64 = (0..dim).map(|d| gi[d] * gj[d]).sum();
                trip.push(cell[i] as usize, cell[j] as usize, a * dot);
            }
        }
    }

    let mass_floor = 1e-12 * mesh.mean_cell_volume();
    let total: f64 = mass.iter().sum();
    let mut floored_vertices = 0;
    let mut added = 0.0;
    for m in mass.iter_mut() {
        if *m < mass_floor {
            added += mass_floor - *m;
            *m = mass_floor;
            floored_vertices += 1;
        }
    }
    let floor_share = if total + added > 0.0 { added / (total + added) } else { 1.0 };

    Forms { stiffness: trip.into_csr(), mass, mass_floor, floored_vertices, floor_share }
}

/// Scale-invariant eigenvalue λ̄_k = λ_k·∫β / (∫α^{n/(n-2)})^{(n-2)/n}.
/// In two dimensions the exponent degenerates and the invariant
/// combination is λ_k·∫β divided by the mean of alpha (for alpha ≡ 1
/// this is the classical λ_k·Area).
pub fn normalized_eigenvalue(
    mesh: &SimplicialManifold,
    densities: &DensityPair,
    spectrum: &Spectrum,
    k: usize,
) -> Result<f64> {
    if k >= spectrum.eigenvalues.len() {
        return Err(Error::IndexOutOfRange { k, available: spectrum.eigenvalues.len() });
    }
    let n = mesh.manifold_dim();
    let beta_mass = densities.beta_mass(mesh);
    let lam = spectrum.eigenvalues[k];
    if n == 2 {
        let mean_alpha = densities.alpha_integral(mesh, AlphaNormalization::FunctionalExponent);
        if !(mean_alpha > 0.0) {
            return Err(Error::DegenerateDensity("alpha has zero mean".into()));
        }
        Ok(lam * beta_mass / mean_alpha)
    } else {
        let nf = n as f64;
        let ai = densities.alpha_integral(mesh, AlphaNormalization::FunctionalExponent);
        if !(ai > 0.0) {
            return Err(Error::DegenerateDensity("∫α^{n/(n-2)} vanishes".into()));
        }
        Ok(lam * beta_mass / ai.powf((nf - 2.0) / nf))
    }
}

/// Smallest Dirichlet eigenvalue of the weighted problem on a geodesic
/// ball: nodal values pinned to zero on the boundary and outside.
pub fn local_star_eigenvalue(
    mesh: &SimplicialManifold,
    densities: &DensityPair,
    ball: &GeodesicBall,
) -> Result<f64> {
    if ball.interior.is_empty() {
        return Err(Error::EmptyBall { center: ball.center, radius: ball.radius });
    }
    if ball.boundary.is_empty() {
        // Ball swallowed the whole closed mesh: constants are admissible.
        return Ok(0.0);
    }
    let forms = assemble(mesh, densities);
    let k_in = forms.stiffness.restrict(&ball.interior);
    let m_in: Vec<f64> = ball.interior.iter().map(|&v| forms.mass[v]).collect();
    let spec = eigen::eigensolve_dirichlet(&k_in, &m_in, 1e-9)?;
    Ok(spec)
}
