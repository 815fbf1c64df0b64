//! Certificate oracles: closed-form Gram matrices on symmetric spaces,
//! rotation invariance, concentration-flag soundness, the local Sobolev
//! ratio, and the weighted-spectrum compactness probe.

use confspec::certify::{
    compactness_probe, concentration_scan, embedding_ratio, extremal_residuals,
    sobolev_embedding_check, sphere_certificate,
};
use confspec::geometry::{build_flat_torus, build_icosphere, build_sphere3, geodesic_ball};
use confspec::spectrum::{assemble, eigensolve, normalized_eigenvalue, DensityPair, Spectrum};
use confspec::Error;
use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn solved_uniform(
    mesh: &confspec::geometry::SimplicialManifold,
    k: usize,
) -> (DensityPair, Spectrum) {
    let mut pair = DensityPair::uniform(mesh);
    pair.normalize(mesh, Default::default()).unwrap();
    let forms = assemble(mesh, &pair);
    let spectrum = eigensolve(&forms.stiffness, &forms.mass, k, 1e-10).unwrap();
    (pair, spectrum)
}

/// The ℓ=1 harmonics x, y, z satisfy x²+y²+z² = 1: the certificate
/// recovers W ≈ I/3 with small sup deviation.
#[test]
fn round_sphere_certificate_is_third_identity() {
    let mesh = build_icosphere(3).unwrap();
    let (pair, spectrum) = solved_uniform(&mesh, 1);
    let cert = sphere_certificate(&mesh, &spectrum, &pair, 1).unwrap();
    assert_eq!(cert.group.len(), 3);
    for i in 0..3 {
        for j in 0..3 {
            let expect = if i == j { 1.0 / 3.0 } else { 0.0 };
            assert!(
                (cert.gram[i][j] - expect).abs() < 5e-3,
                "W[{i}][{j}] = {}",
                cert.gram[i][j]
            );
        }
    }
    assert!(cert.residuals.norm_dev < 1e-2, "norm_dev {}", cert.residuals.norm_dev);
    assert!(cert.sphere_map.is_some());
    assert!(cert.fit.min_eigenvalue >= -1e-12);
}

/// Uniform round-sphere state: conformal deviation vanishes, the
/// density identity and energy identity hold to mesh error.
#[test]
fn round_sphere_residuals_are_small() {
    let mesh = build_icosphere(3).unwrap();
    let (pair, spectrum) = solved_uniform(&mesh, 1);
    let cert = sphere_certificate(&mesh, &spectrum, &pair, 1).unwrap();
    let cert = extremal_residuals(&mesh, &pair, &spectrum, cert, 1).unwrap();
    let lam = spectrum.eigenvalues[1];
    let r = &cert.residuals;
    assert!(r.conf_dev.unwrap() < 1e-12, "conf_dev {:?}", r.conf_dev);
    assert!(r.density_dev.unwrap() < 2e-2, "density_dev {:?}", r.density_dev);
    // n = 2: ∫|∇Φ|² = tr(W Λ) = λ̄ exactly by the stiffness quadrature.
    assert!(
        r.energy_gap.unwrap() < 1e-6 * lam,
        "energy_gap {:?} vs lambda {lam}",
        r.energy_gap
    );
}

/// Sphere-valued certificates exist on S³ too: the four ambient
/// coordinates of the first group, W ≈ I/4, and the n = 3 energy
/// identity within mesh error.
#[test]
fn three_sphere_certificate_and_energy_identity() {
    let mesh = build_sphere3(3).unwrap();
    let (pair, spectrum) = solved_uniform(&mesh, 1);
    let cert = sphere_certificate(&mesh, &spectrum, &pair, 1).unwrap();
    assert_eq!(cert.group.len(), 4);
    for i in 0..4 {
        for j in 0..4 {
            let expect = if i == j { 0.25 } else { 0.0 };
            assert!(
                (cert.gram[i][j] - expect).abs() < 1e-2,
                "W[{i}][{j}] = {}",
                cert.gram[i][j]
            );
        }
    }
    assert!(cert.residuals.norm_dev < 5e-2, "norm_dev {}", cert.residuals.norm_dev);
    let cert = extremal_residuals(&mesh, &pair, &spectrum, cert, 1).unwrap();
    let lam = spectrum.eigenvalues[1];
    let gap = cert.residuals.energy_gap.unwrap();
    assert!(gap < 0.1 * lam.powi(3).sqrt(), "energy_gap {gap} vs lambda^{{3/2}}");
}

/// norm_dev is invariant under orthogonal rotations of the eigenbasis.
#[test]
fn norm_dev_is_rotation_invariant() {
    let mesh = build_flat_torus(16, &[1.0, 1.0]).unwrap();
    let (pair, spectrum) = solved_uniform(&mesh, 1);
    let cert = sphere_certificate(&mesh, &spectrum, &pair, 1).unwrap();

    let group = spectrum.group_of(1).to_vec();
    let m = group.len();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let raw = DMatrix::from_fn(m, m, |_, _| rng.random::<f64>() - 0.5);
    let q = raw.qr().q();

    let mut rotated = spectrum.clone();
    for (a, &ia) in group.iter().enumerate() {
        let mut new = vec![0.0; mesh.num_vertices()];
        for (b, &ib) in group.iter().enumerate() {
            let c = q[(a, b)];
            for (slot, val) in new.iter_mut().zip(&spectrum.eigenfunctions[ib]) {
                *slot += c * val;
            }
        }
        rotated.eigenfunctions[ia] = new;
    }
    let cert_rot = sphere_certificate(&mesh, &rotated, &pair, 1).unwrap();
    assert!(
        (cert.residuals.norm_dev - cert_rot.residuals.norm_dev).abs() < 1e-10,
        "{} vs {}",
        cert.residuals.norm_dev,
        cert_rot.residuals.norm_dev
    );
    // The torus Gram is isotropic, hence itself invariant.
    for i in 0..m {
        for j in 0..m {
            assert!((cert.gram[i][j] - cert_rot.gram[i][j]).abs() < 1e-9);
        }
    }
}

/// A simple eigenvalue with non-constant |φ| admits no certificate.
#[test]
fn simple_eigenvalue_has_no_certificate() {
    let mesh = build_flat_torus(12, &[1.0, 1.0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let alpha: Vec<f64> = (0..mesh.num_cells()).map(|_| 0.5 + rng.random::<f64>()).collect();
    let beta: Vec<f64> = (0..mesh.num_cells()).map(|_| 0.5 + rng.random::<f64>()).collect();
    let mut pair = DensityPair::new(&mesh, alpha, beta).unwrap();
    pair.normalize(&mesh, Default::default()).unwrap();
    let forms = assemble(&mesh, &pair);
    let spectrum = eigensolve(&forms.stiffness, &forms.mass, 1, 1e-10).unwrap();
    assert_eq!(spectrum.group_of(1).len(), 1, "seed must give a simple eigenvalue");

    let cert = sphere_certificate(&mesh, &spectrum, &pair, 1).unwrap();
    assert!(cert.residuals.norm_dev > 0.1, "norm_dev {}", cert.residuals.norm_dev);
    assert!(cert.sphere_map.is_none());
}

/// Homogeneous states concentrate nowhere: no flags below the
/// injectivity scale; soundness of any flag is recomputable.
#[test]
fn uniform_sphere_has_no_bad_points() {
    let mesh = build_icosphere(3).unwrap();
    let (pair, spectrum) = solved_uniform(&mesh, 1);
    let lam_bar = normalized_eigenvalue(&mesh, &pair, &spectrum, 1).unwrap();
    let report = concentration_scan(&mesh, &pair, lam_bar, &[0.3, 0.5], 32).unwrap();
    assert!(report.flagged.is_empty(), "unexpected flags: {:?}", report.flagged);
    assert!(report.scanned_pairs > 0);

    // Sub-edge radii produce no balls at all, hence no flags.
    let tiny = concentration_scan(&mesh, &pair, lam_bar, &[1e-6], 16).unwrap();
    assert!(tiny.flagged.is_empty());
}

/// With an artificially large λ̄ every scanned pair must flag, and each
/// flag must satisfy its own inequality under direct recomputation.
#[test]
fn concentration_flags_are_sound() {
    let mesh = build_flat_torus(16, &[1.0, 1.0]).unwrap();
    let (pair, _) = solved_uniform(&mesh, 1);
    let report = concentration_scan(&mesh, &pair, 1e9, &[0.2], 8).unwrap();
    assert_eq!(report.flagged.len(), report.scanned_pairs);
    for bp in &report.flagged {
        assert!(bp.local_eigenvalue < bp.threshold);
        assert!(bp.beta_mass > 0.0);
        let ball = geodesic_ball(&mesh, bp.vertex, bp.radius).unwrap();
        let again = confspec::spectrum::local_star_eigenvalue(&mesh, &pair, &ball).unwrap();
        // Q-normalization is trivial at n = 2, so the recomputation uses
        // the pair as-is.
        assert!((again - bp.local_eigenvalue).abs() < 1e-6 * again.max(1.0));
    }
}

/// One-hat closed form: with f ≡ 1 and κ₀ = 3/2 the ratio reduces to
/// (star_vol/3)^{2/3} / (r^{4/3} · K_vv).
#[test]
fn embedding_ratio_matches_hat_closed_form() {
    let mesh = build_flat_torus(16, &[1.0, 1.0]).unwrap();
    let f = vec![1.0; mesh.num_cells()];
    let v = 7usize;
    let ball = geodesic_ball(&mesh, v, 0.25).unwrap();
    let mut hat = vec![0.0; mesh.num_vertices()];
    hat[v] = 1.0;
    let got = embedding_ratio(&mesh, &f, 1.5, &ball, &hat);

    let star_vol: f64 =
        mesh.cells_of_vertex(v).iter().map(|&q| mesh.volume(q as usize)).sum();
    let pair = DensityPair::uniform(&mesh);
    let forms = assemble(&mesh, &pair);
    let expect = (star_vol / 3.0f64).powf(2.0 / 3.0)
        / (0.25f64.powf(4.0 / 3.0) * forms.stiffness.get(v, v));
    assert!((got - expect).abs() < 1e-12 * expect, "{got} vs {expect}");
}

/// f ≡ 1 embedding ratio stays bounded under refinement; out-of-range
/// κ₀ is rejected.
#[test]
fn embedding_ratio_stable_under_refinement() {
    let worst = |res: usize| -> f64 {
        let mesh = build_flat_torus(res, &[1.0, 1.0]).unwrap();
        let f = vec![1.0; mesh.num_cells()];
        let centers: Vec<usize> = (0..mesh.num_vertices()).step_by(mesh.num_vertices() / 4).collect();
        sobolev_embedding_check(&mesh, &f, 1.5, 0.25, &centers, 8, 11).unwrap()
    };
    let coarse = worst(16);
    let fine = worst(32);
    assert!(coarse.is_finite() && coarse > 0.0);
    assert!(fine <= 1.5 * coarse, "ratio grew: {coarse} -> {fine}");

    let mesh = build_flat_torus(8, &[1.0, 1.0]).unwrap();
    let f = vec![1.0; mesh.num_cells()];
    assert!(sobolev_embedding_check(&mesh, &f, 2.5, 0.25, &[0], 2, 1).is_err());
}

/// f ≡ 1 on the round sphere: the classical spectrum ℓ(ℓ+1) with
/// multiplicities 2ℓ+1.
#[test]
fn compactness_probe_recovers_spherical_harmonics() {
    let mesh = build_icosphere(3).unwrap();
    let f = vec![1.0; mesh.num_cells()];
    let eigs = compactness_probe(&mesh, &f, 9, 1e-10).unwrap();
    assert!(eigs[0].abs() < 1e-8);
    for &e in &eigs[1..4] {
        assert!((e - 2.0).abs() < 0.04, "l=1 eigenvalue {e}");
    }
    for &e in &eigs[4..9] {
        assert!((e - 6.0).abs() < 0.2, "l=2 eigenvalue {e}");
    }
}

/// A zero set on a quarter of the cells: eigenvalues stay finite,
/// increasing, and stable under refinement; f ≡ 0 is rejected.
#[test]
fn compactness_probe_with_zero_set() {
    let probe = |res: usize| -> Vec<f64> {
        let mesh = build_flat_torus(res, &[1.0, 1.0]).unwrap();
        let f: Vec<f64> = (0..mesh.num_cells())
            .map(|q| {
                let corners = mesh.cell_corners(q);
                let xbar = (corners[0] + corners[2] + corners[4]) / 3.0;
                if xbar < 0.25 {
                    0.0
                } else {
                    1.0
                }
            })
            .collect();
        compactness_probe(&mesh, &f, 5, 1e-10).unwrap()
    };
    let coarse = probe(16);
    let fine = probe(32);
    for eigs in [&coarse, &fine] {
        assert!(eigs.iter().all(|e| e.is_finite()));
        for w in eigs.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "not increasing: {eigs:?}");
        }
    }
    for i in 1..5 {
        let rel = (fine[i] - coarse[i]).abs() / coarse[i];
        assert!(rel < 0.3, "eigenvalue {i} unstable: {} vs {}", coarse[i], fine[i]);
    }

    let mesh = build_flat_torus(8, &[1.0, 1.0]).unwrap();
    let zero = vec![0.0; mesh.num_cells()];
    assert!(matches!(
        compactness_probe(&mesh, &zero, 3, 1e-10),
        Err(Error::DegenerateDensity(_))
    ));
}
