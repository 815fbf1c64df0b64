//! Verb implementations: one run owns one output directory; every
//! artifact lands atomically and record.json is written last as the
//! completion marker.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use confspec::certify::{
    concentration_scan, extremal_residuals, sphere_certificate_grouped, Certificate,
};
use confspec::geometry::{
    build_flat_torus, build_icosphere, build_sphere3, geodesic_ball, SimplicialManifold,
};
use confspec::maximize::{maximize, nu_mode, AscentOptions, AscentState, StopRule};
use confspec::nharmonic::{
    bochner_check, eps_regularity_check, harmonic_replacement, tau_energy, ReplacementSchedule,
    SolverConfig, SphereMap,
};
use confspec::spectrum::{
    assemble, eigensolve, eigensolve_warm, normalized_eigenvalue, DensityPair, Spectrum,
};

use crate::artifacts::{self, MeshSummary, RunRecord};
use crate::config::{CertifySettings, InitKind, InitSpec, MeshSpec, Mode, RunConfig};
use crate::{Failure, Result};

pub fn build_mesh(spec: &MeshSpec) -> Result<SimplicialManifold> {
    match spec {
        MeshSpec::Icosphere { subdivisions } => build_icosphere(*subdivisions),
        MeshSpec::FlatTorus { resolution, periods } => build_flat_torus(*resolution, periods),
        MeshSpec::Sphere3 { refinement } => build_sphere3(*refinement),
        MeshSpec::Import { path, kappa_g } => return artifacts::read_mesh(path, *kappa_g),
    }
    .map_err(Failure::from)
}

/// Positive multiplicative jitter, one independent factor per cell.
fn jittered(nc: usize, amplitude: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..nc).map(|_| 1.0 + amplitude * (2.0 * rng.random::<f64>() - 1.0)).collect()
}

fn initial_pair(
    mesh: &SimplicialManifold,
    init: &InitSpec,
    rng: &mut ChaCha8Rng,
) -> Result<DensityPair> {
    let nc = mesh.num_cells();
    match init.kind {
        InitKind::Uniform => Ok(DensityPair::uniform(mesh)),
        InitKind::Perturbed => {
            let alpha = jittered(nc, init.perturb, rng);
            let beta = jittered(nc, init.perturb, rng);
            DensityPair::new(mesh, alpha, beta).map_err(Failure::from)
        }
        InitKind::Import => {
            let dir = init.path.as_ref().expect("validated at parse time");
            let alpha = artifacts::read_field_csv(&dir.join("alpha.csv"))?;
            let beta = artifacts::read_field_csv(&dir.join("beta.csv"))?;
            DensityPair::new(mesh, alpha, beta).map_err(Failure::from)
        }
    }
}

/// The conformal factor the pair represents: f = α^{2/(n-2)} for n ≥ 3;
/// at n = 2 the factor sits entirely in β.
fn conformal_factor(mesh: &SimplicialManifold, densities: &DensityPair) -> Vec<f64> {
    if mesh.manifold_dim() == 2 {
        densities.beta.clone()
    } else {
        let e = 2.0 / (mesh.manifold_dim() as f64 - 2.0);
        densities.alpha.iter().map(|a| a.powf(e)).collect()
    }
}

/// Σ_i |∇Φ_i|² per cell from the certificate components.
fn grad_phi_sq(mesh: &SimplicialManifold, phi: &[Vec<f64>]) -> Vec<f64> {
    let nc = mesh.num_cells();
    let mut out = vec![0.0; nc];
    for comp in phi {
        for (q, slot) in out.iter_mut().enumerate() {
            let g = mesh.cell_gradient(q, comp);
            *slot += g.iter().map(|x| x * x).sum::<f64>();
        }
    }
    out
}

#[derive(Serialize)]
struct CertDoc {
    scan_threshold: f64,
    scanned_pairs: usize,
    /// Spectrum the group was clustered from (kernel included), so the
    /// document shows the gaps behind the grouping decision.
    eigenvalues: Vec<f64>,
    certificate: Certificate,
}

/// Eigenvalue indices past k the certificate may pull into the multiplet.
const GROUP_LOOKAHEAD: usize = 6;

/// Re-solve the spectrum a few indices past k (warm-started from what the
/// run already has) so the multiplet around λ_k can be clustered at the
/// certificate's own tolerance rather than the eigensolver's.
fn enriched_spectrum(
    mesh: &SimplicialManifold,
    densities: &DensityPair,
    spectrum: &Spectrum,
    k: usize,
    eigen_tol: f64,
) -> Result<Spectrum> {
    let want = (k + GROUP_LOOKAHEAD).min(mesh.num_vertices().saturating_sub(1));
    if spectrum.eigenvalues.len() > want {
        return Ok(spectrum.clone());
    }
    let forms = assemble(mesh, densities);
    let warm: Vec<Vec<f64>> = spectrum.eigenfunctions[1..].to_vec();
    Ok(eigensolve_warm(&forms.stiffness, &forms.mass, want, eigen_tol, &warm)?)
}

fn build_certificate(
    mesh: &SimplicialManifold,
    densities: &DensityPair,
    spectrum: &Spectrum,
    lambda_bar: f64,
    k: usize,
    eigen_tol: f64,
    settings: &CertifySettings,
) -> Result<(CertDoc, Spectrum)> {
    let rich = enriched_spectrum(mesh, densities, spectrum, k, eigen_tol)?;
    let group = rich.group_within(k, settings.group_tol);
    let cert = sphere_certificate_grouped(mesh, &rich, densities, &group)?;
    let mut cert = extremal_residuals(mesh, densities, &rich, cert, k)?;
    let scan =
        concentration_scan(mesh, densities, lambda_bar, &settings.radii, settings.subsample)?;
    cert.bad_points = scan.flagged;
    let doc = CertDoc {
        scan_threshold: scan.threshold,
        scanned_pairs: scan.scanned_pairs,
        eigenvalues: rich.eigenvalues.clone(),
        certificate: cert,
    };
    Ok((doc, rich))
}

fn write_spectral_fields(
    out: &Path,
    mesh: &SimplicialManifold,
    densities: &DensityPair,
    spectrum: &Spectrum,
    cert: &Certificate,
) -> Result<()> {
    artifacts::write_field(out, mesh, "alpha", &densities.alpha)?;
    artifacts::write_field(out, mesh, "beta", &densities.beta)?;
    artifacts::write_field(out, mesh, "f", &conformal_factor(mesh, densities))?;
    for (i, func) in spectrum.eigenfunctions.iter().enumerate() {
        artifacts::write_field(out, mesh, &format!("eigenfunction_{i}"), func)?;
    }
    for (j, comp) in cert.phi.iter().enumerate() {
        artifacts::write_field(out, mesh, &format!("phi_{j}"), comp)?;
    }
    artifacts::write_field(out, mesh, "grad_phi_sq", &grad_phi_sq(mesh, &cert.phi))
}

fn base_record(mesh: &SimplicialManifold, mode: Mode, cfg: &RunConfig) -> RunRecord {
    RunRecord {
        version: env!("CARGO_PKG_VERSION"),
        mode: mode.name(),
        k: cfg.k,
        seed: cfg.seed,
        mesh: MeshSummary::of(mesh),
        iterations: 0,
        converged: false,
        stalled: false,
        lambda_bar: None,
        lambda_raw: None,
        energy: None,
        residual: None,
        wall_clock_secs: 0.0,
        finished_unix_ms: 0,
    }
}

pub fn cmd_run(cfg: &RunConfig, force: Option<Mode>) -> Result<()> {
    let mode = force.unwrap_or(cfg.mode);
    let out = cfg.out.clone().ok_or_else(|| {
        Failure::Validation("no output directory: set `out` in the config or pass --out".into())
    })?;
    std::fs::create_dir_all(out.join("fields"))
        .map_err(|e| Failure::Io(format!("creating {}: {e}", out.display())))?;
    let started = Instant::now();

    let mesh = build_mesh(&cfg.mesh)?;
    artifacts::write_text(&out.join("config.echo"), &cfg.echo(mode))?;
    artifacts::write_mesh(&out, &mesh)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    match mode {
        Mode::Maximize | Mode::Nu => run_ascent(cfg, mode, &mesh, &out, &mut rng, started),
        Mode::Harmonic => run_harmonic(cfg, &mesh, &out, &mut rng, started),
        Mode::Certify => run_certify(cfg, &mesh, &out, &mut rng, started),
    }
}

fn run_ascent(
    cfg: &RunConfig,
    mode: Mode,
    mesh: &SimplicialManifold,
    out: &Path,
    rng: &mut ChaCha8Rng,
    started: Instant,
) -> Result<()> {
    let s = &cfg.solver;
    let stop = StopRule { delta_rel: s.delta_stop, max_iters: s.max_iters };
    let opts = AscentOptions {
        fw_budget: s.budget,
        eigen_tol: s.eigen_tol,
        h0: s.h0,
        max_backtracks: s.max_backtracks,
        smooth_directions: s.smooth_directions,
        polish_passes: s.polish,
        ..Default::default()
    };
    let init = initial_pair(mesh, &cfg.init, rng)?;
    let state: AscentState = if mode == Mode::Nu {
        nu_mode(mesh, cfg.k, init.beta, stop, opts)?
    } else {
        maximize(mesh, cfg.k, init, stop, opts)?
    };

    artifacts::write_text(&out.join("trajectory.jsonl"), &artifacts::jsonl(&state.history)?)?;
    let (doc, spectrum) = build_certificate(
        mesh,
        &state.densities,
        &state.spectrum,
        state.lambda_bar,
        cfg.k,
        s.eigen_tol,
        &cfg.certify,
    )?;
    artifacts::write_json(&out.join("certificate.json"), &doc)?;
    write_spectral_fields(out, mesh, &state.densities, &spectrum, &doc.certificate)?;

    let mut record = base_record(mesh, mode, cfg);
    record.iterations = state.iterations;
    record.converged = state.converged;
    record.stalled = state.stalled;
    record.lambda_bar = Some(state.lambda_bar);
    record.lambda_raw = Some(spectrum.eigenvalues[cfg.k]);
    record.residual = state.history.last().map(|h| h.grad_norm);
    artifacts::write_json(&artifacts::record_path(out), &record.finish(started))
}

fn run_certify(
    cfg: &RunConfig,
    mesh: &SimplicialManifold,
    out: &Path,
    rng: &mut ChaCha8Rng,
    started: Instant,
) -> Result<()> {
    // The certificate residual identities are stated on the constraint
    // surface ∫β = 1, so certify-mode normalizes like the ascent does.
    let mut densities = initial_pair(mesh, &cfg.init, rng)?;
    densities.normalize(mesh, Default::default())?;
    let forms = assemble(mesh, &densities);
    let spectrum = eigensolve(&forms.stiffness, &forms.mass, cfg.k, cfg.solver.eigen_tol)?;
    let lambda_bar = normalized_eigenvalue(mesh, &densities, &spectrum, cfg.k)?;

    artifacts::write_text(&out.join("trajectory.jsonl"), "")?;
    let (doc, spectrum) = build_certificate(
        mesh,
        &densities,
        &spectrum,
        lambda_bar,
        cfg.k,
        cfg.solver.eigen_tol,
        &cfg.certify,
    )?;
    artifacts::write_json(&out.join("certificate.json"), &doc)?;
    write_spectral_fields(out, mesh, &densities, &spectrum, &doc.certificate)?;

    let mut record = base_record(mesh, Mode::Certify, cfg);
    record.converged = true;
    record.lambda_bar = Some(lambda_bar);
    record.lambda_raw = Some(spectrum.eigenvalues[cfg.k]);
    record.residual = spectrum.residuals.get(cfg.k).copied();
    artifacts::write_json(&artifacts::record_path(out), &record.finish(started))
}

fn run_harmonic(
    cfg: &RunConfig,
    mesh: &SimplicialManifold,
    out: &Path,
    rng: &mut ChaCha8Rng,
    started: Instant,
) -> Result<()> {
    let h = &cfg.harmonic;
    let radius = h.ball_radius.ok_or_else(|| {
        Failure::Validation("harmonic.ball_radius is required in harmonic mode".into())
    })?;
    let ball = geodesic_ball(mesh, h.ball_center, radius)?;

    // Seeded rough start biased toward the pole; the replacement solves
    // inside the ball holding the exterior trace fixed.
    let comps = h.p + 1;
    let mut values = Vec::with_capacity(mesh.num_vertices() * comps);
    for _ in 0..mesh.num_vertices() {
        values.push(1.0 + h.perturb * (2.0 * rng.random::<f64>() - 1.0));
        for _ in 1..comps {
            values.push(h.perturb * (2.0 * rng.random::<f64>() - 1.0));
        }
    }
    let map = SphereMap::normalized(mesh, h.p, values, Vec::new())?;

    let schedule = ReplacementSchedule { tau0: h.tau0, halvings: h.halvings };
    let solver = SolverConfig {
        tol: h.tol,
        max_iters: h.max_iters,
        ..Default::default()
    };
    let (solved, reports) = harmonic_replacement(mesh, &map, &ball, schedule, solver)?;
    artifacts::write_text(&out.join("trajectory.jsonl"), &artifacts::jsonl(&reports)?)?;

    // The replacement only solves inside the ball; measure residual and
    // regularity there, with the untouched exterior trace pinned so it
    // cannot masquerade as solver error.
    let mut inside = vec![false; mesh.num_vertices()];
    for &v in &ball.interior {
        inside[v as usize] = true;
    }
    let exterior: Vec<u32> =
        (0..mesh.num_vertices() as u32).filter(|&v| !inside[v as usize]).collect();
    let last = reports.last().expect("schedule yields at least one stage");
    let pinned = SphereMap::new(mesh, h.p, solved.values.clone(), exterior)?;
    let energy = tau_energy(mesh, &pinned, last.tau)?;
    let bochner = bochner_check(mesh, &pinned, last.tau)?;
    // Deep interior: clear of the one-sided recovery ring at the rim.
    let dist = mesh.distances_from(h.ball_center);
    let deep: Vec<usize> = ball
        .interior
        .iter()
        .map(|&v| v as usize)
        .filter(|&v| dist[v] < 0.5 * radius)
        .collect();
    let min_slack_deep = deep
        .iter()
        .map(|&v| bochner.slack[v])
        .fold(f64::INFINITY, f64::min);
    // Probe balls fit strictly inside the rim: center band 0.6r, probe
    // radius 0.35r; on meshes too coarse to trap a cell they drop out.
    let band: Vec<usize> = ball
        .interior
        .iter()
        .map(|&v| v as usize)
        .filter(|&v| dist[v] < 0.6 * radius)
        .collect();
    let eps_balls: Vec<_> = band
        .iter()
        .step_by(band.len().div_ceil(12).max(1))
        .filter_map(|&v| geodesic_ball(mesh, v, 0.35 * radius).ok())
        .filter(|b| !b.interior.is_empty())
        .collect();
    let eps = eps_regularity_check(mesh, &pinned, &eps_balls, h.eps0)?;

    artifacts::write_json(
        &out.join("certificate.json"),
        &json!({
            "mode": "harmonic",
            "tau_final": last.tau,
            "energy": energy.energy,
            "el_residual": energy.el_residual_norm,
            "converged": last.converged,
            "bochner": {
                "min_slack_interior": min_slack_deep,
                "min_slack": bochner.min_slack,
                "ellipticity": [bochner.ellipticity.0, bochner.ellipticity.1],
            },
            "eps_regularity": {
                "eps0": eps.eps0,
                "balls": eps.balls.len(),
                "max_ratio": eps.max_ratio,
            },
        }),
    )?;

    for c in 0..comps {
        let comp: Vec<f64> =
            (0..mesh.num_vertices()).map(|v| solved.value(v)[c]).collect();
        artifacts::write_field(out, mesh, &format!("map_{c}"), &comp)?;
    }
    artifacts::write_field(out, mesh, "b_field", &energy.b_field)?;
    artifacts::write_field(out, mesh, "u_density", &energy.u_density)?;

    let mut record = base_record(mesh, Mode::Harmonic, cfg);
    record.iterations = reports.iter().map(|r| r.iterations).sum();
    record.converged = reports.iter().all(|r| r.converged);
    record.stalled = reports.iter().any(|r| r.stalled);
    record.energy = Some(energy.energy);
    record.residual = Some(energy.el_residual_norm);
    artifacts::write_json(&artifacts::record_path(out), &record.finish(started))
}

pub fn cmd_mesh(cfg: &RunConfig) -> Result<()> {
    let out = cfg.out.clone().ok_or_else(|| {
        Failure::Validation("no output directory: set `out` in the config or pass --out".into())
    })?;
    std::fs::create_dir_all(&out)
        .map_err(|e| Failure::Io(format!("creating {}: {e}", out.display())))?;
    let mesh = build_mesh(&cfg.mesh)?;
    artifacts::write_mesh(&out, &mesh)?;
    artifacts::write_text(&out.join("mesh.vtk"), &artifacts::vtk_text(&mesh, "mesh", None)?)?;
    let stats = serde_json::to_string_pretty(&MeshSummary::of(&mesh))
        .map_err(|e| Failure::Io(e.to_string()))?;
    println!("{stats}");
    Ok(())
}

pub fn cmd_export(dir: &Path, field: &str, out: Option<&Path>) -> Result<()> {
    let csv = dir.join("fields").join(format!("{field}.csv"));
    if !csv.is_file() {
        let available = artifacts::list_fields(dir)?;
        return Err(Failure::Validation(format!(
            "unknown field {field:?}; available: {}",
            available.join(", ")
        )));
    }
    let mesh = artifacts::read_mesh(dir, 0.0)?;
    let values = artifacts::read_field_csv(&csv)?;
    let dest: PathBuf = out.map(Path::to_path_buf).unwrap_or_else(|| dir.join("export"));
    std::fs::create_dir_all(&dest)
        .map_err(|e| Failure::Io(format!("creating {}: {e}", dest.display())))?;
    artifacts::write_text(&dest.join(format!("{field}.csv")), &artifacts::field_csv(&values))?;
    artifacts::write_text(
        &dest.join(format!("{field}.vtk")),
        &artifacts::vtk_text(&mesh, field, Some(&values))?,
    )?;
    Ok(())
}

fn load_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Io(format!("reading {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))
}

/// Weighted L¹ (volume for cell fields, lumped vertex volume for nodal
/// fields) and plain L∞ of the difference.
fn field_diff(mesh: &SimplicialManifold, a: &[f64], b: &[f64]) -> (f64, f64) {
    let share = (mesh.manifold_dim() + 1) as f64;
    let weight = |i: usize| -> f64 {
        if a.len() == mesh.num_cells() {
            mesh.volume(i)
        } else if a.len() == mesh.num_vertices() {
            mesh.cells_of_vertex(i).iter().map(|&q| mesh.volume(q as usize)).sum::<f64>() / share
        } else {
            1.0
        }
    };
    let mut l1 = 0.0;
    let mut wsum = 0.0;
    let mut linf = 0.0f64;
    for i in 0..a.len() {
        let d = (a[i] - b[i]).abs();
        let w = weight(i);
        l1 += w * d;
        wsum += w;
        linf = linf.max(d);
    }
    (l1 / wsum.max(f64::MIN_POSITIVE), linf)
}

pub fn cmd_compare(a: &Path, b: &Path) -> Result<()> {
    let cells_a = std::fs::read(a.join("mesh_cells.csv"))
        .map_err(|e| Failure::Io(format!("reading {}: {e}", a.display())))?;
    let cells_b = std::fs::read(b.join("mesh_cells.csv"))
        .map_err(|e| Failure::Io(format!("reading {}: {e}", b.display())))?;
    if cells_a != cells_b {
        return Err(Failure::Validation(format!(
            "mesh topology differs between {} and {}",
            a.display(),
            b.display()
        )));
    }
    let mesh = artifacts::read_mesh(a, 0.0)?;

    let rec_a = load_json(&artifacts::record_path(a))?;
    let rec_b = load_json(&artifacts::record_path(b))?;
    let lambda = match (rec_a["lambda_bar"].as_f64(), rec_b["lambda_bar"].as_f64()) {
        (Some(la), Some(lb)) => json!({"a": la, "b": lb, "delta": lb - la}),
        _ => Value::Null,
    };

    let cert_a = load_json(&a.join("certificate.json")).unwrap_or(Value::Null);
    let cert_b = load_json(&b.join("certificate.json")).unwrap_or(Value::Null);
    let mut residuals = serde_json::Map::new();
    for key in ["norm_dev", "conf_dev", "density_dev", "energy_gap"] {
        let ra = cert_a["certificate"]["residuals"][key].as_f64();
        let rb = cert_b["certificate"]["residuals"][key].as_f64();
        if let (Some(ra), Some(rb)) = (ra, rb) {
            residuals.insert(key.to_string(), json!({"a": ra, "b": rb, "delta": rb - ra}));
        }
    }

    let names_a = artifacts::list_fields(a)?;
    let names_b = artifacts::list_fields(b)?;
    let mut fields = serde_json::Map::new();
    for name in names_a.iter().filter(|n| names_b.contains(n)) {
        let fa = artifacts::read_field_csv(&a.join("fields").join(format!("{name}.csv")))?;
        let fb = artifacts::read_field_csv(&b.join("fields").join(format!("{name}.csv")))?;
        if fa.len() != fb.len() {
            return Err(Failure::Validation(format!(
                "field {name} has {} values in one record and {} in the other",
                fa.len(),
                fb.len()
            )));
        }
        let (l1, linf) = field_diff(&mesh, &fa, &fb);
        fields.insert(name.clone(), json!({"l1": l1, "linf": linf}));
    }

    let report = json!({
        "lambda_bar": lambda,
        "residuals": Value::Object(residuals),
        "fields": Value::Object(fields),
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&report).map_err(|e| Failure::Io(e.to_string()))?
    );
    Ok(())
}
