//! Flat `key = value` run configuration: parsing, validation, and the
//! canonical echo that a run writes next to its artifacts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::{Failure, Result};

/// Multiplicity grouping is a build constant of the eigensolver, not a
/// knob; the config accepts the key only at this exact value.
const FIXED_MULT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum MeshSpec {
    Icosphere { subdivisions: usize },
    FlatTorus { resolution: usize, periods: Vec<f64> },
    Sphere3 { refinement: usize },
    Import { path: PathBuf, kappa_g: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Maximize,
    Nu,
    Harmonic,
    Certify,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Maximize => "maximize",
            Mode::Nu => "nu",
            Mode::Harmonic => "harmonic",
            Mode::Certify => "certify",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    Uniform,
    Perturbed,
    Import,
}

impl InitKind {
    fn name(self) -> &'static str {
        match self {
            InitKind::Uniform => "uniform",
            InitKind::Perturbed => "perturbed",
            InitKind::Import => "import",
        }
    }
}

#[derive(Debug, Clone)]
pub struct InitSpec {
    pub kind: InitKind,
    /// Relative amplitude of the multiplicative cell perturbation.
    pub perturb: f64,
    /// Directory holding alpha.csv / beta.csv when kind = import.
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct SolverSettings {
    pub delta_stop: f64,
    pub max_iters: usize,
    pub eigen_tol: f64,
    pub h0: f64,
    pub budget: usize,
    pub max_backtracks: usize,
    pub smooth_directions: bool,
    /// Post-convergence level-set smoothing passes over the densities.
    pub polish: usize,
}

#[derive(Debug, Clone)]
pub struct HarmonicSettings {
    pub p: usize,
    /// None picks the volume-weighted mean of B over the initial map.
    pub tau0: Option<f64>,
    pub halvings: usize,
    pub ball_center: usize,
    pub ball_radius: Option<f64>,
    pub tol: f64,
    pub max_iters: usize,
    pub perturb: f64,
    pub eps0: f64,
}

#[derive(Debug, Clone)]
pub struct CertifySettings {
    pub kappa0: f64,
    pub radii: Vec<f64>,
    pub subsample: usize,
    pub samples: usize,
    /// Relative eigenvalue gap under which neighbours of λ_k join the
    /// certified multiplet. Ascent stops split the group wider than the
    /// eigensolver's clustering, so this is coarser by design.
    pub group_tol: f64,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mesh: MeshSpec,
    pub mode: Mode,
    pub k: usize,
    pub init: InitSpec,
    pub solver: SolverSettings,
    pub harmonic: HarmonicSettings,
    pub certify: CertifySettings,
    pub seed: u64,
    pub threads: usize,
    pub out: Option<PathBuf>,
}

/// Key store that remembers which keys were consumed, so anything left
/// over can be reported as unknown in one validation error.
struct Fields {
    map: BTreeMap<String, String>,
    used: BTreeSet<String>,
}

impl Fields {
    fn raw(&mut self, key: &str) -> Option<String> {
        let hit = self.map.get(key).cloned();
        if hit.is_some() {
            self.used.insert(key.to_string());
        }
        hit
    }

    fn parse<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|_| {
                Failure::Validation(format!("config key {key}: cannot parse {v:?}"))
            }),
        }
    }

    fn parse_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    fn unknown(&self) -> Vec<String> {
        self.map.keys().filter(|k| !self.used.contains(*k)).cloned().collect()
    }
}

fn positive(value: f64, key: &str) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(Failure::Validation(format!("config key {key} must be positive, got {value}")))
    }
}

fn parse_list(raw: &str, key: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Failure::Validation(format!("config key {key}: bad entry {s:?}")))
        })
        .collect()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Failure::Validation(format!(
                    "config line {}: expected key = value, got {raw:?}",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            if map.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Failure::Validation(format!("duplicate config key {key}")));
            }
        }
        Self::from_map(map)
    }

    fn from_map(map: BTreeMap<String, String>) -> Result<Self> {
        let mut f = Fields { map, used: BTreeSet::new() };

        let mesh = match f.raw("mesh.builder").as_deref() {
            None => return Err(Failure::Validation("missing config key mesh.builder".into())),
            Some("icosphere") => MeshSpec::Icosphere {
                subdivisions: f.parse_or("mesh.subdivisions", 3usize)?,
            },
            Some("flat_torus") => {
                let resolution = f.parse_or("mesh.resolution", 16usize)?;
                let periods = match f.raw("mesh.periods") {
                    None => vec![1.0, 1.0],
                    Some(raw) => parse_list(&raw, "mesh.periods")?,
                };
                if periods.len() != 2 && periods.len() != 3 {
                    return Err(Failure::Validation(format!(
                        "mesh.periods needs 2 or 3 entries, got {}",
                        periods.len()
                    )));
                }
                for &p in &periods {
                    positive(p, "mesh.periods")?;
                }
                MeshSpec::FlatTorus { resolution, periods }
            }
            Some("sphere3") => {
                MeshSpec::Sphere3 { refinement: f.parse_or("mesh.refinement", 2usize)? }
            }
            Some("import") => {
                let path = f.raw("mesh.path").ok_or_else(|| {
                    Failure::Validation("mesh.builder = import needs mesh.path".into())
                })?;
                MeshSpec::Import {
                    path: PathBuf::from(path),
                    kappa_g: f.parse_or("mesh.kappa_g", 0.0f64)?,
                }
            }
            Some(other) => {
                return Err(Failure::Validation(format!(
                    "unknown mesh.builder {other:?} (expected icosphere, flat_torus, sphere3, import)"
                )));
            }
        };

        let mode = match f.raw("problem.mode").as_deref() {
            None => return Err(Failure::Validation("missing config key problem.mode".into())),
            Some("maximize") => Mode::Maximize,
            Some("nu") => Mode::Nu,
            Some("harmonic") => Mode::Harmonic,
            Some("certify") => Mode::Certify,
            Some(other) => {
                return Err(Failure::Validation(format!(
                    "unknown problem.mode {other:?} (expected maximize, nu, harmonic, certify)"
                )));
            }
        };

        let k = f.parse_or("problem.k", 1usize)?;
        if k < 1 {
            return Err(Failure::Validation(format!("problem.k must satisfy k ≥ 1, got {k}")));
        }

        let init_kind = match f.raw("init.kind").as_deref() {
            None | Some("perturbed") => InitKind::Perturbed,
            Some("uniform") => InitKind::Uniform,
            Some("import") => InitKind::Import,
            Some(other) => {
                return Err(Failure::Validation(format!(
                    "unknown init.kind {other:?} (expected uniform, perturbed, import)"
                )));
            }
        };
        let init_perturb = f.parse_or("init.perturb", 0.2f64)?;
        if !(0.0..1.0).contains(&init_perturb) {
            return Err(Failure::Validation(format!(
                "init.perturb must lie in [0, 1), got {init_perturb}"
            )));
        }
        let init = InitSpec {
            kind: init_kind,
            perturb: init_perturb,
            path: f.raw("init.path").map(PathBuf::from),
        };
        if init.kind == InitKind::Import && init.path.is_none() {
            return Err(Failure::Validation("init.kind = import needs init.path".into()));
        }

        let solver = SolverSettings {
            delta_stop: positive(f.parse_or("solver.delta_stop", 1e-4)?, "solver.delta_stop")?,
            max_iters: f.parse_or("solver.max_iters", 200usize)?,
            eigen_tol: positive(f.parse_or("solver.eigen_tol", 1e-10)?, "solver.eigen_tol")?,
            h0: positive(f.parse_or("solver.h0", 0.5)?, "solver.h0")?,
            budget: f.parse_or("solver.budget", 200usize)?,
            max_backtracks: f.parse_or("solver.max_backtracks", 30usize)?,
            smooth_directions: f.parse_or("solver.smooth_directions", false)?,
            polish: f.parse_or("solver.polish", 0usize)?,
        };
        if let Some(mt) = f.parse::<f64>("solver.mult_tol")? {
            if (mt - FIXED_MULT_TOL).abs() > f64::EPSILON {
                return Err(Failure::Validation(format!(
                    "solver.mult_tol is fixed at {FIXED_MULT_TOL} in this build, got {mt}"
                )));
            }
        }

        let harmonic = HarmonicSettings {
            p: f.parse_or("harmonic.p", 2usize)?,
            tau0: match f.parse::<f64>("harmonic.tau0")? {
                Some(t) => Some(positive(t, "harmonic.tau0")?),
                None => None,
            },
            halvings: f.parse_or("harmonic.halvings", 12usize)?,
            ball_center: f.parse_or("harmonic.ball_center", 0usize)?,
            ball_radius: match f.parse::<f64>("harmonic.ball_radius")? {
                Some(r) => Some(positive(r, "harmonic.ball_radius")?),
                None => None,
            },
            tol: positive(f.parse_or("harmonic.tol", 1e-8)?, "harmonic.tol")?,
            max_iters: f.parse_or("harmonic.max_iters", 4000usize)?,
            perturb: f.parse_or("harmonic.perturb", 0.5f64)?,
            eps0: positive(f.parse_or("harmonic.eps0", 0.5)?, "harmonic.eps0")?,
        };
        if harmonic.p < 1 {
            return Err(Failure::Validation("harmonic.p must be at least 1".into()));
        }

        // Small radii: the concentration claim holds below some r₀, and
        // balls comparable to the diameter flag even at a maximizer
        // (their Dirichlet eigenvalue is small for geometric reasons).
        let radii = match f.raw("certify.radii") {
            None => vec![0.1, 0.2, 0.3],
            Some(raw) => parse_list(&raw, "certify.radii")?,
        };
        if radii.is_empty() {
            return Err(Failure::Validation("certify.radii must list at least one radius".into()));
        }
        for &r in &radii {
            positive(r, "certify.radii")?;
        }
        let certify = CertifySettings {
            kappa0: f.parse_or("certify.kappa0", 1.2f64)?,
            radii,
            subsample: f.parse_or("certify.subsample", 48usize)?,
            samples: f.parse_or("certify.samples", 6usize)?,
            group_tol: f.parse_or("certify.group_tol", 0.05f64)?,
        };
        if certify.kappa0 <= 1.0 {
            return Err(Failure::Validation(format!(
                "certify.kappa0 must exceed 1, got {}",
                certify.kappa0
            )));
        }
        positive(certify.group_tol, "certify.group_tol")?;

        let seed = f.parse_or("seed", 0u64)?;
        let threads = f.parse_or("threads", 0usize)?;
        let out = f.raw("out").map(PathBuf::from);

        let unknown = f.unknown();
        if !unknown.is_empty() {
            return Err(Failure::Validation(format!(
                "unknown config keys: {}",
                unknown.join(", ")
            )));
        }

        Ok(Self { mesh, mode, k, init, solver, harmonic, certify, seed, threads, out })
    }

    /// Canonical resolved form, sorted by key: what a run directory
    /// records as config.echo. `mode` is the mode actually executed
    /// (the certify verb overrides the configured one).
    pub fn echo(&self, mode: Mode) -> String {
        let mut pairs: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| pairs.push((k.to_string(), v));

        match &self.mesh {
            MeshSpec::Icosphere { subdivisions } => {
                put("mesh.builder", "icosphere".into());
                put("mesh.subdivisions", subdivisions.to_string());
            }
            MeshSpec::FlatTorus { resolution, periods } => {
                put("mesh.builder", "flat_torus".into());
                put("mesh.resolution", resolution.to_string());
                let list: Vec<String> = periods.iter().map(|p| p.to_string()).collect();
                put("mesh.periods", list.join(","));
            }
            MeshSpec::Sphere3 { refinement } => {
                put("mesh.builder", "sphere3".into());
                put("mesh.refinement", refinement.to_string());
            }
            MeshSpec::Import { path, kappa_g } => {
                put("mesh.builder", "import".into());
                put("mesh.path", path.display().to_string());
                put("mesh.kappa_g", kappa_g.to_string());
            }
        }

        put("problem.mode", mode.name().into());
        put("problem.k", self.k.to_string());

        put("init.kind", self.init.kind.name().into());
        put("init.perturb", self.init.perturb.to_string());
        if let Some(p) = &self.init.path {
            put("init.path", p.display().to_string());
        }

        put("solver.delta_stop", self.solver.delta_stop.to_string());
        put("solver.max_iters", self.solver.max_iters.to_string());
        put("solver.eigen_tol", self.solver.eigen_tol.to_string());
        put("solver.h0", self.solver.h0.to_string());
        put("solver.budget", self.solver.budget.to_string());
        put("solver.max_backtracks", self.solver.max_backtracks.to_string());
        put("solver.smooth_directions", self.solver.smooth_directions.to_string());
        put("solver.polish", self.solver.polish.to_string());
        put("solver.mult_tol", FIXED_MULT_TOL.to_string());

        put("harmonic.p", self.harmonic.p.to_string());
        if let Some(t) = self.harmonic.tau0 {
            put("harmonic.tau0", t.to_string());
        }
        put("harmonic.halvings", self.harmonic.halvings.to_string());
        put("harmonic.ball_center", self.harmonic.ball_center.to_string());
        if let Some(r) = self.harmonic.ball_radius {
            put("harmonic.ball_radius", r.to_string());
        }
        put("harmonic.tol", self.harmonic.tol.to_string());
        put("harmonic.max_iters", self.harmonic.max_iters.to_string());
        put("harmonic.perturb", self.harmonic.perturb.to_string());
        put("harmonic.eps0", self.harmonic.eps0.to_string());

        put("certify.kappa0", self.certify.kappa0.to_string());
        put("certify.group_tol", self.certify.group_tol.to_string());
        let list: Vec<String> = self.certify.radii.iter().map(|r| r.to_string()).collect();
        put("certify.radii", list.join(","));
        put("certify.subsample", self.certify.subsample.to_string());
        put("certify.samples", self.certify.samples.to_string());

        // The run directory is where the echo itself lives; recording
        // the path would break byte-comparison of sibling runs.
        put("seed", self.seed.to_string());
        put("threads", self.threads.to_string());

        pairs.sort();
        let mut s = String::new();
        for (k, v) in pairs {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = RunConfig::parse("mesh.builder = icosphere\nproblem.mode = maximize\n").unwrap();
        assert_eq!(cfg.k, 1);
        assert_eq!(cfg.mesh, MeshSpec::Icosphere { subdivisions: 3 });
        assert_eq!(cfg.solver.max_iters, 200);
        assert_eq!(cfg.certify.radii, vec![0.1, 0.2, 0.3]);
        assert_eq!(cfg.seed, 0);
    }

    #[test]
    fn k_zero_is_rejected_with_the_bound_in_the_message() {
        let err = RunConfig::parse(
            "mesh.builder = icosphere\nproblem.mode = maximize\nproblem.k = 0\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("k ≥ 1"), "{err}");
    }

    #[test]
    fn unknown_keys_are_listed() {
        let err = RunConfig::parse(
            "mesh.builder = icosphere\nproblem.mode = nu\nzz.b = 1\naa.q = 2\n",
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("aa.q") && msg.contains("zz.b"), "{msg}");
    }

    #[test]
    fn mult_tol_only_accepts_the_build_constant() {
        let ok = "mesh.builder = icosphere\nproblem.mode = maximize\nsolver.mult_tol = 1e-6\n";
        assert!(RunConfig::parse(ok).is_ok());
        let bad = "mesh.builder = icosphere\nproblem.mode = maximize\nsolver.mult_tol = 1e-5\n";
        assert!(RunConfig::parse(bad).is_err());
    }

    #[test]
    fn echo_is_sorted_and_roundtrips() {
        let cfg = RunConfig::parse(
            "mesh.builder = flat_torus\nmesh.resolution = 12\nproblem.mode = certify\nseed = 7\n",
        )
        .unwrap();
        let echo = cfg.echo(Mode::Certify);
        let again = RunConfig::parse(&echo).unwrap();
        assert_eq!(again.echo(Mode::Certify), echo);
        let keys: Vec<&str> =
            echo.lines().map(|l| l.split_once(" = ").unwrap().0).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }
}
