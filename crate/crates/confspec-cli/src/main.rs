//! confspec — configuration-driven runs of the density-pair spectral
//! toolkit: mesh building, eigenvalue ascent, harmonic replacement,
//! certification, and plot-ready exports.

mod artifacts;
mod config;
mod run;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Mode, RunConfig};

/// CLI failure with a stable exit code: 2 validation, 3 solver, 4 I/O.
#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Solver(String),
    Io(String),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Validation(m) | Failure::Solver(m) | Failure::Io(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for Failure {}

impl Failure {
    pub fn classify(&self) -> (u8, &'static str) {
        match self {
            Failure::Validation(_) => (2, "validation"),
            Failure::Solver(_) => (3, "solver"),
            Failure::Io(_) => (4, "io"),
        }
    }
}

impl From<confspec::Error> for Failure {
    fn from(err: confspec::Error) -> Self {
        use confspec::Error::*;
        match &err {
            SolverFailure { .. } => Failure::Solver(err.to_string()),
            Io(_) => Failure::Io(err.to_string()),
            DegenerateMesh(_) | EmptyBall { .. } | DegenerateDensity(_)
            | IndexOutOfRange { .. } | InvalidInput(_) | Parse(_) => {
                Failure::Validation(err.to_string())
            }
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(err: std::io::Error) -> Self {
        Failure::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Failure>;

#[derive(Parser)]
#[command(
    name = "confspec",
    version,
    about = "Normalized-eigenvalue maximization over density pairs on closed simplicial manifolds"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the configured mesh, write its CSVs and a VTK preview, print stats.
    Mesh(CommonArgs),
    /// Execute the configured mode (maximize | nu | harmonic | certify).
    Run(CommonArgs),
    /// Certify the configured state, regardless of the configured mode.
    Certify(CommonArgs),
    /// Re-emit a stored field of a run directory as CSV + VTK.
    Export {
        /// Run directory holding mesh CSVs and fields/.
        dir: PathBuf,
        /// Field name — a fields/<name>.csv stem.
        field: String,
        /// Destination directory (defaults to <dir>/export).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Diff two run directories with the same mesh topology.
    Compare { a: PathBuf, b: PathBuf },
}

#[derive(Args)]
struct CommonArgs {
    /// Path to a flat `key = value` configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed (overrides the config's `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, 0 = auto; falls back to CONFSPEC_THREADS.
    #[arg(long)]
    threads: Option<usize>,
}

fn load(args: &CommonArgs) -> Result<RunConfig> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Failure::Io(format!("reading {}: {e}", args.config.display())))?;
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out = Some(out.clone());
    }
    cfg.threads = args
        .threads
        .or_else(|| std::env::var("CONFSPEC_THREADS").ok().and_then(|v| v.parse().ok()))
        .unwrap_or(cfg.threads);
    if cfg.threads > 0 {
        // Only the first global-pool build wins; later calls are no-ops.
        rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global().ok();
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Mesh(args) => run::cmd_mesh(&load(&args)?),
        Cmd::Run(args) => run::cmd_run(&load(&args)?, None),
        Cmd::Certify(args) => run::cmd_run(&load(&args)?, Some(Mode::Certify)),
        Cmd::Export { dir, field, out } => run::cmd_export(&dir, &field, out.as_deref()),
        Cmd::Compare { a, b } => run::cmd_compare(&a, &b),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, kind) = err.classify();
            let obj = serde_json::json!({
                "error": { "code": code, "kind": kind, "message": err.to_string() }
            });
            eprintln!("{obj}");
            ExitCode::from(code)
        }
    }
}
