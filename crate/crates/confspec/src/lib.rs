//! Numerical toolkit for maximizing normalized Laplace eigenvalues over
//! pairs of conformal densities on discretized closed manifolds.
//!
//! The pipeline: build or import a closed simplicial 2- or 3-manifold
//! (`geometry`), assemble weighted stiffness/mass forms and solve the
//! generalized eigenproblem (`spectrum`), run subgradient ascent on the
//! normalized eigenvalue over the density pair (`maximize`), extract and
//! test sphere-valued eigenfunction maps (`nharmonic`), and produce
//! post-hoc criticality and concentration certificates (`certify`).

pub mod certify;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod maximize;
pub mod nharmonic;
pub mod spectrum;

pub use error::{Error, Result};

use std::path::Path;

/// Writes a file atomically: the content lands in a sibling temp file
/// first and is renamed into place, so readers never observe a partial
/// write.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("bad output path {}", path.display())))?;
    let mut tmp = dir.join(file_name);
    tmp.set_extension(format!(
        "{}tmp{}",
        tmp.extension().map(|e| format!("{}.", e.to_string_lossy())).unwrap_or_default(),
        std::process::id()
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
