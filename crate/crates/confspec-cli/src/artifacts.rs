//! Run-directory artifacts: CSV fields, legacy ASCII VTK exports, mesh
//! round-trips, and the JSON records. Every writer goes through the
//! library's atomic write so a killed run never leaves a torn file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use confspec::geometry::{MeshMetric, SimplicialManifold};
use serde::Serialize;

use crate::{Failure, Result};

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    confspec::write_atomic(path, text.as_bytes()).map_err(Failure::from)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Failure::Io(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

/// One JSON object per line; an empty slice yields an empty file.
pub fn jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut s = String::new();
    for item in items {
        s.push_str(
            &serde_json::to_string(item).map_err(|e| Failure::Io(format!("serializing: {e}")))?,
        );
        s.push('\n');
    }
    Ok(s)
}

/// `id,value` rows, 17 significant digits — enough for a lossless f64
/// round-trip.
pub fn field_csv(values: &[f64]) -> String {
    let mut s = String::with_capacity(values.len() * 28 + 16);
    s.push_str("id,value\n");
    for (i, v) in values.iter().enumerate() {
        let _ = writeln!(s, "{i},{v:.16e}");
    }
    s
}

pub fn read_field_csv(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Io(format!("reading {}: {e}", path.display())))?;
    let mut lines = text.lines();
    if lines.next() != Some("id,value") {
        return Err(Failure::Validation(format!("{}: expected header id,value", path.display())));
    }
    let mut out = Vec::new();
    for (row, line) in lines.enumerate() {
        let Some((id, value)) = line.split_once(',') else {
            return Err(Failure::Validation(format!("{}: bad row {line:?}", path.display())));
        };
        if id.parse::<usize>() != Ok(row) {
            return Err(Failure::Validation(format!(
                "{}: row {row} has id {id}, expected consecutive ids",
                path.display()
            )));
        }
        out.push(value.parse::<f64>().map_err(|_| {
            Failure::Validation(format!("{}: bad value {value:?} in row {row}", path.display()))
        })?);
    }
    Ok(out)
}

fn coords_header(dim: usize) -> String {
    let names: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    format!("id,{}", names.join(","))
}

pub fn mesh_vertices_csv(mesh: &SimplicialManifold) -> String {
    let dim = mesh.embed_dim();
    let mut s = String::new();
    let _ = writeln!(s, "{}", coords_header(dim));
    for v in 0..mesh.num_vertices() {
        let _ = write!(s, "{v}");
        for x in mesh.vertex(v) {
            let _ = write!(s, ",{x:.16e}");
        }
        s.push('\n');
    }
    s
}

pub fn mesh_cells_csv(mesh: &SimplicialManifold) -> String {
    let stride = mesh.manifold_dim() + 1;
    let names: Vec<String> = (0..stride).map(|i| format!("v{i}")).collect();
    let mut s = format!("id,{}\n", names.join(","));
    for c in 0..mesh.num_cells() {
        let _ = write!(s, "{c}");
        for v in mesh.cell(c) {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

/// Metric sidecar: coordinates alone cannot tell a periodic box from a
/// plain embedding, and seam-crossing cells need min-image unwrapping
/// to get their volumes right.
#[derive(Serialize, serde::Deserialize)]
struct MeshMeta {
    metric: String,
    #[serde(default)]
    periods: Vec<f64>,
    kappa_g: f64,
}

pub fn write_mesh(dir: &Path, mesh: &SimplicialManifold) -> Result<()> {
    write_text(&dir.join("mesh_vertices.csv"), &mesh_vertices_csv(mesh))?;
    write_text(&dir.join("mesh_cells.csv"), &mesh_cells_csv(mesh))?;
    let (metric, periods) = match mesh.metric() {
        MeshMetric::UnitSphere => ("unit_sphere", Vec::new()),
        MeshMetric::PeriodicBox { periods } => ("periodic", periods.clone()),
        MeshMetric::Graph => ("graph", Vec::new()),
    };
    write_json(
        &dir.join("mesh_meta.json"),
        &MeshMeta { metric: metric.into(), periods, kappa_g: mesh.kappa_g() },
    )
}

/// Rebuilds a mesh from the CSVs a run writes. The sidecar restores the
/// metric and curvature bound; without one (externally produced
/// meshes), distances fall back to the graph proxy and `kappa_g` to the
/// caller's value.
pub fn read_mesh(dir: &Path, kappa_g: f64) -> Result<SimplicialManifold> {
    let vpath = dir.join("mesh_vertices.csv");
    let cpath = dir.join("mesh_cells.csv");
    let vtext = std::fs::read_to_string(&vpath)
        .map_err(|e| Failure::Io(format!("reading {}: {e}", vpath.display())))?;
    let ctext = std::fs::read_to_string(&cpath)
        .map_err(|e| Failure::Io(format!("reading {}: {e}", cpath.display())))?;

    let mut vlines = vtext.lines();
    let vheader = vlines
        .next()
        .ok_or_else(|| Failure::Validation(format!("{}: empty", vpath.display())))?;
    let dim = vheader.split(',').count() - 1;
    let mut vertices = Vec::new();
    for (row, line) in vlines.enumerate() {
        let mut parts = line.split(',');
        let id = parts.next().unwrap_or_default();
        if id.parse::<usize>() != Ok(row) {
            return Err(Failure::Validation(format!(
                "{}: row {row} has id {id:?}",
                vpath.display()
            )));
        }
        let mut got = 0;
        for part in parts {
            vertices.push(part.parse::<f64>().map_err(|_| {
                Failure::Validation(format!("{}: bad coordinate {part:?}", vpath.display()))
            })?);
            got += 1;
        }
        if got != dim {
            return Err(Failure::Validation(format!(
                "{}: row {row} has {got} coordinates, header says {dim}",
                vpath.display()
            )));
        }
    }

    let mut clines = ctext.lines();
    let cheader = clines
        .next()
        .ok_or_else(|| Failure::Validation(format!("{}: empty", cpath.display())))?;
    let stride = cheader.split(',').count() - 1;
    if stride < 3 || stride > 4 {
        return Err(Failure::Validation(format!(
            "{}: cells have {stride} vertices, expected 3 or 4",
            cpath.display()
        )));
    }
    let mut cells = Vec::new();
    for (row, line) in clines.enumerate() {
        let mut parts = line.split(',');
        let id = parts.next().unwrap_or_default();
        if id.parse::<usize>() != Ok(row) {
            return Err(Failure::Validation(format!(
                "{}: row {row} has id {id:?}",
                cpath.display()
            )));
        }
        for part in parts {
            cells.push(part.parse::<u32>().map_err(|_| {
                Failure::Validation(format!("{}: bad vertex index {part:?}", cpath.display()))
            })?);
        }
    }

    let (metric, kappa) = match std::fs::read_to_string(dir.join("mesh_meta.json")) {
        Ok(text) => {
            let meta: MeshMeta = serde_json::from_str(&text).map_err(|e| {
                Failure::Validation(format!("{}: {e}", dir.join("mesh_meta.json").display()))
            })?;
            let metric = match meta.metric.as_str() {
                "unit_sphere" => MeshMetric::UnitSphere,
                "periodic" => MeshMetric::PeriodicBox { periods: meta.periods },
                _ => MeshMetric::Graph,
            };
            (metric, meta.kappa_g)
        }
        Err(_) => (MeshMetric::Graph, kappa_g),
    };
    SimplicialManifold::from_cells(stride - 1, dim, vertices, cells, metric, kappa)
        .map_err(Failure::from)
}

/// Legacy ASCII VTK unstructured grid. Vertex coordinates are padded to
/// three components (flat tori) or truncated to the first three (the
/// 3-sphere in R^4 — viewers get the stereographic-free raw slice).
/// Scalars attach by length: one value per cell or one per vertex.
pub fn vtk_text(
    mesh: &SimplicialManifold,
    name: &str,
    values: Option<&[f64]>,
) -> Result<String> {
    let nv = mesh.num_vertices();
    let nc = mesh.num_cells();
    let stride = mesh.manifold_dim() + 1;
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\n");
    let _ = writeln!(s, "confspec {name}");
    s.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {nv} double");
    for v in 0..nv {
        let p = mesh.vertex(v);
        let coord = |i: usize| p.get(i).copied().unwrap_or(0.0);
        let _ = writeln!(s, "{:.16e} {:.16e} {:.16e}", coord(0), coord(1), coord(2));
    }
    let _ = writeln!(s, "CELLS {nc} {}", nc * (stride + 1));
    for c in 0..nc {
        let _ = write!(s, "{stride}");
        for v in mesh.cell(c) {
            let _ = write!(s, " {v}");
        }
        s.push('\n');
    }
    let _ = writeln!(s, "CELL_TYPES {nc}");
    let tag = if stride == 3 { 5 } else { 10 };
    for _ in 0..nc {
        let _ = writeln!(s, "{tag}");
    }
    if let Some(vals) = values {
        if vals.len() == nc {
            let _ = writeln!(s, "CELL_DATA {nc}");
        } else if vals.len() == nv {
            let _ = writeln!(s, "POINT_DATA {nv}");
        } else {
            return Err(Failure::Validation(format!(
                "field {name} has {} values; mesh has {nv} vertices and {nc} cells",
                vals.len()
            )));
        }
        let _ = writeln!(s, "SCALARS {name} double 1");
        s.push_str("LOOKUP_TABLE default\n");
        for v in vals {
            let _ = writeln!(s, "{v:.16e}");
        }
    }
    Ok(s)
}

/// Writes fields/<name>.csv and fields/<name>.vtk.
pub fn write_field(
    out: &Path,
    mesh: &SimplicialManifold,
    name: &str,
    values: &[f64],
) -> Result<()> {
    let dir = out.join("fields");
    write_text(&dir.join(format!("{name}.csv")), &field_csv(values))?;
    write_text(&dir.join(format!("{name}.vtk")), &vtk_text(mesh, name, Some(values))?)
}

/// Sorted stems of fields/*.csv — what `export` can re-emit.
pub fn list_fields(dir: &Path) -> Result<Vec<String>> {
    let fdir = dir.join("fields");
    let mut names = Vec::new();
    let entries = std::fs::read_dir(&fdir)
        .map_err(|e| Failure::Io(format!("reading {}: {e}", fdir.display())))?;
    for entry in entries {
        let entry = entry.map_err(|e| Failure::Io(e.to_string()))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some("csv") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                names.push(stem.to_string());
            }
        }
    }
    names.sort();
    Ok(names)
}

#[derive(Serialize)]
pub struct MeshSummary {
    pub vertices: usize,
    pub cells: usize,
    pub manifold_dim: usize,
    pub embed_dim: usize,
    pub volume: f64,
    pub min_edge: f64,
    pub max_edge: f64,
}

impl MeshSummary {
    pub fn of(mesh: &SimplicialManifold) -> Self {
        Self {
            vertices: mesh.num_vertices(),
            cells: mesh.num_cells(),
            manifold_dim: mesh.manifold_dim(),
            embed_dim: mesh.embed_dim(),
            volume: mesh.total_volume(),
            min_edge: mesh.min_edge_len(),
            max_edge: mesh.max_edge_len(),
        }
    }
}

/// Completion marker of a run directory; written last, and the only
/// artifact carrying wall-clock state, so determinism checks can simply
/// skip it.
#[derive(Serialize)]
pub struct RunRecord {
    pub version: &'static str,
    pub mode: &'static str,
    pub k: usize,
    pub seed: u64,
    pub mesh: MeshSummary,
    pub iterations: usize,
    pub converged: bool,
    pub stalled: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_bar: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_raw: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub energy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
    pub wall_clock_secs: f64,
    pub finished_unix_ms: u128,
}

impl RunRecord {
    pub fn finish(mut self, started: std::time::Instant) -> Self {
        self.wall_clock_secs = started.elapsed().as_secs_f64();
        self.finished_unix_ms = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0);
        self
    }
}

pub fn record_path(dir: &Path) -> PathBuf {
    dir.join("record.json")
}

#[cfg(test)]
mod tests {
    use super::*;
    use confspec::geometry::build_flat_torus;

    #[test]
    fn field_csv_roundtrips_exact_bits() {
        let vals = vec![1.0 / 3.0, -2.5e-17, std::f64::consts::PI, 0.0];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        write_text(&path, &field_csv(&vals)).unwrap();
        let back = read_field_csv(&path).unwrap();
        assert_eq!(
            vals.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            back.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn mesh_roundtrip_preserves_geometry() {
        let mesh = build_flat_torus(6, &[1.0, 2.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_mesh(dir.path(), &mesh).unwrap();
        let back = read_mesh(dir.path(), 0.0).unwrap();
        assert_eq!(back.num_vertices(), mesh.num_vertices());
        assert_eq!(back.num_cells(), mesh.num_cells());
        assert!((back.total_volume() - mesh.total_volume()).abs() < 1e-14);
        for c in [0usize, 17, 41] {
            assert_eq!(back.cell(c), mesh.cell(c));
        }
    }

    #[test]
    fn vtk_length_dispatch() {
        let mesh = build_flat_torus(4, &[1.0, 1.0]).unwrap();
        let per_cell = vec![1.0; mesh.num_cells()];
        let per_vertex = vec![2.0; mesh.num_vertices()];
        let c = vtk_text(&mesh, "q", Some(&per_cell)).unwrap();
        assert!(c.contains(&format!("CELL_DATA {}", mesh.num_cells())));
        let v = vtk_text(&mesh, "q", Some(&per_vertex)).unwrap();
        assert!(v.contains(&format!("POINT_DATA {}", mesh.num_vertices())));
        assert!(vtk_text(&mesh, "q", Some(&[1.0])).is_err());
    }
}
