//! Plain-text mesh exchange: a header `n V C`, one line per vertex, one
//! line per cell. Comment lines start with `#`; the exporter uses them
//! to carry the metric kind and curvature bound so round-trips are
//! lossless. Coordinates are written with 17 significant digits.

use super::{MeshMetric, SimplicialManifold};
use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

pub fn export_mesh(mesh: &SimplicialManifold, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "{} {} {}", mesh.manifold_dim(), mesh.num_vertices(), mesh.num_cells()).unwrap();
    writeln!(out, "# kappa {:.16e}", mesh.kappa_g()).unwrap();
    match mesh.metric() {
        MeshMetric::UnitSphere => writeln!(out, "# metric unit-sphere").unwrap(),
        MeshMetric::PeriodicBox { periods } => {
            let ps: Vec<String> = periods.iter().map(|p| format!("{p:.16e}")).collect();
            writeln!(out, "# metric periodic {}", ps.join(" ")).unwrap();
        }
        MeshMetric::Graph => writeln!(out, "# metric graph").unwrap(),
    }
    for v in 0..mesh.num_vertices() {
        let coords: Vec<String> = mesh.vertex(v).iter().map(|x| format!("{x:.16e}")).collect();
        writeln!(out, "{}", coords.join(" ")).unwrap();
    }
    let stride = mesh.manifold_dim() + 1;
    for c in 0..mesh.num_cells() {
        let ids: Vec<String> = mesh.cell(c).iter().map(|v| v.to_string()).collect();
        debug_assert_eq!(ids.len(), stride);
        writeln!(out, "{}", ids.join(" ")).unwrap();
    }
    crate::write_atomic(path, out.as_bytes())
}

pub fn import_mesh(path: &Path) -> Result<SimplicialManifold> {
    let text = std::fs::read_to_string(path)?;
    let mut kappa = 0.0f64;
    let mut metric = MeshMetric::Graph;
    let mut data_lines = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let tokens: Vec<&str> = comment.split_whitespace().collect();
            match tokens.first() {
                Some(&"kappa") if tokens.len() == 2 => {
                    kappa = tokens[1]
                        .parse()
                        .map_err(|_| Error::Parse(format!("line {}: bad kappa", lineno + 1)))?;
                }
                Some(&"metric") if tokens.len() >= 2 => {
                    metric = match tokens[1] {
                        "unit-sphere" => MeshMetric::UnitSphere,
                        "graph" => MeshMetric::Graph,
                        "periodic" => {
                            let periods: Result<Vec<f64>> = tokens[2..]
                                .iter()
                                .map(|t| {
                                    t.parse().map_err(|_| {
                                        Error::Parse(format!("line {}: bad period", lineno + 1))
                                    })
                                })
                                .collect();
                            MeshMetric::PeriodicBox { periods: periods? }
                        }
                        other => {
                            return Err(Error::Parse(format!(
                                "line {}: unknown metric '{other}'",
                                lineno + 1
                            )))
                        }
                    };
                }
                _ => {} // free-form comment
            }
            continue;
        }
        data_lines.push((lineno + 1, line));
    }
    if data_lines.is_empty() {
        return Err(Error::Parse("empty mesh file".into()));
    }
    let header: Vec<&str> = data_lines[0].1.split_whitespace().collect();
    if header.len() != 3 {
        return Err(Error::Parse(format!(
            "line {}: header must be 'n V C'",
            data_lines[0].0
        )));
    }
    let n: usize = header[0].parse().map_err(|_| Error::Parse("bad n in header".into()))?;
    let nv: usize = header[1].parse().map_err(|_| Error::Parse("bad V in header".into()))?;
    let nc: usize = header[2].parse().map_err(|_| Error::Parse("bad C in header".into()))?;
    if data_lines.len() != 1 + nv + nc {
        return Err(Error::Parse(format!(
            "expected {} data lines, found {}",
            1 + nv + nc,
            data_lines.len()
        )));
    }
    let first_vertex: Vec<&str> = data_lines[1].1.split_whitespace().collect();
    let dim = first_vertex.len();
    let mut vertices = Vec::with_capacity(nv * dim);
    for &(lineno, line) in &data_lines[1..1 + nv] {
        let coords: Vec<&str> = line.split_whitespace().collect();
        if coords.len() != dim {
            return Err(Error::Parse(format!("line {lineno}: expected {dim} coordinates")));
        }
        for c in coords {
            vertices.push(
                c.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("line {lineno}: bad coordinate '{c}'")))?,
            );
        }
    }
    let stride = n + 1;
    let mut cells = Vec::with_capacity(nc * stride);
    for &(lineno, line) in &data_lines[1 + nv..] {
        let ids: Vec<&str> = line.split_whitespace().collect();
        if ids.len() != stride {
            return Err(Error::Parse(format!("line {lineno}: expected {stride} vertex ids")));
        }
        for id in ids {
            cells.push(
                id.parse::<u32>()
                    .map_err(|_| Error::Parse(format!("line {lineno}: bad vertex id '{id}'")))?,
            );
        }
    }
    SimplicialManifold::from_cells(n, dim, vertices, cells, metric, kappa)
}
