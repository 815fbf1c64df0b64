//! Discretized closed manifolds: simplicial complexes with per-cell
//! constant gradients, exact cell volumes, and geodesic-ball extraction.

mod builders;
mod io;

pub use builders::{build_flat_torus, build_icosphere, build_sphere3};
pub use io::{export_mesh, import_mesh};

use crate::error::{Error, Result};
use std::collections::BinaryHeap;
use std::collections::HashMap;

/// How vertex-to-vertex distances are measured. Exact closed forms are
/// used where the builder knows them; imported meshes fall back to
/// shortest paths on the edge graph augmented with two-ring chords.
#[derive(Debug, Clone, PartialEq)]
pub enum MeshMetric {
    /// All vertices on the unit sphere; great-circle arcs.
    UnitSphere,
    /// Flat box with periodic identification; minimum-image distances.
    PeriodicBox { periods: Vec<f64> },
    /// Generic embedded complex; graph shortest-path proxy.
    Graph,
}

/// A closed n-manifold (n = 2 or 3) triangulated by affine simplices
/// embedded in R^dim. Cell volumes and the per-cell constant gradient
/// operators of P1 nodal elements are precomputed at construction, so
/// weighted Dirichlet forms with per-cell constant densities integrate
/// exactly.
#[derive(Debug, Clone)]
pub struct SimplicialManifold {
    n: usize,
    dim: usize,
    vertices: Vec<f64>, // V * dim
    cells: Vec<u32>,    // C * (n + 1)
    volumes: Vec<f64>,
    gradients: Vec<f64>, // C * (n + 1) * dim: coefficient vector per corner
    vertex_cells_ptr: Vec<usize>,
    vertex_cells: Vec<u32>,
    edges: Vec<(u32, u32)>,
    min_edge: f64,
    max_edge: f64,
    kappa_g: f64,
    metric: MeshMetric,
}

impl SimplicialManifold {
    /// Builds a mesh from raw vertex coordinates (flattened, `dim` per
    /// vertex) and cell index lists (flattened, `n + 1` per cell).
    /// Validates closedness: every (n-1)-face must be shared by exactly
    /// two cells. `kappa_g` is a lower Ricci bound used by curvature
    /// -dependent checks (0 for flat tori, n-1 for unit spheres).
    pub fn from_cells(
        n: usize,
        dim: usize,
        vertices: Vec<f64>,
        cells: Vec<u32>,
        metric: MeshMetric,
        kappa_g: f64,
    ) -> Result<Self> {
        if n != 2 && n != 3 {
            return Err(Error::InvalidInput(format!("manifold dimension {n} not supported")));
        }
        if dim < n {
            return Err(Error::InvalidInput(format!(
                "embedding dimension {dim} below manifold dimension {n}"
            )));
        }
        if vertices.is_empty() || vertices.len() % dim != 0 {
            return Err(Error::DegenerateMesh("vertex array size mismatch".into()));
        }
        let stride = n + 1;
        if cells.is_empty() || cells.len() % stride != 0 {
            return Err(Error::DegenerateMesh("cell array size mismatch".into()));
        }
        let nv = vertices.len() / dim;
        let nc = cells.len() / stride;
        for &v in &cells {
            if v as usize >= nv {
                return Err(Error::DegenerateMesh(format!("cell references vertex {v} >= {nv}")));
            }
        }
        if let MeshMetric::PeriodicBox { periods } = &metric {
            if periods.len() != dim || periods.iter().any(|&p| !(p > 0.0)) {
                return Err(Error::InvalidInput("periodic metric needs one positive period per coordinate".into()));
            }
        }

        let mut mesh = Self {
            n,
            dim,
            vertices,
            cells,
            volumes: Vec::with_capacity(nc),
            gradients: vec![0.0; nc * stride * dim],
            vertex_cells_ptr: Vec::new(),
            vertex_cells: Vec::new(),
            edges: Vec::new(),
            min_edge: f64::INFINITY,
            max_edge: 0.0,
            kappa_g,
            metric,
        };
        mesh.check_closed()?;
        mesh.compute_cell_geometry()?;
        mesh.build_adjacency();
        Ok(mesh)
    }

    fn check_closed(&self) -> Result<()> {
        let stride = self.n + 1;
        let nc = self.num_cells();
        let mut face_count: HashMap<[u32; 3], u32> = HashMap::with_capacity(nc * stride);
        for c in 0..nc {
            let cell = &self.cells[c * stride..(c + 1) * stride];
            for skip in 0..stride {
                let mut face = [0u32; 3];
                let mut w = 0;
                for (i, &v) in cell.iter().enumerate() {
                    if i != skip {
                        face[w] = v;
                        w += 1;
                    }
                }
                face[..self.n].sort_unstable();
                *face_count.entry(face).or_insert(0) += 1;
            }
            let mut sorted = cell.to_vec();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != stride {
                return Err(Error::DegenerateMesh(format!("cell {c} repeats a vertex")));
            }
        }
        for (face, count) in &face_count {
            if *count != 2 {
                return Err(Error::DegenerateMesh(format!(
                    "face {:?} shared by {count} cells; mesh is not closed",
                    &face[..self.n]
                )));
            }
        }
        Ok(())
    }

    /// Local corner coordinates of a cell. For periodic meshes the
    /// corners are unwrapped around corner 0 by the minimum image rule,
    /// so cells crossing the fundamental-domain seam stay contiguous.
    pub fn cell_corners(&self, c: usize) -> Vec<f64> {
        let stride = self.n + 1;
        let cell = &self.cells[c * stride..(c + 1) * stride];
        let mut out = vec![0.0; stride * self.dim];
        let p0 = self.vertex(cell[0] as usize);
        out[..self.dim].copy_from_slice(p0);
        for j in 1..stride {
            let pj = self.vertex(cell[j] as usize);
            for k in 0..self.dim {
                let mut d = pj[k] - p0[k];
                if let MeshMetric::PeriodicBox { periods } = &self.metric {
                    let l = periods[k];
                    if d > 0.5 * l {
                        d -= l;
                    } else if d < -0.5 * l {
                        d += l;
                    }
                }
                out[j * self.dim + k] = p0[k] + d;
            }
        }
        out
    }

    fn compute_cell_geometry(&mut self) -> Result<()> {
        let n = self.n;
        let dim = self.dim;
        let stride = n + 1;
        let factorial = if n == 2 { 2.0 } else { 6.0 };
        for c in 0..self.num_cells() {
            let corners = self.cell_corners(c);
            // Edge matrix E (dim x n) relative to corner 0 and its Gram matrix.
            let mut e = vec![0.0; dim * n];
            for j in 0..n {
                for k in 0..dim {
                    e[k * n + j] = corners[(j + 1) * dim + k] - corners[k];
                }
            }
            let mut gram = [[0.0f64; 3]; 3];
            for a in 0..n {
                for b in 0..n {
                    let mut s = 0.0;
                    for k in 0..dim {
                        s += e[k * n + a] * e[k * n + b];
                    }
                    gram[a][b] = s;
                }
            }
            let (det, inv) = invert_small(&gram, n);
            if !(det > 0.0) || !det.is_finite() {
                return Err(Error::DegenerateMesh(format!("cell {c} has degenerate geometry")));
            }
            self.volumes.push(det.sqrt() / factorial);
            // Gradient coefficients: h_j = E * Gram^{-1} e_j for corners
            // 1..n, and corner 0 carries minus their sum, so constants are
            // annihilated exactly.
            let base = c * stride * dim;
            for j in 0..n {
                for k in 0..dim {
                    let mut s = 0.0;
                    for a in 0..n {
                        s += e[k * n + a] * inv[a][j];
                    }
                    self.gradients[base + (j + 1) * dim + k] = s;
                    self.gradients[base + k] -= s;
                }
            }
        }
        Ok(())
    }

    fn build_adjacency(&mut self) {
        let stride = self.n + 1;
        let nv = self.num_vertices();
        let nc = self.num_cells();
        let mut counts = vec![0usize; nv + 1];
        for &v in &self.cells {
            counts[v as usize + 1] += 1;
        }
        for i in 0..nv {
            counts[i + 1] += counts[i];
        }
        let mut slots = counts.clone();
        let mut adj = vec![0u32; self.cells.len()];
        for c in 0..nc {
            for &v in &self.cells[c * stride..(c + 1) * stride] {
                adj[slots[v as usize]] = c as u32;
                slots[v as usize] += 1;
            }
        }
        self.vertex_cells_ptr = counts;
        self.vertex_cells = adj;

        let mut edge_set: Vec<(u32, u32)> = Vec::with_capacity(nc * 3);
        for c in 0..nc {
            let cell = &self.cells[c * stride..(c + 1) * stride];
            for a in 0..stride {
                for b in (a + 1)..stride {
                    let (u, v) = if cell[a] < cell[b] { (cell[a], cell[b]) } else { (cell[b], cell[a]) };
                    edge_set.push((u, v));
                }
            }
        }
        edge_set.sort_unstable();
        edge_set.dedup();
        for &(u, v) in &edge_set {
            let len = self.point_distance(u as usize, v as usize);
            self.min_edge = self.min_edge.min(len);
            self.max_edge = self.max_edge.max(len);
        }
        self.edges = edge_set;
    }

    pub fn manifold_dim(&self) -> usize {
        self.n
    }

    pub fn embed_dim(&self) -> usize {
        self.dim
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len() / self.dim
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len() / (self.n + 1)
    }

    pub fn vertex(&self, v: usize) -> &[f64] {
        &self.vertices[v * self.dim..(v + 1) * self.dim]
    }

    pub fn cell(&self, c: usize) -> &[u32] {
        let stride = self.n + 1;
        &self.cells[c * stride..(c + 1) * stride]
    }

    pub fn volume(&self, c: usize) -> f64 {
        self.volumes[c]
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    pub fn total_volume(&self) -> f64 {
        self.volumes.iter().sum()
    }

    pub fn mean_cell_volume(&self) -> f64 {
        self.total_volume() / self.num_cells() as f64
    }

    pub fn cells_of_vertex(&self, v: usize) -> &[u32] {
        &self.vertex_cells[self.vertex_cells_ptr[v]..self.vertex_cells_ptr[v + 1]]
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn min_edge_len(&self) -> f64 {
        self.min_edge
    }

    pub fn max_edge_len(&self) -> f64 {
        self.max_edge
    }

    pub fn kappa_g(&self) -> f64 {
        self.kappa_g
    }

    pub fn set_kappa_g(&mut self, kappa: f64) {
        self.kappa_g = kappa;
    }

    pub fn metric(&self) -> &MeshMetric {
        &self.metric
    }

    /// Gradient coefficient vector of the hat function of local corner
    /// `i` on cell `c` (length `embed_dim`).
    pub fn grad_coeff(&self, c: usize, i: usize) -> &[f64] {
        let stride = self.n + 1;
        let base = (c * stride + i) * self.dim;
        &self.gradients[base..base + self.dim]
    }

    /// Constant gradient of the P1 interpolant of `nodal` on cell `c`.
    /// Only the first `embed_dim` components of the result are used.
    pub fn cell_gradient(&self, c: usize, nodal: &[f64]) -> [f64; 4] {
        let stride = self.n + 1;
        let cell = self.cell(c);
        let mut g = [0.0f64; 4];
        for i in 0..stride {
            let u = nodal[cell[i] as usize];
            let coeff = self.grad_coeff(c, i);
            for k in 0..self.dim {
                g[k] += u * coeff[k];
            }
        }
        g
    }

    /// Barycenter value of the P1 interpolant of `nodal` on cell `c`.
    pub fn cell_average(&self, c: usize, nodal: &[f64]) -> f64 {
        let cell = self.cell(c);
        cell.iter().map(|&v| nodal[v as usize]).sum::<f64>() / (self.n + 1) as f64
    }

    /// Distance between two vertices under the mesh metric.
    pub fn point_distance(&self, u: usize, v: usize) -> f64 {
        let pu = self.vertex(u);
        let pv = self.vertex(v);
        match &self.metric {
            MeshMetric::UnitSphere => {
                let dot: f64 = pu.iter().zip(pv).map(|(a, b)| a * b).sum();
                dot.clamp(-1.0, 1.0).acos()
            }
            MeshMetric::PeriodicBox { periods } => {
                let mut s = 0.0;
                for k in 0..self.dim {
                    let mut d = (pu[k] - pv[k]).abs();
                    if d > 0.5 * periods[k] {
                        d = periods[k] - d;
                    }
                    s += d * d;
                }
                s.sqrt()
            }
            MeshMetric::Graph => {
                let mut s = 0.0;
                for k in 0..self.dim {
                    let d = pu[k] - pv[k];
                    s += d * d;
                }
                s.sqrt()
            }
        }
    }

    /// Distances from `center` to every vertex. Closed-form for the
    /// built-in geometries; Dijkstra over the edge graph (augmented with
    /// two-ring chords to tame grid anisotropy) otherwise.
    pub fn distances_from(&self, center: usize) -> Vec<f64> {
        match &self.metric {
            MeshMetric::UnitSphere | MeshMetric::PeriodicBox { .. } => {
                (0..self.num_vertices()).map(|v| self.point_distance(center, v)).collect()
            }
            MeshMetric::Graph => self.dijkstra(center),
        }
    }

    fn dijkstra(&self, center: usize) -> Vec<f64> {
        let nv = self.num_vertices();
        let mut neighbors: Vec<Vec<u32>> = vec![Vec::new(); nv];
        for &(u, v) in &self.edges {
            neighbors[u as usize].push(v);
            neighbors[v as usize].push(u);
        }
        // Two-ring chords: direct edges to neighbors of neighbors. Without
        // them the grid graph overestimates distances across missing
        // diagonals by up to sqrt(2).
        let mut augmented: Vec<Vec<(u32, f64)>> = vec![Vec::new(); nv];
        for u in 0..nv {
            let mut reach: Vec<u32> = Vec::new();
            for &v in &neighbors[u] {
                reach.push(v);
                for &w in &neighbors[v as usize] {
                    if w as usize != u {
                        reach.push(w);
                    }
                }
            }
            reach.sort_unstable();
            reach.dedup();
            for &w in &reach {
                augmented[u].push((w, self.point_distance(u, w as usize)));
            }
        }

        #[derive(PartialEq)]
        struct Item(f64, u32);
        impl Eq for Item {}
        impl Ord for Item {
            fn cmp(&self, other: &Self) -> std::cmp::Ordering {
                other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
            }
        }
        impl PartialOrd for Item {
            fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
                Some(self.cmp(other))
            }
        }

        let mut dist = vec![f64::INFINITY; nv];
        dist[center] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(Item(0.0, center as u32));
        while let Some(Item(d, u)) = heap.pop() {
            if d > dist[u as usize] {
                continue;
            }
            for &(w, len) in &augmented[u as usize] {
                let nd = d + len;
                if nd < dist[w as usize] {
                    dist[w as usize] = nd;
                    heap.push(Item(nd, w));
                }
            }
        }
        dist
    }
}

/// A metric ball extracted from the mesh: the cells whose vertices all lie
/// within distance `radius` of the center, split into interior vertices
/// and the boundary layer (vertices also incident to outside cells).
#[derive(Debug, Clone)]
pub struct GeodesicBall {
    pub center: usize,
    pub radius: f64,
    pub interior: Vec<usize>,
    pub boundary: Vec<usize>,
    pub cells: Vec<usize>,
}

/// Extracts the geodesic ball of radius `r` around vertex `center`.
/// Errors when no interior vertex survives (radius below the local mesh
/// scale). With `r` at least the mesh diameter the ball is the whole
/// mesh and the boundary is empty.
pub fn geodesic_ball(mesh: &SimplicialManifold, center: usize, r: f64) -> Result<GeodesicBall> {
    if center >= mesh.num_vertices() {
        return Err(Error::InvalidInput(format!("center vertex {center} out of range")));
    }
    if !(r > 0.0) {
        return Err(Error::InvalidInput(format!("ball radius {r} must be positive")));
    }
    let dist = mesh.distances_from(center);
    let inside: Vec<bool> = dist.iter().map(|&d| d <= r).collect();
    let mut cell_selected = vec![false; mesh.num_cells()];
    let mut cells = Vec::new();
    for c in 0..mesh.num_cells() {
        if mesh.cell(c).iter().all(|&v| inside[v as usize]) {
            cell_selected[c] = true;
            cells.push(c);
        }
    }
    let mut status = vec![0u8; mesh.num_vertices()]; // 0 outside, 1 interior, 2 boundary
    for &c in &cells {
        for &v in mesh.cell(c) {
            let on_boundary = mesh
                .cells_of_vertex(v as usize)
                .iter()
                .any(|&cc| !cell_selected[cc as usize]);
            status[v as usize] = if on_boundary { 2 } else { 1 };
        }
    }
    let interior: Vec<usize> = (0..mesh.num_vertices()).filter(|&v| status[v] == 1).collect();
    let boundary: Vec<usize> = (0..mesh.num_vertices()).filter(|&v| status[v] == 2).collect();
    if interior.is_empty() {
        return Err(Error::EmptyBall { center, radius: r });
    }
    Ok(GeodesicBall { center, radius: r, interior, boundary, cells })
}

fn invert_small(m: &[[f64; 3]; 3], n: usize) -> (f64, [[f64; 3]; 3]) {
    let mut inv = [[0.0f64; 3]; 3];
    match n {
        2 => {
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            if det != 0.0 {
                inv[0][0] = m[1][1] / det;
                inv[1][1] = m[0][0] / det;
                inv[0][1] = -m[0][1] / det;
                inv[1][0] = -m[1][0] / det;
            }
            (det, inv)
        }
        3 => {
            let c00 = m[1][1] * m[2][2] - m[1][2] * m[2][1];
            let c01 = m[1][2] * m[2][0] - m[1][0] * m[2][2];
            let c02 = m[1][0] * m[2][1] - m[1][1] * m[2][0];
            let det = m[0][0] * c00 + m[0][1] * c01 + m[0][2] * c02;
            if det != 0.0 {
                inv[0][0] = c00 / det;
                inv[1][0] = c01 / det;
                inv[2][0] = c02 / det;
                inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
                inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
                inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
                inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
                inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
                inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
            }
            (det, inv)
        }
        _ => (0.0, inv),
    }
}
