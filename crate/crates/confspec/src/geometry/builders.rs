//! Reference geometries: icospheres, flat tori, and the round 3-sphere.

use super::{MeshMetric, SimplicialManifold};
use crate::error::{Error, Result};
use std::collections::HashMap;

/// Icosahedral triangulation of the unit 2-sphere. `subdivisions = 0`
/// is the icosahedron with unit circumradius; each further level splits
/// every triangle in four (children emitted consecutively) and projects
/// new vertices back to the sphere.
pub fn build_icosphere(subdivisions: usize) -> Result<SimplicialManifold> {
    let t = (1.0 + 5.0f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let mut vertices: Vec<f64> = Vec::with_capacity(12 * 3);
    for p in raw {
        let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        vertices.extend_from_slice(&[p[0] / norm, p[1] / norm, p[2] / norm]);
    }
    let mut cells: Vec<u32> = vec![
        0, 11, 5, 0, 5, 1, 0, 1, 7, 0, 7, 10, 0, 10, 11, //
        1, 5, 9, 5, 11, 4, 11, 10, 2, 10, 7, 6, 7, 1, 8, //
        3, 9, 4, 3, 4, 2, 3, 2, 6, 3, 6, 8, 3, 8, 9, //
        4, 9, 5, 2, 4, 11, 6, 2, 10, 8, 6, 7, 9, 8, 1,
    ];

    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next_cells = Vec::with_capacity(cells.len() * 4);
        for tri in cells.chunks(3) {
            let (a, b, c) = (tri[0], tri[1], tri[2]);
            let ab = edge_midpoint(&mut vertices, &mut midpoint, a, b, true);
            let bc = edge_midpoint(&mut vertices, &mut midpoint, b, c, true);
            let ca = edge_midpoint(&mut vertices, &mut midpoint, c, a, true);
            next_cells.extend_from_slice(&[a, ab, ca, ab, b, bc, ca, bc, c, ab, bc, ca]);
        }
        cells = next_cells;
    }

    SimplicialManifold::from_cells(2, 3, vertices, cells, MeshMetric::UnitSphere, 1.0)
}

/// Flat torus with the box metric. `periods` has one entry per
/// coordinate: two entries build a triangulated square torus, three a
/// Kuhn-subdivided cubic 3-torus. Resolution is the number of grid
/// intervals per period and must be at least 3 so that cells stay
/// smaller than half a period.
pub fn build_flat_torus(resolution: usize, periods: &[f64]) -> Result<SimplicialManifold> {
    if resolution < 3 {
        return Err(Error::DegenerateMesh(format!(
            "torus resolution {resolution} below 3 cannot separate periodic images"
        )));
    }
    if periods.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::InvalidInput("torus periods must be positive".into()));
    }
    match periods.len() {
        2 => build_torus2(resolution, periods[0], periods[1]),
        3 => build_torus3(resolution, periods[0], periods[1], periods[2]),
        d => Err(Error::InvalidInput(format!("torus dimension {d} not supported"))),
    }
}

fn build_torus2(res: usize, lx: f64, ly: f64) -> Result<SimplicialManifold> {
    let hx = lx / res as f64;
    let hy = ly / res as f64;
    let idx = |i: usize, j: usize| -> u32 { ((j % res) * res + (i % res)) as u32 };
    let mut vertices = Vec::with_capacity(res * res * 2);
    for j in 0..res {
        for i in 0..res {
            vertices.push(i as f64 * hx);
            vertices.push(j as f64 * hy);
        }
    }
    // Single consistent diagonal: the mesh stays invariant under the
    // swap of the two coordinates, which keeps the first nonzero
    // eigenvalue exactly fourfold degenerate.
    let mut cells = Vec::with_capacity(res * res * 6);
    for j in 0..res {
        for i in 0..res {
            let v00 = idx(i, j);
            let v10 = idx(i + 1, j);
            let v01 = idx(i, j + 1);
            let v11 = idx(i + 1, j + 1);
            cells.extend_from_slice(&[v00, v10, v11]);
            cells.extend_from_slice(&[v00, v11, v01]);
        }
    }
    SimplicialManifold::from_cells(
        2,
        2,
        vertices,
        cells,
        MeshMetric::PeriodicBox { periods: vec![lx, ly] },
        0.0,
    )
}

fn build_torus3(res: usize, lx: f64, ly: f64, lz: f64) -> Result<SimplicialManifold> {
    let h = [lx / res as f64, ly / res as f64, lz / res as f64];
    let idx = |i: usize, j: usize, k: usize| -> u32 {
        (((k % res) * res + (j % res)) * res + (i % res)) as u32
    };
    let mut vertices = Vec::with_capacity(res * res * res * 3);
    for k in 0..res {
        for j in 0..res {
            for i in 0..res {
                vertices.push(i as f64 * h[0]);
                vertices.push(j as f64 * h[1]);
                vertices.push(k as f64 * h[2]);
            }
        }
    }
    // Kuhn subdivision: six tetrahedra per cube, one per permutation of
    // the axes, all sharing the main diagonal. Tiles periodically.
    const PERMS: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let mut cells = Vec::with_capacity(res * res * res * 24);
    for k in 0..res {
        for j in 0..res {
            for i in 0..res {
                for perm in PERMS {
                    let mut p = [i, j, k];
                    let mut tet = [idx(p[0], p[1], p[2]), 0, 0, 0];
                    for (step, &axis) in perm.iter().enumerate() {
                        p[axis] += 1;
                        tet[step + 1] = idx(p[0], p[1], p[2]);
                    }
                    cells.extend_from_slice(&tet);
                }
            }
        }
    }
    SimplicialManifold::from_cells(
        3,
        3,
        vertices,
        cells,
        MeshMetric::PeriodicBox { periods: vec![lx, ly, lz] },
        0.0,
    )
}

/// Round unit 3-sphere: the boundary complex of the 4-orthoplex (16
/// tetrahedra on the 8 vertices +-e_i), refined by Freudenthal
/// subdivision with new vertices projected back to |x| = 1. The first
/// level splits edges in three and later levels in two, so `refinement
/// = 3` divides edges twelvefold; the plain dyadic split would leave
/// the chordal volume deficit of the inscribed complex above 3%.
pub fn build_sphere3(refinement: usize) -> Result<SimplicialManifold> {
    let mut vertices: Vec<f64> = Vec::with_capacity(8 * 4);
    for axis in 0..4 {
        for sign in [1.0, -1.0] {
            let mut p = [0.0; 4];
            p[axis] = sign;
            vertices.extend_from_slice(&p);
        }
    }
    let vid = |axis: usize, sign: usize| -> u32 { (axis * 2 + sign) as u32 };
    let mut cells: Vec<u32> = Vec::with_capacity(16 * 4);
    for s0 in 0..2 {
        for s1 in 0..2 {
            for s2 in 0..2 {
                for s3 in 0..2 {
                    cells.extend_from_slice(&[vid(0, s0), vid(1, s1), vid(2, s2), vid(3, s3)]);
                }
            }
        }
    }

    for level in 0..refinement {
        let k = if level == 0 { 3 } else { 2 };
        cells = subdivide_sphere_tets(&mut vertices, &cells, k);
    }

    SimplicialManifold::from_cells(3, 4, vertices, cells, MeshMetric::UnitSphere, 2.0)
}

/// Freudenthal k-fold subdivision of a tetrahedral complex embedded in
/// R^4, projecting every new vertex to the unit sphere. Each parent
/// cell is identified with the Kuhn simplex {k >= x1 >= x2 >= x3 >= 0}
/// and cut along the integer lattice into k^3 children (emitted
/// consecutively). Shared faces inherit the principal triangulation of
/// the triangle, which does not depend on vertex order, so the refined
/// complex is again conforming.
fn subdivide_sphere_tets(vertices: &mut Vec<f64>, cells: &[u32], k: u32) -> Vec<u32> {
    const PERMS: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let mut cache: HashMap<Vec<(u32, u32)>, u32> = HashMap::new();
    let mut next = Vec::with_capacity(cells.len() * (k * k * k) as usize);
    for tet in cells.chunks(4) {
        // Vertex of the barycentric lattice point with weights b, sum k.
        let mut lattice_vertex = |b: [u32; 4]| -> u32 {
            if let Some(i) = (0..4).find(|&i| b[i] == k) {
                return tet[i];
            }
            let mut key: Vec<(u32, u32)> =
                (0..4).filter(|&i| b[i] > 0).map(|i| (tet[i], b[i])).collect();
            key.sort_unstable();
            if let Some(&id) = cache.get(&key) {
                return id;
            }
            let mut p = [0.0f64; 4];
            for &(v, w) in &key {
                for c in 0..4 {
                    p[c] += w as f64 / k as f64 * vertices[v as usize * 4 + c];
                }
            }
            let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
            let id = (vertices.len() / 4) as u32;
            vertices.extend(p.iter().map(|x| x / norm));
            cache.insert(key, id);
            id
        };
        for a0 in 0..k {
            for a1 in 0..k {
                for a2 in 0..k {
                    'perm: for perm in PERMS {
                        let mut x = [a0, a1, a2];
                        let mut corners = [[0u32; 3]; 4];
                        corners[0] = x;
                        for (s, &axis) in perm.iter().enumerate() {
                            x[axis] += 1;
                            corners[s + 1] = x;
                        }
                        // Keep the lattice tetrahedra inside the Kuhn chain.
                        for c in &corners {
                            if c[0] > k || c[0] < c[1] || c[1] < c[2] {
                                continue 'perm;
                            }
                        }
                        for c in corners {
                            next.push(lattice_vertex([k - c[0], c[0] - c[1], c[1] - c[2], c[2]]));
                        }
                    }
                }
            }
        }
    }
    debug_assert_eq!(next.len(), cells.len() * (k * k * k) as usize);
    next
}

fn edge_midpoint(
    vertices: &mut Vec<f64>,
    cache: &mut HashMap<(u32, u32), u32>,
    a: u32,
    b: u32,
    project: bool,
) -> u32 {
    let key = if a < b { (a, b) } else { (b, a) };
    if let Some(&m) = cache.get(&key) {
        return m;
    }
    let pa = [vertices[a as usize * 3], vertices[a as usize * 3 + 1], vertices[a as usize * 3 + 2]];
    let pb = [vertices[b as usize * 3], vertices[b as usize * 3 + 1], vertices[b as usize * 3 + 2]];
    let mut m = [(pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0, (pa[2] + pb[2]) / 2.0];
    if project {
        let norm = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt();
        m = [m[0] / norm, m[1] / norm, m[2] / norm];
    }
    let id = (vertices.len() / 3) as u32;
    vertices.extend_from_slice(&m);
    cache.insert(key, id);
    id
}
