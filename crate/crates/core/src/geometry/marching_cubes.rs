use std::collections::HashMap;

use super::mc_tables::{EDGE_TABLE, TRI_TABLE};
use super::mesh::Mesh;
use super::v3::{self, Vec3};
use crate::error::{Error, Result};

/// Minimum cells per axis accepted by [`marching_cubes`].
pub const MIN_RESOLUTION: usize = 8;

/// Scalar samples on the nodes of a cubic grid over `[lo, hi]^3`.
///
/// `resolution` counts cells per axis, so there are `resolution + 1` nodes
/// per axis. Node `(i, j, k)` sits at `lo + (i, j, k) * cell_size` and is
/// stored at `(i * (r + 1) + j) * (r + 1) + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarGrid {
    pub resolution: usize,
    pub lo: f64,
    pub hi: f64,
    pub values: Vec<f64>,
}

impl ScalarGrid {
    pub fn nodes_per_axis(&self) -> usize {
        self.resolution + 1
    }

    pub fn cell_size(&self) -> f64 {
        (self.hi - self.lo) / self.resolution as f64
    }

    pub fn cell_diagonal(&self) -> f64 {
        self.cell_size() * 3f64.sqrt()
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let h = self.cell_size();
        [self.lo + i as f64 * h, self.lo + j as f64 * h, self.lo + k as f64 * h]
    }

    /// All node positions in storage order.
    pub fn node_positions(resolution: usize, lo: f64, hi: f64) -> Vec<Vec3> {
        let n = resolution + 1;
        let h = (hi - lo) / resolution as f64;
        let mut out = Vec::with_capacity(n * n * n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    out.push([lo + i as f64 * h, lo + j as f64 * h, lo + k as f64 * h]);
                }
            }
        }
        out
    }

    pub fn from_fn(resolution: usize, lo: f64, hi: f64, f: impl Fn(Vec3) -> f64) -> Self {
        let values = Self::node_positions(resolution, lo, hi).into_iter().map(f).collect();
        Self {
            resolution,
            lo,
            hi,
            values,
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        let n = self.resolution + 1;
        self.values[(i * n + j) * n + k]
    }
}

// corner offsets in table order
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Extract the `iso` level set as a triangle mesh.
///
/// Triangles are wound so their normals point toward increasing field values.
/// Vertices on shared grid edges are welded, so a surface that stays inside
/// the grid comes out closed. No crossing yields an empty mesh.
pub fn marching_cubes(grid: &ScalarGrid, iso: f64) -> Result<Mesh> {
    let r = grid.resolution;
    if r < MIN_RESOLUTION {
        return Err(Error::InvalidArgument(format!(
            "marching cubes needs resolution >= {MIN_RESOLUTION}, got {r}"
        )));
    }
    let n = r + 1;
    if grid.values.len() != n * n * n {
        return Err(Error::InvalidArgument(format!(
            "grid of resolution {r} needs {} values, got {}",
            n * n * n,
            grid.values.len()
        )));
    }
    if let Some(bad) = grid.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite field value at node {bad}")));
    }

    let mut vertices: Vec<Vec3> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    let mut cache: HashMap<usize, u32> = HashMap::new();

    for i in 0..r {
        for j in 0..r {
            for k in 0..r {
                let mut vals = [0.0; 8];
                let mut case = 0usize;
                for (c, off) in CORNERS.iter().enumerate() {
                    vals[c] = grid.at(i + off[0], j + off[1], k + off[2]);
                    if vals[c] < iso {
                        case |= 1 << c;
                    }
                }
                let edges = EDGE_TABLE[case];
                if edges == 0 {
                    continue;
                }
                let mut ids = [u32::MAX; 12];
                for (e, [a, b]) in EDGES.iter().enumerate() {
                    if edges & (1 << e) == 0 {
                        continue;
                    }
                    let (pa, pb) = (CORNERS[*a], CORNERS[*b]);
                    // canonical edge key: lower node + axis
                    let lo = [i + pa[0].min(pb[0]), j + pa[1].min(pb[1]), k + pa[2].min(pb[2])];
                    let axis = (0..3).find(|&d| pa[d] != pb[d]).expect("edge spans one axis");
                    let key = ((lo[0] * n + lo[1]) * n + lo[2]) * 3 + axis;
                    ids[e] = *cache.entry(key).or_insert_with(|| {
                        let (va, vb) = (vals[*a], vals[*b]);
                        let ga = grid.node(i + pa[0], j + pa[1], k + pa[2]);
                        let gb = grid.node(i + pb[0], j + pb[1], k + pb[2]);
                        let denom = vb - va;
                        let t = if denom.abs() > 1e-300 { (iso - va) / denom } else { 0.5 };
                        vertices.push(v3::lerp(ga, gb, t.clamp(0.0, 1.0)));
                        (vertices.len() - 1) as u32
                    });
                }
                for tri in TRI_TABLE[case].chunks(3) {
                    if tri[0] < 0 {
                        break;
                    }
                    // table winding faces decreasing values; flip it
                    triangles.push([ids[tri[0] as usize], ids[tri[2] as usize], ids[tri[1] as usize]]);
                }
            }
        }
    }
    Ok(Mesh { vertices, triangles }.cleaned())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere_grid(res: usize) -> ScalarGrid {
        ScalarGrid::from_fn(res, -1.0, 1.0, |p| v3::norm(p) - 0.5)
    }

    #[test]
    fn positive_field_gives_empty_mesh() {
        let g = ScalarGrid::from_fn(8, -1.0, 1.0, |_| 1.0);
        assert!(marching_cubes(&g, 0.0).unwrap().is_empty());
    }

    #[test]
    fn rejects_coarse_grid() {
        let g = ScalarGrid::from_fn(4, -1.0, 1.0, |p| p[2]);
        assert!(marching_cubes(&g, 0.0).is_err());
    }

    #[test]
    fn sphere_vertices_near_surface_and_closed() {
        let g = sphere_grid(64);
        let diag = g.cell_diagonal();
        assert!((diag - 0.0541).abs() < 1e-3);
        let m = marching_cubes(&g, 0.0).unwrap();
        assert!(!m.is_empty());
        for v in &m.vertices {
            assert!((v3::norm(*v) - 0.5).abs() <= diag);
        }
        assert!(m.is_closed_manifold());
    }

    #[test]
    fn sphere_normals_point_outward() {
        let m = marching_cubes(&sphere_grid(32), 0.0).unwrap();
        for t in 0..m.triangles.len() {
            let [a, b, c] = m.triangle(t);
            let centroid = v3::scale(v3::add(a, v3::add(b, c)), 1.0 / 3.0);
            assert!(v3::dot(m.face_normal(t), centroid) > 0.0);
        }
    }

    #[test]
    fn plane_sheet_faces_up() {
        let g = ScalarGrid::from_fn(16, -1.0, 1.0, |p| p[2] - 0.03);
        let m = marching_cubes(&g, 0.0).unwrap();
        assert!(!m.is_empty());
        for v in &m.vertices {
            assert!((v[2] - 0.03).abs() < 1e-12);
        }
        for t in 0..m.triangles.len() {
            let nrm = m.face_normal(t);
            assert!(nrm[2] > 0.0 && nrm[0].abs() < 1e-12 && nrm[1].abs() < 1e-12);
        }
        // sheet touches the boundary: every edge used once or twice
        assert!(m.edge_use_counts().values().all(|&c| c == 1 || c == 2));
    }

    #[test]
    fn plane_through_nodes() {
        let g = ScalarGrid::from_fn(16, -1.0, 1.0, |p| p[2]);
        let m = marching_cubes(&g, 0.0).unwrap();
        assert!(!m.is_empty());
        assert!(m.vertices.iter().all(|v| v[2].abs() < 1e-12));
        assert!((m.surface_area() - 4.0).abs() < 1e-9);
    }

    #[test]
    fn random_smooth_fields_are_closed() {
        // sums of a few spheres; surfaces interior to the grid
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let blobs: Vec<(Vec3, f64)> = (0..3)
                .map(|_| {
                    (
                        [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)],
                        rng.gen_range(0.15..0.35),
                    )
                })
                .collect();
            let g = ScalarGrid::from_fn(24, -1.0, 1.0, |p| {
                blobs.iter().map(|(c, r)| v3::norm(v3::sub(p, *c)) - r).fold(f64::INFINITY, f64::min)
            });
            let m = marching_cubes(&g, 0.0).unwrap();
            assert!(m.is_closed_manifold());
        }
    }
}
