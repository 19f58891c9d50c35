use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use rand::Rng;

use super::v3::{self, Vec3};
use crate::error::{Error, Result};
use crate::numerics::checkpoint::write_atomic;

/// Bounding-box diagonal that [`Mesh::normalized`] scales shapes to.
pub const NORMALIZED_DIAGONAL: f64 = 1.6;

/// Indexed triangle mesh.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

/// Transform applied by [`Mesh::normalized`]: `p_norm = (p - center) * scale`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Normalization {
    pub center: Vec3,
    pub scale: f64,
}

impl Normalization {
    pub fn identity() -> Self {
        Self {
            center: [0.0; 3],
            scale: 1.0,
        }
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        v3::scale(v3::sub(p, self.center), self.scale)
    }

    pub fn invert(&self, p: Vec3) -> Vec3 {
        v3::add(v3::scale(p, 1.0 / self.scale), self.center)
    }

    /// Length in original units of a normalized length.
    pub fn to_original_length(&self, l: f64) -> f64 {
        l / self.scale
    }
}

impl Mesh {
    /// Build a mesh, checking that every index is in range.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (fi, t) in triangles.iter().enumerate() {
            if t.iter().any(|&i| i as usize >= n) {
                return Err(Error::InvalidArgument(format!(
                    "face {fi} {t:?} references a vertex outside 0..{n}"
                )));
            }
        }
        Ok(Self { vertices, triangles })
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, i: usize) -> [Vec3; 3] {
        let t = self.triangles[i];
        [
            self.vertices[t[0] as usize],
            self.vertices[t[1] as usize],
            self.vertices[t[2] as usize],
        ]
    }

    /// Unnormalized face normal `(b - a) x (c - a)`.
    pub fn face_normal(&self, i: usize) -> Vec3 {
        let [a, b, c] = self.triangle(i);
        v3::cross(v3::sub(b, a), v3::sub(c, a))
    }

    pub fn triangle_area(&self, i: usize) -> f64 {
        0.5 * v3::norm(self.face_normal(i))
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|i| self.triangle_area(i)).sum()
    }

    /// Axis-aligned bounds of the referenced vertices.
    pub fn bbox(&self) -> Option<(Vec3, Vec3)> {
        let mut it = self.triangles.iter().flat_map(|t| t.iter()).map(|&i| self.vertices[i as usize]);
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), p| (v3::min(lo, p), v3::max(hi, p))))
    }

    /// Drop zero-area triangles and vertices no triangle references.
    pub fn cleaned(&self) -> Mesh {
        let keep: Vec<[u32; 3]> = self
            .triangles
            .iter()
            .enumerate()
            .filter(|&(i, t)| t[0] != t[1] && t[1] != t[2] && t[0] != t[2] && v3::norm2(self.face_normal(i)) > 0.0)
            .map(|(_, t)| *t)
            .collect();
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        let triangles = keep
            .iter()
            .map(|t| {
                t.map(|i| {
                    let slot = &mut remap[i as usize];
                    if *slot == u32::MAX {
                        *slot = vertices.len() as u32;
                        vertices.push(self.vertices[i as usize]);
                    }
                    *slot
                })
            })
            .collect();
        Mesh { vertices, triangles }
    }

    /// The vertex-connected component with the largest surface area.
    pub fn largest_component(&self) -> Mesh {
        let n = self.vertices.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn root(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for t in &self.triangles {
            let a = root(&mut parent, t[0] as usize);
            for &v in &t[1..] {
                let b = root(&mut parent, v as usize);
                parent[b] = a;
            }
        }
        let mut area: HashMap<usize, f64> = HashMap::new();
        let roots: Vec<usize> = (0..self.triangles.len())
            .map(|i| {
                let r = root(&mut parent, self.triangles[i][0] as usize);
                *area.entry(r).or_insert(0.0) += self.triangle_area(i);
                r
            })
            .collect();
        let Some(best) = area.iter().max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(a.0))).map(|(r, _)| *r) else {
            return self.clone();
        };
        let keep = Mesh {
            vertices: self.vertices.clone(),
            triangles: self.triangles.iter().zip(&roots).filter(|(_, r)| **r == best).map(|(t, _)| *t).collect(),
        };
        keep.cleaned()
    }

    /// Count, for every undirected edge, how many triangles use it.
    pub fn edge_use_counts(&self) -> HashMap<(u32, u32), usize> {
        let mut counts = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Every edge shared by exactly two triangles.
    pub fn is_closed_manifold(&self) -> bool {
        !self.triangles.is_empty() && self.edge_use_counts().values().all(|&c| c == 2)
    }

    pub fn transformed(&self, f: impl Fn(Vec3) -> Vec3) -> Mesh {
        Mesh {
            vertices: self.vertices.iter().map(|&p| f(p)).collect(),
            triangles: self.triangles.clone(),
        }
    }

    pub fn translated(&self, d: Vec3) -> Mesh {
        self.transformed(|p| v3::add(p, d))
    }

    /// Center on the bounding-box center and scale the bbox diagonal to
    /// [`NORMALIZED_DIAGONAL`].
    pub fn normalized(&self) -> Result<(Mesh, Normalization)> {
        let (lo, hi) = self.bbox().ok_or(Error::EmptyMesh("normalize"))?;
        let diag = v3::norm(v3::sub(hi, lo));
        if !(diag > 0.0) {
            return Err(Error::InvalidArgument("mesh has zero extent".into()));
        }
        let n = Normalization {
            center: v3::scale(v3::add(lo, hi), 0.5),
            scale: NORMALIZED_DIAGONAL / diag,
        };
        Ok((self.transformed(|p| n.apply(p)), n))
    }

    /// Uniform area-weighted samples on the surface.
    pub fn sample_surface<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<Vec3> {
        if self.triangles.is_empty() || n == 0 {
            return Vec::new();
        }
        let mut cdf = Vec::with_capacity(self.triangles.len());
        let mut acc = 0.0;
        for i in 0..self.triangles.len() {
            acc += self.triangle_area(i);
            cdf.push(acc);
        }
        (0..n)
            .map(|_| {
                let u: f64 = rng.gen::<f64>() * acc;
                let ti = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
                let [a, b, c] = self.triangle(ti);
                let (mut r1, mut r2): (f64, f64) = (rng.gen(), rng.gen());
                if r1 + r2 > 1.0 {
                    r1 = 1.0 - r1;
                    r2 = 1.0 - r2;
                }
                v3::add(a, v3::add(v3::scale(v3::sub(b, a), r1), v3::scale(v3::sub(c, a), r2)))
            })
            .collect()
    }

    /// Axis-aligned box mesh (12 outward-facing triangles).
    pub fn cuboid(lo: Vec3, hi: Vec3) -> Mesh {
        let vertices = (0..8)
            .map(|i| {
                [
                    if i & 1 == 0 { lo[0] } else { hi[0] },
                    if i & 2 == 0 { lo[1] } else { hi[1] },
                    if i & 4 == 0 { lo[2] } else { hi[2] },
                ]
            })
            .collect();
        let triangles = vec![
            [0, 2, 1], [1, 2, 3], // z-
            [4, 5, 6], [5, 7, 6], // z+
            [0, 1, 4], [1, 5, 4], // y-
            [2, 6, 3], [3, 6, 7], // y+
            [0, 4, 2], [2, 4, 6], // x-
            [1, 3, 5], [3, 7, 5], // x+
        ];
        Mesh { vertices, triangles }
    }

    /// UV sphere, outward-facing.
    pub fn uv_sphere(center: Vec3, radius: f64, rings: usize, segments: usize) -> Mesh {
        let mut vertices = vec![v3::add(center, [0.0, 0.0, radius])];
        for r in 1..rings {
            let theta = std::f64::consts::PI * r as f64 / rings as f64;
            for s in 0..segments {
                let phi = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
                vertices.push(v3::add(
                    center,
                    [
                        radius * theta.sin() * phi.cos(),
                        radius * theta.sin() * phi.sin(),
                        radius * theta.cos(),
                    ],
                ));
            }
        }
        vertices.push(v3::add(center, [0.0, 0.0, -radius]));
        let south = (vertices.len() - 1) as u32;
        let ring = |r: usize, s: usize| (1 + (r - 1) * segments + s % segments) as u32;
        let mut triangles = Vec::new();
        for s in 0..segments {
            triangles.push([0, ring(1, s), ring(1, s + 1)]);
            triangles.push([south, ring(rings - 1, s + 1), ring(rings - 1, s)]);
        }
        for r in 1..rings - 1 {
            for s in 0..segments {
                let (a, b, c, d) = (ring(r, s), ring(r, s + 1), ring(r + 1, s), ring(r + 1, s + 1));
                triangles.push([a, c, b]);
                triangles.push([b, c, d]);
            }
        }
        Mesh { vertices, triangles }
    }
}

/// Parse Wavefront OBJ text: `v` and `f` records only; polygons are fanned
/// into triangles; other records are skipped with a warning.
pub fn parse_obj(text: &str, path: &Path) -> Result<Mesh> {
    let mut vertices = Vec::new();
    let mut faces: Vec<(usize, Vec<i64>)> = Vec::new();
    let mut skipped = 0usize;
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        let mut it = s.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|_| perr(line, format!("bad coordinate `{t}`"))))
                    .collect::<Result<_>>()?;
                if c.len() != 3 {
                    return Err(perr(line, "vertex needs three coordinates".into()));
                }
                vertices.push([c[0], c[1], c[2]]);
            }
            Some("f") => {
                let idx: Vec<i64> = it
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or("");
                        head.parse::<i64>().map_err(|_| perr(line, format!("bad face index `{t}`")))
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(perr(line, "face needs at least three vertices".into()));
                }
                faces.push((line, idx));
            }
            _ => skipped += 1,
        }
    }
    if skipped > 0 {
        warn!("{}: ignored {skipped} non-geometry records", path.display());
    }
    if vertices.is_empty() && faces.is_empty() {
        return Err(Error::NoGeometry(path.to_path_buf()));
    }
    let n = vertices.len() as i64;
    let mut triangles = Vec::with_capacity(faces.len());
    for (fi, (line, idx)) in faces.iter().enumerate() {
        let resolved: Vec<u32> = idx
            .iter()
            .map(|&i| {
                let r = if i < 0 { n + i } else { i - 1 };
                if i == 0 || r < 0 || r >= n {
                    Err(perr(
                        *line,
                        format!("face {} references vertex {i}, but only {n} vertices exist", fi + 1),
                    ))
                } else {
                    Ok(r as u32)
                }
            })
            .collect::<Result<_>>()?;
        for k in 1..resolved.len() - 1 {
            triangles.push([resolved[0], resolved[k], resolved[k + 1]]);
        }
    }
    Ok(Mesh { vertices, triangles })
}

pub fn load_mesh(path: &Path) -> Result<Mesh> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, path)
}

pub fn write_obj(mesh: &Mesh) -> String {
    let mut s = String::with_capacity(mesh.vertices.len() * 40 + mesh.triangles.len() * 24);
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
    }
    for t in &mesh.triangles {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    s
}

pub fn save_mesh(mesh: &Mesh, path: &Path) -> Result<()> {
    write_atomic(path, write_obj(mesh).as_bytes())
}
