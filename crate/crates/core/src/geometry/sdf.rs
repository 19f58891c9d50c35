//! Signed distance to triangle meshes and SDF point sampling.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::bvh::Bvh;
use super::mesh::Mesh;
use super::v3::{self, Vec3};
use crate::error::{Error, Result};
use crate::numerics::checkpoint::write_atomic;

/// Fixed, mutually non-axis-aligned ray directions for parity voting.
const RAY_DIRS: [Vec3; 3] = [
    [0.41233878228629683, 0.5619528541515163, 0.7170674433647218],
    [-0.7321167986126684, 0.13770315963524715, 0.6671153071363354],
    [0.2281070953815545, -0.8893276629671916, -0.3963123274866727],
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SignedDistance {
    pub value: f64,
    /// False when the mesh is not closed or the parity rays disagreed.
    pub sign_reliable: bool,
}

/// Signed-distance oracle for one mesh. Build once, query many times.
#[derive(Clone, Debug)]
pub struct MeshSdf {
    bvh: Bvh,
    watertight: bool,
}

impl MeshSdf {
    pub fn new(mesh: &Mesh) -> Result<Self> {
        if mesh.is_empty() {
            return Err(Error::EmptyMesh("signed distance"));
        }
        Ok(Self {
            bvh: Bvh::build(mesh),
            watertight: mesh.is_closed_manifold(),
        })
    }

    pub fn is_watertight(&self) -> bool {
        self.watertight
    }

    pub fn query(&self, p: Vec3) -> SignedDistance {
        let (d2, _) = self.bvh.closest(p).expect("non-empty mesh");
        let dist = d2.sqrt();
        let votes = RAY_DIRS.iter().filter(|&&d| self.bvh.count_hits(p, d) % 2 == 1).count();
        let inside = votes >= 2;
        let unanimous = votes == 0 || votes == 3;
        SignedDistance {
            value: if inside { -dist } else { dist },
            sign_reliable: self.watertight && unanimous,
        }
    }

    pub fn distance(&self, p: Vec3) -> f64 {
        self.query(p).value
    }
}

/// One-shot signed distance from `p` to `mesh` (negative inside).
pub fn signed_distance(mesh: &Mesh, p: Vec3) -> Result<SignedDistance> {
    Ok(MeshSdf::new(mesh)?.query(p))
}

/// Points paired with signed distances.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SdfSampleSet {
    pub points: Vec<Vec3>,
    pub distances: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub n_surface: usize,
    pub n_uniform: usize,
    /// Standard deviations of the two near-surface perturbations.
    pub noise_scales: [f64; 2],
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n_surface: 18_000,
            n_uniform: 2_000,
            noise_scales: [0.012, 0.05],
        }
    }
}

impl SdfSampleSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Binary layout: `"SDFESMPL"`, u32 version (1), u64 count, then `count`
    /// records of four little-endian f64 (x, y, z, distance).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.len() * 32);
        out.extend_from_slice(SAMPLES_MAGIC);
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for (p, d) in self.points.iter().zip(&self.distances) {
            for v in [p[0], p[1], p[2], *d] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::InvalidArgument(format!("sample set: {m}"));
        if bytes.len() < 20 || &bytes[..8] != SAMPLES_MAGIC {
            return Err(bad("bad header"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != 1 {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let n = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        if bytes.len() != 20 + n * 32 {
            return Err(bad("length does not match count"));
        }
        let mut set = SdfSampleSet {
            points: Vec::with_capacity(n),
            distances: Vec::with_capacity(n),
        };
        for rec in bytes[20..].chunks_exact(32) {
            let f = |i: usize| f64::from_le_bytes(rec[i * 8..i * 8 + 8].try_into().unwrap());
            set.points.push([f(0), f(1), f(2)]);
            set.distances.push(f(3));
        }
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Plain text, one `x y z d` line per sample.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (p, d) in self.points.iter().zip(&self.distances) {
            let _ = writeln!(s, "{} {} {} {}", p[0], p[1], p[2], d);
        }
        s
    }
}

const SAMPLES_MAGIC: &[u8; 8] = b"SDFESMPL";

/// Sample `cfg.n_surface` near-surface points (half per noise scale) from
/// `mesh` and `cfg.n_uniform` points uniformly in `[-1, 1]^3`, labelling each
/// with `sdf`.
pub fn sample_sdf_with<F>(mesh: &Mesh, cfg: &SamplingConfig, seed: u64, sdf: F) -> Result<SdfSampleSet>
where
    F: Fn(Vec3) -> f64,
{
    for s in cfg.noise_scales {
        if !(s > 0.0) {
            return Err(Error::InvalidArgument(format!("noise scale must be > 0, got {s}")));
        }
    }
    if cfg.n_surface > 0 && mesh.is_empty() {
        return Err(Error::EmptyMesh("surface sampling"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let surface = mesh.sample_surface(cfg.n_surface, &mut rng);
    let mut points = Vec::with_capacity(cfg.n_surface + cfg.n_uniform);
    let half = cfg.n_surface / 2;
    for (i, p) in surface.into_iter().enumerate() {
        let sigma = if i < half { cfg.noise_scales[0] } else { cfg.noise_scales[1] };
        let normal = Normal::new(0.0, sigma).expect("positive sigma");
        let n = [normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng)];
        points.push(v3::add(p, n));
    }
    for _ in 0..cfg.n_uniform {
        points.push([
            rng.gen_range(-1.0..=1.0),
            rng.gen_range(-1.0..=1.0),
            rng.gen_range(-1.0..=1.0),
        ]);
    }
    let distances = points.iter().map(|&p| sdf(p)).collect();
    Ok(SdfSampleSet { points, distances })
}

/// [`sample_sdf_with`] labelled by the mesh's own signed distance.
pub fn sample_sdf(mesh: &Mesh, cfg: &SamplingConfig, seed: u64) -> Result<SdfSampleSet> {
    if cfg.n_surface == 0 && cfg.n_uniform == 0 {
        return Ok(SdfSampleSet::default());
    }
    let oracle = MeshSdf::new(mesh)?;
    sample_sdf_with(mesh, cfg, seed, |p| oracle.distance(p))
}
