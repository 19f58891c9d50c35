use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{car_attributes, check_attribute, CarParams, ParamRanges, BOXINESS};
use super::shape::CarSolid;
use crate::error::{Error, Result};
use crate::geometry::mesh::NORMALIZED_DIAGONAL;
use crate::geometry::{marching_cubes, sample_sdf_with, save_mesh, Mesh, Normalization, SamplingConfig, ScalarGrid, SdfSampleSet, Vec3};
use crate::numerics::checkpoint::write_atomic;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub count: usize,
    pub seed: u64,
    pub ranges: ParamRanges,
    pub attributes: Vec<String>,
    /// Hold every parameter that is not an attribute at its range midpoint.
    pub pin_unlabeled: bool,
    pub sampling: SamplingConfig,
    /// Cells per axis for the reference mesh extraction.
    pub mesh_resolution: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            count: 32,
            seed: 7,
            ranges: ParamRanges::default(),
            attributes: ["hood_length", "cabin_length", "rear_length", "total_height", "width", "wheelbase"]
                .map(String::from)
                .to_vec(),
            pin_unlabeled: true,
            sampling: SamplingConfig::default(),
            mesh_resolution: 96,
        }
    }
}

impl DatasetConfig {
    /// Sampling ranges after optional pinning of unlabeled parameters.
    pub fn effective_ranges(&self) -> ParamRanges {
        if self.pin_unlabeled {
            let free: Vec<&str> = self
                .attributes
                .iter()
                .map(|a| if a == BOXINESS { "corner_radius" } else { a.as_str() })
                .collect();
            self.ranges.pin_except(&free)
        } else {
            self.ranges
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::InvalidArgument("dataset count must be >= 1".into()));
        }
        if self.attributes.is_empty() {
            return Err(Error::InvalidArgument("at least one attribute is required".into()));
        }
        self.ranges.validate()?;
        for (i, a) in self.attributes.iter().enumerate() {
            check_attribute(a, &self.ranges)?;
            if self.attributes[..i].contains(a) {
                return Err(Error::InvalidArgument(format!("duplicate attribute `{a}`")));
            }
        }
        if self.mesh_resolution < crate::geometry::marching_cubes::MIN_RESOLUTION {
            return Err(Error::InvalidArgument("mesh resolution below minimum".into()));
        }
        Ok(())
    }
}

/// Fixed map from the metric car frame into normalized space, shared by the
/// whole corpus so that absolute sizes stay comparable between shapes.
pub fn corpus_frame(ranges: &ParamRanges) -> Normalization {
    let big = ranges.upper();
    let ext = [big.total_length(), big.width, big.total_height];
    let diag = (ext[0] * ext[0] + ext[1] * ext[1] + ext[2] * ext[2]).sqrt();
    Normalization {
        center: [0.0, 0.0, 0.5 * big.total_height],
        scale: NORMALIZED_DIAGONAL / diag,
    }
}

/// Car SDF expressed in normalized coordinates.
pub struct NormalizedCar {
    solid: CarSolid,
    frame: Normalization,
}

impl NormalizedCar {
    pub fn new(params: &CarParams, frame: Normalization) -> Self {
        Self {
            solid: CarSolid::new(params),
            frame,
        }
    }

    pub fn sdf(&self, p: Vec3) -> f64 {
        self.frame.scale * self.solid.sdf(self.frame.invert(p))
    }

    pub fn mesh(&self, resolution: usize) -> Result<Mesh> {
        marching_cubes(&ScalarGrid::from_fn(resolution, -1.0, 1.0, |p| self.sdf(p)), 0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeEntry {
    pub id: String,
    pub params: CarParams,
    pub attributes: Vec<f64>,
    /// Relative to the manifest's directory.
    pub samples: PathBuf,
    pub mesh: PathBuf,
}

/// Versioned JSON index of a generated corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub attribute_names: Vec<String>,
    pub ranges: ParamRanges,
    pub frame: Normalization,
    pub sampling: SamplingConfig,
    pub mesh_resolution: usize,
    pub shapes: Vec<ShapeEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::InvalidArgument(format!("unsupported manifest version {}", m.version)));
        }
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.check()?;
        Ok(m)
    }

    fn check(&self) -> Result<()> {
        for (i, s) in self.shapes.iter().enumerate() {
            if self.shapes[..i].iter().any(|o| o.id == s.id) {
                return Err(Error::InvalidArgument(format!("duplicate shape id `{}`", s.id)));
            }
            if s.attributes.len() != self.attribute_names.len() {
                return Err(Error::shape(format!("attributes of {}", s.id), &[self.attribute_names.len()], &[s.attributes.len()]));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn samples_path(&self, i: usize) -> PathBuf {
        self.root.join(&self.shapes[i].samples)
    }

    pub fn mesh_path(&self, i: usize) -> PathBuf {
        self.root.join(&self.shapes[i].mesh)
    }

    pub fn load_samples(&self, i: usize) -> Result<SdfSampleSet> {
        SdfSampleSet::load(&self.samples_path(i))
    }

    pub fn load_mesh(&self, i: usize) -> Result<Mesh> {
        crate::geometry::load_mesh(&self.mesh_path(i))
    }

    pub fn ids(&self) -> Vec<String> {
        self.shapes.iter().map(|s| s.id.clone()).collect()
    }

    pub fn labels(&self) -> Vec<Vec<f64>> {
        self.shapes.iter().map(|s| s.attributes.clone()).collect()
    }

    pub fn normalized_car(&self, i: usize) -> NormalizedCar {
        NormalizedCar::new(&self.shapes[i].params, self.frame)
    }
}

fn shape_seed(seed: u64, i: usize) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(i as u64 + 1)
}

/// Generate `cfg.count` cars under `out_dir`: a reference mesh and an
/// analytically labelled sample set per shape, then `manifest.json`.
pub fn build_dataset(cfg: &DatasetConfig, out_dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    for sub in ["meshes", "samples"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let ranges = cfg.effective_ranges();
    let frame = corpus_frame(&ranges);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut shapes = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let params = CarParams::sample(&ranges, &mut rng)?;
        let attributes = car_attributes(&params, &ranges, &cfg.attributes)?;
        let id = format!("car_{i:04}");
        let car = NormalizedCar::new(&params, frame);
        let mesh = car.mesh(cfg.mesh_resolution)?;
        let samples = sample_sdf_with(&mesh, &cfg.sampling, shape_seed(cfg.seed, i), |p| car.sdf(p))?;
        let mesh_rel = PathBuf::from(format!("meshes/{id}.obj"));
        let samples_rel = PathBuf::from(format!("samples/{id}.bin"));
        save_mesh(&mesh, &out_dir.join(&mesh_rel))?;
        samples.save(&out_dir.join(&samples_rel))?;
        log::debug!("{id}: {} triangles, {} samples", mesh.triangles.len(), samples.len());
        shapes.push(ShapeEntry {
            id,
            params,
            attributes,
            samples: samples_rel,
            mesh: mesh_rel,
        });
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        seed: cfg.seed,
        attribute_names: cfg.attributes.clone(),
        ranges,
        frame,
        sampling: cfg.sampling.clone(),
        mesh_resolution: cfg.mesh_resolution,
        shapes,
        root: out_dir.to_path_buf(),
    };
    write_atomic(&out_dir.join(MANIFEST_FILE), manifest.to_json().as_bytes())?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::measure_attributes;

    fn small() -> DatasetConfig {
        DatasetConfig {
            count: 3,
            seed: 5,
            sampling: SamplingConfig {
                n_surface: 300,
                n_uniform: 30,
                noise_scales: [0.012, 0.05],
            },
            mesh_resolution: 32,
            ..Default::default()
        }
    }

    #[test]
    fn pinning_fixes_unlabeled_parameters() {
        let cfg = DatasetConfig {
            attributes: vec!["total_height".into(), BOXINESS.into()],
            ..small()
        };
        let r = cfg.effective_ranges();
        assert!(r.get("total_height").map(|(a, b)| b > a).unwrap());
        assert!(r.get("corner_radius").map(|(a, b)| b > a).unwrap());
        let (a, b) = r.get("width").unwrap();
        assert_eq!(a, b);
        let free = DatasetConfig { pin_unlabeled: false, ..cfg };
        assert_eq!(free.effective_ranges(), free.ranges);
    }

    #[test]
    fn frame_fits_largest_car() {
        let r = ParamRanges::default();
        let f = corpus_frame(&r);
        let car = NormalizedCar::new(&r.upper(), f);
        let m = car.mesh(48).unwrap();
        let (lo, hi) = m.bbox().unwrap();
        assert!(lo.iter().chain(&hi).all(|v| v.abs() < 0.9));
    }

    #[test]
    fn deterministic_and_complete() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = build_dataset(&small(), a.path()).unwrap();
        build_dataset(&small(), b.path()).unwrap();
        let ja = fs::read(a.path().join(MANIFEST_FILE)).unwrap();
        let jb = fs::read(b.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(ja, jb);
        for i in 0..3 {
            assert_eq!(fs::read(ma.samples_path(i)).unwrap(), fs::read(b.path().join(&ma.shapes[i].samples)).unwrap());
            assert!(ma.mesh_path(i).exists());
            assert!(ma.shapes[i].attributes.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let loaded = DatasetManifest::load(&a.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(loaded.shapes, ma.shapes);
        assert_eq!(loaded.load_samples(1).unwrap().len(), 330);
    }

    #[test]
    fn unwritable_directory_rejected() {
        let d = tempfile::tempdir().unwrap();
        let file = d.path().join("occupied");
        fs::write(&file, b"x").unwrap();
        assert!(build_dataset(&small(), &file.join("sub")).is_err());
    }

    #[test]
    fn zero_count_rejected() {
        let d = tempfile::tempdir().unwrap();
        let cfg = DatasetConfig { count: 0, ..small() };
        assert!(build_dataset(&cfg, d.path()).is_err());
    }

    #[test]
    fn extracted_height_matches_generator() {
        let r = ParamRanges::default();
        let frame = corpus_frame(&r);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let res = 64;
        let cell = 2.0 / res as f64;
        for _ in 0..4 {
            let p = CarParams::sample(&r, &mut rng).unwrap();
            let m = NormalizedCar::new(&p, frame).mesh(res).unwrap();
            let h = frame.to_original_length(measure_attributes(&m).unwrap().height);
            assert!((h - p.total_height).abs() <= frame.to_original_length(2.0 * cell), "{h} vs {}", p.total_height);
        }
    }
}
