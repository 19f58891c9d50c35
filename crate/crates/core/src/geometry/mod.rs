//! Meshes, signed distances, sampling, marching cubes and shape metrics.

pub mod bvh;
pub mod chamfer;
pub mod marching_cubes;
mod mc_tables;
pub mod measure;
pub mod mesh;
pub mod sdf;
pub mod v3;

pub use chamfer::chamfer;
pub use marching_cubes::{marching_cubes, ScalarGrid};
pub use measure::{measure_attributes, MeasuredAttributes};
pub use mesh::{load_mesh, save_mesh, Mesh, Normalization};
pub use sdf::{sample_sdf, sample_sdf_with, signed_distance, MeshSdf, SamplingConfig, SdfSampleSet, SignedDistance};
pub use v3::Vec3;
