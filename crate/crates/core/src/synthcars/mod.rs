//! Parametric car-like shapes with analytic SDFs and exact attribute labels.

pub mod dataset;
pub mod params;
pub mod shape;

pub use dataset::{build_dataset, corpus_frame, DatasetConfig, DatasetManifest, NormalizedCar, ShapeEntry, MANIFEST_FILE};
pub use params::{car_attributes, denormalize, CarParams, ParamRanges, BOXINESS, PARAM_NAMES};
pub use shape::{car_sdf, CarSolid, Primitive};
