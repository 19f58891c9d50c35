use serde::{Deserialize, Serialize};

use super::mesh::Mesh;
use crate::error::{Error, Result};

/// Bounding-box extents: x is length, y is width, z is height.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasuredAttributes {
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

pub fn measure_attributes(mesh: &Mesh) -> Result<MeasuredAttributes> {
    let (lo, hi) = mesh.bbox().ok_or(Error::EmptyMesh("measure"))?;
    Ok(MeasuredAttributes {
        length: hi[0] - lo[0],
        width: hi[1] - lo[1],
        height: hi[2] - lo[2],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_extents() {
        let m = Mesh::cuboid([0.0; 3], [2.0, 1.0, 0.8]);
        let a = measure_attributes(&m).unwrap();
        assert_eq!((a.length, a.width, a.height), (2.0, 1.0, 0.8));
    }

    #[test]
    fn translation_invariant() {
        let m = Mesh::cuboid([-1.0, -0.5, -0.4], [1.0, 0.5, 0.4]);
        let a = measure_attributes(&m).unwrap();
        let b = measure_attributes(&m.translated([0.25, -3.0, 0.5])).unwrap();
        assert!((a.length - b.length).abs() < 1e-12);
        assert!((a.width - b.width).abs() < 1e-12);
        assert!((a.height - b.height).abs() < 1e-12);
    }

    #[test]
    fn empty_is_error() {
        assert!(measure_attributes(&Mesh::default()).is_err());
    }
}
