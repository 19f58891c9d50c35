use std::f64::consts::PI;

use crate::geometry::Vec3;
use crate::numerics::Tensor;

/// Sinusoidal features of one scalar: `(sin(2^k pi x), cos(2^k pi x))` for
/// `k` in `0..bands`.
pub fn encode_scalar(x: f64, bands: usize, out: &mut Vec<f64>) {
    let mut f = PI;
    for _ in 0..bands {
        let (s, c) = (f * x).sin_cos();
        out.push(s);
        out.push(c);
        f *= 2.0;
    }
}

/// Positional encoding of a point: coordinate-major, then band, then
/// (sin, cos). Length `6 * bands`.
pub fn positional_encode(p: Vec3, bands: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(6 * bands);
    for x in p {
        encode_scalar(x, bands, &mut out);
    }
    out
}

/// Rows of decoder position features: encoded (`6 * bands` columns) when
/// `bands > 0`, raw coordinates otherwise.
pub fn position_features(points: &[Vec3], bands: usize) -> Tensor {
    if bands == 0 {
        let data = points.iter().flat_map(|p| p.iter().copied()).collect();
        return Tensor::matrix(points.len(), 3, data);
    }
    let mut data = Vec::with_capacity(points.len() * 6 * bands);
    for p in points {
        for &x in p {
            encode_scalar(x, bands, &mut data);
        }
    }
    Tensor::matrix(points.len(), 6 * bands, data)
}
