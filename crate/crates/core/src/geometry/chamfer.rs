use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::mesh::Mesh;
use super::v3::{self, Vec3};
use crate::error::{Error, Result};

/// Static 3-d tree for nearest-neighbour queries.
///
/// The tree is implicit: each slice's median (on the depth's axis) is the
/// node, with the halves on either side as children.
pub struct PointIndex {
    points: Vec<Vec3>,
}

impl PointIndex {
    pub fn new(mut points: Vec<Vec3>) -> Self {
        build(&mut points[..], 0);
        Self { points }
    }

    /// Squared distance to the nearest indexed point.
    pub fn nearest2(&self, q: Vec3) -> f64 {
        let mut best = f64::INFINITY;
        search(&self.points, q, 0, &mut best);
        best
    }
}

fn build(pts: &mut [Vec3], depth: usize) {
    if pts.len() <= 1 {
        return;
    }
    let axis = depth % 3;
    let mid = pts.len() / 2;
    pts.select_nth_unstable_by(mid, |a, b| a[axis].total_cmp(&b[axis]));
    let (left, rest) = pts.split_at_mut(mid);
    build(left, depth + 1);
    build(&mut rest[1..], depth + 1);
}

fn search(pts: &[Vec3], q: Vec3, depth: usize, best: &mut f64) {
    if pts.is_empty() {
        return;
    }
    let axis = depth % 3;
    let mid = pts.len() / 2;
    let p = pts[mid];
    let d = v3::dist2(p, q);
    if d < *best {
        *best = d;
    }
    let diff = q[axis] - p[axis];
    let (near, far) = if diff < 0.0 {
        (&pts[..mid], &pts[mid + 1..])
    } else {
        (&pts[mid + 1..], &pts[..mid])
    };
    search(near, q, depth + 1, best);
    if diff * diff < *best {
        search(far, q, depth + 1, best);
    }
}

/// Mean over `from` of the squared distance to the nearest point of `to`.
pub fn directed_mean_sq(from: &[Vec3], to: &PointIndex) -> f64 {
    from.iter().map(|&p| to.nearest2(p)).sum::<f64>() / from.len() as f64
}

/// Symmetric chamfer distance between surface samplings of two meshes.
///
/// Both meshes are sampled with `n_points` area-uniform points from RNG
/// streams seeded identically by `seed`. The result is the average of the two
/// directed mean squared nearest-neighbour distances.
pub fn chamfer(a: &Mesh, b: &Mesh, n_points: usize, seed: u64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyMesh("chamfer"));
    }
    if n_points == 0 {
        return Err(Error::InvalidArgument("chamfer needs n_points >= 1".into()));
    }
    let pa = a.sample_surface(n_points, &mut ChaCha8Rng::seed_from_u64(seed));
    let pb = b.sample_surface(n_points, &mut ChaCha8Rng::seed_from_u64(seed));
    Ok(chamfer_points(&pa, &pb))
}

pub fn chamfer_points(pa: &[Vec3], pb: &[Vec3]) -> f64 {
    let ia = PointIndex::new(pa.to_vec());
    let ib = PointIndex::new(pb.to_vec());
    0.5 * (directed_mean_sq(pa, &ib) + directed_mean_sq(pb, &ia))
}
