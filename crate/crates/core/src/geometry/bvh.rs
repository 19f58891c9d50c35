//! Bounding-volume hierarchy over mesh triangles for closest-point and ray
//! queries. Immutable once built.

use super::mesh::Mesh;
use super::v3::{self, Vec3};

const LEAF_SIZE: usize = 4;

#[derive(Clone, Copy, Debug)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            lo: [f64::INFINITY; 3],
            hi: [f64::NEG_INFINITY; 3],
        }
    }

    fn grow(&mut self, p: Vec3) {
        self.lo = v3::min(self.lo, p);
        self.hi = v3::max(self.hi, p);
    }

    fn dist2(&self, p: Vec3) -> f64 {
        let mut d = 0.0;
        for k in 0..3 {
            let e = (self.lo[k] - p[k]).max(0.0).max(p[k] - self.hi[k]);
            d += e * e;
        }
        d
    }

    /// Slab test against the ray `o + t d`, `t > 0`.
    fn hit(&self, o: Vec3, inv: Vec3) -> bool {
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for k in 0..3 {
            let a = (self.lo[k] - o[k]) * inv[k];
            let b = (self.hi[k] - o[k]) * inv[k];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        t0 <= t1
    }
}

#[derive(Clone, Debug)]
enum Node {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Bvh {
    tris: Vec<[Vec3; 3]>,
    nodes: Vec<Node>,
}

/// Closest point on triangle `abc` to `p` (Ericson, Real-Time Collision Detection 5.1.5).
pub fn closest_point_on_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Vec3 {
    let ab = v3::sub(b, a);
    let ac = v3::sub(c, a);
    let ap = v3::sub(p, a);
    let d1 = v3::dot(ab, ap);
    let d2 = v3::dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = v3::sub(p, b);
    let d3 = v3::dot(ab, bp);
    let d4 = v3::dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return v3::add(a, v3::scale(ab, v));
    }
    let cp = v3::sub(p, c);
    let d5 = v3::dot(ab, cp);
    let d6 = v3::dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return v3::add(a, v3::scale(ac, w));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return v3::add(b, v3::scale(v3::sub(c, b), w));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    v3::add(a, v3::add(v3::scale(ab, v), v3::scale(ac, w)))
}

/// Möller–Trumbore; returns the ray parameter of a hit with `t > 0`.
fn ray_triangle(o: Vec3, d: Vec3, tri: &[Vec3; 3]) -> Option<f64> {
    let e1 = v3::sub(tri[1], tri[0]);
    let e2 = v3::sub(tri[2], tri[0]);
    let pv = v3::cross(d, e2);
    let det = v3::dot(e1, pv);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    let tv = v3::sub(o, tri[0]);
    let u = v3::dot(tv, pv) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qv = v3::cross(tv, e1);
    let v = v3::dot(d, qv) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = v3::dot(e2, qv) * inv;
    (t > 0.0).then_some(t)
}

impl Bvh {
    pub fn build(mesh: &Mesh) -> Self {
        let mut tris: Vec<[Vec3; 3]> = (0..mesh.triangles.len()).map(|i| mesh.triangle(i)).collect();
        let mut nodes = Vec::new();
        if !tris.is_empty() {
            let n = tris.len();
            Self::build_rec(&mut tris, 0, n, &mut nodes);
        }
        Self { tris, nodes }
    }

    fn build_rec(tris: &mut [[Vec3; 3]], start: usize, end: usize, nodes: &mut Vec<Node>) -> usize {
        let mut bounds = Aabb::empty();
        let mut cb = Aabb::empty();
        for t in &tris[start..end] {
            for &p in t {
                bounds.grow(p);
            }
            cb.grow(v3::scale(v3::add(t[0], v3::add(t[1], t[2])), 1.0 / 3.0));
        }
        let idx = nodes.len();
        if end - start <= LEAF_SIZE {
            nodes.push(Node::Leaf { bounds, start, end });
            return idx;
        }
        let ext = v3::sub(cb.hi, cb.lo);
        let axis = if ext[0] >= ext[1] && ext[0] >= ext[2] {
            0
        } else if ext[1] >= ext[2] {
            1
        } else {
            2
        };
        let mid = (start + end) / 2;
        let key = |t: &[Vec3; 3]| t[0][axis] + t[1][axis] + t[2][axis];
        tris[start..end].select_nth_unstable_by(mid - start, |a, b| key(a).total_cmp(&key(b)));
        nodes.push(Node::Leaf { bounds, start, end }); // placeholder
        let left = Self::build_rec(tris, start, mid, nodes);
        let right = Self::build_rec(tris, mid, end, nodes);
        nodes[idx] = Node::Inner { bounds, left, right };
        idx
    }

    pub fn is_empty(&self) -> bool {
        self.tris.is_empty()
    }

    /// Squared distance and closest surface point.
    pub fn closest(&self, p: Vec3) -> Option<(f64, Vec3)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (f64::INFINITY, p);
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if node.bounds().dist2(p) >= best.0 {
                continue;
            }
            match *node {
                Node::Leaf { start, end, .. } => {
                    for t in &self.tris[start..end] {
                        let q = closest_point_on_triangle(p, t[0], t[1], t[2]);
                        let d = v3::dist2(p, q);
                        if d < best.0 {
                            best = (d, q);
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = self.nodes[left].bounds().dist2(p);
                    let dr = self.nodes[right].bounds().dist2(p);
                    if dl < dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        Some(best)
    }

    /// Number of surface crossings along the ray `o + t d`, `t > 0`.
    pub fn count_hits(&self, o: Vec3, d: Vec3) -> usize {
        if self.nodes.is_empty() {
            return 0;
        }
        let inv = [1.0 / d[0], 1.0 / d[1], 1.0 / d[2]];
        let mut hits = 0;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if !node.bounds().hit(o, inv) {
                continue;
            }
            match *node {
                Node::Leaf { start, end, .. } => {
                    hits += self.tris[start..end].iter().filter(|t| ray_triangle(o, d, t).is_some()).count();
                }
                Node::Inner { left, right, .. } => {
                    stack.push(left);
                    stack.push(right);
                }
            }
        }
        hits
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closest_point_regions() {
        let (a, b, c) = ([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        assert!(v3::dist2(closest_point_on_triangle([0.2, 0.2, 1.0], a, b, c), [0.2, 0.2, 0.0]) < 1e-24);
        assert_eq!(closest_point_on_triangle([-1.0, -1.0, 0.0], a, b, c), a);
        assert_eq!(closest_point_on_triangle([0.5, -1.0, 0.0], a, b, c), [0.5, 0.0, 0.0]);
        let q = closest_point_on_triangle([1.0, 1.0, 0.0], a, b, c);
        assert!(v3::dist2(q, [0.5, 0.5, 0.0]) < 1e-24);
    }

    #[test]
    fn bvh_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let m = Mesh::uv_sphere([0.1, 0.0, -0.2], 0.7, 12, 16);
        let bvh = Bvh::build(&m);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let p = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let brute = (0..m.triangles.len())
                .map(|i| {
                    let [a, b, c] = m.triangle(i);
                    v3::dist2(p, closest_point_on_triangle(p, a, b, c))
                })
                .fold(f64::INFINITY, f64::min);
            let (d, _) = bvh.closest(p).unwrap();
            assert!((d - brute).abs() < 1e-15);
        }
    }
}
