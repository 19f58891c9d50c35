//! Exact primitive SDFs and the composite car solid.

use crate::geometry::v3::{self, Vec3};

use super::params::CarParams;

/// Half-width of each wheel along y (metres).
pub const WHEEL_HALF_WIDTH: f64 = 0.11;
/// Greenhouse width as a fraction of the body width.
pub const GREENHOUSE_WIDTH_RATIO: f64 = 0.85;
/// Body floor height as a fraction of the wheel radius; the wheels show
/// below it.
pub const FLOOR_HEIGHT_RATIO: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Primitive {
    /// Axis-aligned box with rounded edges; `half` includes the rounding.
    RoundedBox { center: Vec3, half: Vec3, radius: f64 },
    /// Solid cylinder whose axis is parallel to y.
    CylinderY { center: Vec3, radius: f64, half_len: f64 },
}

impl Primitive {
    pub fn sdf(&self, p: Vec3) -> f64 {
        match *self {
            Primitive::RoundedBox { center, half, radius } => {
                let d = v3::sub(p, center);
                let q = [
                    d[0].abs() - (half[0] - radius),
                    d[1].abs() - (half[1] - radius),
                    d[2].abs() - (half[2] - radius),
                ];
                let outside = v3::norm([q[0].max(0.0), q[1].max(0.0), q[2].max(0.0)]);
                outside + q[0].max(q[1]).max(q[2]).min(0.0) - radius
            }
            Primitive::CylinderY { center, radius, half_len } => {
                let dx = p[0] - center[0];
                let dz = p[2] - center[2];
                let a = (dx * dx + dz * dz).sqrt() - radius;
                let b = (p[1] - center[1]).abs() - half_len;
                a.max(b).min(0.0) + (a.max(0.0).powi(2) + b.max(0.0).powi(2)).sqrt()
            }
        }
    }

    /// Point-in-solid by direct geometric test (no distance evaluation).
    pub fn contains(&self, p: Vec3) -> bool {
        match *self {
            Primitive::RoundedBox { center, half, radius } => {
                // inside iff within `radius` of the shrunken core box
                let mut d2 = 0.0;
                for k in 0..3 {
                    let core = half[k] - radius;
                    let c = (p[k] - center[k]).clamp(-core, core);
                    d2 += (p[k] - center[k] - c).powi(2);
                }
                d2 < radius * radius || (radius == 0.0 && d2 == 0.0)
            }
            Primitive::CylinderY { center, radius, half_len } => {
                let dx = p[0] - center[0];
                let dz = p[2] - center[2];
                dx * dx + dz * dz < radius * radius && (p[1] - center[1]).abs() < half_len
            }
        }
    }
}

/// Components of the car in its metric frame: ground at z = 0, centred on
/// x = 0 and y = 0, front towards +x.
pub fn components(c: &CarParams) -> Vec<Primitive> {
    let length = c.total_length();
    let front = 0.5 * length;
    let rear = -0.5 * length;
    let half_w = 0.5 * c.width;
    let r = c.corner_radius;
    let clearance = FLOOR_HEIGHT_RATIO * c.wheel_radius;
    let belt = c.total_height - c.cabin_height;
    let hood_start = front - c.hood_length;

    let slab = |x0: f64, x1: f64, z0: f64, z1: f64, hw: f64| Primitive::RoundedBox {
        center: [0.5 * (x0 + x1), 0.0, 0.5 * (z0 + z1)],
        half: [0.5 * (x1 - x0), hw, 0.5 * (z1 - z0)],
        radius: r,
    };
    let mut parts = vec![
        // hood block, overlapping the body by one rounding radius
        slab(hood_start - r, front, clearance, c.hood_height, half_w),
        // cabin and rear body up to the belt line
        slab(rear, hood_start, clearance, belt, half_w),
        // greenhouse
        slab(
            hood_start - c.cabin_length,
            hood_start,
            belt - r,
            c.total_height,
            GREENHOUSE_WIDTH_RATIO * half_w,
        ),
    ];
    let wy = half_w - WHEEL_HALF_WIDTH;
    for x in [-0.5 * c.wheelbase, 0.5 * c.wheelbase] {
        for y in [-wy, wy] {
            parts.push(Primitive::CylinderY {
                center: [x, y, c.wheel_radius],
                radius: c.wheel_radius,
                half_len: WHEEL_HALF_WIDTH,
            });
        }
    }
    parts
}

/// Signed distance to the car in its metric frame (min-union of the
/// components: exact outside, a lower bound on depth inside).
pub fn car_sdf(params: &CarParams, p: Vec3) -> f64 {
    components(params).iter().map(|c| c.sdf(p)).fold(f64::INFINITY, f64::min)
}

/// Evaluator with components prepared once.
#[derive(Clone, Debug)]
pub struct CarSolid {
    parts: Vec<Primitive>,
}

impl CarSolid {
    pub fn new(params: &CarParams) -> Self {
        Self {
            parts: components(params),
        }
    }

    pub fn parts(&self) -> &[Primitive] {
        &self.parts
    }

    pub fn sdf(&self, p: Vec3) -> f64 {
        self.parts.iter().map(|c| c.sdf(p)).fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, p: Vec3) -> bool {
        self.parts.iter().any(|c| c.contains(p))
    }
}
