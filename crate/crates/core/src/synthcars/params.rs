use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Generator parameter names in canonical order.
pub const PARAM_NAMES: [&str; 10] = [
    "hood_length",
    "cabin_length",
    "rear_length",
    "total_height",
    "cabin_height",
    "width",
    "wheel_radius",
    "wheelbase",
    "hood_height",
    "corner_radius",
];

/// Proxy style label derived from `corner_radius`: 1 for the sharpest
/// corners in range, 0 for the roundest, quadratic in between.
pub const BOXINESS: &str = "boxiness";

/// Default `[min, max]` per parameter, in metres.
pub const DEFAULT_RANGES: [(f64, f64); 10] = [
    (0.8, 1.2),
    (1.8, 2.4),
    (0.7, 1.2),
    (1.3, 1.9),
    (0.45, 0.7),
    (1.6, 2.0),
    (0.28, 0.38),
    (2.1, 2.7),
    (0.7, 0.95),
    (0.03, 0.12),
];

/// Parameters of one synthetic car, in metres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CarParams {
    pub hood_length: f64,
    pub cabin_length: f64,
    pub rear_length: f64,
    pub total_height: f64,
    pub cabin_height: f64,
    pub width: f64,
    pub wheel_radius: f64,
    pub wheelbase: f64,
    pub hood_height: f64,
    pub corner_radius: f64,
}

impl CarParams {
    pub fn from_array(v: [f64; 10]) -> Self {
        Self {
            hood_length: v[0],
            cabin_length: v[1],
            rear_length: v[2],
            total_height: v[3],
            cabin_height: v[4],
            width: v[5],
            wheel_radius: v[6],
            wheelbase: v[7],
            hood_height: v[8],
            corner_radius: v[9],
        }
    }

    pub fn to_array(&self) -> [f64; 10] {
        [
            self.hood_length,
            self.cabin_length,
            self.rear_length,
            self.total_height,
            self.cabin_height,
            self.width,
            self.wheel_radius,
            self.wheelbase,
            self.hood_height,
            self.corner_radius,
        ]
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        param_index(name).map(|i| self.to_array()[i])
    }

    /// Every parameter at the midpoint of its default range.
    pub fn midpoint() -> Self {
        Self::from_array(DEFAULT_RANGES.map(|(a, b)| 0.5 * (a + b)))
    }

    pub fn total_length(&self) -> f64 {
        self.hood_length + self.cabin_length + self.rear_length
    }

    /// Structural constraints independent of any range.
    pub fn check_consistency(&self) -> Result<()> {
        let v = self.to_array();
        if let Some(i) = v.iter().position(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::InvalidArgument(format!("{} must be positive, got {}", PARAM_NAMES[i], v[i])));
        }
        if self.wheelbase + 2.0 * self.wheel_radius >= self.total_length() {
            return Err(Error::InvalidArgument("wheels extend past the body length".into()));
        }
        if self.cabin_height >= self.total_height {
            return Err(Error::InvalidArgument("cabin height must be below total height".into()));
        }
        let clearance = super::shape::FLOOR_HEIGHT_RATIO * self.wheel_radius;
        let belt = self.total_height - self.cabin_height;
        let min_half = [
            0.5 * (self.hood_height - clearance),
            0.5 * (belt - clearance),
            0.5 * (self.cabin_height + self.corner_radius),
            0.5 * self.hood_length,
        ]
        .into_iter()
        .fold(f64::INFINITY, f64::min);
        if self.corner_radius >= min_half {
            return Err(Error::InvalidArgument("corner radius too large for the body blocks".into()));
        }
        if 2.0 * super::shape::WHEEL_HALF_WIDTH >= 0.5 * self.width {
            return Err(Error::InvalidArgument("body too narrow for the wheels".into()));
        }
        Ok(())
    }

    /// Draw each parameter uniformly in its range, redrawing until the
    /// consistency constraints hold.
    pub fn sample<R: Rng>(ranges: &ParamRanges, rng: &mut R) -> Result<Self> {
        for _ in 0..1000 {
            let v = std::array::from_fn(|i| {
                let (lo, hi) = ranges.0[i];
                lo + (hi - lo) * rng.gen::<f64>()
            });
            let p = Self::from_array(v);
            if p.check_consistency().is_ok() {
                return Ok(p);
            }
        }
        Err(Error::InvalidArgument("parameter ranges admit no consistent car".into()))
    }
}

pub fn param_index(name: &str) -> Option<usize> {
    PARAM_NAMES.iter().position(|n| *n == name)
}

/// `[min, max]` per parameter in canonical order. A range with
/// `min == max` pins the parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, [f64; 2]>", into = "BTreeMap<String, [f64; 2]>")]
pub struct ParamRanges(pub [(f64, f64); 10]);

impl Default for ParamRanges {
    fn default() -> Self {
        Self(DEFAULT_RANGES)
    }
}

impl ParamRanges {
    pub fn get(&self, name: &str) -> Option<(f64, f64)> {
        param_index(name).map(|i| self.0[i])
    }

    /// Pin every parameter not listed in `free` to its midpoint.
    pub fn pin_except(mut self, free: &[&str]) -> Self {
        for (i, name) in PARAM_NAMES.iter().enumerate() {
            if !free.contains(name) {
                let (a, b) = self.0[i];
                self.0[i] = (0.5 * (a + b), 0.5 * (a + b));
            }
        }
        self
    }

    pub fn upper(&self) -> CarParams {
        CarParams::from_array(self.0.map(|r| r.1))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in PARAM_NAMES.iter().zip(self.0) {
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
                return Err(Error::InvalidArgument(format!("bad range for {name}: [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    fn check_in_range(&self, p: &CarParams) -> Result<()> {
        for ((name, (lo, hi)), v) in PARAM_NAMES.iter().zip(self.0).zip(p.to_array()) {
            if !(lo..=hi).contains(&v) {
                return Err(Error::OutOfRange {
                    name: name.to_string(),
                    value: v,
                    min: lo,
                    max: hi,
                });
            }
        }
        Ok(())
    }
}

impl TryFrom<BTreeMap<String, [f64; 2]>> for ParamRanges {
    type Error = String;

    fn try_from(map: BTreeMap<String, [f64; 2]>) -> std::result::Result<Self, String> {
        let mut out = DEFAULT_RANGES;
        for (k, [lo, hi]) in map {
            let i = param_index(&k).ok_or_else(|| format!("unknown parameter `{k}`"))?;
            out[i] = (lo, hi);
        }
        let r = ParamRanges(out);
        r.validate().map_err(|e| e.to_string())?;
        Ok(r)
    }
}

impl From<ParamRanges> for BTreeMap<String, [f64; 2]> {
    fn from(r: ParamRanges) -> Self {
        PARAM_NAMES.iter().zip(r.0).map(|(n, (a, b))| (n.to_string(), [a, b])).collect()
    }
}

/// Check that `name` is a usable attribute under `ranges`.
pub fn check_attribute(name: &str, ranges: &ParamRanges) -> Result<()> {
    let key = if name == BOXINESS { "corner_radius" } else { name };
    let (lo, hi) = ranges
        .get(key)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown attribute `{name}`")))?;
    if !(hi > lo) {
        return Err(Error::InvalidArgument(format!("attribute `{name}` has a pinned range")));
    }
    Ok(())
}

/// Normalized labels `(param - min) / (max - min)` for each named attribute.
pub fn car_attributes(params: &CarParams, ranges: &ParamRanges, names: &[String]) -> Result<Vec<f64>> {
    ranges.check_in_range(params)?;
    names
        .iter()
        .map(|name| {
            check_attribute(name, ranges)?;
            if name == BOXINESS {
                let (lo, hi) = ranges.0[9];
                let t = (params.corner_radius - lo) / (hi - lo);
                return Ok(1.0 - t * t);
            }
            let (lo, hi) = ranges.get(name).expect("checked");
            Ok((params.get(name).expect("checked") - lo) / (hi - lo))
        })
        .collect()
}

/// Inverse of the affine labels: parameter value for a normalized attribute.
pub fn denormalize(name: &str, value: f64, ranges: &ParamRanges) -> Result<f64> {
    check_attribute(name, ranges)?;
    if name == BOXINESS {
        let (lo, hi) = ranges.0[9];
        return Ok(lo + (hi - lo) * (1.0 - value).max(0.0).sqrt());
    }
    let (lo, hi) = ranges.get(name).expect("checked");
    Ok(lo + value * (hi - lo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn midpoint_endpoints() {
        let r = ParamRanges::default();
        let all = names(&PARAM_NAMES);
        let mid = car_attributes(&CarParams::midpoint(), &r, &all).unwrap();
        assert!(mid.iter().all(|v| (v - 0.5).abs() < 1e-12));
        let lo = CarParams::from_array(DEFAULT_RANGES.map(|x| x.0));
        let hi = r.upper();
        assert!(car_attributes(&lo, &r, &all).unwrap().iter().all(|v| *v == 0.0));
        assert!(car_attributes(&hi, &r, &all).unwrap().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn out_of_range_rejected() {
        let mut p = CarParams::midpoint();
        p.width = 2.5;
        let e = car_attributes(&p, &ParamRanges::default(), &names(&["width"])).unwrap_err();
        assert!(matches!(e, Error::OutOfRange { ref name, .. } if name == "width"));
    }

    #[test]
    fn pinned_attribute_rejected() {
        let r = ParamRanges::default().pin_except(&["width"]);
        assert!(car_attributes(&CarParams::midpoint(), &r, &names(&["width"])).is_ok());
        assert!(car_attributes(&CarParams::midpoint(), &r, &names(&["hood_length"])).is_err());
    }

    #[test]
    fn ranges_json_roundtrip_and_unknown_key() {
        let r = ParamRanges::default();
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<ParamRanges>(&s).unwrap(), r);
        assert!(serde_json::from_str::<ParamRanges>(r#"{"spoiler":[0,1]}"#).is_err());
        assert!(serde_json::from_str::<ParamRanges>(r#"{"width":[2.0,1.0]}"#).is_err());
    }

    #[test]
    fn default_ranges_are_always_consistent() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let hi = ParamRanges::default().upper();
        let lo = CarParams::from_array(DEFAULT_RANGES.map(|x| x.0));
        assert!(hi.check_consistency().is_ok() && lo.check_consistency().is_ok());
        for _ in 0..1000 {
            CarParams::sample(&ParamRanges::default(), &mut rng).unwrap().check_consistency().unwrap();
        }
    }

    proptest! {
        #[test]
        fn labels_invert_exactly(seed in any::<u64>()) {
            let r = ParamRanges::default();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let p = CarParams::sample(&r, &mut rng).unwrap();
            let mut all = names(&PARAM_NAMES);
            all.push(BOXINESS.to_string());
            let a = car_attributes(&p, &r, &all).unwrap();
            for (name, v) in all.iter().zip(&a) {
                prop_assert!((0.0..=1.0).contains(v));
                let back = denormalize(name, *v, &r).unwrap();
                let orig = p.get(if name == BOXINESS { "corner_radius" } else { name }).unwrap();
                prop_assert!((back - orig).abs() < 1e-12, "{} {} {}", name, back, orig);
            }
        }
    }
}
