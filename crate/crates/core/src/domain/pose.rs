use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::DomainError;

/// Position in meters plus a planar heading in radians.
///
/// Yaw is always kept in `[-π, π)`; decoding from JSON normalizes it and
/// rejects non-finite coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPose")]
pub struct Pose3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

#[derive(Deserialize)]
struct RawPose {
    x: f64,
    y: f64,
    #[serde(default)]
    z: f64,
    #[serde(default)]
    yaw: f64,
}

impl TryFrom<RawPose> for Pose3 {
    type Error = DomainError;

    fn try_from(raw: RawPose) -> Result<Self, Self::Error> {
        Pose3::new(raw.x, raw.y, raw.z, raw.yaw)
    }
}

impl Default for Pose3 {
    fn default() -> Self {
        Self::ORIGIN
    }
}

impl Pose3 {
    pub const ORIGIN: Pose3 = Pose3 { x: 0.0, y: 0.0, z: 0.0, yaw: 0.0 };

    pub fn new(x: f64, y: f64, z: f64, yaw: f64) -> Result<Self, DomainError> {
        if !(x.is_finite() && y.is_finite() && z.is_finite() && yaw.is_finite()) {
            return Err(DomainError::NonFinitePose);
        }
        Ok(Self { x, y, z, yaw: normalize_yaw(yaw) })
    }

    /// Planar point with zero heading. Panics on non-finite input.
    pub fn at(x: f64, y: f64) -> Self {
        Self::new(x, y, 0.0, 0.0).expect("finite coordinates")
    }

    pub fn distance_to(&self, other: &Pose3) -> f64 {
        pose_distance(self, other)
    }
}

/// Euclidean distance over `(x, y, z)`. Heading is ignored.
pub fn pose_distance(a: &Pose3, b: &Pose3) -> f64 {
    let (dx, dy, dz) = (a.x - b.x, a.y - b.y, a.z - b.z);
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Wraps an angle into `[-π, π)`.
pub fn normalize_yaw(yaw: f64) -> f64 {
    if (-PI..PI).contains(&yaw) {
        return yaw;
    }
    let wrapped = (yaw + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if wrapped >= PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn distance_examples() {
        let o = Pose3::ORIGIN;
        assert_eq!(pose_distance(&o, &o), 0.0);
        assert_eq!(pose_distance(&o, &Pose3::at(3.0, 4.0)), 5.0);
        let p = Pose3::new(1.0, 2.0, 2.0, 0.0).unwrap();
        // sqrt(1 + 4 + 4)
        assert_eq!(pose_distance(&p, &o), 9.0f64.sqrt());
        assert_eq!(pose_distance(&p, &o), 3.0);
    }

    #[test]
    fn yaw_is_ignored_by_distance() {
        let a = Pose3::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let b = Pose3::new(1.0, 1.0, 0.0, 3.0).unwrap();
        assert_eq!(pose_distance(&a, &b), 0.0);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(Pose3::new(f64::NAN, 0.0, 0.0, 0.0).is_err());
        assert!(Pose3::new(0.0, f64::INFINITY, 0.0, 0.0).is_err());
        assert!(Pose3::new(0.0, 0.0, 0.0, f64::NEG_INFINITY).is_err());
    }

    #[test]
    fn yaw_wraps_into_half_open_interval() {
        assert_eq!(normalize_yaw(PI), -PI);
        assert_eq!(normalize_yaw(-PI), -PI);
        assert!((normalize_yaw(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(normalize_yaw(-1e-17), -1e-17);
    }

    #[test]
    fn decode_normalizes_and_defaults() {
        let p: Pose3 = serde_json::from_str(r#"{"x":1,"y":2,"yaw":4.0}"#).unwrap();
        assert_eq!(p.z, 0.0);
        assert!(p.yaw >= -PI && p.yaw < PI);
        assert!((p.yaw - (4.0 - 2.0 * PI)).abs() < 1e-12);
    }

    fn pose() -> impl Strategy<Value = Pose3> {
        (-1e3..1e3f64, -1e3..1e3f64, -1e2..1e2f64, -10.0..10.0f64)
            .prop_map(|(x, y, z, yaw)| Pose3::new(x, y, z, yaw).unwrap())
    }

    proptest! {
        #[test]
        fn metric_axioms(a in pose(), b in pose(), c in pose()) {
            let ab = pose_distance(&a, &b);
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, pose_distance(&b, &a));
            prop_assert!(pose_distance(&a, &c) <= ab + pose_distance(&b, &c) + 1e-9);
        }

        #[test]
        fn normalized_yaw_in_range(yaw in -1e4..1e4f64) {
            let n = normalize_yaw(yaw);
            prop_assert!((-PI..PI).contains(&n));
            prop_assert!(((n - yaw) / (2.0 * PI)).fract().abs() < 1e-6
                || (1.0 - ((n - yaw) / (2.0 * PI)).fract().abs()) < 1e-6);
        }

        #[test]
        fn json_round_trip(p in pose()) {
            let s = serde_json::to_string(&p).unwrap();
            let back: Pose3 = serde_json::from_str(&s).unwrap();
            prop_assert_eq!(p, back);
        }
    }
}
