use serde::{Deserialize, Serialize};

use super::cloud::{Point, PointCloud};

/// Rotation by `r` radians about +y (counter-clockwise seen from +y), then translation by `t`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RigidPose {
    pub t: Point,
    pub r: f64,
}

impl RigidPose {
    pub fn new(t: Point, r: f64) -> Self {
        Self { t, r }
    }

    pub fn apply(&self, p: Point) -> Point {
        let q = rotate_yaw(p, self.r);
        [q[0] + self.t[0], q[1] + self.t[1], q[2] + self.t[2]]
    }

    /// Maps posed points back: `inverse().apply(apply(p)) == p`.
    pub fn inverse(&self) -> InversePose {
        InversePose(*self)
    }

    /// Yaw wrapped into `[0, 2π)`.
    pub fn wrapped_yaw(&self) -> f64 {
        self.r.rem_euclid(std::f64::consts::TAU)
    }

    /// `self ∘ inner`: apply `inner` first.
    pub fn compose(&self, inner: &RigidPose) -> RigidPose {
        RigidPose {
            t: self.apply(inner.t),
            r: self.r + inner.r,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct InversePose(RigidPose);

impl InversePose {
    pub fn apply(&self, p: Point) -> Point {
        let t = self.0.t;
        rotate_yaw([p[0] - t[0], p[1] - t[1], p[2] - t[2]], -self.0.r)
    }
}

pub fn rotate_yaw(p: Point, r: f64) -> Point {
    let (s, c) = r.sin_cos();
    [c * p[0] + s * p[2], p[1], -s * p[0] + c * p[2]]
}

pub fn apply_pose(cloud: &PointCloud, pose: &RigidPose) -> PointCloud {
    map_points(cloud, |p| pose.apply(p))
}

pub fn apply_inverse_pose(cloud: &PointCloud, pose: &RigidPose) -> PointCloud {
    let inv = pose.inverse();
    map_points(cloud, |p| inv.apply(p))
}

pub(crate) fn map_points(cloud: &PointCloud, f: impl Fn(Point) -> Point) -> PointCloud {
    PointCloud::new(cloud.points().iter().map(|&p| f(p)).collect()).expect("rigid maps keep clouds valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn quarter_turn_convention() {
        let p = rotate_yaw([1.0, 0.0, 0.0], FRAC_PI_2);
        assert!(p[0].abs() < 1e-15 && p[1] == 0.0 && (p[2] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn translation_only() {
        let pose = RigidPose::new([1.0, 2.0, 3.0], 0.0);
        assert_eq!(pose.apply([0.0; 3]), [1.0, 2.0, 3.0]);
    }

    #[test]
    fn inverse_round_trip() {
        let pose = RigidPose::new([0.3, -1.2, 4.0], 2.7);
        let p = [0.25, 0.5, -0.75];
        let back = pose.inverse().apply(pose.apply(p));
        for k in 0..3 {
            assert!((back[k] - p[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn compose_matches_sequential_application() {
        let a = RigidPose::new([0.1, 0.2, 0.3], 0.4);
        let b = RigidPose::new([-1.0, 0.5, 2.0], -1.3);
        let p = [0.7, -0.2, 0.9];
        let lhs = a.compose(&b).apply(p);
        let rhs = a.apply(b.apply(p));
        for k in 0..3 {
            assert!((lhs[k] - rhs[k]).abs() < 1e-12);
        }
    }
}
