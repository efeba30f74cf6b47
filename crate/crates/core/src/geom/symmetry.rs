use serde::{Deserialize, Serialize};

use super::cloud::{dot, sub, Point, PointCloud};
use super::kernels::dist2;
use super::pose::map_points;
use crate::error::{Error, Result};

/// Vertical plane through `point` with horizontal unit `normal`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetryPlane {
    point: Point,
    normal: Point,
}

impl SymmetryPlane {
    pub fn new(point: Point, normal: Point) -> Result<Self> {
        let len = (normal[0] * normal[0] + normal[2] * normal[2]).sqrt();
        if normal[1].abs() > 1e-12 || (dot(normal, normal).sqrt() - 1.0).abs() > 1e-9 || len == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "symmetry normal {normal:?} must be a horizontal unit vector"
            )));
        }
        Ok(Self {
            point,
            normal: [normal[0] / len, 0.0, normal[2] / len],
        })
    }

    /// Plane whose normal is +x rotated by `angle` about +y.
    pub fn from_angle(point: Point, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            point,
            normal: [c, 0.0, -s],
        }
    }

    pub fn point(&self) -> Point {
        self.point
    }

    pub fn normal(&self) -> Point {
        self.normal
    }

    pub fn signed_distance(&self, p: Point) -> f64 {
        dot(sub(p, self.point), self.normal)
    }

    pub fn reflect(&self, p: Point) -> Point {
        let d = 2.0 * self.signed_distance(p);
        [p[0] - d * self.normal[0], p[1], p[2] - d * self.normal[2]]
    }

    /// Angle between plane normals in `[0, π/2]`; planes are unoriented.
    pub fn angle_to(&self, other: &SymmetryPlane) -> f64 {
        dot(self.normal, other.normal).abs().min(1.0).acos()
    }
}

pub fn reflect_points(cloud: &PointCloud, plane: &SymmetryPlane) -> PointCloud {
    map_points(cloud, |p| plane.reflect(p))
}

/// Candidate-fan symmetry search settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetryDetection {
    pub candidates: usize,
    /// Overlap tolerance as a fraction of the cloud's bounding-box diagonal.
    pub tolerance_frac: f64,
    pub overlap_frac: f64,
}

impl Default for SymmetryDetection {
    fn default() -> Self {
        Self::dense()
    }
}

impl SymmetryDetection {
    pub fn dense() -> Self {
        Self {
            candidates: 16,
            tolerance_frac: 0.02,
            overlap_frac: 0.9,
        }
    }

    /// Looser matching for sparsely sampled clouds.
    pub fn sparse() -> Self {
        Self {
            tolerance_frac: 0.05,
            ..Self::dense()
        }
    }

    pub fn detect(&self, cloud: &PointCloud) -> Option<SymmetryPlane> {
        let tol = self.tolerance_frac * cloud.diagonal();
        detect_in_fan(cloud, tol, self.overlap_frac, self.candidates)
    }
}

/// Fraction of reflected points that land within `tol` of some original point.
pub fn mirror_overlap(cloud: &PointCloud, plane: &SymmetryPlane, tol: f64) -> f64 {
    let tol2 = tol * tol;
    let pts = cloud.points();
    let hits = pts
        .iter()
        .filter(|&&p| {
            let q = plane.reflect(p);
            pts.iter().any(|o| dist2(&q, o) <= tol2)
        })
        .count();
    hits as f64 / pts.len() as f64
}

/// Best of 16 vertical planes through the centroid, if its mirror overlap reaches `overlap_frac`.
pub fn detect_symmetry_plane(cloud: &PointCloud, overlap_tol: f64, overlap_frac: f64) -> Option<SymmetryPlane> {
    detect_in_fan(cloud, overlap_tol, overlap_frac, 16)
}

fn detect_in_fan(cloud: &PointCloud, tol: f64, overlap_frac: f64, candidates: usize) -> Option<SymmetryPlane> {
    let centre = cloud.centroid();
    let mut best: Option<(SymmetryPlane, f64)> = None;
    for i in 0..candidates {
        let angle = std::f64::consts::PI * i as f64 / candidates as f64;
        let plane = SymmetryPlane::from_angle(centre, angle);
        let frac = mirror_overlap(cloud, &plane, tol);
        if best.is_none_or(|(_, f)| frac > f) {
            best = Some((plane, frac));
        }
    }
    best.filter(|(_, f)| *f >= overlap_frac).map(|(p, _)| p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_examples() {
        let plane = SymmetryPlane::new([0.0; 3], [1.0, 0.0, 0.0]).unwrap();
        assert_eq!(plane.reflect([1.0, 2.0, 3.0]), [-1.0, 2.0, 3.0]);
        assert_eq!(plane.reflect([0.0, 5.0, -1.0]), [0.0, 5.0, -1.0]);
        let slanted = SymmetryPlane::from_angle([0.3, 0.0, -0.1], 0.7);
        let p = [0.9, -0.4, 2.2];
        let back = slanted.reflect(slanted.reflect(p));
        for k in 0..3 {
            assert!((back[k] - p[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_tilted_normals() {
        assert!(SymmetryPlane::new([0.0; 3], [0.0, 1.0, 0.0]).is_err());
        assert!(SymmetryPlane::new([0.0; 3], [2.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn mirrored_cloud_is_detected() {
        let half = vec![[0.3, 0.1, 0.2], [0.5, 0.0, -0.1], [0.2, 0.4, 0.05], [0.7, 0.2, 0.3]];
        let mut pts = half.clone();
        pts.extend(half.iter().map(|p| [-p[0], p[1], p[2]]));
        let cloud = PointCloud::new(pts).unwrap();
        let plane = detect_symmetry_plane(&cloud, 0.02 * cloud.diagonal(), 0.9).unwrap();
        assert_eq!(plane.normal(), [1.0, 0.0, -0.0]);
        assert_eq!(plane.point(), cloud.centroid());
    }

    #[test]
    fn one_sided_l_shape_has_no_plane() {
        // Long arm along +x, short arm along +z, denser at the far end of the long arm.
        let mut pts = Vec::new();
        for i in 0..40 {
            pts.push([i as f64 * 0.05, 0.0, 0.0]);
        }
        for i in 1..8 {
            pts.push([0.0, 0.0, i as f64 * 0.05]);
        }
        for i in 0..10 {
            pts.push([1.5 + i as f64 * 0.02, 0.1, 0.03]);
        }
        let cloud = PointCloud::new(pts).unwrap();
        let tol = 0.02 * cloud.diagonal();
        // brute-force overlap per candidate stays below 0.9
        for i in 0..16 {
            let plane = SymmetryPlane::from_angle(cloud.centroid(), std::f64::consts::PI * i as f64 / 16.0);
            assert!(mirror_overlap(&cloud, &plane, tol) < 0.9);
        }
        assert!(detect_symmetry_plane(&cloud, tol, 0.9).is_none());
    }

    #[test]
    fn single_point_picks_first_candidate() {
        let cloud = PointCloud::new(vec![[0.2, 0.3, 0.4]]).unwrap();
        let plane = detect_symmetry_plane(&cloud, 0.01, 0.9).unwrap();
        assert_eq!(plane, SymmetryPlane::from_angle([0.2, 0.3, 0.4], 0.0));
    }
}
