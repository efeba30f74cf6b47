use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{apply_pose, resample_to, yaw_obb, PointCloud, RigidPose};

/// A library part in canonical pose: centroid at the origin, yaw-aligned bounding box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartEntry {
    pub id: String,
    pub cloud: PointCloud,
    /// Maps the canonical cloud back onto the raw input.
    pub pose: RigidPose,
    pub source: String,
}

/// Resamples to `points`, centres on the centroid and removes the yaw of the minimal yaw box.
pub fn canonicalize_part(id: &str, raw: &PointCloud, points: usize, source: &str) -> Result<PartEntry> {
    if points == 0 {
        return Err(Error::InvalidArgument("canonical point count must be positive".into()));
    }
    if raw.diagonal() == 0.0 {
        return Err(Error::Degenerate(format!("part {id}: all points coincide")));
    }
    let sampled = resample_to(raw, points);
    let c = sampled.centroid();
    let centered = sampled.translated([-c[0], -c[1], -c[2]]);
    let yaw = yaw_obb(&centered).yaw;
    let mut cloud = apply_pose(&centered, &RigidPose::new([0.0; 3], -yaw));
    // Rotation about the centroid leaves it at the origin up to rounding; pin it exactly.
    let drift = cloud.centroid();
    cloud = cloud.translated([-drift[0], -drift[1], -drift[2]]);
    Ok(PartEntry {
        id: id.to_string(),
        cloud,
        pose: RigidPose::new(c, yaw),
        source: source.to_string(),
    })
}

/// The retrieval corpus. Every entry has the same point count.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PartLibrary {
    entries: Vec<PartEntry>,
}

impl PartLibrary {
    pub fn new(entries: Vec<PartEntry>) -> Result<Self> {
        if let Some(first) = entries.first() {
            let n = first.cloud.len();
            if let Some(bad) = entries.iter().find(|e| e.cloud.len() != n) {
                return Err(Error::shape(
                    format!("library part {}", bad.id),
                    format!("{} points, expected {n}", bad.cloud.len()),
                ));
            }
        }
        let mut ids: Vec<&str> = entries.iter().map(|e| e.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument(format!("duplicate part id {}", w[0])));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[PartEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&PartEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn points_per_part(&self) -> Option<usize> {
        self.entries.first().map(|e| e.cloud.len())
    }

    pub fn clouds(&self) -> Vec<PointCloud> {
        self.entries.iter().map(|e| e.cloud.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::chamfer;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn slab(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| [rng.random_range(-0.4..0.4), rng.random_range(0.0..0.1), rng.random_range(-0.1..0.1)])
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn centred_and_sized() {
        for n in [10, 64, 300] {
            let e = canonicalize_part("a", &slab(n, 1), 64, "test").unwrap();
            assert_eq!(e.cloud.len(), 64);
            assert!(e.cloud.centroid().iter().all(|c| c.abs() < 1e-9));
        }
    }

    #[test]
    fn idempotent() {
        let e = canonicalize_part("a", &slab(64, 2), 64, "t").unwrap();
        let again = canonicalize_part("a", &e.cloud, 64, "t").unwrap();
        for (p, q) in e.cloud.points().iter().zip(again.cloud.points()) {
            for k in 0..3 {
                assert!((p[k] - q[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn translation_and_yaw_invariant() {
        let raw = slab(64, 3);
        let base = canonicalize_part("a", &raw, 64, "t").unwrap();
        let shifted = canonicalize_part("a", &raw.translated([5.0, 0.0, 0.0]), 64, "t").unwrap();
        assert!(chamfer(&base.cloud, &shifted.cloud) < 1e-9);
        let turned = apply_pose(&raw, &RigidPose::new([0.0; 3], 30f64.to_radians()));
        let rot = canonicalize_part("a", &turned, 64, "t").unwrap();
        let best = (0..4)
            .map(|q| chamfer(&apply_pose(&rot.cloud, &RigidPose::new([0.0; 3], q as f64 * FRAC_PI_2)), &base.cloud))
            .fold(f64::INFINITY, f64::min);
        assert!(best < 1e-6, "{best}");
    }

    #[test]
    fn pose_maps_back_to_raw() {
        let raw = apply_pose(&slab(64, 4), &RigidPose::new([1.0, 0.5, -2.0], 0.4));
        let e = canonicalize_part("a", &raw, 64, "t").unwrap();
        assert!(chamfer(&apply_pose(&e.cloud, &e.pose), &raw) < 1e-9);
    }

    #[test]
    fn degenerate_rejected() {
        let p = PointCloud::new(vec![[1.0, 2.0, 3.0]; 5]).unwrap();
        assert!(matches!(canonicalize_part("a", &p, 64, "t"), Err(Error::Degenerate(_))));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let e = canonicalize_part("a", &slab(64, 5), 64, "t").unwrap();
        assert!(PartLibrary::new(vec![e.clone(), e]).is_err());
    }
}
