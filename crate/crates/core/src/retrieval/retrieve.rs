use std::cmp::Ordering;

use rayon::prelude::*;

use super::fit::{fit_part_to_segment, FitConfig};
use crate::error::{Error, Result};
use crate::geom::{chamfer, pairwise_distances, rotate_yaw, DistanceMatrix, PointCloud, RigidPose};
use crate::partvae::{canonicalize_part, PartLibrary};

/// Nearest-part segmentation of the target by the final decoded parts.
pub fn final_segment(target: &PointCloud, parts: &[PointCloud]) -> Result<Vec<Vec<usize>>> {
    let q: DistanceMatrix = pairwise_distances(target, parts)?;
    Ok(crate::decomposer::nn_segment(&q))
}

/// Best library fit for one segment.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentMatch {
    pub part_id: String,
    pub pose: RigidPose,
    pub fit: f64,
}

/// Chamfer between the segment and each library part after canonical alignment; the yaw
/// ambiguity of the oriented box is covered by taking the best of four quarter turns.
pub fn prescreen_distances(segment: &PointCloud, library: &PartLibrary) -> Result<Vec<f64>> {
    let points = library
        .points_per_part()
        .ok_or_else(|| Error::InvalidArgument("retrieval from an empty library".into()))?;
    let canon = match canonicalize_part("segment", segment, points, "prescreen") {
        Ok(e) => e.cloud,
        // A single point or a coincident set has no orientation; centring is all that is left.
        Err(Error::Degenerate(_)) => {
            let c = segment.centroid();
            segment.translated([-c[0], -c[1], -c[2]])
        }
        Err(e) => return Err(e),
    };
    let turns: Vec<PointCloud> = (0..4)
        .map(|i| {
            let r = std::f64::consts::FRAC_PI_2 * i as f64;
            PointCloud::new(canon.points().iter().map(|&p| rotate_yaw(p, r)).collect()).expect("non-empty")
        })
        .collect();
    Ok(library
        .entries()
        .par_iter()
        .map(|e| turns.iter().map(|t| chamfer(t, &e.cloud)).fold(f64::INFINITY, f64::min))
        .collect())
}

/// Pose-fits the `q` prescreened nearest library parts to the segment and keeps the best fit;
/// ties go to the lexicographically lower part id.
pub fn retrieve_for_segment(segment: &PointCloud, library: &PartLibrary, q: usize, fit: &FitConfig) -> Result<SegmentMatch> {
    if library.is_empty() {
        return Err(Error::InvalidArgument("retrieval from an empty library".into()));
    }
    if q == 0 || q > library.len() {
        return Err(Error::InvalidArgument(format!("q = {q} outside [1, {}]", library.len())));
    }
    let entries = library.entries();
    let candidates: Vec<usize> = if q == library.len() {
        (0..entries.len()).collect()
    } else {
        let d = prescreen_distances(segment, library)?;
        let mut order: Vec<usize> = (0..entries.len()).collect();
        order.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then_with(|| entries[a].id.cmp(&entries[b].id)));
        order.truncate(q);
        order
    };
    let fits = candidates
        .par_iter()
        .map(|&i| fit_part_to_segment(&entries[i].cloud, segment, fit).map(|(pose, f)| (i, pose, f)))
        .collect::<Result<Vec<_>>>()?;
    let (i, pose, fit) = fits
        .into_iter()
        .min_by(|a, b| match a.2.total_cmp(&b.2) {
            Ordering::Equal => entries[a.0].id.cmp(&entries[b.0].id),
            o => o,
        })
        .expect("at least one candidate");
    Ok(SegmentMatch {
        part_id: entries[i].id.clone(),
        pose,
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::apply_pose;
    use crate::harness::synth::{gen_library, SyntheticSpec};

    fn small_library() -> PartLibrary {
        gen_library(&SyntheticSpec::desk(), 8, 11).unwrap()
    }

    #[test]
    fn planted_part_is_retrieved() {
        let lib = small_library();
        let entry = &lib.entries()[3];
        let seg = apply_pose(&entry.cloud, &RigidPose::new([0.2, 0.0, -0.1], 1.1));
        let m = retrieve_for_segment(&seg, &lib, lib.len(), &FitConfig::default()).unwrap();
        assert_eq!(m.part_id, entry.id);
        assert!(m.fit < 1e-2);
    }

    #[test]
    fn full_scan_never_loses_to_a_single_candidate() {
        let lib = small_library();
        let seg = PointCloud::pooled([&lib.entries()[0].cloud, &lib.entries()[1].cloud.translated([0.3, 0.0, 0.0])]).unwrap();
        let fit = FitConfig { steps: 30, ..FitConfig::default() };
        let all = retrieve_for_segment(&seg, &lib, lib.len(), &fit).unwrap();
        let one = retrieve_for_segment(&seg, &lib, 1, &fit).unwrap();
        assert!(all.fit <= one.fit);
    }

    #[test]
    fn single_part_library() {
        let lib = PartLibrary::new(vec![small_library().entries()[2].clone()]).unwrap();
        let seg = lib.entries()[0].cloud.translated([1.0, 0.0, 0.0]);
        let m = retrieve_for_segment(&seg, &lib, 1, &FitConfig::default()).unwrap();
        assert_eq!(m.part_id, lib.entries()[0].id);
        assert!(retrieve_for_segment(&seg, &lib, 2, &FitConfig::default()).is_err());
        assert!(retrieve_for_segment(&seg, &PartLibrary::new(vec![]).unwrap(), 1, &FitConfig::default()).is_err());
    }

    #[test]
    fn final_segment_is_nearest_part() {
        let t = PointCloud::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [0.5, 0.0, 0.0]]).unwrap();
        let a = PointCloud::new(vec![[0.1, 0.0, 0.0]]).unwrap();
        let b = PointCloud::new(vec![[0.9, 0.0, 0.0]]).unwrap();
        // The midpoint ties and goes to the first part.
        assert_eq!(final_segment(&t, &[a, b]).unwrap(), vec![vec![0, 2], vec![1]]);
    }
}
