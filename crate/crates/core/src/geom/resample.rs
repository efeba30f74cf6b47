use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cloud::PointCloud;
use super::kernels::dist2;

/// Farthest-point subsampling to `n` points, seeded at index 0. Output keeps input order.
pub fn farthest_point_subsample(cloud: &PointCloud, n: usize) -> PointCloud {
    if n >= cloud.len() {
        return cloud.clone();
    }
    let flat = cloud.flat();
    let m = cloud.len();
    let mut best = vec![f64::INFINITY; m];
    let mut chosen = vec![false; m];
    let mut current = 0;
    for _ in 0..n {
        chosen[current] = true;
        let p = &flat[3 * current..3 * current + 3];
        let mut next = (0, f64::NEG_INFINITY);
        for j in 0..m {
            let d = dist2(p, &flat[3 * j..3 * j + 3]);
            if d < best[j] {
                best[j] = d;
            }
            if !chosen[j] && best[j] > next.1 {
                next = (j, best[j]);
            }
        }
        current = next.0;
    }
    let idx: Vec<usize> = (0..m).filter(|&i| chosen[i]).collect();
    cloud.select(&idx).expect("n > 0 points chosen")
}

/// Pads to `n` points by drawing extra copies with replacement; every original point survives.
pub fn bootstrap_pad<R: Rng>(cloud: &PointCloud, n: usize, rng: &mut R) -> PointCloud {
    let mut pts = cloud.points().to_vec();
    while pts.len() < n {
        pts.push(cloud.points()[rng.random_range(0..cloud.len())]);
    }
    PointCloud::new(pts).expect("non-empty")
}

/// Exactly `n` points: farthest-point subsampling when larger, bootstrap padding when smaller.
///
/// Padding draws from a generator seeded by the cloud size, so the result is deterministic.
pub fn resample_to(cloud: &PointCloud, n: usize) -> PointCloud {
    if cloud.len() >= n {
        farthest_point_subsample(cloud, n)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0000 ^ cloud.len() as u64);
        bootstrap_pad(cloud, n, &mut rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_and_identity() {
        let pts: Vec<[f64; 3]> = (0..20).map(|i| [i as f64, 0.0, 0.0]).collect();
        let c = PointCloud::new(pts).unwrap();
        assert_eq!(resample_to(&c, 20), c);
        assert_eq!(resample_to(&c, 7).len(), 7);
        let up = resample_to(&c, 45);
        assert_eq!(up.len(), 45);
        assert_eq!(&up.points()[..20], c.points());
        assert_eq!(resample_to(&c, 45), up);
    }

    #[test]
    fn fps_spreads_out() {
        let pts: Vec<[f64; 3]> = (0..11).map(|i| [i as f64, 0.0, 0.0]).collect();
        let s = farthest_point_subsample(&PointCloud::new(pts).unwrap(), 3);
        assert_eq!(s.points(), &[[0.0, 0.0, 0.0], [5.0, 0.0, 0.0], [10.0, 0.0, 0.0]]);
    }
}
