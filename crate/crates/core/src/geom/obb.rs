use std::f64::consts::FRAC_PI_2;

use super::cloud::{Point, PointCloud};
use super::pose::rotate_yaw;

/// Box minimal over rotations about the up axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct YawBox {
    pub center: Point,
    /// In `[0, π/2)`: the box axes are the world axes rotated by this yaw.
    pub yaw: f64,
    /// Side lengths along the box's own x, y, z axes.
    pub extents: Point,
}

type P2 = [f64; 2];

fn cross2(o: P2, a: P2, b: P2) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Andrew's monotone chain; counter-clockwise in `(x, z)`, collinear points dropped.
pub(crate) fn convex_hull(points: &[P2]) -> Vec<P2> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<P2> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &P2>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross2(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn dot2(a: P2, b: P2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Edge directions of the hull's minimum-area enclosing rectangles, via rotating calipers.
/// Returns `(area, unit edge direction)` per hull edge.
fn caliper_rectangles(hull: &[P2]) -> Vec<(f64, P2)> {
    let h = hull.len();
    let dir = |i: usize| {
        let (a, b) = (hull[i], hull[(i + 1) % h]);
        let d = [b[0] - a[0], b[1] - a[1]];
        let len = dot2(d, d).sqrt();
        [d[0] / len, d[1] / len]
    };
    let argmax = |f: &dyn Fn(P2) -> f64| (0..h).max_by(|&a, &b| f(hull[a]).total_cmp(&f(hull[b]))).unwrap();
    let u0 = dir(0);
    let n0 = [-u0[1], u0[0]];
    let mut far_u = argmax(&|p| dot2(p, u0));
    let mut far_n = argmax(&|p| dot2(p, n0));
    let mut near_u = argmax(&|p| -dot2(p, u0));
    let mut out = Vec::with_capacity(h);
    for i in 0..h {
        let u = dir(i);
        let n = [-u[1], u[0]];
        while dot2(hull[(far_u + 1) % h], u) > dot2(hull[far_u], u) {
            far_u = (far_u + 1) % h;
        }
        while dot2(hull[(far_n + 1) % h], n) > dot2(hull[far_n], n) {
            far_n = (far_n + 1) % h;
        }
        while dot2(hull[(near_u + 1) % h], u) < dot2(hull[near_u], u) {
            near_u = (near_u + 1) % h;
        }
        let width = dot2(hull[far_u], u) - dot2(hull[near_u], u);
        let height = dot2(hull[far_n], n) - dot2(hull[i], n);
        out.push((width * height, u));
    }
    out
}

fn normalize_yaw(yaw: f64) -> f64 {
    let y = yaw.rem_euclid(FRAC_PI_2);
    if y > FRAC_PI_2 - 1e-9 || y < 1e-12 {
        0.0
    } else {
        y
    }
}

/// Minimum-area bounding rectangle of the xz-projection, extended over the y range.
pub fn yaw_obb(cloud: &PointCloud) -> YawBox {
    let xz: Vec<P2> = cloud.points().iter().map(|p| [p[0], p[2]]).collect();
    let hull = convex_hull(&xz);
    let yaw = match hull.len() {
        0 | 1 => 0.0,
        2 => {
            let d = [hull[1][0] - hull[0][0], hull[1][1] - hull[0][1]];
            normalize_yaw((-d[1]).atan2(d[0]))
        }
        _ => {
            let rects = caliper_rectangles(&hull);
            let min_area = rects.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
            let tol = 1e-9 * min_area.max(1e-300) + 1e-15;
            rects
                .iter()
                .filter(|r| r.0 <= min_area + tol)
                .map(|r| normalize_yaw((-r.1[1]).atan2(r.1[0])))
                .fold(f64::INFINITY, f64::min)
        }
    };
    box_at_yaw(cloud, yaw)
}

/// Tight box whose axes are the world axes rotated by `yaw`.
pub fn box_at_yaw(cloud: &PointCloud, yaw: f64) -> YawBox {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &p in cloud.points() {
        let q = rotate_yaw(p, -yaw);
        for k in 0..3 {
            lo[k] = lo[k].min(q[k]);
            hi[k] = hi[k].max(q[k]);
        }
    }
    let mid = [0, 1, 2].map(|k| 0.5 * (lo[k] + hi[k]));
    YawBox {
        center: rotate_yaw(mid, yaw),
        yaw,
        extents: [0, 1, 2].map(|k| hi[k] - lo[k]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::pose::{apply_pose, RigidPose};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square() -> PointCloud {
        PointCloud::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 0.0, 1.0], [0.0, 0.0, 1.0]]).unwrap()
    }

    #[test]
    fn axis_aligned_square() {
        let b = yaw_obb(&square());
        assert_eq!(b.yaw, 0.0);
        for (e, want) in b.extents.iter().zip([1.0, 0.0, 1.0]) {
            assert!((e - want).abs() < 1e-12);
        }
        assert!((b.center[0] - 0.5).abs() < 1e-12 && (b.center[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rotated_square_recovers_thirty_degrees() {
        let r = 30f64.to_radians();
        let b = yaw_obb(&apply_pose(&square(), &RigidPose::new([0.2, 0.0, -0.4], r)));
        assert!((b.yaw - r).abs() < 1e-9, "{}", b.yaw.to_degrees());
        let b = yaw_obb(&apply_pose(&square(), &RigidPose::new([0.0; 3], r + FRAC_PI_2)));
        assert!((b.yaw - r).abs() < 1e-9);
    }

    #[test]
    fn single_point() {
        let p = PointCloud::new(vec![[0.3, -0.2, 0.9]]).unwrap();
        let b = yaw_obb(&p);
        assert_eq!(b.center, [0.3, -0.2, 0.9]);
        assert_eq!(b.extents, [0.0; 3]);
        assert_eq!(b.yaw, 0.0);
    }

    #[test]
    fn coincident_in_xz() {
        let p = PointCloud::new(vec![[0.3, 0.0, 0.9], [0.3, 1.0, 0.9]]).unwrap();
        let b = yaw_obb(&p);
        assert_eq!(b.yaw, 0.0);
        assert_eq!(b.extents, [0.0, 1.0, 0.0]);
    }

    #[test]
    fn calipers_match_exhaustive_edge_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let pts: Vec<P2> = (0..30).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-0.3..0.3)]).collect();
            let hull = convex_hull(&pts);
            let brute = (0..hull.len())
                .map(|i| {
                    let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
                    let d = [b[0] - a[0], b[1] - a[1]];
                    let l = dot2(d, d).sqrt();
                    let u = [d[0] / l, d[1] / l];
                    let n = [-u[1], u[0]];
                    let span = |v: P2| {
                        let proj: Vec<f64> = hull.iter().map(|&p| dot2(p, v)).collect();
                        proj.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                            - proj.iter().cloned().fold(f64::INFINITY, f64::min)
                    };
                    span(u) * span(n)
                })
                .fold(f64::INFINITY, f64::min);
            let fast = caliper_rectangles(&hull).iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
            assert!((brute - fast).abs() < 1e-12, "{brute} vs {fast}");
        }
    }

    #[test]
    fn never_larger_than_axis_aligned() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..50 {
            let pts: Vec<[f64; 3]> = (0..40)
                .map(|_| [rng.random_range(-1.0..1.0), rng.random(), rng.random_range(-0.5..0.5)])
                .collect();
            let cloud = apply_pose(&PointCloud::new(pts).unwrap(), &RigidPose::new([0.0; 3], rng.random_range(0.0..3.0)));
            let b = yaw_obb(&cloud);
            let aabb = box_at_yaw(&cloud, 0.0);
            assert!(b.extents[0] * b.extents[2] <= aabb.extents[0] * aabb.extents[2] + 1e-12);
        }
    }
}
