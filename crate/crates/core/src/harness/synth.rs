use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{
    apply_pose, chamfer, reflect_points, rotate_yaw, sample_mesh_interior, Point, PointCloud, RigidPose, SymmetryPlane, TriMesh,
};
use crate::partvae::{canonicalize_part, PartEntry, PartLibrary};
use crate::retrieval::{Assembly, RetrievedPart, ASSEMBLY_SCHEMA_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartFamily {
    Box,
    Cylinder,
    /// Extruded L with equal arms.
    LBracket,
    /// Square frustum.
    Tapered,
}

impl PartFamily {
    pub const ALL: [PartFamily; 4] = [PartFamily::Box, PartFamily::Cylinder, PartFamily::LBracket, PartFamily::Tapered];

    fn tag(self) -> &'static str {
        match self {
            PartFamily::Box => "box",
            PartFamily::Cylinder => "cyl",
            PartFamily::LBracket => "lbr",
            PartFamily::Tapered => "tap",
        }
    }
}

/// Parameters of the synthetic part and target generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub families: Vec<PartFamily>,
    /// Range of every part dimension, in normalized units.
    pub extent: (f64, f64),
    pub points_per_part: usize,
    /// Inclusive range of planted parts per target.
    pub parts_per_target: (usize, usize),
    pub symmetry_prob: f64,
    /// Clearance between planted parts.
    pub gap: (f64, f64),
    /// Distance kept between a mirrored half and the symmetry plane.
    pub mirror_clearance: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            families: PartFamily::ALL.to_vec(),
            extent: (0.1, 0.3),
            points_per_part: 512,
            parts_per_target: (2, 4),
            symmetry_prob: 0.3,
            gap: (0.01, 0.04),
            mirror_clearance: 0.06,
        }
    }
}

impl SyntheticSpec {
    pub fn desk() -> Self {
        Self {
            points_per_part: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.extent;
        let ok = !self.families.is_empty()
            && lo > 0.0
            && hi >= lo
            && self.points_per_part >= 2
            && self.parts_per_target.0 >= 1
            && self.parts_per_target.1 >= self.parts_per_target.0
            && (0.0..=1.0).contains(&self.symmetry_prob)
            && self.gap.0 >= 0.0
            && self.gap.1 >= self.gap.0
            && self.mirror_clearance >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid synthetic spec {self:?}")))
        }
    }
}

/// A watertight solid together with a vertical plane it is symmetric about.
pub(crate) struct SymmetricSolid {
    pub mesh: TriMesh,
    pub plane: SymmetryPlane,
}

pub(crate) fn family_solid<R: Rng>(family: PartFamily, extent: (f64, f64), rng: &mut R) -> Result<SymmetricSolid> {
    let mut dim = || rng.random_range(extent.0..=extent.1);
    let x_plane = SymmetryPlane::new([0.0; 3], [1.0, 0.0, 0.0])?;
    Ok(match family {
        PartFamily::Box => SymmetricSolid {
            mesh: TriMesh::cuboid([dim(), dim(), dim()]),
            plane: x_plane,
        },
        PartFamily::Cylinder => {
            let (d, h) = (dim(), dim());
            SymmetricSolid {
                mesh: TriMesh::cylinder(d / 2.0, h, 24),
                plane: x_plane,
            }
        }
        PartFamily::Tapered => {
            let (b, h) = (dim(), dim());
            let top = b * rng.random_range(0.35..0.8);
            SymmetricSolid {
                mesh: TriMesh::frustum(b, top, h),
                plane: x_plane,
            }
        }
        PartFamily::LBracket => {
            let (a, h) = (dim(), dim());
            let w = a * rng.random_range(0.3..0.5);
            let poly = [[0.0, 0.0], [a, 0.0], [a, w], [w, w], [w, a], [0.0, a]];
            let s = std::f64::consts::FRAC_1_SQRT_2;
            SymmetricSolid {
                mesh: TriMesh::extrude_xz(&poly, -h / 2.0, h / 2.0)?,
                plane: SymmetryPlane::new([0.0; 3], [s, 0.0, -s])?,
            }
        }
    })
}

/// Interior samples that are exactly mirror-symmetric: half are drawn, half are their reflections.
pub(crate) fn symmetric_interior<R: Rng>(solid: &SymmetricSolid, n: usize, rng: &mut R) -> Result<PointCloud> {
    let half = sample_mesh_interior(&solid.mesh, n.div_ceil(2), rng)?;
    let plane = &solid.plane;
    let mut pts: Vec<_> = half.points().iter().map(|&p| if plane.signed_distance(p) < 0.0 { plane.reflect(p) } else { p }).collect();
    let mirrored: Vec<_> = pts.iter().map(|&p| plane.reflect(p)).collect();
    if n % 2 == 1 {
        // The odd point sits on the plane so the set stays symmetric.
        let p = pts.pop().expect("at least one sample");
        let d = plane.signed_distance(p);
        let nrm = plane.normal();
        pts.push([p[0] - d * nrm[0], p[1], p[2] - d * nrm[2]]);
        pts.extend(mirrored.into_iter().take(n / 2));
    } else {
        pts.extend(mirrored);
    }
    PointCloud::new(pts)
}

/// Canonicalized parametric parts. Every part cloud is mirror-symmetric about a vertical plane.
pub fn gen_library(spec: &SyntheticSpec, n_parts: usize, seed: u64) -> Result<PartLibrary> {
    spec.validate()?;
    if n_parts == 0 {
        return Err(Error::InvalidArgument("library needs at least one part".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries: Vec<PartEntry> = Vec::with_capacity(n_parts);
    let mut attempts = 0;
    while entries.len() < n_parts {
        attempts += 1;
        if attempts > 10 * n_parts + 100 {
            return Err(Error::Degenerate("could not generate enough distinct parts".into()));
        }
        let family = spec.families[entries.len() % spec.families.len()];
        let solid = family_solid(family, spec.extent, &mut rng)?;
        let raw = symmetric_interior(&solid, spec.points_per_part, &mut rng)?;
        let id = format!("{}-{:03}", family.tag(), entries.len());
        let entry = canonicalize_part(&id, &raw, spec.points_per_part, "synthetic")?;
        if entries.iter().any(|e| chamfer(&e.cloud, &entry.cloud) == 0.0) {
            continue;
        }
        entries.push(entry);
    }
    PartLibrary::new(entries)
}

/// A library part placed in a synthetic target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedPart {
    pub part_id: String,
    pub pose: RigidPose,
    /// Rows of the target cloud contributed by this part.
    pub rows: std::ops::Range<usize>,
    /// Index of the planted part this one mirrors.
    pub mirror_of: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTarget {
    pub id: String,
    /// Volumetric cloud: the union of the posed planted parts, centred at the origin.
    pub cloud: PointCloud,
    pub planted: Vec<PlantedPart>,
    pub plane: Option<SymmetryPlane>,
}

impl SyntheticTarget {
    /// Index of the planted part owning each target row.
    pub fn row_owner(&self) -> Vec<usize> {
        let mut owner = vec![0; self.cloud.len()];
        for (i, p) in self.planted.iter().enumerate() {
            owner[p.rows.clone()].iter_mut().for_each(|o| *o = i);
        }
        owner
    }

    /// The planted decomposition as an assembly. Mirrors reuse their twin's pose, reflected.
    pub fn ground_truth(&self, library: &PartLibrary) -> Result<Assembly> {
        let mut parts = Vec::with_capacity(self.planted.len());
        for p in &self.planted {
            let pose = match p.mirror_of {
                Some(twin) => self.planted[twin].pose,
                None => p.pose,
            };
            parts.push(RetrievedPart {
                part_id: p.part_id.clone(),
                pose,
                mirrored: p.mirror_of.is_some(),
                fit: 0.0,
                segment: p.rows.clone().collect(),
            });
        }
        let mut a = Assembly {
            schema_version: ASSEMBLY_SCHEMA_VERSION,
            target_id: self.id.clone(),
            k: self.planted.iter().filter(|p| p.mirror_of.is_none()).count(),
            parts,
            symmetry: self.plane,
            vcd: 0.0,
            scd: None,
            seed: 0,
            config_hash: "ground-truth".into(),
            iterations: 0,
        };
        let posed = a.posed_clouds(library)?;
        for (part, cloud) in a.parts.iter_mut().zip(&posed) {
            part.fit = chamfer(cloud, &self.cloud.select(&part.segment)?);
        }
        a.vcd = chamfer(&PointCloud::pooled(&posed)?, &self.cloud);
        Ok(a)
    }
}

/// Normal angle of a vertical plane the canonical cloud is mirror-symmetric about, found by a
/// 0.1° scan. Synthetic parts are symmetric by construction.
pub(crate) fn part_mirror_angle(cloud: &PointCloud) -> f64 {
    let mut best = (0.0, f64::INFINITY);
    for i in 0..1800 {
        let a = std::f64::consts::PI * i as f64 / 1800.0;
        let plane = SymmetryPlane::from_angle([0.0; 3], a);
        let d = chamfer(&reflect_points(cloud, &plane), cloud);
        if d < best.1 {
            best = (a, d);
        }
    }
    best.0
}

/// Pose of the mirror image of `part` posed by `pose`, given the part's own mirror plane angle.
fn mirrored_pose(pose: &RigidPose, part_angle: f64, world: &SymmetryPlane) -> RigidPose {
    let part_plane = SymmetryPlane::from_angle([0.0; 3], part_angle);
    let linear = |p: Point| {
        let o = world.point();
        let q = world.reflect([p[0] + o[0], p[1] + o[1], p[2] + o[2]]);
        [q[0] - o[0], q[1] - o[1], q[2] - o[2]]
    };
    let v = linear(rotate_yaw(part_plane.reflect([1.0, 0.0, 0.0]), pose.r));
    RigidPose::new(world.reflect(pose.t), (-v[2]).atan2(v[0]))
}

struct Placed {
    part: usize,
    pose: RigidPose,
    lo: Point,
    hi: Point,
}

fn posed_bounds(cloud: &PointCloud, pose: &RigidPose) -> (Point, Point) {
    apply_pose(cloud, pose).bounds()
}

/// Places parts one by one next to a random earlier part, axis-aligned boxes kept apart by a gap.
fn place_parts<R: Rng>(library: &PartLibrary, parts: &[usize], spec: &SyntheticSpec, rng: &mut R) -> Option<Vec<Placed>> {
    let mut placed: Vec<Placed> = Vec::new();
    for &part in parts {
        let cloud = &library.entries()[part].cloud;
        let yaw = rng.random_range(0.0..std::f64::consts::TAU);
        let (lo, hi) = posed_bounds(cloud, &RigidPose::new([0.0; 3], yaw));
        if placed.is_empty() {
            let c = [0, 1, 2].map(|a| -0.5 * (lo[a] + hi[a]));
            placed.push(Placed {
                part,
                pose: RigidPose::new(c, yaw),
                lo: [0, 1, 2].map(|a| lo[a] + c[a]),
                hi: [0, 1, 2].map(|a| hi[a] + c[a]),
            });
            continue;
        }
        let mut done = false;
        for _ in 0..64 {
            let anchor = &placed[rng.random_range(0..placed.len())];
            let axis = [0, 2, 1][rng.random_range(0..3)];
            let positive = rng.random_bool(0.5) || axis == 1;
            let gap = rng.random_range(spec.gap.0..=spec.gap.1);
            let mut t = [0.0; 3];
            for a in 0..3 {
                let anchor_mid = 0.5 * (anchor.lo[a] + anchor.hi[a]);
                let mid = 0.5 * (lo[a] + hi[a]);
                t[a] = if a == axis {
                    if positive {
                        anchor.hi[a] + gap - lo[a]
                    } else {
                        anchor.lo[a] - gap - hi[a]
                    }
                } else if a == 1 {
                    anchor.lo[1] - lo[1]
                } else {
                    let slack = 0.3 * (hi[a] - lo[a]).min(anchor.hi[a] - anchor.lo[a]);
                    anchor_mid - mid + rng.random_range(-slack..=slack)
                };
            }
            let (nlo, nhi) = ([0, 1, 2].map(|a| lo[a] + t[a]), [0, 1, 2].map(|a| hi[a] + t[a]));
            let clear = placed.iter().all(|p| (0..3).any(|a| nlo[a] >= p.hi[a] + spec.gap.0 - 1e-12 || nhi[a] <= p.lo[a] - spec.gap.0 + 1e-12));
            if clear {
                placed.push(Placed {
                    part,
                    pose: RigidPose::new(t, yaw),
                    lo: nlo,
                    hi: nhi,
                });
                done = true;
                break;
            }
        }
        if !done {
            return None;
        }
    }
    Some(placed)
}

/// Targets built from 2 to 4 posed library parts; symmetric ones mirror one half across a
/// vertical plane whose normal is one of the 16 fan directions.
pub fn gen_targets(spec: &SyntheticSpec, library: &PartLibrary, n_targets: usize, seed: u64) -> Result<Vec<SyntheticTarget>> {
    spec.validate()?;
    if library.is_empty() {
        return Err(Error::InvalidArgument("target generation needs a non-empty library".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7A26_E75E_ED00_0000);
    let mut out = Vec::with_capacity(n_targets);
    let mut failures = 0;
    while out.len() < n_targets {
        let symmetric = rng.random_bool(spec.symmetry_prob);
        let id = format!("t{:03}", out.len());
        match gen_one(spec, library, symmetric, &id, &mut rng)? {
            Some(t) => out.push(t),
            None => {
                failures += 1;
                log::warn!("{id}: part placement failed, retrying");
                if failures > 10 * n_targets + 10 {
                    return Err(Error::Degenerate("synthetic placement keeps failing".into()));
                }
            }
        }
    }
    Ok(out)
}

/// One target with an explicit symmetry choice.
pub fn gen_target<R: Rng>(spec: &SyntheticSpec, library: &PartLibrary, symmetric: bool, id: &str, rng: &mut R) -> Result<SyntheticTarget> {
    for _ in 0..100 {
        if let Some(t) = gen_one(spec, library, symmetric, id, rng)? {
            return Ok(t);
        }
    }
    Err(Error::Degenerate(format!("{id}: part placement failed")))
}

fn gen_one<R: Rng>(spec: &SyntheticSpec, library: &PartLibrary, symmetric: bool, id: &str, rng: &mut R) -> Result<Option<SyntheticTarget>> {
    let (lo, hi) = spec.parts_per_target;
    let mut count = rng.random_range(lo..=hi);
    if symmetric {
        count = (count / 2).max(1);
    }
    let ids: Vec<usize> = (0..count).map(|_| rng.random_range(0..library.len())).collect();
    let Some(mut placed) = place_parts(library, &ids, spec, rng) else {
        return Ok(None);
    };
    let mut planted: Vec<(usize, RigidPose, Option<usize>)> = Vec::new();
    let mut plane = None;
    if symmetric {
        let min_x = placed.iter().map(|p| p.lo[0]).fold(f64::INFINITY, f64::min);
        let shift = spec.mirror_clearance - min_x;
        for p in &mut placed {
            p.pose.t[0] += shift;
        }
        let world = SymmetryPlane::new([0.0; 3], [1.0, 0.0, 0.0])?;
        let mut mirrors = Vec::new();
        for (i, p) in placed.iter().enumerate() {
            let angle = part_mirror_angle(&library.entries()[p.part].cloud);
            mirrors.push((p.part, mirrored_pose(&p.pose, angle, &world), Some(i)));
        }
        planted.extend(placed.iter().map(|p| (p.part, p.pose, None)));
        planted.extend(mirrors);
        // Turn the whole arrangement so the mirror plane takes a fan direction.
        let theta = std::f64::consts::PI * rng.random_range(0..16) as f64 / 16.0;
        let turn = RigidPose::new([0.0; 3], theta);
        for p in &mut planted {
            p.1 = turn.compose(&p.1);
        }
        plane = Some(SymmetryPlane::from_angle([0.0; 3], theta));
    } else {
        planted.extend(placed.iter().map(|p| (p.part, p.pose, None)));
    }

    let mut points = Vec::new();
    let mut records = Vec::new();
    for (part, pose, mirror) in &planted {
        let entry = &library.entries()[*part];
        let start = points.len();
        let posed = match mirror {
            // Reflect the original rather than trusting the recovered pose, so symmetry is exact.
            Some(twin) => {
                let world = plane.expect("mirrors only in symmetric targets");
                reflect_points(&apply_pose(&entry.cloud, &planted[*twin].1), &world)
            }
            None => apply_pose(&entry.cloud, pose),
        };
        points.extend_from_slice(posed.points());
        records.push(PlantedPart {
            part_id: entry.id.clone(),
            pose: *pose,
            rows: start..points.len(),
            mirror_of: *mirror,
        });
    }
    let cloud = PointCloud::new(points)?;
    let c = cloud.centroid();
    let shift = [-c[0], -c[1], -c[2]];
    for r in &mut records {
        r.pose.t = [r.pose.t[0] + shift[0], r.pose.t[1] + shift[1], r.pose.t[2] + shift[2]];
    }
    let plane = match plane {
        Some(p) => Some(SymmetryPlane::new([p.point()[0] + shift[0], 0.0, p.point()[2] + shift[2]], p.normal())?),
        None => None,
    };
    Ok(Some(SyntheticTarget {
        id: id.to_string(),
        cloud: cloud.translated(shift),
        planted: records,
        plane,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (SyntheticSpec, PartLibrary) {
        let spec = SyntheticSpec::desk();
        let lib = gen_library(&spec, 12, 3).unwrap();
        (spec, lib)
    }

    #[test]
    fn library_size_determinism_and_distinct_parts() {
        let (spec, lib) = small();
        assert_eq!(lib.len(), 12);
        assert!(lib.entries().iter().all(|e| e.cloud.len() == 64));
        assert_eq!(gen_library(&spec, 12, 3).unwrap(), lib);
        for (i, a) in lib.entries().iter().enumerate() {
            for b in &lib.entries()[i + 1..] {
                assert!(chamfer(&a.cloud, &b.cloud) > 0.0);
            }
        }
        let full = gen_library(&SyntheticSpec::default(), 50, 0).unwrap();
        assert_eq!(full.len(), 50);
        assert!(full.entries().iter().all(|e| e.cloud.len() == 512));
    }

    #[test]
    fn zero_parts_rejected() {
        assert!(gen_library(&SyntheticSpec::desk(), 0, 0).is_err());
    }

    #[test]
    fn targets_are_unions_of_posed_library_parts() {
        let (spec, lib) = small();
        let targets = gen_targets(&spec, &lib, 8, 11).unwrap();
        assert_eq!(targets, gen_targets(&spec, &lib, 8, 11).unwrap());
        for t in &targets {
            let free = t.planted.iter().filter(|p| p.mirror_of.is_none()).count();
            assert!(t.planted.len() >= 2 || t.plane.is_none());
            assert!(free >= 1 && t.planted.len() <= 4, "{}", t.planted.len());
            assert!(t.planted.iter().all(|p| lib.get(&p.part_id).is_some()));
            let gt = t.ground_truth(&lib).unwrap();
            assert!(gt.segments_partition(t.cloud.len()));
            assert!(gt.vcd < 1e-9, "{}: {}", t.id, gt.vcd);
            assert!(gt.parts.iter().all(|p| p.fit < 1e-9));
        }
    }

    #[test]
    fn symmetric_targets_are_reflection_invariant() {
        let (spec, lib) = small();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for i in 0..6 {
            let t = gen_target(&spec, &lib, true, &format!("s{i}"), &mut rng).unwrap();
            let plane = t.plane.expect("symmetric");
            assert!(chamfer(&reflect_points(&t.cloud, &plane), &t.cloud) < 1e-9);
            assert_eq!(t.planted.len() % 2, 0);
            for (j, p) in t.planted.iter().enumerate() {
                if let Some(twin) = p.mirror_of {
                    assert_eq!(t.planted[twin].part_id, p.part_id);
                    assert!(twin < j);
                }
            }
        }
    }

    #[test]
    fn planted_parts_keep_their_gap() {
        let (spec, lib) = small();
        for t in gen_targets(&spec, &lib, 6, 2).unwrap() {
            for (i, a) in t.planted.iter().enumerate() {
                for b in &t.planted[i + 1..] {
                    let pa = t.cloud.select(&a.rows.clone().collect::<Vec<_>>()).unwrap();
                    let pb = t.cloud.select(&b.rows.clone().collect::<Vec<_>>()).unwrap();
                    let d = pa.points().iter().flat_map(|p| pb.points().iter().map(move |q| crate::geom::distance(*p, *q))).fold(f64::INFINITY, f64::min);
                    assert!(d >= spec.gap.0 - 1e-9, "{}: {d}", t.id);
                }
            }
        }
    }
}
