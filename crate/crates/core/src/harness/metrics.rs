use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synth::{family_solid, SyntheticSpec, SyntheticTarget};
use crate::error::{Error, Result};
use crate::geom::{chamfer, sample_mesh_interior, PointCloud};
use crate::partvae::PartLibrary;
use crate::retrieval::Assembly;

/// Chamfer values are reported multiplied by this.
pub const CD_SCALE: f64 = 100.0;

/// Crust voxels per target diagonal.
pub const CRUST_RESOLUTION: f64 = 10.0;

type Voxel = (i64, i64, i64);

fn voxel_of(p: [f64; 3], size: f64) -> Voxel {
    ((p[0] / size).floor() as i64, (p[1] / size).floor() as i64, (p[2] / size).floor() as i64)
}

/// Points lying in occupied voxels with at least one empty face neighbour. Falls back to the
/// whole cloud when every voxel is interior, which only happens for degenerate sizes.
pub fn crust(cloud: &PointCloud, voxel: f64) -> Result<PointCloud> {
    if !(voxel > 0.0 && voxel.is_finite()) {
        return Err(Error::InvalidArgument(format!("crust voxel size must be positive, got {voxel}")));
    }
    let occupied: HashSet<Voxel> = cloud.points().iter().map(|&p| voxel_of(p, voxel)).collect();
    let boundary = |v: Voxel| {
        let (x, y, z) = v;
        [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
            .iter()
            .any(|(dx, dy, dz)| !occupied.contains(&(x + dx, y + dy, z + dz)))
    };
    let keep: Vec<_> = cloud.points().iter().copied().filter(|&p| boundary(voxel_of(p, voxel))).collect();
    if keep.is_empty() {
        return Ok(cloud.clone());
    }
    PointCloud::new(keep)
}

/// A target prepared for scoring.
#[derive(Clone, Debug)]
pub struct EvalTarget {
    pub id: String,
    pub volume: PointCloud,
    pub surface: PointCloud,
    /// Voxel size used for crusts of reconstructions of this target.
    pub voxel: f64,
    /// Planted decomposition, for synthetic targets.
    pub truth: Option<SyntheticTarget>,
}

impl EvalTarget {
    /// Without a mesh surface sampling the target's own crust stands in.
    pub fn new(id: &str, volume: PointCloud, surface: Option<PointCloud>) -> Result<Self> {
        let voxel = volume.diagonal() / CRUST_RESOLUTION;
        let surface = match surface {
            Some(s) => s,
            None => crust(&volume, voxel)?,
        };
        Ok(Self {
            id: id.to_string(),
            volume,
            surface,
            voxel,
            truth: None,
        })
    }

    pub fn synthetic(t: &SyntheticTarget) -> Result<Self> {
        let mut e = Self::new(&t.id, t.cloud.clone(), None)?;
        e.truth = Some(t.clone());
        Ok(e)
    }
}

/// Surface and volumetric chamfer, both ×100.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub scd: f64,
    pub vcd: f64,
}

/// Scores a reconstruction given as a volumetric cloud; its surface is always the crust. Points
/// are put in a canonical order first so the sums do not depend on part order.
pub fn cloud_metrics(reconstruction: &PointCloud, target: &EvalTarget) -> Result<Metrics> {
    let mut pts = reconstruction.points().to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])).then(a[2].total_cmp(&b[2])));
    let reconstruction = PointCloud::new(pts)?;
    let surface = crust(&reconstruction, target.voxel)?;
    Ok(Metrics {
        scd: CD_SCALE * chamfer(&surface, &target.surface),
        vcd: CD_SCALE * chamfer(&reconstruction, &target.volume),
    })
}

pub fn metrics(assembly: &Assembly, library: &PartLibrary, target: &EvalTarget) -> Result<Metrics> {
    if assembly.parts.is_empty() {
        return Err(Error::InvalidArgument(format!("{}: assembly has no parts", assembly.target_id)));
    }
    cloud_metrics(&assembly.pooled(library)?, target)
}

/// Fraction of target rows whose planted part has the id of the part whose segment holds them.
pub fn segment_purity(assembly: &Assembly, truth: &SyntheticTarget) -> f64 {
    let owner = truth.row_owner();
    let mut total = 0usize;
    let mut pure = 0usize;
    for p in &assembly.parts {
        for &row in &p.segment {
            total += 1;
            if owner.get(row).is_some_and(|&o| truth.planted[o].part_id == p.part_id) {
                pure += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        pure as f64 / total as f64
    }
}

/// Mean VCD (×100) between two independent interior samplings of the same random part solid,
/// over `shapes` solids drawn from the spec.
pub fn noise_floor(spec: &SyntheticSpec, shapes: usize, seed: u64) -> Result<f64> {
    spec.validate()?;
    if shapes == 0 {
        return Err(Error::InvalidArgument("noise floor needs at least one shape".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    for i in 0..shapes {
        let family = spec.families[i % spec.families.len()];
        let solid = family_solid(family, spec.extent, &mut rng)?;
        let a = sample_mesh_interior(&solid.mesh, spec.points_per_part, &mut rng)?;
        let b = sample_mesh_interior(&solid.mesh, spec.points_per_part, &mut rng)?;
        sum += chamfer(&a, &b);
    }
    Ok(CD_SCALE * sum / shapes as f64)
}
