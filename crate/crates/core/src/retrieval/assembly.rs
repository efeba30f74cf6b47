use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::FitConfig;
use super::retrieve::{final_segment, retrieve_for_segment};
use crate::decomposer::{run_schedule, DecompositionState, PartModel, ScheduleConfig};
use crate::error::{Error, Result};
use crate::geom::{apply_inverse_pose, apply_pose, chamfer, reflect_points, PointCloud, RigidPose, SymmetryPlane};
use crate::partvae::PartLibrary;
use crate::seed::derive_seed;

pub const ASSEMBLY_SCHEMA_VERSION: u32 = 1;

/// One library part placed in an assembly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievedPart {
    pub part_id: String,
    pub pose: RigidPose,
    /// The posed part is reflected about the assembly's symmetry plane.
    pub mirrored: bool,
    /// Chamfer between the placed part and its own segment.
    pub fit: f64,
    /// Target rows this part explains.
    pub segment: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assembly {
    pub schema_version: u32,
    pub target_id: String,
    pub k: usize,
    pub parts: Vec<RetrievedPart>,
    pub symmetry: Option<SymmetryPlane>,
    /// Chamfer between the pooled placed parts and the volumetric target.
    pub vcd: f64,
    /// Surface chamfer, filled in by evaluation when a surface sampling is available.
    pub scd: Option<f64>,
    pub seed: u64,
    pub config_hash: String,
    /// Gradient steps spent producing this assembly (Phase-I steps plus pose-fit steps), summed
    /// over every k that was tried.
    pub iterations: u64,
}

impl Assembly {
    pub fn part_count(&self) -> usize {
        self.parts.len()
    }

    /// Placed clouds in part order.
    pub fn posed_clouds(&self, library: &PartLibrary) -> Result<Vec<PointCloud>> {
        self.parts
            .iter()
            .map(|p| {
                let entry = library
                    .get(&p.part_id)
                    .ok_or_else(|| Error::InvalidArgument(format!("part {} not in library", p.part_id)))?;
                let posed = apply_pose(&entry.cloud, &p.pose);
                match (p.mirrored, &self.symmetry) {
                    (false, _) => Ok(posed),
                    (true, Some(plane)) => Ok(reflect_points(&posed, plane)),
                    (true, None) => Err(Error::InvalidArgument(format!("{}: mirrored part without a plane", self.target_id))),
                }
            })
            .collect()
    }

    pub fn pooled(&self, library: &PartLibrary) -> Result<PointCloud> {
        PointCloud::pooled(&self.posed_clouds(library)?)
    }

    /// True when the part segments cover rows `0..n` exactly once.
    pub fn segments_partition(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        for &i in self.parts.iter().flat_map(|p| &p.segment) {
            if i >= n || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        seen.into_iter().all(|s| s)
    }

    pub fn to_manifest(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_manifest(text: &str) -> Result<Self> {
        let a: Assembly = serde_json::from_str(text)?;
        if a.schema_version != ASSEMBLY_SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!("assembly schema version {} is not supported", a.schema_version)));
        }
        Ok(a)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_manifest()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_manifest(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Final retrieval settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub fit: FitConfig,
    /// Prescreened candidates per segment; `None` scans the whole library.
    pub q: Option<usize>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig::default(),
            q: None,
        }
    }
}

impl RetrievalConfig {
    fn q_for(&self, library: &PartLibrary) -> usize {
        self.q.unwrap_or(library.len()).clamp(1, library.len().max(1))
    }
}

/// Segments the target by the state's parts and retrieves one library part per part. A part
/// with a mirror is fitted to its own segment plus the reflection of its mirror's segment, and
/// the mirror is placed as the reflection of that fit. Clouds with empty segments are left out.
pub fn assembly_from_state(
    state: &DecompositionState,
    target: &PointCloud,
    library: &PartLibrary,
    cfg: &RetrievalConfig,
    seed: u64,
    config_hash: &str,
) -> Result<Assembly> {
    let owners = state.owners();
    let segments = final_segment(target, state.decoded())?;
    let q = cfg.q_for(library);
    let fit_steps = q as u64 * cfg.fit.cost();
    let mut iterations = state.history.len() as u64;
    let mut parts = Vec::new();
    for i in 0..state.k() {
        let cols: Vec<usize> = (0..owners.len()).filter(|&c| owners[c].part == i).collect();
        let mut pts = Vec::new();
        for &c in &cols {
            if segments[c].is_empty() {
                continue;
            }
            let seg = target.select(&segments[c])?;
            match (owners[c].mirror, &state.symmetry) {
                (true, Some(plane)) => pts.extend_from_slice(reflect_points(&seg, plane).points()),
                _ => pts.extend_from_slice(seg.points()),
            }
        }
        if pts.is_empty() {
            continue;
        }
        let m = retrieve_for_segment(&PointCloud::new(pts)?, library, q, &cfg.fit)?;
        iterations += fit_steps;
        let cloud = &library.get(&m.part_id).expect("retrieved from library").cloud;
        for &c in &cols {
            if segments[c].is_empty() {
                continue;
            }
            let mut posed = apply_pose(cloud, &m.pose);
            if owners[c].mirror {
                posed = reflect_points(&posed, state.symmetry.as_ref().expect("mirrors need a plane"));
            }
            parts.push(RetrievedPart {
                part_id: m.part_id.clone(),
                pose: m.pose,
                mirrored: owners[c].mirror,
                fit: chamfer(&posed, &target.select(&segments[c])?),
                segment: segments[c].clone(),
            });
        }
    }
    let mut a = Assembly {
        schema_version: ASSEMBLY_SCHEMA_VERSION,
        target_id: state.target_id.clone(),
        k: state.k(),
        parts,
        symmetry: state.symmetry,
        vcd: 0.0,
        scd: None,
        seed,
        config_hash: config_hash.to_string(),
        iterations,
    };
    a.vcd = chamfer(&a.pooled(library)?, target);
    Ok(a)
}

/// Each decoded part replaced by the library part nearest to its canonical decoded shape, kept
/// at the optimized pose. No segmentation or pose refit.
pub fn direct_retrieval(
    state: &DecompositionState,
    target: &PointCloud,
    library: &PartLibrary,
    seed: u64,
    config_hash: &str,
) -> Result<Assembly> {
    if library.is_empty() {
        return Err(Error::InvalidArgument("retrieval from an empty library".into()));
    }
    let owners = state.owners();
    let segments = final_segment(target, state.decoded())?;
    let mut nearest = Vec::with_capacity(state.k());
    for (i, part) in state.parts.iter().enumerate() {
        let canonical = apply_inverse_pose(&state.decoded()[i], &part.pose);
        let best = library
            .entries()
            .iter()
            .map(|e| (chamfer(&canonical, &e.cloud), &e.id))
            .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)))
            .expect("non-empty library");
        nearest.push(best.1.clone());
    }
    let mut parts = Vec::new();
    for (c, owner) in owners.iter().enumerate() {
        let id = &nearest[owner.part];
        let pose = state.parts[owner.part].pose;
        let mut posed = apply_pose(&library.get(id).expect("from library").cloud, &pose);
        if owner.mirror {
            posed = reflect_points(&posed, state.symmetry.as_ref().expect("mirrors need a plane"));
        }
        let fit = if segments[c].is_empty() { 0.0 } else { chamfer(&posed, &target.select(&segments[c])?) };
        parts.push(RetrievedPart {
            part_id: id.clone(),
            pose,
            mirrored: owner.mirror,
            fit,
            segment: segments[c].clone(),
        });
    }
    let mut a = Assembly {
        schema_version: ASSEMBLY_SCHEMA_VERSION,
        target_id: state.target_id.clone(),
        k: state.k(),
        parts,
        symmetry: state.symmetry,
        vcd: 0.0,
        scd: None,
        seed,
        config_hash: config_hash.to_string(),
        iterations: state.history.len() as u64,
    };
    a.vcd = chamfer(&a.pooled(library)?, target);
    Ok(a)
}

/// What `select_k` ranks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KScore {
    pub k: usize,
    /// Reconstruction chamfer of the candidate's assembly.
    pub error: f64,
    /// Post-merge part count, mirrors included.
    pub part_count: usize,
}

impl KScore {
    pub fn penalty(&self, alpha: f64) -> f64 {
        self.error + alpha * self.part_count as f64
    }
}

impl AsRef<KScore> for KScore {
    fn as_ref(&self) -> &KScore {
        self
    }
}

/// One optimized and retrieved k.
#[derive(Clone, Debug)]
pub struct KCandidate {
    pub score: KScore,
    pub penalty: f64,
    pub state: DecompositionState,
    pub assembly: Assembly,
}

impl AsRef<KScore> for KCandidate {
    fn as_ref(&self) -> &KScore {
        &self.score
    }
}

/// Minimum of `error + alpha * part_count`; ties go to fewer parts, then smaller k, so the
/// result does not depend on candidate order.
pub fn select_k<C: AsRef<KScore>>(candidates: &[C], alpha: f64) -> Result<&C> {
    candidates
        .iter()
        .min_by(|a, b| {
            let (a, b) = (a.as_ref(), b.as_ref());
            a.penalty(alpha)
                .total_cmp(&b.penalty(alpha))
                .then(a.part_count.cmp(&b.part_count))
                .then(a.k.cmp(&b.k))
        })
        .ok_or_else(|| Error::InvalidArgument("select_k needs at least one candidate".into()))
}

/// Settings for the per-target optimize, retrieve and choose-k pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssembleConfig {
    pub k_set: Vec<usize>,
    pub alpha: f64,
    pub schedule: ScheduleConfig,
    pub retrieval: RetrievalConfig,
}

impl Default for AssembleConfig {
    fn default() -> Self {
        Self {
            k_set: vec![2, 4, 6, 8, 10],
            alpha: 1.5e-4,
            schedule: ScheduleConfig::default(),
            retrieval: RetrievalConfig::default(),
        }
    }
}

impl AssembleConfig {
    /// Desk-scale preset: small k, short schedule.
    pub fn desk() -> Self {
        Self {
            k_set: vec![1, 2, 3, 4],
            schedule: ScheduleConfig::desk(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_set.is_empty() || self.k_set.contains(&0) {
            return Err(Error::InvalidArgument("k set must be non-empty and positive".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha {} must be finite and non-negative", self.alpha)));
        }
        self.schedule.validate()
    }
}

/// Seed of the optimization stream for one (target, k) task.
pub fn task_seed(master: u64, target_id: &str, k: usize) -> u64 {
    derive_seed(master, &format!("{target_id}/k{k}"))
}

/// Scores a finished state: retrieval, then the select-k statistics.
pub fn candidate_from_state(
    state: DecompositionState,
    target: &PointCloud,
    library: &PartLibrary,
    cfg: &AssembleConfig,
    seed: u64,
    config_hash: &str,
) -> Result<KCandidate> {
    let assembly = assembly_from_state(&state, target, library, &cfg.retrieval, seed, config_hash)?;
    let score = KScore {
        k: state.k(),
        error: assembly.vcd,
        part_count: assembly.part_count(),
    };
    Ok(KCandidate {
        penalty: score.penalty(cfg.alpha),
        score,
        state,
        assembly,
    })
}

/// Optimizes every k in the set (in parallel), retrieves parts for each and keeps the k with
/// the lowest penalty. Returns the chosen assembly and all candidates in k-set order.
pub fn assemble(
    model: &PartModel,
    target_id: &str,
    target: &PointCloud,
    library: &PartLibrary,
    cfg: &AssembleConfig,
    seed: u64,
    config_hash: &str,
) -> Result<(Assembly, Vec<KCandidate>)> {
    cfg.validate()?;
    let candidates = cfg
        .k_set
        .par_iter()
        .map(|&k| {
            let mut m = model.fork();
            let state = run_schedule(&mut m, target_id, target, k, &cfg.schedule, task_seed(seed, target_id, k))?;
            candidate_from_state(state, target, library, cfg, seed, config_hash)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut chosen = select_k(&candidates, cfg.alpha)?.assembly.clone();
    chosen.iterations = candidates.iter().map(|c| c.assembly.iterations).sum();
    Ok((chosen, candidates))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score(k: usize, error: f64, part_count: usize) -> KScore {
        KScore { k, error, part_count }
    }

    #[test]
    fn penalty_arithmetic_picks_four() {
        let c = [score(2, 1.0e-3, 2), score(4, 5.0e-4, 4)];
        assert!((c[0].penalty(1.5e-4) - 1.3e-3).abs() < 1e-15);
        assert!((c[1].penalty(1.5e-4) - 1.1e-3).abs() < 1e-15);
        assert_eq!(select_k(&c, 1.5e-4).unwrap().k, 4);
    }

    #[test]
    fn alpha_extremes_and_order_invariance() {
        let c = vec![score(2, 3e-3, 2), score(4, 1e-3, 3), score(6, 2e-3, 6), score(8, 1e-3, 8)];
        assert_eq!(select_k(&c, 0.0).unwrap().k, 4);
        assert_eq!(select_k(&c, 1e3).unwrap().k, 2);
        let mut r = c.clone();
        r.reverse();
        for alpha in [0.0, 1.5e-4, 1e-3, 1e3] {
            assert_eq!(select_k(&c, alpha).unwrap(), select_k(&r, alpha).unwrap());
        }
        assert!(select_k::<KScore>(&[], 0.0).is_err());
    }

    #[test]
    fn manifest_round_trip_and_version_check() {
        let a = Assembly {
            schema_version: ASSEMBLY_SCHEMA_VERSION,
            target_id: "t000".into(),
            k: 2,
            parts: vec![RetrievedPart {
                part_id: "box-000".into(),
                pose: RigidPose::new([0.1, 0.2, 0.3], 0.4),
                mirrored: false,
                fit: 0.01,
                segment: vec![0, 1],
            }],
            symmetry: None,
            vcd: 0.02,
            scd: None,
            seed: 9,
            config_hash: "abc".into(),
            iterations: 12,
        };
        let text = a.to_manifest().unwrap();
        assert_eq!(Assembly::from_manifest(&text).unwrap(), a);
        assert!(a.segments_partition(2) && !a.segments_partition(3));
        let bumped = text.replace("\"schema_version\": 1", "\"schema_version\": 99");
        assert!(Assembly::from_manifest(&bumped).is_err());
    }
}
