use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::ScheduleConfig;
use super::context::PartModel;
use crate::error::{Error, Result};
use crate::geom::{apply_pose, reflect_points, PointCloud, RigidPose, SymmetryPlane};

/// One part's optimization variables: latent code plus rigid yaw pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentPart {
    pub code: Vec<f64>,
    pub pose: RigidPose,
}

impl LatentPart {
    pub fn is_finite(&self) -> bool {
        self.code.iter().chain(&self.pose.t).all(|v| v.is_finite()) && self.pose.r.is_finite()
    }
}

/// Which part a posed cloud belongs to, and whether it is the mirrored duplicate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CloudOwner {
    pub part: usize,
    pub mirror: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Snapshot {
    pub loss: f64,
    pub parts: Vec<LatentPart>,
    pub merged: Vec<bool>,
}

/// Per-target, per-k optimization state.
#[derive(Clone, Debug)]
pub struct DecompositionState {
    pub target_id: String,
    pub parts: Vec<LatentPart>,
    /// Self-symmetric parts created by a symmetric merge; they have no mirrored duplicate.
    pub merged: Vec<bool>,
    pub symmetry: Option<SymmetryPlane>,
    pub history: Vec<f64>,
    pub seed: u64,
    pub(crate) rng: ChaCha8Rng,
    pub(crate) decoded: Vec<PointCloud>,
    pub(crate) best: Option<Snapshot>,
}

impl DecompositionState {
    pub fn k(&self) -> usize {
        self.parts.len()
    }

    /// Owners of the posed clouds: every part in order, then mirrors of unmerged parts.
    pub fn owners(&self) -> Vec<CloudOwner> {
        let mut out: Vec<CloudOwner> = (0..self.parts.len()).map(|part| CloudOwner { part, mirror: false }).collect();
        if self.symmetry.is_some() {
            out.extend(
                (0..self.parts.len())
                    .filter(|&i| !self.merged[i])
                    .map(|part| CloudOwner { part, mirror: true }),
            );
        }
        out
    }

    /// Posed decoded clouds, in [`DecompositionState::owners`] order.
    pub fn decoded(&self) -> &[PointCloud] {
        &self.decoded
    }

    /// Number of parts in the final shape, counting mirrored duplicates.
    pub fn part_count(&self) -> usize {
        self.owners().len()
    }

    pub fn best_loss(&self) -> Option<f64> {
        self.best.as_ref().map(|b| b.loss)
    }

    /// Recomputes the posed clouds from the latent variables.
    pub fn refresh(&mut self, model: &mut PartModel) -> Result<()> {
        let codes: Vec<Vec<f64>> = self.parts.iter().map(|p| p.code.clone()).collect();
        let shapes = model.codec().decode_batch(&codes)?;
        let mut decoded: Vec<PointCloud> = shapes
            .iter()
            .zip(&self.parts)
            .map(|(c, p)| apply_pose(c, &p.pose))
            .collect();
        if let Some(plane) = &self.symmetry {
            for i in 0..self.parts.len() {
                if !self.merged[i] {
                    decoded.push(reflect_points(&decoded[i], plane));
                }
            }
        }
        self.decoded = decoded;
        Ok(())
    }

    pub(crate) fn record(&mut self, loss: f64, parts: &[LatentPart]) {
        self.history.push(loss);
        if self.best.as_ref().is_none_or(|b| loss < b.loss) {
            self.best = Some(Snapshot {
                loss,
                parts: parts.to_vec(),
                merged: self.merged.clone(),
            });
        }
    }

    /// Rolls back to the lowest-loss variables seen so far.
    pub fn restore_best(&mut self, model: &mut PartModel) -> Result<()> {
        if let Some(b) = &self.best {
            self.parts = b.parts.clone();
            self.merged = b.merged.clone();
            self.refresh(model)?;
        }
        Ok(())
    }

    /// Replaces every part with a fresh random draw from the state's own generator.
    pub fn rerandomize(&mut self, target: &PointCloud, model: &mut PartModel) -> Result<()> {
        let latent = model.arch().latent;
        self.parts = random_parts(&mut self.rng, target, self.parts.len(), latent);
        self.merged = vec![false; self.parts.len()];
        self.refresh(model)
    }

    /// Adopts another state's variables, keeping this state's target, plane and generator.
    pub fn adopt(&mut self, donor: &DecompositionState, model: &mut PartModel) -> Result<()> {
        self.parts = donor.parts.clone();
        self.merged = donor.merged.clone();
        if self.symmetry.is_none() {
            self.merged = vec![false; self.parts.len()];
        }
        self.refresh(model)
    }
}

fn random_parts(rng: &mut ChaCha8Rng, target: &PointCloud, k: usize, latent: usize) -> Vec<LatentPart> {
    let (lo, hi) = target.bounds();
    (0..k)
        .map(|_| {
            let code = (0..latent).map(|_| StandardNormal.sample(rng)).collect();
            let t = [0, 1, 2].map(|a| if hi[a] > lo[a] { rng.random_range(lo[a]..hi[a]) } else { lo[a] });
            let r = rng.random_range(0.0..TAU);
            LatentPart {
                code,
                pose: RigidPose::new(t, r),
            }
        })
        .collect()
}

/// Random codes, translations inside the target's bounding box, yaw in `[0, 2π)`.
/// The symmetry plane is detected here, once per target, when enabled.
pub fn init_state(
    model: &mut PartModel,
    target_id: &str,
    target: &PointCloud,
    k: usize,
    cfg: &ScheduleConfig,
    seed: u64,
) -> Result<DecompositionState> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let parts = random_parts(&mut rng, target, k, model.arch().latent);
    let symmetry = if cfg.symmetry { cfg.detection.detect(target) } else { None };
    let mut state = DecompositionState {
        target_id: target_id.to_string(),
        parts,
        merged: vec![false; k],
        symmetry,
        history: Vec::new(),
        seed,
        rng,
        decoded: Vec::new(),
        best: None,
    };
    state.refresh(model)?;
    Ok(state)
}
