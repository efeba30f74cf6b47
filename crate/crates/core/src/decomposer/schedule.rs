use log::debug;

use super::borrow::{donor_snapshots, plan_borrow, BorrowOutcome};
use super::config::ScheduleConfig;
use super::context::PartModel;
use super::loss::phase1_run;
use super::shift::phase2_shift;
use super::state::{init_state, DecompositionState};
use crate::error::{Error, Result};
use crate::geom::{chamfer, DistanceMatrix, PointCloud};

/// Chamfer between the pooled posed parts and the target.
pub fn reconstruction_error(state: &DecompositionState, target: &PointCloud) -> Result<f64> {
    Ok(chamfer(&PointCloud::pooled(state.decoded())?, target))
}

/// `n2` rounds of Phase I followed by a Phase-II shift (when enabled).
pub fn optimize_round(model: &mut PartModel, target: &PointCloud, state: &mut DecompositionState, cfg: &ScheduleConfig) -> Result<()> {
    for _ in 0..cfg.n2 {
        phase1_run(model, target, state, cfg, cfg.n1, cfg.lr)?;
        if cfg.phase2 {
            let report = phase2_shift(model, target, state, cfg)?;
            debug!(
                "{} k={}: shift merged {:?}, swap {:?}, kept {:?}",
                state.target_id,
                state.k(),
                report.merged,
                report.swap.as_ref().map(|s| s.part),
                report.kept
            );
        }
    }
    Ok(())
}

/// The closing Phase-I run, then roll back to the best state seen.
pub fn finish(model: &mut PartModel, target: &PointCloud, state: &mut DecompositionState, cfg: &ScheduleConfig) -> Result<()> {
    phase1_run(model, target, state, cfg, cfg.n1, cfg.lr)?;
    state.restore_best(model)
}

/// Single-target schedule. Borrowing needs a collection, so it is skipped here.
pub fn run_schedule(
    model: &mut PartModel,
    target_id: &str,
    target: &PointCloud,
    k: usize,
    cfg: &ScheduleConfig,
    seed: u64,
) -> Result<DecompositionState> {
    cfg.validate()?;
    let mut state = init_state(model, target_id, target, k, cfg, seed)?;
    for _ in 0..cfg.n3 {
        optimize_round(model, target, &mut state, cfg)?;
    }
    finish(model, target, &mut state, cfg)?;
    Ok(state)
}

/// Borrowing across a collection of states sharing one k. Targets are ranked, and donors lend,
/// by their best variables so far rather than the in-flight ones a shift just re-encoded.
/// Decisions are made from the states as passed in, then applied together; targets without an
/// accepted donor are re-randomized.
pub fn phase3_borrow(
    model: &mut PartModel,
    targets: &[PointCloud],
    states: &mut [DecompositionState],
    m: &DistanceMatrix,
    cfg: &ScheduleConfig,
) -> Result<Vec<BorrowOutcome>> {
    if targets.len() != states.len() {
        return Err(Error::InvalidArgument(format!("{} targets but {} states", targets.len(), states.len())));
    }
    let mut best = states.to_vec();
    for s in &mut best {
        s.restore_best(model)?;
    }
    let errors = best
        .iter()
        .zip(targets)
        .map(|(s, t)| reconstruction_error(s, t))
        .collect::<Result<Vec<_>>>()?;
    let plan = plan_borrow(&errors, m, &cfg.borrow, |r, d| {
        let mut candidate = states[r].clone();
        candidate.adopt(&best[d], model)?;
        reconstruction_error(&candidate, &targets[r])
    })?;
    let donors = donor_snapshots(&best, &plan);
    for (i, (outcome, donor)) in plan.iter().zip(donors).enumerate() {
        match outcome {
            BorrowOutcome::Kept => {}
            BorrowOutcome::Adopted { .. } => states[i].adopt(&donor.expect("adopted donor"), model)?,
            BorrowOutcome::Rerandomized => states[i].rerandomize(&targets[i], model)?,
        }
        if !matches!(outcome, BorrowOutcome::Kept) {
            debug!("{} k={}: borrow {:?}", states[i].target_id, states[i].k(), outcome);
        }
    }
    Ok(plan)
}
