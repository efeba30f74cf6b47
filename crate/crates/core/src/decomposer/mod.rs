//! Iterative part optimization: Phase I gradient descent over latent codes and poses, Phase II
//! part shift, Phase III borrowing across targets, and the nested schedule around them.

mod borrow;
mod checkpoint;
mod config;
mod context;
mod loss;
mod schedule;
mod shift;
mod state;

pub use borrow::{accept_threshold, plan_borrow, worst_count, BorrowOutcome};
pub use checkpoint::{checkpoint_bytes, load_checkpoint, save_checkpoint, state_from_checkpoint};
pub use config::{BorrowConfig, FilterMode, ScheduleConfig};
pub use context::PartModel;
pub use loss::{overlap_penalty, phase1_gradient, phase1_loss, phase1_run, PhaseOneGradient};
pub use schedule::{finish, optimize_round, phase3_borrow, reconstruction_error, run_schedule};
pub use shift::{
    coverage, farthest_component, filter_covered, merge_symmetric, nn_segment, phase2_shift, plan_swap, reencode,
    ShiftReport, SwapPlan,
};
pub use state::{init_state, CloudOwner, DecompositionState, LatentPart};

#[cfg(test)]
mod tests;
