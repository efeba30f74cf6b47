//! Discrete retrieval: segment the target by optimized parts, fit library parts to segments,
//! and choose the number of parts.

mod assembly;
mod fit;
mod retrieve;

pub use assembly::{
    assemble, assembly_from_state, candidate_from_state, direct_retrieval, select_k, task_seed, AssembleConfig, Assembly, KCandidate,
    KScore, RetrievalConfig, RetrievedPart, ASSEMBLY_SCHEMA_VERSION,
};
pub use fit::{fit_part_to_segment, fit_parts_jointly, pooled_chamfer_grad, posed_chamfer_grad, FitConfig};
pub use retrieve::{final_segment, prescreen_distances, retrieve_for_segment, SegmentMatch};
