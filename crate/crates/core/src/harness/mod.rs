//! Synthetic suites with planted decompositions, evaluation metrics, the brute-force baseline
//! and the ablation runner.

pub mod baseline;
pub mod eval;
pub mod metrics;
pub mod suite;
pub mod synth;

pub use baseline::{bf_baseline, bf_draw_cost, segment_retrieval, BfRun};
pub use eval::{ablation_run, bf_rows, AblationPlan, Cell, EvalReport, EvalSuite, OutputFormat, PhaseSet, ReportRow, RowKind, EVAL_SCHEMA_VERSION};
pub use metrics::{cloud_metrics, crust, metrics, noise_floor, segment_purity, EvalTarget, Metrics, CD_SCALE};
pub use suite::{cached_vae, default_cache_dir, SyntheticSuite, DESK_LIBRARY_PARTS, DESK_TARGETS};
pub use synth::{gen_library, gen_target, gen_targets, PartFamily, PlantedPart, SyntheticSpec, SyntheticTarget};
