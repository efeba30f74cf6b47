//! Phase ablation and output-format table on the bundled synthetic suite, plus the
//! iteration-matched brute-force rows.
//!
//! cargo run --release -p partasm --example ablation -- [seeds] [q|all] [out_dir] [phases]
//!
//! `phases` is a comma list of ablation rows to run, e.g. `12,123`; the default runs all four.

use std::path::PathBuf;
use std::sync::Arc;

use partasm::decomposer::PartModel;
use partasm::harness::{ablation_run, bf_rows, cached_vae, default_cache_dir, AblationPlan, PhaseSet, SyntheticSuite};
use partasm::pipeline::RunConfig;

fn main() -> partasm::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seeds: u64 = args.first().map_or(1, |s| s.parse().expect("seed count"));
    let q: Option<usize> = args.get(1).filter(|s| *s != "all").map(|s| s.parse().expect("retrieval candidates"));
    let out = args.get(2).filter(|s| *s != "-").map(PathBuf::from);
    let mut plan = AblationPlan::default();
    if let Some(list) = args.get(3) {
        let pick: Vec<&str> = list.split(',').collect();
        plan.phases = PhaseSet::ABLATION
            .into_iter()
            .filter(|p| pick.contains(&match (p.phase2, p.phase3) {
                (false, false) => "1",
                (false, true) => "13",
                (true, false) => "12",
                (true, true) => "123",
            }))
            .collect();
    }

    let suite = SyntheticSuite::desk(0)?;
    let mut cfg = RunConfig::desk();
    cfg.retrieval.q = q;
    let params = cached_vae(&suite.library, &cfg.vae, &default_cache_dir())?;
    let model = PartModel::new(Arc::new(params))?;
    let eval = suite.eval_suite("desk-synthetic")?;
    let seeds: Vec<u64> = (0..seeds).collect();
    let mut report = ablation_run(&eval, &model, &cfg, &seeds, &plan, out.as_deref())?;
    if let Some(full) = report.row("Phase I + II + III").cloned() {
        report.rows.extend(bf_rows(&eval, &full, &cfg, out.as_deref())?);
    }
    print!("{}", report.to_table());
    if let Some(dir) = out {
        report.save(&dir)?;
    }
    Ok(())
}
