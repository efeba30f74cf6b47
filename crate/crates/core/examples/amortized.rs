//! Collection run over the suite, then warm-started inference of held-out targets from the
//! resulting training bank.
//!
//! cargo run --release -p partasm --example amortized -- [train_targets] [test_targets]

use std::sync::Arc;

use partasm::decomposer::PartModel;
use partasm::harness::{cached_vae, default_cache_dir, gen_targets, SyntheticSuite};
use partasm::pipeline::{amortized_infer, run_collection, RunConfig, TrainingBank};
use partasm::retrieval::assemble;

fn main() -> partasm::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n_train: usize = args.first().map_or(10, |s| s.parse().expect("train count"));
    let n_test: usize = args.get(1).map_or(3, |s| s.parse().expect("test count"));

    let suite = SyntheticSuite::desk(0)?;
    let mut cfg = RunConfig::desk();
    cfg.retrieval.q = Some(3);
    let mut model = PartModel::new(Arc::new(cached_vae(&suite.library, &cfg.vae, &default_cache_dir())?))?;
    let train: Vec<_> = suite.targets.iter().take(n_train).map(|t| (t.id.clone(), t.cloud.clone())).collect();
    let run = run_collection(&model, &train, &suite.library, &cfg)?;
    println!("collection: {} solved, mean VCD x100 {:.4}", run.runs.len(), 100.0 * run.runs.iter().map(|r| r.assembly.vcd).sum::<f64>() / run.runs.len().max(1) as f64);
    let bank = TrainingBank::from_run(&run, &train);

    // Fresh targets over the same library.
    let test = gen_targets(&suite.spec, &suite.library, n_test, 99)?;
    for t in &test {
        let id = format!("q-{}", t.id);
        let warm = amortized_infer(&mut model, &id, &t.cloud, &bank, &suite.library, &cfg)?;
        let (cold, _) = assemble(&model, &id, &t.cloud, &suite.library, &cfg.assemble_config(), cfg.seed, &cfg.hash())?;
        println!(
            "{id}: warm from {} VCD x100 {:.4} in {} Phase-I steps; from scratch {:.4} in {} steps",
            warm.neighbor.as_deref().unwrap_or("-"),
            100.0 * warm.assembly.vcd,
            warm.phase1_steps,
            100.0 * cold.vcd,
            cfg.schedule.phase1_steps() * cfg.k_set.len()
        );
    }
    Ok(())
}
