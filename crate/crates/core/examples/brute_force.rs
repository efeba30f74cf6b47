//! Iteration-matched random search against the method on a few suite targets.
//!
//! cargo run --release -p partasm --example brute_force -- [targets]

use std::sync::Arc;

use partasm::decomposer::PartModel;
use partasm::harness::{bf_baseline, cached_vae, default_cache_dir, metrics, segment_retrieval, EvalTarget, SyntheticSuite};
use partasm::pipeline::RunConfig;
use partasm::retrieval::assemble;

fn main() -> partasm::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let n: usize = std::env::args().nth(1).map_or(3, |s| s.parse().expect("target count"));
    let suite = SyntheticSuite::desk(0)?;
    let mut cfg = RunConfig::desk();
    cfg.retrieval.q = Some(3);
    let model = PartModel::new(Arc::new(cached_vae(&suite.library, &cfg.vae, &default_cache_dir())?))?;
    println!("{:<6} {:>10} {:>12} {:>12} {:>12}", "target", "budget", "method", "BF direct", "BF segment");
    for t in suite.targets.iter().take(n) {
        let e = EvalTarget::synthetic(t)?;
        let (ours, _) = assemble(&model, &t.id, &t.cloud, &suite.library, &cfg.assemble_config(), cfg.seed, &cfg.hash())?;
        let bf = bf_baseline(&t.id, &t.cloud, &suite.library, t.planted.len(), ours.iterations, &cfg.retrieval.fit, 1)?;
        let seg = segment_retrieval(&bf.assembly, &t.cloud, &suite.library, &cfg.retrieval)?;
        println!(
            "{:<6} {:>10} {:>12.4} {:>12.4} {:>12.4}",
            t.id,
            ours.iterations,
            metrics(&ours, &suite.library, &e)?.vcd,
            metrics(&bf.assembly, &suite.library, &e)?.vcd,
            metrics(&seg, &suite.library, &e)?.vcd
        );
    }
    println!("VCD x100; brute force draws the planted number of parts per target");
    Ok(())
}
