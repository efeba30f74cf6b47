//! Assembles one synthetic target from the 50-part library and compares against the planted
//! decomposition. Writes colored PLYs of the segmentation and of the posed parts.
//!
//! cargo run --release -p partasm --example assemble_target -- [target_index] [out_dir]

use std::path::PathBuf;
use std::sync::Arc;

use partasm::decomposer::PartModel;
use partasm::harness::{cached_vae, default_cache_dir, metrics, segment_purity, EvalTarget, SyntheticSuite};
use partasm::pipeline::io::{write_colored_ply, PlyFormat};
use partasm::pipeline::RunConfig;
use partasm::retrieval::assemble;

const COLORS: [[u8; 3]; 6] = [[230, 25, 75], [60, 180, 75], [0, 130, 200], [245, 130, 48], [145, 30, 180], [70, 240, 240]];

fn main() -> partasm::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let index: usize = args.first().map_or(0, |s| s.parse().expect("target index"));
    let out = PathBuf::from(args.get(1).map_or("assemble-out", String::as_str));

    let suite = SyntheticSuite::desk(0)?;
    let target = &suite.targets[index];
    let cfg = RunConfig::desk();
    let model = PartModel::new(Arc::new(cached_vae(&suite.library, &cfg.vae, &default_cache_dir())?))?;
    let (assembly, candidates) = assemble(&model, &target.id, &target.cloud, &suite.library, &cfg.assemble_config(), cfg.seed, &cfg.hash())?;

    for c in &candidates {
        println!("k={}  parts={}  error={:.6}  penalty={:.6}", c.score.k, c.score.part_count, c.score.error, c.penalty);
    }
    let planted: Vec<&str> = target.planted.iter().map(|p| p.part_id.as_str()).collect();
    println!("planted:   {}", planted.join(" "));
    let retrieved: Vec<&str> = assembly.parts.iter().map(|p| p.part_id.as_str()).collect();
    println!("retrieved: {}", retrieved.join(" "));
    let m = metrics(&assembly, &suite.library, &EvalTarget::synthetic(target)?)?;
    println!("SCD x100 {:.4}  VCD x100 {:.4}  purity {:.3}", m.scd, m.vcd, segment_purity(&assembly, target));

    std::fs::create_dir_all(&out).map_err(|e| partasm::Error::io(&out, e))?;
    let mut colors = vec![[128u8; 3]; target.cloud.len()];
    for (i, p) in assembly.parts.iter().enumerate() {
        p.segment.iter().for_each(|&r| colors[r] = COLORS[i % COLORS.len()]);
    }
    write_colored_ply(&out.join(format!("{}.segments.ply", target.id)), &target.cloud, &colors, PlyFormat::Ascii)?;
    let posed = assembly.posed_clouds(&suite.library)?;
    let pooled = partasm::geom::PointCloud::pooled(&posed)?;
    let part_colors: Vec<[u8; 3]> = posed.iter().enumerate().flat_map(|(i, c)| std::iter::repeat_n(COLORS[i % COLORS.len()], c.len())).collect();
    write_colored_ply(&out.join(format!("{}.parts.ply", target.id)), &pooled, &part_colors, PlyFormat::Ascii)?;
    assembly.save(&out.join(format!("{}.json", target.id)))?;
    println!("wrote {}", out.display());
    Ok(())
}
