//! Writes a synthetic dataset as PLY files ready for `partasm ingest`.
//!
//! cargo run --release -p partasm --example synthetic_dataset -- [out_dir] [parts] [targets] [test] [seed]

use std::path::PathBuf;

use partasm::harness::{SyntheticSpec, SyntheticSuite};

fn main() -> partasm::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: u64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default);
    let out = PathBuf::from(args.first().map_or("synthetic-shapes", String::as_str));
    let (parts, targets, test, seed) = (arg(1, 50) as usize, arg(2, 20) as usize, arg(3, 4) as usize, arg(4, 0));
    let suite = SyntheticSuite::generate(SyntheticSpec::desk(), parts, targets, seed)?;
    suite.write_shapes(&out, test)?;
    for t in &suite.targets {
        let planted: Vec<&str> = t.planted.iter().map(|p| p.part_id.as_str()).collect();
        println!("{:<12} {:>4} points  planted {}{}", t.id, t.cloud.len(), planted.join(" "), if t.plane.is_some() { "  (symmetric)" } else { "" });
    }
    println!("wrote {} parts and {} targets under {}", suite.library.len(), suite.targets.len(), out.display());
    Ok(())
}
