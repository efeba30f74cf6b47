//! Trains the desk part autoencoder on the synthetic library and reports round-trip quality.
//!
//! cargo run --release -p partasm --example train_vae -- [epochs] [weights_out]

use std::path::PathBuf;
use std::sync::Arc;

use partasm::geom::chamfer;
use partasm::harness::SyntheticSuite;
use partasm::partvae::{save_weights, train_vae, PartCodec, VaeTrainConfig};

fn main() -> partasm::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = VaeTrainConfig::desk();
    if let Some(e) = args.first() {
        cfg.epochs = e.parse().expect("epoch count");
    }
    let suite = SyntheticSuite::desk(0)?;
    let trained = train_vae(&suite.library, &cfg)?;
    for (i, loss) in trained.curve.iter().enumerate().filter(|(i, _)| i % (cfg.epochs / 10).max(1) == 0) {
        println!("epoch {i:>5}  loss {loss:.6}");
    }

    let mut codec = PartCodec::new(Arc::new(trained.params.clone()));
    let clouds: Vec<_> = suite.library.entries().iter().map(|e| e.cloud.clone()).collect();
    let codes = codec.encode_batch(&clouds)?;
    let mus: Vec<Vec<f64>> = codes.into_iter().map(|c| c.0).collect();
    let recons = codec.decode_batch(&mus)?;
    let mut good = 0;
    for (c, r) in clouds.iter().zip(&recons) {
        good += usize::from(chamfer(r, c) <= 0.05 * c.diagonal());
    }
    println!("{good}/{} parts reconstruct within 5% of their diagonal", clouds.len());
    if let Some(path) = args.get(1) {
        save_weights(&trained.params, &PathBuf::from(path))?;
        println!("weights written to {path}");
    }
    Ok(())
}
