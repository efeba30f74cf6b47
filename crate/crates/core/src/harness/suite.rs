use std::path::{Path, PathBuf};

use log::info;
use sha2::{Digest, Sha256};

use super::eval::EvalSuite;
use super::metrics::EvalTarget;
use super::synth::{gen_library, gen_targets, SyntheticSpec, SyntheticTarget};
use crate::error::{Error, Result};
use crate::partvae::{load_weights, save_weights, train_vae, PartLibrary, VaeParams, VaeTrainConfig};
use crate::pipeline::io::{write_ply, PlyFormat, PlyPrecision};
use crate::pipeline::{Dataset, Split, TargetEntry};

/// Library size of the bundled suite.
pub const DESK_LIBRARY_PARTS: usize = 50;
/// Target count of the bundled suite.
pub const DESK_TARGETS: usize = 20;

/// The bundled synthetic suite: 50 parts, 20 targets of 2 to 4 planted parts.
#[derive(Clone, Debug)]
pub struct SyntheticSuite {
    pub spec: SyntheticSpec,
    pub library: PartLibrary,
    pub targets: Vec<SyntheticTarget>,
}

impl SyntheticSuite {
    pub fn generate(spec: SyntheticSpec, parts: usize, targets: usize, seed: u64) -> Result<Self> {
        let library = gen_library(&spec, parts, seed)?;
        let targets = gen_targets(&spec, &library, targets, seed.wrapping_add(1))?;
        Ok(Self { spec, library, targets })
    }

    pub fn desk(seed: u64) -> Result<Self> {
        Self::generate(SyntheticSpec::desk(), DESK_LIBRARY_PARTS, DESK_TARGETS, seed)
    }

    pub fn eval_suite(&self, name: &str) -> Result<EvalSuite> {
        Ok(EvalSuite {
            name: name.to_string(),
            library: self.library.clone(),
            targets: self.targets.iter().map(EvalTarget::synthetic).collect::<Result<_>>()?,
        })
    }

    /// All targets in the training split, already normalized.
    pub fn dataset(&self) -> Dataset {
        Dataset {
            targets: self
                .targets
                .iter()
                .map(|t| TargetEntry {
                    id: t.id.clone(),
                    cloud: t.cloud.clone(),
                    surface: None,
                    split: Split::Train,
                })
                .collect(),
            library: self.library.clone(),
            scale: 1.0,
        }
    }

    /// Writes `parts/`, `train/` and `test/` directories of binary PLY clouds that `ingest`
    /// accepts. The last `test` targets go to the test split.
    pub fn write_shapes(&self, dir: &Path, test: usize) -> Result<()> {
        let split_at = self.targets.len().saturating_sub(test);
        let mut files = Vec::new();
        for e in self.library.entries() {
            files.push((format!("parts/{}.ply", e.id), &e.cloud));
        }
        for (i, t) in self.targets.iter().enumerate() {
            let split = if i < split_at { "train" } else { "test" };
            files.push((format!("{split}/{}.ply", t.id), &t.cloud));
        }
        for sub in ["parts", "train", "test"] {
            let d = dir.join(sub);
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        for (rel, cloud) in files {
            write_ply(&dir.join(rel), cloud, PlyFormat::BinaryLe, PlyPrecision::Double)?;
        }
        Ok(())
    }
}

/// `$PARTASM_CACHE`, else a directory under the system temp dir.
pub fn default_cache_dir() -> PathBuf {
    std::env::var_os("PARTASM_CACHE").map_or_else(|| std::env::temp_dir().join("partasm-cache"), PathBuf::from)
}

fn vae_key(library: &PartLibrary, cfg: &VaeTrainConfig) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(cfg)?);
    for e in library.entries() {
        h.update(e.id.as_bytes());
        for p in e.cloud.points() {
            for c in p {
                h.update(c.to_le_bytes());
            }
        }
    }
    Ok(h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect())
}

/// Trained weights for `(library, cfg)`, read from `dir` when an earlier run stored them.
pub fn cached_vae(library: &PartLibrary, cfg: &VaeTrainConfig, dir: &Path) -> Result<VaeParams> {
    let path = dir.join(format!("vae-{}.bin", vae_key(library, cfg)?));
    if path.exists() {
        match load_weights(&path) {
            Ok(p) => return Ok(p),
            Err(e) => log::warn!("ignoring unreadable cached weights {}: {e}", path.display()),
        }
    }
    info!("training the part autoencoder ({} epochs)", cfg.epochs);
    let trained = train_vae(library, cfg)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    // Write under a unique name and rename so concurrent test binaries never read a torn file.
    let tmp = dir.join(format!("vae-{}.{}.tmp", vae_key(library, cfg)?, std::process::id()));
    save_weights(&trained.params, &tmp)?;
    std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
    Ok(trained.params)
}
