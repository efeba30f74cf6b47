use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decomposer::ScheduleConfig;
use crate::error::{Error, Result};
use crate::partvae::VaeTrainConfig;
use crate::retrieval::{AssembleConfig, RetrievalConfig};

pub const RUN_CONFIG_SCHEMA_VERSION: u32 = 1;

/// Everything that determines a run's numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub schema_version: u32,
    pub schedule: ScheduleConfig,
    pub k_set: Vec<usize>,
    pub alpha: f64,
    pub retrieval: RetrievalConfig,
    /// Points sampled inside each target mesh at ingest.
    pub target_points: usize,
    pub vae: VaeTrainConfig,
    /// Worker threads; 0 uses every core. Not part of the hash: results do not depend on it.
    pub threads: usize,
    /// Phase-I steps of an amortized run are `n1 / short_divisor`.
    pub short_divisor: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let a = AssembleConfig::default();
        Self {
            schema_version: RUN_CONFIG_SCHEMA_VERSION,
            schedule: a.schedule,
            k_set: a.k_set,
            alpha: a.alpha,
            retrieval: a.retrieval,
            target_points: 2048,
            vae: VaeTrainConfig::default(),
            threads: 0,
            short_divisor: 3,
            seed: 0,
        }
    }
}

impl RunConfig {
    /// 64-point parts, K = {1, 2, 3, 4}, short schedule.
    pub fn desk() -> Self {
        let a = AssembleConfig::desk();
        Self {
            schedule: a.schedule,
            k_set: a.k_set,
            target_points: 256,
            vae: VaeTrainConfig::desk(),
            ..Self::default()
        }
    }

    pub fn assemble_config(&self) -> AssembleConfig {
        AssembleConfig {
            k_set: self.k_set.clone(),
            alpha: self.alpha,
            schedule: self.schedule.clone(),
            retrieval: self.retrieval.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != RUN_CONFIG_SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!("run config schema version {} is not supported", self.schema_version)));
        }
        if self.target_points == 0 || self.short_divisor == 0 {
            return Err(Error::InvalidArgument("target_points and short_divisor must be positive".into()));
        }
        self.assemble_config().validate()
    }

    /// Hex digest of the canonical JSON form, thread count excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.threads = 0;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: RunConfig = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_ignores_threads() {
        let a = RunConfig::desk();
        let mut b = a.clone();
        b.threads = 7;
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
        b.alpha = 2e-4;
        assert_ne!(a.hash(), b.hash());
        let back: RunConfig = serde_json::from_str(&a.to_json().unwrap()).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.hash(), a.hash());
    }
}
