use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numcore::Graph;
use crate::partvae::{PartCodec, VaeArch, VaeParams};

use super::loss::{GraphKey, PhaseOneGraph};

/// Frozen autoencoder plus cached evaluation graphs. One per worker thread.
pub struct PartModel {
    codec: PartCodec,
    pub(crate) graphs: HashMap<GraphKey, PhaseOneGraph>,
}

impl PartModel {
    pub fn new(params: Arc<VaeParams>) -> Result<Self> {
        if !params.is_frozen() {
            return Err(Error::Usage("the part autoencoder must be frozen before optimization".into()));
        }
        Ok(Self {
            codec: PartCodec::new(params),
            graphs: HashMap::new(),
        })
    }

    pub fn params(&self) -> &Arc<VaeParams> {
        self.codec.params()
    }

    pub fn arch(&self) -> &VaeArch {
        self.codec.arch()
    }

    pub fn codec(&mut self) -> &mut PartCodec {
        &mut self.codec
    }

    /// Fresh model sharing the same weights, for another thread.
    pub fn fork(&self) -> Self {
        Self {
            codec: PartCodec::new(self.params().clone()),
            graphs: HashMap::new(),
        }
    }

    pub(crate) fn graph_for(&mut self, key: &GraphKey) -> Result<&mut PhaseOneGraph> {
        if !self.graphs.contains_key(key) {
            let g = PhaseOneGraph::build(self.codec.params(), key, Graph::new())?;
            self.graphs.insert(key.clone(), g);
        }
        Ok(self.graphs.get_mut(key).expect("inserted above"))
    }
}
