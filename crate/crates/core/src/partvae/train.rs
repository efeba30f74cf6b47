use std::collections::HashMap;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::library::PartLibrary;
use super::model::{gaussian_kl, PartCodec, ParamLeaves, VaeArch, VaeParams};
use crate::error::{Error, Result};
use crate::geom::{chamfer, PointCloud};
use crate::numcore::{adam_update, AdamState, Graph, NodeId, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeTrainConfig {
    pub arch: VaeArch,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the KL term.
    pub beta: f64,
    pub lr: f64,
    /// The learning rate follows a cosine from `lr` down to `lr * final_lr_frac`.
    pub final_lr_frac: f64,
    pub seed: u64,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        Self {
            arch: VaeArch::standard(),
            epochs: 500,
            batch_size: 32,
            beta: 1e-3,
            lr: 1e-3,
            final_lr_frac: 1.0,
            seed: 0,
        }
    }
}

impl VaeTrainConfig {
    /// Small preset for 64-point parts. A weak KL term and a decaying rate keep the round trip
    /// within a few percent of the part diagonal.
    pub fn desk() -> Self {
        Self {
            arch: VaeArch::desk(),
            epochs: 1500,
            beta: 1e-5,
            lr: 3e-3,
            final_lr_frac: 0.02,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedVae {
    /// Frozen weights with eval-mode batch-norm statistics.
    pub params: VaeParams,
    /// Mean training loss per epoch.
    pub curve: Vec<f64>,
}

struct BatchGraph {
    graph: Graph,
    points: NodeId,
    eps: NodeId,
    loss: NodeId,
    bindings: Vec<(usize, NodeId)>,
}

impl BatchGraph {
    fn build(params: &VaeParams, batch: usize, beta: f64) -> Result<Self> {
        let arch = params.arch();
        let mut graph = Graph::new();
        graph.set_training(true);
        let points = graph.input("points", &[batch * arch.points, 3]);
        let eps = graph.input("eps", &[batch, arch.latent]);
        let mut leaves = ParamLeaves::new(params, true);
        let (mu, logvar) = leaves.encoder(&mut graph, points)?;
        let half = graph.scale(logvar, 0.5);
        let std = graph.exp(half);
        let noise = graph.mul(std, eps)?;
        let z = graph.add(mu, noise)?;
        let recon = leaves.decoder(&mut graph, z)?;
        let rec = graph.chamfer_groups(recon, points, batch)?;
        let kl = graph.gaussian_kl(mu, logvar)?;
        let kl = graph.scale(kl, beta);
        let loss = graph.add(rec, kl)?;
        Ok(Self {
            graph,
            points,
            eps,
            loss,
            bindings: leaves.bindings(),
        })
    }
}

/// Splits `n` items into `ceil(n / batch)` batches whose sizes differ by at most one.
fn batch_sizes(n: usize, batch: usize) -> Vec<usize> {
    let count = n.div_ceil(batch);
    (0..count).map(|i| n / count + usize::from(i < n % count)).collect()
}

/// Trains the autoencoder with the reparameterization trick and Adam, then freezes it.
pub fn train_vae(library: &PartLibrary, cfg: &VaeTrainConfig) -> Result<TrainedVae> {
    if library.len() < 2 {
        return Err(Error::InvalidArgument(format!("training needs at least 2 parts, got {}", library.len())));
    }
    if cfg.batch_size < 2 || cfg.epochs == 0 || !(cfg.lr > 0.0) || !(0.0..=1.0).contains(&cfg.final_lr_frac) {
        return Err(Error::InvalidArgument(format!("invalid training config {cfg:?}")));
    }
    let arch = &cfg.arch;
    if library.points_per_part() != Some(arch.points) {
        return Err(Error::shape(
            "training library",
            format!("parts have {:?} points, architecture expects {}", library.points_per_part(), arch.points),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = VaeParams::init(arch, &mut rng)?;
    let trainable = params.trainable_indices();
    let mut adam = {
        let t: Vec<Tensor> = trainable.iter().map(|&i| params.tensors()[i].clone()).collect();
        AdamState::new(&t)
    };
    let flats: Vec<Vec<f64>> = library.entries().iter().map(|e| e.cloud.flat()).collect();
    let mut graphs: HashMap<usize, BatchGraph> = HashMap::new();
    let mut order: Vec<usize> = (0..library.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let progress = epoch as f64 / (cfg.epochs.max(2) - 1) as f64;
        let lr = cfg.lr * (cfg.final_lr_frac + (1.0 - cfg.final_lr_frac) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
        order.shuffle(&mut rng);
        let mut start = 0;
        let mut total = 0.0;
        for size in batch_sizes(order.len(), cfg.batch_size) {
            let idx = &order[start..start + size];
            start += size;
            if !graphs.contains_key(&size) {
                graphs.insert(size, BatchGraph::build(&params, size, cfg.beta)?);
            }
            let bg = graphs.get_mut(&size).expect("inserted above");
            for &(i, node) in &bg.bindings {
                bg.graph.set_from(node, &params.tensors()[i])?;
            }
            let pts: Vec<f64> = idx.iter().flat_map(|&i| flats[i].iter().copied()).collect();
            bg.graph.set(bg.points, Tensor::new(vec![size * arch.points, 3], pts)?)?;
            let noise: Vec<f64> = (0..size * arch.latent).map(|_| StandardNormal.sample(&mut rng)).collect();
            bg.graph.set(bg.eps, Tensor::new(vec![size, arch.latent], noise)?)?;
            bg.graph.forward()?;
            let loss = bg.graph.value(bg.loss).expect("forwarded").item();
            if !loss.is_finite() {
                let mut last_good = params.clone();
                last_good.freeze();
                return Err(Error::Diverged {
                    epoch,
                    last_good: Box::new(last_good),
                });
            }
            total += loss * size as f64;
            bg.graph.backward(bg.loss)?;

            let tensors = params.tensors_mut()?;
            for &(i, node) in &bg.bindings {
                if !trainable.contains(&i) {
                    // Batch-norm running statistics were updated in place during forward.
                    tensors[i].copy_from(bg.graph.value(node).expect("leaf fed"));
                }
            }
            let grads: Vec<Tensor> = trainable
                .iter()
                .map(|&i| {
                    let node = bg.bindings.iter().find(|b| b.0 == i).map(|b| b.1);
                    node.and_then(|n| bg.graph.grad(n).cloned())
                        .unwrap_or_else(|| Tensor::zeros(tensors[i].shape()))
                })
                .collect();
            let mut live: Vec<Tensor> = trainable
                .iter()
                .map(|&i| std::mem::replace(&mut tensors[i], Tensor::scalar(0.0)))
                .collect();
            adam_update(&mut live, &grads, &mut adam, lr);
            for (&i, t) in trainable.iter().zip(live) {
                tensors[i] = t;
            }
        }
        let mean = total / order.len() as f64;
        debug!("vae epoch {epoch}: loss {mean:.6}");
        curve.push(mean);
    }
    info!(
        "vae trained: {} epochs, loss {:.6} -> {:.6}",
        cfg.epochs,
        curve.first().copied().unwrap_or(f64::NAN),
        curve.last().copied().unwrap_or(f64::NAN)
    );
    params.freeze();
    Ok(TrainedVae { params, curve })
}

/// Mean deterministic loss (decode of the mean code) over `clouds`, in eval mode.
pub fn evaluate_vae(params: &VaeParams, clouds: &[PointCloud], beta: f64) -> Result<f64> {
    if clouds.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut codec = PartCodec::new(std::sync::Arc::new(params.clone()));
    let codes = codec.encode_batch(clouds)?;
    let mus: Vec<Vec<f64>> = codes.iter().map(|c| c.0.clone()).collect();
    let recons = codec.decode_batch(&mus)?;
    let total: f64 = clouds
        .iter()
        .zip(&recons)
        .zip(&codes)
        .map(|((p, r), (mu, lv))| chamfer(r, p) + beta * gaussian_kl(mu, lv))
        .sum();
    Ok(total / clouds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_are_balanced() {
        assert_eq!(batch_sizes(40, 32), vec![20, 20]);
        assert_eq!(batch_sizes(33, 32), vec![17, 16]);
        assert_eq!(batch_sizes(10, 32), vec![10]);
        assert_eq!(batch_sizes(64, 32), vec![32, 32]);
    }
}
