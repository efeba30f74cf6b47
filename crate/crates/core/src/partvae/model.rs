use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geom::{chamfer, PointCloud};
use crate::numcore::{Graph, NodeId, Tensor, BN_EPS, BN_MOMENTUM, LEAKY_SLOPE};

/// Layer widths of the part autoencoder.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VaeArch {
    /// Points per part cloud, both encoder input and decoder output.
    pub points: usize,
    pub latent: usize,
    /// Widths of the pointwise layers before max-pooling.
    pub encoder: Vec<usize>,
    /// Hidden widths of the decoder MLP; the output layer emits `points * 3`.
    pub decoder: Vec<usize>,
}

impl VaeArch {
    /// Full-size model: 512-point parts, 64-d latent.
    pub fn standard() -> Self {
        Self {
            points: 512,
            latent: 64,
            encoder: vec![32, 64, 64, 64],
            decoder: vec![512, 512, 1024, 1024],
        }
    }

    /// Reduced build for single-machine experiments: 64-point parts and a narrower decoder.
    pub fn desk() -> Self {
        Self {
            points: 64,
            latent: 64,
            encoder: vec![32, 64, 64, 64],
            decoder: vec![128, 128, 256, 256],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = self.points == 0
            || self.latent == 0
            || self.encoder.is_empty()
            || self.decoder.is_empty()
            || self.encoder.iter().chain(&self.decoder).any(|&w| w == 0);
        if bad {
            return Err(Error::InvalidArgument(format!("invalid architecture {self:?}")));
        }
        Ok(())
    }

    /// Name and shape of every tensor, in storage order.
    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut dense = |prefix: String, fan_in: usize, fan_out: usize, bn: bool| {
            out.push((format!("{prefix}.w"), vec![fan_in, fan_out]));
            out.push((format!("{prefix}.b"), vec![fan_out]));
            if bn {
                for s in ["gamma", "beta", "mean", "var"] {
                    out.push((format!("{prefix}.bn.{s}"), vec![fan_out]));
                }
            }
        };
        let mut width = 3;
        for (i, &w) in self.encoder.iter().enumerate() {
            dense(format!("enc.{i}"), width, w, true);
            width = w;
        }
        dense("enc.mu".into(), width, self.latent, false);
        dense("enc.logvar".into(), width, self.latent, false);
        width = self.latent;
        for (i, &w) in self.decoder.iter().enumerate() {
            dense(format!("dec.{i}"), width, w, true);
            width = w;
        }
        dense("dec.out".into(), width, self.points * 3, false);
        out
    }
}

fn is_running_stat(name: &str) -> bool {
    name.ends_with(".bn.mean") || name.ends_with(".bn.var")
}

/// Autoencoder weights. Once frozen they cannot be mutated through this type.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeParams {
    arch: VaeArch,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    frozen: bool,
}

impl VaeParams {
    /// Fresh weights: uniform `±1/sqrt(fan_in)` for dense layers, identity batch-norm.
    pub fn init<R: Rng>(arch: &VaeArch, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        let mut fan_in = 1;
        for (name, shape) in arch.manifest() {
            let n: usize = shape.iter().product();
            let data = if name.ends_with(".w") {
                fan_in = shape[0];
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            } else if name.ends_with(".b") {
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            } else if name.ends_with(".gamma") || name.ends_with(".var") {
                vec![1.0; n]
            } else {
                vec![0.0; n]
            };
            names.push(name);
            tensors.push(Tensor::new(shape, data)?);
        }
        Ok(Self {
            arch: arch.clone(),
            names,
            tensors,
            frozen: false,
        })
    }

    pub(crate) fn from_parts(arch: VaeArch, tensors: Vec<Tensor>, frozen: bool) -> Result<Self> {
        arch.validate()?;
        let manifest = arch.manifest();
        if manifest.len() != tensors.len() {
            return Err(Error::shape("vae params", format!("expected {} tensors, got {}", manifest.len(), tensors.len())));
        }
        for ((name, shape), t) in manifest.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::shape(name.clone(), format!("expected {shape:?}, got {:?}", t.shape())));
            }
        }
        Ok(Self {
            arch,
            names: manifest.into_iter().map(|(n, _)| n).collect(),
            tensors,
            frozen,
        })
    }

    pub fn arch(&self) -> &VaeArch {
        &self.arch
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub(crate) fn tensors_mut(&mut self) -> Result<&mut [Tensor]> {
        if self.frozen {
            return Err(Error::Usage("parameters are frozen".into()));
        }
        Ok(&mut self.tensors)
    }

    /// Indices of tensors updated by gradient descent (everything except running statistics).
    pub(crate) fn trainable_indices(&self) -> Vec<usize> {
        (0..self.names.len()).filter(|&i| !is_running_stat(&self.names[i])).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Hex SHA-256 over the architecture, tensor names, shapes and values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.arch).expect("architecture serializes"));
        for (name, t) in self.names.iter().zip(&self.tensors) {
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Convenience wrapper building a throwaway [`PartCodec`].
    pub fn encode(&self, cloud: &PointCloud) -> Result<(Vec<f64>, Vec<f64>)> {
        PartCodec::new(Arc::new(self.clone())).encode(cloud)
    }

    pub fn decode(&self, code: &[f64]) -> Result<PointCloud> {
        PartCodec::new(Arc::new(self.clone())).decode(code)
    }
}

/// Leaves for autoencoder tensors inside a graph, created on first use.
pub struct ParamLeaves<'a> {
    params: &'a VaeParams,
    trainable: bool,
    ids: HashMap<usize, NodeId>,
}

impl<'a> ParamLeaves<'a> {
    pub fn new(params: &'a VaeParams, trainable: bool) -> Self {
        Self {
            params,
            trainable,
            ids: HashMap::new(),
        }
    }

    fn leaf(&mut self, g: &mut Graph, name: &str) -> Result<NodeId> {
        let idx = self
            .params
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Usage(format!("no parameter named {name}")))?;
        if let Some(&id) = self.ids.get(&idx) {
            return Ok(id);
        }
        let t = &self.params.tensors[idx];
        let id = g.leaf(name, t.shape(), self.trainable && !is_running_stat(name));
        g.set(id, t.clone())?;
        self.ids.insert(idx, id);
        Ok(id)
    }

    /// `(tensor index, node)` for every bound tensor.
    pub fn bindings(&self) -> Vec<(usize, NodeId)> {
        let mut v: Vec<_> = self.ids.iter().map(|(&i, &n)| (i, n)).collect();
        v.sort_unstable();
        v
    }

    fn dense(&mut self, g: &mut Graph, x: NodeId, prefix: &str, bn: bool) -> Result<NodeId> {
        let w = self.leaf(g, &format!("{prefix}.w"))?;
        let b = self.leaf(g, &format!("{prefix}.b"))?;
        let y = g.linear(x, w, b)?;
        if !bn {
            return Ok(y);
        }
        let gamma = self.leaf(g, &format!("{prefix}.bn.gamma"))?;
        let beta = self.leaf(g, &format!("{prefix}.bn.beta"))?;
        let mean = self.leaf(g, &format!("{prefix}.bn.mean"))?;
        let var = self.leaf(g, &format!("{prefix}.bn.var"))?;
        let y = g.batch_norm(y, gamma, beta, mean, var, BN_MOMENTUM, BN_EPS)?;
        Ok(g.leaky_relu(y, LEAKY_SLOPE))
    }

    /// Encoder over `points: [batch * arch.points, 3]`. Returns `(mu, logvar)`, each `[batch, latent]`.
    pub fn encoder(&mut self, g: &mut Graph, points: NodeId) -> Result<(NodeId, NodeId)> {
        let arch = self.params.arch.clone();
        let mut x = points;
        for i in 0..arch.encoder.len() {
            x = self.dense(g, x, &format!("enc.{i}"), true)?;
        }
        let pooled = g.max_pool_groups(x, arch.points)?;
        let mu = self.dense(g, pooled, "enc.mu", false)?;
        let logvar = self.dense(g, pooled, "enc.logvar", false)?;
        Ok((mu, logvar))
    }

    /// Decoder over `codes: [batch, latent]`. Returns points `[batch * arch.points, 3]`.
    pub fn decoder(&mut self, g: &mut Graph, codes: NodeId) -> Result<NodeId> {
        let arch = self.params.arch.clone();
        let batch = g.shape(codes)[0];
        let mut x = codes;
        for i in 0..arch.decoder.len() {
            x = self.dense(g, x, &format!("dec.{i}"), true)?;
        }
        let out = self.dense(g, x, "dec.out", false)?;
        g.reshape(out, &[batch * arch.points, 3])
    }
}

struct EncodeGraph {
    graph: Graph,
    input: NodeId,
    mu: NodeId,
    logvar: NodeId,
}

struct DecodeGraph {
    graph: Graph,
    input: NodeId,
    output: NodeId,
}

/// Eval-mode encoder/decoder with graphs cached per batch size.
pub struct PartCodec {
    params: Arc<VaeParams>,
    encoders: HashMap<usize, EncodeGraph>,
    decoders: HashMap<usize, DecodeGraph>,
}

impl PartCodec {
    pub fn new(params: Arc<VaeParams>) -> Self {
        Self {
            params,
            encoders: HashMap::new(),
            decoders: HashMap::new(),
        }
    }

    pub fn params(&self) -> &Arc<VaeParams> {
        &self.params
    }

    pub fn arch(&self) -> &VaeArch {
        &self.params.arch
    }

    fn encode_graph(&mut self, batch: usize) -> Result<&mut EncodeGraph> {
        if !self.encoders.contains_key(&batch) {
            let mut graph = Graph::new();
            let input = graph.input("points", &[batch * self.params.arch.points, 3]);
            let (mu, logvar) = ParamLeaves::new(&self.params, false).encoder(&mut graph, input)?;
            self.encoders.insert(batch, EncodeGraph { graph, input, mu, logvar });
        }
        Ok(self.encoders.get_mut(&batch).expect("inserted above"))
    }

    fn decode_graph(&mut self, batch: usize) -> Result<&mut DecodeGraph> {
        if !self.decoders.contains_key(&batch) {
            let mut graph = Graph::new();
            let input = graph.input("codes", &[batch, self.params.arch.latent]);
            let output = ParamLeaves::new(&self.params, false).decoder(&mut graph, input)?;
            self.decoders.insert(batch, DecodeGraph { graph, input, output });
        }
        Ok(self.decoders.get_mut(&batch).expect("inserted above"))
    }

    /// `(mu, logvar)` of a cloud with exactly `arch.points` points.
    pub fn encode(&mut self, cloud: &PointCloud) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok(self.encode_batch(std::slice::from_ref(cloud))?.remove(0))
    }

    pub fn encode_batch(&mut self, clouds: &[PointCloud]) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        let n = self.params.arch.points;
        let latent = self.params.arch.latent;
        if clouds.is_empty() {
            return Ok(Vec::new());
        }
        let mut flat = Vec::with_capacity(clouds.len() * n * 3);
        for c in clouds {
            if c.len() != n {
                return Err(Error::shape("encoder input", format!("expected [{n}, 3], got [{}, 3]", c.len())));
            }
            flat.extend(c.flat());
        }
        let eg = self.encode_graph(clouds.len())?;
        eg.graph.set(eg.input, Tensor::new(vec![clouds.len() * n, 3], flat)?)?;
        eg.graph.forward()?;
        let mu = eg.graph.value(eg.mu).expect("forwarded").data();
        let lv = eg.graph.value(eg.logvar).expect("forwarded").data();
        Ok((0..clouds.len())
            .map(|b| (mu[b * latent..(b + 1) * latent].to_vec(), lv[b * latent..(b + 1) * latent].to_vec()))
            .collect())
    }

    pub fn decode(&mut self, code: &[f64]) -> Result<PointCloud> {
        Ok(self.decode_batch(&[code.to_vec()])?.remove(0))
    }

    pub fn decode_batch(&mut self, codes: &[Vec<f64>]) -> Result<Vec<PointCloud>> {
        let latent = self.params.arch.latent;
        let n = self.params.arch.points;
        if codes.is_empty() {
            return Ok(Vec::new());
        }
        let mut flat = Vec::with_capacity(codes.len() * latent);
        for c in codes {
            if c.len() != latent {
                return Err(Error::shape("decoder input", format!("expected {latent} values, got {}", c.len())));
            }
            flat.extend_from_slice(c);
        }
        let dg = self.decode_graph(codes.len())?;
        dg.graph.set(dg.input, Tensor::new(vec![codes.len(), latent], flat)?)?;
        dg.graph.forward()?;
        let out = dg.graph.value(dg.output).expect("forwarded").data();
        (0..codes.len())
            .map(|b| PointCloud::from_flat(&out[b * n * 3..(b + 1) * n * 3]))
            .collect()
    }
}

/// `chamfer(recon, p) + beta * KL(N(mu, exp(logvar)) || N(0, I))`.
pub fn vae_loss(p: &PointCloud, recon: &PointCloud, mu: &[f64], logvar: &[f64], beta: f64) -> Result<f64> {
    if mu.len() != logvar.len() {
        return Err(Error::shape("vae_loss", format!("mu has {} entries, logvar {}", mu.len(), logvar.len())));
    }
    Ok(chamfer(recon, p) + beta * gaussian_kl(mu, logvar))
}

pub fn gaussian_kl(mu: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mu.iter().zip(logvar).map(|(m, lv)| m * m + lv.exp() - lv - 1.0).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{finite_diff_gradient, relative_error};
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn small() -> VaeArch {
        VaeArch {
            points: 16,
            latent: 8,
            encoder: vec![8, 8],
            decoder: vec![12, 12],
        }
    }

    fn cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new((0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect()).unwrap()
    }

    #[test]
    fn standard_layer_shapes() {
        let m: HashMap<String, Vec<usize>> = VaeArch::standard().manifest().into_iter().collect();
        assert_eq!(m["enc.0.w"], vec![3, 32]);
        assert_eq!(m["enc.3.w"], vec![64, 64]);
        assert_eq!(m["enc.mu.w"], vec![64, 64]);
        assert_eq!(m["enc.logvar.w"], vec![64, 64]);
        assert_eq!(m["dec.0.w"], vec![64, 512]);
        assert_eq!(m["dec.3.w"], vec![1024, 1024]);
        assert_eq!(m["dec.out.w"], vec![1024, 1536]);
    }

    #[test]
    fn encode_dims_and_permutation_invariance() {
        let p = VaeParams::init(&VaeArch::desk(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mut codec = PartCodec::new(Arc::new(p));
        let c = cloud(64, 1);
        let (mu, lv) = codec.encode(&c).unwrap();
        assert_eq!((mu.len(), lv.len()), (64, 64));
        let mut pts = c.points().to_vec();
        pts.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
        let (mu2, _) = codec.encode(&PointCloud::new(pts).unwrap()).unwrap();
        assert_eq!(mu, mu2);
        assert!(matches!(codec.encode(&cloud(63, 1)), Err(Error::Shape { .. })));
    }

    #[test]
    fn decode_shape_and_determinism() {
        let p = VaeParams::init(&VaeArch::desk(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let mut codec = PartCodec::new(Arc::new(p.clone()));
        let e: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = codec.decode(&e).unwrap();
        assert_eq!(a.len(), 64);
        assert_eq!(a, codec.decode(&e).unwrap());
        assert_eq!(a, p.decode(&e).unwrap());
        let batch = codec.decode_batch(&[e.clone(), vec![0.0; 64]]).unwrap();
        assert_eq!(batch[0], a);
    }

    #[test]
    fn standard_decoder_emits_512_points() {
        let p = VaeParams::init(&VaeArch::standard(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(p.decode(&[0.1; 64]).unwrap().len(), 512);
    }

    #[test]
    fn chamfer_through_decoder_matches_finite_differences() {
        let p = VaeParams::init(&small(), &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let target = cloud(16, 2);
        let mut g = Graph::new();
        let codes = g.param("codes", &[1, 8]);
        let pts = ParamLeaves::new(&p, false).decoder(&mut g, codes).unwrap();
        let tgt = g.input("target", &[16, 3]);
        g.set(tgt, target.to_tensor()).unwrap();
        let loss = g.chamfer(pts, tgt).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let e: Vec<f64> = (0..8).map(|_| StandardNormal.sample(&mut rng)).collect();
            let e = Tensor::new(vec![1, 8], e).unwrap();
            g.set(codes, e.clone()).unwrap();
            g.forward().unwrap();
            g.backward(loss).unwrap();
            let analytic = g.grad(codes).unwrap().clone();
            let mut gg = g.clone();
            let numeric = finite_diff_gradient(
                |x| {
                    gg.set(codes, x.clone())?;
                    gg.forward()?;
                    Ok(gg.value(loss).unwrap().item())
                },
                &e,
                1e-5,
            )
            .unwrap();
            let err = relative_error(&analytic, &numeric, 1e-8);
            assert!(err < 1e-4, "{err}");
        }
    }

    #[test]
    fn loss_closed_forms() {
        let c = cloud(16, 3);
        assert_eq!(vae_loss(&c, &c, &[0.0; 64], &[0.0; 64], 1e-3).unwrap(), 0.0);
        assert_eq!(gaussian_kl(&[0.0; 64], &[0.0; 64]), 0.0);
        assert!((gaussian_kl(&[1.0; 64], &[0.0; 64]) - 32.0).abs() < 1e-12);
        assert!((vae_loss(&c, &c, &[1.0; 64], &[0.0; 64], 1.0).unwrap() - 32.0).abs() < 1e-12);
    }

    #[test]
    fn frozen_params_reject_mutation() {
        let mut p = VaeParams::init(&small(), &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let sum = p.checksum();
        assert!(p.tensors_mut().is_ok());
        p.freeze();
        assert!(p.tensors_mut().is_err());
        let _ = p.decode(&[0.0; 8]).unwrap();
        assert_eq!(sum, p.checksum());
    }
}
