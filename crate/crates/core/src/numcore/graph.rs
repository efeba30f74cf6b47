//! Static reverse-mode autodiff graph over a fixed set of operations.
//!
//! A [`Graph`] is built once (leaves first, then ops in topological order), its leaves
//! are fed with [`Graph::set`], and [`Graph::forward`] / [`Graph::backward`] may then be
//! run any number of times. Node ids are only meaningful for the graph that issued them.

use std::collections::HashMap;

use super::gemm::gemm;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::geom::kernels::{dist2, nearest_both};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub enum Op {
    Leaf {
        requires_grad: bool,
    },
    /// `x · w + b`, `x: [n, in]`, `w: [in, out]`, `b: [out]`.
    Linear {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    LeakyRelu {
        x: NodeId,
        slope: f64,
    },
    /// Per-column batch normalisation of `x: [n, c]`.
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: NodeId,
        running_var: NodeId,
        momentum: f64,
        eps: f64,
    },
    /// Column-wise max over consecutive row groups of size `group`.
    MaxPoolGroups {
        x: NodeId,
        group: usize,
    },
    Reshape {
        x: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        x: NodeId,
        factor: f64,
    },
    AddScalar {
        x: NodeId,
        offset: f64,
    },
    Exp {
        x: NodeId,
    },
    Sum {
        x: NodeId,
    },
    Mean {
        x: NodeId,
    },
    /// Mean over `groups` of the symmetric mean chamfer distance between row blocks of `a` and `b`.
    Chamfer {
        a: NodeId,
        b: NodeId,
        groups: usize,
    },
    /// Per-group yaw rotation about +y followed by translation.
    RigidYaw {
        points: NodeId,
        t: NodeId,
        r: NodeId,
    },
    /// Householder reflection of points across a fixed plane.
    Reflect {
        x: NodeId,
        point: [f64; 3],
        normal: [f64; 3],
    },
    SliceRows {
        x: NodeId,
        start: usize,
        len: usize,
    },
    ConcatRows {
        xs: Vec<NodeId>,
    },
    /// Mean hinge `max(0, tau - |a_i - b_j|)` over all cross pairs.
    Overlap {
        a: NodeId,
        b: NodeId,
        tau: f64,
    },
    /// Batch mean of `KL(N(mu, exp(logvar)) || N(0, I))`.
    GaussianKl {
        mu: NodeId,
        logvar: NodeId,
    },
}

impl Op {
    fn operands(&self) -> Vec<NodeId> {
        use Op::*;
        match self {
            Leaf { .. } => vec![],
            Linear { x, w, b } => vec![*x, *w, *b],
            LeakyRelu { x, .. }
            | MaxPoolGroups { x, .. }
            | Reshape { x }
            | Scale { x, .. }
            | AddScalar { x, .. }
            | Exp { x }
            | Sum { x }
            | Mean { x }
            | Reflect { x, .. }
            | SliceRows { x, .. } => vec![*x],
            BatchNorm {
                x, gamma, beta, ..
            } => vec![*x, *gamma, *beta],
            Add { a, b } | Mul { a, b } | Chamfer { a, b, .. } | Overlap { a, b, .. } => {
                vec![*a, *b]
            }
            RigidYaw { points, t, r } => vec![*points, *t, *r],
            ConcatRows { xs } => xs.clone(),
            GaussianKl { mu, logvar } => vec![*mu, *logvar],
        }
    }

    fn kind(&self) -> &'static str {
        use Op::*;
        match self {
            Leaf { .. } => "leaf",
            Linear { .. } => "linear",
            LeakyRelu { .. } => "leaky_relu",
            BatchNorm { .. } => "batch_norm",
            MaxPoolGroups { .. } => "max_pool",
            Reshape { .. } => "reshape",
            Add { .. } => "add",
            Mul { .. } => "mul",
            Scale { .. } => "scale",
            AddScalar { .. } => "add_scalar",
            Exp { .. } => "exp",
            Sum { .. } => "sum",
            Mean { .. } => "mean",
            Chamfer { .. } => "chamfer",
            RigidYaw { .. } => "rigid_yaw",
            Reflect { .. } => "reflect",
            SliceRows { .. } => "slice_rows",
            ConcatRows { .. } => "concat_rows",
            Overlap { .. } => "overlap",
            GaussianKl { .. } => "gaussian_kl",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    name: Option<String>,
    needs_grad: bool,
}

#[derive(Clone, Debug, Default)]
enum Cache {
    #[default]
    Empty,
    Nearest {
        ab: Vec<(usize, f64)>,
        ba: Vec<(usize, f64)>,
    },
    Norm {
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Argmax(Vec<usize>),
}

#[derive(Clone, Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    values: Vec<Option<Tensor>>,
    grads: Vec<Option<Tensor>>,
    caches: Vec<Cache>,
    names: HashMap<String, NodeId>,
    training: bool,
    forwarded: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (shape[0], 1),
        _ => (shape[0], shape[1..].iter().product()),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            caches: Vec::new(),
            names: HashMap::new(),
            training: false,
            forwarded: false,
        }
    }

    /// Training mode makes batch-norm nodes use (and update) batch statistics.
    pub fn set_training(&mut self, training: bool) {
        self.training = training;
        self.forwarded = false;
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    fn label(&self, id: NodeId) -> String {
        let node = &self.nodes[id.0];
        match &node.name {
            Some(n) => format!("{} '{}' (#{})", node.op.kind(), n, id.0),
            None => format!("{} #{}", node.op.kind(), id.0),
        }
    }

    fn push(&mut self, op: Op, shape: Vec<usize>) -> NodeId {
        let needs_grad = match &op {
            Op::Leaf { requires_grad } => *requires_grad,
            other => other.operands().iter().any(|o| self.nodes[o.0].needs_grad),
        };
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            shape,
            name: None,
            needs_grad,
        });
        self.values.push(None);
        self.grads.push(None);
        self.caches.push(Cache::Empty);
        id
    }

    /// Attaches a lookup name to a node. Later names shadow earlier ones.
    pub fn name(&mut self, id: NodeId, name: &str) -> NodeId {
        self.nodes[id.0].name = Some(name.to_string());
        self.names.insert(name.to_string(), id);
        id
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.names.get(name).copied()
    }

    /// A named leaf. `requires_grad` leaves receive gradients in [`Graph::backward`].
    pub fn leaf(&mut self, name: &str, shape: &[usize], requires_grad: bool) -> NodeId {
        let id = self.push(Op::Leaf { requires_grad }, shape.to_vec());
        self.name(id, name)
    }

    pub fn input(&mut self, name: &str, shape: &[usize]) -> NodeId {
        self.leaf(name, shape, false)
    }

    pub fn param(&mut self, name: &str, shape: &[usize]) -> NodeId {
        self.leaf(name, shape, true)
    }

    fn expect(&self, ctx: &str, id: NodeId, cond: bool, detail: impl FnOnce() -> String) -> Result<()> {
        if cond {
            Ok(())
        } else {
            Err(Error::shape(format!("{ctx} on {}", self.label(id)), detail()))
        }
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xs, ws, bs) = (self.shape(x).to_vec(), self.shape(w).to_vec(), self.shape(b).to_vec());
        self.expect("linear", x, xs.len() == 2 && ws.len() == 2, || {
            format!("expected 2-d input and weight, got {xs:?} and {ws:?}")
        })?;
        self.expect("linear", w, xs[1] == ws[0], || format!("input {xs:?} vs weight {ws:?}"))?;
        self.expect("linear", b, bs == [ws[1]], || format!("bias {bs:?} vs weight {ws:?}"))?;
        Ok(self.push(Op::Linear { x, w, b }, vec![xs[0], ws[1]]))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let s = self.shape(x).to_vec();
        self.push(Op::LeakyRelu { x, slope }, s)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: NodeId,
        running_var: NodeId,
        momentum: f64,
        eps: f64,
    ) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        self.expect("batch_norm", x, xs.len() == 2, || format!("expected [n, c], got {xs:?}"))?;
        for p in [gamma, beta, running_mean, running_var] {
            let ps = self.shape(p).to_vec();
            self.expect("batch_norm", p, ps == [xs[1]], || format!("expected [{}], got {ps:?}", xs[1]))?;
        }
        Ok(self.push(
            Op::BatchNorm {
                x,
                gamma,
                beta,
                running_mean,
                running_var,
                momentum,
                eps,
            },
            xs,
        ))
    }

    pub fn max_pool_groups(&mut self, x: NodeId, group: usize) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        self.expect("max_pool", x, xs.len() == 2 && group > 0 && xs[0] % group == 0, || {
            format!("{xs:?} is not divisible into groups of {group}")
        })?;
        Ok(self.push(Op::MaxPoolGroups { x, group }, vec![xs[0] / group, xs[1]]))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        self.expect("reshape", x, xs.iter().product::<usize>() == shape.iter().product::<usize>(), || {
            format!("cannot view {xs:?} as {shape:?}")
        })?;
        Ok(self.push(Op::Reshape { x }, shape.to_vec()))
    }

    fn same_shape(&self, ctx: &str, a: NodeId, b: NodeId) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        self.expect(ctx, b, sa == sb, || format!("{sa:?} vs {sb:?}"))?;
        Ok(sa)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.same_shape("add", a, b)?;
        Ok(self.push(Op::Add { a, b }, s))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.same_shape("mul", a, b)?;
        Ok(self.push(Op::Mul { a, b }, s))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let s = self.shape(x).to_vec();
        self.push(Op::Scale { x, factor }, s)
    }

    pub fn add_scalar(&mut self, x: NodeId, offset: f64) -> NodeId {
        let s = self.shape(x).to_vec();
        self.push(Op::AddScalar { x, offset }, s)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let s = self.shape(x).to_vec();
        self.push(Op::Exp { x }, s)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sum { x }, vec![])
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Mean { x }, vec![])
    }

    fn points_shape(&self, ctx: &str, x: NodeId) -> Result<usize> {
        let s = self.shape(x).to_vec();
        self.expect(ctx, x, s.len() == 2 && s[1] == 3 && s[0] > 0, || {
            format!("expected non-empty [n, 3] points, got {s:?}")
        })?;
        Ok(s[0])
    }

    pub fn chamfer(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.chamfer_groups(a, b, 1)
    }

    pub fn chamfer_groups(&mut self, a: NodeId, b: NodeId, groups: usize) -> Result<NodeId> {
        let na = self.points_shape("chamfer", a)?;
        let nb = self.points_shape("chamfer", b)?;
        self.expect("chamfer", a, groups > 0 && na % groups == 0 && nb % groups == 0, || {
            format!("{na} and {nb} rows cannot be split into {groups} groups")
        })?;
        Ok(self.push(Op::Chamfer { a, b, groups }, vec![]))
    }

    pub fn rigid_yaw(&mut self, points: NodeId, t: NodeId, r: NodeId) -> Result<NodeId> {
        let n = self.points_shape("rigid_yaw", points)?;
        let ts = self.shape(t).to_vec();
        let rs = self.shape(r).to_vec();
        self.expect("rigid_yaw", t, ts.len() == 2 && ts[1] == 3, || format!("translation {ts:?}"))?;
        let g = ts[0];
        self.expect("rigid_yaw", r, rs == [g], || format!("yaw {rs:?} vs {g} groups"))?;
        self.expect("rigid_yaw", points, g > 0 && n % g == 0, || format!("{n} points in {g} groups"))?;
        Ok(self.push(Op::RigidYaw { points, t, r }, vec![n, 3]))
    }

    pub fn reflect(&mut self, x: NodeId, point: [f64; 3], normal: [f64; 3]) -> Result<NodeId> {
        let n = self.points_shape("reflect", x)?;
        Ok(self.push(Op::Reflect { x, point, normal }, vec![n, 3]))
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        self.expect("slice_rows", x, !s.is_empty() && start + len <= s[0] && len > 0, || {
            format!("rows {start}..{} of {s:?}", start + len)
        })?;
        let mut out = s.clone();
        out[0] = len;
        Ok(self.push(Op::SliceRows { x, start, len }, out))
    }

    pub fn concat_rows(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::shape("concat_rows", "no operands"))?;
        let tail = self.shape(first)[1..].to_vec();
        let mut rows = 0;
        for &x in xs {
            let s = self.shape(x).to_vec();
            self.expect("concat_rows", x, !s.is_empty() && s[1..] == tail[..], || {
                format!("{s:?} vs trailing {tail:?}")
            })?;
            rows += s[0];
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        Ok(self.push(Op::ConcatRows { xs: xs.to_vec() }, shape))
    }

    pub fn overlap(&mut self, a: NodeId, b: NodeId, tau: f64) -> Result<NodeId> {
        self.points_shape("overlap", a)?;
        self.points_shape("overlap", b)?;
        Ok(self.push(Op::Overlap { a, b, tau }, vec![]))
    }

    pub fn gaussian_kl(&mut self, mu: NodeId, logvar: NodeId) -> Result<NodeId> {
        let s = self.same_shape("gaussian_kl", mu, logvar)?;
        self.expect("gaussian_kl", mu, s.len() == 2, || format!("expected [batch, dim], got {s:?}"))?;
        Ok(self.push(Op::GaussianKl { mu, logvar }, vec![]))
    }

    /// Feeds a leaf. The tensor's shape must equal the declared shape.
    pub fn set(&mut self, id: NodeId, value: Tensor) -> Result<()> {
        if !matches!(self.nodes[id.0].op, Op::Leaf { .. }) {
            return Err(Error::Usage(format!("{} is not a leaf", self.label(id))));
        }
        if value.shape() != self.nodes[id.0].shape.as_slice() {
            return Err(Error::shape(
                self.label(id),
                format!("declared {:?}, fed {:?}", self.nodes[id.0].shape, value.shape()),
            ));
        }
        self.values[id.0] = Some(value);
        self.forwarded = false;
        Ok(())
    }

    /// Overwrites a leaf in place from a borrowed tensor, reusing its buffer.
    pub fn set_from(&mut self, id: NodeId, value: &Tensor) -> Result<()> {
        match &mut self.values[id.0] {
            Some(v) if v.shape() == value.shape() && matches!(self.nodes[id.0].op, Op::Leaf { .. }) => {
                v.copy_from(value);
                self.forwarded = false;
                Ok(())
            }
            _ => self.set(id, value.clone()),
        }
    }

    pub fn set_named(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| Error::Usage(format!("no node named '{name}'")))?;
        self.set(id, value)
    }

    pub fn value(&self, id: NodeId) -> Option<&Tensor> {
        self.values[id.0].as_ref()
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    /// Feeds the named inputs, runs forward and returns the named outputs.
    pub fn run(&mut self, feeds: Vec<(&str, Tensor)>, outputs: &[&str]) -> Result<HashMap<String, Tensor>> {
        for (name, t) in feeds {
            self.set_named(name, t)?;
        }
        self.forward()?;
        outputs
            .iter()
            .map(|name| {
                let id = self
                    .find(name)
                    .ok_or_else(|| Error::Usage(format!("no node named '{name}'")))?;
                Ok((name.to_string(), self.values[id.0].clone().expect("forward filled every node")))
            })
            .collect()
    }

    fn val(&self, id: NodeId) -> &Tensor {
        self.values[id.0].as_ref().expect("operand evaluated before use")
    }

    pub fn forward(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            let id = NodeId(i);
            if let Op::Leaf { .. } = self.nodes[i].op {
                if self.values[i].is_none() {
                    return Err(Error::Usage(format!("{} was never fed", self.label(id))));
                }
                continue;
            }
            let op = self.nodes[i].op.clone();
            let shape = self.nodes[i].shape.clone();
            let (out, cache) = self.eval(&op, shape)?;
            self.values[i] = Some(out);
            self.caches[i] = cache;
        }
        self.forwarded = true;
        Ok(())
    }

    fn eval(&mut self, op: &Op, shape: Vec<usize>) -> Result<(Tensor, Cache)> {
        let mut cache = Cache::Empty;
        let data: Vec<f64> = match *op {
            Op::Leaf { .. } => unreachable!(),
            Op::Linear { x, w, b } => {
                let (xv, wv, bv) = (self.val(x), self.val(w), self.val(b));
                let (n, k) = rows_cols(xv.shape());
                let m = wv.shape()[1];
                let mut out = Vec::with_capacity(n * m);
                for _ in 0..n {
                    out.extend_from_slice(bv.data());
                }
                gemm(n, k, m, xv.data(), false, wv.data(), false, 1.0, &mut out);
                out
            }
            Op::LeakyRelu { x, slope } => self
                .val(x)
                .data()
                .iter()
                .map(|&v| if v > 0.0 { v } else { slope * v })
                .collect(),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                running_mean,
                running_var,
                momentum,
                eps,
            } => {
                let xv = self.val(x);
                let (n, c) = rows_cols(xv.shape());
                let (g, bt) = (self.val(gamma).data(), self.val(beta).data());
                let (mean, var) = if self.training {
                    let mut mean = vec![0.0; c];
                    let mut var = vec![0.0; c];
                    for row in xv.data().chunks_exact(c) {
                        for (m, v) in mean.iter_mut().zip(row) {
                            *m += v;
                        }
                    }
                    mean.iter_mut().for_each(|m| *m /= n as f64);
                    for row in xv.data().chunks_exact(c) {
                        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                            *s += (v - m) * (v - m);
                        }
                    }
                    var.iter_mut().for_each(|s| *s /= n as f64);
                    (mean, var)
                } else {
                    (
                        self.val(running_mean).data().to_vec(),
                        self.val(running_var).data().to_vec(),
                    )
                };
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
                let mut xhat = Vec::with_capacity(n * c);
                let mut out = Vec::with_capacity(n * c);
                for row in xv.data().chunks_exact(c) {
                    for j in 0..c {
                        let h = (row[j] - mean[j]) * inv_std[j];
                        xhat.push(h);
                        out.push(g[j] * h + bt[j]);
                    }
                }
                if self.training {
                    let unbias = if n > 1 { n as f64 / (n as f64 - 1.0) } else { 1.0 };
                    let rm = self.values[running_mean.0].as_mut().expect("fed");
                    for (r, m) in rm.data_mut().iter_mut().zip(&mean) {
                        *r = (1.0 - momentum) * *r + momentum * m;
                    }
                    let rv = self.values[running_var.0].as_mut().expect("fed");
                    for (r, v) in rv.data_mut().iter_mut().zip(&var) {
                        *r = (1.0 - momentum) * *r + momentum * v * unbias;
                    }
                }
                cache = Cache::Norm { xhat, inv_std };
                out
            }
            Op::MaxPoolGroups { x, group } => {
                let xv = self.val(x);
                let (n, c) = rows_cols(xv.shape());
                let groups = n / group;
                let mut out = vec![f64::NEG_INFINITY; groups * c];
                let mut arg = vec![0usize; groups * c];
                for (r, row) in xv.data().chunks_exact(c).enumerate() {
                    let g = r / group;
                    for j in 0..c {
                        if row[j] > out[g * c + j] {
                            out[g * c + j] = row[j];
                            arg[g * c + j] = r;
                        }
                    }
                }
                cache = Cache::Argmax(arg);
                out
            }
            Op::Reshape { x } => self.val(x).data().to_vec(),
            Op::Add { a, b } => self
                .val(a)
                .data()
                .iter()
                .zip(self.val(b).data())
                .map(|(p, q)| p + q)
                .collect(),
            Op::Mul { a, b } => self
                .val(a)
                .data()
                .iter()
                .zip(self.val(b).data())
                .map(|(p, q)| p * q)
                .collect(),
            Op::Scale { x, factor } => self.val(x).data().iter().map(|v| v * factor).collect(),
            Op::AddScalar { x, offset } => self.val(x).data().iter().map(|v| v + offset).collect(),
            Op::Exp { x } => self.val(x).data().iter().map(|v| v.exp()).collect(),
            Op::Sum { x } => vec![self.val(x).sum()],
            Op::Mean { x } => {
                let v = self.val(x);
                vec![v.sum() / v.len() as f64]
            }
            Op::Chamfer { a, b, groups } => {
                let (av, bv) = (self.val(a).data(), self.val(b).data());
                let (sa, sb) = (av.len() / groups, bv.len() / groups);
                let mut ab = Vec::with_capacity(av.len() / 3);
                let mut ba = Vec::with_capacity(bv.len() / 3);
                let mut total = 0.0;
                for g in 0..groups {
                    let (x, y) = nearest_both(&av[g * sa..(g + 1) * sa], &bv[g * sb..(g + 1) * sb]);
                    total += x.iter().map(|p| p.1).sum::<f64>() / x.len() as f64
                        + y.iter().map(|p| p.1).sum::<f64>() / y.len() as f64;
                    ab.extend(x);
                    ba.extend(y);
                }
                cache = Cache::Nearest { ab, ba };
                vec![total / groups as f64]
            }
            Op::RigidYaw { points, t, r } => {
                let (pv, tv, rv) = (self.val(points).data(), self.val(t).data(), self.val(r).data());
                let groups = rv.len();
                let per = pv.len() / 3 / groups;
                let mut out = Vec::with_capacity(pv.len());
                for (i, p) in pv.chunks_exact(3).enumerate() {
                    let g = i / per;
                    let (s, c) = rv[g].sin_cos();
                    out.push(c * p[0] + s * p[2] + tv[3 * g]);
                    out.push(p[1] + tv[3 * g + 1]);
                    out.push(-s * p[0] + c * p[2] + tv[3 * g + 2]);
                }
                out
            }
            Op::Reflect { x, point, normal } => {
                let mut out = self.val(x).data().to_vec();
                for p in out.chunks_exact_mut(3) {
                    let d = (p[0] - point[0]) * normal[0]
                        + (p[1] - point[1]) * normal[1]
                        + (p[2] - point[2]) * normal[2];
                    for k in 0..3 {
                        p[k] -= 2.0 * d * normal[k];
                    }
                }
                out
            }
            Op::SliceRows { x, start, len } => {
                let xv = self.val(x);
                let c = xv.cols();
                xv.data()[start * c..(start + len) * c].to_vec()
            }
            Op::ConcatRows { ref xs } => {
                let mut out = Vec::new();
                for &x in xs {
                    out.extend_from_slice(self.val(x).data());
                }
                out
            }
            Op::Overlap { a, b, tau } => {
                let (av, bv) = (self.val(a).data(), self.val(b).data());
                let t2 = tau * tau;
                let mut total = 0.0;
                for p in av.chunks_exact(3) {
                    for q in bv.chunks_exact(3) {
                        let d2 = dist2(p, q);
                        if d2 < t2 {
                            total += tau - d2.sqrt();
                        }
                    }
                }
                vec![total / ((av.len() / 3) as f64 * (bv.len() / 3) as f64)]
            }
            Op::GaussianKl { mu, logvar } => {
                let (m, lv) = (self.val(mu), self.val(logvar));
                let batch = m.rows() as f64;
                let kl: f64 = m
                    .data()
                    .iter()
                    .zip(lv.data())
                    .map(|(m, l)| m * m + l.exp() - l - 1.0)
                    .sum();
                vec![0.5 * kl / batch]
            }
        };
        Ok((Tensor::from_parts(shape, data), cache))
    }

    /// Reverse sweep from a scalar `output`; gradients land on every node that needs one.
    pub fn backward(&mut self, output: NodeId) -> Result<()> {
        if !self.forwarded {
            return Err(Error::Usage("backward called before forward".into()));
        }
        if self.nodes[output.0].shape.iter().product::<usize>() != 1 {
            return Err(Error::shape(
                self.label(output),
                "backward seed must be a scalar".to_string(),
            ));
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[output.0] = Some(Tensor::from_parts(self.nodes[output.0].shape.clone(), vec![1.0]));
        for i in (0..=output.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(gy) = self.grads[i].take() else {
                continue;
            };
            let op = self.nodes[i].op.clone();
            self.propagate(i, &op, &gy);
            self.grads[i] = Some(gy);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, data: Vec<f64>) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        match &mut self.grads[id.0] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(&data) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(Tensor::from_parts(self.nodes[id.0].shape.clone(), data)),
        }
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn propagate(&mut self, i: usize, op: &Op, gy: &Tensor) {
        let g = gy.data();
        match *op {
            Op::Leaf { .. } => {}
            Op::Linear { x, w, b } => {
                let (n, k) = rows_cols(self.val(x).shape());
                let m = self.val(w).shape()[1];
                if self.wants(x) {
                    let mut gx = vec![0.0; n * k];
                    gemm(n, m, k, g, false, self.val(w).data(), true, 0.0, &mut gx);
                    self.accumulate(x, gx);
                }
                if self.wants(w) {
                    let mut gw = vec![0.0; k * m];
                    gemm(k, n, m, self.val(x).data(), true, g, false, 0.0, &mut gw);
                    self.accumulate(w, gw);
                }
                if self.wants(b) {
                    let mut gb = vec![0.0; m];
                    for row in g.chunks_exact(m) {
                        for (a, v) in gb.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                    self.accumulate(b, gb);
                }
            }
            Op::LeakyRelu { x, slope } => {
                let gx = self
                    .val(x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &d)| if v > 0.0 { d } else { slope * d })
                    .collect();
                self.accumulate(x, gx);
            }
            Op::BatchNorm { x, gamma, beta, .. } => {
                let Cache::Norm { xhat, inv_std } = &self.caches[i] else {
                    unreachable!("batch norm cache missing")
                };
                let (n, c) = rows_cols(self.val(x).shape());
                let gam = self.val(gamma).data();
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for (row_g, row_h) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                    for j in 0..c {
                        sum_g[j] += row_g[j];
                        sum_gx[j] += row_g[j] * row_h[j];
                    }
                }
                let gx = if self.wants(x) {
                    let mut gx = Vec::with_capacity(n * c);
                    let nf = n as f64;
                    for (row_g, row_h) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                        for j in 0..c {
                            let v = if self.training {
                                gam[j] * inv_std[j] / nf * (nf * row_g[j] - sum_g[j] - row_h[j] * sum_gx[j])
                            } else {
                                gam[j] * inv_std[j] * row_g[j]
                            };
                            gx.push(v);
                        }
                    }
                    Some(gx)
                } else {
                    None
                };
                if let Some(gx) = gx {
                    self.accumulate(x, gx);
                }
                self.accumulate(gamma, sum_gx);
                self.accumulate(beta, sum_g);
            }
            Op::MaxPoolGroups { x, .. } => {
                let Cache::Argmax(arg) = &self.caches[i] else {
                    unreachable!("max pool cache missing")
                };
                let c = self.val(x).cols();
                let mut gx = vec![0.0; self.val(x).len()];
                for (k, &r) in arg.iter().enumerate() {
                    gx[r * c + k % c] += g[k];
                }
                self.accumulate(x, gx);
            }
            Op::Reshape { x } => self.accumulate(x, g.to_vec()),
            Op::Add { a, b } => {
                self.accumulate(a, g.to_vec());
                self.accumulate(b, g.to_vec());
            }
            Op::Mul { a, b } => {
                if self.wants(a) {
                    let ga = g.iter().zip(self.val(b).data()).map(|(d, v)| d * v).collect();
                    self.accumulate(a, ga);
                }
                if self.wants(b) {
                    let gb = g.iter().zip(self.val(a).data()).map(|(d, v)| d * v).collect();
                    self.accumulate(b, gb);
                }
            }
            Op::Scale { x, factor } => self.accumulate(x, g.iter().map(|d| d * factor).collect()),
            Op::AddScalar { x, .. } => self.accumulate(x, g.to_vec()),
            Op::Exp { x } => {
                let out = self.values[i].as_ref().expect("forward ran");
                let gx = g.iter().zip(out.data()).map(|(d, e)| d * e).collect();
                self.accumulate(x, gx);
            }
            Op::Sum { x } => {
                let n = self.val(x).len();
                self.accumulate(x, vec![g[0]; n]);
            }
            Op::Mean { x } => {
                let n = self.val(x).len();
                self.accumulate(x, vec![g[0] / n as f64; n]);
            }
            Op::Chamfer { a, b, groups } => {
                let Cache::Nearest { ab, ba } = &self.caches[i] else {
                    unreachable!("chamfer cache missing")
                };
                let (av, bv) = (self.val(a).data(), self.val(b).data());
                let (pa, pb) = (av.len() / 3 / groups, bv.len() / 3 / groups);
                let scale = g[0] / groups as f64;
                let mut ga = vec![0.0; av.len()];
                let mut gb = vec![0.0; bv.len()];
                for (ia, &(jb, d)) in ab.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let jb = (ia / pa) * pb + jb;
                    let w = scale / pa as f64 / d;
                    for k in 0..3 {
                        let diff = av[3 * ia + k] - bv[3 * jb + k];
                        ga[3 * ia + k] += w * diff;
                        gb[3 * jb + k] -= w * diff;
                    }
                }
                for (ib, &(ja, d)) in ba.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let ja = (ib / pb) * pa + ja;
                    let w = scale / pb as f64 / d;
                    for k in 0..3 {
                        let diff = bv[3 * ib + k] - av[3 * ja + k];
                        gb[3 * ib + k] += w * diff;
                        ga[3 * ja + k] -= w * diff;
                    }
                }
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            Op::RigidYaw { points, t, r } => {
                let (pv, rv) = (self.val(points).data(), self.val(r).data());
                let groups = rv.len();
                let per = pv.len() / 3 / groups;
                let mut gp = vec![0.0; pv.len()];
                let mut gt = vec![0.0; groups * 3];
                let mut gr = vec![0.0; groups];
                for (idx, (p, d)) in pv.chunks_exact(3).zip(g.chunks_exact(3)).enumerate() {
                    let grp = idx / per;
                    let (s, c) = rv[grp].sin_cos();
                    gp[3 * idx] = c * d[0] - s * d[2];
                    gp[3 * idx + 1] = d[1];
                    gp[3 * idx + 2] = s * d[0] + c * d[2];
                    for k in 0..3 {
                        gt[3 * grp + k] += d[k];
                    }
                    gr[grp] += d[0] * (-s * p[0] + c * p[2]) + d[2] * (-c * p[0] - s * p[2]);
                }
                self.accumulate(points, gp);
                self.accumulate(t, gt);
                self.accumulate(r, gr);
            }
            Op::Reflect { x, normal, .. } => {
                let mut gx = g.to_vec();
                for d in gx.chunks_exact_mut(3) {
                    let dot = d[0] * normal[0] + d[1] * normal[1] + d[2] * normal[2];
                    for k in 0..3 {
                        d[k] -= 2.0 * dot * normal[k];
                    }
                }
                self.accumulate(x, gx);
            }
            Op::SliceRows { x, start, .. } => {
                let xv = self.val(x);
                let c = xv.cols();
                let mut gx = vec![0.0; xv.len()];
                gx[start * c..start * c + g.len()].copy_from_slice(g);
                self.accumulate(x, gx);
            }
            Op::ConcatRows { ref xs } => {
                let mut offset = 0;
                for &x in xs {
                    let n = self.val(x).len();
                    let part = g[offset..offset + n].to_vec();
                    offset += n;
                    self.accumulate(x, part);
                }
            }
            Op::Overlap { a, b, tau } => {
                let (av, bv) = (self.val(a).data(), self.val(b).data());
                let (na, nb) = (av.len() / 3, bv.len() / 3);
                let coef = -g[0] / (na as f64 * nb as f64);
                let t2 = tau * tau;
                let mut ga = vec![0.0; av.len()];
                let mut gb = vec![0.0; bv.len()];
                for (i, p) in av.chunks_exact(3).enumerate() {
                    for (j, q) in bv.chunks_exact(3).enumerate() {
                        let d2 = dist2(p, q);
                        if d2 < t2 && d2 > 0.0 {
                            let w = coef / d2.sqrt();
                            for k in 0..3 {
                                let diff = p[k] - q[k];
                                ga[3 * i + k] += w * diff;
                                gb[3 * j + k] -= w * diff;
                            }
                        }
                    }
                }
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            Op::GaussianKl { mu, logvar } => {
                let batch = self.val(mu).rows() as f64;
                let s = g[0] / batch;
                if self.wants(mu) {
                    let gm = self.val(mu).data().iter().map(|m| s * m).collect();
                    self.accumulate(mu, gm);
                }
                if self.wants(logvar) {
                    let gl = self
                        .val(logvar)
                        .data()
                        .iter()
                        .map(|l| s * 0.5 * (l.exp() - 1.0))
                        .collect();
                    self.accumulate(logvar, gl);
                }
            }
        }
    }
}
