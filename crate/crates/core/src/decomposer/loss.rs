use crate::error::{Error, Result};
use crate::geom::{distance, PointCloud, RigidPose, SymmetryPlane};
use crate::numcore::{adam_update, AdamState, Graph, NodeId, Tensor};
use crate::partvae::{ParamLeaves, VaeParams};

use super::config::ScheduleConfig;
use super::context::PartModel;
use super::state::{DecompositionState, LatentPart};

/// Mean hinge `max(0, tau - |a - b|)` over every cross pair of points.
pub fn overlap_penalty(a: &PointCloud, b: &PointCloud, tau: f64) -> f64 {
    let mut total = 0.0;
    for &p in a.points() {
        for &q in b.points() {
            let d = distance(p, q);
            if d < tau {
                total += tau - d;
            }
        }
    }
    total / (a.len() * b.len()) as f64
}

/// Structure of a Phase-I graph; graphs are reused across states with the same key.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub(crate) struct GraphKey {
    parts: usize,
    /// Per part, whether a mirrored duplicate is appended. Empty without symmetry.
    mirrored: Vec<bool>,
    plane: Option<[u64; 6]>,
    target_len: usize,
    tau: u64,
}

impl GraphKey {
    fn of(state: &DecompositionState, target: &PointCloud, tau: f64) -> Self {
        let plane = state.symmetry.map(|p| {
            let (a, n) = (p.point(), p.normal());
            [a[0], a[1], a[2], n[0], n[1], n[2]].map(f64::to_bits)
        });
        let mirrored = if state.symmetry.is_some() {
            state.merged.iter().map(|m| !m).collect()
        } else {
            Vec::new()
        };
        Self {
            parts: state.parts.len(),
            mirrored,
            plane,
            target_len: target.len(),
            tau: tau.to_bits(),
        }
    }

    fn plane(&self) -> Option<SymmetryPlane> {
        self.plane.map(|b| {
            let v = b.map(f64::from_bits);
            SymmetryPlane::new([v[0], v[1], v[2]], [v[3], v[4], v[5]]).expect("key built from a valid plane")
        })
    }
}

pub(crate) struct PhaseOneGraph {
    graph: Graph,
    codes: NodeId,
    t: NodeId,
    r: NodeId,
    target: NodeId,
    loss: NodeId,
    /// Posed clouds in owner order.
    clouds: Vec<NodeId>,
}

impl PhaseOneGraph {
    pub(crate) fn build(params: &VaeParams, key: &GraphKey, mut g: Graph) -> Result<Self> {
        let arch = params.arch();
        let (m, n) = (key.parts, arch.points);
        let codes = g.param("codes", &[m, arch.latent]);
        let t = g.param("t", &[m, 3]);
        let r = g.param("r", &[m]);
        let target = g.input("target", &[key.target_len, 3]);
        let decoded = ParamLeaves::new(params, false).decoder(&mut g, codes)?;
        let posed = g.rigid_yaw(decoded, t, r)?;
        let mut clouds = Vec::new();
        for i in 0..m {
            clouds.push(if m == 1 { posed } else { g.slice_rows(posed, i * n, n)? });
        }
        let mut mirror_of = Vec::new();
        if let Some(plane) = key.plane() {
            for i in (0..m).filter(|&i| key.mirrored[i]) {
                clouds.push(g.reflect(clouds[i], plane.point(), plane.normal())?);
                mirror_of.push(i);
            }
        }
        let pooled = if clouds.len() > m {
            let mut all = vec![posed];
            all.extend_from_slice(&clouds[m..]);
            g.concat_rows(&all)?
        } else {
            posed
        };
        let recon = g.chamfer(pooled, target)?;
        let tau = f64::from_bits(key.tau);
        let mut terms = Vec::new();
        for a in 0..clouds.len() {
            for b in a + 1..clouds.len() {
                // A part and its own mirror are allowed to touch.
                if b >= m && mirror_of[b - m] == a {
                    continue;
                }
                terms.push(g.overlap(clouds[a], clouds[b], tau)?);
            }
        }
        let loss = if terms.is_empty() {
            recon
        } else {
            let mut sum = terms[0];
            for &term in &terms[1..] {
                sum = g.add(sum, term)?;
            }
            let mean = g.scale(sum, 1.0 / terms.len() as f64);
            g.add(recon, mean)?
        };
        Ok(Self {
            graph: g,
            codes,
            t,
            r,
            target,
            loss,
            clouds,
        })
    }

    fn feed(&mut self, parts: &[LatentPart], target: &PointCloud) -> Result<()> {
        let latent = parts[0].code.len();
        let codes: Vec<f64> = parts.iter().flat_map(|p| p.code.iter().copied()).collect();
        let t: Vec<f64> = parts.iter().flat_map(|p| p.pose.t).collect();
        let r: Vec<f64> = parts.iter().map(|p| p.pose.r).collect();
        self.graph.set(self.codes, Tensor::new(vec![parts.len(), latent], codes)?)?;
        self.graph.set(self.t, Tensor::new(vec![parts.len(), 3], t)?)?;
        self.graph.set(self.r, Tensor::new(vec![parts.len()], r)?)?;
        self.graph.set(self.target, target.to_tensor())
    }

    /// Forward pass; non-finite losses are reported against the first part with a non-finite cloud.
    fn evaluate(&mut self, m: usize) -> Result<f64> {
        self.graph.forward()?;
        let loss = self.graph.value(self.loss).expect("forwarded").item();
        if loss.is_finite() {
            return Ok(loss);
        }
        let culprit = (0..m).find(|&i| !self.graph.value(self.clouds[i]).expect("forwarded").is_finite());
        Err(Error::NonFinite(match culprit {
            Some(i) => format!("phase-I loss: part {i} decodes to non-finite points"),
            None => "phase-I loss".to_string(),
        }))
    }

    fn clouds(&self) -> Result<Vec<PointCloud>> {
        self.clouds
            .iter()
            .map(|&c| PointCloud::from_tensor(self.graph.value(c).expect("forwarded")))
            .collect()
    }
}

/// Reconstruction chamfer of the pooled posed parts plus the mean pairwise overlap penalty.
/// Returns the loss and the posed clouds in owner order.
pub fn phase1_loss(
    model: &mut PartModel,
    target: &PointCloud,
    state: &DecompositionState,
    cfg: &ScheduleConfig,
) -> Result<(f64, Vec<PointCloud>)> {
    let key = GraphKey::of(state, target, cfg.tau_overlap);
    let g = model.graph_for(&key)?;
    g.feed(&state.parts, target)?;
    let loss = g.evaluate(state.parts.len())?;
    Ok((loss, g.clouds()?))
}

/// Gradient of the Phase-I loss with respect to every part's variables.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseOneGradient {
    pub loss: f64,
    /// One row per part, latent-sized.
    pub codes: Vec<Vec<f64>>,
    pub t: Vec<[f64; 3]>,
    pub r: Vec<f64>,
}

pub fn phase1_gradient(
    model: &mut PartModel,
    target: &PointCloud,
    state: &DecompositionState,
    cfg: &ScheduleConfig,
) -> Result<PhaseOneGradient> {
    let key = GraphKey::of(state, target, cfg.tau_overlap);
    let m = state.parts.len();
    let g = model.graph_for(&key)?;
    g.feed(&state.parts, target)?;
    let loss = g.evaluate(m)?;
    g.graph.backward(g.loss)?;
    let grad = |id: NodeId, len: usize| g.graph.grad(id).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; len]);
    let latent = state.parts[0].code.len();
    let codes = grad(g.codes, m * latent);
    let t = grad(g.t, m * 3);
    Ok(PhaseOneGradient {
        loss,
        codes: codes.chunks(latent).map(<[f64]>::to_vec).collect(),
        t: t.chunks(3).map(|c| [c[0], c[1], c[2]]).collect(),
        r: grad(g.r, m),
    })
}

/// `steps` Adam iterations on every code, translation and yaw. Each evaluated loss is logged.
pub fn phase1_run(
    model: &mut PartModel,
    target: &PointCloud,
    state: &mut DecompositionState,
    cfg: &ScheduleConfig,
    steps: usize,
    lr: f64,
) -> Result<()> {
    if steps == 0 {
        return Err(Error::InvalidArgument("phase-I run needs at least one step".into()));
    }
    let key = GraphKey::of(state, target, cfg.tau_overlap);
    let m = state.parts.len();
    let latent = state.parts[0].code.len();
    let g = model.graph_for(&key)?;
    g.feed(&state.parts, target)?;
    let mut vars = vec![
        g.graph.value(g.codes).expect("fed").clone(),
        g.graph.value(g.t).expect("fed").clone(),
        g.graph.value(g.r).expect("fed").clone(),
    ];
    let mut adam = AdamState::new(&vars);
    let unpack = |vars: &[Tensor]| -> Vec<LatentPart> {
        (0..m)
            .map(|i| LatentPart {
                code: vars[0].data()[i * latent..(i + 1) * latent].to_vec(),
                pose: RigidPose::new(
                    [vars[1].data()[3 * i], vars[1].data()[3 * i + 1], vars[1].data()[3 * i + 2]],
                    vars[2].data()[i],
                ),
            })
            .collect()
    };
    for _ in 0..steps {
        let loss = g.evaluate(m)?;
        state.record(loss, &unpack(&vars));
        if lr == 0.0 {
            continue;
        }
        g.graph.backward(g.loss)?;
        let grads: Vec<Tensor> = [g.codes, g.t, g.r]
            .iter()
            .zip(&vars)
            .map(|(&id, v)| g.graph.grad(id).cloned().unwrap_or_else(|| Tensor::zeros(v.shape())))
            .collect();
        adam_update(&mut vars, &grads, &mut adam, lr);
        g.graph.set_from(g.codes, &vars[0])?;
        g.graph.set_from(g.t, &vars[1])?;
        g.graph.set_from(g.r, &vars[2])?;
    }
    if lr != 0.0 {
        state.parts = unpack(&vars);
    }
    state.refresh(model)
}
