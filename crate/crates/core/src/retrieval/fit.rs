use crate::error::{Error, Result};
use crate::geom::kernels::nearest_both;
use crate::geom::{apply_pose, chamfer, rotate_yaw, PointCloud, RigidPose};
use crate::numcore::{adam_update, AdamState, Tensor};

/// Multi-start rigid fit settings.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FitConfig {
    pub restarts: usize,
    pub steps: usize,
    pub lr: f64,
    /// Learning rate at the last step as a fraction of `lr` (linear decay).
    pub final_lr_frac: f64,
    /// Closest-point refinement rounds applied to the best restart.
    #[serde(default)]
    pub polish: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            restarts: 8,
            steps: 100,
            lr: 0.01,
            final_lr_frac: 0.1,
            polish: 10,
        }
    }
}

impl FitConfig {
    /// Iterations one part-to-segment fit costs: gradient steps over all restarts plus polish rounds.
    pub fn cost(&self) -> u64 {
        (self.restarts * if self.lr > 0.0 { self.steps } else { 0 } + self.polish) as u64
    }
}

/// Chamfer between `part` posed by `(t, r)` and `segment`, with its gradient in `(t, r)`.
pub fn posed_chamfer_grad(part: &PointCloud, segment: &PointCloud, pose: &RigidPose) -> (f64, [f64; 3], f64) {
    let (loss, g) = pooled_chamfer_grad(&[part], std::slice::from_ref(pose), segment);
    (loss, g[0].0, g[0].1)
}

/// Chamfer between the union of the posed `parts` and `target`, with the gradient in every
/// part's `(t, r)`.
pub fn pooled_chamfer_grad(parts: &[&PointCloud], poses: &[RigidPose], target: &PointCloud) -> (f64, Vec<([f64; 3], f64)>) {
    assert_eq!(parts.len(), poses.len(), "one pose per part");
    // Rotated (not yet translated) part points; their yaw derivative is (z', 0, -x').
    let mut rotated = Vec::new();
    let mut owner = Vec::new();
    for (i, (part, pose)) in parts.iter().zip(poses).enumerate() {
        let (c, s) = (pose.r.cos(), pose.r.sin());
        for p in part.points() {
            rotated.push([c * p[0] + s * p[2], p[1], -s * p[0] + c * p[2]]);
            owner.push(i);
        }
    }
    let posed: Vec<[f64; 3]> = rotated
        .iter()
        .zip(&owner)
        .map(|(q, &i)| [q[0] + poses[i].t[0], q[1] + poses[i].t[1], q[2] + poses[i].t[2]])
        .collect();
    let seg = target.points();
    let (na, nb) = (posed.len() as f64, seg.len() as f64);
    let mut grad_pts = vec![[0.0; 3]; posed.len()];
    let mut col_best = vec![(0usize, f64::INFINITY); seg.len()];
    let mut forward = 0.0;
    for (i, a) in posed.iter().enumerate() {
        let mut best = (0usize, f64::INFINITY);
        for (j, b) in seg.iter().enumerate() {
            let d = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2);
            if d < best.1 {
                best = (j, d);
            }
            if d < col_best[j].1 {
                col_best[j] = (i, d);
            }
        }
        let d = best.1.sqrt();
        forward += d;
        if d > 0.0 {
            let b = seg[best.0];
            for k in 0..3 {
                grad_pts[i][k] += (a[k] - b[k]) / (d * na);
            }
        }
    }
    let mut backward = 0.0;
    for (j, &(i, d2)) in col_best.iter().enumerate() {
        let d = d2.sqrt();
        backward += d;
        if d > 0.0 {
            let (a, b) = (posed[i], seg[j]);
            for k in 0..3 {
                grad_pts[i][k] += (a[k] - b[k]) / (d * nb);
            }
        }
    }
    let mut grads = vec![([0.0; 3], 0.0); parts.len()];
    for ((g, q), &i) in grad_pts.iter().zip(&rotated).zip(&owner) {
        for k in 0..3 {
            grads[i].0[k] += g[k];
        }
        grads[i].1 += g[0] * q[2] - g[2] * q[0];
    }
    (forward / na + backward / nb, grads)
}

fn decayed_lr(cfg: &FitConfig, step: usize) -> f64 {
    let frac = if cfg.steps > 1 { step as f64 / (cfg.steps - 1) as f64 } else { 0.0 };
    cfg.lr * (1.0 - (1.0 - cfg.final_lr_frac) * frac)
}

fn pooled_loss(parts: &[&PointCloud], poses: &[RigidPose], target: &PointCloud) -> Result<f64> {
    let posed: Vec<PointCloud> = parts.iter().zip(poses).map(|(p, pose)| apply_pose(p, pose)).collect();
    Ok(chamfer(&PointCloud::pooled(&posed)?, target))
}

/// Fits all `parts` together so their union matches `target`. Each restart places every part
/// at a random target point under a random yaw, then runs Adam on all poses at once.
pub fn fit_parts_jointly<R: rand::Rng>(parts: &[&PointCloud], target: &PointCloud, cfg: &FitConfig, rng: &mut R) -> Result<(Vec<RigidPose>, f64)> {
    if target.is_empty() || parts.is_empty() || parts.iter().any(|p| p.is_empty()) {
        return Err(Error::EmptyCloud);
    }
    if cfg.restarts == 0 {
        return Err(Error::InvalidArgument("fit needs at least one restart".into()));
    }
    let mut best: Option<(Vec<RigidPose>, f64)> = None;
    for _ in 0..cfg.restarts {
        let mut poses: Vec<RigidPose> = parts
            .iter()
            .map(|part| {
                let r = rng.random_range(0.0..std::f64::consts::TAU);
                let anchor = target.points()[rng.random_range(0..target.len())];
                let pc = apply_pose(part, &RigidPose::new([0.0; 3], r)).centroid();
                RigidPose::new([0, 1, 2].map(|k| anchor[k] - pc[k]), r)
            })
            .collect();
        let mut start_best = (poses.clone(), f64::INFINITY);
        if cfg.lr > 0.0 {
            let mut vars: Vec<Tensor> = poses
                .iter()
                .flat_map(|p| [Tensor::from_parts(vec![3], p.t.to_vec()), Tensor::from_parts(vec![1], vec![p.r])])
                .collect();
            let mut adam = AdamState::new(&vars);
            for step in 0..cfg.steps {
                let (loss, g) = pooled_chamfer_grad(parts, &poses, target);
                if loss < start_best.1 {
                    start_best = (poses.clone(), loss);
                }
                let grads: Vec<Tensor> = g
                    .iter()
                    .flat_map(|(gt, gr)| [Tensor::from_parts(vec![3], gt.to_vec()), Tensor::from_parts(vec![1], vec![*gr])])
                    .collect();
                adam_update(&mut vars, &grads, &mut adam, decayed_lr(cfg, step));
                for (i, p) in poses.iter_mut().enumerate() {
                    let (t, r) = (vars[2 * i].data(), vars[2 * i + 1].data()[0]);
                    *p = RigidPose::new([t[0], t[1], t[2]], r);
                }
            }
        }
        let final_loss = pooled_loss(parts, &poses, target)?;
        let (poses, loss) = if final_loss < start_best.1 { (poses, final_loss) } else { start_best };
        if best.as_ref().is_none_or(|b| loss < b.1) {
            best = Some((poses, loss));
        }
    }
    Ok(best.expect("at least one restart"))
}

/// One yaw-constrained closest-point round: pairs every point with its nearest neighbour in
/// the other cloud (both directions, as chamfer does) and solves the least-squares yaw and
/// translation in closed form.
fn closest_point_step(part: &PointCloud, segment: &PointCloud, pose: &RigidPose) -> RigidPose {
    let posed = apply_pose(part, pose);
    let (fwd, bwd) = nearest_both(&posed.flat(), &segment.flat());
    let (pp, sp) = (part.points(), segment.points());
    let pairs: Vec<([f64; 3], [f64; 3])> = fwd
        .iter()
        .enumerate()
        .map(|(i, &(j, _))| (pp[i], sp[j]))
        .chain(bwd.iter().enumerate().map(|(j, &(i, _))| (pp[i], sp[j])))
        .collect();
    let n = pairs.len() as f64;
    let mut pc = [0.0; 3];
    let mut qc = [0.0; 3];
    for (p, q) in &pairs {
        for k in 0..3 {
            pc[k] += p[k] / n;
            qc[k] += q[k] / n;
        }
    }
    // Maximise sum q'.R(r)p' over the yaw r, with R(r)p = (x cos r + z sin r, y, -x sin r + z cos r).
    let (mut a, mut b) = (0.0, 0.0);
    for (p, q) in &pairs {
        let (x, z) = (p[0] - pc[0], p[2] - pc[2]);
        let (u, w) = (q[0] - qc[0], q[2] - qc[2]);
        a += u * x + w * z;
        b += u * z - w * x;
    }
    let r = if a == 0.0 && b == 0.0 { pose.r } else { b.atan2(a) };
    let rp = rotate_yaw(pc, r);
    RigidPose::new([qc[0] - rp[0], qc[1] - rp[1], qc[2] - rp[2]], r)
}

/// Fits `part` to `segment` by Adam on the pose from `restarts` evenly spaced yaw starts, each
/// translated so the centroids coincide. Returns the best pose and its chamfer.
pub fn fit_part_to_segment(part: &PointCloud, segment: &PointCloud, cfg: &FitConfig) -> Result<(RigidPose, f64)> {
    if segment.is_empty() || part.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if cfg.restarts == 0 {
        return Err(Error::InvalidArgument("fit needs at least one restart".into()));
    }
    let target_c = segment.centroid();
    let mut best: Option<(RigidPose, f64)> = None;
    for s in 0..cfg.restarts {
        let r = std::f64::consts::TAU * s as f64 / cfg.restarts as f64;
        let pc = apply_pose(part, &RigidPose::new([0.0; 3], r)).centroid();
        let mut pose = RigidPose::new([0, 1, 2].map(|k| target_c[k] - pc[k]), r);
        if cfg.lr > 0.0 {
            let mut vars = vec![Tensor::from_parts(vec![3], pose.t.to_vec()), Tensor::from_parts(vec![1], vec![pose.r])];
            let mut adam = AdamState::new(&vars);
            let mut start_best = (pose, f64::INFINITY);
            for step in 0..cfg.steps {
                let (loss, gt, gr) = posed_chamfer_grad(part, segment, &pose);
                if loss < start_best.1 {
                    start_best = (pose, loss);
                }
                let grads = [Tensor::from_parts(vec![3], gt.to_vec()), Tensor::from_parts(vec![1], vec![gr])];
                adam_update(&mut vars, &grads, &mut adam, decayed_lr(cfg, step));
                pose = RigidPose::new([vars[0].data()[0], vars[0].data()[1], vars[0].data()[2]], vars[1].data()[0]);
            }
            let final_loss = chamfer(&apply_pose(part, &pose), segment);
            pose = if final_loss < start_best.1 { pose } else { start_best.0 };
        }
        let fit = chamfer(&apply_pose(part, &pose), segment);
        if best.as_ref().is_none_or(|b| fit < b.1) {
            best = Some((pose, fit));
        }
    }
    let (mut pose, mut fit) = best.expect("at least one restart");
    for _ in 0..cfg.polish {
        let candidate = closest_point_step(part, segment, &pose);
        let f = chamfer(&apply_pose(part, &candidate), segment);
        if !(f < fit) {
            break;
        }
        (pose, fit) = (candidate, f);
    }
    Ok((pose, fit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{finite_diff_gradient, relative_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> PointCloud {
        PointCloud::new((0..n).map(|_| [0, 1, 2].map(|_| rng.random_range(-scale..scale))).collect()).unwrap()
    }

    #[test]
    fn pose_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let part = random_cloud(&mut rng, 20, 0.2);
            let seg = random_cloud(&mut rng, 30, 0.3);
            let x = Tensor::from_parts(vec![4], (0..4).map(|_| rng.random_range(-0.5..0.5)).collect());
            let pose_of = |x: &Tensor| RigidPose::new([x.data()[0], x.data()[1], x.data()[2]], x.data()[3]);
            let (_, gt, gr) = posed_chamfer_grad(&part, &seg, &pose_of(&x));
            let fd = finite_diff_gradient(|x| Ok(chamfer(&apply_pose(&part, &pose_of(x)), &seg)), &x, 1e-6).unwrap();
            let analytic = Tensor::from_parts(vec![4], vec![gt[0], gt[1], gt[2], gr]);
            assert!(relative_error(&analytic, &fd, 1e-8) < 1e-4);
        }
    }

    #[test]
    fn pooled_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..10 {
            let parts = [random_cloud(&mut rng, 12, 0.2), random_cloud(&mut rng, 15, 0.2), random_cloud(&mut rng, 8, 0.2)];
            let refs: Vec<&PointCloud> = parts.iter().collect();
            let target = random_cloud(&mut rng, 40, 0.4);
            let x = Tensor::from_parts(vec![12], (0..12).map(|_| rng.random_range(-0.5..0.5)).collect());
            let poses_of = |x: &Tensor| -> Vec<RigidPose> {
                x.data().chunks(4).map(|c| RigidPose::new([c[0], c[1], c[2]], c[3])).collect()
            };
            let (loss, g) = pooled_chamfer_grad(&refs, &poses_of(&x), &target);
            assert!((loss - pooled_loss(&refs, &poses_of(&x), &target).unwrap()).abs() < 1e-12);
            let fd = finite_diff_gradient(|x| pooled_loss(&refs, &poses_of(x), &target), &x, 1e-6).unwrap();
            let analytic = Tensor::from_parts(vec![12], g.iter().flat_map(|(t, r)| [t[0], t[1], t[2], *r]).collect());
            assert!(relative_error(&analytic, &fd, 1e-8) < 1e-4);
        }
    }

    #[test]
    fn joint_fit_recovers_two_separated_parts() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let a = random_cloud(&mut rng, 30, 0.1);
        let b = random_cloud(&mut rng, 30, 0.1);
        let truth = [RigidPose::new([-0.2, 0.0, 0.0], 0.3), RigidPose::new([0.2, 0.0, 0.1], -1.0)];
        let target = PointCloud::pooled([&apply_pose(&a, &truth[0]), &apply_pose(&b, &truth[1])]).unwrap();
        let cfg = FitConfig { restarts: 16, steps: 200, ..FitConfig::default() };
        let (poses, loss) = fit_parts_jointly(&[&a, &b], &target, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(poses.len(), 2);
        assert!(loss < 0.02, "{loss}");
        assert!((loss - pooled_loss(&[&a, &b], &poses, &target).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn loss_matches_chamfer() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (a, b) = (random_cloud(&mut rng, 17, 1.0), random_cloud(&mut rng, 9, 1.0));
        let pose = RigidPose::new([0.1, -0.2, 0.3], 0.7);
        let (l, _, _) = posed_chamfer_grad(&a, &b, &pose);
        assert!((l - chamfer(&apply_pose(&a, &pose), &b)).abs() < 1e-12);
    }

    #[test]
    fn recovers_a_posed_copy() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // An asymmetric blob so the yaw is identifiable.
        let mut pts: Vec<[f64; 3]> = (0..60).map(|_| [rng.random_range(0.0..0.3), rng.random_range(0.0..0.1), rng.random_range(0.0..0.1)]).collect();
        pts.extend((0..30).map(|_| [rng.random_range(0.0..0.1), rng.random_range(0.0..0.1), rng.random_range(0.1..0.2)]));
        let part = PointCloud::new(pts).unwrap();
        let c = part.centroid();
        let part = part.translated([-c[0], -c[1], -c[2]]);
        let truth = RigidPose::new([0.3, 0.05, -0.2], 2.0);
        let seg = apply_pose(&part, &truth);
        let (pose, fit) = fit_part_to_segment(&part, &seg, &FitConfig { steps: 300, ..FitConfig::default() }).unwrap();
        assert!(fit < 1e-2, "fit {fit}");
        let dt = ((pose.t[0] - truth.t[0]).powi(2) + (pose.t[1] - truth.t[1]).powi(2) + (pose.t[2] - truth.t[2]).powi(2)).sqrt();
        let dr = (pose.r - truth.r).rem_euclid(std::f64::consts::TAU);
        let dr = dr.min(std::f64::consts::TAU - dr);
        assert!(dt <= 0.02 && dr.to_degrees() <= 2.0, "dt {dt} dr {dr}");
        assert!((fit - chamfer(&apply_pose(&part, &pose), &seg)).abs() < 1e-15);
    }

    #[test]
    fn zero_rate_single_start_is_centroid_alignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let part = random_cloud(&mut rng, 10, 0.2);
        let seg = random_cloud(&mut rng, 12, 0.2).translated([1.0, 2.0, 3.0]);
        let cfg = FitConfig { restarts: 1, lr: 0.0, polish: 0, ..FitConfig::default() };
        let (pose, fit) = fit_part_to_segment(&part, &seg, &cfg).unwrap();
        let (pc, sc) = (part.centroid(), seg.centroid());
        assert_eq!(pose.r, 0.0);
        for k in 0..3 {
            assert!((pose.t[k] - (sc[k] - pc[k])).abs() < 1e-12);
        }
        assert_eq!(fit, chamfer(&apply_pose(&part, &pose), &seg));
    }
}
