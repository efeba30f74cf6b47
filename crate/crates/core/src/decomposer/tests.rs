use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geom::{
    apply_pose, chamfer, connected_components, distance, pairwise_distances, reflect_points, DistanceMatrix, PointCloud, RigidPose,
    SymmetryPlane,
};
use crate::numcore::{finite_diff_gradient, relative_error, Tensor};
use crate::partvae::{VaeArch, VaeParams};

fn model() -> PartModel {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut params = VaeParams::init(&VaeArch::desk(), &mut rng).unwrap();
    params.freeze();
    PartModel::new(Arc::new(params)).unwrap()
}

fn cloud(points: &[[f64; 3]]) -> PointCloud {
    PointCloud::new(points.to_vec()).unwrap()
}

fn blob(rng: &mut ChaCha8Rng, center: [f64; 3], radius: f64, n: usize) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| [0, 1, 2].map(|a| center[a] + rng.random_range(-radius..radius)))
        .collect()
}

/// A target that some latent part reproduces exactly.
fn decoded_target(model: &mut PartModel, seed: u64, pose: RigidPose) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let code: Vec<f64> = (0..model.arch().latent).map(|_| rng.random_range(-1.0..1.0)).collect();
    apply_pose(&model.codec().decode(&code).unwrap(), &pose)
}

#[test]
fn overlap_examples() {
    let o = cloud(&[[0.0; 3]]);
    assert!((overlap_penalty(&o, &cloud(&[[0.05, 0.0, 0.0]]), 0.1) - 0.05).abs() < 1e-15);
    assert_eq!(overlap_penalty(&o, &cloud(&[[0.2, 0.0, 0.0], [0.0, 0.1, 0.0]]), 0.1), 0.0);
    let two = cloud(&[[0.0; 3], [1.0, 0.0, 0.0]]);
    assert!((overlap_penalty(&two, &o, 0.1) - 0.05).abs() < 1e-15);
}

#[test]
fn phase1_loss_decomposes_into_chamfer_and_mean_overlap() {
    let mut m = model();
    let target = decoded_target(&mut m, 1, RigidPose::new([0.1, 0.0, 0.0], 0.3));
    let cfg = ScheduleConfig::desk();
    for k in 1..=3 {
        let s = init_state(&mut m, "t", &target, k, &cfg, k as u64).unwrap();
        let (loss, clouds) = phase1_loss(&mut m, &target, &s, &cfg).unwrap();
        let pooled = PointCloud::pooled(&clouds).unwrap();
        let mut pairs = Vec::new();
        for a in 0..clouds.len() {
            for b in a + 1..clouds.len() {
                pairs.push(overlap_penalty(&clouds[a], &clouds[b], cfg.tau_overlap));
            }
        }
        let mean = if pairs.is_empty() { 0.0 } else { pairs.iter().sum::<f64>() / pairs.len() as f64 };
        assert!((loss - chamfer(&pooled, &target) - mean).abs() < 1e-10, "k={k}");
        for (c, d) in clouds.iter().zip(s.decoded()) {
            assert_eq!(c, d);
        }
    }
}

#[test]
fn single_exact_part_has_zero_loss() {
    let mut m = model();
    let cfg = ScheduleConfig::desk();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let code: Vec<f64> = (0..m.arch().latent).map(|_| rng.random_range(-1.0..1.0)).collect();
    let pose = RigidPose::new([0.1, 0.0, 0.0], 0.3);
    let target = apply_pose(&m.codec().decode(&code).unwrap(), &pose);
    let mut s = init_state(&mut m, "t", &target, 1, &cfg, 0).unwrap();
    s.parts[0] = LatentPart { code, pose };
    s.refresh(&mut m).unwrap();
    let (loss, _) = phase1_loss(&mut m, &target, &s, &cfg).unwrap();
    assert!(loss < 1e-12);
}

#[test]
fn coincident_parts_pay_the_overlap() {
    let mut m = model();
    let cfg = ScheduleConfig::desk();
    let target = decoded_target(&mut m, 2, RigidPose::default());
    let mut s = init_state(&mut m, "t", &target, 2, &cfg, 0).unwrap();
    s.parts[1] = s.parts[0].clone();
    s.refresh(&mut m).unwrap();
    let (loss, clouds) = phase1_loss(&mut m, &target, &s, &cfg).unwrap();
    let overlap = overlap_penalty(&clouds[0], &clouds[1], cfg.tau_overlap);
    assert!(overlap > 0.0);
    let pooled = PointCloud::pooled(&clouds).unwrap();
    assert!((loss - chamfer(&pooled, &target) - overlap).abs() < 1e-12);
}

fn symmetric_target(rng: &mut ChaCha8Rng) -> (PointCloud, SymmetryPlane) {
    let plane = SymmetryPlane::from_angle([0.0; 3], 0.0);
    let mut pts = blob(rng, [0.3, 0.0, 0.0], 0.1, 40);
    pts.extend(blob(rng, [0.3, 0.0, 0.3], 0.08, 30));
    let half = PointCloud::new(pts).unwrap();
    let full = PointCloud::pooled([&half, &reflect_points(&half, &plane)]).unwrap();
    (full, plane)
}

#[test]
fn symmetric_state_is_reflection_invariant_and_skips_mirror_pairs() {
    let mut m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (target, plane) = symmetric_target(&mut rng);
    let cfg = ScheduleConfig::desk();
    let s = init_state(&mut m, "t", &target, 2, &cfg, 3).unwrap();
    let detected = s.symmetry.expect("plane detected");
    assert!(detected.angle_to(&plane).to_degrees() < 3.0);
    let pooled = PointCloud::pooled(s.decoded()).unwrap();
    let reflected = reflect_points(&pooled, &detected);
    // The mirror half is an exact reflection: match each point to its twin by index.
    let n = s.parts.len();
    for i in 0..n {
        for (p, q) in s.decoded()[i].points().iter().zip(reflect_points(&s.decoded()[n + i], &detected).points()) {
            assert!(distance(*p, *q) < 1e-9);
        }
    }
    assert!(chamfer(&pooled, &reflected) < 1e-9);

    let (loss, clouds) = phase1_loss(&mut m, &target, &s, &cfg).unwrap();
    let mut pairs = Vec::new();
    for a in 0..clouds.len() {
        for b in a + 1..clouds.len() {
            if b == a + n {
                continue;
            }
            pairs.push(overlap_penalty(&clouds[a], &clouds[b], cfg.tau_overlap));
        }
    }
    let mean = pairs.iter().sum::<f64>() / pairs.len() as f64;
    assert!((loss - chamfer(&PointCloud::pooled(&clouds).unwrap(), &target) - mean).abs() < 1e-10);
}

#[test]
fn phase1_gradient_matches_finite_differences() {
    let mut m = model();
    let cfg = ScheduleConfig::desk();
    let latent = m.arch().latent;
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let target = PointCloud::new(blob(&mut rng, [0.0; 3], 0.3, 50)).unwrap();
        let s = init_state(&mut m, "t", &target, 2, &cfg, seed).unwrap();
        let g = phase1_gradient(&mut m, &target, &s, &cfg).unwrap();
        let pack = |s: &DecompositionState| {
            let mut v = Vec::new();
            for p in &s.parts {
                v.extend_from_slice(&p.code);
                v.extend_from_slice(&p.pose.t);
                v.push(p.pose.r);
            }
            Tensor::new(vec![v.len()], v).unwrap()
        };
        let x = pack(&s);
        let mut analytic = Vec::new();
        for i in 0..2 {
            analytic.extend_from_slice(&g.codes[i]);
            analytic.extend_from_slice(&g.t[i]);
            analytic.push(g.r[i]);
        }
        let mut probe = s.clone();
        let fd = finite_diff_gradient(
            |x| {
                for (i, chunk) in x.data().chunks(latent + 4).enumerate() {
                    probe.parts[i] = LatentPart {
                        code: chunk[..latent].to_vec(),
                        pose: RigidPose::new([chunk[latent], chunk[latent + 1], chunk[latent + 2]], chunk[latent + 3]),
                    };
                }
                Ok(phase1_loss(&mut m, &target, &probe, &cfg)?.0)
            },
            &x,
            1e-5,
        )
        .unwrap();
        let analytic = Tensor::new(vec![analytic.len()], analytic).unwrap();
        let err = relative_error(&analytic, &fd, 1e-8);
        assert!(err < 1e-4, "seed {seed}: rel err {err}");
    }
}

#[test]
fn zero_rate_leaves_variables_alone() {
    let mut m = model();
    let cfg = ScheduleConfig::desk();
    let target = decoded_target(&mut m, 3, RigidPose::default());
    let mut s = init_state(&mut m, "t", &target, 2, &cfg, 9).unwrap();
    let before = s.parts.clone();
    phase1_run(&mut m, &target, &mut s, &cfg, 5, 0.0).unwrap();
    assert_eq!(s.parts, before);
    assert_eq!(s.history.len(), 5);
    assert!(s.history.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn init_is_seeded_and_inside_the_box() {
    let mut m = model();
    let cfg = ScheduleConfig::desk();
    let target = decoded_target(&mut m, 4, RigidPose::new([1.0, 2.0, 3.0], 0.0));
    let a = init_state(&mut m, "t", &target, 4, &cfg, 8).unwrap();
    let b = init_state(&mut m, "t", &target, 4, &cfg, 8).unwrap();
    assert_eq!(a.parts, b.parts);
    let (lo, hi) = target.bounds();
    for p in &a.parts {
        assert!((0..3).all(|k| p.pose.t[k] >= lo[k] && p.pose.t[k] <= hi[k]));
        assert!((0.0..std::f64::consts::TAU).contains(&p.pose.r));
    }
    assert!(init_state(&mut m, "t", &target, 0, &cfg, 8).is_err());
}

#[test]
fn schedule_improves_and_is_deterministic() {
    let mut m = model();
    let cfg = ScheduleConfig {
        n1: 10,
        n2: 1,
        n3: 1,
        ..ScheduleConfig::desk()
    };
    let target = decoded_target(&mut m, 5, RigidPose::new([0.05, 0.0, -0.05], 0.4));
    let a = run_schedule(&mut m, "t", &target, 1, &cfg, 21).unwrap();
    let b = run_schedule(&mut m, "t", &target, 1, &cfg, 21).unwrap();
    assert_eq!(a.parts, b.parts);
    assert_eq!(a.history, b.history);
    let best = a.best_loss().unwrap();
    assert!(best < a.history[0]);
    assert!(a.history.iter().all(|&l| best <= l));
    let (loss, _) = phase1_loss(&mut m, &target, &a, &cfg).unwrap();
    assert_eq!(loss, best);
}

#[test]
fn phase1_descends_on_a_posed_part() {
    let mut m = model();
    let cfg = ScheduleConfig::desk();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let code: Vec<f64> = (0..m.arch().latent).map(|_| rng.random_range(-1.0..1.0)).collect();
    let target = apply_pose(&m.codec().decode(&code).unwrap(), &RigidPose::default());
    let mut s = init_state(&mut m, "t", &target, 1, &cfg, 0).unwrap();
    s.parts[0] = LatentPart {
        code,
        pose: RigidPose::new([0.03, 0.0, 0.02], 0.1),
    };
    s.refresh(&mut m).unwrap();
    let start = reconstruction_error(&s, &target).unwrap();
    phase1_run(&mut m, &target, &mut s, &cfg, 40, cfg.lr).unwrap();
    assert!(reconstruction_error(&s, &target).unwrap() < start);
}

#[test]
fn nn_segment_fixtures() {
    let t = cloud(&[[-0.9, 0.0, 0.0], [0.9, 0.0, 0.0], [-0.8, 0.0, 0.0]]);
    let parts = [cloud(&[[-1.0, 0.0, 0.0]]), cloud(&[[1.0, 0.0, 0.0]])];
    let q = pairwise_distances(&t, &parts).unwrap();
    assert_eq!(nn_segment(&q), vec![vec![0, 2], vec![1]]);
    let q1 = pairwise_distances(&t, &parts[..1]).unwrap();
    assert_eq!(nn_segment(&q1), vec![vec![0, 1, 2]]);
}

#[test]
fn filter_examples() {
    let seg = vec![(0..10).collect::<Vec<usize>>()];
    let dist: Vec<f64> = (0..10).map(|i| [5.0, 1.0, 9.0, 2.0, 8.0, 0.5, 7.0, 6.0, 3.0, 4.0][i]).collect();
    let kept = filter_covered(&seg, &dist, 0.3, FilterMode::PerSegment);
    assert_eq!(kept, vec![vec![0, 2, 4, 6, 7, 8, 9]]);
    let flat = vec![1.0; 10];
    assert_eq!(filter_covered(&seg, &flat, 0.3, FilterMode::PerSegment), vec![(3..10).collect::<Vec<_>>()]);
    assert_eq!(filter_covered(&seg, &dist, 1e-6, FilterMode::PerSegment), seg);
    assert_eq!(filter_covered(&[vec![4]], &dist, 0.99, FilterMode::PerSegment), vec![vec![4]]);
    let global = filter_covered(&[vec![0, 1, 2], vec![3, 4, 5]], &dist, 0.5, FilterMode::Global);
    assert_eq!(global, vec![vec![0, 2], vec![4]]);
}

#[test]
fn farthest_component_fixtures() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let near = blob(&mut rng, [0.0; 3], 0.02, 10);
    let far = blob(&mut rng, [1.0, 0.0, 0.0], 0.02, 5);
    let seg = PointCloud::new([near.clone(), far.clone()].concat()).unwrap();
    let other = PointCloud::new(blob(&mut rng, [-0.2, 0.0, 0.0], 0.02, 8)).unwrap();
    assert_eq!(farthest_component(&seg, Some(&other), 0.1), (10..15).collect::<Vec<_>>());
    assert_eq!(farthest_component(&seg, None, 0.1), (0..10).collect::<Vec<_>>());
    let single = PointCloud::new(near).unwrap();
    assert_eq!(farthest_component(&single, Some(&other), 0.1), (0..10).collect::<Vec<_>>());
}

#[test]
fn swap_replaces_the_useless_part() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let covered = blob(&mut rng, [0.0; 3], 0.05, 20);
    let remote = blob(&mut rng, [2.0, 0.0, 0.0], 0.05, 4);
    let t = PointCloud::new([covered.clone(), remote].concat()).unwrap();
    let parts = [PointCloud::new(covered).unwrap(), cloud(&[[0.0, 0.0, 5.0]])];
    let q = pairwise_distances(&t, &parts).unwrap();
    let plan = plan_swap(&q, &[(0, vec![0]), (1, vec![1])], 4.0 / 24.0).unwrap();
    assert_eq!(plan.part, 1);
    assert_eq!(plan.points, vec![20, 21, 22, 23]);
    assert!(plan.after < plan.before);

    // Everything covered: nothing to gain.
    let exact = [t.clone()];
    let q = pairwise_distances(&t, &exact).unwrap();
    assert!(plan_swap(&q, &[(0, vec![0])], 0.15).is_none());
}

#[test]
fn reencode_recovers_translation_and_is_idempotent() {
    let mut m = model();
    let canonical = crate::partvae::canonicalize_part("p", &decoded_target(&mut m, 9, RigidPose::default()), 64, "t")
        .unwrap()
        .cloud;
    let shift = [0.3, -0.1, 0.2];
    let lp = reencode(&mut m, &canonical.translated(shift)).unwrap();
    for k in 0..3 {
        assert!((lp.pose.t[k] - shift[k]).abs() < 1e-9);
    }
    let (mu, _) = m.codec().encode(&canonical).unwrap();
    assert!(lp.code.iter().zip(&mu).all(|(a, b)| (a - b).abs() < 1e-9));
    let again = reencode(&mut m, &canonical).unwrap();
    assert!(again.pose.t.iter().all(|v| v.abs() < 1e-9));
    let r = again.pose.r.rem_euclid(std::f64::consts::FRAC_PI_2);
    assert!(r.min(std::f64::consts::FRAC_PI_2 - r) < 1e-6);
}

#[test]
fn shift_keeps_k_and_partitions_the_target() {
    let mut m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut pts = blob(&mut rng, [0.0; 3], 0.1, 50);
    pts.extend(blob(&mut rng, [0.5, 0.0, 0.0], 0.1, 50));
    let target = PointCloud::new(pts).unwrap();
    let cfg = ScheduleConfig::desk();
    for k in 1..=3 {
        let mut s = init_state(&mut m, "t", &target, k, &cfg, k as u64).unwrap();
        let report = phase2_shift(&mut m, &target, &mut s, &cfg).unwrap();
        assert_eq!(s.k(), k);
        assert_eq!(s.decoded().len(), s.part_count());
        let mut all: Vec<usize> = report.segments.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..target.len()).collect::<Vec<_>>());
        for c in report.components.iter().flatten() {
            let labels = connected_components(c, cfg.tau_cc);
            assert!(labels.iter().all(|&l| l == 0));
        }
    }
}

#[test]
fn symmetric_merge_only_for_touching_pairs() {
    let mut m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (target, _) = symmetric_target(&mut rng);
    let cfg = ScheduleConfig::desk();
    let mut s = init_state(&mut m, "t", &target, 2, &cfg, 1).unwrap();
    let plane = s.symmetry.unwrap();
    let n = plane.normal();
    let away = |d: f64| [n[0] * d, 0.0, n[2] * d];
    // Part 0 straddles the plane, part 1 sits far from it.
    s.parts[0].pose.t = [plane.point()[0], 0.0, plane.point()[2]];
    s.parts[1].pose.t = away(2.0);
    s.refresh(&mut m).unwrap();
    let merged = merge_symmetric(&mut m, &mut s, &cfg).unwrap();
    assert_eq!(merged, vec![0]);
    assert_eq!(s.merged, vec![true, false]);
    assert_eq!(s.part_count(), 3);
}

#[test]
fn checkpoint_round_trip() {
    let mut m = model();
    let cfg = ScheduleConfig {
        n1: 3,
        n2: 1,
        n3: 1,
        ..ScheduleConfig::desk()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (target, _) = symmetric_target(&mut rng);
    let s = run_schedule(&mut m, "t7", &target, 2, &cfg, 4).unwrap();
    let bytes = checkpoint_bytes(&s);
    let back = state_from_checkpoint(&bytes, &mut m).unwrap();
    assert_eq!(back.parts, s.parts);
    assert_eq!(back.merged, s.merged);
    assert_eq!(back.history, s.history);
    assert_eq!(back.symmetry, s.symmetry);
    assert_eq!(back.target_id, s.target_id);
    assert_eq!(back.best_loss(), s.best_loss());
    assert_eq!(checkpoint_bytes(&back), bytes);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t7.ckpt");
    save_checkpoint(&s, &path).unwrap();
    assert_eq!(load_checkpoint(&path, &mut m).unwrap().parts, s.parts);
    assert!(state_from_checkpoint(&bytes[..bytes.len() - 3], &mut m).is_err());

    // Resumed generators continue the same stream.
    let (mut a, mut b) = (s.clone(), back);
    a.rerandomize(&target, &mut m).unwrap();
    b.rerandomize(&target, &mut m).unwrap();
    assert_eq!(a.parts, b.parts);
}

#[test]
fn borrow_adopts_from_a_solved_duplicate() {
    let mut m = model();
    let cfg = ScheduleConfig::desk();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let code: Vec<f64> = (0..m.arch().latent).map(|_| rng.random_range(-1.0..1.0)).collect();
    let exact = apply_pose(&m.codec().decode(&code).unwrap(), &RigidPose::default());
    let mut targets = vec![exact.clone(), exact.clone()];
    for i in 0..8 {
        targets.push(PointCloud::new(blob(&mut rng, [i as f64, 0.0, 0.0], 0.2, 64)).unwrap());
    }
    let mut states: Vec<DecompositionState> = targets
        .iter()
        .enumerate()
        .map(|(i, t)| init_state(&mut m, &format!("t{i}"), t, 1, &cfg, i as u64).unwrap())
        .collect();
    states[0].parts[0] = LatentPart {
        code,
        pose: RigidPose::default(),
    };
    states[0].refresh(&mut m).unwrap();
    // The unsolved twin starts far off so it ranks among the worst.
    states[1].parts[0].pose.t = [5.0, 0.0, 0.0];
    states[1].refresh(&mut m).unwrap();
    let mdist = DistanceMatrix::from_fn(targets.len(), targets.len(), |i, j| chamfer(&targets[i], &targets[j]));
    let outcome = phase3_borrow(&mut m, &targets, &mut states, &mdist, &cfg).unwrap();
    assert!(matches!(outcome[1], BorrowOutcome::Adopted { donor: 0, .. }), "{outcome:?}");
    assert!(reconstruction_error(&states[1], &targets[1]).unwrap() < 1e-12);
    assert_eq!(outcome.iter().filter(|o| !matches!(o, BorrowOutcome::Kept)).count(), 6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nn_segment_matches_brute_force(seed in 0u64..10_000, n in 1usize..40, k in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = PointCloud::new(blob(&mut rng, [0.0; 3], 1.0, n)).unwrap();
        let parts: Vec<PointCloud> = (0..k).map(|_| PointCloud::new(blob(&mut rng, [0.0; 3], 1.0, 5)).unwrap()).collect();
        let segs = nn_segment(&pairwise_distances(&t, &parts).unwrap());
        let mut expected = vec![Vec::new(); k];
        for (i, &p) in t.points().iter().enumerate() {
            let mut best = (0, f64::INFINITY);
            for (j, part) in parts.iter().enumerate() {
                let d = part.points().iter().map(|&q| distance(p, q)).fold(f64::INFINITY, f64::min);
                if d < best.1 {
                    best = (j, d);
                }
            }
            expected[best.0].push(i);
        }
        prop_assert_eq!(segs, expected);
    }

    #[test]
    fn filter_sizes(sizes in proptest::collection::vec(0usize..30, 1..5), p in 0.01f64..0.99, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut next = 0;
        let segs: Vec<Vec<usize>> = sizes.iter().map(|&s| { let v = (next..next + s).collect(); next += s; v }).collect();
        let dist: Vec<f64> = (0..next).map(|_| rng.random_range(0.0..1.0)).collect();
        let out = filter_covered(&segs, &dist, p, FilterMode::PerSegment);
        for (s, o) in segs.iter().zip(&out) {
            let expect = if s.is_empty() { 0 } else { (((1.0 - p) * s.len() as f64) - 1e-9).ceil().max(1.0) as usize };
            prop_assert_eq!(o.len(), expect);
            // Dropped points are never farther than kept ones.
            let min_kept = o.iter().map(|&i| dist[i]).fold(f64::INFINITY, f64::min);
            prop_assert!(s.iter().filter(|i| !o.contains(i)).all(|&i| dist[i] <= min_kept));
        }
    }

    #[test]
    fn swap_never_worsens_coverage(seed in 0u64..10_000, n in 2usize..40, k in 2usize..5, frac in 0.05f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = DistanceMatrix::from_fn(n, k, |_, _| rng.random_range(0.0..1.0));
        let cands: Vec<(usize, Vec<usize>)> = (0..k).map(|j| (j, vec![j])).collect();
        let before = coverage(&q);
        if let Some(plan) = plan_swap(&q, &cands, frac) {
            prop_assert!(plan.after <= before);
            prop_assert!((plan.before - before).abs() < 1e-12);
            // Recompute the post-swap statistic independently.
            let mut total = 0.0;
            for i in 0..n {
                if !plan.points.contains(&i) {
                    total += (0..k).filter(|&j| j != plan.part).map(|j| q.get(i, j)).fold(f64::INFINITY, f64::min);
                }
            }
            prop_assert!((total / n as f64 - plan.after).abs() < 1e-12);
        }
    }
}
