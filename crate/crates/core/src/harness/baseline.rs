use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{apply_pose, chamfer, PointCloud, RigidPose};
use crate::partvae::PartLibrary;
use crate::retrieval::{final_segment, fit_parts_jointly, retrieve_for_segment, Assembly, FitConfig, RetrievalConfig, RetrievedPart, ASSEMBLY_SCHEMA_VERSION};

#[derive(Clone, Debug)]
pub struct BfRun {
    /// Best draw, segmented by nearest placed part.
    pub assembly: Assembly,
    /// Best pooled chamfer after each draw.
    pub best_so_far: Vec<f64>,
}

/// Pose-fit gradient steps one draw of `k` parts costs.
pub fn bf_draw_cost(k: usize, fit: &FitConfig) -> u64 {
    (k * fit.restarts * fit.steps) as u64
}

struct Draw {
    parts: Vec<(usize, RigidPose)>,
    clouds: Vec<PointCloud>,
    loss: f64,
}

fn evaluate_draw(target: &PointCloud, library: &PartLibrary, ids: &[usize], fit: &FitConfig, seed: u64) -> Result<Draw> {
    let parts: Vec<&PointCloud> = ids.iter().map(|&i| &library.entries()[i].cloud).collect();
    let (poses, loss) = fit_parts_jointly(&parts, target, fit, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let clouds: Vec<PointCloud> = parts.iter().zip(&poses).map(|(p, pose)| apply_pose(p, pose)).collect();
    Ok(Draw {
        parts: ids.iter().copied().zip(poses).collect(),
        clouds,
        loss,
    })
}

/// Random search: each draw samples `k` library parts uniformly with replacement and fits their
/// poses jointly to the whole target; the draw with the lowest pooled chamfer wins. The number
/// of draws is `budget_iterations / bf_draw_cost(k)`, at least one.
pub fn bf_baseline(
    target_id: &str,
    target: &PointCloud,
    library: &PartLibrary,
    k: usize,
    budget_iterations: u64,
    fit: &FitConfig,
    seed: u64,
) -> Result<BfRun> {
    if budget_iterations == 0 || k == 0 {
        return Err(Error::InvalidArgument("brute force needs k ≥ 1 and a positive budget".into()));
    }
    if library.is_empty() {
        return Err(Error::InvalidArgument("brute force from an empty library".into()));
    }
    let draws = (budget_iterations / bf_draw_cost(k, fit)).max(1) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<(Vec<usize>, u64)> = (0..draws)
        .map(|_| ((0..k).map(|_| rng.random_range(0..library.len())).collect(), rng.random()))
        .collect();
    let losses: Vec<f64> = picks
        .par_iter()
        .map(|(ids, s)| evaluate_draw(target, library, ids, fit, *s).map(|d| d.loss))
        .collect::<Result<_>>()?;
    let mut best = 0;
    let mut best_so_far = Vec::with_capacity(draws);
    for (i, &l) in losses.iter().enumerate() {
        if l < losses[best] {
            best = i;
        }
        best_so_far.push(losses[best]);
    }
    let draw = evaluate_draw(target, library, &picks[best].0, fit, picks[best].1)?;
    let segments = final_segment(target, &draw.clouds)?;
    let mut parts = Vec::with_capacity(k);
    for ((&(i, pose), cloud), segment) in draw.parts.iter().zip(&draw.clouds).zip(segments) {
        let fit = if segment.is_empty() { 0.0 } else { chamfer(cloud, &target.select(&segment)?) };
        parts.push(RetrievedPart {
            part_id: library.entries()[i].id.clone(),
            pose,
            mirrored: false,
            fit,
            segment,
        });
    }
    Ok(BfRun {
        assembly: Assembly {
            schema_version: ASSEMBLY_SCHEMA_VERSION,
            target_id: target_id.to_string(),
            k,
            parts,
            symmetry: None,
            vcd: draw.loss,
            scd: None,
            seed,
            config_hash: "brute-force".into(),
            iterations: draws as u64 * bf_draw_cost(k, fit),
        },
        best_so_far,
    })
}

/// Re-retrieves one part per non-empty segment of `assembly`, fitted to that segment alone.
pub fn segment_retrieval(assembly: &Assembly, target: &PointCloud, library: &PartLibrary, cfg: &RetrievalConfig) -> Result<Assembly> {
    let q = cfg.q.unwrap_or(library.len()).clamp(1, library.len().max(1));
    let mut parts = Vec::new();
    let mut iterations = assembly.iterations;
    for p in assembly.parts.iter().filter(|p| !p.segment.is_empty()) {
        let m = retrieve_for_segment(&target.select(&p.segment)?, library, q, &cfg.fit)?;
        iterations += q as u64 * cfg.fit.cost();
        parts.push(RetrievedPart {
            part_id: m.part_id,
            pose: m.pose,
            mirrored: false,
            fit: m.fit,
            segment: p.segment.clone(),
        });
    }
    let mut a = Assembly {
        parts,
        symmetry: None,
        iterations,
        ..assembly.clone()
    };
    a.vcd = chamfer(&a.pooled(library)?, target);
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synth::{gen_library, gen_targets, SyntheticSpec};
    use crate::partvae::PartLibrary;

    fn quick() -> FitConfig {
        FitConfig {
            restarts: 4,
            steps: 40,
            ..FitConfig::default()
        }
    }

    #[test]
    fn one_iteration_is_one_valid_draw() {
        let spec = SyntheticSpec::desk();
        let lib = gen_library(&spec, 8, 0).unwrap();
        let t = &gen_targets(&spec, &lib, 1, 0).unwrap()[0];
        let run = bf_baseline(&t.id, &t.cloud, &lib, 2, 1, &quick(), 3).unwrap();
        assert_eq!(run.best_so_far.len(), 1);
        assert_eq!(run.assembly.part_count(), 2);
        assert!(run.assembly.segments_partition(t.cloud.len()));
        assert!((run.assembly.vcd - chamfer(&run.assembly.pooled(&lib).unwrap(), &t.cloud)).abs() < 1e-12);
        assert!(bf_baseline(&t.id, &t.cloud, &lib, 2, 0, &quick(), 3).is_err());
    }

    #[test]
    fn best_so_far_is_monotone_and_runs_reproduce() {
        let spec = SyntheticSpec::desk();
        let lib = gen_library(&spec, 8, 0).unwrap();
        let t = &gen_targets(&spec, &lib, 1, 1).unwrap()[0];
        let budget = 12 * bf_draw_cost(2, &quick());
        let run = bf_baseline(&t.id, &t.cloud, &lib, 2, budget, &quick(), 9).unwrap();
        assert_eq!(run.best_so_far.len(), 12);
        assert!(run.best_so_far.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(*run.best_so_far.last().unwrap(), run.assembly.vcd);
        assert_eq!(run.assembly.iterations, budget);
        let again = bf_baseline(&t.id, &t.cloud, &lib, 2, budget, &quick(), 9).unwrap();
        assert_eq!(again.assembly, run.assembly);
        assert_eq!(again.best_so_far, run.best_so_far);
    }

    #[test]
    fn exhaustive_budget_on_the_true_parts_gets_close() {
        let spec = SyntheticSpec::desk();
        let lib = gen_library(&spec, 8, 0).unwrap();
        let t = gen_targets(&spec, &lib, 6, 4).unwrap().into_iter().find(|t| t.planted.len() == 2 && t.plane.is_none()).unwrap();
        let truth: Vec<_> = t.planted.iter().map(|p| lib.get(&p.part_id).unwrap().clone()).collect();
        let small = PartLibrary::new(truth).unwrap();
        let fit = FitConfig {
            restarts: 16,
            steps: 200,
            ..FitConfig::default()
        };
        let run = bf_baseline(&t.id, &t.cloud, &small, 2, 8 * bf_draw_cost(2, &fit), &fit, 0).unwrap();
        assert!(run.assembly.vcd < 0.02 * t.cloud.diagonal(), "{}", run.assembly.vcd);
    }
}
