use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::io::{parse_ply, ply_bytes, PlyFormat, PlyPrecision};
use crate::decomposer::{
    checkpoint_bytes, finish, init_state, optimize_round, phase1_run, phase3_borrow, state_from_checkpoint, DecompositionState, PartModel,
};
use crate::error::{Error, Result};
use crate::geom::{chamfer, DistanceMatrix, PointCloud};
use crate::partvae::PartLibrary;
use crate::retrieval::{assemble, assembly_from_state, candidate_from_state, select_k, task_seed, Assembly, KCandidate};

/// Symmetric chamfer matrix with a zero diagonal.
pub fn target_distance_matrix(targets: &[PointCloud]) -> Result<DistanceMatrix> {
    if targets.len() < 2 {
        return Err(Error::InvalidArgument("a distance matrix needs at least two targets".into()));
    }
    let n = targets.len();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i + 1..n).map(|j| chamfer(&targets[i], &targets[j])).collect())
        .collect();
    Ok(DistanceMatrix::from_fn(n, n, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Equal => 0.0,
        std::cmp::Ordering::Less => upper[i][j - i - 1],
        std::cmp::Ordering::Greater => upper[j][i - j - 1],
    }))
}

/// One target's outcome in a collection run.
#[derive(Clone, Debug)]
pub struct TargetRun {
    pub target_id: String,
    /// The selected k's assembly; `iterations` covers every k.
    pub assembly: Assembly,
    /// One candidate per k, in k-set order.
    pub candidates: Vec<KCandidate>,
}

impl TargetRun {
    pub fn chosen(&self) -> &KCandidate {
        self.candidates
            .iter()
            .find(|c| c.score.k == self.assembly.k)
            .expect("chosen k is among the candidates")
    }
}

#[derive(Clone, Debug, Default)]
pub struct CollectionRun {
    /// Successful targets, in input order.
    pub runs: Vec<TargetRun>,
    /// Targets that failed, with the error.
    pub failures: Vec<(String, String)>,
}

/// Runs `f` on a pool of `threads` workers (0: the global pool).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

type Slot = std::result::Result<DecompositionState, String>;

fn step_all(model: &PartModel, slots: &mut [Slot], f: impl Fn(&mut PartModel, &mut DecompositionState) -> Result<()> + Sync + Send) {
    slots.par_iter_mut().for_each_init(
        || model.fork(),
        |m, slot| {
            if let Ok(state) = slot {
                if let Err(e) = f(m, state) {
                    *slot = Err(format!("k={}: {e}", state.k()));
                }
            }
        },
    );
}

/// Optimizes every target at every k with Phase III borrowing between targets after each round,
/// then retrieves and chooses k per target. A failing target is recorded and skipped.
pub fn run_collection(model: &PartModel, targets: &[(String, PointCloud)], library: &PartLibrary, cfg: &RunConfig) -> Result<CollectionRun> {
    cfg.validate()?;
    with_threads(cfg.threads, || run_collection_inner(model, targets, library, cfg))?
}

fn run_collection_inner(model: &PartModel, targets: &[(String, PointCloud)], library: &PartLibrary, cfg: &RunConfig) -> Result<CollectionRun> {
    let sched = &cfg.schedule;
    let n = targets.len();
    let clouds: Vec<PointCloud> = targets.iter().map(|t| t.1.clone()).collect();
    let m = if sched.phase3 && n >= 2 { Some(target_distance_matrix(&clouds)?) } else { None };
    let mut borrow_model = model.fork();
    let mut per_k: Vec<Vec<Slot>> = Vec::new();
    for &k in &cfg.k_set {
        let mut slots: Vec<Slot> = targets
            .par_iter()
            .map_init(
                || model.fork(),
                |pm, (id, cloud)| init_state(pm, id, cloud, k, sched, task_seed(cfg.seed, id, k)).map_err(|e| format!("k={k}: {e}")),
            )
            .collect();
        for round in 0..sched.n3 {
            step_all(model, &mut slots, |pm, s| {
                let target = &clouds[targets.iter().position(|t| t.0 == s.target_id).expect("known target")];
                optimize_round(pm, target, s, sched)
            });
            if let Some(m) = &m {
                let live: Vec<usize> = (0..n).filter(|&i| slots[i].is_ok()).collect();
                if live.len() >= 2 {
                    let sub_m = DistanceMatrix::from_fn(live.len(), live.len(), |a, b| m.get(live[a], live[b]));
                    let sub_t: Vec<PointCloud> = live.iter().map(|&i| clouds[i].clone()).collect();
                    let mut sub_s: Vec<DecompositionState> = live
                        .iter()
                        .map(|&i| std::mem::replace(&mut slots[i], Err(String::new())).expect("live"))
                        .collect();
                    let plan = phase3_borrow(&mut borrow_model, &sub_t, &mut sub_s, &sub_m, sched)?;
                    info!("k={k} round {round}: borrow {:?}", plan);
                    for (&i, s) in live.iter().zip(sub_s) {
                        slots[i] = Ok(s);
                    }
                }
            }
        }
        step_all(model, &mut slots, |pm, s| {
            let target = &clouds[targets.iter().position(|t| t.0 == s.target_id).expect("known target")];
            finish(pm, target, s, sched)
        });
        per_k.push(slots);
    }

    let hash = cfg.hash();
    let acfg = cfg.assemble_config();
    let outcomes: Vec<std::result::Result<TargetRun, String>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut candidates = Vec::new();
            for slots in &per_k {
                let state = slots[i].clone()?;
                candidates.push(candidate_from_state(state, &clouds[i], library, &acfg, cfg.seed, &hash).map_err(|e| e.to_string())?);
            }
            let mut assembly = select_k(&candidates, cfg.alpha).map_err(|e| e.to_string())?.assembly.clone();
            assembly.iterations = candidates.iter().map(|c| c.assembly.iterations).sum();
            Ok(TargetRun {
                target_id: targets[i].0.clone(),
                assembly,
                candidates,
            })
        })
        .collect();
    let mut run = CollectionRun::default();
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(r) => run.runs.push(r),
            Err(e) => {
                warn!("{}: {e}", targets[i].0);
                run.failures.push((targets[i].0.clone(), e));
            }
        }
    }
    Ok(run)
}

/// A solved training target.
#[derive(Clone, Debug)]
pub struct BankEntry {
    pub target_id: String,
    pub target: PointCloud,
    /// State of the chosen k.
    pub state: DecompositionState,
    pub assembly: Assembly,
}

/// Solved training targets that seed amortized inference.
#[derive(Clone, Debug, Default)]
pub struct TrainingBank {
    pub entries: Vec<BankEntry>,
}

pub const BANK_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct BankRecord {
    target_id: String,
    target: String,
    state: String,
    assembly: String,
}

#[derive(Serialize, Deserialize)]
struct BankIndex {
    schema_version: u32,
    entries: Vec<BankRecord>,
}

impl TrainingBank {
    pub fn from_run(run: &CollectionRun, targets: &[(String, PointCloud)]) -> Self {
        let entries = run
            .runs
            .iter()
            .map(|r| BankEntry {
                target_id: r.target_id.clone(),
                target: targets.iter().find(|t| t.0 == r.target_id).expect("run target exists").1.clone(),
                state: r.chosen().state.clone(),
                assembly: r.assembly.clone(),
            })
            .collect();
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Nearest entry by chamfer; ties go to the earlier entry.
    pub fn nearest(&self, target: &PointCloud) -> Option<(usize, f64)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (i, chamfer(target, &e.target)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
    }

    /// `dir/bank.json` plus per-entry target cloud, checkpoint and assembly manifest.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut index = BankIndex {
            schema_version: BANK_SCHEMA_VERSION,
            entries: Vec::new(),
        };
        for e in &self.entries {
            let rec = BankRecord {
                target_id: e.target_id.clone(),
                target: format!("{}.target.ply", e.target_id),
                state: format!("{}.k{}.ckpt", e.target_id, e.state.k()),
                assembly: format!("{}.assembly.json", e.target_id),
            };
            let p = dir.join(&rec.target);
            std::fs::write(&p, ply_bytes(&e.target, None, PlyFormat::BinaryLe, PlyPrecision::Double)?).map_err(|err| Error::io(&p, err))?;
            let p = dir.join(&rec.state);
            std::fs::write(&p, checkpoint_bytes(&e.state)).map_err(|err| Error::io(&p, err))?;
            e.assembly.save(&dir.join(&rec.assembly))?;
            index.entries.push(rec);
        }
        let p = dir.join("bank.json");
        std::fs::write(&p, serde_json::to_string_pretty(&index)? + "\n").map_err(|e| Error::io(&p, e))
    }

    pub fn load(dir: &Path, model: &mut PartModel) -> Result<Self> {
        let p = dir.join("bank.json");
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let index: BankIndex = serde_json::from_str(&text).map_err(|e| Error::format(&p, e.to_string()))?;
        if index.schema_version != BANK_SCHEMA_VERSION {
            return Err(Error::format(&p, format!("bank schema version {} is not supported", index.schema_version)));
        }
        let mut entries = Vec::new();
        for rec in index.entries {
            let tp = dir.join(&rec.target);
            let bytes = std::fs::read(&tp).map_err(|e| Error::io(&tp, e))?;
            let target = PointCloud::new(parse_ply(&bytes, &tp)?.points).map_err(|e| Error::format(&tp, e.to_string()))?;
            let sp = dir.join(&rec.state);
            let bytes = std::fs::read(&sp).map_err(|e| Error::io(&sp, e))?;
            let state = state_from_checkpoint(&bytes, model).map_err(|e| Error::format(&sp, e.to_string()))?;
            entries.push(BankEntry {
                target_id: rec.target_id,
                target,
                state,
                assembly: Assembly::load(&dir.join(&rec.assembly))?,
            });
        }
        Ok(Self { entries })
    }
}

/// Outcome of a warm-started inference.
#[derive(Clone, Debug)]
pub struct AmortizedResult {
    pub assembly: Assembly,
    /// Bank entry the run started from; `None` when the bank was empty.
    pub neighbor: Option<String>,
    pub phase1_steps: usize,
    /// The bank was empty and the target was assembled from scratch.
    pub fallback: bool,
}

/// Starts from the variables of the nearest solved training target, runs a short Phase I
/// (`n1 / short_divisor` steps) and retrieves. An empty bank falls back to a full assemble.
pub fn amortized_infer(
    model: &mut PartModel,
    target_id: &str,
    target: &PointCloud,
    bank: &TrainingBank,
    library: &PartLibrary,
    cfg: &RunConfig,
) -> Result<AmortizedResult> {
    cfg.validate()?;
    let hash = cfg.hash();
    let Some((i, _)) = bank.nearest(target) else {
        warn!("{target_id}: empty training bank, assembling from scratch");
        let (assembly, candidates) = assemble(model, target_id, target, library, &cfg.assemble_config(), cfg.seed, &hash)?;
        return Ok(AmortizedResult {
            assembly,
            neighbor: None,
            phase1_steps: candidates.iter().map(|c| c.state.history.len()).sum(),
            fallback: true,
        });
    };
    let donor = &bank.entries[i];
    let k = donor.state.k();
    let mut state = init_state(model, target_id, target, k, &cfg.schedule, task_seed(cfg.seed, target_id, k))?;
    state.adopt(&donor.state, model)?;
    let steps = (cfg.schedule.n1 / cfg.short_divisor).max(1);
    phase1_run(model, target, &mut state, &cfg.schedule, steps, cfg.schedule.lr)?;
    state.restore_best(model)?;
    let assembly = assembly_from_state(&state, target, library, &cfg.retrieval, cfg.seed, &hash)?;
    Ok(AmortizedResult {
        assembly,
        neighbor: Some(donor.target_id.clone()),
        phase1_steps: steps,
        fallback: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_matrix_properties() {
        let a = PointCloud::new(vec![[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        let b = a.translated([0.5, 0.0, 0.0]);
        let m = target_distance_matrix(&[a.clone(), b.clone(), a.clone()]).unwrap();
        for i in 0..3 {
            assert_eq!(m.get(i, i), 0.0);
            for j in 0..3 {
                assert!((m.get(i, j) - m.get(j, i)).abs() < 1e-12);
            }
        }
        assert_eq!(m.get(0, 2), 0.0);
        assert_eq!(m.get(0, 1), chamfer(&a, &b));
        assert!(target_distance_matrix(&[a]).is_err());
    }
}
