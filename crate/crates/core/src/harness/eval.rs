use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use super::baseline::{bf_baseline, segment_retrieval};
use super::metrics::{cloud_metrics, metrics, segment_purity, EvalTarget, Metrics};
use crate::decomposer::{save_checkpoint, PartModel};
use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::partvae::PartLibrary;
use crate::pipeline::{run_collection, RunConfig};
use crate::retrieval::{direct_retrieval, Assembly};
use crate::seed::derive_seed;

pub const EVAL_SCHEMA_VERSION: u32 = 1;

/// Phase toggles of one ablation row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseSet {
    pub phase2: bool,
    pub phase3: bool,
}

impl PhaseSet {
    /// Rows in table order: I, I+III, I+II, I+II+III.
    pub const ABLATION: [PhaseSet; 4] = [
        PhaseSet { phase2: false, phase3: false },
        PhaseSet { phase2: false, phase3: true },
        PhaseSet { phase2: true, phase3: false },
        PhaseSet { phase2: true, phase3: true },
    ];

    pub fn label(self) -> &'static str {
        match (self.phase2, self.phase3) {
            (false, false) => "Phase I",
            (false, true) => "Phase I + III",
            (true, false) => "Phase I + II",
            (true, true) => "Phase I + II + III",
        }
    }

    fn slug(self) -> &'static str {
        match (self.phase2, self.phase3) {
            (false, false) => "p1",
            (false, true) => "p13",
            (true, false) => "p12",
            (true, true) => "p123",
        }
    }

    pub fn apply(self, cfg: &RunConfig) -> RunConfig {
        let mut c = cfg.clone();
        c.schedule.phase2 = self.phase2;
        c.schedule.phase3 = self.phase3;
        c
    }
}

/// Output representation scored in a row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputFormat {
    /// The optimized decoded parts themselves.
    DirectRecon,
    /// Library parts nearest to the decoded shapes, at the optimized poses.
    DirectRetrieval,
    /// Library parts fitted to the target segments the decoded parts induce.
    SegmentRetrieval,
}

impl OutputFormat {
    pub const ALL: [OutputFormat; 3] = [OutputFormat::DirectRecon, OutputFormat::DirectRetrieval, OutputFormat::SegmentRetrieval];

    pub fn label(self) -> &'static str {
        match self {
            OutputFormat::DirectRecon => "Direct Recon",
            OutputFormat::DirectRetrieval => "Direct Retrieval",
            OutputFormat::SegmentRetrieval => "Segment Retrieval",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowKind {
    Ablation,
    Format,
    Baseline,
}

/// One (target, seed) entry of a row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub target_id: String,
    pub seed: u64,
    pub scd: f64,
    pub vcd: f64,
    pub k: usize,
    pub part_count: usize,
    /// Fraction of correctly attributed rows, when the planted decomposition is known.
    pub purity: Option<f64>,
    pub iterations: u64,
    /// Path, relative to the report directory, of the assembly manifest or checkpoint the cell
    /// was scored from.
    pub manifest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub kind: RowKind,
    pub label: String,
    pub config_hash: String,
    pub mean_scd: f64,
    pub mean_vcd: f64,
    /// Iterations summed over every cell.
    pub iterations: u64,
    pub seconds: f64,
    pub cells: Vec<Cell>,
}

impl ReportRow {
    fn new(kind: RowKind, label: &str, config_hash: &str, cells: Vec<Cell>, seconds: f64) -> Self {
        let n = cells.len().max(1) as f64;
        Self {
            kind,
            label: label.to_string(),
            config_hash: config_hash.to_string(),
            mean_scd: cells.iter().map(|c| c.scd).sum::<f64>() / n,
            mean_vcd: cells.iter().map(|c| c.vcd).sum::<f64>() / n,
            iterations: cells.iter().map(|c| c.iterations).sum(),
            seconds,
            cells,
        }
    }

    pub fn cell(&self, target_id: &str, seed: u64) -> Option<&Cell> {
        self.cells.iter().find(|c| c.target_id == target_id && c.seed == seed)
    }

    pub fn mean_purity(&self) -> Option<f64> {
        let p: Vec<f64> = self.cells.iter().filter_map(|c| c.purity).collect();
        (!p.is_empty()).then(|| p.iter().sum::<f64>() / p.len() as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub suite: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<ReportRow>,
    /// Targets that failed in some run, as (row, target, error).
    pub failures: Vec<(String, String, String)>,
}

impl EvalReport {
    pub fn new(suite: &str, seeds: &[u64]) -> Self {
        Self {
            schema_version: EVAL_SCHEMA_VERSION,
            suite: suite.to_string(),
            seeds: seeds.to_vec(),
            rows: Vec::new(),
            failures: Vec::new(),
        }
    }

    pub fn row(&self, label: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn rows_of(&self, kind: RowKind) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(move |r| r.kind == kind)
    }

    /// Means ×100, one line per row.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "suite {} seeds {:?}", self.suite, self.seeds);
        let _ = writeln!(s, "{:<10} {:<28} {:>9} {:>9} {:>7} {:>12} {:>9}", "group", "row", "SCD", "VCD", "purity", "iterations", "seconds");
        for r in &self.rows {
            let group = match r.kind {
                RowKind::Ablation => "ablation",
                RowKind::Format => "format",
                RowKind::Baseline => "baseline",
            };
            let purity = r.mean_purity().map_or("-".to_string(), |p| format!("{p:.3}"));
            let _ = writeln!(
                s,
                "{:<10} {:<28} {:>9.4} {:>9.4} {:>7} {:>12} {:>9.1}",
                group, r.label, r.mean_scd, r.mean_vcd, purity, r.iterations, r.seconds
            );
        }
        for (row, target, err) in &self.failures {
            let _ = writeln!(s, "failed: {row} {target}: {err}");
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `report.json` and `report.txt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("report.json");
        std::fs::write(&json, self.to_json()? + "\n").map_err(|e| Error::io(&json, e))?;
        let txt = dir.join("report.txt");
        std::fs::write(&txt, self.to_table()).map_err(|e| Error::io(&txt, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let r: EvalReport = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if r.schema_version != EVAL_SCHEMA_VERSION {
            return Err(Error::format(path, format!("eval schema version {} is not supported", r.schema_version)));
        }
        Ok(r)
    }
}

/// Targets and library an evaluation runs on.
#[derive(Clone, Debug)]
pub struct EvalSuite {
    pub name: String,
    pub library: PartLibrary,
    pub targets: Vec<EvalTarget>,
}

impl EvalSuite {
    fn inputs(&self) -> Vec<(String, PointCloud)> {
        self.targets.iter().map(|t| (t.id.clone(), t.volume.clone())).collect()
    }
}

fn write_manifest(out: Option<&Path>, rel: &str, a: &Assembly) -> Result<()> {
    if let Some(dir) = out {
        let path = dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        a.save(&path)?;
    }
    Ok(())
}

fn assembly_cell(a: &Assembly, m: Metrics, target: &EvalTarget, seed: u64, manifest: String) -> Cell {
    Cell {
        target_id: target.id.clone(),
        seed,
        scd: m.scd,
        vcd: m.vcd,
        k: a.k,
        part_count: a.part_count(),
        purity: target.truth.as_ref().map(|t| segment_purity(a, t)),
        iterations: a.iterations,
        manifest,
    }
}

/// What `ablation_run` evaluates.
#[derive(Clone, Debug)]
pub struct AblationPlan {
    pub phases: Vec<PhaseSet>,
    /// Also score the three output formats on the full-method runs.
    pub formats: bool,
}

impl Default for AblationPlan {
    fn default() -> Self {
        Self {
            phases: PhaseSet::ABLATION.to_vec(),
            formats: true,
        }
    }
}

/// Runs every phase set once per seed over the whole suite with the collection schedule. Rows
/// hold Segment Retrieval metrics; when `plan.formats` is set and the full method is among the
/// phase sets, three output-format rows are scored from its runs. Manifests go under `out`.
pub fn ablation_run(
    suite: &EvalSuite,
    model: &PartModel,
    cfg: &RunConfig,
    seeds: &[u64],
    plan: &AblationPlan,
    out: Option<&Path>,
) -> Result<EvalReport> {
    if seeds.is_empty() || plan.phases.is_empty() {
        return Err(Error::InvalidArgument("ablation needs at least one seed and one phase set".into()));
    }
    let inputs = suite.inputs();
    let mut report = EvalReport::new(&suite.name, seeds);
    let mut format_cells: Vec<Vec<Cell>> = vec![Vec::new(); 3];
    let mut format_seconds = 0.0;
    let mut full_hash = String::new();
    for &phases in &plan.phases {
        let mut cells = Vec::new();
        let mut seconds = 0.0;
        let base = phases.apply(cfg);
        for &seed in seeds {
            let run_cfg = RunConfig { seed, ..base.clone() };
            let hash = run_cfg.hash();
            let start = Instant::now();
            let run = run_collection(model, &inputs, &suite.library, &run_cfg)?;
            seconds += start.elapsed().as_secs_f64();
            info!("{} seed {seed}: {} targets in {:.1}s", phases.label(), run.runs.len(), start.elapsed().as_secs_f64());
            for (id, err) in &run.failures {
                report.failures.push((phases.label().to_string(), id.clone(), err.clone()));
            }
            for tr in &run.runs {
                let target = suite.targets.iter().find(|t| t.id == tr.target_id).expect("run ids come from the suite");
                let rel = format!("{}/s{seed}/{}.json", phases.slug(), tr.target_id);
                write_manifest(out, &rel, &tr.assembly)?;
                cells.push(assembly_cell(&tr.assembly, metrics(&tr.assembly, &suite.library, target)?, target, seed, rel.clone()));
                if plan.formats && phases == (PhaseSet { phase2: true, phase3: true }) {
                    full_hash = hash.clone();
                    let start = Instant::now();
                    let chosen = tr.chosen();
                    let ckpt = format!("{}/s{seed}/{}.k{}.ckpt", phases.slug(), tr.target_id, chosen.score.k);
                    if let Some(dir) = out {
                        save_checkpoint(&chosen.state, &dir.join(&ckpt))?;
                    }
                    let decoded = PointCloud::pooled(chosen.state.decoded())?;
                    let m = cloud_metrics(&decoded, target)?;
                    format_cells[0].push(Cell {
                        target_id: target.id.clone(),
                        seed,
                        scd: m.scd,
                        vcd: m.vcd,
                        k: chosen.score.k,
                        part_count: chosen.state.part_count(),
                        purity: None,
                        iterations: chosen.state.history.len() as u64,
                        manifest: ckpt,
                    });
                    let direct = direct_retrieval(&chosen.state, &target.volume, &suite.library, seed, &hash)?;
                    let rel_direct = format!("{}/s{seed}/{}.direct.json", phases.slug(), tr.target_id);
                    write_manifest(out, &rel_direct, &direct)?;
                    let m = metrics(&direct, &suite.library, target)?;
                    format_cells[1].push(assembly_cell(&direct, m, target, seed, rel_direct));
                    let seg = cells.last().expect("pushed above").clone();
                    format_cells[2].push(seg);
                    format_seconds += start.elapsed().as_secs_f64();
                }
            }
        }
        report.rows.push(ReportRow::new(RowKind::Ablation, phases.label(), &base.hash(), cells, seconds));
    }
    if plan.formats && !full_hash.is_empty() {
        for (f, cells) in OutputFormat::ALL.iter().zip(format_cells) {
            report.rows.push(ReportRow::new(RowKind::Format, f.label(), &full_hash, cells, format_seconds));
        }
    }
    Ok(report)
}

/// Brute-force rows matched to `method`'s per-cell iteration budgets. Each target draws as many
/// parts as its planted decomposition has (or the method's part count without ground truth).
/// Returns the raw best draw and its Segment Retrieval refinement.
pub fn bf_rows(suite: &EvalSuite, method: &ReportRow, cfg: &RunConfig, out: Option<&Path>) -> Result<[ReportRow; 2]> {
    let mut raw = Vec::new();
    let mut refined = Vec::new();
    let start = Instant::now();
    for cell in &method.cells {
        let target = suite
            .targets
            .iter()
            .find(|t| t.id == cell.target_id)
            .ok_or_else(|| Error::InvalidArgument(format!("{} is not in the suite", cell.target_id)))?;
        let k = target.truth.as_ref().map_or(cell.part_count, |t| t.planted.len()).max(1);
        let seed = derive_seed(cell.seed, &format!("bf/{}", target.id));
        let bf = bf_baseline(&target.id, &target.volume, &suite.library, k, cell.iterations.max(1), &cfg.retrieval.fit, seed)?;
        let rel = format!("bf/s{}/{}.json", cell.seed, target.id);
        write_manifest(out, &rel, &bf.assembly)?;
        let m = metrics(&bf.assembly, &suite.library, target)?;
        raw.push(assembly_cell(&bf.assembly, m, target, cell.seed, rel));
        let seg = segment_retrieval(&bf.assembly, &target.volume, &suite.library, &cfg.retrieval)?;
        let rel = format!("bf/s{}/{}.segment.json", cell.seed, target.id);
        write_manifest(out, &rel, &seg)?;
        let m = metrics(&seg, &suite.library, target)?;
        refined.push(assembly_cell(&seg, m, target, cell.seed, rel));
    }
    let seconds = start.elapsed().as_secs_f64();
    Ok([
        ReportRow::new(RowKind::Baseline, "BF Direct", "brute-force", raw, seconds),
        ReportRow::new(RowKind::Baseline, "BF Segment Retrieval", "brute-force", refined, seconds),
    ])
}
