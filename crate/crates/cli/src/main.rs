use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use partasm::decomposer::PartModel;
use partasm::geom::{apply_pose, reflect_points, PointCloud};
use partasm::harness::{ablation_run, bf_rows, cached_vae, default_cache_dir, AblationPlan, EvalSuite, PhaseSet, SyntheticSpec, SyntheticSuite};
use partasm::partvae::{load_weights, save_weights, train_vae, PartLibrary};
use partasm::pipeline::io::{write_colored_ply, PlyFormat};
use partasm::pipeline::{amortized_infer, ingest, load_bundle, load_query, run_collection, save_bundle, Dataset, IngestConfig, IngestInputs, RunConfig, Split, TrainingBank};
use partasm::retrieval::Assembly;
use partasm::{Error, Result};

#[derive(Parser)]
#[command(name = "partasm", version, about = "Reconstruct shapes as assemblies of library parts")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a dataset bundle from directories of meshes (.obj/.ply) or clouds (.ply/.raw).
    Ingest(IngestArgs),
    /// Train the part autoencoder on a bundle's library.
    TrainVae(TrainArgs),
    /// Decompose bundle targets; with several targets, parts are borrowed across them.
    Optimize(OptimizeArgs),
    /// Warm-started inference from a training bank written by `optimize`.
    Infer(InferArgs),
    /// Phase ablation, output formats and brute-force comparison on a synthetic suite.
    Eval(EvalArgs),
    /// Colored per-segment and per-part point clouds for assembly manifests.
    Export(ExportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// 64-point parts and a short schedule.
    Desk,
    /// 512-point parts and the full schedule.
    Standard,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration file; overrides the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        match &self.config {
            Some(p) => RunConfig::load(p),
            None => Ok(match self.preset {
                Preset::Desk => RunConfig::desk(),
                Preset::Standard => RunConfig::default(),
            }),
        }
    }
}

#[derive(Args)]
struct RunOpts {
    /// Part counts to try, comma separated.
    #[arg(long, value_delimiter = ',')]
    k_set: Option<Vec<usize>>,
    /// Weight of the part-count penalty.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    n1: Option<usize>,
    #[arg(long)]
    n2: Option<usize>,
    #[arg(long)]
    n3: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_phase2: bool,
    #[arg(long)]
    no_phase3: bool,
    #[arg(long)]
    no_symmetry: bool,
    /// Library candidates pose-fitted per segment; the whole library by default.
    #[arg(long)]
    q: Option<usize>,
    /// Worker threads (0: all cores). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

impl RunOpts {
    fn apply(&self, mut cfg: RunConfig) -> Result<RunConfig> {
        if let Some(k) = &self.k_set {
            cfg.k_set = k.clone();
        }
        if let Some(a) = self.alpha {
            cfg.alpha = a;
        }
        let s = &mut cfg.schedule;
        if let Some(n) = self.n1 {
            s.n1 = n;
        }
        if let Some(n) = self.n2 {
            s.n2 = n;
        }
        if let Some(n) = self.n3 {
            s.n3 = n;
        }
        s.phase2 &= !self.no_phase2;
        s.phase3 &= !self.no_phase3;
        s.symmetry &= !self.no_symmetry;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if self.q.is_some() {
            cfg.retrieval.q = self.q;
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct IngestArgs {
    /// Directory of part shapes.
    #[arg(long)]
    parts: PathBuf,
    /// Directory of training targets.
    #[arg(long)]
    train: PathBuf,
    /// Directory of held-out targets.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Bundle directory to create.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Surface samples per target mesh.
    #[arg(long, default_value_t = 2048)]
    surface_points: usize,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Weights file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    /// Output directory: config, assembly manifests and the training bank.
    #[arg(long)]
    out: PathBuf,
    /// Target ids; every target of the split by default.
    #[arg(long)]
    target: Vec<String>,
    #[arg(long, value_enum, default_value = "train")]
    split: SplitArg,
    #[command(flatten)]
    opts: RunOpts,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    /// Bank directory written by `optimize`.
    #[arg(long)]
    bank: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Bundle target ids; the test split by default.
    #[arg(long)]
    target: Vec<String>,
    /// Extra shape files, normalized with the bundle's scale.
    #[arg(long)]
    input: Vec<PathBuf>,
    #[command(flatten)]
    opts: RunOpts,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    /// 50 parts, 20 targets.
    Desk,
    /// 12 parts, 6 targets.
    Tiny,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_enum, default_value = "desk")]
    suite: SuiteArg,
    /// Seed of the synthetic suite itself.
    #[arg(long, default_value_t = 0)]
    suite_seed: u64,
    /// Weights to use; trained (and cached) on the suite library when absent.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Number of run seeds, 0..n.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// Ablation rows: any of 1, 13, 12, 123.
    #[arg(long, value_delimiter = ',', default_value = "1,13,12,123")]
    ablations: Vec<String>,
    /// Skip the output-format rows.
    #[arg(long)]
    no_formats: bool,
    /// Add iteration-matched brute-force rows.
    #[arg(long)]
    bf: bool,
    /// Report and manifest directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    opts: RunOpts,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Assembly manifests.
    #[arg(long, required = true)]
    assembly: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// ASCII PLY instead of binary.
    #[arg(long)]
    ascii: bool,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn shape_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && matches!(p.extension().and_then(|x| x.to_str()), Some("ply" | "obj" | "raw")))
        .collect();
    files.sort();
    Ok(files)
}

fn load_model(weights: &Path) -> Result<PartModel> {
    PartModel::new(Arc::new(load_weights(weights)?))
}

fn check_library(model: &PartModel, library: &PartLibrary) -> Result<()> {
    let want = model.arch().points;
    match library.points_per_part() {
        Some(n) if n != want => Err(Error::InvalidArgument(format!("library parts have {n} points but the autoencoder expects {want}"))),
        _ => Ok(()),
    }
}

fn run_ingest(a: &IngestArgs) -> Result<()> {
    let cfg = a.cfg.load()?;
    let inputs = IngestInputs {
        train: shape_files(&a.train)?,
        test: a.test.as_deref().map(shape_files).transpose()?.unwrap_or_default(),
        parts: shape_files(&a.parts)?,
    };
    let icfg = IngestConfig {
        target_points: cfg.target_points,
        surface_points: a.surface_points,
        part_points: cfg.vae.arch.points,
        seed: a.seed,
    };
    let ds = ingest(&inputs, &icfg)?;
    save_bundle(&ds, &a.out)?;
    println!(
        "{}: {} train, {} test targets, {} parts, scale {:.6}",
        a.out.display(),
        ds.split(Split::Train).count(),
        ds.split(Split::Test).count(),
        ds.library.len(),
        ds.scale
    );
    Ok(())
}

fn run_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = a.cfg.load()?.vae;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let ds = load_bundle(&a.bundle)?;
    let trained = train_vae(&ds.library, &cfg)?;
    save_weights(&trained.params, &a.out)?;
    println!(
        "{}: {} epochs, final loss {:.6}, checksum {}",
        a.out.display(),
        trained.curve.len(),
        trained.curve.last().copied().unwrap_or(f64::NAN),
        trained.params.checksum()
    );
    Ok(())
}

fn selected_targets(ds: &Dataset, ids: &[String], split: Split) -> Result<Vec<(String, PointCloud)>> {
    if ids.is_empty() {
        return Ok(ds.split(split).map(|t| (t.id.clone(), t.cloud.clone())).collect());
    }
    ids.iter()
        .map(|id| {
            ds.target(id)
                .map(|t| (t.id.clone(), t.cloud.clone()))
                .ok_or_else(|| Error::InvalidArgument(format!("target {id} is not in the bundle")))
        })
        .collect()
}

fn run_optimize(a: &OptimizeArgs) -> Result<()> {
    let cfg = a.opts.apply(a.cfg.load()?)?;
    let ds = load_bundle(&a.bundle)?;
    let model = load_model(&a.weights)?;
    check_library(&model, &ds.library)?;
    let targets = selected_targets(&ds, &a.target, a.split.into())?;
    if targets.is_empty() {
        return Err(Error::InvalidArgument("no targets selected".into()));
    }
    create_dir(&a.out)?;
    cfg.save(&a.out.join("config.json"))?;
    let run = run_collection(&model, &targets, &ds.library, &cfg)?;
    let dir = a.out.join("assemblies");
    create_dir(&dir)?;
    for r in &run.runs {
        r.assembly.save(&dir.join(format!("{}.json", r.target_id)))?;
        println!(
            "{:<16} k={} parts={} VCD×100={:.4} iterations={}",
            r.target_id,
            r.assembly.k,
            r.assembly.part_count(),
            100.0 * r.assembly.vcd,
            r.assembly.iterations
        );
    }
    for (id, err) in &run.failures {
        eprintln!("{id}: failed: {err}");
    }
    TrainingBank::from_run(&run, &targets).save(&a.out.join("bank"))?;
    if run.runs.is_empty() {
        return Err(Error::Degenerate("every target failed".into()));
    }
    Ok(())
}

fn run_infer(a: &InferArgs) -> Result<()> {
    let cfg = a.opts.apply(a.cfg.load()?)?;
    let ds = load_bundle(&a.bundle)?;
    let mut model = load_model(&a.weights)?;
    check_library(&model, &ds.library)?;
    let bank = TrainingBank::load(&a.bank, &mut model)?;
    let mut queries = if a.target.is_empty() && !a.input.is_empty() {
        Vec::new()
    } else {
        selected_targets(&ds, &a.target, Split::Test)?
    };
    let icfg = IngestConfig {
        target_points: cfg.target_points,
        part_points: cfg.vae.arch.points,
        seed: cfg.seed,
        ..IngestConfig::default()
    };
    for path in &a.input {
        let q = load_query(path, &icfg, ds.scale)?;
        queries.push((q.id, q.cloud));
    }
    if queries.is_empty() {
        return Err(Error::InvalidArgument("no query targets".into()));
    }
    create_dir(&a.out)?;
    cfg.save(&a.out.join("config.json"))?;
    for (id, cloud) in &queries {
        let r = amortized_infer(&mut model, id, cloud, &bank, &ds.library, &cfg)?;
        r.assembly.save(&a.out.join(format!("{id}.json")))?;
        println!(
            "{:<16} from {:<16} k={} parts={} VCD×100={:.4} phase-I steps={}",
            id,
            r.neighbor.as_deref().unwrap_or("-"),
            r.assembly.k,
            r.assembly.part_count(),
            100.0 * r.assembly.vcd,
            r.phase1_steps
        );
    }
    Ok(())
}

fn phase_set(tag: &str) -> Result<PhaseSet> {
    let p = |phase2, phase3| PhaseSet { phase2, phase3 };
    match tag.trim() {
        "1" => Ok(p(false, false)),
        "13" => Ok(p(false, true)),
        "12" => Ok(p(true, false)),
        "123" => Ok(p(true, true)),
        other => Err(Error::InvalidArgument(format!("unknown ablation row {other}; use 1, 13, 12 or 123"))),
    }
}

fn run_eval(a: &EvalArgs) -> Result<()> {
    let cfg = a.opts.apply(a.cfg.load()?)?;
    let spec = SyntheticSpec {
        points_per_part: cfg.vae.arch.points,
        ..SyntheticSpec::desk()
    };
    let (suite, name) = match a.suite {
        SuiteArg::Desk => (SyntheticSuite::generate(spec, 50, 20, a.suite_seed)?, "desk"),
        SuiteArg::Tiny => (SyntheticSuite::generate(spec, 12, 6, a.suite_seed)?, "tiny"),
    };
    let params = match &a.weights {
        Some(w) => load_weights(w)?,
        None => cached_vae(&suite.library, &cfg.vae, &default_cache_dir())?,
    };
    let model = PartModel::new(Arc::new(params))?;
    check_library(&model, &suite.library)?;
    let eval: EvalSuite = suite.eval_suite(name)?;
    let plan = AblationPlan {
        phases: a.ablations.iter().map(|s| phase_set(s)).collect::<Result<_>>()?,
        formats: !a.no_formats,
    };
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let mut report = ablation_run(&eval, &model, &cfg, &seeds, &plan, Some(&a.out))?;
    if a.bf {
        let method = report
            .row(PhaseSet { phase2: true, phase3: true }.label())
            .ok_or_else(|| Error::InvalidArgument("brute-force rows need the 123 ablation row".into()))?
            .clone();
        report.rows.extend(bf_rows(&eval, &method, &cfg, Some(&a.out))?);
    }
    report.save(&a.out)?;
    print!("{}", report.to_table());
    Ok(())
}

/// Distinct colors for segment indices.
fn palette(i: usize) -> [u8; 3] {
    const BASE: [[u8; 3]; 10] = [
        [230, 25, 75],
        [60, 180, 75],
        [0, 130, 200],
        [245, 130, 48],
        [145, 30, 180],
        [70, 240, 240],
        [240, 50, 230],
        [210, 245, 60],
        [250, 190, 212],
        [0, 128, 128],
    ];
    BASE[i % BASE.len()]
}

fn export_one(ds: &Dataset, manifest: &Path, out: &Path, format: PlyFormat) -> Result<()> {
    let a = Assembly::load(manifest)?;
    let target = ds
        .target(&a.target_id)
        .ok_or_else(|| Error::InvalidArgument(format!("{}: target {} is not in the bundle", manifest.display(), a.target_id)))?;
    let mut colors = vec![[128u8; 3]; target.cloud.len()];
    for (i, p) in a.parts.iter().enumerate() {
        for &row in &p.segment {
            if let Some(c) = colors.get_mut(row) {
                *c = palette(i);
            }
        }
    }
    write_colored_ply(&out.join(format!("{}.segments.ply", a.target_id)), &target.cloud, &colors, format)?;
    let mut pts = Vec::new();
    let mut part_colors = Vec::new();
    for (i, p) in a.parts.iter().enumerate() {
        let entry = ds
            .library
            .get(&p.part_id)
            .ok_or_else(|| Error::InvalidArgument(format!("{}: part {} is not in the bundle", manifest.display(), p.part_id)))?;
        let mut posed = apply_pose(&entry.cloud, &p.pose);
        if p.mirrored {
            let plane = a.symmetry.ok_or_else(|| Error::format(manifest, "mirrored part without a symmetry plane"))?;
            posed = reflect_points(&posed, &plane);
        }
        part_colors.extend(std::iter::repeat_n(palette(i), posed.len()));
        pts.extend_from_slice(posed.points());
    }
    write_colored_ply(&out.join(format!("{}.parts.ply", a.target_id)), &PointCloud::new(pts)?, &part_colors, format)?;
    a.save(&out.join(format!("{}.json", a.target_id)))?;
    println!("{}: {} parts", a.target_id, a.part_count());
    Ok(())
}

fn run_export(a: &ExportArgs) -> Result<()> {
    let ds = load_bundle(&a.bundle)?;
    create_dir(&a.out)?;
    let format = if a.ascii { PlyFormat::Ascii } else { PlyFormat::BinaryLe };
    for m in &a.assembly {
        export_one(&ds, m, &a.out, format)?;
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Ingest(a) => run_ingest(a),
        Command::TrainVae(a) => run_train(a),
        Command::Optimize(a) => run_optimize(a),
        Command::Infer(a) => run_infer(a),
        Command::Eval(a) => run_eval(a),
        Command::Export(a) => run_export(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
    info!("done");
}
