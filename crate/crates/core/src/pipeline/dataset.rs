use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::io::{load_shape, parse_ply, ply_bytes, PlyFormat, PlyPrecision, Shape};
use crate::error::{Error, Result};
use crate::geom::{sample_mesh_interior, sample_mesh_surface, PointCloud, RigidPose, TriMesh};
use crate::partvae::{canonicalize_part, PartEntry, PartLibrary};
use crate::seed::derive_seed;

pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetEntry {
    pub id: String,
    /// Volumetric samples, centred at the origin.
    pub cloud: PointCloud,
    /// Boundary samples, when the input was a mesh.
    pub surface: Option<PointCloud>,
    pub split: Split,
}

/// Targets and library sharing one normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub targets: Vec<TargetEntry>,
    pub library: PartLibrary,
    /// Factor applied to every input coordinate (after centring targets).
    pub scale: f64,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &TargetEntry> {
        self.targets.iter().filter(move |t| t.split == split)
    }

    pub fn target(&self, id: &str) -> Option<&TargetEntry> {
        self.targets.iter().find(|t| t.id == id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub target_points: usize,
    pub surface_points: usize,
    pub part_points: usize,
    pub seed: u64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            target_points: 2048,
            surface_points: 2048,
            part_points: 512,
            seed: 0,
        }
    }
}

/// Input files by role.
#[derive(Clone, Debug, Default)]
pub struct IngestInputs {
    pub train: Vec<PathBuf>,
    pub test: Vec<PathBuf>,
    pub parts: Vec<PathBuf>,
}

fn stem(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| Error::format(path, "file name is not valid UTF-8"))
}

fn watertight(mesh: TriMesh, path: &Path) -> Result<TriMesh> {
    if mesh.is_watertight() {
        Ok(mesh)
    } else {
        Err(Error::format(path, "mesh is not watertight"))
    }
}

/// Loads every input, samples meshes, centres each target, and scales everything by one factor
/// so the largest target diagonal is 1. Parts are canonicalized at `part_points`.
/// Interior cloud and optional surface sampling of one target file, centred on the cloud centroid.
fn load_target(path: &Path, id: &str, cfg: &IngestConfig) -> Result<(PointCloud, Option<PointCloud>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("target/{id}")));
    let (cloud, surface) = match load_shape(path)? {
        Shape::Cloud(c) => (c, None),
        Shape::Mesh(m) => {
            let m = watertight(m, path)?;
            let cloud = sample_mesh_interior(&m, cfg.target_points, &mut rng).map_err(|e| Error::format(path, e.to_string()))?;
            let surface = sample_mesh_surface(&m, cfg.surface_points, &mut rng).map_err(|e| Error::format(path, e.to_string()))?;
            (cloud, Some(surface))
        }
    };
    let c = cloud.centroid();
    let shift = [-c[0], -c[1], -c[2]];
    Ok((cloud.translated(shift), surface.map(|s| s.translated(shift))))
}

/// Prepares a shape file outside a bundle the way `ingest` prepares targets, using the bundle's
/// scale so it lives in the same units as the library.
pub fn load_query(path: &Path, cfg: &IngestConfig, scale: f64) -> Result<TargetEntry> {
    let id = stem(path)?;
    let (cloud, surface) = load_target(path, &id, cfg)?;
    Ok(TargetEntry {
        id,
        cloud: cloud.scaled(scale),
        surface: surface.map(|s| s.scaled(scale)),
        split: Split::Test,
    })
}

pub fn ingest(inputs: &IngestInputs, cfg: &IngestConfig) -> Result<Dataset> {
    let mut raw_targets = Vec::new();
    let mut ids = BTreeSet::new();
    for (paths, split) in [(&inputs.train, Split::Train), (&inputs.test, Split::Test)] {
        for path in paths {
            let id = stem(path)?;
            if !ids.insert(id.clone()) {
                return Err(Error::format(path, format!("duplicate target id {id}")));
            }
            let (cloud, surface) = load_target(path, &id, cfg)?;
            raw_targets.push((id, cloud, surface, split));
        }
    }
    let max_diag = raw_targets.iter().map(|t| t.1.diagonal()).fold(0.0, f64::max);
    let scale = if max_diag > 0.0 { 1.0 / max_diag } else { 1.0 };
    let targets = raw_targets
        .into_iter()
        .map(|(id, cloud, surface, split)| TargetEntry {
            id,
            cloud: cloud.scaled(scale),
            surface: surface.map(|s| s.scaled(scale)),
            split,
        })
        .collect();

    let mut entries = Vec::new();
    for path in &inputs.parts {
        let id = stem(path)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("part/{id}")));
        let raw = match load_shape(path)? {
            Shape::Cloud(c) => c,
            Shape::Mesh(m) => {
                let m = watertight(m, path)?;
                sample_mesh_interior(&m, cfg.part_points, &mut rng).map_err(|e| Error::format(path, e.to_string()))?
            }
        };
        let source = path.display().to_string();
        entries.push(canonicalize_part(&id, &raw.scaled(scale), cfg.part_points, &source).map_err(|e| Error::format(path, e.to_string()))?);
    }
    Ok(Dataset {
        targets,
        library: PartLibrary::new(entries)?,
        scale,
    })
}

#[derive(Serialize, Deserialize)]
struct TargetRecord {
    id: String,
    split: Split,
    cloud: String,
    surface: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct PartRecord {
    id: String,
    source: String,
    pose: RigidPose,
    cloud: String,
}

#[derive(Serialize, Deserialize)]
struct Index {
    schema_version: u32,
    scale: f64,
    targets: Vec<TargetRecord>,
    parts: Vec<PartRecord>,
}

fn write_cloud(dir: &Path, rel: &str, cloud: &PointCloud) -> Result<()> {
    let path = dir.join(rel);
    std::fs::write(&path, ply_bytes(cloud, None, PlyFormat::BinaryLe, PlyPrecision::Double)?).map_err(|e| Error::io(&path, e))
}

fn read_cloud(dir: &Path, rel: &str) -> Result<PointCloud> {
    let path = dir.join(rel);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let d = parse_ply(&bytes, &path)?;
    PointCloud::new(d.points).map_err(|e| Error::format(&path, e.to_string()))
}

/// Writes `dir/index.json` plus one binary PLY (f64) per cloud under `targets/` and `parts/`.
pub fn save_bundle(dataset: &Dataset, dir: &Path) -> Result<()> {
    for sub in ["targets", "parts"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut index = Index {
        schema_version: DATASET_SCHEMA_VERSION,
        scale: dataset.scale,
        targets: Vec::new(),
        parts: Vec::new(),
    };
    for t in &dataset.targets {
        let cloud = format!("targets/{}.ply", t.id);
        write_cloud(dir, &cloud, &t.cloud)?;
        let surface = match &t.surface {
            Some(s) => {
                let rel = format!("targets/{}.surface.ply", t.id);
                write_cloud(dir, &rel, s)?;
                Some(rel)
            }
            None => None,
        };
        index.targets.push(TargetRecord {
            id: t.id.clone(),
            split: t.split,
            cloud,
            surface,
        });
    }
    for p in dataset.library.entries() {
        let cloud = format!("parts/{}.ply", p.id);
        write_cloud(dir, &cloud, &p.cloud)?;
        index.parts.push(PartRecord {
            id: p.id.clone(),
            source: p.source.clone(),
            pose: p.pose,
            cloud,
        });
    }
    let path = dir.join("index.json");
    std::fs::write(&path, serde_json::to_string_pretty(&index)? + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_bundle(dir: &Path) -> Result<Dataset> {
    let path = dir.join("index.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let index: Index = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    if index.schema_version != DATASET_SCHEMA_VERSION {
        return Err(Error::format(&path, format!("dataset schema version {} is not supported", index.schema_version)));
    }
    let targets = index
        .targets
        .iter()
        .map(|t| {
            Ok(TargetEntry {
                id: t.id.clone(),
                cloud: read_cloud(dir, &t.cloud)?,
                surface: t.surface.as_deref().map(|s| read_cloud(dir, s)).transpose()?,
                split: t.split,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let parts = index
        .parts
        .iter()
        .map(|p| {
            Ok(PartEntry {
                id: p.id.clone(),
                cloud: read_cloud(dir, &p.cloud)?,
                pose: p.pose,
                source: p.source.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        targets,
        library: PartLibrary::new(parts)?,
        scale: index.scale,
    })
}
