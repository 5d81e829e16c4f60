//! Per-asset precomputation (binding, distances, graphs, attributes, targets),
//! its on-disk cache, and the dataset directory layout.
//!
//! A dataset directory holds `<name>.obj` + `<name>.json` pairs and an
//! optional `dataset.json` manifest listing the train/val/test split.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::binding::{
    assemble_features, bind, build_graphs, distance_table, target_distributions, AssetGraphs, BindingMode, BindingTable,
    DistanceMode, DistanceTable, GraphParams, DEFAULT_K,
};
use crate::error::{Error, Result};
use crate::geometry::voxel::DEFAULT_RESOLUTION;
use crate::geometry::{io, normalize, RigAsset};
use crate::graph::{compute_degree_stats, DegreeStats, NeighbourhoodKind, StatsSource};
use crate::model::{ModelInput, SkinningNetConfig};
use crate::synth::SyntheticRigSpec;
use crate::tensor::Tensor;

/// Bumped whenever the record layout or any precompute step changes.
pub const CACHE_VERSION: u32 = 1;
/// Overrides the cache directory.
pub const CACHE_DIR_ENV: &str = "RIGSKIN_CACHE_DIR";
pub const MANIFEST: &str = "dataset.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecomputeConfig {
    pub k: usize,
    pub binding_mode: BindingMode,
    pub distance_mode: DistanceMode,
    pub voxel_resolution: usize,
    pub graph: GraphParams,
    /// Seeds radius-neighbour sampling.
    pub seed: u64,
}

impl Default for PrecomputeConfig {
    fn default() -> Self {
        PrecomputeConfig {
            k: DEFAULT_K,
            binding_mode: BindingMode::Joint,
            distance_mode: DistanceMode::Geodesic,
            voxel_resolution: DEFAULT_RESOLUTION,
            graph: GraphParams::default(),
            seed: 0,
        }
    }
}

impl PrecomputeConfig {
    /// Takes `k` and the binding/distance toggles from the model configuration.
    pub fn for_model(model: &SkinningNetConfig) -> Self {
        PrecomputeConfig {
            k: model.k,
            binding_mode: model.binding_mode,
            distance_mode: model.distance_mode,
            ..PrecomputeConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub name: String,
    pub key: String,
    pub table: BindingTable,
    pub distances: DistanceTable,
    pub graphs: AssetGraphs,
    pub mesh_features: Tensor,
    pub skel_features: Tensor,
    /// Per-slot target distribution, present when the asset has weights.
    pub target: Option<Vec<f64>>,
    pub loss_mask: Option<Vec<f64>>,
}

impl Record {
    pub fn model_input(&self, cfg: &SkinningNetConfig, stats: &DegreeStats) -> Result<ModelInput> {
        ModelInput::new(&self.graphs, self.mesh_features.clone(), self.skel_features.clone(), &self.table, cfg, stats)
            .map_err(|e| e.in_asset(&self.name))
    }
}

pub fn cache_key(asset: &RigAsset, cfg: &PrecomputeConfig) -> String {
    let mut h = Sha256::new();
    h.update(CACHE_VERSION.to_le_bytes());
    h.update(io::write_obj(&asset.mesh));
    h.update([0]);
    h.update(io::write_rig_json(&asset.skeleton, asset.weights.as_ref()));
    h.update([0]);
    h.update(serde_json::to_vec(cfg).expect("config serializes"));
    hex::encode(h.finalize())
}

/// Builds the training record of a normalized asset.
pub fn precompute(asset: &RigAsset, cfg: &PrecomputeConfig) -> Result<Record> {
    let run = || -> Result<Record> {
        asset.validate()?;
        let table = bind(asset, cfg.k, cfg.binding_mode)?;
        let distances = distance_table(asset, &table, cfg.distance_mode, cfg.voxel_resolution)?;
        let graphs = build_graphs(asset, &table, cfg.graph, cfg.seed)?;
        let (mesh_features, skel_features) = assemble_features(asset, &table, &distances)?;
        let (target, loss_mask) = match &asset.weights {
            Some(w) => {
                let (t, m) = target_distributions(&table, w)?;
                (Some(t), Some(m))
            }
            None => (None, None),
        };
        if distances.fallback_count > 0 {
            log::warn!(
                "{}: {} vertex-joint pairs have no interior path; using Euclidean distance",
                asset.name,
                distances.fallback_count
            );
        }
        Ok(Record {
            name: asset.name.clone(),
            key: cache_key(asset, cfg),
            table,
            distances,
            graphs,
            mesh_features,
            skel_features,
            target,
            loss_mask,
        })
    };
    run().map_err(|e| e.in_asset(&asset.name))
}

#[derive(Debug, Clone)]
pub struct Cache {
    pub dir: PathBuf,
}

impl Cache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Cache { dir: dir.into() }
    }

    /// `$RIGSKIN_CACHE_DIR` when set, otherwise `default`.
    pub fn from_env_or(default: impl Into<PathBuf>) -> Self {
        match std::env::var_os(CACHE_DIR_ENV) {
            Some(d) if !d.is_empty() => Cache::new(PathBuf::from(d)),
            _ => Cache::new(default),
        }
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    /// Cached record, if present and readable. Unreadable entries count as misses.
    pub fn load(&self, key: &str) -> Option<Record> {
        let text = fs::read_to_string(self.path(key)).ok()?;
        match serde_json::from_str::<Record>(&text) {
            Ok(r) if r.key == key => Some(r),
            _ => {
                log::warn!("ignoring unreadable cache entry {}", self.path(key).display());
                None
            }
        }
    }

    pub fn store(&self, record: &Record) -> Result<()> {
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let path = self.path(&record.key);
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec(record)?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}

/// Record for `asset`, from the cache when possible. The flag reports a hit.
pub fn precompute_cached(asset: &RigAsset, cfg: &PrecomputeConfig, cache: Option<&Cache>) -> Result<(Record, bool)> {
    if let Some(c) = cache {
        if let Some(r) = c.load(&cache_key(asset, cfg)) {
            return Ok((r, true));
        }
    }
    let r = precompute(asset, cfg)?;
    if let Some(c) = cache {
        c.store(&r)?;
    }
    Ok((r, false))
}

/// Precomputes every asset on a pool of `jobs` workers; output order follows input.
pub fn precompute_all(assets: &[RigAsset], cfg: &PrecomputeConfig, cache: Option<&Cache>, jobs: usize) -> Result<Vec<Record>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| assets.par_iter().map(|a| precompute_cached(a, cfg, cache).map(|(r, _)| r)).collect())
}

/// Mean in-degree of each neighbourhood kind over the training records.
pub fn degree_stats(records: &[Record]) -> Result<DegreeStats> {
    let mesh: Vec<_> = records.iter().map(|r| &r.graphs.mesh).collect();
    let skel: Vec<_> = records.iter().map(|r| &r.graphs.skeleton).collect();
    let joint: Vec<_> = records.iter().map(|r| &r.graphs.mesh_skel).collect();
    Ok(DegreeStats::new(StatsSource::Computed)
        .with(NeighbourhoodKind::MeshTopology, compute_degree_stats(&mesh, NeighbourhoodKind::MeshTopology)?)
        .with(NeighbourhoodKind::MeshRadius, compute_degree_stats(&mesh, NeighbourhoodKind::MeshRadius)?)
        .with(NeighbourhoodKind::SkeletonTopology, compute_degree_stats(&skel, NeighbourhoodKind::SkeletonTopology)?)
        .with(NeighbourhoodKind::Binding, compute_degree_stats(&joint, NeighbourhoodKind::Binding)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<SyntheticRigSpec>,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Train/val/test sizes: one eighth each for validation and test (at least
/// one each from three assets up), the rest for training.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    if n < 3 {
        return (n, 0, 0);
    }
    let held = ((n as f64 / 8.0).round() as usize).max(1);
    (n - 2 * held, held, held)
}

impl Manifest {
    pub fn from_names(mut names: Vec<String>, spec: Option<SyntheticRigSpec>) -> Self {
        names.sort();
        let (tr, va, _) = split_sizes(names.len());
        let test = names.split_off(tr + va);
        let val = names.split_off(tr);
        Manifest { spec, train: names, val, test }
    }

    pub fn all(&self) -> impl Iterator<Item = &String> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }
}

pub fn asset_paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{name}.obj")), dir.join(format!("{name}.json")))
}

pub fn write_dataset(dir: &Path, assets: &[RigAsset], spec: Option<SyntheticRigSpec>) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for a in assets {
        let (mesh, rig) = asset_paths(dir, &a.name);
        io::save_asset(a, &mesh, &rig)?;
    }
    let manifest = Manifest::from_names(assets.iter().map(|a| a.name.clone()).collect(), spec);
    io::write_text(&dir.join(MANIFEST), &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
    Ok(manifest)
}

/// Reads `dataset.json`, or splits every `<name>.obj` with a `<name>.json`
/// rig by sorted name when there is no manifest.
pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    if path.exists() {
        return Ok(serde_json::from_str(&io::read_text(&path)?)?);
    }
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|e| e == "obj") {
            let stem = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            if asset_paths(dir, &stem).1.exists() {
                names.push(stem);
            }
        }
    }
    if names.is_empty() {
        return Err(Error::Asset(format!("no assets found in {}", dir.display())));
    }
    Ok(Manifest::from_names(names, None))
}

/// Loads and normalizes the named assets.
pub fn load_assets(dir: &Path, names: &[String]) -> Result<Vec<RigAsset>> {
    names
        .iter()
        .map(|n| {
            let (mesh, rig) = asset_paths(dir, n);
            let mut a = io::load_asset(&mesh, &rig)?;
            a.name = n.clone();
            normalize(&a).map_err(|e| e.in_asset(n))
        })
        .collect()
}
