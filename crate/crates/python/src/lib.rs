//! Python module `rigskin`: assets, binding, training, prediction and
//! evaluation, plus the raw multi-aggregator reduction.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rigskin::animation::{forward_kinematics, lbs_deform, sample_poses, Metrics, Pose};
use rigskin::binding::{bind as bind_asset, BindingMode};
use rigskin::checkpoint::Checkpoint;
use rigskin::data::{precompute, precompute_all};
use rigskin::geometry::io::{load_asset, save_asset};
use rigskin::geometry::{normalize, RigAsset, SkinWeights};
use rigskin::graph::{AggregatePlan, Aggregator, EdgeFn, Scaler};
use rigskin::model::SkinningNet;
use rigskin::nn::ParamStore;
use rigskin::pipeline::{evaluate as evaluate_weights, predict_weights};
use rigskin::synth::{generate_synthetic, SyntheticKind, SyntheticRigSpec};
use rigskin::tensor::{Tape, Tensor};
use rigskin::train::{train as run_training, TrainConfig as CoreTrainConfig};

fn err(e: rigskin::Error) -> PyErr {
    match e {
        rigskin::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn weights_from_rows(rows: Vec<Vec<f64>>) -> PyResult<SkinWeights> {
    let j = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != j) {
        return Err(PyValueError::new_err("weight rows must all have the same length"));
    }
    Ok(SkinWeights { joint_count: j, data: rows.concat() })
}

fn rows(w: &SkinWeights) -> Vec<Vec<f64>> {
    (0..w.vertex_count()).map(|v| w.row(v).to_vec()).collect()
}

/// A mesh with its skeleton and optional per-vertex joint weights.
#[pyclass(name = "Asset", module = "rigskin", skip_from_py_object)]
#[derive(Clone)]
pub struct PyAsset {
    inner: RigAsset,
}

#[pymethods]
impl PyAsset {
    /// Reads an OBJ mesh and a rig (`.json`, or the line-based text format).
    #[staticmethod]
    fn load(mesh: PathBuf, rig: PathBuf) -> PyResult<Self> {
        Ok(PyAsset { inner: load_asset(&mesh, &rig).map_err(err)? })
    }

    fn save(&self, mesh: PathBuf, rig: PathBuf) -> PyResult<()> {
        save_asset(&self.inner, &mesh, &rig).map_err(err)
    }

    /// Copy centred on the origin and scaled into the unit cube.
    fn normalized(&self) -> PyResult<Self> {
        Ok(PyAsset { inner: normalize(&self.inner).map_err(err)? })
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn vertex_count(&self) -> usize {
        self.inner.mesh.vertices.len()
    }

    #[getter]
    fn vertices(&self) -> Vec<[f64; 3]> {
        self.inner.mesh.vertices.iter().map(|v| [v.x, v.y, v.z]).collect()
    }

    #[getter]
    fn faces(&self) -> Vec<[u32; 3]> {
        self.inner.mesh.faces.clone()
    }

    #[getter]
    fn joint_names(&self) -> Vec<String> {
        self.inner.skeleton.joints.iter().map(|j| j.name.clone()).collect()
    }

    #[getter]
    fn parents(&self) -> Vec<Option<usize>> {
        self.inner.skeleton.joints.iter().map(|j| j.parent).collect()
    }

    /// `[V][J]` ground-truth weights, or `None`.
    #[getter]
    fn weights(&self) -> Option<Vec<Vec<f64>>> {
        self.inner.weights.as_ref().map(rows)
    }

    fn __repr__(&self) -> String {
        format!(
            "Asset(name={:?}, vertices={}, joints={})",
            self.inner.name,
            self.inner.mesh.vertices.len(),
            self.inner.skeleton.joints.len()
        )
    }
}

fn assets(list: &[PyRef<'_, PyAsset>]) -> Vec<RigAsset> {
    list.iter().map(|a| a.inner.clone()).collect()
}

/// Synthetic tube (or branching) assets with analytic weights, already normalized.
#[pyfunction]
#[pyo3(signature = (count=32, seed=7, kind="tube"))]
fn synthesize(count: usize, seed: u64, kind: &str) -> PyResult<Vec<PyAsset>> {
    let kind = match kind {
        "tube" => SyntheticKind::Tube,
        "branching" => SyntheticKind::Branching,
        other => return Err(PyValueError::new_err(format!("unknown kind `{other}` (tube, branching)"))),
    };
    let spec = SyntheticRigSpec { count, seed, kind, ..SyntheticRigSpec::default() };
    Ok(generate_synthetic(&spec).map_err(err)?.into_iter().map(|inner| PyAsset { inner }).collect())
}

/// Per vertex, the joint names of the `k` binding slots (`None` for padding).
#[pyfunction]
#[pyo3(signature = (asset, k=5, mode="joint"))]
fn bind(asset: &PyAsset, k: usize, mode: &str) -> PyResult<Vec<Vec<Option<String>>>> {
    let mode: BindingMode = mode.parse().map_err(err)?;
    let table = bind_asset(&asset.inner, k, mode).map_err(err)?;
    let names = &asset.inner.skeleton.joints;
    Ok((0..table.vertex_count())
        .map(|v| table.row(v).iter().map(|s| s.valid.then(|| names[s.joint].name.clone())).collect())
        .collect())
}

/// Training settings, mirrored as JSON.
#[pyclass(name = "TrainConfig", module = "rigskin", skip_from_py_object)]
#[derive(Clone)]
pub struct PyTrainConfig {
    inner: CoreTrainConfig,
}

#[pymethods]
impl PyTrainConfig {
    /// Defaults, or the given JSON document.
    #[new]
    #[pyo3(signature = (json=None))]
    fn new(json: Option<&str>) -> PyResult<Self> {
        let inner = match json {
            Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))?,
            None => CoreTrainConfig::default(),
        };
        Ok(PyTrainConfig { inner })
    }

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.inner).expect("config serializes")
    }

    /// Copy with every layer width multiplied by `factor`.
    fn scaled(&self, factor: f64) -> Self {
        let mut inner = self.inner.clone();
        inner.model = inner.model.scaled(factor);
        PyTrainConfig { inner }
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.inner.epochs
    }
    #[setter]
    fn set_epochs(&mut self, v: usize) {
        self.inner.epochs = v;
    }
    #[getter]
    fn learning_rate(&self) -> f64 {
        self.inner.learning_rate
    }
    #[setter]
    fn set_learning_rate(&mut self, v: f64) {
        self.inner.learning_rate = v;
    }
    #[getter]
    fn batch_size(&self) -> usize {
        self.inner.batch_size
    }
    #[setter]
    fn set_batch_size(&mut self, v: usize) {
        self.inner.batch_size = v;
    }
    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }
    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.seed = v;
    }
    #[getter]
    fn head_dropout(&self) -> f64 {
        self.inner.model.head_dropout
    }
    #[setter]
    fn set_head_dropout(&mut self, v: f64) {
        self.inner.model.head_dropout = v;
    }
    #[getter]
    fn voxel_resolution(&self) -> usize {
        self.inner.voxel_resolution
    }
    #[setter]
    fn set_voxel_resolution(&mut self, v: usize) {
        self.inner.voxel_resolution = v;
    }
}

/// A trained network with the statistics and preprocessing it was trained with.
#[pyclass(name = "Model", module = "rigskin")]
pub struct PyModel {
    ckpt: Checkpoint,
    net: Arc<SkinningNet>,
    params: Arc<ParamStore>,
}

impl PyModel {
    fn from_checkpoint(ckpt: Checkpoint) -> PyResult<Self> {
        let (net, params) = ckpt.instantiate().map_err(err)?;
        Ok(PyModel { ckpt, net: Arc::new(net), params: Arc::new(params) })
    }
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Self::from_checkpoint(Checkpoint::load(&path).map_err(err)?)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.ckpt.save(&path).map_err(err)
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// `[V][J]` predicted weights for a normalized asset.
    fn predict(&self, py: Python<'_>, asset: &PyAsset) -> PyResult<Vec<Vec<f64>>> {
        let asset = asset.inner.clone();
        let (net, params) = (self.net.clone(), self.params.clone());
        let (pc, stats) = (self.ckpt.precompute.clone(), self.ckpt.stats.clone());
        let w = py
            .detach(move || {
                let record = precompute(&asset, &pc)?;
                predict_weights(&net, &params, &stats, &record, asset.skeleton.joints.len())
            })
            .map_err(err)?;
        Ok(rows(&w))
    }
}

/// Trains on `train` (selecting the best epoch on `val`); returns the model
/// and the loss curve as `(epoch, train_kl, val_kl)` tuples.
#[pyfunction]
#[pyo3(signature = (train, val, config, jobs=1))]
fn train(
    py: Python<'_>,
    train: Vec<PyRef<'_, PyAsset>>,
    val: Vec<PyRef<'_, PyAsset>>,
    config: &PyTrainConfig,
    jobs: usize,
) -> PyResult<(PyModel, Vec<(usize, f64, Option<f64>)>)> {
    let (train, val, cfg) = (assets(&train), assets(&val), config.inner.clone());
    let (ckpt, curve) = py
        .detach(move || -> rigskin::Result<_> {
            let pc = cfg.precompute_config();
            let tr = precompute_all(&train, &pc, None, jobs)?;
            let va = precompute_all(&val, &pc, None, jobs)?;
            let out = run_training(&tr, &va, &cfg, |_| Ok(()))?;
            let curve = out.curve.iter().map(|e| (e.epoch, e.train_kl, e.val_kl)).collect::<Vec<_>>();
            let ckpt = Checkpoint {
                model: out.net.config.clone(),
                precompute: pc,
                stats: out.degree_stats,
                epoch: out.best_epoch,
                params: out.best,
            };
            Ok((ckpt, curve))
        })
        .map_err(err)?;
    Ok((PyModel::from_checkpoint(ckpt)?, curve))
}

fn metrics_dict<'py>(py: Python<'py>, m: &Metrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("precision", m.precision)?;
    d.set_item("recall", m.recall)?;
    d.set_item("avg_l1", m.avg_l1)?;
    d.set_item("avg_def", m.avg_def)?;
    d.set_item("max_def", m.max_def)?;
    Ok(d)
}

/// Precision, recall, L1 and deformation errors of `weights` against the
/// asset's own weights over random poses.
#[pyfunction]
#[pyo3(signature = (weights, asset, poses=10, range_deg=10.0, seed=3))]
fn evaluate<'py>(
    py: Python<'py>,
    weights: Vec<Vec<f64>>,
    asset: &PyAsset,
    poses: usize,
    range_deg: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let w = weights_from_rows(weights)?;
    let m = evaluate_weights(&w, &asset.inner, poses, range_deg, seed).map_err(err)?;
    metrics_dict(py, &m)
}

/// Random poses as per-joint Euler angles in degrees.
#[pyfunction]
#[pyo3(signature = (asset, n=10, range_deg=10.0, seed=0))]
fn random_poses(asset: &PyAsset, n: usize, range_deg: f64, seed: u64) -> PyResult<Vec<Vec<[f64; 3]>>> {
    let poses = sample_poses(&asset.inner.skeleton, n, range_deg, seed).map_err(err)?;
    Ok(poses.into_iter().map(|p| p.euler_deg).collect())
}

/// Vertices posed by linear blend skinning with `weights` (`[V][J]`).
#[pyfunction]
fn deform(asset: &PyAsset, weights: Vec<Vec<f64>>, pose: Vec<[f64; 3]>) -> PyResult<Vec<[f64; 3]>> {
    let w = weights_from_rows(weights)?;
    let pose = Pose { euler_deg: pose, seed: None };
    let m = forward_kinematics(&asset.inner.skeleton, &pose).map_err(err)?;
    let posed = lbs_deform(&asset.inner.mesh.vertices, &w, &m).map_err(err)?;
    Ok(posed.iter().map(|v| [v.x, v.y, v.z]).collect())
}

/// Scaled multi-aggregator reduction of `features` (`[N][F]`) over directed
/// `edges` `(src, dst)`; output blocks follow the aggregator then scaler order.
#[pyfunction]
#[pyo3(signature = (features, edges, aggregators=vec!["max".to_string(), "min".to_string(), "mean".to_string(), "std".to_string()], scalers=vec!["identity".to_string()], d_train=1.0, edge_fn="asymmetric"))]
fn aggregate(
    features: Vec<Vec<f64>>,
    edges: Vec<(u32, u32)>,
    aggregators: Vec<String>,
    scalers: Vec<String>,
    d_train: f64,
    edge_fn: &str,
) -> PyResult<Vec<Vec<f64>>> {
    let aggs = aggregators.iter().map(|s| s.parse::<Aggregator>()).collect::<Result<Vec<_>, _>>().map_err(err)?;
    let scs = scalers.iter().map(|s| s.parse::<Scaler>()).collect::<Result<Vec<_>, _>>().map_err(err)?;
    let edge_fn = match edge_fn {
        "asymmetric" => EdgeFn::Asymmetric,
        "difference" => EdgeFn::Difference,
        other => return Err(PyValueError::new_err(format!("unknown edge function `{other}`"))),
    };
    let n = features.len();
    let f = features.first().map_or(0, Vec::len);
    if features.iter().any(|r| r.len() != f) {
        return Err(PyValueError::new_err("feature rows must all have the same length"));
    }
    let plan = AggregatePlan::new(n, &edges, &aggs, &scs, edge_fn, d_train).map_err(err)?;
    let x = Tensor::new(vec![n, f], features.concat()).map_err(err)?;
    let mut tape = Tape::new();
    let v = tape.leaf(&x);
    let y = tape.aggregate(v, Arc::new(plan)).map_err(err)?;
    let out = tape.tensor(y);
    let w = out.shape()[1];
    Ok(out.data().chunks(w).map(<[f64]>::to_vec).collect())
}

#[pymodule]
#[pyo3(name = "rigskin")]
fn rigskin_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyAsset>()?;
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(bind, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(random_poses, m)?)?;
    m.add_function(wrap_pyfunction!(deform, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    Ok(())
}
