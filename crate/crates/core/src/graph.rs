//! Graphs, edge messages, aggregators and logarithmic degree scalers.
//!
//! Aggregated blocks are always laid out aggregator-major, scaler-minor:
//! `(max, min, mean, std) × (identity, amplification, attenuation)`, filtered
//! to the configured subsets. Checkpoints depend on this order.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighbourhoodKind {
    MeshTopology,
    MeshRadius,
    SkeletonTopology,
    Binding,
}

impl NeighbourhoodKind {
    pub const ALL: [NeighbourhoodKind; 4] = [
        NeighbourhoodKind::MeshTopology,
        NeighbourhoodKind::MeshRadius,
        NeighbourhoodKind::SkeletonTopology,
        NeighbourhoodKind::Binding,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NeighbourhoodKind::MeshTopology => "mesh_topology",
            NeighbourhoodKind::MeshRadius => "mesh_radius",
            NeighbourhoodKind::SkeletonTopology => "skeleton_topology",
            NeighbourhoodKind::Binding => "binding",
        }
    }
}

impl fmt::Display for NeighbourhoodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    MeshVertex,
    SkeletonJoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    Max,
    Min,
    Mean,
    Std,
}

impl Aggregator {
    pub const ALL: [Aggregator; 4] = [Aggregator::Max, Aggregator::Min, Aggregator::Mean, Aggregator::Std];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaler {
    Identity,
    Amplification,
    Attenuation,
}

impl Scaler {
    pub const ALL: [Scaler; 3] = [Scaler::Identity, Scaler::Amplification, Scaler::Attenuation];
}

impl FromStr for Aggregator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "max" => Ok(Aggregator::Max),
            "min" => Ok(Aggregator::Min),
            "mean" => Ok(Aggregator::Mean),
            "std" => Ok(Aggregator::Std),
            other => Err(Error::Config(format!("unknown aggregator `{other}` (expected max|min|mean|std)"))),
        }
    }
}

impl FromStr for Scaler {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "identity" | "iden" => Ok(Scaler::Identity),
            "amplification" | "amp" => Ok(Scaler::Amplification),
            "attenuation" | "att" => Ok(Scaler::Attenuation),
            other => Err(Error::Config(format!(
                "unknown scaler `{other}` (expected identity|amplification|attenuation)"
            ))),
        }
    }
}

/// How an edge message is built from the source (neighbour) and destination
/// (central) node features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeFn {
    /// `concat(x_dst, x_src - x_dst)`
    #[default]
    Asymmetric,
    /// `x_src - x_dst`
    Difference,
}

impl EdgeFn {
    pub fn message_width(self, feature_width: usize) -> usize {
        match self {
            EdgeFn::Asymmetric => 2 * feature_width,
            EdgeFn::Difference => feature_width,
        }
    }
}

pub fn edge_message(x_src: &[f64], x_dst: &[f64], edge_fn: EdgeFn) -> Result<Vec<f64>> {
    if x_src.len() != x_dst.len() {
        return Err(Error::shape("edge_message", format!("{} vs {}", x_src.len(), x_dst.len())));
    }
    let diff = x_src.iter().zip(x_dst).map(|(s, d)| s - d);
    Ok(match edge_fn {
        EdgeFn::Asymmetric => x_dst.iter().copied().chain(diff).collect(),
        EdgeFn::Difference => diff.collect(),
    })
}

/// Per-dimension reduction over the rows of `messages` (`[M, E]`).
pub fn aggregate(messages: &Tensor, which: Aggregator) -> Result<Tensor> {
    if messages.shape().len() != 2 {
        return Err(Error::shape("aggregate", format!("{:?}", messages.shape())));
    }
    let (m, e) = (messages.rows(), messages.cols());
    if m == 0 {
        return Err(Error::EmptyNeighbourhood(0));
    }
    let col = |c: usize| (0..m).map(move |r| messages.at(r, c));
    let out: Vec<f64> = (0..e)
        .map(|c| match which {
            Aggregator::Max => col(c).fold(f64::NEG_INFINITY, f64::max),
            Aggregator::Min => col(c).fold(f64::INFINITY, f64::min),
            Aggregator::Mean => col(c).sum::<f64>() / m as f64,
            Aggregator::Std => {
                let mu = col(c).sum::<f64>() / m as f64;
                (col(c).map(|v| (v - mu) * (v - mu)).sum::<f64>() / m as f64).sqrt()
            }
        })
        .collect();
    Tensor::vector(out)
}

/// Mean in-degree of the training split, per neighbourhood kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeStats {
    pub d_train: BTreeMap<NeighbourhoodKind, f64>,
    pub source: StatsSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsSource {
    Computed,
    Loaded,
}

impl DegreeStats {
    pub fn new(source: StatsSource) -> Self {
        DegreeStats { d_train: BTreeMap::new(), source }
    }

    pub fn with(mut self, kind: NeighbourhoodKind, d: f64) -> Self {
        self.d_train.insert(kind, d);
        self
    }

    pub fn get(&self, kind: NeighbourhoodKind) -> Result<f64> {
        self.d_train.get(&kind).copied().ok_or_else(|| Error::MissingDegreeStats(kind.to_string()))
    }

    /// Computes `d_train` for every kind present in all of `graphs`.
    pub fn compute(graphs: &[&Graph], kinds: &[NeighbourhoodKind]) -> Result<Self> {
        let mut stats = DegreeStats::new(StatsSource::Computed);
        for &kind in kinds {
            stats.d_train.insert(kind, compute_degree_stats(graphs, kind)?);
        }
        Ok(stats)
    }
}

/// Mean in-degree over every node of every graph in the split.
pub fn compute_degree_stats(graphs: &[&Graph], kind: NeighbourhoodKind) -> Result<f64> {
    let (mut edges, mut nodes) = (0usize, 0usize);
    for g in graphs {
        if g.edges(kind).is_some() {
            edges += g.edges(kind).map_or(0, <[_]>::len);
            nodes += g.node_count;
        }
    }
    if nodes == 0 {
        return Err(Error::Config(format!("cannot compute degree statistics for {kind}: empty training split")));
    }
    let d = edges as f64 / nodes as f64;
    if d <= 0.0 {
        return Err(Error::Config(format!("mean degree for {kind} is zero")));
    }
    Ok(d)
}

/// Multiplier applied by `which` for a node of in-degree `degree`.
///
/// Degrees are shifted by one inside the logarithms so leaf nodes of degree 1
/// stay finite; the identity at `degree == d_train` is preserved.
pub fn scaler_value(which: Scaler, degree: usize, d_train: f64) -> f64 {
    let amp = ((degree as f64) + 1.0).ln() / (d_train + 1.0).ln();
    match which {
        Scaler::Identity => 1.0,
        Scaler::Amplification => amp,
        Scaler::Attenuation => 1.0 / amp,
    }
}

pub fn scale(aggregated: &Tensor, degree: usize, d_train: f64, which: Scaler) -> Result<Tensor> {
    if degree == 0 || d_train <= 0.0 {
        return Err(Error::Config(format!("scale needs degree >= 1 and d_train > 0 (got {degree}, {d_train})")));
    }
    let s = scaler_value(which, degree, d_train);
    Tensor::new(aggregated.shape().to_vec(), aggregated.data().iter().map(|v| v * s).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    pub node_count: usize,
    pub node_kind: Vec<NodeKind>,
    pub features: Option<Tensor>,
    pub edge_sets: BTreeMap<NeighbourhoodKind, Vec<(u32, u32)>>,
}

impl Graph {
    pub fn new(node_kind: Vec<NodeKind>) -> Self {
        Graph { node_count: node_kind.len(), node_kind, features: None, edge_sets: BTreeMap::new() }
    }

    pub fn edges(&self, kind: NeighbourhoodKind) -> Option<&[(u32, u32)]> {
        self.edge_sets.get(&kind).map(Vec::as_slice)
    }

    /// Adds a directed edge set after validating endpoints.
    pub fn set_edges(&mut self, kind: NeighbourhoodKind, edges: Vec<(u32, u32)>) -> Result<()> {
        if let Some(&(s, d)) = edges.iter().find(|&&(s, d)| s as usize >= self.node_count || d as usize >= self.node_count)
        {
            return Err(Error::Graph(format!("{kind} edge ({s}, {d}) out of range for {} nodes", self.node_count)));
        }
        self.edge_sets.insert(kind, edges);
        Ok(())
    }

    pub fn in_degrees(&self, kind: NeighbourhoodKind) -> Vec<usize> {
        let mut deg = vec![0; self.node_count];
        for &(_, d) in self.edges(kind).unwrap_or(&[]) {
            deg[d as usize] += 1;
        }
        deg
    }

    /// Inserts `(i, i)` for every node without incoming `kind` edges.
    pub fn add_self_loops_for_isolated(&mut self, kind: NeighbourhoodKind) {
        let deg = self.in_degrees(kind);
        let set = self.edge_sets.entry(kind).or_default();
        for (i, d) in deg.into_iter().enumerate() {
            if d == 0 {
                set.push((i as u32, i as u32));
            }
        }
    }
}

/// Destination-grouped adjacency plus everything the fused aggregation kernel
/// needs: aggregator/scaler subsets, per-node scaler values, and edge function.
#[derive(Debug, Clone)]
pub struct AggregatePlan {
    offsets: Vec<usize>,
    sources: Vec<u32>,
    aggregators: Vec<Aggregator>,
    scalers: Vec<Scaler>,
    /// `[node][scaler]`
    scale_values: Vec<f64>,
    edge_fn: EdgeFn,
}

#[derive(Debug, Default)]
pub struct AggregateSaved {
    argmax: Vec<u32>,
    argmin: Vec<u32>,
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl AggregatePlan {
    /// Groups `edges` (src, dst) by destination, keeping edge-list order within
    /// each neighbourhood.
    pub fn new(
        node_count: usize,
        edges: &[(u32, u32)],
        aggregators: &[Aggregator],
        scalers: &[Scaler],
        edge_fn: EdgeFn,
        d_train: f64,
    ) -> Result<Self> {
        if aggregators.is_empty() || scalers.is_empty() {
            return Err(Error::Config("aggregator and scaler sets must be non-empty".into()));
        }
        if d_train <= 0.0 {
            return Err(Error::Config(format!("d_train must be positive, got {d_train}")));
        }
        let mut offsets = vec![0usize; node_count + 1];
        for &(s, d) in edges {
            if s as usize >= node_count || d as usize >= node_count {
                return Err(Error::Graph(format!("edge ({s}, {d}) out of range for {node_count} nodes")));
            }
            offsets[d as usize + 1] += 1;
        }
        for i in 0..node_count {
            if offsets[i + 1] == 0 {
                return Err(Error::EmptyNeighbourhood(i));
            }
            offsets[i + 1] += offsets[i];
        }
        let mut cursor = offsets.clone();
        let mut sources = vec![0u32; edges.len()];
        for &(s, d) in edges {
            sources[cursor[d as usize]] = s;
            cursor[d as usize] += 1;
        }
        let mut scale_values = Vec::with_capacity(node_count * scalers.len());
        for i in 0..node_count {
            let deg = offsets[i + 1] - offsets[i];
            scale_values.extend(scalers.iter().map(|&s| scaler_value(s, deg, d_train)));
        }
        Ok(AggregatePlan {
            offsets,
            sources,
            aggregators: aggregators.to_vec(),
            scalers: scalers.to_vec(),
            scale_values,
            edge_fn,
        })
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn neighbours(&self, i: usize) -> &[u32] {
        &self.sources[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn output_width(&self, feature_width: usize) -> usize {
        self.aggregators.len() * self.scalers.len() * self.edge_fn.message_width(feature_width)
    }

    fn has(&self, a: Aggregator) -> bool {
        self.aggregators.contains(&a)
    }

    pub(crate) fn forward(&self, x: &[f64], f: usize) -> (Vec<f64>, AggregateSaved) {
        let n = self.node_count();
        let msg_w = self.edge_fn.message_width(f);
        let width = self.output_width(f);
        let ns = self.scalers.len();
        let mut out = vec![0.0; n * width];
        let mut saved = AggregateSaved::default();
        if self.has(Aggregator::Max) {
            saved.argmax = vec![0; n * f];
        }
        if self.has(Aggregator::Min) {
            saved.argmin = vec![0; n * f];
        }
        let need_std = self.has(Aggregator::Std);
        if need_std {
            saved.mean = vec![0.0; n * f];
            saved.std = vec![0.0; n * f];
        }

        let mut mx = vec![0.0; f];
        let mut mn = vec![0.0; f];
        let mut mean = vec![0.0; f];
        let mut sd = vec![0.0; f];
        for i in 0..n {
            let xi = &x[i * f..(i + 1) * f];
            let nbrs = self.neighbours(i);
            let deg = nbrs.len() as f64;
            let first = nbrs[0] as usize;
            mx.copy_from_slice(&x[first * f..(first + 1) * f]);
            mn.copy_from_slice(&x[first * f..(first + 1) * f]);
            mean.iter_mut().for_each(|v| *v = 0.0);
            let base = i * f;
            if !saved.argmax.is_empty() {
                saved.argmax[base..base + f].iter_mut().for_each(|a| *a = first as u32);
            }
            if !saved.argmin.is_empty() {
                saved.argmin[base..base + f].iter_mut().for_each(|a| *a = first as u32);
            }
            for (e, &j) in nbrs.iter().enumerate() {
                let xj = &x[j as usize * f..(j as usize + 1) * f];
                for d in 0..f {
                    let v = xj[d];
                    mean[d] += v;
                    if e > 0 {
                        // strict comparisons keep the first occurrence in edge order
                        if v > mx[d] {
                            mx[d] = v;
                            if !saved.argmax.is_empty() {
                                saved.argmax[base + d] = j;
                            }
                        }
                        if v < mn[d] {
                            mn[d] = v;
                            if !saved.argmin.is_empty() {
                                saved.argmin[base + d] = j;
                            }
                        }
                    }
                }
            }
            mean.iter_mut().for_each(|v| *v /= deg);
            if need_std {
                sd.iter_mut().for_each(|v| *v = 0.0);
                for &j in nbrs {
                    let xj = &x[j as usize * f..(j as usize + 1) * f];
                    for d in 0..f {
                        let c = xj[d] - mean[d];
                        sd[d] += c * c;
                    }
                }
                sd.iter_mut().for_each(|v| *v = (*v / deg).sqrt());
                // identical values must give exactly zero, not rounding noise
                // that the backward pass would divide by
                let x0 = &x[first * f..(first + 1) * f];
                for d in 0..f {
                    if nbrs.iter().all(|&j| x[j as usize * f + d] == x0[d]) {
                        sd[d] = 0.0;
                    }
                }
                saved.mean[base..base + f].copy_from_slice(&mean);
                saved.std[base..base + f].copy_from_slice(&sd);
            }

            let row = &mut out[i * width..(i + 1) * width];
            let scales = &self.scale_values[i * ns..(i + 1) * ns];
            let mut off = 0;
            for &a in &self.aggregators {
                for &s in scales {
                    let block = &mut row[off..off + msg_w];
                    let (top, bottom) = match self.edge_fn {
                        EdgeFn::Asymmetric => block.split_at_mut(f),
                        EdgeFn::Difference => block.split_at_mut(0),
                    };
                    // max/min/mean of x_j - x_i shift by x_i; std is shift-free
                    match a {
                        Aggregator::Max => fill(bottom, &mx, xi, s),
                        Aggregator::Min => fill(bottom, &mn, xi, s),
                        Aggregator::Mean => fill(bottom, &mean, xi, s),
                        Aggregator::Std => bottom.iter_mut().zip(&sd).for_each(|(o, v)| *o = v * s),
                    }
                    if !top.is_empty() && a != Aggregator::Std {
                        top.iter_mut().zip(xi).for_each(|(o, v)| *o = v * s);
                    }
                    off += msg_w;
                }
            }
        }
        (out, saved)
    }

    pub(crate) fn backward(&self, x: &[f64], f: usize, saved: &AggregateSaved, g: &[f64], dx: &mut [f64]) {
        let n = self.node_count();
        let msg_w = self.edge_fn.message_width(f);
        let width = self.output_width(f);
        let ns = self.scalers.len();
        let top_w = msg_w - f;
        let mut gtop = vec![0.0; f];
        let mut gbot = vec![0.0; f];
        for i in 0..n {
            let row = &g[i * width..(i + 1) * width];
            let scales = &self.scale_values[i * ns..(i + 1) * ns];
            let nbrs = self.neighbours(i);
            let deg = nbrs.len() as f64;
            let base = i * f;
            for (ai, &a) in self.aggregators.iter().enumerate() {
                gtop.iter_mut().for_each(|v| *v = 0.0);
                gbot.iter_mut().for_each(|v| *v = 0.0);
                for (si, &s) in scales.iter().enumerate() {
                    let block = &row[(ai * ns + si) * msg_w..(ai * ns + si + 1) * msg_w];
                    if top_w > 0 {
                        gtop.iter_mut().zip(&block[..f]).for_each(|(t, b)| *t += s * b);
                    }
                    gbot.iter_mut().zip(&block[top_w..]).for_each(|(t, b)| *t += s * b);
                }
                if top_w > 0 && a != Aggregator::Std {
                    dx[base..base + f].iter_mut().zip(&gtop).for_each(|(d, t)| *d += t);
                }
                match a {
                    Aggregator::Max | Aggregator::Min => {
                        let arg = if a == Aggregator::Max { &saved.argmax } else { &saved.argmin };
                        for d in 0..f {
                            let j = arg[base + d] as usize;
                            dx[j * f + d] += gbot[d];
                            dx[base + d] -= gbot[d];
                        }
                    }
                    Aggregator::Mean => {
                        for &j in nbrs {
                            let j = j as usize;
                            for d in 0..f {
                                dx[j * f + d] += gbot[d] / deg;
                            }
                        }
                        for d in 0..f {
                            dx[base + d] -= gbot[d];
                        }
                    }
                    Aggregator::Std => {
                        let mean = &saved.mean[base..base + f];
                        let sd = &saved.std[base..base + f];
                        for &j in nbrs {
                            let j = j as usize;
                            for d in 0..f {
                                if sd[d] > 0.0 {
                                    dx[j * f + d] += gbot[d] * (x[j * f + d] - mean[d]) / (deg * sd[d]);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn fill(out: &mut [f64], agg: &[f64], xi: &[f64], s: f64) {
    for ((o, a), c) in out.iter_mut().zip(agg).zip(xi) {
        *o = (a - c) * s;
    }
}
