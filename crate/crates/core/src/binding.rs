//! Skin binding: the k candidate joints of each vertex, the three graphs built
//! from an asset, and the packed input attributes.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::voxel::{self, VoxelGrid};
use crate::geometry::{point_segment_distance, radius_neighbours, RigAsset, Skeleton, SkinWeights, Vec3};
use crate::graph::{Graph, NeighbourhoodKind, NodeKind};
use crate::tensor::Tensor;

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_RADIUS: f64 = 0.06;
pub const DEFAULT_MAX_NEIGHBOURS: usize = 10;
/// Distance, bone start, bone end, end-joint flag.
pub const SLOT_WIDTH: usize = 8;

pub fn mesh_feature_width(k: usize) -> usize {
    3 + SLOT_WIDTH * k
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BindingMode {
    /// k unique root joints of the nearest bones.
    #[default]
    Joint,
    /// k nearest bones, each represented by its root joint.
    Bone,
}

impl FromStr for BindingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(BindingMode::Joint),
            "bone" => Ok(BindingMode::Bone),
            _ => Err(Error::Config(format!("unknown binding mode `{s}` (expected joint|bone)"))),
        }
    }
}

impl fmt::Display for BindingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BindingMode::Joint => "joint",
            BindingMode::Bone => "bone",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMode {
    #[default]
    Geodesic,
    Euclidean,
}

impl FromStr for DistanceMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geodesic" => Ok(DistanceMode::Geodesic),
            "euclidean" => Ok(DistanceMode::Euclidean),
            _ => Err(Error::Config(format!("unknown distance mode `{s}` (expected geodesic|euclidean)"))),
        }
    }
}

impl fmt::Display for DistanceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistanceMode::Geodesic => "geodesic",
            DistanceMode::Euclidean => "euclidean",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub joint: usize,
    /// Index into `Skeleton::bones()` of the bone that introduced the joint.
    pub bone: usize,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BindingTable {
    pub k: usize,
    pub mode: BindingMode,
    /// `[vertex][slot]`
    pub slots: Vec<Slot>,
}

impl BindingTable {
    pub fn vertex_count(&self) -> usize {
        self.slots.len() / self.k
    }

    pub fn row(&self, v: usize) -> &[Slot] {
        &self.slots[v * self.k..(v + 1) * self.k]
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        self.slots.iter().map(|s| s.valid).collect()
    }

    fn check(&self, skeleton: &Skeleton, vertex_count: usize) -> Result<()> {
        let bones = skeleton.bones().len();
        if self.k == 0 || self.slots.len() != vertex_count * self.k {
            return Err(Error::Binding(format!(
                "table has {} slots, expected {vertex_count} vertices x k={}",
                self.slots.len(),
                self.k
            )));
        }
        if let Some(i) = self.slots.iter().position(|s| s.joint >= skeleton.joints.len() || s.bone >= bones) {
            return Err(Error::Binding(format!("slot {} of vertex {} references a missing joint or bone", i % self.k, i / self.k)));
        }
        Ok(())
    }
}

/// Binding row for one point: bones sorted by distance (ties by bone index),
/// mapped to their parent-side joints.
pub fn select_k_unique_joints(skeleton: &Skeleton, p: &Vec3, k: usize, mode: BindingMode) -> Result<Vec<Slot>> {
    let bones = skeleton.bones();
    if bones.is_empty() {
        return Err(Error::Binding("skeleton has no bones".into()));
    }
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let mut order: Vec<(f64, usize)> = bones
        .iter()
        .enumerate()
        .map(|(b, bone)| {
            let (a, c) = (&skeleton.joints[bone.root].position, &skeleton.joints[bone.child].position);
            (point_segment_distance(p, a, c), b)
        })
        .collect();
    order.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));

    let mut slots = Vec::with_capacity(k);
    for &(_, b) in &order {
        if slots.len() == k {
            break;
        }
        let joint = bones[b].root;
        if mode == BindingMode::Joint && slots.iter().any(|s: &Slot| s.joint == joint) {
            continue;
        }
        slots.push(Slot { joint, bone: b, valid: true });
    }
    let pad = Slot { valid: false, ..slots[0] };
    slots.resize(k, pad);
    Ok(slots)
}

pub fn bind(asset: &RigAsset, k: usize, mode: BindingMode) -> Result<BindingTable> {
    let mut slots = Vec::with_capacity(asset.mesh.vertices.len() * k);
    for p in &asset.mesh.vertices {
        slots.extend(select_k_unique_joints(&asset.skeleton, p, k, mode)?);
    }
    Ok(BindingTable { k, mode, slots })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphParams {
    pub radius: f64,
    pub max_neighbours: usize,
}

impl Default for GraphParams {
    fn default() -> Self {
        GraphParams { radius: DEFAULT_RADIUS, max_neighbours: DEFAULT_MAX_NEIGHBOURS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetGraphs {
    /// `mesh_topology` and `mesh_radius` edges over the vertices.
    pub mesh: Graph,
    pub skeleton: Graph,
    /// Vertices `0..V` followed by joints `V..V+J`, joined by binding edges.
    pub mesh_skel: Graph,
}

pub fn build_graphs(asset: &RigAsset, table: &BindingTable, params: GraphParams, seed: u64) -> Result<AssetGraphs> {
    let v = asset.mesh.vertices.len();
    let j = asset.skeleton.joints.len();
    table.check(&asset.skeleton, v)?;

    let mut mesh = Graph::new(vec![NodeKind::MeshVertex; v]);
    let mut face_edges = BTreeSet::new();
    for f in &asset.mesh.faces {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            if a != b {
                face_edges.insert((a, b));
                face_edges.insert((b, a));
            }
        }
    }
    mesh.set_edges(NeighbourhoodKind::MeshTopology, face_edges.into_iter().collect())?;
    let radius = radius_neighbours(&asset.mesh.vertices, params.radius, params.max_neighbours, seed)?;
    mesh.set_edges(NeighbourhoodKind::MeshRadius, radius)?;
    mesh.add_self_loops_for_isolated(NeighbourhoodKind::MeshTopology);
    mesh.add_self_loops_for_isolated(NeighbourhoodKind::MeshRadius);

    let mut skeleton = Graph::new(vec![NodeKind::SkeletonJoint; j]);
    let mut bone_edges = Vec::new();
    for b in asset.skeleton.bones() {
        bone_edges.push((b.root as u32, b.child as u32));
        bone_edges.push((b.child as u32, b.root as u32));
    }
    skeleton.set_edges(NeighbourhoodKind::SkeletonTopology, bone_edges)?;
    skeleton.add_self_loops_for_isolated(NeighbourhoodKind::SkeletonTopology);

    let mut kinds = vec![NodeKind::MeshVertex; v];
    kinds.extend(std::iter::repeat(NodeKind::SkeletonJoint).take(j));
    let mut mesh_skel = Graph::new(kinds);
    let mut bind_edges = Vec::new();
    for vi in 0..v {
        let mut seen = Vec::with_capacity(table.k);
        for s in table.row(vi).iter().filter(|s| s.valid) {
            if seen.contains(&s.joint) {
                continue;
            }
            seen.push(s.joint);
            let ji = (v + s.joint) as u32;
            bind_edges.push((vi as u32, ji));
            bind_edges.push((ji, vi as u32));
        }
    }
    mesh_skel.set_edges(NeighbourhoodKind::Binding, bind_edges)?;
    mesh_skel.add_self_loops_for_isolated(NeighbourhoodKind::Binding);

    Ok(AssetGraphs { mesh, skeleton, mesh_skel })
}

/// Vertex-to-bound-joint distances, `[vertex][slot]`; padding slots repeat slot 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceTable {
    pub mode: DistanceMode,
    pub k: usize,
    pub values: Vec<f64>,
    /// Pairs with no interior path, measured as Euclidean instead.
    pub fallback_count: usize,
}

pub fn distance_table(asset: &RigAsset, table: &BindingTable, mode: DistanceMode, resolution: usize) -> Result<DistanceTable> {
    let verts = &asset.mesh.vertices;
    table.check(&asset.skeleton, verts.len())?;
    let k = table.k;
    let mut values = vec![f64::NAN; table.slots.len()];
    let mut fallback_count = 0;

    let mut by_joint: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, s) in table.slots.iter().enumerate() {
        if s.valid {
            by_joint.entry(s.joint).or_default().push(i);
        }
    }
    let grid: Option<VoxelGrid> = match mode {
        DistanceMode::Geodesic => Some(voxel::voxelize(&asset.mesh, resolution)?),
        DistanceMode::Euclidean => None,
    };
    let mut joints: Vec<usize> = by_joint.keys().copied().collect();
    joints.sort_unstable();
    for joint in joints {
        let q = asset.skeleton.joints[joint].position;
        let field = grid.as_ref().map(|g| g.distance_field(&q)).transpose();
        let field = match field {
            Ok(f) => f,
            // joint outside the grid: no interior path to anything
            Err(Error::Geometry(_)) => None,
            Err(e) => return Err(e),
        };
        for &i in &by_joint[&joint] {
            let p = &verts[i / k];
            values[i] = match (&grid, &field) {
                (Some(g), Some(f)) => {
                    let d = f.distance_to(g, p)?;
                    fallback_count += d.fallback as usize;
                    d.distance
                }
                (Some(_), None) => {
                    fallback_count += 1;
                    (p - q).norm()
                }
                _ => (p - q).norm(),
            };
        }
    }
    for vi in 0..table.vertex_count() {
        let first = values[vi * k];
        for (s, slot) in table.row(vi).iter().enumerate() {
            if !slot.valid {
                values[vi * k + s] = first;
            }
        }
    }
    Ok(DistanceTable { mode, k, values, fallback_count })
}

/// Mesh attributes `[V, 3 + 8k]` and skeleton attributes `[J, 3]`.
pub fn assemble_features(asset: &RigAsset, table: &BindingTable, distances: &DistanceTable) -> Result<(Tensor, Tensor)> {
    let v = asset.mesh.vertices.len();
    table.check(&asset.skeleton, v)?;
    let k = table.k;
    if distances.k != k || distances.values.len() != table.slots.len() {
        return Err(Error::Binding("distance table does not match the binding table".into()));
    }
    if let Some(i) = distances.values.iter().position(|d| !d.is_finite()) {
        return Err(Error::Binding(format!("missing distance for vertex {} slot {}", i / k, i % k)));
    }
    let bones = asset.skeleton.bones();
    let joints = &asset.skeleton.joints;
    let width = mesh_feature_width(k);
    let mut mesh = Vec::with_capacity(v * width);
    for (vi, p) in asset.mesh.vertices.iter().enumerate() {
        mesh.extend_from_slice(p.as_slice());
        let row = table.row(vi);
        for (s, slot) in row.iter().enumerate() {
            // padding replicates slot 0 with its distance
            let src = if slot.valid { slot } else { &row[0] };
            let bone = bones[src.bone];
            mesh.push(distances.values[vi * k + s]);
            mesh.extend_from_slice(joints[bone.root].position.as_slice());
            mesh.extend_from_slice(joints[bone.child].position.as_slice());
            mesh.push(if asset.skeleton.is_end_joint(src.joint) { 1.0 } else { 0.0 });
        }
    }
    let skel: Vec<f64> = joints.iter().flat_map(|j| j.position.iter().copied()).collect();
    Ok((Tensor::matrix(v, width, mesh)?, Tensor::matrix(joints.len(), 3, skel)?))
}

/// Ground-truth distributions over the binding slots and the per-slot loss
/// mask. Vertices whose bound joints carry no ground-truth mass are masked
/// out entirely. A joint bound through several slots (bone mode) has its
/// weight split evenly between them.
pub fn target_distributions(table: &BindingTable, weights: &SkinWeights) -> Result<(Vec<f64>, Vec<f64>)> {
    if weights.vertex_count() != table.vertex_count() {
        return Err(Error::Binding(format!(
            "weights cover {} vertices, binding has {}",
            weights.vertex_count(),
            table.vertex_count()
        )));
    }
    let k = table.k;
    let mut target = vec![0.0; table.slots.len()];
    let mut mask = vec![0.0; table.slots.len()];
    for vi in 0..table.vertex_count() {
        let row = table.row(vi);
        let gt = weights.row(vi);
        for (s, slot) in row.iter().enumerate() {
            if slot.valid {
                let share = row.iter().filter(|o| o.valid && o.joint == slot.joint).count() as f64;
                target[vi * k + s] = gt.get(slot.joint).copied().unwrap_or(0.0) / share;
            }
        }
        let total: f64 = target[vi * k..(vi + 1) * k].iter().sum();
        if total > 0.0 {
            for (s, slot) in row.iter().enumerate() {
                target[vi * k + s] /= total;
                mask[vi * k + s] = if slot.valid { 1.0 } else { 0.0 };
            }
        }
    }
    Ok((target, mask))
}

/// Folds slot probabilities back onto the full joint set.
pub fn to_joint_weights(table: &BindingTable, probs: &[f64], joint_count: usize) -> Result<SkinWeights> {
    if probs.len() != table.slots.len() {
        return Err(Error::Binding(format!("{} probabilities for {} slots", probs.len(), table.slots.len())));
    }
    let mut w = SkinWeights::zeros(table.vertex_count(), joint_count);
    for (i, (slot, &p)) in table.slots.iter().zip(probs).enumerate() {
        if slot.valid {
            w.row_mut(i / table.k)[slot.joint] += p;
        }
    }
    Ok(w)
}
