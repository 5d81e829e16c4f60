//! Meshes, skeletons, rig assets and the distance queries built on them.

pub mod io;
pub mod voxel;

use std::collections::HashMap;

use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

impl Mesh {
    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if let Some((i, f)) = self.faces.iter().enumerate().find(|(_, f)| f.iter().any(|&v| v as usize >= n)) {
            return Err(Error::Asset(format!("face {i} {f:?} references a vertex beyond {n}")));
        }
        if let Some(i) = self.vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::Asset(format!("vertex {i} has a non-finite coordinate")));
        }
        Ok(())
    }

    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        bounds(&self.vertices)
    }
}

pub fn bounds(points: &[Vec3]) -> Option<(Vec3, Vec3)> {
    let first = *points.first()?;
    Some(points.iter().fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub position: Vec3,
    pub parent: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bone {
    /// Parent-side joint; the rotation centre that moves the bone.
    pub root: usize,
    pub child: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Skeleton {
    pub joints: Vec<Joint>,
}

impl Skeleton {
    /// Checks for a single root, valid parent indices, acyclicity and unique names.
    pub fn validate(&self) -> Result<()> {
        let n = self.joints.len();
        if n == 0 {
            return Err(Error::Asset("skeleton has no joints".into()));
        }
        let roots: Vec<&str> = self.joints.iter().filter(|j| j.parent.is_none()).map(|j| j.name.as_str()).collect();
        if roots.len() != 1 {
            return Err(Error::Asset(format!("skeleton must have exactly one root, found {roots:?}")));
        }
        let mut names = HashMap::new();
        for (i, j) in self.joints.iter().enumerate() {
            if let Some(prev) = names.insert(j.name.as_str(), i) {
                return Err(Error::Asset(format!("joint name `{}` used by joints {prev} and {i}", j.name)));
            }
            if let Some(p) = j.parent {
                if p >= n || p == i {
                    return Err(Error::Asset(format!("joint `{}` has invalid parent index {p}", j.name)));
                }
            }
            if !j.position.iter().all(|c| c.is_finite()) {
                return Err(Error::Asset(format!("joint `{}` has a non-finite position", j.name)));
            }
        }
        for start in 0..n {
            let mut cur = self.joints[start].parent;
            let mut steps = 0;
            while let Some(p) = cur {
                steps += 1;
                if steps > n {
                    return Err(Error::Asset(format!("cyclic hierarchy through joint `{}`", self.joints[start].name)));
                }
                cur = self.joints[p].parent;
            }
        }
        Ok(())
    }

    pub fn root(&self) -> Option<usize> {
        self.joints.iter().position(|j| j.parent.is_none())
    }

    /// One bone per non-root joint, in joint order.
    pub fn bones(&self) -> Vec<Bone> {
        self.joints
            .iter()
            .enumerate()
            .filter_map(|(c, j)| j.parent.map(|p| Bone { root: p, child: c }))
            .collect()
    }

    pub fn children(&self, joint: usize) -> impl Iterator<Item = usize> + '_ {
        self.joints.iter().enumerate().filter(move |(_, j)| j.parent == Some(joint)).map(|(i, _)| i)
    }

    pub fn is_end_joint(&self, joint: usize) -> bool {
        self.children(joint).next().is_none()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// Joint indices ordered so every parent precedes its children.
    pub fn topological_order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.joints.len());
        let mut stack: Vec<usize> = self.root().into_iter().collect();
        while let Some(j) = stack.pop() {
            order.push(j);
            let mut kids: Vec<usize> = self.children(j).collect();
            kids.reverse();
            stack.extend(kids);
        }
        order
    }
}

/// Dense per-vertex weights over all joints, row-major `[vertex][joint]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SkinWeights {
    pub joint_count: usize,
    pub data: Vec<f64>,
}

impl SkinWeights {
    pub fn zeros(vertex_count: usize, joint_count: usize) -> Self {
        SkinWeights { joint_count, data: vec![0.0; vertex_count * joint_count] }
    }

    pub fn vertex_count(&self) -> usize {
        if self.joint_count == 0 {
            0
        } else {
            self.data.len() / self.joint_count
        }
    }

    pub fn row(&self, v: usize) -> &[f64] {
        &self.data[v * self.joint_count..(v + 1) * self.joint_count]
    }

    pub fn row_mut(&mut self, v: usize) -> &mut [f64] {
        &mut self.data[v * self.joint_count..(v + 1) * self.joint_count]
    }

    /// Rescales every row with positive mass to sum to one. Rows already
    /// within rounding of one are left untouched, so reading back written
    /// weights is a fixpoint.
    pub fn normalize_rows(&mut self) {
        for v in 0..self.vertex_count() {
            let row = self.row_mut(v);
            let s: f64 = row.iter().sum();
            if s > 0.0 && (s - 1.0).abs() > 1e-12 {
                row.iter_mut().for_each(|w| *w /= s);
            }
        }
    }
}

/// Similarity transform `p' = (p - center) * scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizeTransform {
    pub center: [f64; 3],
    pub scale: f64,
}

impl NormalizeTransform {
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        (p - Vec3::from(self.center)) * self.scale
    }

    pub fn invert(&self, p: &Vec3) -> Vec3 {
        p / self.scale + Vec3::from(self.center)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RigAsset {
    pub name: String,
    pub mesh: Mesh,
    pub skeleton: Skeleton,
    pub weights: Option<SkinWeights>,
    /// Transform applied by [`normalize`]; identity scale 1 when never normalized.
    pub transform: Option<NormalizeTransform>,
}

impl RigAsset {
    pub fn validate(&self) -> Result<()> {
        self.mesh.validate()?;
        self.skeleton.validate()?;
        if let Some(w) = &self.weights {
            if w.joint_count != self.skeleton.joints.len() || w.vertex_count() != self.mesh.vertices.len() {
                return Err(Error::Asset(format!(
                    "weights are {}x{}, asset has {} vertices and {} joints",
                    w.vertex_count(),
                    w.joint_count,
                    self.mesh.vertices.len(),
                    self.skeleton.joints.len()
                )));
            }
            if let Some(i) = w.data.iter().position(|&x| x < 0.0 || !x.is_finite()) {
                return Err(Error::Asset(format!(
                    "negative or non-finite weight at vertex {}",
                    i / w.joint_count
                )));
            }
        }
        Ok(())
    }
}

/// Maps the mesh bounding box into [-1,1]³ with a uniform scale, centred at
/// the origin; joints get the same transform.
pub fn normalize(asset: &RigAsset) -> Result<RigAsset> {
    let (lo, hi) = asset.mesh.bounds().ok_or_else(|| Error::Geometry("cannot normalize an empty mesh".into()))?;
    let extent = (hi - lo).max();
    if !(extent > 0.0) {
        return Err(Error::Geometry("mesh bounding box has zero extent".into()));
    }
    let t = NormalizeTransform { center: ((lo + hi) * 0.5).into(), scale: 2.0 / extent };
    let mut out = asset.clone();
    out.mesh.vertices.iter_mut().for_each(|v| *v = t.apply(v));
    out.skeleton.joints.iter_mut().for_each(|j| j.position = t.apply(&j.position));
    out.transform = Some(match asset.transform {
        // compose with any earlier normalization so the inverse maps to the source frame
        Some(prev) => NormalizeTransform {
            center: prev.invert(&Vec3::from(t.center)).into(),
            scale: prev.scale * t.scale,
        },
        None => t,
    });
    Ok(out)
}

/// Euclidean distance from `p` to the closed segment `[a, b]`.
pub fn point_segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    // Clamped feet are returned exactly so bones meeting at a joint tie exactly.
    let t = (p - a).dot(&ab) / len2;
    if t <= 0.0 {
        (p - a).norm()
    } else if t >= 1.0 {
        (p - b).norm()
    } else {
        (p - (a + ab * t)).norm()
    }
}

/// For each point, up to `max_n` neighbours sampled uniformly (without
/// replacement) from the points strictly within `r`. Edges run
/// neighbour → centre and are sorted per centre.
pub fn radius_neighbours(points: &[Vec3], r: f64, max_n: usize, seed: u64) -> Result<Vec<(u32, u32)>> {
    if !(r > 0.0) || max_n == 0 {
        return Err(Error::Config(format!("radius_neighbours needs r > 0 and max_n >= 1 (got {r}, {max_n})")));
    }
    let cell = |p: &Vec3| -> [i64; 3] { [(p.x / r).floor() as i64, (p.y / r).floor() as i64, (p.z / r).floor() as i64] };
    let mut grid: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(cell(p)).or_default().push(i as u32);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    let mut cand = Vec::new();
    for (i, p) in points.iter().enumerate() {
        cand.clear();
        let c = cell(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        cand.extend(bucket.iter().copied().filter(|&j| j as usize != i && (points[j as usize] - p).norm() < r));
                    }
                }
            }
        }
        cand.sort_unstable();
        let take = cand.len().min(max_n);
        let mut picked: Vec<u32> = if take == cand.len() {
            cand.clone()
        } else {
            sample(&mut rng, cand.len(), take).into_iter().map(|k| cand[k]).collect()
        };
        picked.sort_unstable();
        edges.extend(picked.into_iter().map(|j| (j, i as u32)));
    }
    Ok(edges)
}
