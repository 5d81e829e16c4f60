//! Synthetic rigged tubes: closed tubes extruded along random joint chains,
//! with ground-truth weights given by a softmax over the distances to the two
//! nearest bones.

use std::f64::consts::PI;

use nalgebra::{Rotation3, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize, point_segment_distance, Joint, Mesh, RigAsset, Skeleton, SkinWeights, Vec3};

const SLICES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// One open chain per asset.
    #[default]
    Tube,
    /// Two or three chains from a shared root and uneven ring spacing, so
    /// node degrees vary inside every graph.
    Branching,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRigSpec {
    pub count: usize,
    /// Joints per chain, inclusive.
    pub joints: (usize, usize),
    pub bone_length: (f64, f64),
    pub radius: (f64, f64),
    /// Target vertices per asset, inclusive.
    pub vertices: (usize, usize),
    pub max_bend_deg: f64,
    /// Softmax temperature in normalized units.
    pub temperature: f64,
    pub kind: SyntheticKind,
    pub seed: u64,
}

impl Default for SyntheticRigSpec {
    fn default() -> Self {
        SyntheticRigSpec {
            count: 32,
            joints: (3, 6),
            bone_length: (0.3, 0.6),
            radius: (0.06, 0.1),
            vertices: (300, 800),
            max_bend_deg: 35.0,
            temperature: 0.05,
            kind: SyntheticKind::Tube,
            seed: 7,
        }
    }
}

impl SyntheticRigSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.count > 0
            && self.joints.0 >= 2
            && self.joints.0 <= self.joints.1
            && self.bone_length.0 > 0.0
            && self.bone_length.0 <= self.bone_length.1
            && self.radius.0 > 0.0
            && self.radius.0 <= self.radius.1
            && self.vertices.0 >= 3 * SLICES + 2
            && self.vertices.0 <= self.vertices.1
            && (0.0..=90.0).contains(&self.max_bend_deg)
            && self.temperature > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid synthetic spec {self:?}")))
        }
    }
}

pub fn generate_synthetic(spec: &SyntheticRigSpec) -> Result<Vec<RigAsset>> {
    spec.validate()?;
    (0..spec.count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64 + 1);
            generate_one(spec, &format!("{}_{i:03}", kind_prefix(spec.kind)), &mut rng)
        })
        .collect()
}

fn kind_prefix(kind: SyntheticKind) -> &'static str {
    match kind {
        SyntheticKind::Tube => "tube",
        SyntheticKind::Branching => "branch",
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

fn any_perpendicular(t: &Vec3) -> Vec3 {
    let helper = if t.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    t.cross(&helper).normalize()
}

/// Joint positions of one chain starting at `start` heading roughly along `dir`.
fn chain(spec: &SyntheticRigSpec, start: Vec3, dir: Vec3, joints: usize, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    let mut pts = vec![start];
    let mut d = dir;
    for b in 0..joints - 1 {
        if b > 0 {
            let bend = rng.gen_range(0.0..=spec.max_bend_deg).to_radians();
            let axis = Unit::new_normalize(d.cross(&random_unit(rng)).try_normalize(1e-9).unwrap_or_else(|| any_perpendicular(&d)));
            d = Rotation3::from_axis_angle(&axis, bend) * d;
        }
        let len = rng.gen_range(spec.bone_length.0..=spec.bone_length.1);
        pts.push(pts[b] + d * len);
    }
    pts
}

/// Point at arc length `s` along a polyline.
fn along(poly: &[Vec3], cum: &[f64], s: f64) -> Vec3 {
    let s = s.clamp(0.0, *cum.last().unwrap());
    let seg = cum.windows(2).position(|w| s <= w[1]).unwrap_or(cum.len() - 2);
    let t = if cum[seg + 1] > cum[seg] { (s - cum[seg]) / (cum[seg + 1] - cum[seg]) } else { 0.0 };
    poly[seg] + (poly[seg + 1] - poly[seg]) * t
}

/// Closed tube around `poly`: rings of `SLICES` vertices at the given arc
/// lengths plus two cap centres. Appends to `mesh`.
fn tube(mesh: &mut Mesh, poly: &[Vec3], radius: f64, stations: &[f64]) {
    let mut cum = vec![0.0];
    for w in poly.windows(2) {
        cum.push(cum.last().unwrap() + (w[1] - w[0]).norm());
    }
    let base = mesh.vertices.len() as u32;
    let mut normal: Option<Vec3> = None;
    for &s in stations {
        let t = (along(poly, &cum, s + radius) - along(poly, &cum, s - radius)).normalize();
        let n = match normal {
            None => any_perpendicular(&t),
            Some(prev) => (prev - t * prev.dot(&t)).try_normalize(1e-9).unwrap_or_else(|| any_perpendicular(&t)),
        };
        normal = Some(n);
        let b = t.cross(&n);
        let c = along(poly, &cum, s);
        for k in 0..SLICES {
            let a = 2.0 * PI * k as f64 / SLICES as f64;
            mesh.vertices.push(c + (n * a.cos() + b * a.sin()) * radius);
        }
    }
    let rings = stations.len() as u32;
    let sl = SLICES as u32;
    let idx = |r: u32, k: u32| base + r * sl + k % sl;
    for r in 0..rings - 1 {
        for k in 0..sl {
            mesh.faces.push([idx(r, k), idx(r + 1, k), idx(r + 1, k + 1)]);
            mesh.faces.push([idx(r, k), idx(r + 1, k + 1), idx(r, k + 1)]);
        }
    }
    let start = mesh.vertices.len() as u32;
    mesh.vertices.push(poly[0]);
    mesh.vertices.push(*poly.last().unwrap());
    for k in 0..sl {
        mesh.faces.push([start, idx(0, k + 1), idx(0, k)]);
        mesh.faces.push([start + 1, idx(rings - 1, k), idx(rings - 1, k + 1)]);
    }
}

fn stations(length: f64, rings: usize, uneven: bool, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut s: Vec<f64> = (0..rings).map(|i| length * i as f64 / (rings - 1) as f64).collect();
    if uneven {
        // warp spacing so rings bunch up in some places and thin out in others
        let phase = rng.gen_range(0.0..2.0 * PI);
        let amp = rng.gen_range(0.3..0.6);
        for x in s.iter_mut() {
            let u = *x / length;
            *x = length * (u + amp / (2.0 * PI) * ((2.0 * PI * u + phase).sin() - phase.sin())).clamp(0.0, 1.0);
        }
        s.sort_by(f64::total_cmp);
    }
    s
}

fn generate_one(spec: &SyntheticRigSpec, name: &str, rng: &mut ChaCha8Rng) -> Result<RigAsset> {
    let branches = match spec.kind {
        SyntheticKind::Tube => 1,
        SyntheticKind::Branching => rng.gen_range(2..=3),
    };
    let radius = rng.gen_range(spec.radius.0..=spec.radius.1);
    let target_vertices = rng.gen_range(spec.vertices.0..=spec.vertices.1);
    let per_branch = target_vertices / branches;
    let uneven = spec.kind == SyntheticKind::Branching;

    let mut joints = vec![Joint { name: "root".into(), position: Vec3::zeros(), parent: None }];
    let mut mesh = Mesh::default();
    let first_dir = random_unit(rng);
    for b in 0..branches {
        let n = rng.gen_range(spec.joints.0..=spec.joints.1);
        let dir = if b == 0 {
            first_dir
        } else {
            let axis = Unit::new_normalize(any_perpendicular(&first_dir));
            Rotation3::from_axis_angle(&axis, 2.0 * PI * b as f64 / branches as f64) * first_dir
        };
        let pts = chain(spec, Vec3::zeros(), dir, n, rng);
        let mut parent = 0;
        for (i, p) in pts.iter().enumerate().skip(1) {
            let name = if branches == 1 { format!("j{i}") } else { format!("b{b}_j{i}") };
            joints.push(Joint { name, position: *p, parent: Some(parent) });
            parent = joints.len() - 1;
        }
        let length: f64 = pts.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
        let rings = ((per_branch.saturating_sub(2)) / SLICES).max(3);
        let st = stations(length, rings, uneven, rng);
        tube(&mut mesh, &pts, radius, &st);
    }

    let raw = RigAsset { name: name.to_string(), mesh, skeleton: Skeleton { joints }, weights: None, transform: None };
    raw.validate()?;
    let mut asset = normalize(&raw)?;
    asset.weights = Some(distance_softmax_weights(&asset, spec.temperature));
    Ok(asset)
}

/// Softmax of `-d / temperature` over the two nearest bones (ties by bone
/// index), credited to each bone's parent-side joint.
pub fn distance_softmax_weights(asset: &RigAsset, temperature: f64) -> SkinWeights {
    let bones = asset.skeleton.bones();
    let joints = &asset.skeleton.joints;
    let mut w = SkinWeights::zeros(asset.mesh.vertices.len(), joints.len());
    for (v, p) in asset.mesh.vertices.iter().enumerate() {
        let mut d: Vec<(f64, usize)> = bones
            .iter()
            .enumerate()
            .map(|(i, b)| (point_segment_distance(p, &joints[b.root].position, &joints[b.child].position), i))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let near = &d[..d.len().min(2)];
        let dmin = near[0].0;
        let e: Vec<f64> = near.iter().map(|(x, _)| (-(x - dmin) / temperature).exp()).collect();
        let z: f64 = e.iter().sum();
        let row = w.row_mut(v);
        for ((_, b), e) in near.iter().zip(e) {
            row[bones[*b].root] += e / z;
        }
    }
    w
}
