//! Forward kinematics, linear blend skinning, random poses and the
//! deformation-based evaluation metrics.

use nalgebra::{Matrix4, Rotation3, Translation3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{RigAsset, Skeleton, SkinWeights, Vec3};

pub const DEFAULT_POSES: usize = 10;
pub const DEFAULT_RANGE_DEG: f64 = 10.0;
pub const INFLUENCE_THRESHOLD: f64 = 1e-4;
const ROW_SUM_TOLERANCE: f64 = 1e-4;

pub type Mat4 = Matrix4<f64>;

/// Per-joint Euler angles in degrees, applied as `Rx · Ry · Rz` in the joint's
/// local frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub euler_deg: Vec<[f64; 3]>,
    pub seed: Option<u64>,
}

impl Pose {
    pub fn identity(joint_count: usize) -> Self {
        Pose { euler_deg: vec![[0.0; 3]; joint_count], seed: None }
    }
}

pub fn euler_xyz(deg: [f64; 3]) -> Mat4 {
    let [x, y, z] = deg.map(f64::to_radians);
    let r = Rotation3::from_axis_angle(&Vec3::x_axis(), x)
        * Rotation3::from_axis_angle(&Vec3::y_axis(), y)
        * Rotation3::from_axis_angle(&Vec3::z_axis(), z);
    r.to_homogeneous()
}

fn translation(t: Vec3) -> Mat4 {
    Translation3::from(t).to_homogeneous()
}

/// Skinning matrices `M_j = G_j(posed) · G_j(rest)⁻¹` with `G_j(rest) = T(p_j)`.
pub fn forward_kinematics(skeleton: &Skeleton, pose: &Pose) -> Result<Vec<Mat4>> {
    skeleton.validate()?;
    let n = skeleton.joints.len();
    if pose.euler_deg.len() != n {
        return Err(Error::Skinning(format!("pose has {} joints, skeleton {n}", pose.euler_deg.len())));
    }
    // M_j = M_parent · T(p_j) · R_j · T(-p_j); a zero pose stays exactly the identity
    let mut skin = vec![Mat4::identity(); n];
    for j in skeleton.topological_order() {
        let joint = &skeleton.joints[j];
        let local = translation(joint.position) * euler_xyz(pose.euler_deg[j]) * translation(-joint.position);
        skin[j] = match joint.parent {
            None => local,
            Some(p) => skin[p] * local,
        };
    }
    Ok(skin)
}

/// `v' = Σ_j w_vj · M_j · v`, applied as `v + Σ_j w_vj (M_j v - v)`. Rows must sum to
/// one within 1e-4.
pub fn lbs_deform(vertices: &[Vec3], weights: &SkinWeights, transforms: &[Mat4]) -> Result<Vec<Vec3>> {
    if weights.vertex_count() != vertices.len() || weights.joint_count != transforms.len() {
        return Err(Error::Skinning(format!(
            "weights {}x{} for {} vertices and {} transforms",
            weights.vertex_count(),
            weights.joint_count,
            vertices.len(),
            transforms.len()
        )));
    }
    vertices
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let row = weights.row(i);
            let s: f64 = row.iter().sum();
            if s == 0.0 {
                return Err(Error::Skinning(format!("vertex {i} has no weights")));
            }
            if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::Skinning(format!("weights of vertex {i} sum to {s}")));
            }
            let h = v.push(1.0);
            let mut out = *v;
            for (w, m) in row.iter().zip(transforms) {
                if *w != 0.0 {
                    out += ((m * h).xyz() - v) * *w;
                }
            }
            Ok(out)
        })
        .collect()
}

/// `n` poses with every angle i.i.d. uniform in `[-range, range]` degrees.
pub fn sample_poses(skeleton: &Skeleton, n: usize, range_deg: f64, seed: u64) -> Result<Vec<Pose>> {
    if n == 0 || !(range_deg >= 0.0) {
        return Err(Error::Config(format!("need n >= 1 and range >= 0 (got {n}, {range_deg})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let j = skeleton.joints.len();
    Ok((0..n)
        .map(|_| {
            let euler_deg = (0..j)
                .map(|_| {
                    if range_deg == 0.0 {
                        [0.0; 3]
                    } else {
                        [0; 3].map(|_| rng.gen_range(-range_deg..=range_deg))
                    }
                })
                .collect();
            Pose { euler_deg, seed: Some(seed) }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Fraction of predicted influences that are true influences, averaged over vertices.
    pub precision: f64,
    pub recall: f64,
    pub avg_l1: f64,
    pub avg_def: f64,
    pub max_def: f64,
}

impl Metrics {
    /// Vertex-weighted mean of per-asset results (max of maxima).
    pub fn combine(parts: &[(Metrics, usize)]) -> Option<Metrics> {
        let total: usize = parts.iter().map(|(_, n)| n).sum();
        if total == 0 {
            return None;
        }
        let mean = |f: fn(&Metrics) -> f64| parts.iter().map(|(m, n)| f(m) * *n as f64).sum::<f64>() / total as f64;
        Some(Metrics {
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            avg_l1: mean(|m| m.avg_l1),
            avg_def: mean(|m| m.avg_def),
            max_def: parts.iter().map(|(m, _)| m.max_def).fold(0.0, f64::max),
        })
    }
}

pub fn metrics(predicted: &SkinWeights, ground_truth: &SkinWeights, asset: &RigAsset, poses: &[Pose]) -> Result<Metrics> {
    let v = asset.mesh.vertices.len();
    let j = asset.skeleton.joints.len();
    for (name, w) in [("predicted", predicted), ("ground-truth", ground_truth)] {
        if w.vertex_count() != v || w.joint_count != j {
            return Err(Error::Skinning(format!(
                "{name} weights are {}x{}, asset has {v} vertices and {j} joints",
                w.vertex_count(),
                w.joint_count
            )));
        }
    }
    if v == 0 {
        return Err(Error::Skinning("asset has no vertices".into()));
    }

    let (mut precision, mut recall, mut l1) = (0.0, 0.0, 0.0);
    for i in 0..v {
        let (p, g) = (predicted.row(i), ground_truth.row(i));
        let (mut np, mut ng, mut both) = (0usize, 0usize, 0usize);
        for (a, b) in p.iter().zip(g) {
            let (ip, ig) = (*a > INFLUENCE_THRESHOLD, *b > INFLUENCE_THRESHOLD);
            np += ip as usize;
            ng += ig as usize;
            both += (ip && ig) as usize;
            l1 += (a - b).abs();
        }
        precision += if np == 0 { 0.0 } else { both as f64 / np as f64 };
        recall += if ng == 0 { 0.0 } else { both as f64 / ng as f64 };
    }

    let (mut sum_def, mut max_def, mut count) = (0.0, 0.0f64, 0usize);
    for pose in poses {
        let m = forward_kinematics(&asset.skeleton, pose)?;
        let a = lbs_deform(&asset.mesh.vertices, predicted, &m)?;
        let b = lbs_deform(&asset.mesh.vertices, ground_truth, &m)?;
        for (x, y) in a.iter().zip(&b) {
            let d = (x - y).norm();
            sum_def += d;
            max_def = max_def.max(d);
            count += 1;
        }
    }
    let n = v as f64;
    Ok(Metrics {
        precision: precision / n,
        recall: recall / n,
        avg_l1: l1 / n,
        avg_def: if count == 0 { 0.0 } else { sum_def / count as f64 },
        max_def,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Joint, Mesh};

    fn joint(name: &str, p: Vec3, parent: Option<usize>) -> Joint {
        Joint { name: name.into(), position: p, parent }
    }

    #[test]
    fn identity_pose_gives_identity_transforms() {
        let s = Skeleton {
            joints: vec![joint("a", Vec3::new(0.3, 0.1, 0.0), None), joint("b", Vec3::new(1.0, 0.5, 0.2), Some(0))],
        };
        for m in forward_kinematics(&s, &Pose::identity(2)).unwrap() {
            assert!((m - Mat4::identity()).abs().max() < 1e-12);
        }
    }

    #[test]
    fn quarter_turn_about_z() {
        let s = Skeleton { joints: vec![joint("r", Vec3::zeros(), None)] };
        let pose = Pose { euler_deg: vec![[0.0, 0.0, 90.0]], seed: None };
        let m = forward_kinematics(&s, &pose).unwrap();
        let w = SkinWeights { joint_count: 1, data: vec![1.0] };
        let out = lbs_deform(&[Vec3::new(1.0, 0.0, 0.0)], &w, &m).unwrap();
        assert!((out[0] - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn child_rotation_leaves_parent_bound_points() {
        let s = Skeleton { joints: vec![joint("a", Vec3::zeros(), None), joint("b", Vec3::new(1.0, 0.0, 0.0), Some(0))] };
        let pose = Pose { euler_deg: vec![[0.0; 3], [20.0, -5.0, 30.0]], seed: None };
        let m = forward_kinematics(&s, &pose).unwrap();
        let w = SkinWeights { joint_count: 2, data: vec![1.0, 0.0] };
        let p = Vec3::new(0.4, 0.2, -0.1);
        assert_eq!(lbs_deform(&[p], &w, &m).unwrap()[0], p);
        // the child joint itself stays put under its own rotation
        let w = SkinWeights { joint_count: 2, data: vec![0.0, 1.0] };
        assert!((lbs_deform(&[Vec3::new(1.0, 0.0, 0.0)], &w, &m).unwrap()[0] - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn half_weight_translation() {
        let t = Vec3::new(0.2, -0.4, 1.0);
        let transforms = [Mat4::identity(), translation(t)];
        let w = SkinWeights { joint_count: 2, data: vec![0.5, 0.5] };
        let v = Vec3::new(1.0, 2.0, 3.0);
        assert!((lbs_deform(&[v], &w, &transforms).unwrap()[0] - (v + t / 2.0)).norm() < 1e-12);
        let bad = SkinWeights { joint_count: 2, data: vec![0.5, 0.6] };
        assert!(lbs_deform(&[v], &bad, &transforms).is_err());
        let zero = SkinWeights { joint_count: 2, data: vec![0.0, 0.0] };
        assert!(lbs_deform(&[v], &zero, &transforms).is_err());
    }

    #[test]
    fn pose_sampling() {
        let s = Skeleton { joints: vec![joint("a", Vec3::zeros(), None), joint("b", Vec3::x(), Some(0))] };
        let a = sample_poses(&s, DEFAULT_POSES, DEFAULT_RANGE_DEG, 3).unwrap();
        assert_eq!(a.len(), 10);
        assert_eq!(a, sample_poses(&s, 10, 10.0, 3).unwrap());
        assert!(a.iter().flat_map(|p| p.euler_deg.iter().flatten()).all(|x| x.abs() <= 10.0));
        assert!(sample_poses(&s, 4, 0.0, 1).unwrap().iter().all(|p| *p == Pose { seed: Some(1), ..Pose::identity(2) }));
    }

    #[test]
    fn influence_set_arithmetic() {
        let asset = RigAsset {
            name: "x".into(),
            mesh: Mesh { vertices: vec![Vec3::new(0.5, 0.0, 0.0)], faces: vec![] },
            skeleton: Skeleton {
                joints: vec![
                    joint("A", Vec3::zeros(), None),
                    joint("B", Vec3::x(), Some(0)),
                    joint("C", Vec3::new(2.0, 0.0, 0.0), Some(1)),
                ],
            },
            weights: None,
            transform: None,
        };
        let pred = SkinWeights { joint_count: 3, data: vec![0.5, 0.5, 0.0] };
        let gt = SkinWeights { joint_count: 3, data: vec![0.0, 0.5, 0.5] };
        let m = metrics(&pred, &gt, &asset, &[]).unwrap();
        assert_eq!((m.precision, m.recall), (0.5, 0.5));
        assert!((m.avg_l1 - 1.0).abs() < 1e-12);
        let same = metrics(&gt, &gt, &asset, &sample_poses(&asset.skeleton, 3, 10.0, 0).unwrap()).unwrap();
        assert_eq!(same, Metrics { precision: 1.0, recall: 1.0, avg_l1: 0.0, avg_def: 0.0, max_def: 0.0 });
    }
}
