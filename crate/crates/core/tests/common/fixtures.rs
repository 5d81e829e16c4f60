//! Small hand-built inputs.

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rigskin::geometry::{Joint, Mesh, RigAsset, Skeleton, SkinWeights, Vec3};
use rigskin::graph::{Graph, NeighbourhoodKind, NodeKind};
use rigskin::nn::ParamStore;
use rigskin::synth::{generate_synthetic, SyntheticRigSpec};
use rigskin::tensor::Tensor;

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Biases start at zero; random ones keep ReLUs away from a shared kink.
pub fn randomize_biases(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for p in store.iter_mut().filter(|p| p.name.ends_with(".bias")) {
        p.tensor.data_mut().iter_mut().for_each(|b| *b = rng.gen_range(-0.2..0.2));
    }
}

/// Every node receives 1 to 4 edges from distinct random sources (itself allowed).
pub fn random_graph(n: usize, kind: NeighbourhoodKind, rng: &mut ChaCha8Rng) -> Graph {
    let mut g = Graph::new(vec![NodeKind::MeshVertex; n]);
    let mut edges = Vec::new();
    for d in 0..n {
        let m = rng.gen_range(1..=4.min(n));
        for s in sample(rng, n, m) {
            edges.push((s as u32, d as u32));
        }
    }
    g.set_edges(kind, edges).unwrap();
    g
}

/// Vertices `0..v` and joints `v..v+j`; each vertex linked both ways to 1 or 2 joints.
pub fn random_binding_graph(v: usize, j: usize, rng: &mut ChaCha8Rng) -> Graph {
    let mut kinds = vec![NodeKind::MeshVertex; v];
    kinds.extend(vec![NodeKind::SkeletonJoint; j]);
    let mut g = Graph::new(kinds);
    let mut edges = Vec::new();
    for x in 0..v {
        let m = rng.gen_range(1..=2.min(j));
        for s in sample(rng, j, m) {
            let jn = (v + s) as u32;
            edges.push((x as u32, jn));
            edges.push((jn, x as u32));
        }
    }
    g.set_edges(NeighbourhoodKind::Binding, edges).unwrap();
    g.add_self_loops_for_isolated(NeighbourhoodKind::Binding);
    g
}

/// Random tree with joints in topological order inside `[-1,1]³`.
pub fn random_skeleton(n: usize, rng: &mut ChaCha8Rng) -> Skeleton {
    let mut joints = Vec::with_capacity(n);
    for i in 0..n {
        let position = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let parent = if i == 0 { None } else { Some(rng.gen_range(0..i)) };
        joints.push(Joint { name: format!("j{i}"), position, parent });
    }
    Skeleton { joints }
}

/// Three-joint tube of about fifty vertices.
pub fn micro_asset() -> RigAsset {
    let spec = SyntheticRigSpec { count: 1, joints: (3, 3), vertices: (50, 50), seed: 5, ..SyntheticRigSpec::default() };
    generate_synthetic(&spec).unwrap().remove(0)
}

pub fn box_mesh(lo: Vec3, hi: Vec3) -> Mesh {
    let vertices = (0..8)
        .map(|i| {
            Vec3::new(
                if i & 1 == 0 { lo.x } else { hi.x },
                if i & 2 == 0 { lo.y } else { hi.y },
                if i & 4 == 0 { lo.z } else { hi.z },
            )
        })
        .collect();
    let quads = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]];
    let faces = quads.iter().flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]).collect();
    Mesh { vertices, faces }
}

pub fn merge(meshes: &[Mesh]) -> Mesh {
    let mut out = Mesh::default();
    for m in meshes {
        let base = out.vertices.len() as u32;
        out.vertices.extend(&m.vertices);
        out.faces.extend(m.faces.iter().map(|f| [f[0] + base, f[1] + base, f[2] + base]));
    }
    out
}

pub fn uv_sphere(radius: f64, stacks: usize, slices: usize) -> Mesh {
    use std::f64::consts::PI;
    let mut vertices = vec![Vec3::new(0.0, 0.0, radius)];
    for i in 1..stacks {
        let t = PI * i as f64 / stacks as f64;
        for j in 0..slices {
            let p = 2.0 * PI * j as f64 / slices as f64;
            vertices.push(Vec3::new(t.sin() * p.cos(), t.sin() * p.sin(), t.cos()) * radius);
        }
    }
    vertices.push(Vec3::new(0.0, 0.0, -radius));
    let south = (vertices.len() - 1) as u32;
    let ring = |i: usize, j: usize| (1 + (i - 1) * slices + j % slices) as u32;
    let mut faces = Vec::new();
    for j in 0..slices {
        faces.push([0, ring(1, j), ring(1, j + 1)]);
        faces.push([south, ring(stacks - 1, j + 1), ring(stacks - 1, j)]);
    }
    for i in 1..stacks - 1 {
        for j in 0..slices {
            faces.push([ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)]);
            faces.push([ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)]);
        }
    }
    Mesh { vertices, faces }
}

/// Two arms of height 3 joined by a base; the slot between them is [0.5,1.5]×[0.5,3].
pub fn u_shape() -> Mesh {
    merge(&[
        box_mesh(Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.5, 3.0, 0.5)),
        box_mesh(Vec3::new(1.5, 0.0, 0.0), Vec3::new(2.0, 3.0, 0.5)),
        box_mesh(Vec3::new(0.0, 0.0, 0.0), Vec3::new(2.0, 0.5, 0.5)),
    ])
}

/// Awkward floats (tiny, huge exponent, many digits, negative zero) and a
/// skeleton listed child-before-parent.
pub fn irregular_asset() -> RigAsset {
    let mut mesh = box_mesh(Vec3::new(-0.1, 1e-17, -0.0), Vec3::new(0.30000000000000004, 2.5e3, 1.0 / 3.0));
    mesh.vertices[3].x = -123.456789012345678;
    let joints = vec![
        Joint { name: "tip".into(), position: Vec3::new(0.1, 2000.0, 0.2), parent: Some(2) },
        Joint { name: "mid joint".into(), position: Vec3::new(0.1, 1000.0, 0.1), parent: Some(2) },
        Joint { name: "hips".into(), position: Vec3::new(0.1, 0.5, 0.1), parent: None },
    ];
    let mut w = SkinWeights::zeros(8, 3);
    for v in 0..8 {
        let a = (v as f64 + 1.0) / 9.0;
        w.row_mut(v).copy_from_slice(&[a, 1.0 - a, 0.0]);
    }
    let asset = RigAsset { name: "irregular".into(), mesh, skeleton: Skeleton { joints }, weights: Some(w), transform: None };
    asset.validate().unwrap();
    asset
}
