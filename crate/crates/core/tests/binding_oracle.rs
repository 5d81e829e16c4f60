mod common;

use rigskin::binding::{select_k_unique_joints, BindingMode};
use rigskin::geometry::{Joint, Skeleton, Vec3};

#[test]
fn matches_enumerate_sort_dedup_on_1000_skeletons() {
    common::binding_oracle(1000).assert();
}

fn star() -> Skeleton {
    let j = |n: &str, p: [f64; 3], parent| Joint { name: n.into(), position: Vec3::from(p), parent };
    Skeleton {
        joints: vec![
            j("hub", [0.0, 0.0, 0.0], None),
            j("a", [1.0, 0.0, 0.0], Some(0)),
            j("b", [0.0, 1.0, 0.0], Some(0)),
            j("c", [-1.0, -1.0, 0.0], Some(0)),
            j("c2", [-1.0, -2.0, 0.0], Some(3)),
        ],
    }
}

#[test]
fn shared_root_appears_once() {
    // the two bones from the hub nearest to p share their root; the c->c2 bone fills slot 2
    let p = Vec3::new(0.3, 0.3, 0.0);
    let slots = select_k_unique_joints(&star(), &p, 3, BindingMode::Joint).unwrap();
    let joints: Vec<(usize, bool)> = slots.iter().map(|s| (s.joint, s.valid)).collect();
    assert_eq!(joints, vec![(0, true), (3, true), (0, false)]);
    assert_eq!(common::oracle_joints(&star(), &p, 3, BindingMode::Joint), vec![0, 3]);
}

#[test]
fn bone_mode_keeps_repeated_roots() {
    let p = Vec3::new(0.3, 0.3, 0.0);
    let slots = select_k_unique_joints(&star(), &p, 3, BindingMode::Bone).unwrap();
    let joints: Vec<usize> = slots.iter().map(|s| s.joint).collect();
    assert_eq!(joints, vec![0, 0, 0]);
    assert!(slots.iter().all(|s| s.valid));
    assert_eq!(slots.iter().map(|s| s.bone).collect::<Vec<_>>(), vec![0, 1, 2]);
}

#[test]
fn chain_example() {
    let j = |n: &str, x: f64, parent| Joint { name: n.into(), position: Vec3::new(x, 0.0, 0.0), parent };
    let chain = Skeleton { joints: vec![j("A", 0.0, None), j("B", 1.0, Some(0)), j("C", 2.0, Some(1))] };
    let p = Vec3::new(0.5, 0.1, 0.0);
    let two = select_k_unique_joints(&chain, &p, 2, BindingMode::Joint).unwrap();
    assert_eq!(two.iter().map(|s| (s.joint, s.valid)).collect::<Vec<_>>(), vec![(0, true), (1, true)]);
    let three = select_k_unique_joints(&chain, &p, 3, BindingMode::Joint).unwrap();
    assert_eq!(three.iter().map(|s| (s.joint, s.valid)).collect::<Vec<_>>(), vec![(0, true), (1, true), (0, false)]);
}
