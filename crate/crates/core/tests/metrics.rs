use std::collections::BTreeMap;

use nalgebra::Vector3;
use proptest::prelude::*;

use vbrep_core::edge_graph::Label;
use vbrep_core::error::MetricError;
use vbrep_core::eval::{chamfer, face_prf_and_accuracy, greedy_iou_match, primitive_alignment, sample_meshes, Mask, MatchResult};
use vbrep_core::extract::VisibilityMesh;
use vbrep_core::primitive::{AxisClass, PrimitiveType, SurfacePrimitive};

fn mask(id: u16, range: std::ops::Range<u32>) -> Mask {
    Mask { id, pixels: range.collect() }
}

#[test]
fn chamfer_examples() {
    let a = vec![Vector3::new(0.0, 0.0, 0.0)];
    let b = vec![Vector3::new(1.0, 0.0, 0.0)];
    assert_eq!(chamfer(&a, &b).unwrap(), 1.0);
    assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
    assert!(matches!(chamfer(&a, &[]), Err(MetricError::EmptySet)));
}

#[test]
fn chamfer_by_hand() {
    // A -> B: 0 and 1; B -> A: 0. Mean of (0.5, 0) is 0.25.
    let a = vec![Vector3::zeros(), Vector3::new(0.0, 1.0, 0.0)];
    let b = vec![Vector3::zeros()];
    assert!((chamfer(&a, &b).unwrap() - 0.25).abs() < 1e-15);
}

fn unit_square_mesh(surface: u16, n: usize, z: f64) -> VisibilityMesh {
    let mut vertices = Vec::new();
    for j in 0..=n {
        for i in 0..=n {
            vertices.push(Vector3::new(i as f64 / n as f64, j as f64 / n as f64, z));
        }
    }
    let mut faces = Vec::new();
    let mut cells = Vec::new();
    let at = |i: usize, j: usize| (j * (n + 1) + i) as u32;
    for j in 0..n {
        for i in 0..n {
            faces.push([at(i, j), at(i + 1, j), at(i + 1, j + 1)]);
            faces.push([at(i, j), at(i + 1, j + 1), at(i, j + 1)]);
            let cell = (j * n + i) as u64;
            cells.extend([2 * cell, 2 * cell + 1]);
        }
    }
    VisibilityMesh { surface, layer: 0, sheet: 0, vertices, faces, boundary: Vec::new(), cells }
}

#[test]
fn sampled_identical_meshes_are_close() {
    let m = unit_square_mesh(1, 32, 0.0);
    assert!((m.area() - 1.0).abs() < 1e-12);
    let a = sample_meshes([&m], 20_000, 1);
    let b = sample_meshes([&m], 20_000, 2);
    assert!((a.len() as f64 - 20_000.0).abs() < 400.0, "{}", a.len());
    let cd = chamfer(&a, &b).unwrap();
    assert!(cd < 0.01, "{cd}");
    // every sample lies on the square
    assert!(a.iter().all(|p| p.z == 0.0 && (0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y)));
}

#[test]
fn sampling_is_seeded() {
    let m = unit_square_mesh(1, 8, 0.0);
    assert_eq!(sample_meshes([&m], 500, 7), sample_meshes([&m], 500, 7));
    assert_ne!(sample_meshes([&m], 500, 7), sample_meshes([&m], 500, 8));
}

#[test]
fn offset_meshes_measure_their_gap() {
    let a = sample_meshes([&unit_square_mesh(1, 16, 0.0)], 5_000, 3);
    let b = sample_meshes([&unit_square_mesh(1, 16, 0.1)], 5_000, 3);
    // same seed and cells: the samples pair up exactly 0.1 apart
    assert!((chamfer(&a, &b).unwrap() - 0.1).abs() < 1e-9);
}

#[test]
fn matching_examples() {
    let truth = vec![mask(1, 0..100), mask(2, 100..200)];
    let same = greedy_iou_match(&truth, &truth);
    assert_eq!(same.pairs, vec![(1, 1, 1.0), (2, 2, 1.0)]);
    assert!(same.unmatched_pred.is_empty() && same.unmatched_truth.is_empty());

    // IoU 70/100 stays unmatched
    let low = greedy_iou_match(&[mask(5, 0..70)], &[mask(1, 0..100)]);
    assert!(low.pairs.is_empty());
    assert_eq!((low.unmatched_pred, low.unmatched_truth), (vec![5], vec![1]));

    // IoU 0.9 beats 0.8 for the same truth
    let two = greedy_iou_match(&[mask(3, 0..80), mask(4, 0..90)], &[mask(1, 0..100)]);
    assert_eq!(two.pairs.len(), 1);
    assert_eq!((two.pairs[0].0, two.pairs[0].1), (4, 1));
    assert!((two.pairs[0].2 - 0.9).abs() < 1e-12);
    assert_eq!(two.unmatched_pred, vec![3]);
}

#[test]
fn matching_ties_prefer_lower_ids() {
    let m = greedy_iou_match(&[mask(7, 0..100), mask(2, 0..100)], &[mask(1, 0..100)]);
    assert_eq!(m.pairs[0].0, 2);
    assert_eq!(m.unmatched_pred, vec![7]);
}

fn pairs(p: &[(u16, u16)]) -> MatchResult {
    MatchResult { pairs: p.iter().map(|&(a, b)| (a, b, 1.0)).collect(), ..Default::default() }
}

#[test]
fn alignment_examples() {
    let z = SurfacePrimitive::cylinder(Vector3::z(), Vector3::zeros(), 1.0);
    let x = SurfacePrimitive::cylinder(Vector3::x(), Vector3::zeros(), 1.0);
    let flipped = SurfacePrimitive::cylinder(-Vector3::z(), Vector3::zeros(), 1.0);
    let sphere = SurfacePrimitive::sphere(Vector3::zeros(), 1.0);
    let truth: BTreeMap<u16, SurfacePrimitive> = [(1, z.clone()), (2, sphere.clone())].into();
    let m = pairs(&[(1, 1)]);
    assert_eq!(primitive_alignment(&m, &[(1, z.clone())].into(), &truth).unwrap(), 0.0);
    assert!((primitive_alignment(&m, &[(1, x)].into(), &truth).unwrap() - 2f64.sqrt()).abs() < 1e-15);
    assert_eq!(primitive_alignment(&m, &[(1, flipped)].into(), &truth).unwrap(), 0.0);
    let only_sphere = pairs(&[(2, 2)]);
    assert!(matches!(primitive_alignment(&only_sphere, &[(2, sphere)].into(), &truth), Err(MetricError::NoAxedMatches)));
}

fn label(kind: PrimitiveType, axis_class: AxisClass) -> Label {
    Label { kind, axis_class }
}

#[test]
fn prf_examples() {
    let l = label(PrimitiveType::Plane, AxisClass::Z);
    let truth: BTreeMap<u16, Label> = (1..=10).map(|i| (i, l)).collect();
    let mut pred: BTreeMap<u16, Label> = (1..=9).map(|i| (i, l)).collect();
    let m = pairs(&(1..=8).map(|i| (i, i)).collect::<Vec<_>>());
    let s = face_prf_and_accuracy(&m, &pred, &truth);
    assert!((s.recall - 0.8).abs() < 1e-15 && (s.precision - 8.0 / 9.0).abs() < 1e-15);
    assert_eq!((s.type_accuracy, s.axis_accuracy), (1.0, 1.0));

    pred.insert(3, label(PrimitiveType::Plane, AxisClass::X));
    let s = face_prf_and_accuracy(&m, &pred, &truth);
    assert!((s.axis_accuracy - 7.0 / 8.0).abs() < 1e-15);
    assert_eq!(s.type_accuracy, 1.0);

    let all = pairs(&(1..=10).map(|i| (i, i)).collect::<Vec<_>>());
    let s = face_prf_and_accuracy(&all, &truth, &truth);
    assert_eq!((s.precision, s.recall, s.type_accuracy, s.axis_accuracy), (1.0, 1.0, 1.0, 1.0));
}

fn cloud(max: usize) -> impl Strategy<Value = Vec<Vector3<f64>>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0).prop_map(|(x, y, z)| Vector3::new(x, y, z)), 1..max)
}

fn masks() -> impl Strategy<Value = Vec<Mask>> {
    prop::collection::vec((0u32..40, 1u32..40), 1..6).prop_map(|v| {
        v.into_iter().enumerate().map(|(i, (start, len))| mask(i as u16 + 1, start..start + len)).collect()
    })
}

fn brute_chamfer(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    let one = |x: &[Vector3<f64>], y: &[Vector3<f64>]| {
        x.iter().map(|p| y.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min)).sum::<f64>() / x.len() as f64
    };
    0.5 * (one(a, b) + one(b, a))
}

/// Points on a coarse lattice in the z = 0 plane: many duplicates and a
/// zero-extent axis.
fn lattice(max: usize) -> impl Strategy<Value = Vec<Vector3<f64>>> {
    prop::collection::vec((0i32..4, 0i32..4).prop_map(|(x, y)| Vector3::new(x as f64, y as f64, 0.0)), 1..max)
}

#[test]
fn chamfer_on_coincident_planar_points() {
    let a: Vec<Vector3<f64>> = (0..500).map(|i| Vector3::new((i % 3) as f64, 0.0, 0.0)).collect();
    let b = vec![Vector3::new(0.0, 1.0, 0.0); 300];
    assert!((chamfer(&a, &b).unwrap() - brute_chamfer(&a, &b)).abs() < 1e-12);
}

proptest! {
    #[test]
    fn chamfer_matches_brute_force(a in cloud(200), b in cloud(200)) {
        prop_assert!((chamfer(&a, &b).unwrap() - brute_chamfer(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn chamfer_matches_brute_force_on_lattices(a in lattice(120), b in lattice(120)) {
        prop_assert!((chamfer(&a, &b).unwrap() - brute_chamfer(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn chamfer_is_symmetric_and_nonnegative(a in cloud(40), b in cloud(40)) {
        let ab = chamfer(&a, &b).unwrap();
        let ba = chamfer(&b, &a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12 * (1.0 + ab));
    }

    #[test]
    fn matching_is_injective_and_deterministic(p in masks(), t in masks()) {
        let m = greedy_iou_match(&p, &t);
        prop_assert_eq!(&m, &greedy_iou_match(&p, &t));
        let mut ps: Vec<u16> = m.pairs.iter().map(|x| x.0).collect();
        let mut ts: Vec<u16> = m.pairs.iter().map(|x| x.1).collect();
        ps.sort_unstable();
        ps.dedup();
        ts.sort_unstable();
        ts.dedup();
        prop_assert_eq!(ps.len(), m.pairs.len());
        prop_assert_eq!(ts.len(), m.pairs.len());
        prop_assert_eq!(m.pairs.len() + m.unmatched_pred.len(), p.len());
        prop_assert_eq!(m.pairs.len() + m.unmatched_truth.len(), t.len());
        prop_assert!(m.pairs.iter().all(|x| x.2 >= 0.75));
    }
}
