use std::f64::consts::PI;

use nalgebra::Vector3;

use vbrep_core::camera::CameraIntrinsics;
use vbrep_core::edge_graph::InstanceMap;
use vbrep_core::error::{FormatError, PipelineError};
use vbrep_core::eval::export::{read_bundle, write_bundle, LABELS};
use vbrep_core::eval::{gt_vbrep, reconstruct, run_pipeline, Ablation, PipelineConfig, PipelineInput, Truth};
use vbrep_core::extract::EdgeClass;
use vbrep_core::synth::suites::{scene, SceneKind};
use vbrep_core::synth::{raycast_scene, CameraPose, GroundTruth, SceneSpec, SolidKind, SolidSpec};

fn input(gt: &GroundTruth) -> PipelineInput {
    PipelineInput {
        depth: gt.depth.clone(),
        instances: gt.instances.clone(),
        camera: gt.camera,
        truth: Some(Truth { file: gt.truth_file(), depth: gt.depth.clone() }),
    }
}

fn sphere_scene(w: usize, h: usize) -> GroundTruth {
    let spec = SceneSpec {
        solids: vec![SolidSpec::add(SolidKind::Sphere { center: [0.0, 0.0, 5.0], radius: 1.0 })],
        ground: None,
        camera: CameraPose { position: [0.0; 3], look_at: [0.0, 0.0, 5.0], intrinsics: CameraIntrinsics::with_fov(w, h, 50.0) },
        normalize: false,
    };
    raycast_scene(&spec).unwrap()
}

#[test]
fn noiseless_box_matches_its_reference() {
    let gt = raycast_scene(&scene(SceneKind::Box, 3, 240, 180)).unwrap();
    let (rec, report) = run_pipeline(&input(&gt), Ablation::FULL, &PipelineConfig::default()).unwrap();
    let report = report.unwrap();
    assert!(report.chamfer < 1e-3, "{}", report.chamfer);
    assert_eq!((report.face_precision, report.face_recall), (1.0, 1.0));
    assert!(rec.flagged.is_empty());
    assert!(rec.vbrep.edges.iter().any(|e| e.class == EdgeClass::Intersection));
}

#[test]
fn reconstruction_is_deterministic() {
    let gt = raycast_scene(&scene(SceneKind::Step, 1, 160, 120)).unwrap();
    let cfg = PipelineConfig::default();
    let a = reconstruct(&input(&gt), Ablation::FULL, &cfg).unwrap();
    let b = reconstruct(&input(&gt), Ablation::FULL, &cfg).unwrap();
    assert_eq!(a, b);
}

/// A sphere seen from distance 5 shows a cap of height 1 - 1/5, bounded
/// only by its visibility silhouette.
#[test]
fn sphere_reference_is_one_cap_bounded_by_visibility_edges() {
    let gt = sphere_scene(320, 240);
    let v = gt_vbrep(&gt.depth, &gt.instances, &gt.camera, &gt.truth_file(), &PipelineConfig::default()).unwrap();
    assert_eq!(v.faces.len(), 1);
    assert!(!v.edges.is_empty());
    assert!(v.edges.iter().all(|e| e.class == EdgeClass::Visibility));
    let area: f64 = v.meshes().map(|m| m.area()).sum();
    let cap = 2.0 * PI * 0.8;
    assert!((area - cap).abs() < 0.02 * cap, "{area} vs {cap}");
    let c = Vector3::new(0.0, 0.0, 5.0);
    // interior vertices lie on the sphere; boundary ones are snapped onto
    // the silhouette polyline, whose chords sag inside the circle of radius
    // sqrt(24) / 5 by at most L^2 / (8 r)
    let longest = v.edges.iter().map(|e| (v.vertices[e.a].position - v.vertices[e.b].position).norm()).fold(0.0, f64::max);
    let sag = longest * longest / (8.0 * 24f64.sqrt() / 5.0);
    for m in v.meshes() {
        let boundary = m.boundary_vertices();
        for (i, p) in m.vertices.iter().enumerate() {
            let tol = if boundary.binary_search(&(i as u32)).is_ok() { sag + 1e-9 } else { 1e-9 };
            assert!(((p - c).norm() - 1.0).abs() < tol, "vertex {i}: {}", (p - c).norm());
        }
    }
}

#[test]
fn bundle_round_trips_and_reports_missing_files() {
    let gt = raycast_scene(&scene(SceneKind::Cylinder, 2, 64, 48)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_bundle(dir.path(), &gt).unwrap();
    let back = read_bundle(dir.path()).unwrap();
    let want = input(&gt);
    // NaN marks invalid depth, so rasters are compared bit for bit
    let bits = |d: &vbrep_core::camera::DepthImage| d.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back.depth), bits(&want.depth));
    assert_eq!(bits(&back.truth.as_ref().unwrap().depth), bits(&want.depth));
    assert_eq!((back.instances, back.camera), (want.instances, want.camera));
    assert_eq!(back.truth.unwrap().file, want.truth.unwrap().file);

    std::fs::remove_file(dir.path().join(LABELS)).unwrap();
    let err = read_bundle(dir.path()).unwrap_err();
    assert!(matches!(&err, FormatError::InputMissing(p) if p.ends_with(LABELS)), "{err}");
    assert_eq!(PipelineError::from(err).exit_code(), 3);
}

#[test]
fn empty_instance_map_is_an_error() {
    let mut inp = input(&sphere_scene(64, 48));
    inp.instances = InstanceMap::new(64, 48, vec![0; 64 * 48], Default::default());
    assert!(reconstruct(&inp, Ablation::FULL, &PipelineConfig::default()).is_err());
}

#[test]
fn mismatched_raster_sizes_are_rejected() {
    let mut inp = input(&sphere_scene(64, 48));
    inp.camera = CameraIntrinsics::with_fov(32, 24, 50.0);
    let err = reconstruct(&inp, Ablation::FULL, &PipelineConfig::default()).unwrap_err();
    assert!(matches!(err, PipelineError::Input(FormatError::DimensionMismatch { .. })), "{err}");
}
