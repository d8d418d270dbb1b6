use std::f64::consts::PI;

use nalgebra::{Rotation3, Vector2, Vector3};
use proptest::prelude::*;

use vbrep_core::camera::{pixel_point, unproject, CameraIntrinsics, DepthImage};
use vbrep_core::frame::{frame_axis, orthonormal_pair, AlignmentFrame};
use vbrep_core::primitive::{AxisClass, PrimitiveType, SurfacePrimitive};

fn vec3() -> impl Strategy<Value = Vector3<f64>> {
    (-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn unit() -> impl Strategy<Value = Vector3<f64>> {
    vec3().prop_filter("non-degenerate", |v| v.norm() > 0.2).prop_map(|v| v.normalize())
}

/// A primitive together with a parameter pair that lies inside its regular
/// chart (away from poles and the cone apex).
fn primitive_and_uv() -> impl Strategy<Value = (SurfacePrimitive, f64, f64)> {
    (0usize..5, unit(), vec3(), 0.2f64..1.5, 0.05f64..0.9, -3.0f64..3.0, 0.0f64..1.0).prop_map(|(k, a, c, r, s, u, t)| {
        match k {
            0 => (SurfacePrimitive::plane(a, c.dot(&a)), u, 2.0 * t - 1.0),
            1 => (SurfacePrimitive::cylinder(a, c, r), u, 2.0 * t - 1.0),
            2 => (SurfacePrimitive::sphere(c, r), u, 0.1 + t * (PI - 0.2)),
            3 => (SurfacePrimitive::cone(c, a, s * 1.3), u, 0.1 + t),
            _ => (SurfacePrimitive::torus(c, a, r, r * s * 0.9), u, (2.0 * t - 1.0) * 3.0),
        }
    })
}

fn angle_diff(a: f64, b: f64) -> f64 {
    (a - b + PI).rem_euclid(2.0 * PI) - PI
}

proptest! {
    #[test]
    fn chart_points_lie_on_the_surface((p, u, v) in primitive_and_uv()) {
        let x = p.uv_to_point(u, v);
        prop_assert!(p.distance(&x) < 1e-9, "{:?} at ({u}, {v}): {}", p.kind(), p.distance(&x));
    }

    #[test]
    fn chart_round_trips((p, u, v) in primitive_and_uv()) {
        let (u2, v2) = p.point_to_uv(&p.uv_to_point(u, v));
        prop_assert!((p.uv_to_point(u2, v2) - p.uv_to_point(u, v)).norm() < 1e-9);
        if p.kind() != PrimitiveType::Plane {
            prop_assert!(angle_diff(u, u2).abs() < 1e-9);
        }
    }

    #[test]
    fn distance_is_unsigned_distance((p, _u, _v) in primitive_and_uv(), q in vec3()) {
        prop_assert_eq!(p.distance(&q), p.signed_distance(&q).abs());
    }

    /// Stepping along the normal from a surface point changes the signed
    /// distance by the step length.
    #[test]
    fn normal_is_the_signed_distance_gradient((p, u, v) in primitive_and_uv(), h in 1e-4f64..1e-2) {
        let x = p.uv_to_point(u, v);
        let n = p.normal_at(&x).unwrap();
        prop_assert!((n.norm() - 1.0).abs() < 1e-12);
        let d = p.signed_distance(&(x + n * h));
        prop_assert!((d - h).abs() < 1e-6 * (1.0 + h), "{:?}: {d} vs {h}", p.kind());
    }

    #[test]
    fn ray_hits_lie_on_the_surface((p, _u, _v) in primitive_and_uv(), o in vec3(), d in unit()) {
        let o = o * 3.0;
        let hits = p.ray_intersections(&o, &d);
        prop_assert!(hits.windows(2).all(|w| w[0] <= w[1]));
        for t in hits {
            prop_assert!(t > 0.0);
            let x = o + d * t;
            prop_assert!(p.distance(&x) < 1e-7 * (1.0 + t), "{:?} t={t}: {}", p.kind(), p.distance(&x));
        }
    }

    /// Frame axes agree with nalgebra's axis-angle rotation.
    #[test]
    fn frame_axes_match_rotation(w in vec3()) {
        let f = AlignmentFrame::new(w);
        let r = Rotation3::new(w);
        for (class, e) in [(AxisClass::X, Vector3::x()), (AxisClass::Y, Vector3::y()), (AxisClass::Z, Vector3::z())] {
            prop_assert!((frame_axis(&f, class).unwrap() - r * e).norm() < 1e-12);
        }
        let m = f.matrix();
        prop_assert!((m.transpose() * m - nalgebra::Matrix3::identity()).norm() < 1e-12);
        prop_assert!((m.determinant() - 1.0).abs() < 1e-12);
        prop_assert!(f.rotation.norm() <= PI + 1e-12);
    }

    #[test]
    fn frame_from_matrix_round_trips(w in vec3()) {
        let m = Rotation3::new(w).into_inner();
        prop_assert!((AlignmentFrame::from_matrix(&m).matrix() - m).norm() < 1e-9);
    }

    #[test]
    fn orthonormal_pair_completes_a_basis(a in unit()) {
        let (e1, e2) = orthonormal_pair(&a);
        prop_assert!(e1.dot(&a).abs() < 1e-12 && e2.dot(&a).abs() < 1e-12 && e1.dot(&e2).abs() < 1e-12);
        prop_assert!((e1.norm() - 1.0).abs() < 1e-12 && (e2.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unproject_then_project_is_identity(x in 0usize..64, y in 0usize..48, z in 0.1f32..20.0) {
        let k = CameraIntrinsics::with_fov(64, 48, 60.0);
        let mut d = DepthImage::new(64, 48);
        d.set(x, y, z);
        let p = pixel_point(&d, &k, x, y).unwrap();
        prop_assert!((p.z - z as f64).abs() < 1e-12);
        prop_assert!((k.project(&p) - Vector2::new(x as f64, y as f64)).norm() < 1e-9);
    }
}

#[test]
fn singular_normals_are_reported() {
    let s = SurfacePrimitive::sphere(Vector3::zeros(), 1.0);
    assert!(s.normal_at(&Vector3::zeros()).is_err());
    let c = SurfacePrimitive::cylinder(Vector3::z(), Vector3::zeros(), 1.0);
    assert!(c.normal_at(&Vector3::new(0.0, 0.0, 3.0)).is_err());
    let t = SurfacePrimitive::torus(Vector3::zeros(), Vector3::z(), 2.0, 0.5);
    assert!(t.normal_at(&Vector3::new(2.0, 0.0, 0.0)).is_err());
    assert!(t.normal_at(&Vector3::new(2.5, 0.0, 0.0)).is_ok());
}

#[test]
fn unproject_skips_invalid_pixels() {
    let k = CameraIntrinsics::with_fov(8, 6, 60.0);
    let mut d = DepthImage::filled(8, 6, 2.0);
    d.set(3, 2, f32::NAN);
    let cloud = unproject(&d, &k).unwrap();
    assert_eq!(cloud.len(), 47);
    assert!(cloud.iter().all(|c| c.pixel != (3, 2) && (c.point.z - 2.0).abs() < 1e-12));
    assert!(unproject(&DepthImage::new(4, 4), &k).is_err());
}

#[test]
fn axis_classes_cover_exactly_the_three_axes() {
    let f = AlignmentFrame::default();
    assert!(frame_axis(&f, AxisClass::Unaligned).is_err());
    assert_eq!(frame_axis(&f, AxisClass::Z).unwrap(), Vector3::z());
}
