//! Seeded scene families used by tests, the CLI and evaluation suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{CameraPose, SceneSpec, SolidKind, SolidSpec};
use crate::camera::CameraIntrinsics;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    Box,
    /// Plate with a through hole.
    Bore,
    /// Plate with a cylindrical boss on top.
    Boss,
    /// Two boxes forming an L.
    Step,
    Cylinder,
    Sphere,
    Cone,
    Torus,
}

impl std::str::FromStr for SceneKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase())).map_err(|_| format!("unknown scene kind `{s}`"))
    }
}

impl SceneKind {
    pub const SUITE: [SceneKind; 5] = [SceneKind::Box, SceneKind::Boss, SceneKind::Bore, SceneKind::Step, SceneKind::Cylinder];
}

/// Camera on a sphere around the origin, looking at it.
pub fn orbit_camera(azimuth_deg: f64, elevation_deg: f64, distance: f64, k: CameraIntrinsics) -> CameraPose {
    let (a, e) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
    CameraPose {
        position: [distance * e.cos() * a.cos(), distance * e.cos() * a.sin(), distance * e.sin()],
        look_at: [0.0; 3],
        intrinsics: k,
    }
}

/// Scene of the given family; dimensions and view vary with `seed`.
pub fn scene(kind: SceneKind, seed: u64, width: usize, height: usize) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0000 ^ (kind as u64) << 40);
    let k = CameraIntrinsics::with_fov(width, height, 50.0);
    let mut u = |lo: f64, hi: f64| rng.gen_range(lo..hi);
    let add = SolidSpec::add;
    let (solids, az, el) = match kind {
        SceneKind::Box => {
            let size = [1.0, u(0.55, 0.95), u(0.45, 0.9)];
            (vec![add(SolidKind::Box { center: [0.0; 3], size, yaw_deg: 0.0 })], u(25.0, 65.0), u(25.0, 40.0))
        }
        SceneKind::Bore => {
            let t = u(0.25, 0.4);
            let r = u(0.15, 0.25);
            (
                vec![
                    add(SolidKind::Box { center: [0.0; 3], size: [1.0, u(0.8, 1.0), t], yaw_deg: 0.0 }),
                    SolidSpec::subtract(SolidKind::Cylinder { base: [0.0, 0.0, -t], axis: [0.0, 0.0, 1.0], radius: r, height: 2.0 * t }),
                ],
                u(20.0, 70.0),
                u(50.0, 65.0),
            )
        }
        SceneKind::Boss => {
            let t = u(0.2, 0.35);
            let h = u(0.2, 0.4);
            let r = u(0.15, 0.25);
            (
                vec![
                    add(SolidKind::Box { center: [0.0; 3], size: [1.0, u(0.8, 1.0), t], yaw_deg: 0.0 }),
                    add(SolidKind::Cylinder { base: [0.0, 0.0, 0.5 * t - 0.01], axis: [0.0, 0.0, 1.0], radius: r, height: h + 0.01 }),
                ],
                u(20.0, 70.0),
                u(30.0, 45.0),
            )
        }
        SceneKind::Step => {
            let h1 = u(0.3, 0.45);
            let h2 = u(0.35, 0.55);
            (
                vec![
                    add(SolidKind::Box { center: [0.0, 0.0, 0.5 * h1], size: [1.0, 0.8, h1], yaw_deg: 0.0 }),
                    add(SolidKind::Box { center: [-0.3, 0.0, h1 + 0.5 * h2 - 0.01], size: [0.4, 0.8, h2 + 0.01], yaw_deg: 0.0 }),
                ],
                u(25.0, 60.0),
                u(25.0, 40.0),
            )
        }
        SceneKind::Cylinder => {
            let r = u(0.25, 0.4);
            (
                vec![add(SolidKind::Cylinder { base: [0.0, 0.0, -0.5], axis: [0.0, 0.0, 1.0], radius: r, height: 1.0 })],
                u(0.0, 90.0),
                u(20.0, 35.0),
            )
        }
        SceneKind::Sphere => (vec![add(SolidKind::Sphere { center: [0.0; 3], radius: 0.5 })], u(0.0, 90.0), u(10.0, 40.0)),
        SceneKind::Cone => {
            let ang = u(20.0, 35.0);
            (
                vec![add(SolidKind::Cone { apex: [0.0, 0.0, 0.6], axis: [0.0, 0.0, -1.0], half_angle_deg: ang, start: 0.1, end: 1.0 })],
                u(0.0, 90.0),
                u(15.0, 30.0),
            )
        }
        SceneKind::Torus => {
            let rr = u(0.1, 0.15);
            (
                vec![add(SolidKind::Torus { center: [0.0; 3], axis: [0.0, 0.0, 1.0], major_radius: 0.5 - rr, minor_radius: rr })],
                u(0.0, 90.0),
                u(35.0, 55.0),
            )
        }
    };
    SceneSpec { solids, ground: None, camera: orbit_camera(az, el, 2.0, k), normalize: true }
}

/// Mixed suite of `n` scenes cycling through [`SceneKind::SUITE`].
pub fn suite(n: usize, seed: u64, width: usize, height: usize) -> Vec<(SceneKind, SceneSpec)> {
    (0..n)
        .map(|i| {
            let kind = SceneKind::SUITE[i % SceneKind::SUITE.len()];
            (kind, scene(kind, seed.wrapping_add(i as u64), width, height))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitive::PrimitiveType;
    use crate::synth::raycast_scene;

    #[test]
    fn every_family_renders() {
        for kind in [
            SceneKind::Box,
            SceneKind::Bore,
            SceneKind::Boss,
            SceneKind::Step,
            SceneKind::Cylinder,
            SceneKind::Sphere,
            SceneKind::Cone,
            SceneKind::Torus,
        ] {
            let gt = raycast_scene(&scene(kind, 3, 96, 72)).unwrap();
            let kinds: Vec<_> = gt.primitives.values().map(|p| p.kind()).collect();
            let want = match kind {
                SceneKind::Box | SceneKind::Step => PrimitiveType::Plane,
                SceneKind::Bore | SceneKind::Boss | SceneKind::Cylinder => PrimitiveType::Cylinder,
                SceneKind::Sphere => PrimitiveType::Sphere,
                SceneKind::Cone => PrimitiveType::Cone,
                SceneKind::Torus => PrimitiveType::Torus,
            };
            assert!(kinds.contains(&want), "{kind:?}: {kinds:?}");
        }
    }

    #[test]
    fn box_shows_three_faces() {
        for seed in 0..5 {
            let gt = raycast_scene(&scene(SceneKind::Box, seed, 160, 120)).unwrap();
            assert_eq!(gt.instances.instance_ids().len(), 3);
        }
    }
}
