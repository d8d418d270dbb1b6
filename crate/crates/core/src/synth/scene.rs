//! Scene description, normalization and camera pose.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::error::HarnessError;
use crate::frame::AlignmentFrame;
use crate::primitive::{AxisClass, SurfacePrimitive};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    #[default]
    Additive,
    Subtractive,
}

/// Bounded solids in model coordinates (Z up).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SolidKind {
    /// Box with edges along the model axes, optionally turned about Z.
    Box {
        center: [f64; 3],
        size: [f64; 3],
        #[serde(default)]
        yaw_deg: f64,
    },
    /// Capped cylinder from `base` along `axis` for `height`.
    Cylinder { base: [f64; 3], axis: [f64; 3], radius: f64, height: f64 },
    /// Capped cone frustum between axial distances `start` and `end`
    /// (measured from the apex along `axis`).
    Cone { apex: [f64; 3], axis: [f64; 3], half_angle_deg: f64, start: f64, end: f64 },
    Sphere { center: [f64; 3], radius: f64 },
    Torus { center: [f64; 3], axis: [f64; 3], major_radius: f64, minor_radius: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolidSpec {
    #[serde(flatten)]
    pub kind: SolidKind,
    #[serde(default)]
    pub role: Role,
}

impl SolidSpec {
    pub fn add(kind: SolidKind) -> Self {
        SolidSpec { kind, role: Role::Additive }
    }

    pub fn subtract(kind: SolidKind) -> Self {
        SolidSpec { kind, role: Role::Subtractive }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    /// Camera center and look-at target in normalized model coordinates.
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    pub intrinsics: CameraIntrinsics,
}

/// Ground slab placed under the model (top face at the model's lowest z).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundSpec {
    pub size: [f64; 2],
    #[serde(default = "default_thickness")]
    pub thickness: f64,
}

fn default_thickness() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub solids: Vec<SolidSpec>,
    #[serde(default)]
    pub ground: Option<GroundSpec>,
    pub camera: CameraPose,
    /// Rescale the additive solids so their bounding box has max side 1,
    /// centered at the origin.
    #[serde(default = "yes")]
    pub normalize: bool,
}

fn yes() -> bool {
    true
}

pub(crate) fn v(a: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

fn arr(p: &Vector3<f64>) -> [f64; 3] {
    [p.x, p.y, p.z]
}

impl SolidKind {
    /// Axis-aligned model-space bounds (conservative for curved solids).
    fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let ext = |c: Vector3<f64>, r: Vector3<f64>| (c - r, c + r);
        let disk = |a: &Vector3<f64>, r: f64| {
            let a = a.normalize();
            Vector3::new((1.0 - a.x * a.x).max(0.0).sqrt(), (1.0 - a.y * a.y).max(0.0).sqrt(), (1.0 - a.z * a.z).max(0.0).sqrt()) * r
        };
        match self {
            SolidKind::Box { center, size, yaw_deg } => {
                let (s, c) = yaw_deg.to_radians().sin_cos();
                let hx = 0.5 * (size[0] * c.abs() + size[1] * s.abs());
                let hy = 0.5 * (size[0] * s.abs() + size[1] * c.abs());
                ext(v(center), Vector3::new(hx, hy, 0.5 * size[2]))
            }
            SolidKind::Cylinder { base, axis, radius, height } => {
                let a = v(axis).normalize();
                let (p, q) = (v(base), v(base) + a * *height);
                let r = disk(&a, *radius);
                (p.inf(&q) - r, p.sup(&q) + r)
            }
            SolidKind::Cone { apex, axis, half_angle_deg, start, end } => {
                let a = v(axis).normalize();
                let t = half_angle_deg.to_radians().tan();
                let (p, q) = (v(apex) + a * *start, v(apex) + a * *end);
                let r = disk(&a, end * t);
                (p.inf(&q) - r, p.sup(&q) + r)
            }
            SolidKind::Sphere { center, radius } => ext(v(center), Vector3::repeat(*radius)),
            SolidKind::Torus { center, major_radius, minor_radius, .. } => {
                ext(v(center), Vector3::repeat(major_radius + minor_radius))
            }
        }
    }

    fn transformed(&self, scale: f64, shift: &Vector3<f64>) -> SolidKind {
        let p = |a: &[f64; 3]| arr(&((v(a) - shift) * scale));
        match self {
            SolidKind::Box { center, size, yaw_deg } => {
                SolidKind::Box { center: p(center), size: size.map(|s| s * scale), yaw_deg: *yaw_deg }
            }
            SolidKind::Cylinder { base, axis, radius, height } => {
                SolidKind::Cylinder { base: p(base), axis: *axis, radius: radius * scale, height: height * scale }
            }
            SolidKind::Cone { apex, axis, half_angle_deg, start, end } => SolidKind::Cone {
                apex: p(apex),
                axis: *axis,
                half_angle_deg: *half_angle_deg,
                start: start * scale,
                end: end * scale,
            },
            SolidKind::Sphere { center, radius } => SolidKind::Sphere { center: p(center), radius: radius * scale },
            SolidKind::Torus { center, axis, major_radius, minor_radius } => SolidKind::Torus {
                center: p(center),
                axis: *axis,
                major_radius: major_radius * scale,
                minor_radius: minor_radius * scale,
            },
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::InvalidScene(m.into()));
        if self.solids.iter().all(|s| s.role == Role::Subtractive) {
            return bad("scene needs at least one additive solid");
        }
        for s in &self.solids {
            let ok = match &s.kind {
                SolidKind::Box { size, .. } => size.iter().all(|x| *x > 0.0),
                SolidKind::Cylinder { axis, radius, height, .. } => v(axis).norm() > 0.0 && *radius > 0.0 && *height > 0.0,
                SolidKind::Cone { axis, half_angle_deg, start, end, .. } => {
                    v(axis).norm() > 0.0 && *half_angle_deg > 0.0 && *half_angle_deg < 90.0 && *start >= 0.0 && end > start
                }
                SolidKind::Sphere { radius, .. } => *radius > 0.0,
                SolidKind::Torus { axis, major_radius, minor_radius, .. } => {
                    v(axis).norm() > 0.0 && *minor_radius > 0.0 && minor_radius < major_radius
                }
            };
            if !ok {
                return bad(&format!("invalid solid {:?}", s.kind));
            }
        }
        if self.camera.intrinsics.validate().is_err() {
            return bad("invalid camera intrinsics");
        }
        if (v(&self.camera.look_at) - v(&self.camera.position)).norm() == 0.0 {
            return bad("camera looks at its own position");
        }
        Ok(())
    }

    /// Copy with the scale normalization applied and the ground slab added.
    pub fn normalized(&self) -> SceneSpec {
        let mut out = self.clone();
        if self.normalize {
            let (mut lo, mut hi) = (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY));
            for s in self.solids.iter().filter(|s| s.role == Role::Additive) {
                let (a, b) = s.kind.bounds();
                lo = lo.inf(&a);
                hi = hi.sup(&b);
            }
            let side = (hi - lo).max();
            let scale = 1.0 / side;
            let shift = (lo + hi) * 0.5;
            for s in &mut out.solids {
                s.kind = s.kind.transformed(scale, &shift);
            }
            out.normalize = false;
        }
        if let Some(g) = out.ground.take() {
            let zmin = out
                .solids
                .iter()
                .filter(|s| s.role == Role::Additive)
                .map(|s| s.kind.bounds().0.z)
                .fold(f64::INFINITY, f64::min);
            out.solids.push(SolidSpec::add(SolidKind::Box {
                center: [0.0, 0.0, zmin - 0.5 * g.thickness],
                size: [g.size[0], g.size[1], g.thickness],
                yaw_deg: 0.0,
            }));
        }
        out
    }

    /// World-to-camera rotation columns (camera x right, y down, z forward)
    /// expressed in model coordinates.
    pub fn camera_axes(&self) -> Matrix3<f64> {
        let f = (v(&self.camera.look_at) - v(&self.camera.position)).normalize();
        let up = Vector3::z();
        let mut x = f.cross(&up);
        if x.norm() < 1e-9 {
            x = f.cross(&Vector3::y());
        }
        let x = x.normalize();
        let y = f.cross(&x);
        Matrix3::from_columns(&[x, y, f])
    }
}

/// Model-to-camera rigid transform.
#[derive(Clone, Copy, Debug)]
pub struct Pose {
    pub axes: Matrix3<f64>,
    pub center: Vector3<f64>,
}

impl Pose {
    pub fn point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.axes.transpose() * (p - self.center)
    }

    pub fn dir(&self, d: &Vector3<f64>) -> Vector3<f64> {
        self.axes.transpose() * d
    }
}

/// View-corrected model frame: X is the horizontal model axis closer to
/// parallel with the viewing direction, Z is model up.
pub fn view_corrected_frame(forward: &Vector3<f64>) -> Matrix3<f64> {
    let (ex, ey) = (Vector3::x(), Vector3::y());
    let mut x = if forward.dot(&ex).abs() >= forward.dot(&ey).abs() { ex } else { ey };
    if x.dot(forward) < 0.0 {
        x = -x;
    }
    let z = Vector3::z();
    let y = z.cross(&x);
    Matrix3::from_columns(&[x, y, z])
}

/// Axis class of a primitive axis against the view-corrected frame; aligned
/// when within 1.5 degrees of a frame axis (either sign).
pub fn axis_label(axis: Option<&Vector3<f64>>, frame: &Matrix3<f64>) -> Result<AxisClass, HarnessError> {
    let a = axis.ok_or(HarnessError::NoAxis)?.normalize();
    let classes = [AxisClass::X, AxisClass::Y, AxisClass::Z];
    let mut best = (f64::INFINITY, AxisClass::Unaligned);
    for (k, c) in classes.iter().enumerate() {
        let ang = a.dot(&frame.column(k)).abs().min(1.0).acos();
        if ang < best.0 {
            best = (ang, *c);
        }
    }
    Ok(if best.0.to_degrees() < 1.5 { best.1 } else { AxisClass::Unaligned })
}

/// Alignment frame (camera coordinates) of a model frame.
pub fn camera_frame(model_frame: &Matrix3<f64>, pose: &Pose) -> AlignmentFrame {
    AlignmentFrame::from_matrix(&(pose.axes.transpose() * model_frame))
}

pub(crate) fn label_primitive(p: SurfacePrimitive, model_axis: Option<Vector3<f64>>, frame: &Matrix3<f64>) -> SurfacePrimitive {
    let class = axis_label(model_axis.as_ref(), frame).unwrap_or(AxisClass::Unaligned);
    p.with_axis_class(class)
}
