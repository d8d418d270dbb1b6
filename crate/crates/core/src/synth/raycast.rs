//! Analytic ray casting with ray-interval CSG.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scene::{camera_frame, label_primitive, v, view_corrected_frame, Pose, Role, SceneSpec, SolidKind};
use crate::camera::{CameraIntrinsics, DepthImage};
use crate::edge_graph::{InstanceMap, Label, LabelTable};
use crate::error::HarnessError;
use crate::frame::AlignmentFrame;
use crate::primitive::{solve_quadratic, SurfacePrimitive};

const NONE: usize = usize::MAX;

/// Span `[t0, t1]` of a ray inside a solid; `s0`/`s1` are the surfaces
/// crossed at the ends.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Span {
    t0: f64,
    s0: usize,
    t1: f64,
    s1: usize,
}

fn intersect(a: &[Span], b: &[Span]) -> Vec<Span> {
    let mut out = Vec::new();
    for x in a {
        for y in b {
            let (t0, s0) = if x.t0 >= y.t0 { (x.t0, x.s0) } else { (y.t0, y.s0) };
            let (t1, s1) = if x.t1 <= y.t1 { (x.t1, x.s1) } else { (y.t1, y.s1) };
            if t0 < t1 {
                out.push(Span { t0, s0, t1, s1 });
            }
        }
    }
    out.sort_by(|p, q| p.t0.partial_cmp(&q.t0).unwrap());
    out
}

fn union(mut spans: Vec<Span>) -> Vec<Span> {
    spans.sort_by(|p, q| p.t0.partial_cmp(&q.t0).unwrap());
    let mut out: Vec<Span> = Vec::new();
    for s in spans {
        match out.last_mut() {
            Some(l) if s.t0 <= l.t1 => {
                if s.t1 > l.t1 {
                    l.t1 = s.t1;
                    l.s1 = s.s1;
                }
            }
            _ => out.push(s),
        }
    }
    out
}

fn subtract(a: &[Span], b: &[Span]) -> Vec<Span> {
    let mut cur = a.to_vec();
    for y in b {
        let mut next = Vec::new();
        for x in cur {
            if y.t1 <= x.t0 || y.t0 >= x.t1 {
                next.push(x);
                continue;
            }
            if y.t0 > x.t0 {
                next.push(Span { t0: x.t0, s0: x.s0, t1: y.t0, s1: y.s0 });
            }
            if y.t1 < x.t1 {
                next.push(Span { t0: y.t1, s0: y.s1, t1: x.t1, s1: x.s1 });
            }
        }
        cur = next;
    }
    cur
}

/// `{t : a t^2 + b t + c <= 0}` with both boundaries tagged `id`.
fn quadric_region(a: f64, b: f64, c: f64, id: usize) -> Vec<Span> {
    let inf = f64::INFINITY;
    let roots = solve_quadratic(a, b, c);
    let all = || vec![Span { t0: -inf, s0: NONE, t1: inf, s1: NONE }];
    match roots.len() {
        0 => {
            if c <= 0.0 && a <= 0.0 {
                all()
            } else {
                vec![]
            }
        }
        1 => {
            // linear: b t + c <= 0
            let r = roots[0];
            if b > 0.0 {
                vec![Span { t0: -inf, s0: NONE, t1: r, s1: id }]
            } else {
                vec![Span { t0: r, s0: id, t1: inf, s1: NONE }]
            }
        }
        _ => {
            let (r0, r1) = (roots[0], roots[1]);
            if a > 0.0 {
                vec![Span { t0: r0, s0: id, t1: r1, s1: id }]
            } else {
                vec![Span { t0: -inf, s0: NONE, t1: r0, s1: id }, Span { t0: r1, s0: id, t1: inf, s1: NONE }]
            }
        }
    }
}

/// `{t : lo <= h0 + t hd <= hi}`, boundaries tagged `id_lo` / `id_hi`.
fn slab(h0: f64, hd: f64, lo: f64, hi: f64, id_lo: usize, id_hi: usize) -> Vec<Span> {
    if hd.abs() < 1e-15 {
        return if h0 >= lo && h0 <= hi {
            vec![Span { t0: f64::NEG_INFINITY, s0: NONE, t1: f64::INFINITY, s1: NONE }]
        } else {
            vec![]
        };
    }
    let (ta, tb) = ((lo - h0) / hd, (hi - h0) / hd);
    if ta < tb {
        vec![Span { t0: ta, s0: id_lo, t1: tb, s1: id_hi }]
    } else {
        vec![Span { t0: tb, s0: id_hi, t1: ta, s1: id_lo }]
    }
}

/// A solid in camera coordinates with the indices of its surfaces.
#[derive(Clone, Debug)]
enum CamSolid {
    Box { center: Vector3<f64>, axes: Matrix3<f64>, half: Vector3<f64>, faces: [usize; 6] },
    Cylinder { base: Vector3<f64>, axis: Vector3<f64>, radius: f64, height: f64, side: usize, caps: [usize; 2] },
    Cone { apex: Vector3<f64>, axis: Vector3<f64>, tan: f64, start: f64, end: f64, side: usize, caps: [usize; 2] },
    Sphere { center: Vector3<f64>, radius: f64, side: usize },
    Torus { prim: SurfacePrimitive, side: usize },
}

impl CamSolid {
    fn spans(&self, d: &Vector3<f64>) -> Vec<Span> {
        match self {
            CamSolid::Box { center, axes, half, faces } => {
                let o = -center;
                let mut acc = vec![Span { t0: f64::NEG_INFINITY, s0: NONE, t1: f64::INFINITY, s1: NONE }];
                for k in 0..3 {
                    let a = axes.column(k);
                    let s = slab(o.dot(&a), d.dot(&a), -half[k], half[k], faces[2 * k], faces[2 * k + 1]);
                    acc = intersect(&acc, &s);
                }
                acc
            }
            CamSolid::Cylinder { base, axis, radius, height, side, caps } => {
                let o = -base;
                let (oa, da) = (o.dot(axis), d.dot(axis));
                let (op, dp) = (o - axis * oa, d - axis * da);
                let q = quadric_region(dp.dot(&dp), 2.0 * op.dot(&dp), op.dot(&op) - radius * radius, *side);
                intersect(&q, &slab(oa, da, 0.0, *height, caps[0], caps[1]))
            }
            CamSolid::Cone { apex, axis, tan, start, end, side, caps } => {
                let o = -apex;
                let (oa, da) = (o.dot(axis), d.dot(axis));
                let (op, dp) = (o - axis * oa, d - axis * da);
                let t2 = tan * tan;
                // rho^2 - tan^2 h^2 <= 0 covers both nappes; the slab keeps h >= start >= 0
                let q = quadric_region(
                    dp.dot(&dp) - t2 * da * da,
                    2.0 * (op.dot(&dp) - t2 * oa * da),
                    op.dot(&op) - t2 * oa * oa,
                    *side,
                );
                intersect(&q, &slab(oa, da, *start, *end, caps[0], caps[1]))
            }
            CamSolid::Sphere { center, radius, side } => {
                let o = -center;
                quadric_region(d.dot(d), 2.0 * o.dot(d), o.dot(&o) - radius * radius, *side)
            }
            CamSolid::Torus { prim, side } => {
                let n = d.norm();
                let hits = prim.ray_intersections(&Vector3::zeros(), &(d / n));
                hits.chunks_exact(2).map(|w| Span { t0: w[0] / n, s0: *side, t1: w[1] / n, s1: *side }).collect()
            }
        }
    }
}

/// Surface of the scene with its truth primitive in camera coordinates.
#[derive(Clone, Debug)]
pub struct SceneSurface {
    pub primitive: SurfacePrimitive,
    pub solid: usize,
}

/// Scene prepared for ray casting.
#[derive(Clone, Debug)]
pub struct PreparedScene {
    solids: Vec<(CamSolid, Role)>,
    pub surfaces: Vec<SceneSurface>,
    pub intrinsics: CameraIntrinsics,
    pub frame: AlignmentFrame,
}

impl PreparedScene {
    pub fn new(spec: &SceneSpec) -> Result<Self, HarnessError> {
        spec.validate()?;
        let spec = spec.normalized();
        let axes = spec.camera_axes();
        let pose = Pose { axes, center: v(&spec.camera.position) };
        let model_frame = view_corrected_frame(&axes.column(2).into_owned());
        let mut surfaces = Vec::new();
        let mut solids = Vec::new();
        let mut add = |prim: SurfacePrimitive, model_axis: Option<Vector3<f64>>, solid: usize| -> usize {
            surfaces.push(SceneSurface { primitive: label_primitive(prim, model_axis, &model_frame), solid });
            surfaces.len() - 1
        };
        for (si, s) in spec.solids.iter().enumerate() {
            let cs = match &s.kind {
                SolidKind::Box { center, size, yaw_deg } => {
                    let (sn, cs) = yaw_deg.to_radians().sin_cos();
                    let model_axes = [Vector3::new(cs, sn, 0.0), Vector3::new(-sn, cs, 0.0), Vector3::z()];
                    let c = pose.point(&v(center));
                    let cam_axes = Matrix3::from_columns(&model_axes.map(|a| pose.dir(&a)));
                    let half = Vector3::new(size[0], size[1], size[2]) * 0.5;
                    let mut faces = [0; 6];
                    for k in 0..3 {
                        for (j, sign) in [-1.0, 1.0].into_iter().enumerate() {
                            let n = cam_axes.column(k) * sign;
                            let off = n.dot(&(c + n * half[k]));
                            faces[2 * k + j] = add(SurfacePrimitive::plane(n, off), Some(model_axes[k]), si);
                        }
                    }
                    CamSolid::Box { center: c, axes: cam_axes, half, faces }
                }
                SolidKind::Cylinder { base, axis, radius, height } => {
                    let am = v(axis).normalize();
                    let (b, a) = (pose.point(&v(base)), pose.dir(&am));
                    let side = add(SurfacePrimitive::cylinder(a, b, *radius), Some(am), si);
                    let c0 = add(SurfacePrimitive::plane(-a, -a.dot(&b)), Some(am), si);
                    let top = b + a * *height;
                    let c1 = add(SurfacePrimitive::plane(a, a.dot(&top)), Some(am), si);
                    CamSolid::Cylinder { base: b, axis: a, radius: *radius, height: *height, side, caps: [c0, c1] }
                }
                SolidKind::Cone { apex, axis, half_angle_deg, start, end } => {
                    let am = v(axis).normalize();
                    let (p, a) = (pose.point(&v(apex)), pose.dir(&am));
                    let ang = half_angle_deg.to_radians();
                    let side = add(SurfacePrimitive::cone(p, a, ang), Some(am), si);
                    let c0 = add(SurfacePrimitive::plane(-a, -a.dot(&(p + a * *start))), Some(am), si);
                    let c1 = add(SurfacePrimitive::plane(a, a.dot(&(p + a * *end))), Some(am), si);
                    CamSolid::Cone { apex: p, axis: a, tan: ang.tan(), start: *start, end: *end, side, caps: [c0, c1] }
                }
                SolidKind::Sphere { center, radius } => {
                    let c = pose.point(&v(center));
                    let side = add(SurfacePrimitive::sphere(c, *radius), None, si);
                    CamSolid::Sphere { center: c, radius: *radius, side }
                }
                SolidKind::Torus { center, axis, major_radius, minor_radius } => {
                    let am = v(axis).normalize();
                    let prim = SurfacePrimitive::torus(pose.point(&v(center)), pose.dir(&am), *major_radius, *minor_radius);
                    let side = add(prim.clone(), Some(am), si);
                    CamSolid::Torus { prim, side }
                }
            };
            solids.push((cs, s.role));
        }
        Ok(PreparedScene { solids, surfaces, intrinsics: spec.camera.intrinsics, frame: camera_frame(&model_frame, &pose) })
    }

    /// Nearest visible surface along the ray through image point `q`, as
    /// `(depth, surface index)`.
    pub fn cast(&self, q: Vector2<f64>) -> Option<(f64, usize)> {
        let d = self.intrinsics.view_ray(q);
        let mut add = Vec::new();
        let mut sub = Vec::new();
        for (s, role) in &self.solids {
            let spans = s.spans(&d);
            match role {
                Role::Additive => add.extend(spans),
                Role::Subtractive => sub.extend(spans),
            }
        }
        let solid = subtract(&union(add), &union(sub));
        // `d` has unit z, so the ray parameter is the depth
        solid.iter().find(|s| s.t1 > 0.0).and_then(|s| (s.t0 > 0.0 && s.s0 != NONE).then_some((s.t0, s.s0)))
    }
}

/// Harness output bundle.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub depth: DepthImage,
    pub instances: InstanceMap,
    pub primitives: BTreeMap<u16, SurfacePrimitive>,
    pub frame: AlignmentFrame,
    pub camera: CameraIntrinsics,
}

/// `truth.json` contents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub frame: AlignmentFrame,
    pub primitives: BTreeMap<u16, SurfacePrimitive>,
}

impl GroundTruth {
    pub fn truth_file(&self) -> TruthFile {
        TruthFile { frame: self.frame, primitives: self.primitives.clone() }
    }
}

/// Renders depth and instance ids; instance ids are assigned to visible
/// surfaces in scene order starting at 1.
pub fn raycast_scene(spec: &SceneSpec) -> Result<GroundTruth, HarnessError> {
    let scene = PreparedScene::new(spec)?;
    let k = scene.intrinsics;
    let hits: Vec<Option<(f64, usize)>> = (0..k.width * k.height)
        .into_par_iter()
        .map(|i| scene.cast(Vector2::new((i % k.width) as f64, (i / k.width) as f64)))
        .collect();
    let mut ids_of: BTreeMap<usize, u16> = BTreeMap::new();
    for h in hits.iter().flatten() {
        ids_of.insert(h.1, 0);
    }
    if ids_of.is_empty() {
        return Err(HarnessError::EmptyFrame);
    }
    if ids_of.len() > u16::MAX as usize {
        return Err(HarnessError::InvalidScene("too many visible surfaces".into()));
    }
    for (n, id) in ids_of.values_mut().enumerate() {
        *id = n as u16 + 1;
    }
    let mut depth = DepthImage::new(k.width, k.height);
    let mut ids = vec![0u16; k.width * k.height];
    for (i, h) in hits.iter().enumerate() {
        if let Some((t, s)) = h {
            depth.data[i] = *t as f32;
            ids[i] = ids_of[s];
        }
    }
    let mut labels = LabelTable::new();
    let mut primitives = BTreeMap::new();
    for (s, id) in &ids_of {
        let p = scene.surfaces[*s].primitive.clone();
        labels.insert(*id, Label { kind: p.kind(), axis_class: p.axis_class });
        primitives.insert(*id, p);
    }
    Ok(GroundTruth {
        depth,
        instances: InstanceMap::new(k.width, k.height, ids, labels),
        primitives,
        frame: scene.frame,
        camera: k,
    })
}
