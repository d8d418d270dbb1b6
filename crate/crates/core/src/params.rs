//! Flat parameter vectors for joint optimization of primitives and the
//! shared alignment frame.
//!
//! Layout: `[frame rotation (3, only when some primitive is aligned) |
//! primitive 0 | primitive 1 | ...]`. Aligned axes are never stored: they
//! are recomputed from the frame, so the constraint holds exactly.
//!
//! Per-type blocks (axis dof is 2 when unaligned, 0 when aligned):
//!
//! | type     | block                                  |
//! |----------|----------------------------------------|
//! | plane    | axis dof, offset                       |
//! | cylinder | axis dof, 2 point offsets, radius      |
//! | sphere   | center (3), radius                     |
//! | cone     | apex (3), axis dof, half-angle         |
//! | torus    | center (3), axis dof, major, minor     |

use nalgebra::{Matrix3, Vector3};

use crate::frame::{frame_axis_t, orthonormal_pair, AlignmentFrame, TangentPerturbation};
use crate::primitive::{AxisClass, PrimitiveType, Shape, SurfacePrimitive};
use crate::real::{lift, Dual, Real, V3};

/// Dual scalar used for Jacobian rows: slots `0..3` frame, `3..11`
/// primitive block, `11` a per-row local variable.
pub type D = Dual<12>;
pub const FRAME_SLOT: usize = 0;
pub const PRIM_SLOT: usize = 3;
pub const LOCAL_SLOT: usize = 11;

#[derive(Clone, Debug)]
enum AxisParam {
    None,
    Free(TangentPerturbation),
    /// `sign * frame_axis(R, class)`; the sign only matters for cones.
    Frame(AxisClass, f64),
}

#[derive(Clone, Debug)]
pub struct PrimParam {
    kind: PrimitiveType,
    class: AxisClass,
    axis: AxisParam,
    /// Cylinder axis-point origin and its in-plane offset directions.
    origin: Vector3<f64>,
    pair: (Vector3<f64>, Vector3<f64>),
    /// Held constant (no parameters) when set.
    fixed: Option<Shape<f64>>,
    len: usize,
}

impl PrimParam {
    fn axis_dof(&self) -> usize {
        match self.axis {
            AxisParam::Free(_) => 2,
            _ => 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn uses_frame(&self) -> bool {
        self.fixed.is_none() && matches!(self.axis, AxisParam::Frame(..))
    }

    fn axis_t<T: Real>(&self, rot: &V3<T>, p: &[T]) -> V3<T> {
        match &self.axis {
            AxisParam::Free(t) => t.eval(p[0], p[1]),
            AxisParam::Frame(c, s) => frame_axis_t(rot, *c).expect("aligned class") * T::cst(*s),
            AxisParam::None => V3::<T>::zeros(),
        }
    }

    /// Surface for parameters `p` (this primitive's block) and frame `rot`.
    pub fn shape<T: Real>(&self, rot: &V3<T>, p: &[T]) -> Shape<T> {
        if let Some(s) = &self.fixed {
            return s.lift();
        }
        let k = self.axis_dof();
        match self.kind {
            PrimitiveType::Plane => Shape::Plane { normal: self.axis_t(rot, p), offset: p[k] },
            PrimitiveType::Cylinder => {
                let point = lift::<T>(&self.origin) + lift::<T>(&self.pair.0) * p[k] + lift::<T>(&self.pair.1) * p[k + 1];
                Shape::Cylinder { axis: self.axis_t(rot, p), point, radius: p[k + 2] }
            }
            PrimitiveType::Sphere => Shape::Sphere { center: V3::new(p[0], p[1], p[2]), radius: p[3] },
            PrimitiveType::Cone => Shape::Cone {
                apex: V3::new(p[0], p[1], p[2]),
                axis: self.axis_t(rot, &p[3..]),
                half_angle: p[3 + k],
            },
            PrimitiveType::Torus => Shape::Torus {
                center: V3::new(p[0], p[1], p[2]),
                axis: self.axis_t(rot, &p[3..]),
                major_radius: p[3 + k],
                minor_radius: p[4 + k],
            },
        }
    }
}

/// Parameterization of a set of primitives sharing one alignment frame.
#[derive(Clone, Debug)]
pub struct ParamModel {
    pub frame_free: bool,
    pub specs: Vec<PrimParam>,
    pub offsets: Vec<usize>,
    pub n_global: usize,
}

impl ParamModel {
    /// Builds the model and its initial vector. Primitives with an aligned
    /// class are tied to `frame` when `use_axis` is set; `fixed[i]` holds a
    /// primitive constant.
    pub fn new(prims: &[SurfacePrimitive], frame: &AlignmentFrame, use_axis: bool, fixed: &[bool]) -> (Self, Vec<f64>) {
        let frame_free = use_axis
            && prims.iter().zip(fixed).any(|(p, &f)| !f && p.axis_class.is_aligned() && p.kind().has_axis());
        let mut x = Vec::new();
        if frame_free {
            x.extend(frame.rotation.iter());
        }
        let mut specs = Vec::new();
        let mut offsets = Vec::new();
        for (prim, &fix) in prims.iter().zip(fixed) {
            offsets.push(x.len());
            if fix {
                specs.push(PrimParam {
                    kind: prim.kind(),
                    class: prim.axis_class,
                    axis: AxisParam::None,
                    origin: Vector3::zeros(),
                    pair: (Vector3::x(), Vector3::y()),
                    fixed: Some(prim.shape.clone()),
                    len: 0,
                });
                continue;
            }
            let aligned = frame_free && prim.axis_class.is_aligned() && prim.kind().has_axis();
            let cur_axis = prim.axis();
            let axis = match (cur_axis, aligned) {
                (None, _) => AxisParam::None,
                (Some(a), true) => {
                    let fa = frame.axis(prim.axis_class).expect("aligned");
                    let sign = if prim.kind() == PrimitiveType::Cone && a.dot(&fa) < 0.0 { -1.0 } else { 1.0 };
                    AxisParam::Frame(prim.axis_class, sign)
                }
                (Some(a), false) => AxisParam::Free(TangentPerturbation::new(a)),
            };
            let axis_now = match &axis {
                AxisParam::Frame(c, s) => Some(frame.axis(*c).unwrap() * *s),
                AxisParam::Free(t) => Some(t.base),
                AxisParam::None => None,
            };
            let free_axis = matches!(axis, AxisParam::Free(_));
            let push_axis = |x: &mut Vec<f64>| {
                if free_axis {
                    x.extend([0.0, 0.0]);
                }
            };
            let mut origin = Vector3::zeros();
            let mut pair = (Vector3::x(), Vector3::y());
            match &prim.shape {
                Shape::Plane { normal, offset } => {
                    let n = axis_now.unwrap();
                    push_axis(&mut x);
                    // same surface with the normal replaced by +/- the new one
                    x.push(if n.dot(normal) >= 0.0 { *offset } else { -*offset });
                }
                Shape::Cylinder { point, radius, .. } => {
                    let a = axis_now.unwrap();
                    origin = *point;
                    pair = orthonormal_pair(&a);
                    push_axis(&mut x);
                    x.extend([0.0, 0.0, *radius]);
                }
                Shape::Sphere { center, radius } => x.extend([center.x, center.y, center.z, *radius]),
                Shape::Cone { apex, half_angle, .. } => {
                    x.extend(apex.iter());
                    push_axis(&mut x);
                    x.push(*half_angle);
                }
                Shape::Torus { center, major_radius, minor_radius, .. } => {
                    x.extend(center.iter());
                    push_axis(&mut x);
                    x.extend([*major_radius, *minor_radius]);
                }
            }
            let len = x.len() - offsets.last().unwrap();
            specs.push(PrimParam { kind: prim.kind(), class: prim.axis_class, axis, origin, pair, fixed: None, len });
        }
        let n_global = x.len();
        (ParamModel { frame_free, specs, offsets, n_global }, x)
    }

    pub fn frame(&self, x: &[f64], fallback: &AlignmentFrame) -> AlignmentFrame {
        if self.frame_free {
            AlignmentFrame::new(Vector3::new(x[0], x[1], x[2]))
        } else {
            *fallback
        }
    }

    fn rotation<T: Real>(&self, x: &[f64]) -> V3<T> {
        if !self.frame_free {
            return V3::zeros();
        }
        V3::new(T::cst(x[0]), T::cst(x[1]), T::cst(x[2]))
    }

    pub fn block<'a>(&self, i: usize, x: &'a [f64]) -> &'a [f64] {
        &x[self.offsets[i]..self.offsets[i] + self.specs[i].len]
    }

    /// Plain-valued primitive `i`.
    pub fn primitive(&self, i: usize, x: &[f64]) -> SurfacePrimitive {
        let rot = self.rotation::<f64>(x);
        let shape = self.specs[i].shape(&rot, self.block(i, x));
        let mut p = SurfacePrimitive { shape, axis_class: self.specs[i].class };
        tidy(&mut p, self.specs[i].uses_frame());
        p
    }

    pub fn primitives(&self, x: &[f64]) -> Vec<SurfacePrimitive> {
        (0..self.specs.len()).map(|i| self.primitive(i, x)).collect()
    }

    /// Dual-valued primitive `i` with frame and block variables seeded.
    pub fn dual_shape(&self, i: usize, x: &[f64]) -> Shape<D> {
        let rot = if self.frame_free && self.specs[i].uses_frame() {
            V3::new(D::var(x[0], FRAME_SLOT), D::var(x[1], FRAME_SLOT + 1), D::var(x[2], FRAME_SLOT + 2))
        } else {
            self.rotation::<D>(x)
        };
        let block: Vec<D> = self.block(i, x).iter().enumerate().map(|(k, &v)| D::var(v, PRIM_SLOT + k)).collect();
        self.specs[i].shape(&rot, &block)
    }

    /// Global indices of the dual slots used by primitive `i`.
    pub fn slots(&self, i: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        if self.frame_free && self.specs[i].uses_frame() {
            out.extend((0..3).map(|k| (FRAME_SLOT + k, k)));
        }
        out.extend((0..self.specs[i].len).map(|k| (PRIM_SLOT + k, self.offsets[i] + k)));
        out
    }

    /// Re-centers unaligned axis perturbations at the current values so
    /// they stay well conditioned; returns the rebuilt model and vector.
    pub fn rebase(&self, x: &[f64], frame: &AlignmentFrame, use_axis: bool) -> (Self, Vec<f64>) {
        let prims = self.primitives(x);
        let fixed: Vec<bool> = self.specs.iter().map(|s| s.fixed.is_some()).collect();
        ParamModel::new(&prims, &self.frame(x, frame), use_axis, &fixed)
    }
}

/// Emits signed-distance rows for one primitive: `weight * sd(p)` with its
/// sparse Jacobian.
pub fn emit_distance_rows(
    shape: &Shape<D>,
    slots: &[(usize, usize)],
    points: impl Iterator<Item = Vector3<f64>>,
    weight: f64,
    jacobian: bool,
    plain: &Shape<f64>,
    sink: &mut crate::lm::RowSink<'_>,
) {
    let mut row = Vec::with_capacity(slots.len());
    for p in points {
        if jacobian {
            let sd = shape.signed_distance(&lift::<D>(&p));
            row.clear();
            row.extend(slots.iter().map(|&(s, g)| (g, sd.eps[s] * weight)));
            sink(sd.re * weight, &row, None);
        } else {
            sink(plain.signed_distance(&p) * weight, &[], None);
        }
    }
}

/// Post-solve cleanup: positive radii, cylinder axis point at the foot of
/// the perpendicular from the origin, unaligned axes gauge-fixed.
pub fn tidy(p: &mut SurfacePrimitive, keep_axis: bool) {
    match &mut p.shape {
        Shape::Cylinder { radius, .. } | Shape::Sphere { radius, .. } => *radius = radius.abs(),
        Shape::Torus { major_radius, minor_radius, .. } => {
            *major_radius = major_radius.abs();
            *minor_radius = minor_radius.abs();
        }
        _ => {}
    }
    if keep_axis {
        if let Shape::Cylinder { axis, point, .. } = &mut p.shape {
            *point -= *axis * point.dot(axis);
        }
    } else {
        *p = p.gauge_fixed();
    }
}

/// Rotation best mapping the canonical axes onto the class-mean axes of the
/// aligned primitives (signs chosen to minimize the misfit).
pub fn initial_frame(prims: &[SurfacePrimitive]) -> AlignmentFrame {
    let classes = [AxisClass::X, AxisClass::Y, AxisClass::Z];
    let canon = [Vector3::x(), Vector3::y(), Vector3::z()];
    let mut means: Vec<(Vector3<f64>, Vector3<f64>)> = Vec::new();
    for (c, e) in classes.iter().zip(canon) {
        let axes: Vec<Vector3<f64>> = prims.iter().filter(|p| p.axis_class == *c).filter_map(|p| p.axis()).collect();
        if axes.is_empty() {
            continue;
        }
        let mut m = Vector3::zeros();
        for a in &axes {
            m += if a.dot(&axes[0]) >= 0.0 { *a } else { -a };
        }
        if m.norm() > 0.0 {
            means.push((e, m.normalize()));
        }
    }
    match means.len() {
        0 => AlignmentFrame::default(),
        1 => {
            let (e, m) = means[0];
            let r = nalgebra::Rotation3::rotation_between(&e, &m)
                .unwrap_or_else(|| nalgebra::Rotation3::from_axis_angle(&orthonormal_pair_unit(&e), std::f64::consts::PI));
            AlignmentFrame::new(r.scaled_axis())
        }
        k => {
            let mut best: Option<(f64, Matrix3<f64>)> = None;
            for signs in 0..(1u32 << k) {
                let mut h = Matrix3::zeros();
                for (j, (e, m)) in means.iter().enumerate() {
                    let s = if signs & (1 << j) != 0 { -1.0 } else { 1.0 };
                    h += (m * s) * e.transpose();
                }
                let svd = h.svd(true, true);
                let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
                let mut d = Matrix3::identity();
                if (u * vt).determinant() < 0.0 {
                    d[(2, 2)] = -1.0;
                }
                let r = u * d * vt;
                let misfit: f64 = means
                    .iter()
                    .enumerate()
                    .map(|(j, (e, m))| {
                        let s = if signs & (1 << j) != 0 { -1.0 } else { 1.0 };
                        (r * e - m * s).norm_squared()
                    })
                    .sum();
                if best.as_ref().is_none_or(|(b, _)| misfit < *b - 1e-15) {
                    best = Some((misfit, r));
                }
            }
            AlignmentFrame::from_matrix(&best.unwrap().1)
        }
    }
}

fn orthonormal_pair_unit(e: &Vector3<f64>) -> nalgebra::Unit<Vector3<f64>> {
    nalgebra::Unit::new_normalize(orthonormal_pair(e).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::frame_axis;

    #[test]
    fn round_trip_preserves_primitives() {
        let frame = AlignmentFrame::new(Vector3::new(0.1, -0.2, 0.05));
        let prims = vec![
            SurfacePrimitive::plane(frame.axis(AxisClass::Z).unwrap(), 0.7).with_axis_class(AxisClass::Z),
            SurfacePrimitive::cylinder(Vector3::new(0.3, 0.1, 1.0), Vector3::new(0.2, 0.0, 1.0), 0.3),
            SurfacePrimitive::sphere(Vector3::new(0.0, 0.1, 2.0), 0.4),
            SurfacePrimitive::cone(Vector3::new(0.0, 0.0, 1.0), -frame.axis(AxisClass::X).unwrap(), 0.4)
                .with_axis_class(AxisClass::X),
            SurfacePrimitive::torus(Vector3::new(0.0, 0.5, 2.0), Vector3::new(0.0, 1.0, 0.2), 0.5, 0.1),
        ];
        let (m, x) = ParamModel::new(&prims, &frame, true, &[false; 5]);
        assert!(m.frame_free);
        let back = m.primitives(&x);
        for (a, b) in prims.iter().zip(&back) {
            for k in 0..200 {
                let q = Vector3::new((k as f64 * 0.37).sin(), (k as f64 * 0.91).cos(), 1.5 + (k as f64 * 0.13).sin());
                assert!((a.distance(&q) - b.distance(&q)).abs() < 1e-12);
            }
        }
        let fx = frame_axis(&frame, AxisClass::X).unwrap();
        assert_eq!(back[3].axis().unwrap(), -fx);
        assert_eq!(back[0].axis().unwrap(), frame_axis(&frame, AxisClass::Z).unwrap());
    }

    #[test]
    fn initial_frame_recovers_rotation() {
        let truth = AlignmentFrame::new(Vector3::new(0.3, 0.2, -0.4));
        let prims = vec![
            SurfacePrimitive::plane(-truth.axis(AxisClass::X).unwrap(), 0.1).with_axis_class(AxisClass::X),
            SurfacePrimitive::plane(truth.axis(AxisClass::Y).unwrap(), 0.1).with_axis_class(AxisClass::Y),
            SurfacePrimitive::cylinder(-truth.axis(AxisClass::Z).unwrap(), Vector3::zeros(), 0.2)
                .with_axis_class(AxisClass::Z),
        ];
        let f = initial_frame(&prims);
        for c in [AxisClass::X, AxisClass::Y, AxisClass::Z] {
            let d = f.axis(c).unwrap().dot(&truth.axis(c).unwrap()).abs();
            assert!(d > 1.0 - 1e-9);
        }
    }
}
