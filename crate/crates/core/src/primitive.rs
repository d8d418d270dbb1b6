//! Parametric surface primitives.
//!
//! Conventions used throughout the crate:
//!
//! * plane: `normal . p = offset`; UV origin at `offset * normal`, UV axes
//!   from [`orthonormal_pair`] of the normal.
//! * cylinder: `point + radius (cos u e1 + sin u e2) + v axis`.
//! * sphere: polar angle `v` from the world `+z` axis, azimuth `u` from `+x`.
//! * cone: single nappe opening along `axis` from `apex`;
//!   `apex + v axis + v tan(half_angle) (cos u e1 + sin u e2)` with `v >= 0`
//!   the axial distance.
//! * torus: `center + (R + r cos v)(cos u e1 + sin u e2) + r sin v axis`.
//!
//! `(e1, e2)` is always [`orthonormal_pair`] of the axis.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::GeomError;
use crate::frame::orthonormal_pair;
use crate::real::{lift, norm, Real, V3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveType {
    Plane,
    Cylinder,
    Sphere,
    Cone,
    Torus,
}

impl PrimitiveType {
    pub const ALL: [PrimitiveType; 5] = [
        PrimitiveType::Plane,
        PrimitiveType::Cylinder,
        PrimitiveType::Sphere,
        PrimitiveType::Cone,
        PrimitiveType::Torus,
    ];

    pub fn has_axis(self) -> bool {
        !matches!(self, PrimitiveType::Sphere)
    }

    /// Number of ray/surface depth layers a view ray can cross.
    pub fn max_layers(self) -> usize {
        match self {
            PrimitiveType::Plane => 1,
            PrimitiveType::Torus => 4,
            _ => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
pub enum AxisClass {
    X,
    Y,
    Z,
    #[default]
    Unaligned,
}

impl AxisClass {
    pub fn is_aligned(self) -> bool {
        !matches!(self, AxisClass::Unaligned)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Shape<T: nalgebra::Scalar> {
    Plane {
        normal: Vector3<T>,
        offset: T,
    },
    Cylinder {
        axis: Vector3<T>,
        point: Vector3<T>,
        radius: T,
    },
    Sphere {
        center: Vector3<T>,
        radius: T,
    },
    Cone {
        apex: Vector3<T>,
        axis: Vector3<T>,
        half_angle: T,
    },
    Torus {
        center: Vector3<T>,
        axis: Vector3<T>,
        major_radius: T,
        minor_radius: T,
    },
}

/// Axial/radial decomposition of `p` about the line `(origin, axis)`.
#[inline]
fn axial<T: Real>(origin: &V3<T>, axis: &V3<T>, p: &V3<T>) -> (T, V3<T>, T) {
    let w = p - origin;
    let h = w.dot(axis);
    let radial = w - axis * h;
    let rho = norm(&radial);
    (h, radial, rho)
}

impl<T: Real> Shape<T> {
    pub fn kind(&self) -> PrimitiveType {
        match self {
            Shape::Plane { .. } => PrimitiveType::Plane,
            Shape::Cylinder { .. } => PrimitiveType::Cylinder,
            Shape::Sphere { .. } => PrimitiveType::Sphere,
            Shape::Cone { .. } => PrimitiveType::Cone,
            Shape::Torus { .. } => PrimitiveType::Torus,
        }
    }

    /// Signed distance, negative inside (for planes: on the side opposite
    /// the normal). Magnitude equals the exact Euclidean distance.
    pub fn signed_distance(&self, p: &V3<T>) -> T {
        match self {
            Shape::Plane { normal, offset } => normal.dot(p) - *offset,
            Shape::Sphere { center, radius } => norm(&(p - center)) - *radius,
            Shape::Cylinder { axis, point, radius } => {
                let (_, _, rho) = axial(point, axis, p);
                rho - *radius
            }
            Shape::Cone { apex, axis, half_angle } => {
                let (h, _, rho) = axial(apex, axis, p);
                let (s, c) = (half_angle.sin(), half_angle.cos());
                let along = h * c + rho * s;
                let across = rho * c - h * s;
                if along.re() >= 0.0 {
                    across
                } else {
                    let d = (h * h + rho * rho).sqrt();
                    if across.re() < 0.0 {
                        -d
                    } else {
                        d
                    }
                }
            }
            Shape::Torus { center, axis, major_radius, minor_radius } => {
                let (h, _, rho) = axial(center, axis, p);
                let dr = rho - *major_radius;
                (h * h + dr * dr).sqrt() - *minor_radius
            }
        }
    }

    pub fn distance(&self, p: &V3<T>) -> T {
        self.signed_distance(p).abs()
    }

    /// Outward unit normal at the surface point closest to `p`; no
    /// singular-locus checks.
    pub fn normal_unchecked(&self, p: &V3<T>) -> V3<T> {
        match self {
            Shape::Plane { normal, .. } => *normal,
            Shape::Sphere { center, .. } => crate::real::normalize(&(p - center)),
            Shape::Cylinder { axis, point, .. } => {
                let (_, radial, rho) = axial(point, axis, p);
                radial * (T::one() / rho)
            }
            Shape::Cone { apex, axis, half_angle } => {
                let (h, radial, rho) = axial(apex, axis, p);
                let (s, c) = (half_angle.sin(), half_angle.cos());
                if (h * c + rho * s).re() >= 0.0 {
                    radial * (c / rho) - axis * s
                } else {
                    let w = p - apex;
                    let sign = if (rho * c - h * s).re() < 0.0 { -T::one() } else { T::one() };
                    w * (sign / norm(&w))
                }
            }
            Shape::Torus { center, axis, major_radius, .. } => {
                let (h, radial, rho) = axial(center, axis, p);
                let dr = rho - *major_radius;
                let n = axis * h + radial * (dr / rho);
                n * (T::one() / (h * h + dr * dr).sqrt())
            }
        }
    }

    pub fn axis(&self) -> Option<V3<T>> {
        match self {
            Shape::Plane { normal, .. } => Some(*normal),
            Shape::Cylinder { axis, .. } | Shape::Cone { axis, .. } | Shape::Torus { axis, .. } => {
                Some(*axis)
            }
            Shape::Sphere { .. } => None,
        }
    }
}

impl Shape<f64> {
    /// Embeds constant parameters into a differentiable scalar type.
    pub fn lift<T: Real>(&self) -> Shape<T> {
        match self {
            Shape::Plane { normal, offset } => Shape::Plane { normal: lift(normal), offset: T::cst(*offset) },
            Shape::Cylinder { axis, point, radius } => Shape::Cylinder {
                axis: lift(axis),
                point: lift(point),
                radius: T::cst(*radius),
            },
            Shape::Sphere { center, radius } => Shape::Sphere { center: lift(center), radius: T::cst(*radius) },
            Shape::Cone { apex, axis, half_angle } => Shape::Cone {
                apex: lift(apex),
                axis: lift(axis),
                half_angle: T::cst(*half_angle),
            },
            Shape::Torus { center, axis, major_radius, minor_radius } => Shape::Torus {
                center: lift(center),
                axis: lift(axis),
                major_radius: T::cst(*major_radius),
                minor_radius: T::cst(*minor_radius),
            },
        }
    }
}

/// A labeled surface primitive: geometry plus its axis-alignment class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfacePrimitive {
    #[serde(flatten)]
    pub shape: Shape<f64>,
    #[serde(default)]
    pub axis_class: AxisClass,
}

const UNIT_TOL: f64 = 1e-9;

impl SurfacePrimitive {
    pub fn new(shape: Shape<f64>, axis_class: AxisClass) -> Result<Self, GeomError> {
        let p = SurfacePrimitive { shape, axis_class };
        p.validate()?;
        Ok(p)
    }

    pub fn plane(normal: Vector3<f64>, offset: f64) -> Self {
        SurfacePrimitive { shape: Shape::Plane { normal: normal.normalize(), offset }, axis_class: AxisClass::Unaligned }
    }

    pub fn cylinder(axis: Vector3<f64>, point: Vector3<f64>, radius: f64) -> Self {
        SurfacePrimitive {
            shape: Shape::Cylinder { axis: axis.normalize(), point, radius },
            axis_class: AxisClass::Unaligned,
        }
    }

    pub fn sphere(center: Vector3<f64>, radius: f64) -> Self {
        SurfacePrimitive { shape: Shape::Sphere { center, radius }, axis_class: AxisClass::Unaligned }
    }

    pub fn cone(apex: Vector3<f64>, axis: Vector3<f64>, half_angle: f64) -> Self {
        SurfacePrimitive {
            shape: Shape::Cone { apex, axis: axis.normalize(), half_angle },
            axis_class: AxisClass::Unaligned,
        }
    }

    pub fn torus(center: Vector3<f64>, axis: Vector3<f64>, major_radius: f64, minor_radius: f64) -> Self {
        SurfacePrimitive {
            shape: Shape::Torus { center, axis: axis.normalize(), major_radius, minor_radius },
            axis_class: AxisClass::Unaligned,
        }
    }

    pub fn with_axis_class(mut self, class: AxisClass) -> Self {
        self.axis_class = class;
        self
    }

    pub fn kind(&self) -> PrimitiveType {
        self.shape.kind()
    }

    pub fn axis(&self) -> Option<Vector3<f64>> {
        self.shape.axis()
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        let unit = |v: &Vector3<f64>| (v.norm() - 1.0).abs() <= UNIT_TOL;
        let finite = |v: &Vector3<f64>| v.iter().all(|c| c.is_finite());
        let ok = match &self.shape {
            Shape::Plane { normal, offset } => unit(normal) && offset.is_finite(),
            Shape::Cylinder { axis, point, radius } => unit(axis) && finite(point) && *radius > 0.0,
            Shape::Sphere { center, radius } => finite(center) && *radius > 0.0,
            Shape::Cone { apex, axis, half_angle } => {
                unit(axis) && finite(apex) && *half_angle > 0.0 && *half_angle < std::f64::consts::FRAC_PI_2
            }
            Shape::Torus { center, axis, major_radius, minor_radius } => {
                unit(axis) && finite(center) && *minor_radius > 0.0 && minor_radius < major_radius
            }
        };
        if !ok {
            return Err(GeomError::InvalidPrimitive(format!("{:?}", self.shape)));
        }
        if self.kind() == PrimitiveType::Sphere && self.axis_class.is_aligned() {
            return Err(GeomError::InvalidPrimitive("sphere cannot carry an axis class".into()));
        }
        Ok(())
    }

    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        self.shape.distance(p)
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.shape.signed_distance(p)
    }

    /// Outward unit normal at the closest surface point.
    pub fn normal_at(&self, p: &Vector3<f64>) -> Result<Vector3<f64>, GeomError> {
        const EPS: f64 = 1e-12;
        let singular = match &self.shape {
            Shape::Plane { .. } => false,
            Shape::Sphere { center, .. } => (p - center).norm() < EPS,
            Shape::Cylinder { axis, point, .. } => axial(point, axis, p).2 < EPS,
            Shape::Cone { apex, axis, half_angle } => {
                let (h, _, rho) = axial(apex, axis, p);
                let along = h * half_angle.cos() + rho * half_angle.sin();
                (along >= 0.0 && rho < EPS) || (p - apex).norm() < EPS
            }
            Shape::Torus { center, axis, major_radius, .. } => {
                let (h, _, rho) = axial(center, axis, p);
                rho < EPS || (h * h + (rho - major_radius).powi(2)).sqrt() < EPS
            }
        };
        if singular {
            return Err(GeomError::SingularPoint);
        }
        Ok(self.shape.normal_unchecked(p))
    }

    pub fn uv_to_point(&self, u: f64, v: f64) -> Vector3<f64> {
        match &self.shape {
            Shape::Plane { normal, offset } => {
                let (e1, e2) = orthonormal_pair(normal);
                normal * *offset + e1 * u + e2 * v
            }
            Shape::Cylinder { axis, point, radius } => {
                let (e1, e2) = orthonormal_pair(axis);
                point + (e1 * u.cos() + e2 * u.sin()) * *radius + axis * v
            }
            Shape::Sphere { center, radius } => {
                center + Vector3::new(v.sin() * u.cos(), v.sin() * u.sin(), v.cos()) * *radius
            }
            Shape::Cone { apex, axis, half_angle } => {
                let (e1, e2) = orthonormal_pair(axis);
                apex + axis * v + (e1 * u.cos() + e2 * u.sin()) * (v * half_angle.tan())
            }
            Shape::Torus { center, axis, major_radius, minor_radius } => {
                let (e1, e2) = orthonormal_pair(axis);
                center
                    + (e1 * u.cos() + e2 * u.sin()) * (major_radius + minor_radius * v.cos())
                    + axis * (minor_radius * v.sin())
            }
        }
    }

    /// Inverse of [`uv_to_point`](Self::uv_to_point) for the closest
    /// surface point to `p`.
    pub fn point_to_uv(&self, p: &Vector3<f64>) -> (f64, f64) {
        match &self.shape {
            Shape::Plane { normal, offset } => {
                let (e1, e2) = orthonormal_pair(normal);
                let w = p - normal * *offset;
                (w.dot(&e1), w.dot(&e2))
            }
            Shape::Cylinder { axis, point, .. } => {
                let (e1, e2) = orthonormal_pair(axis);
                let w = p - point;
                (w.dot(&e2).atan2(w.dot(&e1)), w.dot(axis))
            }
            Shape::Sphere { center, .. } => {
                let w = (p - center).normalize();
                (w.y.atan2(w.x), w.z.clamp(-1.0, 1.0).acos())
            }
            Shape::Cone { apex, axis, half_angle } => {
                let (e1, e2) = orthonormal_pair(axis);
                let w = p - apex;
                let (h, _, rho) = axial(apex, axis, p);
                // foot of the perpendicular onto the generator line, in axial units
                let t = (h * half_angle.cos() + rho * half_angle.sin()).max(0.0);
                (w.dot(&e2).atan2(w.dot(&e1)), t * half_angle.cos())
            }
            Shape::Torus { center, axis, major_radius, .. } => {
                let (e1, e2) = orthonormal_pair(axis);
                let w = p - center;
                let (h, _, rho) = axial(center, axis, p);
                (w.dot(&e2).atan2(w.dot(&e1)), h.atan2(rho - major_radius))
            }
        }
    }

    /// Ray parameters `t > 0` (ascending) where `origin + t dir` meets the
    /// surface; `dir` must be unit length.
    pub fn ray_intersections(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Vec<f64> {
        let mut hits = match &self.shape {
            Shape::Plane { normal, offset } => {
                let den = normal.dot(dir);
                if den.abs() < 1e-15 {
                    vec![]
                } else {
                    vec![(offset - normal.dot(origin)) / den]
                }
            }
            Shape::Sphere { center, radius } => {
                let oc = origin - center;
                solve_quadratic(1.0, 2.0 * oc.dot(dir), oc.dot(&oc) - radius * radius)
            }
            Shape::Cylinder { axis, point, radius } => {
                let oc = origin - point;
                let o = oc - axis * oc.dot(axis);
                let d = dir - axis * dir.dot(axis);
                solve_quadratic(d.dot(&d), 2.0 * o.dot(&d), o.dot(&o) - radius * radius)
            }
            Shape::Cone { apex, axis, half_angle } => {
                let c2 = half_angle.cos().powi(2);
                let oc = origin - apex;
                let (da, oa) = (dir.dot(axis), oc.dot(axis));
                let a = da * da - c2;
                let b = 2.0 * (da * oa - c2 * dir.dot(&oc));
                let c = oa * oa - c2 * oc.dot(&oc);
                solve_quadratic(a, b, c)
                    .into_iter()
                    .filter(|t| (oc + dir * *t).dot(axis) >= 0.0)
                    .collect()
            }
            Shape::Torus { center, major_radius, minor_radius, .. } => {
                let oc = origin - center;
                let b = oc.dot(dir);
                let bound = major_radius + minor_radius;
                let disc = b * b - (oc.dot(&oc) - bound * bound);
                if disc < 0.0 {
                    vec![]
                } else {
                    let s = disc.sqrt();
                    let f = |t: f64| self.shape.signed_distance(&(origin + dir * t));
                    lipschitz_roots(&f, (-b - s).max(0.0), -b + s)
                }
            }
        };
        hits.retain(|t| *t > 1e-12 && t.is_finite());
        hits.sort_by(|a, b| a.partial_cmp(b).unwrap());
        hits
    }

    /// Canonical representative: axis with nonnegative z (ties broken on y
    /// then x) and axis point at the foot of the perpendicular from the
    /// origin. Cone axes select the nappe and are left untouched.
    pub fn gauge_fixed(&self) -> SurfacePrimitive {
        let mut out = self.clone();
        match &mut out.shape {
            Shape::Cylinder { axis, point, .. } => {
                *axis = canonical_sign(axis);
                *point -= *axis * point.dot(axis);
            }
            Shape::Torus { axis, .. } => {
                *axis = canonical_sign(axis);
            }
            _ => {}
        }
        out
    }
}

pub fn canonical_sign(a: &Vector3<f64>) -> Vector3<f64> {
    let flip = if a.z != 0.0 {
        a.z < 0.0
    } else if a.y != 0.0 {
        a.y < 0.0
    } else {
        a.x < 0.0
    };
    if flip {
        -a
    } else {
        *a
    }
}

/// Real roots of `a t^2 + b t + c`, ascending.
pub fn solve_quadratic(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a.abs() < 1e-14 * (b.abs() + c.abs()).max(1e-300) {
        if b.abs() < 1e-300 {
            return vec![];
        }
        return vec![-c / b];
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return vec![];
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let mut roots = if q == 0.0 {
        vec![0.0]
    } else {
        vec![q / a, c / q]
    };
    roots.sort_by(|x, y| x.partial_cmp(y).unwrap());
    roots
}

/// All sign changes of a 1-Lipschitz function on `[lo, hi]`.
///
/// An interval is discarded once `|f(a)| + |f(b)| > b - a`, which rules out
/// a zero inside it.
pub fn lipschitz_roots(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> Vec<f64> {
    let mut roots = Vec::new();
    let mut stack = vec![(lo, f(lo), hi, f(hi))];
    while let Some((a, fa, b, fb)) = stack.pop() {
        if fa == 0.0 {
            roots.push(a);
            continue;
        }
        if fa * fb < 0.0 && (b - a) < 1e-3 {
            roots.push(bisect(f, a, fa, b));
            continue;
        }
        if fa.abs() + fb.abs() > (b - a) * (1.0 + 1e-12) || b - a < 1e-12 {
            continue;
        }
        let m = 0.5 * (a + b);
        let fm = f(m);
        stack.push((m, fm, b, fb));
        stack.push((a, fa, m, fm));
    }
    if let Some(last) = roots.last() {
        if f(hi) == 0.0 && (hi - last).abs() > 1e-12 {
            roots.push(hi);
        }
    }
    roots.sort_by(|x, y| x.partial_cmp(y).unwrap());
    roots.dedup_by(|x, y| (*x - *y).abs() < 1e-12);
    roots
}

fn bisect(f: &dyn Fn(f64) -> f64, mut a: f64, mut fa: f64, mut b: f64) -> f64 {
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if (fm < 0.0) == (fa < 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    #[test]
    fn distance_examples() {
        let s = SurfacePrimitive::sphere(Vector3::zeros(), 1.0);
        assert_eq!(s.distance(&Vector3::new(2.0, 0.0, 0.0)), 1.0);
        let p = SurfacePrimitive::plane(Vector3::z(), 0.0);
        assert_eq!(p.distance(&Vector3::new(0.0, 0.0, 0.5)), 0.5);
        let t = SurfacePrimitive::torus(Vector3::zeros(), Vector3::z(), 2.0, 0.5);
        // brute force over a 4096x4096 UV grid
        let q = Vector3::new(3.0, 0.0, 0.0);
        let n = 4096;
        let mut best = f64::INFINITY;
        for i in 0..n {
            let u = i as f64 / n as f64 * std::f64::consts::TAU;
            for j in 0..n {
                let v = j as f64 / n as f64 * std::f64::consts::TAU;
                best = best.min((t.uv_to_point(u, v) - q).norm());
            }
        }
        assert!((best - 0.5).abs() < 1e-9);
        assert!((t.distance(&q) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn normal_examples() {
        let s = SurfacePrimitive::sphere(Vector3::zeros(), 1.0);
        assert_eq!(s.normal_at(&Vector3::new(0.0, 0.0, 2.0)).unwrap(), Vector3::z());
        let c = SurfacePrimitive::cylinder(Vector3::z(), Vector3::zeros(), 1.0);
        assert_eq!(c.normal_at(&Vector3::new(2.0, 0.0, 5.0)).unwrap(), Vector3::x());
        let k = SurfacePrimitive::cone(Vector3::zeros(), Vector3::z(), FRAC_PI_4);
        let n = k.normal_at(&Vector3::new(1.0, 0.0, 1.0)).unwrap();
        // finite difference of the signed distance field
        let h = 1e-6;
        let q = Vector3::new(1.0, 0.0, 1.0);
        let fd = Vector3::new(
            k.signed_distance(&(q + Vector3::x() * h)) - k.signed_distance(&(q - Vector3::x() * h)),
            k.signed_distance(&(q + Vector3::y() * h)) - k.signed_distance(&(q - Vector3::y() * h)),
            k.signed_distance(&(q + Vector3::z() * h)) - k.signed_distance(&(q - Vector3::z() * h)),
        ) / (2.0 * h);
        assert!((fd - n).norm() < 1e-8);
        let expect = Vector3::new(0.5f64.sqrt(), 0.0, -(0.5f64.sqrt()));
        assert!((n - expect).norm() < 1e-12);
    }

    #[test]
    fn singular_points_rejected() {
        let c = SurfacePrimitive::cylinder(Vector3::z(), Vector3::zeros(), 1.0);
        assert!(matches!(c.normal_at(&Vector3::new(0.0, 0.0, 3.0)), Err(GeomError::SingularPoint)));
        let s = SurfacePrimitive::sphere(Vector3::new(1.0, 1.0, 1.0), 1.0);
        assert!(s.normal_at(&Vector3::new(1.0, 1.0, 1.0)).is_err());
        let t = SurfacePrimitive::torus(Vector3::zeros(), Vector3::z(), 2.0, 0.5);
        assert!(t.normal_at(&Vector3::new(2.0, 0.0, 0.0)).is_err());
        assert!(t.normal_at(&Vector3::new(0.0, 0.0, 1.0)).is_err());
        let p = SurfacePrimitive::plane(Vector3::z(), 1.0);
        assert!(p.normal_at(&Vector3::zeros()).is_ok());
    }

    #[test]
    fn uv_examples() {
        let s = SurfacePrimitive::sphere(Vector3::zeros(), 1.0);
        assert!((s.uv_to_point(0.0, 0.0) - Vector3::z()).norm() < 1e-15);
        let c = SurfacePrimitive::cylinder(Vector3::z(), Vector3::zeros(), 1.0);
        assert!((c.uv_to_point(FRAC_PI_2, 3.0) - Vector3::new(0.0, 1.0, 3.0)).norm() < 1e-15);
        let t = SurfacePrimitive::torus(Vector3::zeros(), Vector3::z(), 2.0, 0.5);
        assert!((t.uv_to_point(0.0, 0.0) - Vector3::new(2.5, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn point_to_uv_inverts_parameterization() {
        let prims = [
            SurfacePrimitive::plane(Vector3::new(1.0, 2.0, 2.0), 0.7),
            SurfacePrimitive::cylinder(Vector3::new(0.0, 1.0, 1.0), Vector3::new(0.1, 0.0, 0.0), 0.4),
            SurfacePrimitive::sphere(Vector3::new(0.0, 0.0, 3.0), 0.8),
            SurfacePrimitive::cone(Vector3::zeros(), Vector3::new(1.0, 0.0, 1.0), 0.5),
            SurfacePrimitive::torus(Vector3::zeros(), Vector3::y(), 1.0, 0.3),
        ];
        for p in &prims {
            let x = p.uv_to_point(0.9, 1.1);
            let (u, v) = p.point_to_uv(&x);
            assert!((p.uv_to_point(u, v) - x).norm() < 1e-12, "{:?}", p.kind());
        }
    }

    #[test]
    fn ray_hits_are_on_surface() {
        let o = Vector3::zeros();
        let d = Vector3::new(0.05, -0.02, 1.0).normalize();
        let prims = [
            SurfacePrimitive::plane(Vector3::new(0.0, 0.2, -1.0), -3.0),
            SurfacePrimitive::cylinder(Vector3::x(), Vector3::new(0.0, 0.0, 4.0), 0.5),
            SurfacePrimitive::sphere(Vector3::new(0.0, 0.0, 5.0), 1.0),
            SurfacePrimitive::cone(Vector3::new(0.0, -1.0, 4.0), Vector3::y(), 0.4),
            SurfacePrimitive::torus(Vector3::new(0.0, 0.0, 4.0), Vector3::y(), 1.0, 0.3),
        ];
        let expected = [1, 2, 2, 2, 4];
        for (p, n) in prims.iter().zip(expected) {
            let hits = p.ray_intersections(&o, &d);
            assert_eq!(hits.len(), n, "{:?}", p.kind());
            for t in hits {
                assert!(p.distance(&(o + d * t)) < 1e-9);
            }
        }
        let s = SurfacePrimitive::sphere(Vector3::new(0.0, 0.0, 5.0), 1.0);
        let hits = s.ray_intersections(&o, &Vector3::z());
        assert!((hits[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn gauge_fix_flips_and_feet() {
        let c = SurfacePrimitive::cylinder(-Vector3::z(), Vector3::new(1.0, 2.0, 7.0), 1.0).gauge_fixed();
        match c.shape {
            Shape::Cylinder { axis, point, .. } => {
                assert_eq!(axis, Vector3::z());
                assert_eq!(point, Vector3::new(1.0, 2.0, 0.0));
            }
            _ => unreachable!(),
        }
        assert_eq!(canonical_sign(&Vector3::new(-1.0, 0.0, 0.0)), Vector3::x());
        assert_eq!(canonical_sign(&Vector3::new(1.0, -1.0, 0.0)), Vector3::new(-1.0, 1.0, 0.0));
    }

    #[test]
    fn validation() {
        assert!(SurfacePrimitive::new(Shape::Sphere { center: Vector3::zeros(), radius: -1.0 }, AxisClass::Unaligned).is_err());
        assert!(SurfacePrimitive::new(Shape::Sphere { center: Vector3::zeros(), radius: 1.0 }, AxisClass::X).is_err());
        assert!(SurfacePrimitive::new(
            Shape::Torus { center: Vector3::zeros(), axis: Vector3::z(), major_radius: 1.0, minor_radius: 2.0 },
            AxisClass::Z
        )
        .is_err());
        assert!(SurfacePrimitive::new(
            Shape::Cone { apex: Vector3::zeros(), axis: Vector3::z(), half_angle: 1.7 },
            AxisClass::Z
        )
        .is_err());
    }

    #[test]
    fn json_schema_field_names() {
        let t = SurfacePrimitive::torus(Vector3::zeros(), Vector3::z(), 2.0, 0.5).with_axis_class(AxisClass::Z);
        let s = serde_json::to_value(&t).unwrap();
        assert_eq!(s["type"], "torus");
        assert_eq!(s["axis_class"], "Z");
        assert_eq!(s["major_radius"], 2.0);
        assert_eq!(s["minor_radius"], 0.5);
        let back: SurfacePrimitive = serde_json::from_value(s).unwrap();
        assert_eq!(back, t);
        let k = serde_json::to_value(SurfacePrimitive::cone(Vector3::zeros(), Vector3::x(), 0.3)).unwrap();
        assert!(k.get("apex").is_some() && k.get("half_angle").is_some());
    }
}
