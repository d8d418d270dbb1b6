//! Unit-vector reparameterizations used by every optimization stage:
//! the shared alignment frame (one axis-angle rotation) and the two-variable
//! tangent perturbation of a free unit vector.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::GeomError;
use crate::primitive::AxisClass;
use crate::real::{Real, V3};

/// Deterministic orthonormal pair spanning the plane orthogonal to `a`.
///
/// The helper axis is the canonical axis least parallel to `a` (lowest
/// index on ties), orthogonalized against `a`. `(e1, e2, a)` is right-handed.
pub fn orthonormal_pair(a: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let comps = [a.x.abs(), a.y.abs(), a.z.abs()];
    let mut best = 0;
    for i in 1..3 {
        if comps[i] < comps[best] {
            best = i;
        }
    }
    let helper = Vector3::ith(best, 1.0);
    let e1 = (helper - a * a.dot(&helper)).normalize();
    let e2 = a.cross(&e1);
    (e1, e2)
}

/// Rotation of the canonical axes shared by all axis-labeled primitives,
/// stored as an axis-angle vector (angle times unit axis).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentFrame {
    pub rotation: Vector3<f64>,
}

impl Default for AlignmentFrame {
    fn default() -> Self {
        AlignmentFrame { rotation: Vector3::zeros() }
    }
}

impl AlignmentFrame {
    /// Builds a frame, wrapping the rotation magnitude into `[0, pi]`.
    pub fn new(rotation: Vector3<f64>) -> Self {
        let theta = rotation.norm();
        if theta <= std::f64::consts::PI {
            return AlignmentFrame { rotation };
        }
        let axis = rotation / theta;
        let wrapped = theta.rem_euclid(2.0 * std::f64::consts::PI);
        let r = if wrapped > std::f64::consts::PI {
            -axis * (2.0 * std::f64::consts::PI - wrapped)
        } else {
            axis * wrapped
        };
        AlignmentFrame { rotation: r }
    }

    /// Frame whose X, Y, Z axes are the columns of `m` (must be a rotation).
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let orthonormal = (m.transpose() * m - Matrix3::identity()).norm() < 1e-9 && m.determinant() > 0.0;
        let rot = if orthonormal {
            Rotation3::from_matrix_unchecked(*m)
        } else {
            Rotation3::from_matrix_eps(m, 1e-12, 1000, Rotation3::identity())
        };
        AlignmentFrame::new(rot.scaled_axis())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[
            rotate(&self.rotation, &Vector3::x()),
            rotate(&self.rotation, &Vector3::y()),
            rotate(&self.rotation, &Vector3::z()),
        ])
    }

    pub fn axis(&self, class: AxisClass) -> Result<Vector3<f64>, GeomError> {
        frame_axis(self, class)
    }
}

fn canonical(class: AxisClass) -> Result<Vector3<f64>, GeomError> {
    match class {
        AxisClass::X => Ok(Vector3::x()),
        AxisClass::Y => Ok(Vector3::y()),
        AxisClass::Z => Ok(Vector3::z()),
        AxisClass::Unaligned => Err(GeomError::InvalidAxisClass),
    }
}

/// Frame axis for an aligned class: the rotation applied to `e_X/e_Y/e_Z`.
pub fn frame_axis(frame: &AlignmentFrame, class: AxisClass) -> Result<Vector3<f64>, GeomError> {
    Ok(rotate(&frame.rotation, &canonical(class)?))
}

/// Generic frame axis over a rotation vector given as three scalars.
pub fn frame_axis_t<T: Real>(rotation: &V3<T>, class: AxisClass) -> Result<V3<T>, GeomError> {
    let e = canonical(class)?;
    Ok(rotate(rotation, &V3::new(T::cst(e.x), T::cst(e.y), T::cst(e.z))))
}

/// Rodrigues rotation of `e` by the axis-angle vector `w`.
///
/// Written in terms of `theta^2` so it stays smooth (and differentiable)
/// through the identity rotation.
pub fn rotate<T: Real>(w: &V3<T>, e: &V3<T>) -> V3<T> {
    let t2 = w.dot(w);
    let (c, s_over, k_over) = if t2.re() < 1e-8 {
        let t4 = t2 * t2;
        (
            T::one() - t2 * T::cst(0.5) + t4 * T::cst(1.0 / 24.0),
            T::one() - t2 * T::cst(1.0 / 6.0) + t4 * T::cst(1.0 / 120.0),
            T::cst(0.5) - t2 * T::cst(1.0 / 24.0) + t4 * T::cst(1.0 / 720.0),
        )
    } else {
        let t = t2.sqrt();
        let c = t.cos();
        (c, t.sin() / t, (T::one() - c) / t2)
    };
    e * c + w.cross(e) * s_over + w * (w.dot(e) * k_over)
}

/// Two-variable perturbation of a unit vector around a fixed base.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TangentPerturbation {
    pub base: Vector3<f64>,
    pub n: Vector3<f64>,
    pub b: Vector3<f64>,
    pub u: f64,
    pub v: f64,
}

impl TangentPerturbation {
    pub fn new(base: Vector3<f64>) -> Self {
        let base = base.normalize();
        let (n, b) = orthonormal_pair(&base);
        TangentPerturbation { base, n, b, u: 0.0, v: 0.0 }
    }

    pub fn with_uv(mut self, u: f64, v: f64) -> Self {
        self.u = u;
        self.v = v;
        self
    }

    /// `normalize(base + u n + v b)` for generic scalars.
    pub fn eval<T: Real>(&self, u: T, v: T) -> V3<T> {
        let a = crate::real::lift::<T>(&self.base)
            + crate::real::lift::<T>(&self.n) * u
            + crate::real::lift::<T>(&self.b) * v;
        crate::real::normalize(&a)
    }
}

pub fn perturb_unit(t: &TangentPerturbation) -> Vector3<f64> {
    t.eval(t.u, t.v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI};

    fn close(a: &Vector3<f64>, b: &Vector3<f64>, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn perturb_identity_and_tilts() {
        let t = TangentPerturbation {
            base: Vector3::z(),
            n: Vector3::x(),
            b: Vector3::y(),
            u: 0.0,
            v: 0.0,
        };
        assert!(close(&perturb_unit(&t), &Vector3::z(), 1e-15));
        let r = perturb_unit(&t.with_uv(1.0, 0.0));
        assert!(close(&r, &Vector3::new(FRAC_1_SQRT_2, 0.0, FRAC_1_SQRT_2), 1e-15));
        let r = perturb_unit(&t.with_uv(0.0, -1.0));
        assert!(close(&r, &Vector3::new(0.0, -FRAC_1_SQRT_2, FRAC_1_SQRT_2), 1e-15));
    }

    #[test]
    fn pair_is_orthonormal() {
        for a in [Vector3::z(), Vector3::new(1.0, 2.0, -3.0).normalize(), Vector3::x()] {
            let (n, b) = orthonormal_pair(&a);
            assert!(n.dot(&b).abs() < 1e-12 && n.dot(&a).abs() < 1e-12 && b.dot(&a).abs() < 1e-12);
            assert!(close(&n.cross(&b), &a, 1e-12));
        }
        let (n, b) = orthonormal_pair(&Vector3::z());
        assert_eq!(n, Vector3::x());
        assert_eq!(b, Vector3::y());
    }

    #[test]
    fn frame_axis_examples() {
        let f = AlignmentFrame::default();
        assert_eq!(frame_axis(&f, AxisClass::Z).unwrap(), Vector3::z());
        let f = AlignmentFrame::new(Vector3::new(0.0, 0.0, FRAC_PI_2));
        assert!(close(&frame_axis(&f, AxisClass::X).unwrap(), &Vector3::y(), 1e-15));
        assert!(matches!(frame_axis(&f, AxisClass::Unaligned), Err(GeomError::InvalidAxisClass)));

        // Rodrigues by hand for pi/3 about (1,1,1)/sqrt3 applied to e_Y.
        let k = Vector3::new(1.0, 1.0, 1.0) / 3f64.sqrt();
        let th = PI / 3.0;
        let e = Vector3::y();
        let expect = e * th.cos() + k.cross(&e) * th.sin() + k * k.dot(&e) * (1.0 - th.cos());
        let f = AlignmentFrame::new(k * th);
        assert!(close(&frame_axis(&f, AxisClass::Y).unwrap(), &expect, 1e-14));
        let m = Rotation3::from_scaled_axis(k * th);
        assert!(close(&(m * e), &expect, 1e-14));
    }

    #[test]
    fn small_angle_branch_is_continuous() {
        let e = Vector3::new(0.3, -0.2, 0.9);
        for s in [1e-5, 9.99e-5, 1.001e-4, 1e-3] {
            let w = Vector3::new(0.6, 0.0, 0.8) * s;
            let r = Rotation3::from_scaled_axis(w) * e;
            assert!(close(&rotate(&w, &e), &r, 1e-15));
        }
    }

    #[test]
    fn wraps_large_rotations() {
        let w = Vector3::new(0.0, 0.0, 1.5 * PI);
        let f = AlignmentFrame::new(w);
        assert!(f.rotation.norm() <= PI + 1e-12);
        let a = frame_axis(&f, AxisClass::X).unwrap();
        let b = Rotation3::from_scaled_axis(w) * Vector3::x();
        assert!(close(&a, &b, 1e-12));
    }

    #[test]
    fn round_trips_matrix() {
        let w = Vector3::new(0.3, -1.1, 0.4);
        let f = AlignmentFrame::new(w);
        let g = AlignmentFrame::from_matrix(&f.matrix());
        assert!(close(&f.rotation, &g.rotation, 1e-12));
    }
}
