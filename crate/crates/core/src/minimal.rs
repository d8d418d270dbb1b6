//! Closed-form primitive estimators from minimal point/normal samples.
//!
//! | type     | sample                     |
//! |----------|----------------------------|
//! | plane    | 3 points, or 1 point+normal |
//! | sphere   | 2 points+normals, or 4 points |
//! | cylinder | 2 points+normals           |
//! | cone     | 3 points+normals           |
//! | torus    | 4 points+normals           |
//!
//! Normals may point either way; only the lines they span are used.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

use crate::error::GeomError;
use crate::primitive::{PrimitiveType, SurfacePrimitive};

const EPS: f64 = 1e-12;

/// Minimal sample size when normals are available.
pub fn minimal_size(kind: PrimitiveType) -> usize {
    match kind {
        PrimitiveType::Plane => 3,
        PrimitiveType::Sphere => 2,
        PrimitiveType::Cylinder => 2,
        PrimitiveType::Cone => 3,
        PrimitiveType::Torus => 4,
    }
}

pub fn fit_minimal(
    kind: PrimitiveType,
    points: &[Vector3<f64>],
    normals: &[Vector3<f64>],
) -> Result<SurfacePrimitive, GeomError> {
    let need = |n: usize, have: usize| {
        if have < n {
            Err(GeomError::InsufficientPoints { needed: n, got: have })
        } else {
            Ok(())
        }
    };
    let with_normals = normals.len().min(points.len());
    match kind {
        PrimitiveType::Plane => {
            if points.len() >= 3 {
                plane_from_points(&points[0], &points[1], &points[2])
            } else {
                need(1, with_normals)?;
                let n = unit(&normals[0])?;
                Ok(SurfacePrimitive::plane(n, n.dot(&points[0])))
            }
        }
        PrimitiveType::Sphere => {
            if with_normals >= 2 {
                sphere_from_normals(&points[..2], &normals[..2])
            } else {
                need(4, points.len())?;
                sphere_from_points(&points[..4])
            }
        }
        PrimitiveType::Cylinder => {
            need(2, with_normals)?;
            cylinder_from_normals(&points[..2], &normals[..2])
        }
        PrimitiveType::Cone => {
            need(3, with_normals)?;
            cone_from_normals(&points[..3], &normals[..3])
        }
        PrimitiveType::Torus => {
            need(4, with_normals)?;
            torus_from_normals(&points[..4], &normals[..4])
        }
    }
}

fn unit(v: &Vector3<f64>) -> Result<Vector3<f64>, GeomError> {
    let n = v.norm();
    if n < EPS || !n.is_finite() {
        return Err(GeomError::Degenerate);
    }
    Ok(v / n)
}

fn plane_from_points(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> Result<SurfacePrimitive, GeomError> {
    let cross = (b - a).cross(&(c - a));
    let scale = (b - a).norm() * (c - a).norm();
    if cross.norm() <= 1e-10 * scale.max(EPS) {
        return Err(GeomError::Degenerate);
    }
    let n = cross.normalize();
    Ok(SurfacePrimitive::plane(n, n.dot(a)))
}

/// Closest points between lines `p + t d` and `q + s e`.
fn closest_between_lines(
    p: &Vector3<f64>,
    d: &Vector3<f64>,
    q: &Vector3<f64>,
    e: &Vector3<f64>,
) -> Option<(Vector3<f64>, Vector3<f64>)> {
    let w = p - q;
    let (a, b, c) = (d.dot(d), d.dot(e), e.dot(e));
    let (dd, ee) = (d.dot(&w), e.dot(&w));
    let den = a * c - b * b;
    if den.abs() <= 1e-12 * a * c {
        return None;
    }
    let t = (b * ee - c * dd) / den;
    let s = (a * ee - b * dd) / den;
    Some((p + d * t, q + e * s))
}

fn sphere_from_normals(points: &[Vector3<f64>], normals: &[Vector3<f64>]) -> Result<SurfacePrimitive, GeomError> {
    if (points[0] - points[1]).norm() < EPS {
        return Err(GeomError::Degenerate);
    }
    let (a, b) = closest_between_lines(&points[0], &normals[0], &points[1], &normals[1]).ok_or(GeomError::Degenerate)?;
    let center = (a + b) * 0.5;
    let r = 0.5 * ((points[0] - center).norm() + (points[1] - center).norm());
    if r < EPS {
        return Err(GeomError::Degenerate);
    }
    Ok(SurfacePrimitive::sphere(center, r))
}

fn sphere_from_points(points: &[Vector3<f64>]) -> Result<SurfacePrimitive, GeomError> {
    let p0 = points[0];
    let mut m = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for i in 0..3 {
        let d = points[i + 1] - p0;
        m.set_row(i, &(d * 2.0).transpose());
        rhs[i] = points[i + 1].norm_squared() - p0.norm_squared();
    }
    let det = m.determinant();
    if det.abs() < 1e-14 {
        return Err(GeomError::Degenerate);
    }
    let center = m.lu().solve(&rhs).ok_or(GeomError::Degenerate)?;
    Ok(SurfacePrimitive::sphere(center, (p0 - center).norm()))
}

fn cylinder_from_normals(points: &[Vector3<f64>], normals: &[Vector3<f64>]) -> Result<SurfacePrimitive, GeomError> {
    let (p1, p2) = (points[0], points[1]);
    if (p1 - p2).norm() < EPS {
        return Err(GeomError::Degenerate);
    }
    let n1 = unit(&normals[0])?;
    let n2 = unit(&normals[1])?;
    let axis = unit(&n1.cross(&n2)).map_err(|_| GeomError::Degenerate)?;
    let n1 = (n1 - axis * n1.dot(&axis)).normalize();
    let n2 = (n2 - axis * n2.dot(&axis)).normalize();
    // bring the second sample into the cross-section plane through the first
    let p2p = p2 - axis * (p2 - p1).dot(&axis);
    let (c, _) = closest_between_lines(&p1, &n1, &p2p, &n2).ok_or(GeomError::Degenerate)?;
    let r = 0.5 * ((p1 - c).norm() + (p2p - c).norm());
    if r < 1e-9 {
        return Err(GeomError::Degenerate);
    }
    Ok(SurfacePrimitive::cylinder(axis, c, r).gauge_fixed())
}

fn cone_from_normals(points: &[Vector3<f64>], normals: &[Vector3<f64>]) -> Result<SurfacePrimitive, GeomError> {
    let mut m = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for i in 0..3 {
        let n = unit(&normals[i])?;
        m.set_row(i, &n.transpose());
        rhs[i] = n.dot(&points[i]);
    }
    if m.determinant().abs() < 1e-9 {
        return Err(GeomError::Degenerate);
    }
    let apex = m.lu().solve(&rhs).ok_or(GeomError::Degenerate)?;
    let mut dirs = [Vector3::zeros(); 3];
    for i in 0..3 {
        dirs[i] = unit(&(points[i] - apex))?;
    }
    let mut axis = unit(&(dirs[1] - dirs[0]).cross(&(dirs[2] - dirs[0])))?;
    if dirs.iter().map(|d| d.dot(&axis)).sum::<f64>() < 0.0 {
        axis = -axis;
    }
    let angle = dirs.iter().map(|d| d.dot(&axis).clamp(-1.0, 1.0).acos()).sum::<f64>() / 3.0;
    if !(angle > 1e-6 && angle < std::f64::consts::FRAC_PI_2 - 1e-6) {
        return Err(GeomError::Degenerate);
    }
    Ok(SurfacePrimitive::cone(apex, axis, angle))
}

/// Real roots of `c0 + c1 r + c2 r^2 + c3 r^3`.
fn cubic_roots(c: [f64; 4]) -> Vec<f64> {
    let scale = c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return vec![];
    }
    let eval = |r: f64| ((c[3] * r + c[2]) * r + c[1]) * r + c[0];
    let deriv = |r: f64| (3.0 * c[3] * r + 2.0 * c[2]) * r + c[1];
    let mut roots = if c[3].abs() < 1e-12 * scale {
        crate::primitive::solve_quadratic(c[2], c[1], c[0])
    } else {
        let (a, b, cc) = (c[2] / c[3], c[1] / c[3], c[0] / c[3]);
        let q = (a * a - 3.0 * b) / 9.0;
        let r = (2.0 * a * a * a - 9.0 * a * b + 27.0 * cc) / 54.0;
        if r * r < q * q * q {
            let th = (r / q.powf(1.5)).clamp(-1.0, 1.0).acos();
            let sq = -2.0 * q.sqrt();
            (0..3)
                .map(|k| sq * ((th + 2.0 * std::f64::consts::PI * k as f64) / 3.0).cos() - a / 3.0)
                .collect()
        } else {
            let aa = -r.signum() * (r.abs() + (r * r - q * q * q).sqrt()).cbrt();
            let bb = if aa == 0.0 { 0.0 } else { q / aa };
            vec![aa + bb - a / 3.0]
        }
    };
    for r in roots.iter_mut() {
        for _ in 0..8 {
            let d = deriv(*r);
            if d.abs() < 1e-300 {
                break;
            }
            let step = eval(*r) / d;
            *r -= step;
            if step.abs() < 1e-16 * r.abs().max(1.0) {
                break;
            }
        }
    }
    roots
}

/// Torus from four oriented samples.
///
/// Shifting each point along its normal by the minor radius lands on the
/// core circle, so the shifted points are coplanar exactly when the
/// determinant of their differences vanishes: a cubic in the minor radius.
fn torus_from_normals(points: &[Vector3<f64>], normals: &[Vector3<f64>]) -> Result<SurfacePrimitive, GeomError> {
    let ns: Vec<Vector3<f64>> = normals.iter().map(unit).collect::<Result<_, _>>()?;
    let core = |r: f64| -> Vec<Vector3<f64>> { points.iter().zip(&ns).map(|(p, n)| p - n * r).collect() };
    let det = |r: f64| {
        let q = core(r);
        Matrix3::from_columns(&[q[1] - q[0], q[2] - q[0], q[3] - q[0]]).determinant()
    };
    // exact cubic coefficients by interpolation at four abscissae
    let xs = [-1.0f64, 0.0, 1.0, 2.0];
    let mut v = Matrix4::zeros();
    let mut y = Vector4::zeros();
    for (i, x) in xs.iter().enumerate() {
        for k in 0..4 {
            v[(i, k)] = x.powi(k as i32);
        }
        y[i] = det(*x);
    }
    let coef = v.lu().solve(&y).ok_or(GeomError::Degenerate)?;
    let mut best: Option<(f64, SurfacePrimitive)> = None;
    for r in cubic_roots([coef[0], coef[1], coef[2], coef[3]]) {
        if r.abs() < 1e-9 || !r.is_finite() {
            continue;
        }
        let q = core(r);
        let Ok(axis) = unit(&(q[1] - q[0]).cross(&(q[2] - q[0]))) else { continue };
        let Some(center) = circumcenter(&q[0], &q[1], &q[2]) else { continue };
        let major = (q[0] - center).norm();
        let minor = r.abs();
        if !(minor < major) {
            continue;
        }
        let t = SurfacePrimitive::torus(center, axis, major, minor).gauge_fixed();
        let mut err = 0.0;
        for (p, n) in points.iter().zip(&ns) {
            err += t.distance(p);
            if let Ok(tn) = t.normal_at(p) {
                err += 1.0 - tn.dot(n).abs();
            }
        }
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, t));
        }
    }
    best.map(|(_, t)| t).ok_or(GeomError::Degenerate)
}

fn circumcenter(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> Option<Vector3<f64>> {
    let (ab, ac) = (b - a, c - a);
    let n = ab.cross(&ac);
    let den = 2.0 * n.norm_squared();
    if den < 1e-20 {
        return None;
    }
    Some(a + (n.cross(&ab) * ac.norm_squared() + ac.cross(&n) * ab.norm_squared()) / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitive::Shape;

    #[test]
    fn plane_from_three_points() {
        let p = fit_minimal(
            PrimitiveType::Plane,
            &[Vector3::zeros(), Vector3::x(), Vector3::y()],
            &[],
        )
        .unwrap();
        match p.shape {
            Shape::Plane { normal, offset } => {
                assert!((normal - Vector3::z()).norm() < 1e-15);
                assert_eq!(offset, 0.0);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn cylinder_from_two_oriented_points() {
        let c = fit_minimal(PrimitiveType::Cylinder, &[Vector3::x(), Vector3::y()], &[Vector3::x(), Vector3::y()])
            .unwrap();
        match c.shape {
            Shape::Cylinder { axis, point, radius } => {
                assert!((axis - Vector3::z()).norm() < 1e-15);
                assert!(point.norm() < 1e-15);
                assert!((radius - 1.0).abs() < 1e-15);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn coincident_points_are_degenerate() {
        let e = fit_minimal(PrimitiveType::Cylinder, &[Vector3::x(), Vector3::x()], &[Vector3::x(), Vector3::y()]);
        assert_eq!(e.unwrap_err(), GeomError::Degenerate);
        let e = fit_minimal(PrimitiveType::Plane, &[Vector3::x(), Vector3::x() * 2.0, Vector3::x() * 3.0], &[]);
        assert_eq!(e.unwrap_err(), GeomError::Degenerate);
        let e = fit_minimal(PrimitiveType::Torus, &[Vector3::x()], &[Vector3::x()]);
        assert!(matches!(e, Err(GeomError::InsufficientPoints { needed: 4, got: 1 })));
    }

    #[test]
    fn cubic_solver() {
        // (r-1)(r-2)(r+3) = r^3 - 7r + 6
        let mut r = cubic_roots([6.0, -7.0, 0.0, 1.0]);
        r.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((r[0] + 3.0).abs() < 1e-12 && (r[1] - 1.0).abs() < 1e-12 && (r[2] - 2.0).abs() < 1e-12);
        let r = cubic_roots([-2.0, 0.0, 1.0, 0.0]);
        assert_eq!(r.len(), 2);
    }
}
