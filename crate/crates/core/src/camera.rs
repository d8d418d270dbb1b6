//! Pinhole camera, depth rasters, unprojection and Sobel normals.
//!
//! Pixel `(x, y)` has its center at image coordinates `(x, y)`; depth is
//! the camera-space `z` of the surface point (not the ray length).

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::FormatError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    /// Camera with square pixels, principal point at the image center and
    /// the given horizontal field of view.
    pub fn with_fov(width: usize, height: usize, hfov_deg: f64) -> Self {
        let f = 0.5 * width as f64 / (0.5 * hfov_deg.to_radians()).tan();
        CameraIntrinsics {
            fx: f,
            fy: f,
            cx: 0.5 * (width as f64 - 1.0),
            cy: 0.5 * (height as f64 - 1.0),
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<(), FormatError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(FormatError::Invalid(format!("camera intrinsics {self:?}")))
        }
    }

    /// Point on the unit-depth image plane through image position `q`.
    pub fn view_ray(&self, q: Vector2<f64>) -> Vector3<f64> {
        Vector3::new((q.x - self.cx) / self.fx, (q.y - self.cy) / self.fy, 1.0)
    }

    pub fn project(&self, p: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    pub fn contains(&self, q: &Vector2<f64>) -> bool {
        q.x >= -0.5 && q.y >= -0.5 && q.x < self.width as f64 - 0.5 && q.y < self.height as f64 - 0.5
    }
}

pub fn view_ray(pixel: (f64, f64), k: &CameraIntrinsics) -> Vector3<f64> {
    k.view_ray(Vector2::new(pixel.0, pixel.1))
}

/// Row-major depth raster; `NaN` marks invalid pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize) -> Self {
        DepthImage { width, height, data: vec![f32::NAN; width * height] }
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        DepthImage { width, height, data: vec![value; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        let v = self.get(x, y);
        v.is_finite() && v > 0.0
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|v| v.is_finite() && **v > 0.0).count()
    }

    fn check(&self, k: &CameraIntrinsics) -> Result<(), FormatError> {
        if self.width != k.width || self.height != k.height {
            return Err(FormatError::DimensionMismatch {
                expected: (k.width, k.height),
                got: (self.width, self.height),
            });
        }
        Ok(())
    }
}

/// A point of the frontal cloud together with its source pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CloudPoint {
    pub point: Vector3<f64>,
    pub pixel: (usize, usize),
}

pub type PointCloud = Vec<CloudPoint>;

pub fn unproject(d: &DepthImage, k: &CameraIntrinsics) -> Result<PointCloud, FormatError> {
    d.check(k)?;
    let mut out = Vec::with_capacity(d.valid_count());
    for y in 0..d.height {
        for x in 0..d.width {
            if d.is_valid(x, y) {
                let z = d.get(x, y) as f64;
                out.push(CloudPoint { point: k.view_ray(Vector2::new(x as f64, y as f64)) * z, pixel: (x, y) });
            }
        }
    }
    Ok(out)
}

/// Unprojected point of one pixel, if valid.
pub fn pixel_point(d: &DepthImage, k: &CameraIntrinsics, x: usize, y: usize) -> Option<Vector3<f64>> {
    d.is_valid(x, y)
        .then(|| k.view_ray(Vector2::new(x as f64, y as f64)) * d.get(x, y) as f64)
}

/// Per-pixel normals from 3x3 Sobel depth gradients pushed through the
/// perspective unprojection Jacobian. Normals face the camera; pixels whose
/// stencil leaves the image or touches invalid depth are `NaN`.
pub fn estimate_normals(d: &DepthImage, k: &CameraIntrinsics) -> Result<Vec<Vector3<f64>>, FormatError> {
    d.check(k)?;
    let nan = Vector3::repeat(f64::NAN);
    let mut out = vec![nan; d.width * d.height];
    if d.width < 3 || d.height < 3 {
        return Ok(out);
    }
    for y in 1..d.height - 1 {
        'px: for x in 1..d.width - 1 {
            let mut z = [[0.0f64; 3]; 3];
            for (j, row) in z.iter_mut().enumerate() {
                for (i, v) in row.iter_mut().enumerate() {
                    if !d.is_valid(x + i - 1, y + j - 1) {
                        continue 'px;
                    }
                    *v = d.get(x + i - 1, y + j - 1) as f64;
                }
            }
            let gx = ((z[0][2] + 2.0 * z[1][2] + z[2][2]) - (z[0][0] + 2.0 * z[1][0] + z[2][0])) / 8.0;
            let gy = ((z[2][0] + 2.0 * z[2][1] + z[2][2]) - (z[0][0] + 2.0 * z[0][1] + z[0][2])) / 8.0;
            let zc = z[1][1];
            let ray = k.view_ray(Vector2::new(x as f64, y as f64));
            let dx = ray * gx + Vector3::new(zc / k.fx, 0.0, 0.0);
            let dy = ray * gy + Vector3::new(0.0, zc / k.fy, 0.0);
            let mut n = dx.cross(&dy);
            let len = n.norm();
            if !(len > 0.0) {
                continue;
            }
            n /= len;
            if n.dot(&ray) > 0.0 {
                n = -n;
            }
            out[y * d.width + x] = n;
        }
    }
    Ok(out)
}

/// Gaussian smoothing that ignores invalid pixels (normalized by the valid
/// weight); invalid pixels stay invalid.
pub fn smooth_depth(d: &DepthImage, sigma: f64) -> DepthImage {
    if sigma <= 0.0 {
        return d.clone();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let pass = |src: &[f32], horizontal: bool| -> Vec<f32> {
        let mut out = vec![f32::NAN; src.len()];
        for y in 0..d.height {
            for x in 0..d.width {
                let c = src[y * d.width + x];
                if !(c.is_finite() && c > 0.0) {
                    continue;
                }
                let (mut acc, mut wsum) = (0.0, 0.0);
                for (ki, w) in kernel.iter().enumerate() {
                    let o = ki as isize - r;
                    let (xx, yy) = if horizontal { (x as isize + o, y as isize) } else { (x as isize, y as isize + o) };
                    if xx < 0 || yy < 0 || xx >= d.width as isize || yy >= d.height as isize {
                        continue;
                    }
                    let v = src[yy as usize * d.width + xx as usize];
                    if v.is_finite() && v > 0.0 {
                        acc += w * v as f64;
                        wsum += w;
                    }
                }
                out[y * d.width + x] = (acc / wsum) as f32;
            }
        }
        out
    };
    let h = pass(&d.data, true);
    DepthImage { width: d.width, height: d.height, data: pass(&h, false) }
}
