//! Perlin-based fractal Brownian motion and depth corruption.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::DepthImage;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FbmConfig {
    pub lacunarity: f64,
    pub persistence: f64,
    pub octaves: u32,
    /// Wavelength of the first octave in pixels.
    pub scale: f64,
    /// Output is remapped to `[-amplitude, amplitude]`.
    pub amplitude: f64,
    pub seed: u64,
}

impl Default for FbmConfig {
    fn default() -> Self {
        FbmConfig { lacunarity: 2.0, persistence: 0.5, octaves: 7, scale: 1000.0, amplitude: 0.25, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BilateralParams {
    pub sigma_spatial: f64,
    pub sigma_range: f64,
}

impl Default for BilateralParams {
    fn default() -> Self {
        BilateralParams { sigma_spatial: 2.0, sigma_range: 0.01 }
    }
}

/// Classic 2D gradient noise over a seeded 256-entry permutation.
pub struct Perlin {
    perm: [u8; 512],
}

impl Perlin {
    pub fn new(seed: u64) -> Self {
        let mut p: Vec<u8> = (0..=255).collect();
        p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut perm = [0u8; 512];
        for i in 0..512 {
            perm[i] = p[i & 255];
        }
        Perlin { perm }
    }

    fn grad(hash: u8, x: f64, y: f64) -> f64 {
        match hash & 7 {
            0 => x + y,
            1 => -x + y,
            2 => x - y,
            3 => -x - y,
            4 => x,
            5 => -x,
            6 => y,
            _ => -y,
        }
    }

    pub fn noise(&self, x: f64, y: f64) -> f64 {
        let fade = |t: f64| t * t * t * (t * (t * 6.0 - 15.0) + 10.0);
        let (xf, yf) = (x.floor(), y.floor());
        let (xi, yi) = ((xf as i64 & 255) as usize, (yf as i64 & 255) as usize);
        let (dx, dy) = (x - xf, y - yf);
        let (u, v) = (fade(dx), fade(dy));
        let p = &self.perm;
        let aa = p[p[xi] as usize + yi];
        let ab = p[p[xi] as usize + yi + 1];
        let ba = p[p[xi + 1] as usize + yi];
        let bb = p[p[xi + 1] as usize + yi + 1];
        let lerp = |t: f64, a: f64, b: f64| a + t * (b - a);
        let x1 = lerp(u, Self::grad(aa, dx, dy), Self::grad(ba, dx - 1.0, dy));
        let x2 = lerp(u, Self::grad(ab, dx, dy - 1.0), Self::grad(bb, dx - 1.0, dy - 1.0));
        lerp(v, x1, x2)
    }
}

/// Raw FBM value at pixel `(x, y)` before range mapping.
pub fn fbm_at(perlin: &Perlin, cfg: &FbmConfig, x: f64, y: f64) -> f64 {
    let (mut f, mut a, mut sum) = (1.0 / cfg.scale, 1.0, 0.0);
    for o in 0..cfg.octaves {
        // per-octave offset decorrelates the lattices of successive octaves
        let off = 17.31 * o as f64;
        sum += a * perlin.noise(x * f + off, y * f + off);
        f *= cfg.lacunarity;
        a *= cfg.persistence;
    }
    sum
}

/// FBM map remapped affinely so its minimum is `-amplitude` and its
/// maximum `+amplitude`. Row-major, `w * h` values.
pub fn fbm_noise(w: usize, h: usize, cfg: &FbmConfig) -> Vec<f64> {
    let perlin = Perlin::new(cfg.seed);
    let raw: Vec<f64> = (0..w * h).map(|i| fbm_at(&perlin, cfg, (i % w) as f64, (i / w) as f64)).collect();
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let a = cfg.amplitude;
    if !(hi > lo) || a == 0.0 {
        return vec![0.0; raw.len()];
    }
    raw.iter()
        .map(|&r| if r == hi { a } else { -a + 2.0 * a * ((r - lo) / (hi - lo)) })
        .collect()
}

/// Adds the FBM map to every valid depth (NaN stays NaN), then optionally
/// applies a bilateral filter.
pub fn corrupt_depth(d: &DepthImage, cfg: &FbmConfig, blur: Option<&BilateralParams>) -> DepthImage {
    let noise = fbm_noise(d.width, d.height, cfg);
    let mut out = d.clone();
    for (v, n) in out.data.iter_mut().zip(&noise) {
        if v.is_finite() {
            *v = (*v as f64 + n) as f32;
        }
    }
    match blur {
        Some(b) => bilateral(&out, b),
        None => out,
    }
}

pub fn bilateral(d: &DepthImage, p: &BilateralParams) -> DepthImage {
    let r = (2.0 * p.sigma_spatial).ceil() as isize;
    let mut out = d.clone();
    for y in 0..d.height as isize {
        for x in 0..d.width as isize {
            let c = d.get(x as usize, y as usize);
            if !c.is_finite() {
                continue;
            }
            let (mut acc, mut wsum) = (0.0, 0.0);
            for dy in -r..=r {
                for dx in -r..=r {
                    let (xx, yy) = (x + dx, y + dy);
                    if xx < 0 || yy < 0 || xx >= d.width as isize || yy >= d.height as isize {
                        continue;
                    }
                    let v = d.get(xx as usize, yy as usize);
                    if !v.is_finite() {
                        continue;
                    }
                    let ds = (dx * dx + dy * dy) as f64 / (2.0 * p.sigma_spatial * p.sigma_spatial);
                    let dr = ((v - c) as f64).powi(2) / (2.0 * p.sigma_range * p.sigma_range);
                    let w = (-ds - dr).exp();
                    acc += w * v as f64;
                    wsum += w;
                }
            }
            out.set(x as usize, y as usize, (acc / wsum) as f32);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_and_determinism() {
        let cfg = FbmConfig { seed: 4, ..Default::default() };
        let a = fbm_noise(64, 48, &cfg);
        let b = fbm_noise(64, 48, &cfg);
        assert_eq!(a, b);
        let lo = a.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((lo, hi), (-0.25, 0.25));
        let c = fbm_noise(64, 48, &FbmConfig { seed: 5, ..cfg });
        let differ = a.iter().zip(&c).filter(|(x, y)| x != y).count();
        assert!(differ as f64 >= 0.99 * a.len() as f64);
    }

    #[test]
    fn corruption_examples() {
        let mut d = DepthImage::filled(16, 8, 2.0);
        d.set(3, 3, f32::NAN);
        let zero = corrupt_depth(&d, &FbmConfig { amplitude: 0.0, ..Default::default() }, None);
        assert_eq!(zero.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), d.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        let cfg = FbmConfig { seed: 1, ..Default::default() };
        let noisy = corrupt_depth(&d, &cfg, None);
        let n = fbm_noise(16, 8, &cfg);
        assert!(noisy.get(3, 3).is_nan());
        for i in 0..d.data.len() {
            if i != 3 * 16 + 3 {
                assert!(((noisy.data[i] - 2.0) as f64 - n[i]).abs() < 1e-6);
            }
        }
        let blurred = corrupt_depth(&d, &cfg, Some(&BilateralParams::default()));
        assert!(blurred.get(3, 3).is_nan());
    }
}
