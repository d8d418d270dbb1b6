//! Per-instance RANSAC fitting and the global axis-constrained fit.

use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FitError, LmError};
use crate::frame::AlignmentFrame;
use crate::lm::{minimize, BlockProblem, LmConfig, RowSink};
use crate::minimal::{fit_minimal, minimal_size};
use crate::params::{emit_distance_rows, initial_frame, ParamModel};
use crate::primitive::{AxisClass, PrimitiveType, SurfacePrimitive};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub d_inlier: f64,
    pub ransac_iterations: usize,
    pub seed: u64,
    pub lm: LmConfig,
    /// Maximum angle between a point normal and the candidate surface normal
    /// for the point to count toward a candidate's score.
    pub normal_tolerance_deg: f64,
    /// Points used to score RANSAC candidates (uniform stride subsample).
    pub max_score_points: usize,
    /// Total points used by the global fit (uniform stride, reweighted).
    pub max_fit_points: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            d_inlier: 0.03,
            ransac_iterations: 256,
            seed: 0,
            lm: LmConfig::default(),
            normal_tolerance_deg: 30.0,
            max_score_points: 8000,
            max_fit_points: 60_000,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.d_inlier > 0.0) || self.ransac_iterations == 0 {
            return Err("d_inlier must be positive and ransac_iterations at least 1".into());
        }
        self.lm.validate()
    }
}

/// A fitted instance with its cleaned point set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CleanedInstance {
    pub id: u16,
    pub primitive: SurfacePrimitive,
    pub points: Vec<Vector3<f64>>,
    pub inlier_fraction: f64,
    /// Set when RANSAC found no consensus; the fit is kept but untrusted.
    #[serde(default)]
    pub flagged: bool,
}

/// RNG stream for one instance, derived from the master seed.
pub fn instance_rng(seed: u64, id: u16) -> ChaCha8Rng {
    let mut z = seed ^ (u64::from(id).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

fn compatible(prim: &SurfacePrimitive, p: &Vector3<f64>, n: &Vector3<f64>, cos_tol: f64) -> bool {
    if !n.x.is_finite() {
        return true;
    }
    match prim.normal_at(p) {
        Ok(m) => m.dot(n).abs() >= cos_tol,
        Err(_) => false,
    }
}

fn stride_indices(n: usize, max: usize) -> Vec<usize> {
    if n <= max || max == 0 {
        return (0..n).collect();
    }
    let step = n as f64 / max as f64;
    (0..max).map(|k| (k as f64 * step) as usize).collect()
}

/// Least-squares polish of a single primitive on `points`, axis free.
pub fn polish(prim: &SurfacePrimitive, points: &[Vector3<f64>], lm: &LmConfig) -> Option<SurfacePrimitive> {
    let free = prim.clone().with_axis_class(AxisClass::Unaligned);
    let inst = CleanedInstance { id: 0, primitive: free, points: points.to_vec(), inlier_fraction: 1.0, flagged: false };
    let cfg = FitConfig { lm: *lm, max_fit_points: usize::MAX, ..Default::default() };
    let out = global_align_fit(std::slice::from_ref(&inst), &cfg, false).ok()?;
    let p = out.primitives.into_iter().next()?.with_axis_class(prim.axis_class);
    p.validate().ok().map(|_| p)
}

/// RANSAC over minimal samples, scored by points within `d_inlier` whose
/// normals agree with the candidate; the winner is polished by least
/// squares and its cleaned set is every point within `d_inlier`.
///
/// The reported consensus counts support beyond the minimal sample, which
/// always agrees with its own candidate.
pub fn ransac_fit(
    id: u16,
    points: &[Vector3<f64>],
    normals: &[Vector3<f64>],
    kind: PrimitiveType,
    axis_class: AxisClass,
    cfg: &FitConfig,
) -> Result<CleanedInstance, FitError> {
    let k = minimal_size(kind);
    let sampleable: Vec<usize> = (0..points.len()).filter(|&i| normals.get(i).is_some_and(|n| n.x.is_finite())).collect();
    if points.len() < k || sampleable.len() < k {
        return Err(FitError::InsufficientPoints { needed: k, got: sampleable.len().min(points.len()) });
    }
    let cos_tol = cfg.normal_tolerance_deg.to_radians().cos();
    let nan = Vector3::repeat(f64::NAN);
    let normal_of = |i: usize| normals.get(i).copied().unwrap_or(nan);
    let scoring = stride_indices(points.len(), cfg.max_score_points);
    let mut rng = instance_rng(cfg.seed, id);
    let mut best: Option<(usize, f64, SurfacePrimitive)> = None;
    for _ in 0..cfg.ransac_iterations {
        let pick = sample(&mut rng, sampleable.len(), k);
        let idx: Vec<usize> = pick.iter().map(|j| sampleable[j]).collect();
        let ps: Vec<_> = idx.iter().map(|&i| points[i]).collect();
        let ns: Vec<_> = idx.iter().map(|&i| normals[i]).collect();
        let Ok(cand) = fit_minimal(kind, &ps, &ns) else { continue };
        let valid = ps.iter().zip(&ns).all(|(p, n)| cand.distance(p) < cfg.d_inlier && compatible(&cand, p, n, cos_tol));
        if !valid {
            continue;
        }
        let (mut count, mut sum) = (0usize, 0.0);
        for &i in &scoring {
            let d = cand.distance(&points[i]);
            if d < cfg.d_inlier && compatible(&cand, &points[i], &normal_of(i), cos_tol) {
                count += 1;
                sum += d;
            }
        }
        let mean = if count > 0 { sum / count as f64 } else { f64::INFINITY };
        let better = match &best {
            None => true,
            Some((c, m, _)) => count > *c || (count == *c && mean < *m),
        };
        if better {
            best = Some((count, mean, cand));
        }
    }
    let Some((count, _, cand)) = best else {
        return Err(FitError::NoConsensus { fraction: 0.0, best: None });
    };
    let support = count.saturating_sub(k) as f64 / (scoring.len().saturating_sub(k)).max(1) as f64;

    let inliers = |prim: &SurfacePrimitive, with_normals: bool| -> Vec<Vector3<f64>> {
        (0..points.len())
            .filter(|&i| {
                prim.distance(&points[i]) < cfg.d_inlier
                    && (!with_normals || compatible(prim, &points[i], &normal_of(i), cos_tol))
            })
            .map(|i| points[i])
            .collect()
    };
    let mut prim = cand.with_axis_class(axis_class);
    for pass in 0..2 {
        let set = inliers(&prim, pass == 0);
        if set.len() < k {
            break;
        }
        match polish(&prim, &set, &cfg.lm) {
            Some(p) => prim = p,
            None => break,
        }
    }
    let cleaned = inliers(&prim, false);
    let inst = CleanedInstance {
        id,
        inlier_fraction: cleaned.len() as f64 / points.len() as f64,
        primitive: prim,
        points: cleaned,
        flagged: false,
    };
    if support < 0.2 {
        return Err(FitError::NoConsensus { fraction: support, best: Some(Box::new(CleanedInstance { flagged: true, ..inst })) });
    }
    Ok(inst)
}

/// Reconstruction cost: sum of unsigned point-to-surface distances.
pub fn e_recon(primitives: &[SurfacePrimitive], cleaned: &[CleanedInstance]) -> f64 {
    primitives.iter().zip(cleaned).map(|(s, c)| c.points.iter().map(|p| s.distance(p)).sum::<f64>()).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignResult {
    pub primitives: Vec<SurfacePrimitive>,
    pub frame: AlignmentFrame,
    /// Unsquared reconstruction cost at the solution.
    pub e_recon: f64,
    pub iterations: usize,
}

/// Signed-distance residuals of cleaned points against the model.
pub(crate) struct ReconTerm<'a> {
    pub sets: Vec<(usize, &'a [Vector3<f64>])>,
    pub stride: usize,
    pub weight: f64,
}

impl<'a> ReconTerm<'a> {
    pub fn new(cleaned: &'a [CleanedInstance], include: &[bool], max_points: usize, weight: f64) -> Self {
        let sets: Vec<(usize, &[Vector3<f64>])> =
            cleaned.iter().enumerate().filter(|(i, _)| include[*i]).map(|(i, c)| (i, c.points.as_slice())).collect();
        let total: usize = sets.iter().map(|(_, s)| s.len()).sum();
        let stride = total.div_ceil(max_points.max(1)).max(1);
        // each kept point stands for `stride` points
        ReconTerm { sets, stride, weight: (weight * stride as f64).sqrt() }
    }

    pub fn emit(&self, model: &ParamModel, x: &[f64], jacobian: bool, sink: &mut RowSink<'_>) {
        for (i, pts) in &self.sets {
            let plain = model.primitive(*i, x).shape;
            let dual = if jacobian { model.dual_shape(*i, x) } else { plain.lift() };
            let slots = model.slots(*i);
            emit_distance_rows(&dual, &slots, pts.iter().step_by(self.stride).copied(), self.weight, jacobian, &plain, sink);
        }
    }
}

struct AlignProblem<'a> {
    model: ParamModel,
    recon: ReconTerm<'a>,
}

impl BlockProblem for AlignProblem<'_> {
    fn dims(&self) -> (usize, usize) {
        (self.model.n_global, 0)
    }

    fn visit(&self, x: &[f64], jacobian: bool, sink: &mut RowSink<'_>) {
        self.recon.emit(&self.model, x, jacobian, sink);
    }
}

/// Jointly fits all primitives and the alignment frame to the cleaned sets.
/// Flagged instances are fitted without axis coupling. With `use_axis`
/// false every axis is free.
pub fn global_align_fit(cleaned: &[CleanedInstance], cfg: &FitConfig, use_axis: bool) -> Result<AlignResult, FitError> {
    let prims: Vec<SurfacePrimitive> = cleaned
        .iter()
        .map(|c| if c.flagged { c.primitive.clone().with_axis_class(AxisClass::Unaligned) } else { c.primitive.clone() })
        .collect();
    let frame = if use_axis { initial_frame(&prims) } else { AlignmentFrame::default() };
    let (model, x0) = ParamModel::new(&prims, &frame, use_axis, &vec![false; prims.len()]);
    let include = vec![true; cleaned.len()];
    let problem = AlignProblem { model, recon: ReconTerm::new(cleaned, &include, cfg.max_fit_points, 1.0) };
    let (x, iterations) = match minimize(&problem, &x0, &cfg.lm) {
        Ok(r) => (r.params, r.iterations),
        Err(LmError::Diverged { params, .. }) => {
            log::warn!("global fit stopped after repeated rejections; keeping last accepted state");
            (params, cfg.lm.max_iterations)
        }
        Err(e) => return Err(e.into()),
    };
    let mut primitives = problem.model.primitives(&x);
    for (p, c) in primitives.iter_mut().zip(cleaned) {
        p.axis_class = c.primitive.axis_class;
    }
    let frame = problem.model.frame(&x, &frame);
    Ok(AlignResult { e_recon: e_recon(&primitives, cleaned), primitives, frame, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::frame_axis;

    fn plane_samples(n: usize) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
        let pts = (0..n).map(|i| Vector3::new((i % 40) as f64 * 0.02 - 0.4, (i / 40) as f64 * 0.02 - 0.3, 1.0)).collect();
        (pts, vec![Vector3::new(0.0, 0.0, -1.0); n])
    }

    #[test]
    fn exact_plane() {
        let (p, n) = plane_samples(1000);
        let cfg = FitConfig { ransac_iterations: 100, ..Default::default() };
        let c = ransac_fit(1, &p, &n, PrimitiveType::Plane, AxisClass::Unaligned, &cfg).unwrap();
        assert_eq!(c.points.len(), 1000);
        let nrm = c.primitive.axis().unwrap();
        let crate::primitive::Shape::Plane { offset, .. } = c.primitive.shape else { panic!() };
        assert!((nrm.z.abs() - 1.0).abs() < 1e-9 && (offset.abs() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn reproducible() {
        let (p, n) = plane_samples(500);
        let cfg = FitConfig { seed: 9, ..Default::default() };
        let a = ransac_fit(3, &p, &n, PrimitiveType::Plane, AxisClass::Z, &cfg).unwrap();
        let b = ransac_fit(3, &p, &n, PrimitiveType::Plane, AxisClass::Z, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_points() {
        let r = ransac_fit(1, &[Vector3::zeros()], &[Vector3::z()], PrimitiveType::Cylinder, AxisClass::Z, &FitConfig::default());
        assert!(matches!(r, Err(FitError::InsufficientPoints { needed: 2, .. })));
    }

    #[test]
    fn e_recon_examples() {
        let plane = SurfacePrimitive::plane(Vector3::z(), 0.0);
        let one = CleanedInstance {
            id: 1,
            primitive: plane.clone(),
            points: vec![Vector3::new(0.0, 0.0, 0.2)],
            inlier_fraction: 1.0,
            flagged: false,
        };
        assert!((e_recon(std::slice::from_ref(&plane), std::slice::from_ref(&one)) - 0.2).abs() < 1e-15);
        let three = CleanedInstance { points: vec![Vector3::new(1.0, 2.0, 0.1), Vector3::new(0.0, 0.0, -0.1), Vector3::new(5.0, 0.0, 0.1)], ..one };
        let total = e_recon(&[plane.clone(), plane.clone()], &[three.clone(), three]);
        assert!((total - 0.6).abs() < 1e-12);
    }

    #[test]
    fn aligned_cylinder_recovers_frame() {
        let axis = Vector3::new(0.2, 0.9, 0.1).normalize();
        let truth = SurfacePrimitive::cylinder(axis, Vector3::new(0.1, 0.0, 2.0), 0.3);
        let pts: Vec<_> = (0..600).map(|i| truth.uv_to_point(i as f64 * 0.37, (i % 23) as f64 * 0.03 - 0.3)).collect();
        let start = SurfacePrimitive::cylinder(Vector3::new(0.25, 0.88, 0.05), Vector3::new(0.12, 0.0, 2.0), 0.29)
            .with_axis_class(AxisClass::X);
        let c = CleanedInstance { id: 1, primitive: start, points: pts.clone(), inlier_fraction: 1.0, flagged: false };
        let r = global_align_fit(&[c], &FitConfig::default(), true).unwrap();
        let got = r.primitives[0].axis().unwrap();
        assert_eq!(got, frame_axis(&r.frame, AxisClass::X).unwrap());
        assert!(got.dot(&axis).abs() > 1.0 - 1e-10);
        let worst = pts.iter().map(|p| r.primitives[0].distance(p)).fold(0.0, f64::max);
        assert!(worst < 1e-6, "{worst}");
    }
}
