//! 3D wireframe over the edge graph and joint intersection refinement.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, DepthImage};
use crate::edge_graph::{EdgeGraph2D, LabelTable};
use crate::error::LmError;
use crate::fitting::{CleanedInstance, ReconTerm};
use crate::frame::AlignmentFrame;
use crate::lm::{minimize, BlockProblem, LmConfig, RowSink};
use crate::params::{ParamModel, D, LOCAL_SLOT};
use crate::primitive::{AxisClass, PrimitiveType, SurfacePrimitive};
use crate::real::{lift, Dual};

/// Per-vertex lifting state: position `s * ray`, with `ray` on the unit-depth
/// image plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wireframe3D {
    pub rays: Vec<Vector3<f64>>,
    pub s: Vec<f64>,
    pub intersection: Vec<bool>,
    pub neighbors: Vec<Vec<u16>>,
    /// Set when no valid depth was found near the vertex.
    pub low_confidence: Vec<bool>,
    pub edges: Vec<(usize, usize)>,
}

impl Wireframe3D {
    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }

    pub fn position(&self, i: usize) -> Vector3<f64> {
        self.rays[i] * self.s[i]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub d_int: f64,
    pub w_r: f64,
    pub rounds: usize,
    /// Threshold of rounds after the first, as a fraction of `d_int`.
    pub later_fraction: f64,
    pub lm: LmConfig,
    /// Total cleaned points kept for the reconstruction term.
    pub max_fit_points: usize,
    /// Residual level below which the reconstruction term is stiffened by
    /// the inverse variance ratio (see [`noise_gain`]); 0 disables.
    pub noise_floor: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig { d_int: 0.05, w_r: 0.1, rounds: 2, later_fraction: 0.2, lm: LmConfig::default(), max_fit_points: 60_000, noise_floor: 1e-3 }
    }
}

impl RefineConfig {
    pub fn threshold(&self, round: usize) -> f64 {
        if round == 0 {
            self.d_int
        } else {
            self.d_int * self.later_fraction
        }
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Depth seed at an image point: median of valid depths in the 5x5 window,
/// else the nearest valid pixel (flagged low confidence).
pub fn seed_depth(depth: &DepthImage, x: f64, y: f64) -> (f64, bool) {
    let (cx, cy) = (x.round() as isize, y.round() as isize);
    let (w, h) = (depth.width as isize, depth.height as isize);
    let mut vals = Vec::new();
    for dy in -2..=2 {
        for dx in -2..=2 {
            let (px, py) = (cx + dx, cy + dy);
            if px >= 0 && py >= 0 && px < w && py < h && depth.is_valid(px as usize, py as usize) {
                vals.push(depth.get(px as usize, py as usize) as f64);
            }
        }
    }
    if !vals.is_empty() {
        return (median(&mut vals), false);
    }
    for r in 3..w.max(h) {
        let mut best: Option<(isize, f64)> = None;
        for py in (cy - r).max(0)..=(cy + r).min(h - 1) {
            for px in (cx - r).max(0)..=(cx + r).min(w - 1) {
                if depth.is_valid(px as usize, py as usize) {
                    let d2 = (px - cx).pow(2) + (py - cy).pow(2);
                    if best.is_none_or(|(b, _)| d2 < b) {
                        best = Some((d2, depth.get(px as usize, py as usize) as f64));
                    }
                }
            }
        }
        if let Some((_, v)) = best {
            return (v, true);
        }
    }
    (1.0, true)
}

pub fn init_wireframe(g: &EdgeGraph2D, k: &CameraIntrinsics, depth: &DepthImage) -> Wireframe3D {
    let mut s = Vec::with_capacity(g.vertices.len());
    let mut low = Vec::with_capacity(g.vertices.len());
    for v in &g.vertices {
        let (d, l) = seed_depth(depth, v.x, v.y);
        s.push(d);
        low.push(l);
    }
    Wireframe3D {
        rays: g.vertices.iter().map(|q| k.view_ray(*q)).collect(),
        s,
        intersection: g.neighbors.iter().map(|n| n.len() >= 2).collect(),
        neighbors: g.neighbors.clone(),
        low_confidence: low,
        edges: g.edges.iter().map(|e| (e.a, e.b)).collect(),
    }
}

pub type PrimitiveMap = BTreeMap<u16, SurfacePrimitive>;

/// Intersection energy: sum over labeled vertices of squared distances to every neighbor.
pub fn e_int(prims: &PrimitiveMap, wf: &Wireframe3D) -> f64 {
    (0..wf.len())
        .filter(|&i| wf.intersection[i])
        .map(|i| {
            let p = wf.position(i);
            wf.neighbors[i].iter().filter_map(|id| prims.get(id)).map(|s| s.distance(&p).powi(2)).sum::<f64>()
        })
        .sum()
}

fn ray_cost(ray: &Vector3<f64>, s: f64, surfaces: &[&SurfacePrimitive]) -> f64 {
    let p = ray * s;
    surfaces.iter().map(|t| t.distance(&p).powi(2)).sum()
}

/// Gauss-Newton polish of the 1D ray problem from `s`.
fn newton_polish(ray: &Vector3<f64>, mut s: f64, surfaces: &[&SurfacePrimitive]) -> f64 {
    let shapes: Vec<_> = surfaces.iter().map(|t| t.shape.lift::<Dual<1>>()).collect();
    let mut f = ray_cost(ray, s, surfaces);
    for _ in 0..30 {
        let p = lift::<Dual<1>>(ray) * Dual::var(s, 0);
        let (mut jr, mut jj) = (0.0, 0.0);
        for sh in &shapes {
            let r = sh.signed_distance(&p);
            jr += r.re * r.eps[0];
            jj += r.eps[0] * r.eps[0];
        }
        if jj <= 0.0 {
            break;
        }
        let step = -jr / jj;
        let mut t = 1.0;
        let mut improved = false;
        while t > 1e-6 {
            let sn = s + t * step;
            let fnew = ray_cost(ray, sn, surfaces);
            if sn > 0.0 && fnew < f {
                s = sn;
                f = fnew;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved || (t * step).abs() < 1e-14 * s.max(1.0) {
            break;
        }
    }
    s
}

fn golden(ray: &Vector3<f64>, mut a: f64, mut b: f64, surfaces: &[&SurfacePrimitive]) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (ray_cost(ray, c, surfaces), ray_cost(ray, d, surfaces));
    for _ in 0..60 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = ray_cost(ray, c, surfaces);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = ray_cost(ray, d, surfaces);
        }
    }
    0.5 * (a + b)
}

/// Minimizes `sum_k dist(s ray, S_k)^2` over `s > 0` near `seed`: coarse
/// scan, golden-section refinement of each local minimum, Newton polish.
/// Among equally good minima the one closest to the seed wins.
pub fn solve_ray_depth(ray: &Vector3<f64>, seed: f64, surfaces: &[&SurfacePrimitive]) -> f64 {
    if surfaces.is_empty() || !(seed > 0.0) {
        return seed;
    }
    const N: usize = 97;
    let (lo, hi) = (0.6 * seed, 1.4 * seed);
    let h = (hi - lo) / (N - 1) as f64;
    let ss: Vec<f64> = (0..N).map(|k| lo + h * k as f64).collect();
    let fs: Vec<f64> = ss.iter().map(|&s| ray_cost(ray, s, surfaces)).collect();
    let mut best = (ray_cost(ray, seed, surfaces), seed);
    for k in 0..N {
        let left = if k == 0 { f64::INFINITY } else { fs[k - 1] };
        let right = if k + 1 == N { f64::INFINITY } else { fs[k + 1] };
        if fs[k] > left || fs[k] > right {
            continue;
        }
        let a = if k == 0 { ss[0] } else { ss[k - 1] };
        let b = if k + 1 == N { ss[N - 1] } else { ss[k + 1] };
        let s = newton_polish(ray, golden(ray, a, b, surfaces), surfaces);
        let f = ray_cost(ray, s, surfaces);
        let tie = (f - best.0).abs() <= 1e-12 * (1.0 + best.0);
        if (f < best.0 && !tie) || (tie && (s - seed).abs() < (best.1 - seed).abs()) {
            best = (f, s);
        }
    }
    best.1
}

/// Per-vertex depth minimization against all neighbor surfaces (every
/// vertex treated as labeled). Vertices in `skip` keep their depth.
pub fn depth_solve(wf: &Wireframe3D, prims: &PrimitiveMap, skip: Option<&[bool]>) -> Vec<f64> {
    (0..wf.len())
        .into_par_iter()
        .map(|i| {
            if skip.is_some_and(|s| s[i]) {
                return wf.s[i];
            }
            let surfaces: Vec<&SurfacePrimitive> = wf.neighbors[i].iter().filter_map(|id| prims.get(id)).collect();
            if surfaces.len() != wf.neighbors[i].len() {
                return wf.s[i];
            }
            solve_ray_depth(&wf.rays[i], wf.s[i], &surfaces)
        })
        .collect()
}

/// True when two neighbor planes share an aligned axis class.
pub fn parallel_planes(neighbors: &[u16], labels: &LabelTable) -> bool {
    let classes: Vec<AxisClass> = neighbors
        .iter()
        .filter_map(|id| labels.get(id))
        .filter(|l| l.kind == PrimitiveType::Plane && l.axis_class.is_aligned())
        .map(|l| l.axis_class)
        .collect();
    (0..classes.len()).any(|a| (a + 1..classes.len()).any(|b| classes[a] == classes[b]))
}

/// Intersection labels: at least two neighbors, all within `threshold`, no
/// parallel plane pair, and no neighbor in `excluded`.
pub fn label_intersections(
    wf: &Wireframe3D,
    prims: &PrimitiveMap,
    threshold: f64,
    labels: &LabelTable,
    excluded: &[u16],
) -> Vec<bool> {
    (0..wf.len())
        .map(|i| {
            let n = &wf.neighbors[i];
            if n.len() < 2 || parallel_planes(n, labels) || n.iter().any(|id| excluded.contains(id)) {
                return false;
            }
            let p = wf.position(i);
            n.iter().all(|id| prims.get(id).is_some_and(|s| s.distance(&p) < threshold))
        })
        .collect()
}

struct RefineProblem<'a> {
    model: ParamModel,
    verts: Vec<(Vector3<f64>, Vec<usize>)>,
    recon: ReconTerm<'a>,
}

impl BlockProblem for RefineProblem<'_> {
    fn dims(&self) -> (usize, usize) {
        (self.model.n_global, self.verts.len())
    }

    fn visit(&self, x: &[f64], jacobian: bool, sink: &mut RowSink<'_>) {
        let ng = self.model.n_global;
        let n = self.model.specs.len();
        if jacobian {
            let shapes: Vec<_> = (0..n).map(|i| self.model.dual_shape(i, x)).collect();
            let slots: Vec<_> = (0..n).map(|i| self.model.slots(i)).collect();
            let mut row = Vec::with_capacity(12);
            for (j, (ray, ks)) in self.verts.iter().enumerate() {
                let p = lift::<D>(ray) * D::var(x[ng + j], LOCAL_SLOT);
                for &k in ks {
                    let sd = shapes[k].signed_distance(&p);
                    row.clear();
                    row.extend(slots[k].iter().map(|&(s, g)| (g, sd.eps[s])));
                    sink(sd.re, &row, Some((j, sd.eps[LOCAL_SLOT])));
                }
            }
        } else {
            let prims = self.model.primitives(x);
            for (j, (ray, ks)) in self.verts.iter().enumerate() {
                let p = ray * x[ng + j];
                for &k in ks {
                    sink(prims[k].signed_distance(&p), &[], None);
                }
            }
        }
        self.recon.emit(&self.model, x, jacobian, sink);
    }
}

#[derive(Clone, Debug)]
pub struct RefineResult {
    pub primitives: PrimitiveMap,
    pub frame: AlignmentFrame,
    pub wireframe: Wireframe3D,
    pub threshold: f64,
}

/// RMS distance of the cleaned points of non-excluded instances to their
/// primitives.
pub fn fit_residual(prims: &PrimitiveMap, cleaned: &[CleanedInstance], excluded: &[u16]) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for c in cleaned.iter().filter(|c| !excluded.contains(&c.id)) {
        let Some(p) = prims.get(&c.id) else { continue };
        sum += c.points.iter().map(|q| p.distance(q).powi(2)).sum::<f64>();
        n += c.points.len();
    }
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Inverse-variance gain on the reconstruction weight: 1 at or above the
/// noise floor, `(floor / sigma)^2` below it (capped).
pub fn noise_gain(cfg: &RefineConfig, sigma: f64) -> f64 {
    if cfg.noise_floor <= 0.0 || sigma >= cfg.noise_floor {
        return 1.0;
    }
    (cfg.noise_floor / sigma.max(cfg.noise_floor * 1e-6)).powi(2)
}

/// Joint LM over primitives, frame and the depths of labeled vertices,
/// minimizing `E_int + w_r E_recon`. Returns updated primitives, frame and
/// depths (only labeled vertices move).
#[allow(clippy::too_many_arguments)]
fn joint_solve(
    prims: &PrimitiveMap,
    frame: &AlignmentFrame,
    wf: &Wireframe3D,
    cleaned: &[CleanedInstance],
    excluded: &[u16],
    use_axis: bool,
    sigma: f64,
    cfg: &RefineConfig,
) -> Result<(PrimitiveMap, AlignmentFrame, Vec<f64>), LmError> {
    let ids: Vec<u16> = prims.keys().copied().collect();
    let list: Vec<SurfacePrimitive> = ids.iter().map(|id| prims[id].clone()).collect();
    let fixed: Vec<bool> = ids.iter().map(|id| excluded.contains(id)).collect();
    let (model, mut x) = ParamModel::new(&list, frame, use_axis, &fixed);
    let index: BTreeMap<u16, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let labeled: Vec<usize> = (0..wf.len()).filter(|&i| wf.intersection[i]).collect();
    let verts = labeled.iter().map(|&i| (wf.rays[i], wf.neighbors[i].iter().map(|id| index[id]).collect())).collect();
    x.extend(labeled.iter().map(|&i| wf.s[i]));
    // reconstruction rows for every instance that has a primitive
    let by_id: BTreeMap<u16, usize> = cleaned.iter().enumerate().map(|(i, c)| (c.id, i)).collect();
    let ordered: Vec<CleanedInstance> = ids
        .iter()
        .map(|id| match by_id.get(id) {
            Some(&i) => cleaned[i].clone(),
            None => CleanedInstance { id: *id, primitive: prims[id].clone(), points: vec![], inlier_fraction: 0.0, flagged: true },
        })
        .collect();
    let include: Vec<bool> = fixed.iter().map(|f| !f).collect();
    let total: usize = ordered.iter().zip(&include).filter(|(_, i)| **i).map(|(c, _)| c.points.len()).sum();
    // reconstruction enters as a per-point mean so that its weight does not
    // grow with image resolution
    let weight = cfg.w_r * noise_gain(cfg, sigma) / total.max(1) as f64;
    let recon = ReconTerm::new(&ordered, &include, cfg.max_fit_points, weight);
    let problem = RefineProblem { model, verts, recon };
    let sol = match minimize(&problem, &x, &cfg.lm) {
        Ok(r) => r.params,
        Err(LmError::Diverged { params, .. }) => params,
        Err(e) => return Err(e),
    };
    let out_prims: PrimitiveMap = ids.iter().enumerate().map(|(i, id)| (*id, problem.model.primitive(i, &sol))).collect();
    let out_frame = problem.model.frame(&sol, frame);
    let mut s = wf.s.clone();
    for (j, &i) in labeled.iter().enumerate() {
        s[i] = sol[problem.model.n_global + j];
    }
    Ok((out_prims, out_frame, s))
}

/// Two-round iterative refinement. `excluded` instances (no consensus) are
/// held fixed and never produce intersection labels.
#[allow(clippy::too_many_arguments)]
pub fn refine(
    prims: &PrimitiveMap,
    frame: &AlignmentFrame,
    wf: &Wireframe3D,
    cleaned: &[CleanedInstance],
    labels: &LabelTable,
    excluded: &[u16],
    use_axis: bool,
    cfg: &RefineConfig,
) -> Result<RefineResult, LmError> {
    let mut prims = prims.clone();
    let mut frame = *frame;
    let mut wf = wf.clone();
    wf.s = depth_solve(&wf, &prims, None);
    let sigma = fit_residual(&prims, cleaned, excluded);
    let mut threshold = cfg.d_int;
    for round in 0..cfg.rounds.max(1) {
        threshold = cfg.threshold(round);
        if round > 0 {
            let keep = wf.intersection.clone();
            wf.s = depth_solve(&wf, &prims, Some(&keep));
        }
        wf.intersection = label_intersections(&wf, &prims, threshold, labels, excluded);
        if !wf.intersection.iter().any(|&b| b) {
            continue;
        }
        let (p, f, s) = joint_solve(&prims, &frame, &wf, cleaned, excluded, use_axis, sigma, cfg)?;
        prims = p;
        frame = f;
        wf.s = s;
    }
    let keep = wf.intersection.clone();
    wf.s = depth_solve(&wf, &prims, Some(&keep));
    wf.intersection = label_intersections(&wf, &prims, threshold, labels, excluded);
    Ok(RefineResult { primitives: prims, frame, wireframe: wf, threshold })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edge_graph::Label;

    fn two_planes() -> PrimitiveMap {
        let mut m = PrimitiveMap::new();
        m.insert(1, SurfacePrimitive::plane(Vector3::new(1.0, 0.0, 1.0), 2.0_f64.sqrt()));
        m.insert(2, SurfacePrimitive::plane(Vector3::new(-1.0, 0.0, 1.0), 0.0));
        m
    }

    fn wf_one(ray: Vector3<f64>, s: f64, n: Vec<u16>) -> Wireframe3D {
        Wireframe3D {
            rays: vec![ray],
            s: vec![s],
            intersection: vec![true],
            neighbors: vec![n],
            low_confidence: vec![false],
            edges: vec![],
        }
    }

    #[test]
    fn ray_through_crease_line() {
        // planes x + z = 2 and z = x meet on the line x = z = 1
        let prims = two_planes();
        let ray = Vector3::new(0.5, 0.15, 0.5);
        let wf = wf_one(ray, 1.7, vec![1, 2]);
        let s = depth_solve(&wf, &prims, None)[0];
        let p = ray * s;
        assert!((p - Vector3::new(1.0, 0.3, 1.0)).norm() < 1e-8, "{p:?}");
    }

    #[test]
    fn single_plane_depth() {
        let mut prims = PrimitiveMap::new();
        prims.insert(1, SurfacePrimitive::plane(Vector3::z(), 1.0));
        let wf = wf_one(Vector3::z(), 0.8, vec![1]);
        assert!((depth_solve(&wf, &prims, None)[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn e_int_examples() {
        let mut prims = PrimitiveMap::new();
        prims.insert(1, SurfacePrimitive::plane(Vector3::x(), 0.1));
        prims.insert(2, SurfacePrimitive::plane(Vector3::y(), -0.1));
        let mut wf = wf_one(Vector3::z(), 1.0, vec![1, 2]);
        assert!((e_int(&prims, &wf) - 0.02).abs() < 1e-15);
        wf.intersection[0] = false;
        assert_eq!(e_int(&prims, &wf), 0.0);
    }

    #[test]
    fn labeling_rules() {
        let mut labels = LabelTable::new();
        labels.insert(1, Label { kind: PrimitiveType::Plane, axis_class: AxisClass::Z });
        labels.insert(2, Label { kind: PrimitiveType::Plane, axis_class: AxisClass::Z });
        labels.insert(3, Label { kind: PrimitiveType::Plane, axis_class: AxisClass::X });
        let mut prims = PrimitiveMap::new();
        prims.insert(1, SurfacePrimitive::plane(Vector3::z(), 1.0));
        prims.insert(2, SurfacePrimitive::plane(Vector3::z(), 1.02));
        prims.insert(3, SurfacePrimitive::plane(Vector3::x(), 0.06));
        let on_both = wf_one(Vector3::z(), 1.0, vec![1, 3]);
        let mut shifted = on_both.clone();
        shifted.rays[0] = Vector3::new(0.0, 0.0, 1.0);
        // distance 0.06 to plane 3
        assert_eq!(label_intersections(&shifted, &prims, 0.05, &labels, &[]), vec![false]);
        let mut close = on_both.clone();
        close.rays[0] = Vector3::new(0.06, 0.0, 1.0);
        assert_eq!(label_intersections(&close, &prims, 0.05, &labels, &[]), vec![true]);
        assert_eq!(label_intersections(&close, &prims, 0.05, &labels, &[3]), vec![false]);
        let parallel = wf_one(Vector3::z(), 1.01, vec![1, 2]);
        assert_eq!(label_intersections(&parallel, &prims, 0.05, &labels, &[]), vec![false]);
    }

    #[test]
    fn seed_depth_fallback() {
        let mut d = DepthImage::new(20, 20);
        d.set(15, 15, 2.5);
        let (v, low) = seed_depth(&d, 5.0, 5.0);
        assert_eq!((v, low), (2.5, true));
        let d = DepthImage::filled(20, 20, 1.5);
        assert_eq!(seed_depth(&d, 5.0, 5.0), (1.5, false));
    }
}
