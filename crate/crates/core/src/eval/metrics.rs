//! Reconstruction metrics.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::edge_graph::{InstanceMap, Label, BACKGROUND};
use crate::error::MetricError;
use crate::extract::VisibilityMesh;
use crate::refine::PrimitiveMap;

pub const IOU_THRESHOLD: f64 = 0.75;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn unit(key: u64, i: u64) -> f64 {
    (mix(key ^ mix(i)) >> 11) as f64 / (1u64 << 53) as f64
}

/// Area-weighted surface samples, about `n` in total. Each triangle draws
/// its own samples from a hash of its grid cell, so two meshes of nearly the
/// same surface yield nearly the same points.
pub fn sample_meshes<'a>(meshes: impl IntoIterator<Item = &'a VisibilityMesh>, n: usize, seed: u64) -> Vec<Vector3<f64>> {
    let mut tris: Vec<([Vector3<f64>; 3], f64, u64)> = Vec::new();
    let mut total = 0.0;
    for m in meshes {
        let base = mix(seed ^ mix(u64::from(m.surface) << 8 | u64::from(m.sheet)));
        for (fi, f) in m.faces.iter().enumerate() {
            let t = [m.vertices[f[0] as usize], m.vertices[f[1] as usize], m.vertices[f[2] as usize]];
            let a = 0.5 * (t[1] - t[0]).cross(&(t[2] - t[0])).norm();
            if a > 0.0 {
                total += a;
                let cell = m.cells.get(fi).copied().unwrap_or(fi as u64);
                tris.push((t, a, mix(base ^ cell)));
            }
        }
    }
    if tris.is_empty() || n == 0 {
        return Vec::new();
    }
    let density = n as f64 / total;
    let mut out = Vec::with_capacity(n + n / 8);
    for (t, a, key) in &tris {
        let count = (a * density + unit(*key, 0)).floor() as u64;
        for k in 0..count {
            let s = unit(*key, 2 * k + 1).sqrt();
            let r = unit(*key, 2 * k + 2);
            out.push(t[0] * (1.0 - s) + t[1] * (s * (1.0 - r)) + t[2] * (s * r));
        }
    }
    out
}

const LEAF: usize = 16;
const NONE: u32 = u32::MAX;

struct Node {
    axis: usize,
    split: f64,
    lo: u32,
    hi: u32,
    left: u32,
    right: u32,
}

/// Static 3-d tree with median splits on the widest axis. Coincident and
/// coplanar points need no special handling: a range with zero extent
/// simply stays a leaf.
struct PointTree {
    pts: Vec<[f64; 3]>,
    nodes: Vec<Node>,
}

impl PointTree {
    fn new(points: &[Vector3<f64>]) -> Self {
        let mut pts: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let mut nodes = Vec::new();
        let n = pts.len();
        Self::build(&mut pts, 0, n, &mut nodes);
        PointTree { pts, nodes }
    }

    fn build(pts: &mut [[f64; 3]], lo: usize, hi: usize, nodes: &mut Vec<Node>) -> u32 {
        let id = nodes.len();
        nodes.push(Node { axis: 0, split: 0.0, lo: lo as u32, hi: hi as u32, left: NONE, right: NONE });
        if hi - lo <= LEAF {
            return id as u32;
        }
        let extent = |k: usize| {
            let (mn, mx) = pts[lo..hi].iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p[k]), b.max(p[k])));
            mx - mn
        };
        let (axis, widest) = (0..3).map(|k| (k, extent(k))).fold((0, -1.0), |best, c| if c.1 > best.1 { c } else { best });
        if widest <= 0.0 {
            return id as u32;
        }
        let mid = (lo + hi) / 2;
        pts[lo..hi].select_nth_unstable_by(mid - lo, |a, b| a[axis].total_cmp(&b[axis]));
        let split = pts[mid][axis];
        let left = Self::build(pts, lo, mid, nodes);
        let right = Self::build(pts, mid, hi, nodes);
        nodes[id] = Node { axis, split, lo: lo as u32, hi: hi as u32, left, right };
        id as u32
    }

    fn nearest_sq(&self, q: &[f64; 3]) -> f64 {
        let mut best = f64::INFINITY;
        self.visit(0, q, &mut best);
        best
    }

    fn visit(&self, n: u32, q: &[f64; 3], best: &mut f64) {
        let node = &self.nodes[n as usize];
        if node.left == NONE {
            for p in &self.pts[node.lo as usize..node.hi as usize] {
                let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                *best = best.min(d);
            }
            return;
        }
        // left holds coordinates <= split, right >= split
        let d = q[node.axis] - node.split;
        let (near, far) = if d < 0.0 { (node.left, node.right) } else { (node.right, node.left) };
        self.visit(near, q, best);
        if d * d < *best {
            self.visit(far, q, best);
        }
    }
}

fn mean_nearest(from: &[Vector3<f64>], to: &[Vector3<f64>]) -> f64 {
    let tree = PointTree::new(to);
    // collected first so the summation order, and the result, is fixed
    let d: Vec<f64> = from.par_iter().map(|p| tree.nearest_sq(&[p.x, p.y, p.z]).sqrt()).collect();
    d.iter().sum::<f64>() / from.len() as f64
}

/// Symmetric mean nearest-neighbor distance.
pub fn chamfer(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Result<f64, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::EmptySet);
    }
    Ok(0.5 * (mean_nearest(a, b) + mean_nearest(b, a)))
}

/// Instance mask as a sorted list of pixel indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub id: u16,
    pub pixels: Vec<u32>,
}

impl Mask {
    pub fn iou(&self, other: &Mask) -> f64 {
        let (mut i, mut j, mut inter) = (0, 0, 0usize);
        while i < self.pixels.len() && j < other.pixels.len() {
            match self.pixels[i].cmp(&other.pixels[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    inter += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        let union = self.pixels.len() + other.pixels.len() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// One mask per non-background id of the map, restricted to `keep`.
pub fn masks_from_map(m: &InstanceMap, keep: impl Fn(u16) -> bool) -> Vec<Mask> {
    let mut by_id: std::collections::BTreeMap<u16, Vec<u32>> = Default::default();
    for (i, &id) in m.ids.iter().enumerate() {
        if id != BACKGROUND && keep(id) {
            by_id.entry(id).or_default().push(i as u32);
        }
    }
    by_id.into_iter().map(|(id, pixels)| Mask { id, pixels }).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// `(pred id, truth id, iou)`, sorted by pred id.
    pub pairs: Vec<(u16, u16, f64)>,
    pub unmatched_pred: Vec<u16>,
    pub unmatched_truth: Vec<u16>,
}

/// Greedy one-to-one matching by descending IoU, ties broken by lower
/// predicted then lower truth id. Pairs below [`IOU_THRESHOLD`] never match.
pub fn greedy_iou_match(pred: &[Mask], truth: &[Mask]) -> MatchResult {
    let mut pairs = Vec::new();
    for p in pred {
        for t in truth {
            let iou = p.iou(t);
            if iou >= IOU_THRESHOLD {
                pairs.push((p.id, t.id, iou));
            }
        }
    }
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut out: Vec<(u16, u16, f64)> = Vec::new();
    for (p, t, iou) in pairs {
        if out.iter().all(|m| m.0 != p && m.1 != t) {
            out.push((p, t, iou));
        }
    }
    out.sort_by_key(|m| (m.0, m.1));
    MatchResult {
        unmatched_pred: pred.iter().map(|m| m.id).filter(|id| out.iter().all(|p| p.0 != *id)).collect(),
        unmatched_truth: truth.iter().map(|m| m.id).filter(|id| out.iter().all(|p| p.1 != *id)).collect(),
        pairs: out,
    }
}

/// Mean sign-invariant axis error `min(|a - b|, |a + b|)` over matched pairs
/// that both carry an axis.
pub fn primitive_alignment(matches: &MatchResult, pred: &PrimitiveMap, truth: &PrimitiveMap) -> Result<f64, MetricError> {
    let errs: Vec<f64> = matches
        .pairs
        .iter()
        .filter_map(|(p, t, _)| {
            let a = pred.get(p)?.axis()?;
            let b = truth.get(t)?.axis()?;
            Some((a - b).norm().min((a + b).norm()))
        })
        .collect();
    if errs.is_empty() {
        return Err(MetricError::NoAxedMatches);
    }
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceScores {
    pub precision: f64,
    pub recall: f64,
    /// Fraction of matched pairs with equal primitive type.
    pub type_accuracy: f64,
    /// Fraction of matched pairs with equal axis class.
    pub axis_accuracy: f64,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn face_prf_and_accuracy(
    matches: &MatchResult,
    pred: &std::collections::BTreeMap<u16, Label>,
    truth: &std::collections::BTreeMap<u16, Label>,
) -> FaceScores {
    let labels = |p: &u16, t: &u16| pred.get(p).zip(truth.get(t));
    let matched = &matches.pairs;
    let same_type = matched.iter().filter(|(p, t, _)| labels(p, t).is_some_and(|(a, b)| a.kind == b.kind)).count();
    let same_axis = matched.iter().filter(|(p, t, _)| labels(p, t).is_some_and(|(a, b)| a.axis_class == b.axis_class)).count();
    FaceScores {
        precision: ratio(matched.len(), pred.len()),
        recall: ratio(matched.len(), truth.len()),
        type_accuracy: ratio(same_type, matched.len()),
        axis_accuracy: ratio(same_axis, matched.len()),
    }
}

/// Contents of `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub chamfer: f64,
    /// Absent when no matched pair carries an axis.
    pub primitive_alignment: Option<f64>,
    pub face_precision: f64,
    pub face_recall: f64,
    pub type_accuracy: f64,
    pub axis_accuracy: f64,
    /// Seconds; only recorded on request so reports stay reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(id: u16, r: std::ops::Range<u32>) -> Mask {
        Mask { id, pixels: r.collect() }
    }

    #[test]
    fn greedy_prefers_higher_iou() {
        let truth = [mask(1, 0..100)];
        let pred = [mask(1, 0..90), mask(2, 0..80)];
        let m = greedy_iou_match(&pred, &truth);
        assert_eq!(m.pairs.len(), 1);
        assert_eq!((m.pairs[0].0, m.pairs[0].1), (1, 1));
        assert!((m.pairs[0].2 - 0.9).abs() < 1e-12);
        assert_eq!(m.unmatched_pred, vec![2]);
    }

    #[test]
    fn below_threshold_unmatched() {
        let m = greedy_iou_match(&[mask(1, 0..74)], &[mask(1, 0..100)]);
        assert!(m.pairs.is_empty());
        assert_eq!(m.unmatched_truth, vec![1]);
    }

    #[test]
    fn chamfer_of_identical_sets_is_zero() {
        let a = vec![Vector3::new(0.0, 0.0, 1.0), Vector3::new(1.0, 0.0, 1.0)];
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        assert!(matches!(chamfer(&a, &[]), Err(MetricError::EmptySet)));
    }
}
