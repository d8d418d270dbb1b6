//! Instance maps, pixel-boundary contours and the simplified 2D edge graph.
//!
//! Contours run along the lattice between pixels. Lattice node `(cx, cy)`
//! sits at image position `(cx - 0.5, cy - 0.5)`. The image frame is not a
//! boundary; background (id 0) is.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::primitive::{AxisClass, PrimitiveType};

pub const BACKGROUND: u16 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    #[serde(rename = "type")]
    pub kind: PrimitiveType,
    #[serde(default)]
    pub axis_class: AxisClass,
}

pub type LabelTable = BTreeMap<u16, Label>;

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceMap {
    pub width: usize,
    pub height: usize,
    pub ids: Vec<u16>,
    pub labels: LabelTable,
}

impl InstanceMap {
    pub fn new(width: usize, height: usize, ids: Vec<u16>, labels: LabelTable) -> Self {
        assert_eq!(ids.len(), width * height);
        InstanceMap { width, height, ids, labels }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.ids[y * self.width + x]
    }

    /// Nonzero ids present in the raster, ascending.
    pub fn instance_ids(&self) -> Vec<u16> {
        let set: BTreeSet<u16> = self.ids.iter().copied().filter(|&i| i != BACKGROUND).collect();
        set.into_iter().collect()
    }

    /// Checks that every nonzero id has a label and background has none.
    pub fn validate(&self) -> Result<(), String> {
        if self.labels.contains_key(&BACKGROUND) {
            return Err("background id 0 must not carry a label".into());
        }
        for id in self.instance_ids() {
            let Some(l) = self.labels.get(&id) else {
                return Err(format!("instance {id} has no label"));
            };
            if l.kind == PrimitiveType::Sphere && l.axis_class.is_aligned() {
                return Err(format!("sphere instance {id} carries an aligned axis class"));
            }
        }
        Ok(())
    }

    pub fn mask(&self, id: u16) -> Vec<bool> {
        self.ids.iter().map(|&i| i == id).collect()
    }

    pub fn pixel_count(&self, id: u16) -> usize {
        self.ids.iter().filter(|&&i| i == id).count()
    }
}

#[inline]
fn lattice_point(cx: usize, cy: usize) -> Vector2<f64> {
    Vector2::new(cx as f64 - 0.5, cy as f64 - 0.5)
}

/// One traced boundary polyline. `left`/`right` are the instances on either
/// side when walking from the first point to the last (image axes, y down).
#[derive(Clone, Debug, PartialEq)]
pub struct Chain {
    pub points: Vec<Vector2<f64>>,
    pub closed: bool,
    pub left: u16,
    pub right: u16,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.points.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.points.len() < 2
    }
}

#[derive(Clone, Copy)]
struct LatticeSeg {
    a: usize,
    b: usize,
    left: u16,
    right: u16,
}

/// Traces every label boundary into chains. Chains end at lattice nodes
/// whose boundary degree is not 2 (junctions and frame contacts); boundary
/// cycles without junctions become closed chains.
pub fn extract_contours(m: &InstanceMap) -> Vec<Chain> {
    let (w, h) = (m.width, m.height);
    let node = |cx: usize, cy: usize| cy * (w + 1) + cx;
    let mut segs: Vec<LatticeSeg> = Vec::new();
    // vertical segments between horizontally adjacent pixels, walked downward
    for y in 0..h {
        for x in 0..w.saturating_sub(1) {
            let (a, b) = (m.get(x, y), m.get(x + 1, y));
            if a != b {
                segs.push(LatticeSeg { a: node(x + 1, y), b: node(x + 1, y + 1), left: b, right: a });
            }
        }
    }
    // horizontal segments between vertically adjacent pixels, walked rightward
    for y in 0..h.saturating_sub(1) {
        for x in 0..w {
            let (a, b) = (m.get(x, y), m.get(x, y + 1));
            if a != b {
                segs.push(LatticeSeg { a: node(x, y + 1), b: node(x + 1, y + 1), left: a, right: b });
            }
        }
    }
    let mut incident: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, s) in segs.iter().enumerate() {
        incident.entry(s.a).or_default().push(i);
        incident.entry(s.b).or_default().push(i);
    }
    let pos = |n: usize| lattice_point(n % (w + 1), n / (w + 1));
    let mut used = vec![false; segs.len()];
    let mut chains = Vec::new();

    let walk = |start_node: usize, first: usize, used: &mut Vec<bool>| -> Chain {
        let s0 = segs[first];
        let (mut cur, left, right) = if s0.a == start_node { (s0.b, s0.left, s0.right) } else { (s0.a, s0.right, s0.left) };
        used[first] = true;
        let mut pts = vec![pos(start_node), pos(cur)];
        loop {
            let inc = &incident[&cur];
            if inc.len() != 2 || cur == start_node {
                break;
            }
            let Some(&next) = inc.iter().find(|&&s| !used[s]) else { break };
            used[next] = true;
            let s = segs[next];
            cur = if s.a == cur { s.b } else { s.a };
            pts.push(pos(cur));
        }
        let closed = cur == start_node && pts.len() > 2;
        Chain { points: pts, closed, left, right }
    };

    let mut junctions: Vec<usize> = incident.iter().filter(|(_, v)| v.len() != 2).map(|(&k, _)| k).collect();
    junctions.sort_unstable();
    for j in junctions {
        let mut inc = incident[&j].clone();
        inc.sort_unstable();
        for s in inc {
            if !used[s] {
                chains.push(walk(j, s, &mut used));
            }
        }
    }
    for s in 0..segs.len() {
        if !used[s] {
            let start = segs[s].a.min(segs[s].b);
            chains.push(walk(start, s, &mut used));
        }
    }
    chains
}

fn point_segment_distance(p: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let ab = b - a;
    let l2 = ab.norm_squared();
    if l2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / l2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Douglas-Peucker on an open polyline; returns kept indices (ascending,
/// always including both ends).
pub fn douglas_peucker(points: &[Vector2<f64>], tol: f64) -> Vec<usize> {
    let n = points.len();
    if n <= 2 || tol <= 0.0 {
        return (0..n).collect();
    }
    let mut keep = vec![false; n];
    keep[0] = true;
    keep[n - 1] = true;
    let mut stack = vec![(0usize, n - 1)];
    while let Some((i, j)) = stack.pop() {
        let mut best = (0.0, i);
        for k in i + 1..j {
            let d = point_segment_distance(&points[k], &points[i], &points[j]);
            if d > best.0 {
                best = (d, k);
            }
        }
        if best.0 > tol {
            keep[best.1] = true;
            stack.push((i, best.1));
            stack.push((best.1, j));
        }
    }
    (0..n).filter(|&k| keep[k]).collect()
}

/// Kept point indices of a chain, closed chains split at the point farthest
/// from their start so both halves keep their shape.
fn simplify_chain(c: &Chain, tol: f64) -> Vec<usize> {
    if !c.closed {
        return douglas_peucker(&c.points, tol);
    }
    let n = c.points.len() - 1;
    let far = (1..n)
        .max_by(|&a, &b| {
            let da = (c.points[a] - c.points[0]).norm();
            let db = (c.points[b] - c.points[0]).norm();
            da.partial_cmp(&db).unwrap().then(b.cmp(&a))
        })
        .unwrap_or(0);
    let first = douglas_peucker(&c.points[..=far], tol);
    let second = douglas_peucker(&c.points[far..], tol);
    let mut out = first;
    out.extend(second.into_iter().skip(1).map(|k| k + far));
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge2D {
    pub a: usize,
    pub b: usize,
    /// Instance on the left when walking from `a` to `b` (image axes).
    pub left: u16,
    pub right: u16,
}

impl Edge2D {
    pub fn other(&self, v: usize) -> usize {
        if self.a == v {
            self.b
        } else {
            self.a
        }
    }

    pub fn touches(&self, id: u16) -> bool {
        self.left == id || self.right == id
    }

    /// Nonzero surfaces on either side, ascending.
    pub fn surfaces(&self) -> Vec<u16> {
        let mut s: Vec<u16> = [self.left, self.right].into_iter().filter(|&i| i != BACKGROUND).collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeGraph2D {
    pub vertices: Vec<Vector2<f64>>,
    pub edges: Vec<Edge2D>,
    /// Surface neighbor set per vertex (background excluded), ascending.
    pub neighbors: Vec<Vec<u16>>,
    pub width: usize,
    pub height: usize,
}

impl EdgeGraph2D {
    pub fn incident(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.vertices.len()];
        for (i, e) in self.edges.iter().enumerate() {
            inc[e.a].push(i);
            inc[e.b].push(i);
        }
        inc
    }

    pub fn recompute_neighbors(&mut self) {
        self.neighbors = neighbor_sets(self);
    }
}

/// Simplifies chains with Douglas-Peucker at tolerance `tol` and assembles
/// the edge graph. Chain endpoints are shared between chains meeting there.
pub fn simplify(chains: &[Chain], tol: f64, width: usize, height: usize) -> EdgeGraph2D {
    let key = |p: &Vector2<f64>| ((p.x * 2.0).round() as i64, (p.y * 2.0).round() as i64);
    let mut shared: HashMap<(i64, i64), usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut edges = Vec::new();
    for c in chains {
        if c.is_empty() {
            continue;
        }
        let kept = simplify_chain(c, tol);
        let mut ids = Vec::with_capacity(kept.len());
        for (j, &k) in kept.iter().enumerate() {
            let endpoint = j == 0 || j + 1 == kept.len();
            let p = c.points[k];
            let id = if endpoint {
                *shared.entry(key(&p)).or_insert_with(|| {
                    vertices.push(p);
                    vertices.len() - 1
                })
            } else {
                vertices.push(p);
                vertices.len() - 1
            };
            ids.push(id);
        }
        for w in ids.windows(2) {
            if w[0] != w[1] {
                edges.push(Edge2D { a: w[0], b: w[1], left: c.left, right: c.right });
            }
        }
    }
    let mut g = EdgeGraph2D { vertices, edges, neighbors: Vec::new(), width, height };
    g.recompute_neighbors();
    g
}

/// Inserts evenly spaced vertices into every edge longer than `spacing`
/// pixels, so that long straight edges still carry interior samples.
pub fn densify(g: &EdgeGraph2D, spacing: f64) -> EdgeGraph2D {
    if spacing <= 0.0 {
        return g.clone();
    }
    let mut vertices = g.vertices.clone();
    let mut edges = Vec::with_capacity(g.edges.len());
    for e in &g.edges {
        let (pa, pb) = (g.vertices[e.a], g.vertices[e.b]);
        let n = ((pb - pa).norm() / spacing).ceil().max(1.0) as usize;
        let mut prev = e.a;
        for k in 1..n {
            vertices.push(pa + (pb - pa) * (k as f64 / n as f64));
            let cur = vertices.len() - 1;
            edges.push(Edge2D { a: prev, b: cur, ..*e });
            prev = cur;
        }
        edges.push(Edge2D { a: prev, b: e.b, ..*e });
    }
    let mut out = EdgeGraph2D { vertices, edges, neighbors: Vec::new(), width: g.width, height: g.height };
    out.recompute_neighbors();
    out
}

pub fn neighbor_sets(g: &EdgeGraph2D) -> Vec<Vec<u16>> {
    let mut sets = vec![BTreeSet::new(); g.vertices.len()];
    for e in &g.edges {
        for v in [e.a, e.b] {
            for id in [e.left, e.right] {
                if id != BACKGROUND {
                    sets[v].insert(id);
                }
            }
        }
    }
    sets.into_iter().map(|s| s.into_iter().collect()).collect()
}

/// Moves every vertex interior to a straight run of one boundary onto a
/// least-squares line through the boundary lattice points within `radius`
/// pixels. Douglas-Peucker chords across a pixel staircase sit up to half a
/// pixel to one side of the underlying edge; the local fit removes that bias.
/// Junctions and vertices where the boundary turns by more than
/// `max_turn_deg` keep their positions.
pub fn snap_to_boundary(g: &EdgeGraph2D, chains: &[Chain], radius: f64, max_turn_deg: f64) -> EdgeGraph2D {
    if radius <= 0.0 {
        return g.clone();
    }
    let pair = |a: u16, b: u16| (a.min(b), a.max(b));
    let cell = |p: &Vector2<f64>| ((p.x / radius).floor() as i64, (p.y / radius).floor() as i64);
    let mut buckets: HashMap<((u16, u16), (i64, i64)), Vec<Vector2<f64>>> = HashMap::new();
    for c in chains {
        for p in &c.points {
            buckets.entry((pair(c.left, c.right), cell(p))).or_default().push(*p);
        }
    }
    let cos_max = max_turn_deg.to_radians().cos();
    let inc = g.incident();
    let mut out = g.clone();
    for (v, edges) in inc.iter().enumerate() {
        let [e0, e1] = edges[..] else { continue };
        let (e0, e1) = (&g.edges[e0], &g.edges[e1]);
        let key = pair(e0.left, e0.right);
        if key != pair(e1.left, e1.right) {
            continue;
        }
        let p = g.vertices[v];
        let (da, db) = (p - g.vertices[e0.other(v)], g.vertices[e1.other(v)] - p);
        let (na, nb) = (da.norm(), db.norm());
        if na <= 0.0 || nb <= 0.0 || da.dot(&db) / (na * nb) < cos_max {
            continue;
        }
        let (cx, cy) = cell(&p);
        let mut pts = Vec::new();
        for dy in -1..=1 {
            for dx in -1..=1 {
                if let Some(b) = buckets.get(&(key, (cx + dx, cy + dy))) {
                    pts.extend(b.iter().filter(|q| (*q - p).norm() <= radius));
                }
            }
        }
        if pts.len() < 3 {
            continue;
        }
        let mean = pts.iter().fold(Vector2::zeros(), |a, q| a + q) / pts.len() as f64;
        let cov = pts.iter().fold(nalgebra::Matrix2::zeros(), |a, q| a + (q - mean) * (q - mean).transpose());
        let eig = cov.symmetric_eigen();
        let dir: Vector2<f64> = eig.eigenvectors.column(if eig.eigenvalues[0] >= eig.eigenvalues[1] { 0 } else { 1 }).into();
        out.vertices[v] = mean + dir * (p - mean).dot(&dir);
    }
    out
}

/// Contours, simplification and densification in one call.
pub fn build_edge_graph(m: &InstanceMap, tol: f64, spacing: f64) -> EdgeGraph2D {
    let chains = extract_contours(m);
    densify(&simplify(&chains, tol, m.width, m.height), spacing)
}

/// Closed 2D outline of one instance: graph edges bounding it plus image
/// frame pieces where it touches the border. Segments are oriented with the
/// instance on their left.
#[derive(Clone, Debug)]
pub struct Region2D {
    pub id: u16,
    pub segments: Vec<(Vector2<f64>, Vector2<f64>)>,
    row0: i64,
    rows: Vec<Vec<usize>>,
}

impl Region2D {
    pub fn new(g: &EdgeGraph2D, m: &InstanceMap, id: u16) -> Self {
        let mut segments = Vec::new();
        for e in &g.edges {
            if e.left == e.right {
                continue;
            }
            let (pa, pb) = (g.vertices[e.a], g.vertices[e.b]);
            if e.left == id {
                segments.push((pa, pb));
            } else if e.right == id {
                segments.push((pb, pa));
            }
        }
        // frame pieces, oriented with the pixel center on the left
        let (w, h) = (m.width, m.height);
        let mut frame = |x: usize, y: usize, a: Vector2<f64>, b: Vector2<f64>| {
            if m.get(x, y) == id {
                let d = b - a;
                let left = Vector2::new(d.y, -d.x);
                let c = Vector2::new(x as f64, y as f64);
                if left.dot(&(c - (a + b) * 0.5)) > 0.0 {
                    segments.push((a, b));
                } else {
                    segments.push((b, a));
                }
            }
        };
        for x in 0..w {
            frame(x, 0, lattice_point(x, 0), lattice_point(x + 1, 0));
            frame(x, h - 1, lattice_point(x, h), lattice_point(x + 1, h));
        }
        for y in 0..h {
            frame(0, y, lattice_point(0, y), lattice_point(0, y + 1));
            frame(w - 1, y, lattice_point(w, y), lattice_point(w, y + 1));
        }
        Self::from_segments(id, segments)
    }

    pub fn from_segments(id: u16, segments: Vec<(Vector2<f64>, Vector2<f64>)>) -> Self {
        let (mut lo, mut hi) = (i64::MAX, i64::MIN);
        for (a, b) in &segments {
            lo = lo.min(a.y.min(b.y).floor() as i64);
            hi = hi.max(a.y.max(b.y).floor() as i64);
        }
        let mut rows = Vec::new();
        if lo <= hi {
            rows = vec![Vec::new(); (hi - lo + 1) as usize];
            for (i, (a, b)) in segments.iter().enumerate() {
                let r0 = a.y.min(b.y).floor() as i64;
                let r1 = a.y.max(b.y).floor() as i64;
                for r in r0..=r1 {
                    rows[(r - lo) as usize].push(i);
                }
            }
        }
        Region2D { id, segments, row0: lo, rows }
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Even-odd point-in-region test.
    pub fn contains(&self, q: &Vector2<f64>) -> bool {
        if self.rows.is_empty() || !q.y.is_finite() || !q.x.is_finite() {
            return false;
        }
        let r = q.y.floor() as i64 - self.row0;
        if r < 0 || r as usize >= self.rows.len() {
            return false;
        }
        let mut inside = false;
        for &i in &self.rows[r as usize] {
            let (a, b) = &self.segments[i];
            if (a.y > q.y) != (b.y > q.y) {
                let x = a.x + (q.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if x > q.x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Enclosed area (shoelace over the oriented segments).
    pub fn area(&self) -> f64 {
        let s: f64 = self.segments.iter().map(|(a, b)| a.x * b.y - b.x * a.y).sum();
        -0.5 * s
    }

    /// Distance from `q` to the outline.
    pub fn boundary_distance(&self, q: &Vector2<f64>) -> f64 {
        self.segments.iter().map(|(a, b)| point_segment_distance(q, a, b)).fold(f64::INFINITY, f64::min)
    }

    /// Pixel centers inside the outline.
    pub fn pixels(&self, width: usize, height: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..height {
            for x in 0..width {
                if self.contains(&Vector2::new(x as f64, y as f64)) {
                    out.push((x, y));
                }
            }
        }
        out
    }
}
