//! Bounded view-centric meshes of one primitive inside its 2D region.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, DepthImage};
use crate::edge_graph::Region2D;
use crate::error::ExtractError;
use crate::primitive::{canonical_sign, PrimitiveType, Shape, SurfacePrimitive};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisibilityMesh {
    pub surface: u16,
    /// Depth-layer index among the surface's components.
    pub layer: usize,
    /// Sheet label shared by every face (see [`sheet_label`]).
    pub sheet: u8,
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[u32; 3]>,
    /// Edges used by exactly one face.
    pub boundary: Vec<(u32, u32)>,
    /// Per face, the grid cell it came from (`2 * cell + half`). Stable under
    /// small changes of the primitive, so it keys coherent surface sampling.
    #[serde(default)]
    pub cells: Vec<u64>,
}

impl VisibilityMesh {
    pub fn area(&self) -> f64 {
        self.faces.iter().map(|f| tri_area(&self.vertices, f)).sum()
    }

    pub fn boundary_vertices(&self) -> Vec<u32> {
        let mut v: Vec<u32> = self.boundary.iter().flat_map(|&(a, b)| [a, b]).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

pub(crate) fn tri_area(v: &[Vector3<f64>], f: &[u32; 3]) -> f64 {
    let (a, b, c) = (v[f[0] as usize], v[f[1] as usize], v[f[2] as usize]);
    0.5 * (b - a).cross(&(c - a)).norm()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeshConfig {
    pub grid: usize,
    pub growth: f64,
    pub max_doublings: usize,
    /// Meshes stop at this multiple of the deepest measurement in the region.
    pub depth_margin: f64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig { grid: 256, growth: 2.0, max_doublings: 6, depth_margin: 1.25 }
    }
}

/// Number of candidate sheets of a primitive type.
pub fn sheet_count(kind: PrimitiveType) -> u8 {
    match kind {
        PrimitiveType::Plane => 1,
        PrimitiveType::Torus => 4,
        _ => 2,
    }
}

/// Depth sheet of the surface point `p` seen from the origin: bit 0 set when
/// the outward normal faces away from the camera, bit 1 set on the inner
/// half of a torus. Planes have a single sheet.
pub fn sheet_label(prim: &SurfacePrimitive, p: &Vector3<f64>) -> u8 {
    match &prim.shape {
        Shape::Plane { .. } => 0,
        shape => {
            let back = (shape.normal_unchecked(p).dot(p) > 0.0) as u8;
            let inner = match shape {
                Shape::Torus { center, axis, major_radius, .. } => {
                    let w = p - center;
                    ((w - axis * w.dot(axis)).norm() < *major_radius) as u8
                }
                _ => 0,
            };
            back | (inner << 1)
        }
    }
}

/// One UV dimension of the grid.
#[derive(Clone, Copy, Debug)]
struct Dim {
    lo: f64,
    hi: f64,
    periodic: bool,
    /// Whether reaching `lo` / `hi` means the mesh was cut short.
    open_lo: bool,
    open_hi: bool,
}

impl Dim {
    fn closed(lo: f64, hi: f64) -> Self {
        Dim { lo, hi, periodic: false, open_lo: false, open_hi: false }
    }

    fn periodic() -> Self {
        Dim { lo: -PI, hi: PI, periodic: true, open_lo: false, open_hi: false }
    }

    fn open(lo: f64, hi: f64) -> Self {
        Dim { lo, hi, periodic: false, open_lo: true, open_hi: true }
    }

    fn value(&self, i: usize, n: usize) -> f64 {
        if self.periodic {
            self.lo + (self.hi - self.lo) * i as f64 / n as f64
        } else {
            self.lo + (self.hi - self.lo) * i as f64 / (n - 1) as f64
        }
    }

    fn grow(&mut self, factor: f64, floor: Option<f64>) {
        let c = 0.5 * (self.lo + self.hi);
        let h = 0.5 * (self.hi - self.lo) * factor;
        self.lo = c - h;
        self.hi = c + h;
        if let Some(f) = floor {
            if self.lo <= f {
                self.lo = f;
                self.open_lo = false;
            }
        }
    }
}

/// Surface points seen through the region (ray hits at region pixels, or the
/// measured points where no ray meets the surface) and the largest measured
/// depth in the region.
fn region_samples(prim: &SurfacePrimitive, region: &Region2D, k: &CameraIntrinsics, depth: &DepthImage) -> (Vec<Vector3<f64>>, f64) {
    let pixels = region.pixels(k.width, k.height);
    let stride = (pixels.len() / 4000).max(1);
    let mut hits = Vec::new();
    let mut measured = Vec::new();
    let mut z_max: f64 = 0.0;
    for &(x, y) in &pixels {
        if depth.is_valid(x, y) {
            z_max = z_max.max(depth.get(x, y) as f64);
        }
    }
    for &(x, y) in pixels.iter().step_by(stride) {
        let ray = k.view_ray(Vector2::new(x as f64, y as f64));
        let dir = ray.normalize();
        for t in prim.ray_intersections(&Vector3::zeros(), &dir) {
            hits.push(dir * t);
        }
        if depth.is_valid(x, y) {
            measured.push(ray * depth.get(x, y) as f64);
        }
    }
    let samples = if hits.is_empty() { measured } else { hits };
    if z_max <= 0.0 {
        z_max = samples.iter().map(|p| p.z).fold(0.0, f64::max);
    }
    (samples, z_max)
}

fn padded(lo: f64, hi: f64, min_pad: f64) -> (f64, f64) {
    let pad = (0.1 * (hi - lo)).max(min_pad);
    (lo - pad, hi + pad)
}

fn initial_dims(prim: &SurfacePrimitive, samples: &[Vector3<f64>]) -> (Dim, Dim) {
    let uv: Vec<(f64, f64)> = samples.iter().map(|p| prim.point_to_uv(p)).collect();
    let range = |f: &dyn Fn(&(f64, f64)) -> f64| {
        let lo = uv.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = uv.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        if lo.is_finite() {
            (lo, hi)
        } else {
            (-0.5, 0.5)
        }
    };
    match &prim.shape {
        Shape::Plane { .. } => {
            let (u0, u1) = range(&|p| p.0);
            let (v0, v1) = range(&|p| p.1);
            let (u0, u1) = padded(u0, u1, 0.02);
            let (v0, v1) = padded(v0, v1, 0.02);
            (Dim::open(u0, u1), Dim::open(v0, v1))
        }
        Shape::Cylinder { radius, .. } => {
            let (v0, v1) = range(&|p| p.1);
            let (v0, v1) = padded(v0, v1, 0.1 * radius);
            (Dim::periodic(), Dim::open(v0, v1))
        }
        Shape::Cone { .. } => {
            let (v0, v1) = range(&|p| p.1);
            let (v0, v1) = padded(v0, v1, 0.02);
            let mut d = Dim::open(v0.max(0.0), v1);
            if v0 <= 0.0 {
                // the apex bounds the sheet
                d.open_lo = false;
            }
            (Dim::periodic(), d)
        }
        Shape::Sphere { .. } => (Dim::periodic(), Dim::closed(0.0, PI)),
        Shape::Torus { .. } => (Dim::periodic(), Dim::periodic()),
    }
}

struct Grid {
    nu: usize,
    nv: usize,
    u: Dim,
    v: Dim,
}

impl Grid {
    fn index(&self, i: usize, j: usize) -> u32 {
        (j * self.nu + (i % self.nu)) as u32
    }

    /// Quads as `(i0, j0)` lower corners; periodic dims wrap around.
    fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let cu = if self.u.periodic { self.nu } else { self.nu - 1 };
        let cv = if self.v.periodic { self.nv } else { self.nv - 1 };
        (0..cv).flat_map(move |j| (0..cu).map(move |i| (i, j)))
    }

    fn vindex(&self, i: usize, j: usize) -> u32 {
        let j = j % self.nv;
        self.index(i, j)
    }

    fn touches_open_border(&self, idx: u32) -> bool {
        let (i, j) = (idx as usize % self.nu, idx as usize / self.nu);
        (self.u.open_lo && i == 0)
            || (self.u.open_hi && i + 1 == self.nu)
            || (self.v.open_lo && j == 0)
            || (self.v.open_hi && j + 1 == self.nv)
    }
}

struct UnionFind(Vec<u32>);

impl UnionFind {
    fn find(&mut self, mut a: u32) -> u32 {
        while self.0[a as usize] != a {
            let p = self.0[self.0[a as usize] as usize];
            self.0[a as usize] = p;
            a = p;
        }
        a
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi as usize] = lo;
        }
    }
}

/// Grid vertices kept inside the region, the kept faces with their sheet
/// labels, and whether an open grid border was reached.
struct Clipped {
    points: Vec<Vector3<f64>>,
    faces: Vec<([u32; 3], u8, u64)>,
    cut_short: bool,
}

/// Grid vertices count as inside when they project into the region in front
/// of the camera and no deeper than `z_max`.
fn clip(prim: &SurfacePrimitive, region: &Region2D, k: &CameraIntrinsics, grid: &Grid, z_max: f64) -> Clipped {
    let mut points = Vec::with_capacity(grid.nu * grid.nv);
    let mut inside = Vec::with_capacity(grid.nu * grid.nv);
    for j in 0..grid.nv {
        let v = grid.v.value(j, grid.nv);
        for i in 0..grid.nu {
            let p = prim.uv_to_point(grid.u.value(i, grid.nu), v);
            inside.push(p.z > 1e-9 && p.z <= z_max && region.contains(&k.project(&p)));
            points.push(p);
        }
    }
    // rows collapsed to one point (sphere poles, cone apex) share one vertex;
    // otherwise their zero-length edges would count as mesh boundary
    let mut weld: Vec<u32> = (0..points.len() as u32).collect();
    for j in 0..grid.nv {
        let first = points[j * grid.nu];
        let tol = 1e-12 * (1.0 + first.norm());
        if (1..grid.nu).all(|i| (points[j * grid.nu + i] - first).norm() <= tol) {
            weld[j * grid.nu..(j + 1) * grid.nu].fill((j * grid.nu) as u32);
        }
    }
    let mut faces = Vec::new();
    let mut cut_short = false;
    for (i, j) in grid.cells() {
        let q = [grid.vindex(i, j), grid.vindex(i + 1, j), grid.vindex(i + 1, j + 1), grid.vindex(i, j + 1)].map(|t| weld[t as usize]);
        let cell = (j * grid.nu + i) as u64;
        for (half, tri) in [[q[0], q[1], q[2]], [q[0], q[2], q[3]]].into_iter().enumerate() {
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                continue;
            }
            if tri.iter().all(|&t| inside[t as usize]) {
                let c = (points[tri[0] as usize] + points[tri[1] as usize] + points[tri[2] as usize]) / 3.0;
                let area = tri_area(&points, &tri);
                if area <= 0.0 {
                    continue;
                }
                faces.push((tri, sheet_label(prim, &c), 2 * cell + half as u64));
                if tri.iter().any(|&t| grid.touches_open_border(t)) {
                    cut_short = true;
                }
            }
        }
    }
    Clipped { points, faces, cut_short }
}

/// Connected components of faces sharing an edge and a sheet label.
fn components(surface: u16, c: &Clipped) -> Vec<VisibilityMesh> {
    let n = c.faces.len();
    let mut uf = UnionFind((0..n as u32).collect());
    let mut by_edge: HashMap<(u32, u32), u32> = HashMap::new();
    for (fi, (tri, label, _)) in c.faces.iter().enumerate() {
        for e in 0..3 {
            let (a, b) = (tri[e], tri[(e + 1) % 3]);
            let key = (a.min(b), a.max(b));
            match by_edge.get(&key) {
                Some(&other) if c.faces[other as usize].1 == *label => uf.union(fi as u32, other),
                Some(_) => {}
                None => {
                    by_edge.insert(key, fi as u32);
                }
            }
        }
    }
    let mut groups: Vec<(u32, Vec<usize>)> = Vec::new();
    let mut slot: HashMap<u32, usize> = HashMap::new();
    for fi in 0..n {
        let r = uf.find(fi as u32);
        let s = *slot.entry(r).or_insert_with(|| {
            groups.push((r, Vec::new()));
            groups.len() - 1
        });
        groups[s].1.push(fi);
    }
    groups
        .into_iter()
        .enumerate()
        .map(|(layer, (_, fs))| {
            let mut remap: HashMap<u32, u32> = HashMap::new();
            let mut vertices = Vec::new();
            let mut faces = Vec::with_capacity(fs.len());
            let cells = fs.iter().map(|&fi| c.faces[fi].2).collect();
            for &fi in &fs {
                let tri = c.faces[fi].0;
                let mut out = [0u32; 3];
                for (o, &t) in out.iter_mut().zip(&tri) {
                    *o = *remap.entry(t).or_insert_with(|| {
                        vertices.push(c.points[t as usize]);
                        (vertices.len() - 1) as u32
                    });
                }
                faces.push(out);
            }
            let mut count: HashMap<(u32, u32), (u32, (u32, u32))> = HashMap::new();
            for f in &faces {
                for e in 0..3 {
                    let (a, b) = (f[e], f[(e + 1) % 3]);
                    count.entry((a.min(b), a.max(b))).or_insert((0, (a, b))).0 += 1;
                }
            }
            let mut boundary: Vec<(u32, u32)> = count.values().filter(|(n, _)| *n == 1).map(|(_, e)| *e).collect();
            boundary.sort_unstable();
            VisibilityMesh { surface, layer, sheet: c.faces[fs[0]].1, vertices, faces, boundary, cells }
        })
        .collect()
}

/// Same point set with a sign-canonical parametrization, so that surfaces
/// differing only in orientation get the same grid.
fn surface_gauge(prim: &SurfacePrimitive) -> SurfacePrimitive {
    let mut out = prim.gauge_fixed();
    if let Shape::Plane { normal, offset } = &mut out.shape {
        if canonical_sign(normal) != *normal {
            *normal = -*normal;
            *offset = -*offset;
        }
    }
    out
}

/// Grid-based meshes of the part of `prim` that projects inside `region`,
/// one per connected component of constant sheet label. Open UV extents
/// grow until no kept face touches the grid border.
pub fn extract_visibility_meshes(
    prim: &SurfacePrimitive,
    region: &Region2D,
    k: &CameraIntrinsics,
    depth: &DepthImage,
    cfg: &MeshConfig,
) -> Result<Vec<VisibilityMesh>, ExtractError> {
    if region.is_empty() || region.area() <= 0.0 {
        return Ok(Vec::new());
    }
    let prim = &surface_gauge(prim);
    let (samples, z_seen) = region_samples(prim, region, k, depth);
    // surface parts far behind every measurement in the region (a plane
    // running toward its horizon) have no support and are not meshed
    let z_max = if z_seen > 0.0 { cfg.depth_margin * z_seen } else { f64::INFINITY };
    let (mut u, mut v) = initial_dims(prim, &samples);
    let floor = matches!(prim.shape, Shape::Cone { .. }).then_some(0.0);
    let n = cfg.grid.max(4);
    for _ in 0..=cfg.max_doublings {
        let grid = Grid { nu: n, nv: n, u, v };
        let clipped = clip(prim, region, k, &grid, z_max);
        if !clipped.cut_short {
            return Ok(components(region.id, &clipped));
        }
        if u.open_lo || u.open_hi {
            u.grow(cfg.growth, None);
        }
        if v.open_lo || v.open_hi {
            v.grow(cfg.growth, floor);
        }
    }
    Err(ExtractError::ExtentOverflow(region.id))
}
