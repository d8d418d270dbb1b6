//! Lifting the refined wireframe into a VB-Rep.

mod mesh;
mod post;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use mesh::{extract_visibility_meshes, sheet_count, sheet_label, MeshConfig, VisibilityMesh};
pub use post::{classify_edge, close_gaps, correct_corners, label_edges, simplify_wireframe};

use crate::camera::{CameraIntrinsics, DepthImage};
use crate::edge_graph::{EdgeGraph2D, InstanceMap, Region2D};
use crate::error::ExtractError;
use crate::lm::{lm_solve_analytic, LmConfig};
use crate::primitive::{Shape, SurfacePrimitive};
use crate::real::{norm, Dual};
use crate::refine::{seed_depth, solve_ray_depth, PrimitiveMap, Wireframe3D};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VertexClass {
    pub intersection: bool,
    pub visibility: bool,
    pub occluded: bool,
    pub silhouette: bool,
    /// Three or more intersecting surfaces.
    pub corner: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeClass {
    Intersection,
    Visibility,
    Occluded,
    Silhouette,
}

impl EdgeClass {
    pub const ALL: [EdgeClass; 4] = [EdgeClass::Intersection, EdgeClass::Visibility, EdgeClass::Occluded, EdgeClass::Silhouette];

    pub fn name(self) -> &'static str {
        match self {
            EdgeClass::Intersection => "intersection",
            EdgeClass::Visibility => "visibility",
            EdgeClass::Occluded => "occluded",
            EdgeClass::Silhouette => "silhouette",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VBRepVertex {
    pub position: Vector3<f64>,
    /// Image position of the 2D vertex this one was lifted from.
    pub pixel: Vector2<f64>,
    pub source: usize,
    pub surfaces: Vec<u16>,
    pub class: VertexClass,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VBRepEdge {
    pub a: usize,
    pub b: usize,
    pub class: EdgeClass,
    pub surfaces: Vec<u16>,
}

/// Polyline wireframe: vertices and the segments joining them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Wire {
    pub vertices: Vec<VBRepVertex>,
    pub edges: Vec<VBRepEdge>,
}

impl Wire {
    pub fn incident(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.vertices.len()];
        for (i, e) in self.edges.iter().enumerate() {
            inc[e.a].push(i);
            inc[e.b].push(i);
        }
        inc
    }

    /// Drops vertices not flagged in `keep` and every edge touching them.
    pub fn retain(&mut self, keep: &[bool]) {
        let mut map = vec![usize::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        for (i, v) in self.vertices.iter().enumerate() {
            if keep[i] {
                map[i] = vertices.len();
                vertices.push(v.clone());
            }
        }
        self.edges = self
            .edges
            .iter()
            .filter(|e| keep[e.a] && keep[e.b])
            .map(|e| VBRepEdge { a: map[e.a], b: map[e.b], ..e.clone() })
            .collect();
        self.vertices = vertices;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Face {
    pub id: u16,
    pub primitive: SurfacePrimitive,
    /// Selected sheet label.
    pub config: u8,
    pub meshes: Vec<VisibilityMesh>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VBRep {
    pub faces: Vec<Face>,
    pub vertices: Vec<VBRepVertex>,
    pub edges: Vec<VBRepEdge>,
}

impl VBRep {
    pub fn meshes(&self) -> impl Iterator<Item = &VisibilityMesh> {
        self.faces.iter().flat_map(|f| f.meshes.iter())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractConfig {
    pub d_int: f64,
    /// Reprojection tolerance in pixels for moved vertices.
    pub reprojection_px: f64,
    pub min_angle_deg: f64,
    /// Minimum fraction of region pixels a sheet candidate must cover.
    pub min_coverage: f64,
    /// Vertices farther than this multiple of `d_int` from their surface are
    /// dropped when lifted.
    pub projection_factor: f64,
    pub visibility_tol: f64,
    pub mesh: MeshConfig,
    pub lm: LmConfig,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            d_int: 0.05,
            reprojection_px: 5.0,
            min_angle_deg: 36.0,
            min_coverage: 0.5,
            projection_factor: 2.0,
            visibility_tol: 1e-8,
            mesh: MeshConfig::default(),
            lm: LmConfig::default(),
        }
    }
}

type D3 = Dual<3>;

fn dual_point(x: &[f64]) -> Vector3<D3> {
    Vector3::new(D3::var(x[0], 0), D3::var(x[1], 1), D3::var(x[2], 2))
}

/// Residuals and Jacobian for a point constrained to `surfaces`, plus an
/// optional tangency residual `n(p) . p / |p|` on `tangent`.
fn point_problem<'a>(
    surfaces: &'a [Shape<D3>],
    tangent: Option<&'a Shape<D3>>,
) -> (impl Fn(&[f64]) -> Vec<f64> + 'a, impl Fn(&[f64]) -> DMatrix<f64> + 'a) {
    let eval = move |x: &[f64]| -> Vec<D3> {
        let p = dual_point(x);
        let mut r: Vec<D3> = surfaces.iter().map(|s| s.signed_distance(&p)).collect();
        if let Some(t) = tangent {
            let n = t.normal_unchecked(&p);
            r.push(n.dot(&p) / norm(&p));
        }
        r
    };
    let res = move |x: &[f64]| eval(x).iter().map(|d| d.re).collect();
    let jac = move |x: &[f64]| {
        let r = eval(x);
        DMatrix::from_fn(r.len(), 3, |i, j| r[i].eps[j])
    };
    (res, jac)
}

/// Minimum-norm Gauss-Newton: each step is the smallest move that zeroes
/// the linearized residuals, so the iterate lands on the constraint locus
/// near `start` instead of drifting along it. Halves steps that increase
/// the residual.
fn project_onto_locus(
    res: &impl Fn(&[f64]) -> Vec<f64>,
    jac: &impl Fn(&[f64]) -> DMatrix<f64>,
    start: Vector3<f64>,
    max_iterations: usize,
) -> Vector3<f64> {
    let sq = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();
    let mut x = start;
    let mut cost = sq(&res(x.as_slice()));
    for _ in 0..max_iterations {
        if !(cost > 0.0) {
            break;
        }
        let r = nalgebra::DVector::from_vec(res(x.as_slice()));
        let Ok(step) = jac(x.as_slice()).svd(true, true).solve(&(-r), 1e-12) else { break };
        let mut step = Vector3::new(step[0], step[1], step[2]);
        let mut accepted = false;
        for _ in 0..20 {
            let next = x + step;
            let c = sq(&res(next.as_slice()));
            if c.is_finite() && c < cost {
                (x, cost, accepted) = (next, c, true);
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    x
}

fn minimize_point(start: Vector3<f64>, surfaces: &[Shape<D3>], tangent: Option<&Shape<D3>>, lm: &LmConfig) -> Option<(Vector3<f64>, Vec<f64>)> {
    let (res, jac) = point_problem(surfaces, tangent);
    let rows = surfaces.len() + usize::from(tangent.is_some());
    if rows <= 3 {
        let p = project_onto_locus(&res, &jac, start, lm.max_iterations);
        let r = res(p.as_slice());
        return (p.iter().all(|v| v.is_finite()) && r.iter().all(|v| v.is_finite())).then_some((p, r));
    }
    let x = match lm_solve_analytic(&res, &jac, start.as_slice(), lm) {
        Ok(r) => r.params,
        Err(crate::error::LmError::Diverged { params, .. }) => params,
        Err(_) => return None,
    };
    let p = Vector3::new(x[0], x[1], x[2]);
    let r = res(&x);
    r.iter().all(|v| v.is_finite()).then_some((p, r))
}

/// Free 3D optimization of every multi-surface vertex against its
/// neighbors. Returns the optimized position for vertices ending within
/// `d_int` of all neighbors and within the reprojection tolerance.
pub fn optimize_intersections(
    wf: &Wireframe3D,
    pixels: &[Vector2<f64>],
    prims: &PrimitiveMap,
    k: &CameraIntrinsics,
    cfg: &ExtractConfig,
) -> Vec<Option<Vector3<f64>>> {
    (0..wf.len())
        .into_par_iter()
        .map(|i| {
            let n = &wf.neighbors[i];
            if n.len() < 2 || n.iter().any(|id| !prims.contains_key(id)) {
                return None;
            }
            let shapes: Vec<Shape<D3>> = n.iter().map(|id| prims[id].shape.lift()).collect();
            let (p, r) = minimize_point(wf.position(i), &shapes, None, &cfg.lm)?;
            let ok = p.z > 0.0
                && r.iter().all(|d| d.abs() < cfg.d_int)
                && (k.project(&p) - pixels[i]).norm() <= cfg.reprojection_px;
            ok.then_some(p)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ambiguity {
    pub config: u8,
    /// `(sheet, mean absolute depth error, coverage)` per candidate.
    pub candidates: Vec<(u8, f64, f64)>,
    pub meshes: Vec<VisibilityMesh>,
}

/// Depth along pixel `(x, y)` of the nearest hit of `prim` on `sheet`.
fn sheet_depth(prim: &SurfacePrimitive, k: &CameraIntrinsics, x: usize, y: usize, sheet: u8) -> Option<f64> {
    let ray = k.view_ray(Vector2::new(x as f64, y as f64));
    let dir = ray.normalize();
    prim.ray_intersections(&Vector3::zeros(), &dir)
        .into_iter()
        .map(|t| dir * t)
        .find(|p| sheet_label(prim, p) == sheet)
        .map(|p| p.z)
}

/// Chooses the depth sheet of `prim` that best matches the measured depth
/// inside `region`, and returns that sheet's visibility meshes.
pub fn resolve_ambiguity(
    prim: &SurfacePrimitive,
    region: &Region2D,
    depth: &DepthImage,
    k: &CameraIntrinsics,
    cfg: &ExtractConfig,
) -> Result<Ambiguity, ExtractError> {
    let all = extract_visibility_meshes(prim, region, k, depth, &cfg.mesh)?;
    let pixels: Vec<(usize, usize)> = region.pixels(k.width, k.height).into_iter().filter(|&(x, y)| depth.is_valid(x, y)).collect();
    let count = sheet_count(prim.kind());
    if count == 1 {
        return Ok(Ambiguity { config: 0, candidates: vec![(0, 0.0, 1.0)], meshes: all });
    }
    let candidates: Vec<(u8, f64, f64)> = (0..count)
        .map(|sheet| {
            let (mut err, mut covered) = (0.0, 0usize);
            for &(x, y) in &pixels {
                if let Some(z) = sheet_depth(prim, k, x, y, sheet) {
                    err += (z - depth.get(x, y) as f64).abs();
                    covered += 1;
                }
            }
            let mean = if covered > 0 { err / covered as f64 } else { f64::INFINITY };
            (sheet, mean, covered as f64 / pixels.len().max(1) as f64)
        })
        .collect();
    let best = candidates
        .iter()
        .filter(|c| c.2 >= cfg.min_coverage)
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)))
        .ok_or(ExtractError::AllConfigsInvalid(region.id))?;
    let config = best.0;
    let meshes = all.into_iter().filter(|m| m.sheet == config).enumerate().map(|(i, m)| VisibilityMesh { layer: i, ..m }).collect();
    Ok(Ambiguity { config, candidates, meshes })
}

/// Split result: for each 2D vertex, the wire vertices created for it.
#[derive(Clone, Debug, Default)]
pub struct Split {
    pub wire: Wire,
    pub copies: Vec<Vec<usize>>,
}

/// Builds the wire over the 2D graph. Vertices in `intersections` stay
/// single; every other vertex bordering two or more surfaces is duplicated,
/// one copy per surface, and edges are rewired so that each copy only
/// borders its own surface.
pub fn split_occlusions(g: &EdgeGraph2D, intersections: &[Option<Vector3<f64>>]) -> Split {
    let mut wire = Wire::default();
    let mut copies = vec![Vec::new(); g.vertices.len()];
    for (i, n) in g.neighbors.iter().enumerate() {
        let base = VBRepVertex { position: Vector3::zeros(), pixel: g.vertices[i], source: i, surfaces: n.clone(), class: VertexClass::default() };
        if let Some(p) = intersections[i] {
            copies[i].push(wire.vertices.len());
            wire.vertices.push(VBRepVertex { position: p, class: VertexClass { intersection: true, ..Default::default() }, ..base });
        } else {
            for &s in n {
                copies[i].push(wire.vertices.len());
                wire.vertices.push(VBRepVertex { surfaces: vec![s], ..base.clone() });
            }
        }
    }
    let copy_for = |v: usize, s: u16, wire: &Wire| -> Option<usize> {
        copies[v].iter().copied().find(|&c| wire.vertices[c].surfaces.contains(&s))
    };
    let mut seen = std::collections::HashSet::new();
    for e in &g.edges {
        let surfaces = e.surfaces();
        for &s in &surfaces {
            let (Some(a), Some(b)) = (copy_for(e.a, s, &wire), copy_for(e.b, s, &wire)) else { continue };
            if a == b {
                continue;
            }
            let shared = wire.vertices[a].class.intersection && wire.vertices[b].class.intersection && surfaces.len() == 2;
            let key = (a.min(b), a.max(b), if shared { 0 } else { s });
            if seen.insert(key) {
                let es = if shared { surfaces.clone() } else { vec![s] };
                wire.edges.push(VBRepEdge { a, b, class: EdgeClass::Silhouette, surfaces: es });
            }
        }
    }
    Split { wire, copies }
}

/// Projects every non-intersection vertex onto its surface along its view
/// ray, seeding multi-depth surfaces from the chosen meshes. Twins from the
/// same 2D vertex are ordered by depth: the nearest is a silhouette vertex,
/// the others occluded. Returns the indices of vertices that could not be
/// projected (they are removed).
pub fn lift_vertices(
    split: &mut Split,
    prims: &PrimitiveMap,
    meshes: &BTreeMap<u16, Vec<VisibilityMesh>>,
    depth: &DepthImage,
    k: &CameraIntrinsics,
    cfg: &ExtractConfig,
) -> Vec<usize> {
    let seeds: BTreeMap<u16, Vec<(Vector2<f64>, f64)>> = meshes
        .iter()
        .map(|(id, ms)| {
            let pts = ms
                .iter()
                .flat_map(|m| m.boundary_vertices().into_iter().map(move |b| m.vertices[b as usize]))
                .filter(|p| p.z > 0.0)
                .map(|p| (k.project(&p), p.z))
                .collect();
            (*id, pts)
        })
        .collect();
    let wire = &mut split.wire;
    let lifted: Vec<Option<Vector3<f64>>> = wire
        .vertices
        .par_iter()
        .map(|v| {
            if v.class.intersection {
                return Some(v.position);
            }
            let s = v.surfaces[0];
            let prim = prims.get(&s)?;
            let ray = k.view_ray(v.pixel);
            let seed = seeds
                .get(&s)
                .and_then(|pts| pts.iter().min_by(|a, b| (a.0 - v.pixel).norm().partial_cmp(&(b.0 - v.pixel).norm()).unwrap()))
                .map(|&(_, z)| z)
                .unwrap_or_else(|| seed_depth(depth, v.pixel.x, v.pixel.y).0);
            let depth_s = solve_ray_depth(&ray, seed, &[prim]);
            let p = ray * depth_s;
            (prim.distance(&p) <= cfg.projection_factor * cfg.d_int).then_some(p)
        })
        .collect();
    let mut dropped = Vec::new();
    for (i, p) in lifted.iter().enumerate() {
        match p {
            Some(p) => wire.vertices[i].position = *p,
            None => {
                log::warn!("vertex {} could not be projected onto surface {:?}", i, wire.vertices[i].surfaces);
                dropped.push(i);
            }
        }
    }
    for cs in &split.copies {
        let mut alive: Vec<usize> = cs.iter().copied().filter(|c| lifted[*c].is_some()).collect();
        if alive.len() == 1 && wire.vertices[alive[0]].class.intersection {
            continue;
        }
        alive.sort_by(|&a, &b| wire.vertices[a].position.z.partial_cmp(&wire.vertices[b].position.z).unwrap().then(a.cmp(&b)));
        for (rank, &c) in alive.iter().enumerate() {
            let class = &mut wire.vertices[c].class;
            if rank == 0 {
                class.silhouette = true;
            } else {
                class.occluded = true;
            }
        }
    }
    dropped
}

/// Pushes every non-occluded vertex onto the locus where one of its
/// surfaces turns away from the view (`n . p = 0`), keeping intersection
/// constraints. Vertices that converge within the reprojection tolerance
/// gain the visibility flag and move; others are left untouched.
pub fn optimize_visibility(wire: &mut Wire, prims: &PrimitiveMap, k: &CameraIntrinsics, cfg: &ExtractConfig) {
    let moved: Vec<Option<Vector3<f64>>> = wire
        .vertices
        .par_iter()
        .map(|v| {
            if v.class.occluded || v.surfaces.iter().any(|s| !prims.contains_key(s)) {
                return None;
            }
            let shapes: Vec<Shape<D3>> = v.surfaces.iter().map(|s| prims[s].shape.lift()).collect();
            for t in &shapes {
                let Some((p, r)) = minimize_point(v.position, &shapes, Some(t), &cfg.lm) else { continue };
                if p.z > 0.0
                    && r.iter().all(|d| d.abs() < cfg.visibility_tol)
                    && (k.project(&p) - v.pixel).norm() <= cfg.reprojection_px
                {
                    return Some(p);
                }
            }
            None
        })
        .collect();
    for (v, m) in wire.vertices.iter_mut().zip(moved) {
        if let Some(p) = m {
            v.position = p;
            v.class.visibility = true;
        }
    }
}

/// Everything extraction needs from earlier stages.
pub struct ExtractInput<'a> {
    pub graph: &'a EdgeGraph2D,
    pub wireframe: &'a Wireframe3D,
    pub primitives: &'a PrimitiveMap,
    pub instances: &'a InstanceMap,
    pub depth: &'a DepthImage,
    pub camera: &'a CameraIntrinsics,
}

/// Full extraction: intersection candidates, sheet selection, splitting,
/// lifting, visibility optimization, labeling, post-processing and meshes.
pub fn assemble_vbrep(input: &ExtractInput<'_>, cfg: &ExtractConfig) -> Result<VBRep, ExtractError> {
    let (g, prims, k) = (input.graph, input.primitives, input.camera);
    let candidates = optimize_intersections(input.wireframe, &g.vertices, prims, k, cfg);
    let ids: Vec<u16> = prims.keys().copied().filter(|id| input.instances.pixel_count(*id) > 0).collect();
    let resolved: Vec<(u16, Ambiguity)> = ids
        .par_iter()
        .map(|&id| {
            let region = Region2D::new(g, input.instances, id);
            resolve_ambiguity(&prims[&id], &region, input.depth, k, cfg).map(|a| (id, a))
        })
        .collect::<Result<_, _>>()?;
    let configs: BTreeMap<u16, u8> = resolved.iter().map(|(id, a)| (*id, a.config)).collect();
    // intersection candidates survive only where every neighbor is on its chosen sheet
    let visible: Vec<Option<Vector3<f64>>> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            c.filter(|p| g.neighbors[i].iter().all(|id| configs.get(id).is_some_and(|&cf| sheet_label(&prims[id], p) == cf)))
        })
        .collect();
    let meshes: BTreeMap<u16, Vec<VisibilityMesh>> = resolved.iter().map(|(id, a)| (*id, a.meshes.clone())).collect();
    let mut split = split_occlusions(g, &visible);
    let dropped = lift_vertices(&mut split, prims, &meshes, input.depth, k, cfg);
    let mut keep = vec![true; split.wire.vertices.len()];
    for d in dropped {
        keep[d] = false;
    }
    let mut wire = split.wire;
    wire.retain(&keep);
    optimize_visibility(&mut wire, prims, k, cfg);
    label_edges(&mut wire);
    correct_corners(&mut wire);
    simplify_wireframe(&mut wire, cfg.min_angle_deg);
    label_edges(&mut wire);
    for v in &mut wire.vertices {
        v.class.corner = v.class.intersection && v.surfaces.len() >= 3;
    }
    let faces = resolved
        .into_iter()
        .map(|(id, a)| Face {
            id,
            primitive: prims[&id].clone(),
            config: a.config,
            meshes: a.meshes.iter().map(|m| close_gaps(m, &wire)).collect(),
        })
        .collect();
    Ok(VBRep { faces, vertices: wire.vertices, edges: wire.edges })
}
