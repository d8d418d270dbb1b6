//! Edge labeling and wireframe clean-up.

use nalgebra::Vector3;

use super::{EdgeClass, VBRepEdge, VertexClass, VisibilityMesh, Wire};

/// Segment class from its endpoint classes, rules applied in order.
pub fn classify_edge(a: &VertexClass, b: &VertexClass) -> EdgeClass {
    if a.intersection && b.intersection {
        EdgeClass::Intersection
    } else {
        classify_non_intersection(a, b)
    }
}

fn classify_non_intersection(a: &VertexClass, b: &VertexClass) -> EdgeClass {
    if a.visibility && b.visibility {
        EdgeClass::Visibility
    } else if (!a.intersection || !b.intersection) && (a.occluded || b.occluded) {
        EdgeClass::Occluded
    } else {
        EdgeClass::Silhouette
    }
}

/// Labels every edge. A segment bordering fewer than two surfaces cannot be
/// an intersection edge and falls through to the remaining rules.
pub fn label_edges(wire: &mut Wire) {
    for i in 0..wire.edges.len() {
        let e = &wire.edges[i];
        let (a, b) = (&wire.vertices[e.a].class, &wire.vertices[e.b].class);
        let mut class = classify_edge(a, b);
        if class == EdgeClass::Intersection && e.surfaces.len() < 2 {
            class = classify_non_intersection(a, b);
        }
        wire.edges[i].class = class;
    }
}

/// Moves each vertex touching both a visibility and a silhouette edge to the
/// orthogonal projection of the silhouette edge's far endpoint onto the
/// visibility edge's line.
pub fn correct_corners(wire: &mut Wire) {
    let inc = wire.incident();
    let pos: Vec<Vector3<f64>> = wire.vertices.iter().map(|v| v.position).collect();
    for (v, edges) in inc.iter().enumerate() {
        let vis = edges.iter().find(|&&e| wire.edges[e].class == EdgeClass::Visibility);
        let sil = edges.iter().find(|&&e| wire.edges[e].class == EdgeClass::Silhouette);
        let (Some(&ve), Some(&se)) = (vis, sil) else { continue };
        let w = other(&wire.edges[ve], v);
        let u = other(&wire.edges[se], v);
        let d = pos[v] - pos[w];
        let dd = d.norm_squared();
        if dd <= 0.0 {
            continue;
        }
        wire.vertices[v].position = pos[w] + d * ((pos[u] - pos[w]).dot(&d) / dd);
    }
}

fn other(e: &VBRepEdge, v: usize) -> usize {
    if e.a == v {
        e.b
    } else {
        e.a
    }
}

/// Repeatedly removes degree-2 vertices whose two incident edges meet at an
/// angle below `min_angle_deg`, joining their neighbors. Replacement
/// segments are relabeled from their endpoint classes.
pub fn simplify_wireframe(wire: &mut Wire, min_angle_deg: f64) {
    let cos_min = min_angle_deg.to_radians().cos();
    let n = wire.vertices.len();
    let mut inc = wire.incident();
    let mut dead_edge = vec![false; wire.edges.len()];
    let mut dead_vertex = vec![false; n];
    loop {
        let mut changed = false;
        for v in 0..n {
            if dead_vertex[v] {
                continue;
            }
            let live: Vec<usize> = inc[v].iter().copied().filter(|&e| !dead_edge[e]).collect();
            if live.len() != 2 {
                continue;
            }
            let (a, b) = (other(&wire.edges[live[0]], v), other(&wire.edges[live[1]], v));
            let p = wire.vertices[v].position;
            let (da, db) = (wire.vertices[a].position - p, wire.vertices[b].position - p);
            let (na, nb) = (da.norm(), db.norm());
            if na <= 0.0 || nb <= 0.0 || da.dot(&db) / (na * nb) <= cos_min {
                continue;
            }
            dead_vertex[v] = true;
            for &e in &live {
                dead_edge[e] = true;
            }
            if a != b {
                let mut surfaces: Vec<u16> = wire.edges[live[0]].surfaces.iter().chain(&wire.edges[live[1]].surfaces).copied().collect();
                surfaces.sort_unstable();
                surfaces.dedup();
                let class = classify_edge(&wire.vertices[a].class, &wire.vertices[b].class);
                wire.edges.push(VBRepEdge { a, b, class, surfaces });
                dead_edge.push(false);
                let id = wire.edges.len() - 1;
                inc[a].push(id);
                inc[b].push(id);
            }
            changed = true;
        }
        if !changed {
            break;
        }
    }
    // isolated leftovers of removed spikes are dropped with their vertex
    wire.edges = wire.edges.iter().zip(&dead_edge).filter(|(_, d)| !**d).map(|(e, _)| e.clone()).collect();
    let keep: Vec<bool> = dead_vertex.iter().map(|d| !d).collect();
    wire.retain(&keep);
}

fn closest_on_segment(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> Vector3<f64> {
    let d = b - a;
    let dd = d.norm_squared();
    if dd <= 0.0 {
        return *a;
    }
    a + d * ((p - a).dot(&d) / dd).clamp(0.0, 1.0)
}

/// Snaps boundary vertices of `mesh` to the nearest point of the wire edges
/// bordering the same surface.
pub fn close_gaps(mesh: &VisibilityMesh, wire: &Wire) -> VisibilityMesh {
    let segments: Vec<(Vector3<f64>, Vector3<f64>)> = wire
        .edges
        .iter()
        .filter(|e| e.surfaces.contains(&mesh.surface))
        .map(|e| (wire.vertices[e.a].position, wire.vertices[e.b].position))
        .collect();
    let mut out = mesh.clone();
    if segments.is_empty() {
        log::warn!("surface {} has no wireframe to close mesh gaps against", mesh.surface);
        return out;
    }
    for b in mesh.boundary_vertices() {
        let p = mesh.vertices[b as usize];
        let mut best = (f64::INFINITY, p);
        for (a, c) in &segments {
            let q = closest_on_segment(&p, a, c);
            let d = (q - p).norm_squared();
            if d < best.0 {
                best = (d, q);
            }
        }
        out.vertices[b as usize] = best.1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::VBRepVertex;
    use super::*;
    use nalgebra::Vector2;

    fn vertex(p: [f64; 3]) -> VBRepVertex {
        VBRepVertex {
            position: Vector3::from(p),
            pixel: Vector2::zeros(),
            source: 0,
            surfaces: vec![1],
            class: VertexClass { silhouette: true, ..Default::default() },
        }
    }

    fn polyline(points: &[[f64; 3]]) -> Wire {
        let vertices = points.iter().map(|p| vertex(*p)).collect();
        let edges = (1..points.len())
            .map(|i| VBRepEdge { a: i - 1, b: i, class: EdgeClass::Silhouette, surfaces: vec![1] })
            .collect();
        Wire { vertices, edges }
    }

    #[test]
    fn spike_removed_corner_kept() {
        // spike at vertex 1 (about 11 degrees), right angle at vertex 2
        let mut w = polyline(&[[0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [0.0, 0.2, 1.0], [0.0, 1.2, 1.0]]);
        simplify_wireframe(&mut w, 36.0);
        assert_eq!(w.vertices.len(), 3);
        let mut w = polyline(&[[0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 1.0]]);
        simplify_wireframe(&mut w, 36.0);
        assert_eq!(w.vertices.len(), 3);
    }

    #[test]
    fn thirty_degree_spike() {
        let a = 30f64.to_radians();
        let mut w = polyline(&[[1.0, 0.0, 1.0], [0.0, 0.0, 1.0], [a.cos(), a.sin(), 1.0]]);
        simplify_wireframe(&mut w, 36.0);
        assert_eq!(w.vertices.len(), 2);
        assert_eq!(w.edges.len(), 1);
    }

    #[test]
    fn corner_projection() {
        let mut w = polyline(&[[0.0, 0.0, 1.0], [1.0, 0.3, 1.0], [1.0, 1.0, 1.0]]);
        w.edges[0].class = EdgeClass::Visibility;
        w.edges[1].class = EdgeClass::Silhouette;
        let before = w.vertices[1].position;
        correct_corners(&mut w);
        let moved = w.vertices[1].position;
        // projection of (1, 1) onto the line through (0, 0) and (1, 0.3)
        let d = before.normalize_xy();
        let want = d * Vector3::new(1.0, 1.0, 0.0).dot(&d);
        assert!((moved.xy() - want.xy()).norm() < 1e-12);
    }

    trait Xy {
        fn normalize_xy(&self) -> Vector3<f64>;
    }

    impl Xy for Vector3<f64> {
        fn normalize_xy(&self) -> Vector3<f64> {
            Vector3::new(self.x, self.y, 0.0).normalize()
        }
    }

    #[test]
    fn projection_at_vertex_is_identity() {
        let mut w = polyline(&[[0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 1.0]]);
        w.edges[0].class = EdgeClass::Visibility;
        let before = w.clone();
        correct_corners(&mut w);
        assert_eq!(w, before);
    }
}
