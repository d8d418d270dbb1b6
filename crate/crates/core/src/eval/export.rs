//! Input bundles and output files.
//!
//! A bundle directory holds `depth.vbrd`, `instances.vbri`, `labels.json`
//! and `camera.json`; synthetic bundles add `truth.json` and the noiseless
//! `clean_depth.vbrd`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::metrics::MetricsReport;
use super::pipeline::{PipelineInput, Truth};
use crate::error::FormatError;
use crate::extract::{EdgeClass, VBRep, VertexClass, VisibilityMesh};
use crate::frame::AlignmentFrame;
use crate::io::{read_camera, read_depth, read_instance_map, read_json, write_depth, write_instance_map, write_json};
use crate::primitive::SurfacePrimitive;
use crate::refine::Wireframe3D;
use crate::synth::{GroundTruth, TruthFile};

pub const DEPTH: &str = "depth.vbrd";
pub const CLEAN_DEPTH: &str = "clean_depth.vbrd";
pub const INSTANCES: &str = "instances.vbri";
pub const LABELS: &str = "labels.json";
pub const CAMERA: &str = "camera.json";
pub const TRUTH: &str = "truth.json";

fn io_err(path: &Path, source: std::io::Error) -> FormatError {
    FormatError::Io { path: path.display().to_string(), source }
}

fn create_dir(dir: &Path) -> Result<(), FormatError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

pub fn write_bundle(dir: &Path, gt: &GroundTruth) -> Result<(), FormatError> {
    create_dir(dir)?;
    write_depth(&dir.join(DEPTH), &gt.depth)?;
    write_depth(&dir.join(CLEAN_DEPTH), &gt.depth)?;
    write_instance_map(&dir.join(INSTANCES), &dir.join(LABELS), &gt.instances)?;
    write_json(&dir.join(CAMERA), &gt.camera)?;
    write_json(&dir.join(TRUTH), &gt.truth_file())
}

/// Reads a bundle; truth is attached when `truth.json` is present.
pub fn read_bundle(dir: &Path) -> Result<PipelineInput, FormatError> {
    let camera = read_camera(&dir.join(CAMERA))?;
    let instances = read_instance_map(&dir.join(INSTANCES), &dir.join(LABELS))?;
    let depth = read_depth(&dir.join(DEPTH))?;
    let truth = if dir.join(TRUTH).exists() {
        let file: TruthFile = read_json(&dir.join(TRUTH))?;
        let clean = dir.join(CLEAN_DEPTH);
        let depth = if clean.exists() { read_depth(&clean)? } else { depth.clone() };
        Some(Truth { file, depth })
    } else {
        None
    };
    let input = PipelineInput { depth, instances, camera, truth };
    input.validate()?;
    Ok(input)
}

/// Writes a bundle whose depth is replaced by `depth`; other files are
/// copied from `src`.
pub fn write_noised_bundle(src: &Path, dst: &Path, input: &PipelineInput) -> Result<(), FormatError> {
    create_dir(dst)?;
    for name in [INSTANCES, LABELS, CAMERA, TRUTH, CLEAN_DEPTH] {
        let from = src.join(name);
        if from.exists() {
            fs::copy(&from, dst.join(name)).map_err(|e| io_err(&from, e))?;
        }
    }
    write_depth(&dst.join(DEPTH), &input.depth)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VertexDoc {
    pub position: Vector3<f64>,
    pub class: VertexClass,
    pub surfaces: Vec<u16>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeDoc {
    pub a: usize,
    pub b: usize,
    pub class: EdgeClass,
    pub surfaces: Vec<u16>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceDoc {
    pub id: u16,
    pub primitive: SurfacePrimitive,
    pub config: u8,
    /// Mesh files relative to the document.
    pub meshes: Vec<String>,
}

/// Contents of `vbrep.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VBRepDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<AlignmentFrame>,
    pub vertices: Vec<VertexDoc>,
    pub edges: Vec<EdgeDoc>,
    pub faces: Vec<FaceDoc>,
}

pub fn mesh_file_name(m: &VisibilityMesh) -> String {
    format!("meshes/face_{}_{}.obj", m.surface, m.layer)
}

impl VBRepDoc {
    pub fn new(v: &VBRep, frame: Option<AlignmentFrame>) -> Self {
        VBRepDoc {
            frame,
            vertices: v.vertices.iter().map(|x| VertexDoc { position: x.position, class: x.class, surfaces: x.surfaces.clone() }).collect(),
            edges: v.edges.iter().map(|e| EdgeDoc { a: e.a, b: e.b, class: e.class, surfaces: e.surfaces.clone() }).collect(),
            faces: v
                .faces
                .iter()
                .map(|f| FaceDoc { id: f.id, primitive: f.primitive.clone(), config: f.config, meshes: f.meshes.iter().map(mesh_file_name).collect() })
                .collect(),
        }
    }
}

pub fn mesh_obj(m: &VisibilityMesh) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "o face_{}_{}", m.surface, m.layer);
    for v in &m.vertices {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for f in &m.faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

/// Parses the vertex and face lines of an OBJ file written by [`mesh_obj`].
pub fn parse_obj(text: &str, name: &str) -> Result<(Vec<Vector3<f64>>, Vec<[u32; 3]>), FormatError> {
    let bad = || FormatError::Invalid(format!("malformed obj {name}"));
    let (mut verts, mut faces) = (Vec::new(), Vec::new());
    for line in text.lines() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it.map(|t| t.parse().map_err(|_| bad())).collect::<Result<_, _>>()?;
                if c.len() != 3 {
                    return Err(bad());
                }
                verts.push(Vector3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let c: Vec<u32> = it
                    .map(|t| t.split('/').next().unwrap_or("").parse::<u32>().map_err(|_| bad()))
                    .collect::<Result<_, _>>()?;
                if c.len() != 3 || c.iter().any(|&i| i == 0 || i as usize > verts.len()) {
                    return Err(bad());
                }
                faces.push([c[0] - 1, c[1] - 1, c[2] - 1]);
            }
            _ => {}
        }
    }
    Ok((verts, faces))
}

/// Edge polylines as an OBJ line set, one group per edge class.
pub fn edges_obj(doc: &VBRepDoc) -> String {
    let mut s = String::new();
    for v in &doc.vertices {
        let _ = writeln!(s, "v {} {} {}", v.position.x, v.position.y, v.position.z);
    }
    for class in EdgeClass::ALL {
        let _ = writeln!(s, "g {}", class.name());
        for e in doc.edges.iter().filter(|e| e.class == class) {
            let _ = writeln!(s, "l {} {}", e.a + 1, e.b + 1);
        }
    }
    s
}

fn write_text(path: &Path, text: &str) -> Result<(), FormatError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Writes `vbrep.json`, one OBJ per mesh and `edges.obj` into `dir`.
pub fn write_vbrep(dir: &Path, v: &VBRep, frame: Option<AlignmentFrame>) -> Result<VBRepDoc, FormatError> {
    create_dir(&dir.join("meshes"))?;
    for m in v.meshes() {
        write_text(&dir.join(mesh_file_name(m)), &mesh_obj(m))?;
    }
    let doc = VBRepDoc::new(v, frame);
    write_json(&dir.join("vbrep.json"), &doc)?;
    write_text(&dir.join("edges.obj"), &edges_obj(&doc))?;
    Ok(doc)
}

pub fn write_report(dir: &Path, report: &MetricsReport) -> Result<(), FormatError> {
    create_dir(dir)?;
    write_json(&dir.join("report.json"), report)
}

#[derive(Serialize)]
struct WireVertexDump {
    s: f64,
    intersection: bool,
    neighbors: Vec<u16>,
    position: Vector3<f64>,
    low_confidence: bool,
}

#[derive(Serialize)]
struct WireDump {
    vertices: Vec<WireVertexDump>,
    edges: Vec<(usize, usize)>,
}

/// Debug dump of a lifted wireframe.
pub fn write_wireframe_dump(path: &Path, wf: &Wireframe3D) -> Result<(), FormatError> {
    let dump = WireDump {
        vertices: (0..wf.len())
            .map(|i| WireVertexDump {
                s: wf.s[i],
                intersection: wf.intersection[i],
                neighbors: wf.neighbors[i].clone(),
                position: wf.position(i),
                low_confidence: wf.low_confidence[i],
            })
            .collect(),
        edges: wf.edges.clone(),
    };
    write_json(path, &dump)
}

/// Reads `vbrep.json` and writes a single OBJ holding every mesh (one group
/// per mesh) followed by the edge line set.
pub fn export_scene(doc_path: &Path, out: &Path) -> Result<PathBuf, FormatError> {
    let doc: VBRepDoc = read_json(doc_path)?;
    let base = doc_path.parent().unwrap_or(Path::new("."));
    let mut s = String::new();
    let mut offset = 0usize;
    for f in &doc.faces {
        for rel in &f.meshes {
            let path = base.join(rel);
            let text = fs::read_to_string(&path).map_err(|e| {
                if e.kind() == std::io::ErrorKind::NotFound {
                    FormatError::InputMissing(path.display().to_string())
                } else {
                    io_err(&path, e)
                }
            })?;
            let (verts, faces) = parse_obj(&text, rel)?;
            let _ = writeln!(s, "g {}", rel.trim_start_matches("meshes/").trim_end_matches(".obj"));
            for v in &verts {
                let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
            }
            for t in &faces {
                let _ = writeln!(s, "f {} {} {}", t[0] as usize + offset + 1, t[1] as usize + offset + 1, t[2] as usize + offset + 1);
            }
            offset += verts.len();
        }
    }
    for v in &doc.vertices {
        let _ = writeln!(s, "v {} {} {}", v.position.x, v.position.y, v.position.z);
    }
    for class in EdgeClass::ALL {
        let _ = writeln!(s, "g {}", class.name());
        for e in doc.edges.iter().filter(|e| e.class == class) {
            let _ = writeln!(s, "l {} {}", e.a + offset + 1, e.b + offset + 1);
        }
    }
    create_dir(out)?;
    let path = out.join("scene.obj");
    write_text(&path, &s)?;
    Ok(path)
}
