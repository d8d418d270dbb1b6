//! End-to-end orchestration, ground-truth VB-Reps and metric computation.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{chamfer, face_prf_and_accuracy, greedy_iou_match, masks_from_map, primitive_alignment, sample_meshes, MetricsReport};
use crate::camera::{estimate_normals, smooth_depth, unproject, CameraIntrinsics, DepthImage};
use crate::edge_graph::{densify, extract_contours, simplify, snap_to_boundary, EdgeGraph2D, InstanceMap, Label, LabelTable};
use crate::error::{FitError, FormatError, PipelineError};
use crate::extract::{assemble_vbrep, ExtractConfig, ExtractInput, VBRep};
use crate::fitting::{global_align_fit, ransac_fit, CleanedInstance, FitConfig};
use crate::frame::AlignmentFrame;
use crate::primitive::AxisClass;
use crate::refine::{depth_solve, init_wireframe, label_intersections, refine, PrimitiveMap, RefineConfig, Wireframe3D};
use crate::synth::TruthFile;

/// Ablation switches. `no_int` skips the joint intersection refinement and
/// `no_axis` drops the axis constraints; both together give Fit-only.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub no_int: bool,
    pub no_axis: bool,
}

impl Ablation {
    pub const FULL: Ablation = Ablation { no_int: false, no_axis: false };
    pub const NO_INT: Ablation = Ablation { no_int: true, no_axis: false };
    pub const NO_AXIS: Ablation = Ablation { no_int: false, no_axis: true };
    pub const FIT_ONLY: Ablation = Ablation { no_int: true, no_axis: true };

    pub fn name(self) -> &'static str {
        match (self.no_int, self.no_axis) {
            (false, false) => "full",
            (true, false) => "no-int",
            (false, true) => "no-axis",
            (true, true) => "fit-only",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Gaussian pre-smoothing (pixels) applied before normal estimation.
    pub normal_sigma: f64,
    /// Douglas-Peucker tolerance in pixels.
    pub dp_tolerance: f64,
    /// Maximum spacing in pixels between edge graph vertices.
    pub densify_spacing: f64,
    /// Radius in pixels of the local boundary fit that places graph
    /// vertices with subpixel accuracy; 0 keeps lattice positions.
    pub snap_radius: f64,
    pub fit: FitConfig,
    pub refine: RefineConfig,
    pub extract: ExtractConfig,
    /// Surface samples per side for the Chamfer distance.
    pub chamfer_samples: usize,
    pub record_wall_time: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            normal_sigma: 2.0,
            dp_tolerance: 1.5,
            densify_spacing: 8.0,
            snap_radius: 4.0,
            fit: FitConfig::default(),
            refine: RefineConfig::default(),
            extract: ExtractConfig::default(),
            chamfer_samples: 20_000,
            record_wall_time: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), FormatError> {
        self.fit.validate().map_err(FormatError::Invalid)?;
        if !(self.dp_tolerance > 0.0) || !(self.densify_spacing > 0.0) || self.chamfer_samples == 0 {
            return Err(FormatError::Invalid("dp_tolerance, densify_spacing and chamfer_samples must be positive".into()));
        }
        Ok(())
    }
}

/// Ground truth attached to an input bundle.
#[derive(Clone, Debug, PartialEq)]
pub struct Truth {
    pub file: TruthFile,
    /// Noiseless depth used to build the reference VB-Rep.
    pub depth: DepthImage,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineInput {
    pub depth: DepthImage,
    pub instances: InstanceMap,
    pub camera: CameraIntrinsics,
    pub truth: Option<Truth>,
}

impl PipelineInput {
    pub fn validate(&self) -> Result<(), FormatError> {
        self.camera.validate()?;
        let (w, h) = (self.camera.width, self.camera.height);
        for got in [(self.depth.width, self.depth.height), (self.instances.width, self.instances.height)] {
            if got != (w, h) {
                return Err(FormatError::DimensionMismatch { expected: (w, h), got });
            }
        }
        self.instances.validate().map_err(FormatError::Invalid)
    }
}

/// Output of a pipeline run with its intermediate stages.
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub vbrep: VBRep,
    pub primitives: PrimitiveMap,
    pub frame: AlignmentFrame,
    pub graph: EdgeGraph2D,
    pub wireframe: Wireframe3D,
    /// Instances fitted without consensus.
    pub flagged: Vec<u16>,
}

/// RANSAC fit of every labeled instance; fits without consensus are kept
/// flagged, other failures are skipped.
pub fn fit_instances(input: &PipelineInput, cfg: &PipelineConfig) -> Result<Vec<CleanedInstance>, PipelineError> {
    let k = &input.camera;
    let smoothed = smooth_depth(&input.depth, cfg.normal_sigma);
    let normals = estimate_normals(&smoothed, k)?;
    let cloud = unproject(&input.depth, k)?;
    let mut per_id: BTreeMap<u16, (Vec<Vector3<f64>>, Vec<Vector3<f64>>)> = BTreeMap::new();
    for c in &cloud {
        let id = input.instances.get(c.pixel.0, c.pixel.1);
        if input.instances.labels.contains_key(&id) {
            let e = per_id.entry(id).or_default();
            e.0.push(c.point);
            e.1.push(normals[c.pixel.1 * k.width + c.pixel.0]);
        }
    }
    let fit_cfg = FitConfig { seed: cfg.seed, ..cfg.fit };
    let fitted: Vec<Option<CleanedInstance>> = per_id
        .par_iter()
        .map(|(&id, (points, normals))| {
            let label = input.instances.labels[&id];
            match ransac_fit(id, points, normals, label.kind, label.axis_class, &fit_cfg) {
                Ok(c) => Some(c),
                Err(FitError::NoConsensus { fraction, best: Some(best) }) => {
                    log::warn!("instance {id}: no consensus ({fraction:.3}); keeping flagged fit");
                    Some(*best)
                }
                Err(e) => {
                    log::warn!("instance {id} skipped: {e}");
                    None
                }
            }
        })
        .collect();
    let cleaned: Vec<CleanedInstance> = fitted.into_iter().flatten().collect();
    if cleaned.is_empty() {
        return Err(PipelineError::stage("fitting", "no instance could be fitted"));
    }
    Ok(cleaned)
}

fn extract(
    graph: &EdgeGraph2D,
    wf: &Wireframe3D,
    prims: &PrimitiveMap,
    input: (&InstanceMap, &DepthImage, &CameraIntrinsics),
    cfg: &ExtractConfig,
) -> Result<VBRep, PipelineError> {
    let ex = ExtractInput { graph, wireframe: wf, primitives: prims, instances: input.0, depth: input.1, camera: input.2 };
    assemble_vbrep(&ex, cfg).map_err(|e| PipelineError::stage("extract", e))
}

pub fn edge_graph(m: &InstanceMap, cfg: &PipelineConfig) -> EdgeGraph2D {
    let chains = extract_contours(m);
    let g = densify(&simplify(&chains, cfg.dp_tolerance, m.width, m.height), cfg.densify_spacing);
    snap_to_boundary(&g, &chains, cfg.snap_radius, 20.0)
}

/// Depth solve and labeling without primitive updates.
fn lift_only(wf: &mut Wireframe3D, prims: &PrimitiveMap, labels: &LabelTable, excluded: &[u16], d_int: f64) {
    wf.s = depth_solve(wf, prims, None);
    wf.intersection = label_intersections(wf, prims, d_int, labels, excluded);
}

/// Runs depth processing, fitting, refinement and extraction.
pub fn reconstruct(input: &PipelineInput, ablation: Ablation, cfg: &PipelineConfig) -> Result<Reconstruction, PipelineError> {
    input.validate()?;
    cfg.validate()?;
    let cleaned = fit_instances(input, cfg)?;
    let fit_cfg = FitConfig { seed: cfg.seed, ..cfg.fit };
    let aligned = global_align_fit(&cleaned, &fit_cfg, !ablation.no_axis).map_err(|e| PipelineError::stage("fitting", e))?;
    let flagged: Vec<u16> = cleaned.iter().filter(|c| c.flagged).map(|c| c.id).collect();
    let mut prims: PrimitiveMap = cleaned.iter().zip(aligned.primitives).map(|(c, p)| (c.id, p)).collect();
    // a flagged fit never carried the frame constraint
    for id in &flagged {
        if let Some(p) = prims.get_mut(id) {
            p.axis_class = AxisClass::Unaligned;
        }
    }
    let graph = edge_graph(&input.instances, cfg);
    let mut wf = init_wireframe(&graph, &input.camera, &input.depth);
    let labels = &input.instances.labels;
    let mut frame = aligned.frame;
    if ablation.no_int {
        lift_only(&mut wf, &prims, labels, &flagged, cfg.refine.d_int);
    } else {
        let r = refine(&prims, &frame, &wf, &cleaned, labels, &flagged, !ablation.no_axis, &cfg.refine)
            .map_err(|e| PipelineError::stage("refine", e))?;
        prims = r.primitives;
        frame = r.frame;
        wf = r.wireframe;
    }
    let vbrep = extract(&graph, &wf, &prims, (&input.instances, &input.depth, &input.camera), &cfg.extract)?;
    Ok(Reconstruction { vbrep, primitives: prims, frame, graph, wireframe: wf, flagged })
}

/// VB-Rep extracted from the true primitives and instance map, skipping
/// fitting and refinement.
pub fn gt_vbrep(
    depth: &DepthImage,
    instances: &InstanceMap,
    camera: &CameraIntrinsics,
    truth: &TruthFile,
    cfg: &PipelineConfig,
) -> Result<VBRep, PipelineError> {
    let present = instances.instance_ids();
    let prims: PrimitiveMap = truth.primitives.iter().filter(|(id, _)| present.contains(id)).map(|(id, p)| (*id, p.clone())).collect();
    if prims.is_empty() {
        return Err(PipelineError::stage("gt-vbrep", "no true primitive is visible"));
    }
    let graph = edge_graph(instances, cfg);
    let mut wf = init_wireframe(&graph, camera, depth);
    lift_only(&mut wf, &prims, &instances.labels, &[], cfg.refine.d_int);
    extract(&graph, &wf, &prims, (instances, depth, camera), &cfg.extract)
}

fn predicted_labels(prims: &PrimitiveMap, input: &InstanceMap) -> LabelTable {
    prims
        .iter()
        .map(|(id, p)| (*id, Label { kind: p.kind(), axis_class: input.labels.get(id).map_or(p.axis_class, |l| l.axis_class) }))
        .collect()
}

/// Metrics of a reconstruction against a reference VB-Rep and the true
/// primitives.
pub fn evaluate(rec: &Reconstruction, reference: &VBRep, instances: &InstanceMap, truth: &TruthFile, cfg: &PipelineConfig) -> Result<MetricsReport, PipelineError> {
    let a = sample_meshes(rec.vbrep.meshes(), cfg.chamfer_samples, cfg.seed);
    let b = sample_meshes(reference.meshes(), cfg.chamfer_samples, cfg.seed);
    let cd = chamfer(&a, &b).map_err(|e| PipelineError::stage("eval", e))?;
    let pred_masks = masks_from_map(instances, |id| rec.primitives.contains_key(&id));
    let truth_masks = masks_from_map(instances, |id| truth.primitives.contains_key(&id));
    let matches = greedy_iou_match(&pred_masks, &truth_masks);
    let pred_labels = predicted_labels(&rec.primitives, instances);
    let truth_labels: LabelTable = truth_masks
        .iter()
        .map(|m| (m.id, Label { kind: truth.primitives[&m.id].kind(), axis_class: truth.primitives[&m.id].axis_class }))
        .collect();
    let pred_labels: LabelTable = pred_labels.into_iter().filter(|(id, _)| pred_masks.iter().any(|m| m.id == *id)).collect();
    let scores = face_prf_and_accuracy(&matches, &pred_labels, &truth_labels);
    Ok(MetricsReport {
        chamfer: cd,
        primitive_alignment: primitive_alignment(&matches, &rec.primitives, &truth.primitives).ok(),
        face_precision: scores.precision,
        face_recall: scores.recall,
        type_accuracy: scores.type_accuracy,
        axis_accuracy: scores.axis_accuracy,
        wall_time: None,
    })
}

/// Reconstructs and, when truth is attached, scores against `gt_vbrep`.
pub fn run_pipeline(input: &PipelineInput, ablation: Ablation, cfg: &PipelineConfig) -> Result<(Reconstruction, Option<MetricsReport>), PipelineError> {
    let start = Instant::now();
    let rec = reconstruct(input, ablation, cfg)?;
    let elapsed = start.elapsed().as_secs_f64();
    let Some(truth) = &input.truth else {
        return Ok((rec, None));
    };
    let reference = gt_vbrep(&truth.depth, &input.instances, &input.camera, &truth.file, cfg)?;
    let mut report = evaluate(&rec, &reference, &input.instances, &truth.file, cfg)?;
    if cfg.record_wall_time {
        report.wall_time = Some(elapsed);
    }
    Ok((rec, Some(report)))
}
