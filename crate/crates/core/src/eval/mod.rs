//! Metrics, ground-truth VB-Reps, pipeline orchestration and file output.

pub mod export;
pub mod metrics;
pub mod pipeline;

pub use metrics::{chamfer, face_prf_and_accuracy, greedy_iou_match, masks_from_map, primitive_alignment, sample_meshes, Mask, MatchResult, MetricsReport};
pub use pipeline::{evaluate, fit_instances, gt_vbrep, reconstruct, run_pipeline, Ablation, PipelineConfig, PipelineInput, Reconstruction, Truth};
