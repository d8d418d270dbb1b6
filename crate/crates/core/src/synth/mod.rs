//! Analytic scene harness: ray-cast ground truth and the depth noise model.

pub mod noise;
pub mod raycast;
pub mod scene;
pub mod suites;

pub use noise::{corrupt_depth, fbm_noise, BilateralParams, FbmConfig};
pub use raycast::{raycast_scene, GroundTruth, PreparedScene, TruthFile};
pub use scene::{axis_label, CameraPose, GroundSpec, Role, SceneSpec, SolidKind, SolidSpec};
