//! Reconstruction of view-centric boundary representations (VB-Reps) from a
//! single depth image and a per-pixel primitive instance map.

pub mod camera;
pub mod edge_graph;
pub mod error;
pub mod eval;
pub mod extract;
pub mod fitting;
pub mod frame;
pub mod io;
pub mod lm;
pub mod minimal;
pub mod params;
pub mod primitive;
pub mod real;
pub mod refine;
pub mod synth;

pub use camera::{CameraIntrinsics, DepthImage, PointCloud};
pub use error::*;
pub use frame::{frame_axis, perturb_unit, AlignmentFrame, TangentPerturbation};
pub use primitive::{AxisClass, PrimitiveType, Shape, SurfacePrimitive};
