//! Extrinsic refinement for multi-camera rigs with depth.
//!
//! Given per-camera intrinsics, depth maps and initial extrinsics, [`refine`]
//! jointly minimizes a cross-view depth-consistency loss and a triplet
//! cycle-consistency loss over all extrinsics but one. The [`sim`] module
//! builds synthetic rigs with exact ground truth, and [`metrics`] scores the
//! result against it.

pub mod cli;
pub mod dataset;
pub mod geom;
pub mod metrics;
pub mod optimizer;
pub mod residuals;
pub mod rng;
pub mod sim;

pub use dataset::{
    load_estimate, load_rig, save_estimate, save_rig, CameraRecord, CameraRig, EstimateFile,
};
pub use geom::{CameraIntrinsics, DepthMap, Pixel, RigidTransform, Rotation, TangentVector};
pub use metrics::{CalibrationReport, Variant};
pub use optimizer::{refine, OptResult, OptimizerConfig, Termination};
pub use residuals::{total_objective, ObjectiveConfig, RigView};
pub use sim::{generate_dataset, NoiseModel, RigLayout, Scene, SimConfig};
