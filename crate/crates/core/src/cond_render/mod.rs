//! Conditioning images for the generator: body depth, dense semantic
//! colors and the 2D skeleton, together with the camera that produced them.

mod bundle;
mod camera;
pub mod image_io;
mod orient;
mod raster;
mod skeleton;

pub use bundle::{
    build_conditioning_bundle, ConditioningBundle, CAMERA_FILE, DEPTH_FILE, SEMANTIC_FILE,
    SKELETON_FILE,
};
pub use camera::{place_camera, project_points, Camera, Projection, NEAR_PLANE};
pub use orient::{
    orient_body_frontal, visible_checklist_count, Orientation, CHECKLIST_KEYPOINTS,
    TEMPLATE_FORWARD,
};
pub use raster::{depth_at_pixel, rasterize, DepthMap, DepthProbe, SemanticMap};
pub use skeleton::{
    render_skeleton_map, stroke_sizes, RgbImage, SkeletonFormat, OPENPOSE18_COLORS,
    OPENPOSE18_EDGES, OPENPOSE18_NAMES,
};

use crate::body_model::ModelError;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid camera: {0}")]
    Camera(String),
    #[error("degenerate joint set: {0}")]
    DegenerateJoints(String),
    #[error("bad camera sidecar: {0}")]
    Sidecar(String),
    #[error("unknown skeleton definition {0:?}")]
    UnknownSkeleton(String),
    #[error("skeleton {format} expects {expected} joints, got {got}")]
    SkeletonMismatch {
        format: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid render config: {0}")]
    Config(String),
    #[error("image error: {0}")]
    Image(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub focal_normalized: f64,
    pub margin: f64,
    pub image_size: (u32, u32),
    pub orientation_step_deg: f64,
    /// A keypoint counts as occluded when it lies more than this far behind
    /// the rendered surface at its pixel.
    pub occlusion_tolerance_m: f64,
    pub skeleton: String,
    /// Skip the frontal search and render the pose as given.
    pub keep_orientation: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            focal_normalized: 4.0,
            margin: 0.1,
            image_size: (512, 512),
            orientation_step_deg: 5.0,
            occlusion_tolerance_m: 0.1,
            skeleton: "openpose18".into(),
            keep_orientation: false,
        }
    }
}
