use super::camera::{place_camera, project_points, Camera};
use super::image_io::{
    encode_depth_png, encode_rgb_png, semantic_to_rgb, write_file,
};
use super::orient::orient_body_frontal;
use super::raster::{rasterize, DepthMap, SemanticMap};
use super::skeleton::{render_skeleton_map, RgbImage, SkeletonFormat};
use super::{RenderConfig, RenderError};
use crate::body_model::{canonical_semantic_colors, regress_joints, skin_mesh, BodyModelData, Pose};
use nalgebra::Point3;
use std::path::Path;

pub const DEPTH_FILE: &str = "depth.png";
pub const SEMANTIC_FILE: &str = "semantic.png";
pub const SKELETON_FILE: &str = "skeleton.png";
pub const CAMERA_FILE: &str = "camera.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningBundle {
    pub pose_id: String,
    pub depth_map: DepthMap,
    pub semantic_map: SemanticMap,
    pub skeleton_map: RgbImage,
    pub camera: Camera,
    /// The pose actually rendered, after the frontal rotation.
    pub pose: Pose,
    pub orientation_deg: f64,
    pub visible_checklist: usize,
    /// OpenPose-18 keypoints in world space and their pixel positions.
    pub keypoints3d: Vec<Point3<f64>>,
    pub keypoints2d: Vec<[f64; 2]>,
    pub keypoint_visible: Vec<bool>,
}

impl ConditioningBundle {
    /// The 3D conditions replaced by background, keeping the skeleton.
    pub fn without_3d(&self) -> Self {
        let (w, h) = self.camera.image_size;
        Self {
            depth_map: DepthMap::background(w, h),
            semantic_map: SemanticMap::background(w, h),
            ..self.clone()
        }
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        for (i, (d, s)) in self
            .depth_map
            .data
            .iter()
            .zip(&self.semantic_map.data)
            .enumerate()
        {
            if d.is_finite() && *d <= 0.0 {
                return Err(format!("pixel {i}: nonpositive depth {d}"));
            }
            if d.is_infinite() && *s != [0.0; 3] {
                return Err(format!("pixel {i}: semantic color on background"));
            }
        }
        Ok(())
    }

    pub fn encode_pngs(&self) -> Result<[Vec<u8>; 3], RenderError> {
        Ok([
            encode_depth_png(&self.depth_map)?,
            encode_rgb_png(&semantic_to_rgb(&self.semantic_map, &self.depth_map))?,
            encode_rgb_png(&self.skeleton_map)?,
        ])
    }

    /// Writes `depth.png`, `semantic.png`, `skeleton.png` and `camera.txt`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), RenderError> {
        let [depth, semantic, skeleton] = self.encode_pngs()?;
        write_file(&dir.join(DEPTH_FILE), &depth)?;
        write_file(&dir.join(SEMANTIC_FILE), &semantic)?;
        write_file(&dir.join(SKELETON_FILE), &skeleton)?;
        write_file(
            &dir.join(CAMERA_FILE),
            self.camera.to_sidecar(&self.pose_id).as_bytes(),
        )
    }
}

pub fn build_conditioning_bundle(
    model: &BodyModelData,
    pose: &Pose,
    config: &RenderConfig,
) -> Result<ConditioningBundle, RenderError> {
    let format = SkeletonFormat::from_name(&config.skeleton)?;
    if model.num_keypoints() != format.num_joints() {
        return Err(RenderError::SkeletonMismatch {
            format: format.name(),
            expected: format.num_joints(),
            got: model.num_keypoints(),
        });
    }
    pose.validate()?;
    let (pose, angle, visible_checklist) = if config.keep_orientation {
        (pose.clone(), 0.0, 0)
    } else {
        let o = orient_body_frontal(pose, model, config)?;
        (o.pose, o.angle_deg, o.visible_checklist)
    };

    let mesh = skin_mesh(model, &pose)?;
    let keypoints3d = regress_joints(&mesh.vertices, &model.joint_regressor_openpose)?;
    let mut anchor = regress_joints(&mesh.vertices, &model.joint_regressor_native)?;
    anchor.extend_from_slice(&keypoints3d);
    let camera = place_camera(
        &anchor,
        model.root(),
        config.focal_normalized,
        config.margin,
        config.image_size,
    )?;

    let colors = canonical_semantic_colors(model)?;
    let (depth_map, semantic_map) = rasterize(&mesh, Some(&colors), &camera);
    let projections = project_points(&camera, &keypoints3d);
    let keypoints2d: Vec<[f64; 2]> = projections.iter().map(|p| p.pixel).collect();
    let keypoint_visible: Vec<bool> = projections
        .iter()
        .map(|p| p.in_frame(config.image_size))
        .collect();
    let skeleton_map = render_skeleton_map(&keypoints2d, &keypoint_visible, format, config.image_size)?;

    Ok(ConditioningBundle {
        pose_id: pose.pose_id.clone(),
        depth_map,
        semantic_map,
        skeleton_map,
        camera,
        pose,
        orientation_deg: angle,
        visible_checklist,
        keypoints3d,
        keypoints2d,
        keypoint_visible,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body_model::{axis_angle, fixtures};
    use nalgebra::Vector3;

    fn small() -> RenderConfig {
        RenderConfig {
            image_size: (128, 128),
            ..RenderConfig::default()
        }
    }

    #[test]
    fn toy_semantic_support_equals_depth_support() {
        let model = fixtures::toy_two_bone();
        let mut pose = Pose::identity("t", 2);
        pose.joint_rotations[1] = axis_angle(Vector3::z(), 0.7);
        let cfg = RenderConfig {
            keep_orientation: true,
            ..small()
        };
        let b = build_conditioning_bundle(&model, &pose, &cfg).unwrap();
        b.check_invariants().unwrap();
        assert!(b.depth_map.covered() > 0);
        let rgb = semantic_to_rgb(&b.semantic_map, &b.depth_map);
        for (i, d) in b.depth_map.data.iter().enumerate() {
            let px = &rgb.data[i * 3..i * 3 + 3];
            assert_eq!(d.is_finite(), px != [0, 0, 0]);
        }
    }

    #[test]
    fn same_pose_twice_is_byte_identical() {
        let model = fixtures::humanoid();
        let pose = &fixtures::toy_corpus(3, 11).poses[2];
        let a = build_conditioning_bundle(&model, pose, &small()).unwrap();
        let b = build_conditioning_bundle(&model, pose, &small()).unwrap();
        assert_eq!(a.encode_pngs().unwrap(), b.encode_pngs().unwrap());
        assert_eq!(a.camera.to_sidecar("x"), b.camera.to_sidecar("x"));
    }

    #[test]
    fn keypoint_pixels_match_direct_projection() {
        let model = fixtures::humanoid();
        let pose = &fixtures::toy_corpus(5, 3).poses[4];
        let b = build_conditioning_bundle(&model, pose, &small()).unwrap();
        let mesh = skin_mesh(&model, &b.pose).unwrap();
        let kp = regress_joints(&mesh.vertices, &model.joint_regressor_openpose).unwrap();
        let c = &b.camera;
        let (w, h) = (c.image_size.0 as f64, c.image_size.1 as f64);
        for (k, p) in kp.iter().enumerate() {
            let q = p.coords - c.center;
            let u = (c.focal_normalized * q.x / q.z + 1.0) / 2.0 * w;
            let v = (c.focal_normalized * q.y / q.z + 1.0) / 2.0 * h;
            assert!((b.keypoints2d[k][0] - u).abs() < 1e-9);
            assert!((b.keypoints2d[k][1] - v).abs() < 1e-9);
        }
    }

    #[test]
    fn doubling_resolution_keeps_normalized_joints() {
        let model = fixtures::humanoid();
        let pose = &fixtures::toy_corpus(2, 8).poses[1];
        // The yaw search may pick another grid angle at a finer pixel grid.
        let fixed = RenderConfig {
            keep_orientation: true,
            ..small()
        };
        let a = build_conditioning_bundle(&model, pose, &fixed).unwrap();
        let cfg = RenderConfig {
            image_size: (256, 256),
            ..fixed
        };
        let b = build_conditioning_bundle(&model, pose, &cfg).unwrap();
        for (pa, pb) in a.keypoints2d.iter().zip(&b.keypoints2d) {
            assert!((pa[0] * 2.0 - pb[0]).abs() <= 0.5);
            assert!((pa[1] * 2.0 - pb[1]).abs() <= 0.5);
        }
    }

    #[test]
    fn all_keypoints_inside_frame() {
        let model = fixtures::humanoid();
        for pose in &fixtures::toy_corpus(4, 21).poses {
            let b = build_conditioning_bundle(&model, pose, &small()).unwrap();
            assert!(b.keypoint_visible.iter().all(|v| *v), "{}", pose.pose_id);
        }
    }

    #[test]
    fn without_3d_is_background_only() {
        let model = fixtures::humanoid();
        let b = build_conditioning_bundle(&model, &Pose::identity("i", 24), &small()).unwrap();
        let z = b.without_3d();
        assert_eq!(z.depth_map.covered(), 0);
        assert_eq!(z.skeleton_map, b.skeleton_map);
        z.check_invariants().unwrap();
    }

    #[test]
    fn bundle_directory_layout() {
        let model = fixtures::humanoid();
        let b = build_conditioning_bundle(&model, &Pose::identity("i", 24), &small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        b.write_dir(dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join(CAMERA_FILE)).unwrap();
        let (id, cam) = Camera::from_sidecar(&text).unwrap();
        assert_eq!(id, "i");
        assert_eq!(cam, b.camera);
        let sk = super::super::image_io::read_rgb_png(&dir.path().join(SKELETON_FILE)).unwrap();
        assert_eq!(sk, b.skeleton_map);
    }
}
