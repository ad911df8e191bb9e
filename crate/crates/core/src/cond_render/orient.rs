//! Yaw search that turns a posed body toward the camera.

use super::camera::place_camera;
use super::raster::DepthProbe;
use super::{RenderConfig, RenderError};
use crate::body_model::{
    axis_angle, forward_kinematics, posed_joints, regress_joints, skin_mesh, BodyModelData, Mesh,
    Pose,
};
use nalgebra::{Matrix3, Point3, Vector3};

/// OpenPose-18 indices that must be visible: shoulders, elbows, wrists, ankles.
pub const CHECKLIST_KEYPOINTS: [usize; 8] = [2, 3, 4, 5, 6, 7, 10, 13];

/// Direction the body faces in the template frame.
pub const TEMPLATE_FORWARD: Vector3<f64> = Vector3::new(0.0, 0.0, -1.0);

#[derive(Debug, Clone)]
pub struct Orientation {
    pub pose: Pose,
    /// Yaw about the world vertical (+y) axis, degrees in `[0, 360)`.
    pub angle_deg: f64,
    pub visible_checklist: usize,
}

fn rotate_about(points: &[Point3<f64>], rot: &Matrix3<f64>, center: &Point3<f64>) -> Vec<Point3<f64>> {
    points
        .iter()
        .map(|p| center + rot * (p - center))
        .collect()
}

/// Number of checklist keypoints that project inside the frame and are not
/// hidden behind the surface stored in the depth buffer at their pixel.
pub fn visible_checklist_count(
    mesh: &Mesh,
    keypoints: &[Point3<f64>],
    camera: &super::Camera,
    occlusion_tolerance: f64,
) -> usize {
    let probe = DepthProbe::new(mesh, camera);
    CHECKLIST_KEYPOINTS
        .iter()
        .filter(|&&k| {
            let Some(p) = keypoints.get(k) else {
                return false;
            };
            let proj = camera.project(p);
            if !proj.in_frame(camera.image_size) {
                return false;
            }
            let surface = probe.depth_at(proj.pixel[0] as u32, proj.pixel[1] as u32);
            proj.depth <= surface + occlusion_tolerance
        })
        .count()
}

fn yaw_distance(angle_deg: f64) -> f64 {
    angle_deg.min(360.0 - angle_deg)
}

/// Picks the yaw on a fixed grid that keeps the pelvis facing the camera
/// (horizontal angle below 90 degrees) and maximizes the number of visible
/// checklist joints. Remaining ties go to the most frontal yaw, then to the
/// smallest absolute rotation.
pub fn orient_body_frontal(
    pose: &Pose,
    model: &BodyModelData,
    config: &RenderConfig,
) -> Result<Orientation, RenderError> {
    let step = config.orientation_step_deg;
    if !(step > 0.0 && step <= 360.0) {
        return Err(RenderError::Config(format!(
            "orientation step must be in (0, 360], got {step}"
        )));
    }
    let root = model.root();
    let fk = forward_kinematics(model, pose)?;
    let pivot = posed_joints(&fk)[root];
    let mesh = skin_mesh(model, pose)?;
    let keypoints = regress_joints(&mesh.vertices, &model.joint_regressor_openpose)?;
    let joints = regress_joints(&mesh.vertices, &model.joint_regressor_native)?;
    let forward = pose.joint_rotations[root] * TEMPLATE_FORWARD;

    struct Candidate {
        angle: f64,
        frontal: f64,
        visible: usize,
    }
    let steps = (360.0 / step).round() as usize;
    let mut candidates = Vec::with_capacity(steps);
    for i in 0..steps {
        let angle = i as f64 * step;
        let yaw = axis_angle(Vector3::y(), angle.to_radians());
        let kp = rotate_about(&keypoints, &yaw, &pivot);
        let mut anchor = rotate_about(&joints, &yaw, &pivot);
        anchor.extend_from_slice(&kp);
        let camera = place_camera(
            &anchor,
            root,
            config.focal_normalized,
            config.margin,
            config.image_size,
        )?;
        let f = yaw * forward;
        let to_camera = camera.center - pivot.coords;
        let (fh, ch) = (Vector3::new(f.x, 0.0, f.z), Vector3::new(to_camera.x, 0.0, to_camera.z));
        let frontal = if fh.norm() > 1e-12 && ch.norm() > 1e-12 {
            fh.dot(&ch) / (fh.norm() * ch.norm())
        } else {
            0.0
        };
        let rotated = Mesh {
            vertices: rotate_about(&mesh.vertices, &yaw, &pivot),
            faces: mesh.faces.clone(),
        };
        let visible = visible_checklist_count(&rotated, &kp, &camera, config.occlusion_tolerance_m);
        candidates.push(Candidate {
            angle,
            frontal,
            visible,
        });
    }

    let any_frontal = candidates.iter().any(|c| c.frontal > 0.0);
    let better = |a: &Candidate, b: &Candidate| -> bool {
        if a.visible != b.visible {
            return a.visible > b.visible;
        }
        if (a.frontal - b.frontal).abs() > 1e-9 {
            return a.frontal > b.frontal;
        }
        let (da, db) = (yaw_distance(a.angle), yaw_distance(b.angle));
        if da != db {
            return da < db;
        }
        a.angle < b.angle
    };
    let mut best: Option<&Candidate> = None;
    for c in candidates.iter().filter(|c| !any_frontal || c.frontal > 0.0) {
        if best.is_none_or(|b| better(c, b)) {
            best = Some(c);
        }
    }
    let best = best.expect("grid has at least one angle");

    let mut adjusted = pose.clone();
    adjusted.joint_rotations[root] =
        axis_angle(Vector3::y(), best.angle.to_radians()) * pose.joint_rotations[root];
    Ok(Orientation {
        pose: adjusted,
        angle_deg: best.angle,
        visible_checklist: best.visible,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body_model::fixtures;

    fn config() -> RenderConfig {
        RenderConfig {
            image_size: (256, 256),
            ..RenderConfig::default()
        }
    }

    fn yawed(angle_deg: f64) -> Pose {
        let mut pose = Pose::identity("p", 24);
        pose.joint_rotations[0] = axis_angle(Vector3::y(), angle_deg.to_radians());
        pose
    }

    fn angular_gap(a: f64, b: f64) -> f64 {
        let d = (a - b).rem_euclid(360.0);
        d.min(360.0 - d)
    }

    #[test]
    fn frontal_body_keeps_zero() {
        let o = orient_body_frontal(&yawed(0.0), &fixtures::humanoid(), &config()).unwrap();
        assert_eq!(o.angle_deg, 0.0);
        assert_eq!(o.visible_checklist, CHECKLIST_KEYPOINTS.len());
    }

    #[test]
    fn facing_away_turns_around() {
        let o = orient_body_frontal(&yawed(180.0), &fixtures::humanoid(), &config()).unwrap();
        assert!(angular_gap(o.angle_deg, 180.0) <= 5.0, "{}", o.angle_deg);
    }

    /// Independent re-evaluation of the grid: skin every candidate pose from
    /// scratch and score it with the full rasterizer.
    #[test]
    fn quarter_turn_recovers_frontal() {
        let model = fixtures::humanoid();
        let cfg = config();
        let pose = yawed(90.0);
        let o = orient_body_frontal(&pose, &model, &cfg).unwrap();
        // Frontal means the net yaw returns to 0.
        assert!(angular_gap(o.angle_deg + 90.0, 0.0) <= 5.0, "{}", o.angle_deg);

        let mut best = (0usize, f64::NEG_INFINITY);
        for i in 0..72 {
            let angle = i as f64 * 5.0;
            let mut p = pose.clone();
            p.joint_rotations[0] = axis_angle(Vector3::y(), angle.to_radians()) * p.joint_rotations[0];
            let mesh = skin_mesh(&model, &p).unwrap();
            let kp = regress_joints(&mesh.vertices, &model.joint_regressor_openpose).unwrap();
            let mut anchor = regress_joints(&mesh.vertices, &model.joint_regressor_native).unwrap();
            anchor.extend_from_slice(&kp);
            let cam = place_camera(&anchor, 0, cfg.focal_normalized, cfg.margin, cfg.image_size).unwrap();
            let (depth, _) = super::super::rasterize(&mesh, None, &cam);
            let visible = CHECKLIST_KEYPOINTS
                .iter()
                .filter(|&&k| {
                    let pr = cam.project(&kp[k]);
                    pr.in_frame(cam.image_size)
                        && pr.depth <= depth.at(pr.pixel[0] as u32, pr.pixel[1] as u32) + cfg.occlusion_tolerance_m
                })
                .count();
            let forward = p.joint_rotations[0] * TEMPLATE_FORWARD;
            let frontal = -forward.z / forward.xz().norm();
            if frontal > 0.0 && (visible, frontal) > (best.0, best.1) {
                best = (visible, frontal);
            }
        }
        assert_eq!(o.visible_checklist, best.0);
    }
}
