//! Procedural body models and pose corpora used by tests, examples and the
//! shipped fixture files.

use super::{axis_angle, BodyModelData, DenseMatrix, Gender, Pose};
use crate::pose_sampling::PoseCorpus;
use nalgebra::{Matrix3, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two-bone bar: four vertices at x=0 bound to the root, four at x=2 bound to
/// the child. The root joint rests at the origin, the child at (1,0,0).
pub fn toy_two_bone() -> BodyModelData {
    let mut template_vertices = Vec::with_capacity(8);
    for x in [0.0, 2.0] {
        for (y, z) in [(-0.1, -0.1), (0.1, -0.1), (0.1, 0.1), (-0.1, 0.1)] {
            template_vertices.push(Point3::new(x, y, z));
        }
    }
    let faces = box_faces(0);
    let mut skinning_weights = DenseMatrix::zeros(8, 2);
    for v in 0..8 {
        skinning_weights.set(v, usize::from(v >= 4), 1.0);
    }
    let mut native = DenseMatrix::zeros(2, 8);
    for v in 0..4 {
        native.set(0, v, 0.25);
    }
    for v in 0..8 {
        native.set(1, v, 0.125);
    }
    // 18 keypoints cycling over the vertices so the toy can drive the
    // skeleton renderer.
    let mut openpose = DenseMatrix::zeros(18, 8);
    for k in 0..18 {
        openpose.set(k, k % 8, 0.5);
        openpose.set(k, (k + 3) % 8, 0.5);
    }
    BodyModelData {
        template_vertices,
        faces,
        skinning_weights,
        parents: vec![None, Some(0)],
        joint_regressor_native: native,
        joint_regressor_openpose: openpose,
        shape_blendshapes: None,
    }
}

/// Triangles of a box whose caps are vertices `base..base+4` and
/// `base+4..base+8`, each cap wound in the same rotational order.
fn box_faces(base: u32) -> Vec<[u32; 3]> {
    let q = |a: u32, b: u32, c: u32, d: u32| [[base + a, base + b, base + c], [base + a, base + c, base + d]];
    let mut faces = Vec::with_capacity(12);
    faces.extend(q(0, 3, 2, 1));
    faces.extend(q(4, 5, 6, 7));
    for i in 0..4 {
        let j = (i + 1) % 4;
        faces.extend(q(i, j, j + 4, i + 4));
    }
    faces
}

/// Names of the 24 joints of the SMPL-style kinematic tree.
pub const SMPL_JOINT_NAMES: [&str; 24] = [
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee", "spine2",
    "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot", "neck",
    "left_collar", "right_collar", "head", "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow", "left_wrist", "right_wrist", "left_hand", "right_hand",
];

pub const SMPL_PARENTS: [i32; 24] = [
    -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21,
];

/// Rest joint positions in the SMPL frame (y-up, facing +z), meters.
const REST_JOINTS_SMPL: [[f64; 3]; 24] = [
    [0.0, 0.0, 0.0],
    [0.07, -0.09, 0.0],
    [-0.07, -0.09, 0.0],
    [0.0, 0.11, -0.01],
    [0.10, -0.47, 0.0],
    [-0.10, -0.47, 0.0],
    [0.0, 0.24, 0.0],
    [0.09, -0.87, -0.04],
    [-0.09, -0.87, -0.04],
    [0.0, 0.30, 0.01],
    [0.11, -0.93, 0.08],
    [-0.11, -0.93, 0.08],
    [0.0, 0.52, -0.01],
    [0.07, 0.43, -0.01],
    [-0.07, 0.43, -0.01],
    [0.0, 0.60, 0.03],
    [0.17, 0.45, -0.02],
    [-0.17, 0.45, -0.02],
    [0.40, 0.32, -0.03],
    [-0.40, 0.32, -0.03],
    [0.62, 0.19, -0.02],
    [-0.62, 0.19, -0.02],
    [0.70, 0.14, -0.02],
    [-0.70, 0.14, -0.02],
];

fn limb_radius(joint: usize) -> f64 {
    match joint {
        0 | 3 | 6 | 9 => 0.11,
        1 | 2 => 0.07,
        4 | 5 => 0.05,
        7 | 8 | 10 | 11 => 0.045,
        12 | 13 | 14 => 0.05,
        15 => 0.09,
        16 | 17 => 0.045,
        18 | 19 => 0.04,
        _ => 0.035,
    }
}

struct Segment {
    joint: usize,
    child: Option<usize>,
    start: Vector3<f64>,
    end: Vector3<f64>,
}

/// A 24-joint box-limbed humanoid with the SMPL kinematic tree and an
/// 18-keypoint OpenPose regressor. Stands in for a licensed SMPL file.
pub fn humanoid() -> BodyModelData {
    let rest: Vec<Vector3<f64>> = REST_JOINTS_SMPL
        .iter()
        .map(|p| Vector3::new(p[0], p[1], p[2]))
        .collect();
    let mut segments = Vec::new();
    for (child, &parent) in SMPL_PARENTS.iter().enumerate() {
        if parent >= 0 {
            let p = parent as usize;
            segments.push(Segment {
                joint: p,
                child: Some(child),
                start: rest[p],
                end: rest[child],
            });
        }
    }
    // Extremities extend past the leaf joints.
    for (joint, extent) in [
        (10, Vector3::new(0.0, 0.0, 0.12)),
        (11, Vector3::new(0.0, 0.0, 0.12)),
        (15, Vector3::new(0.0, 0.18, 0.0)),
        (22, Vector3::new(0.08, -0.03, 0.0)),
        (23, Vector3::new(-0.08, -0.03, 0.0)),
    ] {
        segments.push(Segment {
            joint,
            child: None,
            start: rest[joint],
            end: rest[joint] + extent,
        });
    }
    segments.sort_by_key(|s| (s.joint, s.child));

    let num_v = segments.len() * 8;
    let mut verts = Vec::with_capacity(num_v);
    let mut faces = Vec::new();
    let mut weights = DenseMatrix::zeros(num_v, 24);
    let mut cap_of = [usize::MAX; 24];
    let mut head_box = 0;
    for (si, seg) in segments.iter().enumerate() {
        let base = si * 8;
        if cap_of[seg.joint] == usize::MAX {
            cap_of[seg.joint] = base;
        }
        if seg.joint == 15 {
            head_box = base;
        }
        let dir = (seg.end - seg.start).normalize();
        let reference = if dir.z.abs() > 0.9 { Vector3::x() } else { Vector3::z() };
        let u = dir.cross(&reference).normalize();
        let w = dir.cross(&u);
        let r = limb_radius(seg.joint);
        for (ci, center) in [seg.start, seg.end].into_iter().enumerate() {
            for (a, b) in [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)] {
                let v = verts.len();
                verts.push(center + r * (a * u + b * w));
                match (ci, seg.child) {
                    (1, Some(child)) => {
                        weights.set(v, seg.joint, 0.5);
                        weights.set(v, child, 0.5);
                    }
                    _ => weights.set(v, seg.joint, 1.0),
                }
            }
        }
        faces.extend(box_faces(base as u32));
    }

    let mut native = DenseMatrix::zeros(24, num_v);
    for (j, &cap) in cap_of.iter().enumerate() {
        for v in cap..cap + 4 {
            native.set(j, v, 0.25);
        }
    }

    // Head box: dir = +y, u = (1,0,0)... w points to -z (the back) in the SMPL frame.
    // Cap vertex order is (+u+w, -u+w, -u-w, +u-w).
    let head = |offsets: &[usize]| -> Vec<usize> { offsets.iter().map(|o| head_box + o).collect() };
    let front = head(&[2, 3, 6, 7]);
    let right_front = head(&[2, 6]);
    let left_front = head(&[3, 7]);
    let right_side = head(&[1, 2, 5, 6]);
    let left_side = head(&[0, 3, 4, 7]);
    let mut openpose = DenseMatrix::zeros(18, num_v);
    let mut uniform = |k: usize, vs: &[usize]| {
        for &v in vs {
            openpose.set(k, v, 1.0 / vs.len() as f64);
        }
    };
    let cap = |j: usize| -> Vec<usize> { (cap_of[j]..cap_of[j] + 4).collect() };
    uniform(0, &front);
    for (k, joint) in [
        (1, 12),
        (2, 17),
        (3, 19),
        (4, 21),
        (5, 16),
        (6, 18),
        (7, 20),
        (8, 2),
        (9, 5),
        (10, 8),
        (11, 1),
        (12, 4),
        (13, 7),
    ] {
        uniform(k, &cap(joint));
    }
    uniform(14, &right_front);
    uniform(15, &left_front);
    uniform(16, &right_side);
    uniform(17, &left_side);

    BodyModelData {
        template_vertices: verts.into_iter().map(|p| Point3::new(p.x, -p.y, -p.z)).collect(),
        faces,
        skinning_weights: weights,
        parents: SMPL_PARENTS
            .iter()
            .map(|&p| if p < 0 { None } else { Some(p as usize) })
            .collect(),
        joint_regressor_native: native,
        joint_regressor_openpose: openpose,
        shape_blendshapes: None,
    }
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn rounded(m: Matrix3<f64>) -> Matrix3<f64> {
    m.map(round6)
}

/// Deterministic corpus of plausible-ish poses for the humanoid. Values are
/// rounded to six decimals so the text serialization is exact.
pub fn toy_corpus(n: usize, seed: u64) -> PoseCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let deg = std::f64::consts::PI / 180.0;
    let mut poses = Vec::with_capacity(n);
    for i in 0..n {
        let mut rot = vec![Matrix3::identity(); 24];
        let mut uni = |lo: f64, hi: f64| rng.gen_range(lo..hi) * deg;
        let yaw = uni(-180.0, 180.0);
        let tilt = uni(-10.0, 10.0);
        rot[0] = axis_angle(Vector3::y(), yaw) * axis_angle(Vector3::x(), tilt);
        for hip in [1, 2] {
            rot[hip] = axis_angle(Vector3::x(), uni(-80.0, 25.0)) * axis_angle(Vector3::z(), uni(-25.0, 25.0));
        }
        for knee in [4, 5] {
            rot[knee] = axis_angle(Vector3::x(), uni(-110.0, 0.0));
        }
        rot[3] = axis_angle(Vector3::x(), uni(-20.0, 20.0)) * axis_angle(Vector3::z(), uni(-15.0, 15.0));
        rot[12] = axis_angle(Vector3::x(), uni(-20.0, 20.0));
        for shoulder in [16, 17] {
            rot[shoulder] = axis_angle(Vector3::z(), uni(-60.0, 60.0))
                * axis_angle(Vector3::y(), uni(-40.0, 40.0))
                * axis_angle(Vector3::x(), uni(-40.0, 40.0));
        }
        for elbow in [18, 19] {
            rot[elbow] = axis_angle(Vector3::y(), uni(-110.0, 0.0));
        }
        let joint_rotations = rot.into_iter().map(rounded).collect();
        let root_translation = Vector3::new(
            round6(rng.gen_range(-0.5..0.5)),
            round6(rng.gen_range(-0.1..0.1)),
            round6(rng.gen_range(-0.5..0.5)),
        );
        let gender = if rng.gen_bool(0.5) { Gender::Male } else { Gender::Female };
        poses.push(Pose {
            pose_id: format!("toy{i:05}"),
            joint_rotations,
            root_translation,
            shape_coeffs: None,
            gender,
        });
    }
    PoseCorpus {
        poses,
        source_tag: format!("toy-humanoid seed={seed}"),
    }
}
