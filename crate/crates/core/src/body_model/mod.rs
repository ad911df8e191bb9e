//! Skinned parametric body model: forward kinematics, linear blend skinning,
//! joint regression and canonical semantic colors.
//!
//! Coordinates are meters in a camera-aligned world frame: +x right, +y down,
//! +z away from the viewer. A body in its canonical pose faces -z.

mod container;
mod convert;
pub mod fixtures;

pub use container::{load_body_model, read_body_model, save_body_model, write_body_model};
pub use convert::{convert_smpl_json, SmplJsonLayout};

use nalgebra::{Matrix3, Matrix4, Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const STOCHASTIC_TOL: f64 = 1e-6;
const ROTATION_TOL: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed model container: {0}")]
    Malformed(String),
    #[error("invalid {field}: {reason}")]
    Invariant { field: &'static str, reason: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

impl ModelError {
    fn invariant(field: &'static str, reason: impl Into<String>) -> Self {
        ModelError::Invariant {
            field,
            reason: reason.into(),
        }
    }
}

/// Dense row-major matrix with `rows` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, ModelError> {
        if data.len() != rows * cols {
            return Err(ModelError::Dimension(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn check_row_stochastic(&self, field: &'static str) -> Result<(), ModelError> {
        for r in 0..self.rows {
            let row = self.row(r);
            if let Some(c) = row.iter().position(|w| !w.is_finite() || *w < 0.0) {
                return Err(ModelError::invariant(
                    field,
                    format!("row {r} column {c} is negative or non-finite"),
                ));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(ModelError::invariant(
                    field,
                    format!("row {r} sums to {sum}, expected 1"),
                ));
            }
        }
        Ok(())
    }
}

/// Shape blendshape tensor, stored vertex-major as `[V][3][B]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeBlendshapes {
    pub num_coeffs: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BodyModelData {
    pub template_vertices: Vec<Point3<f64>>,
    pub faces: Vec<[u32; 3]>,
    /// V x J.
    pub skinning_weights: DenseMatrix,
    /// Parent joint per joint, `None` for the root.
    pub parents: Vec<Option<usize>>,
    /// J x V.
    pub joint_regressor_native: DenseMatrix,
    /// K x V, producing OpenPose-ordered keypoints.
    pub joint_regressor_openpose: DenseMatrix,
    pub shape_blendshapes: Option<ShapeBlendshapes>,
}

impl BodyModelData {
    pub fn num_vertices(&self) -> usize {
        self.template_vertices.len()
    }

    pub fn num_joints(&self) -> usize {
        self.parents.len()
    }

    pub fn num_keypoints(&self) -> usize {
        self.joint_regressor_openpose.rows
    }

    pub fn root(&self) -> usize {
        self.parents.iter().position(Option::is_none).unwrap_or(0)
    }

    /// Checks every structural invariant; the error names the failing field.
    pub fn validate(&self) -> Result<(), ModelError> {
        let v = self.num_vertices();
        let j = self.num_joints();
        if v == 0 {
            return Err(ModelError::invariant("template_vertices", "no vertices"));
        }
        if self
            .template_vertices
            .iter()
            .any(|p| !p.coords.iter().all(|c| c.is_finite()))
        {
            return Err(ModelError::invariant(
                "template_vertices",
                "non-finite coordinate",
            ));
        }
        if let Some((i, f)) = self
            .faces
            .iter()
            .enumerate()
            .find(|(_, f)| f.iter().any(|&idx| idx as usize >= v))
        {
            return Err(ModelError::invariant(
                "faces",
                format!("face {i} {f:?} references a vertex >= {v}"),
            ));
        }
        if self.skinning_weights.rows != v || self.skinning_weights.cols != j {
            return Err(ModelError::invariant(
                "skinning_weights",
                format!(
                    "shape {}x{}, expected {v}x{j}",
                    self.skinning_weights.rows, self.skinning_weights.cols
                ),
            ));
        }
        self.skinning_weights
            .check_row_stochastic("skinning_weights")?;
        self.check_tree()?;
        if self.joint_regressor_native.rows != j || self.joint_regressor_native.cols != v {
            return Err(ModelError::invariant(
                "joint_regressor_native",
                format!(
                    "shape {}x{}, expected {j}x{v}",
                    self.joint_regressor_native.rows, self.joint_regressor_native.cols
                ),
            ));
        }
        self.joint_regressor_native
            .check_row_stochastic("joint_regressor_native")?;
        if self.joint_regressor_openpose.cols != v {
            return Err(ModelError::invariant(
                "joint_regressor_openpose",
                format!(
                    "{} columns, expected {v}",
                    self.joint_regressor_openpose.cols
                ),
            ));
        }
        self.joint_regressor_openpose
            .check_row_stochastic("joint_regressor_openpose")?;
        if let Some(shapes) = &self.shape_blendshapes {
            if shapes.data.len() != v * 3 * shapes.num_coeffs {
                return Err(ModelError::invariant(
                    "shape_blendshapes",
                    format!(
                        "{} values, expected {v}x3x{}",
                        shapes.data.len(),
                        shapes.num_coeffs
                    ),
                ));
            }
        }
        Ok(())
    }

    fn check_tree(&self) -> Result<(), ModelError> {
        let j = self.num_joints();
        if j == 0 {
            return Err(ModelError::invariant("kinematic_tree", "no joints"));
        }
        let roots = self.parents.iter().filter(|p| p.is_none()).count();
        if roots != 1 {
            return Err(ModelError::invariant(
                "kinematic_tree",
                format!("{roots} roots, expected exactly one"),
            ));
        }
        for (joint, parent) in self.parents.iter().enumerate() {
            if let Some(p) = parent {
                if *p >= j {
                    return Err(ModelError::invariant(
                        "kinematic_tree",
                        format!("joint {joint} has out-of-range parent {p}"),
                    ));
                }
            }
            // Walking up must reach the root within j steps.
            let mut cur = joint;
            let mut steps = 0;
            while let Some(p) = self.parents[cur] {
                cur = p;
                steps += 1;
                if steps > j {
                    return Err(ModelError::invariant(
                        "kinematic_tree",
                        format!("cycle through joint {joint}"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Joints ordered so that every parent precedes its children.
    fn topological_order(&self) -> Vec<usize> {
        let depth = |mut j: usize| {
            let mut d = 0;
            while let Some(p) = self.parents[j] {
                j = p;
                d += 1;
            }
            d
        };
        let mut order: Vec<usize> = (0..self.num_joints()).collect();
        order.sort_by_key(|&j| (depth(j), j));
        order
    }

    /// Template vertices with shape blendshapes applied.
    pub fn shaped_template(&self, shape: Option<&[f64]>) -> Result<Vec<Point3<f64>>, ModelError> {
        let coeffs = match shape {
            Some(c) if c.iter().any(|x| *x != 0.0) => c,
            _ => return Ok(self.template_vertices.clone()),
        };
        let shapes = self.shape_blendshapes.as_ref().ok_or_else(|| {
            ModelError::Dimension("shape coefficients given but model has no blendshapes".into())
        })?;
        if coeffs.len() > shapes.num_coeffs {
            return Err(ModelError::Dimension(format!(
                "{} shape coefficients, model has {}",
                coeffs.len(),
                shapes.num_coeffs
            )));
        }
        let b = shapes.num_coeffs;
        Ok(self
            .template_vertices
            .iter()
            .enumerate()
            .map(|(v, p)| {
                let mut out = *p;
                for axis in 0..3 {
                    let base = (v * 3 + axis) * b;
                    out[axis] += coeffs
                        .iter()
                        .enumerate()
                        .map(|(k, c)| c * shapes.data[base + k])
                        .sum::<f64>();
                }
                out
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
    Neutral,
    Unknown,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
            Gender::Neutral => "neutral",
            Gender::Unknown => "unknown",
        }
    }
}

impl std::str::FromStr for Gender {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "male" | "m" => Ok(Gender::Male),
            "female" | "f" => Ok(Gender::Female),
            "neutral" | "n" => Ok(Gender::Neutral),
            "unknown" | "u" => Ok(Gender::Unknown),
            other => Err(format!("unknown gender label {other:?}")),
        }
    }
}

impl std::fmt::Display for Gender {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub pose_id: String,
    /// Local rotation per joint, relative to the parent.
    pub joint_rotations: Vec<Matrix3<f64>>,
    pub root_translation: Vector3<f64>,
    pub shape_coeffs: Option<Vec<f64>>,
    pub gender: Gender,
}

impl Pose {
    pub fn identity(pose_id: impl Into<String>, num_joints: usize) -> Self {
        Self {
            pose_id: pose_id.into(),
            joint_rotations: vec![Matrix3::identity(); num_joints],
            root_translation: Vector3::zeros(),
            shape_coeffs: None,
            gender: Gender::Unknown,
        }
    }

    /// Returns the index of the first rotation that is not a proper rotation.
    pub fn validate(&self) -> Result<(), ModelError> {
        for (j, r) in self.joint_rotations.iter().enumerate() {
            if !is_rotation(r, ROTATION_TOL) {
                return Err(ModelError::invariant(
                    "joint_rotations",
                    format!("joint {j} of pose {} is not a proper rotation", self.pose_id),
                ));
            }
        }
        if !self.root_translation.iter().all(|c| c.is_finite()) {
            return Err(ModelError::invariant(
                "root_translation",
                format!("non-finite translation in pose {}", self.pose_id),
            ));
        }
        Ok(())
    }
}

pub fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    let should_be_identity = r.transpose() * r;
    (should_be_identity - Matrix3::identity()).abs().max() <= tol
        && (r.determinant() - 1.0).abs() <= tol
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point3<f64>>,
    pub faces: Vec<[u32; 3]>,
}

/// Rigid transform per joint in world coordinates, plus the rest joint
/// positions they were built from.
#[derive(Debug, Clone)]
pub struct JointTransforms {
    pub global: Vec<Matrix4<f64>>,
    pub rest_joints: Vec<Point3<f64>>,
}

fn check_pose_dims(model: &BodyModelData, pose: &Pose) -> Result<(), ModelError> {
    if pose.joint_rotations.len() != model.num_joints() {
        return Err(ModelError::Dimension(format!(
            "pose {} has {} joint rotations, model has {} joints",
            pose.pose_id,
            pose.joint_rotations.len(),
            model.num_joints()
        )));
    }
    Ok(())
}

fn rigid(rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(rotation);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(translation);
    m
}

/// Global transform of each joint: parent transform composed with the local
/// rotation about the joint's rest position. The root is also translated.
pub fn forward_kinematics(model: &BodyModelData, pose: &Pose) -> Result<JointTransforms, ModelError> {
    check_pose_dims(model, pose)?;
    let template = model.shaped_template(pose.shape_coeffs.as_deref())?;
    let rest_joints = regress_joints(&template, &model.joint_regressor_native)?;
    let mut global = vec![Matrix4::identity(); model.num_joints()];
    for j in model.topological_order() {
        let rot = &pose.joint_rotations[j];
        global[j] = match model.parents[j] {
            None => rigid(rot, &(rest_joints[j].coords + pose.root_translation)),
            Some(p) => {
                let offset = rest_joints[j] - rest_joints[p];
                global[p] * rigid(rot, &offset)
            }
        };
    }
    Ok(JointTransforms {
        global,
        rest_joints,
    })
}

/// Posed joint positions (the translation part of each global transform).
pub fn posed_joints(transforms: &JointTransforms) -> Vec<Point3<f64>> {
    transforms
        .global
        .iter()
        .map(|g| Point3::new(g[(0, 3)], g[(1, 3)], g[(2, 3)]))
        .collect()
}

/// Linear blend skinning of the (shape-adjusted) template.
pub fn skin_mesh(model: &BodyModelData, pose: &Pose) -> Result<Mesh, ModelError> {
    let fk = forward_kinematics(model, pose)?;
    let template = model.shaped_template(pose.shape_coeffs.as_deref())?;
    // Skinning transforms map rest-space points: G_j * T(-rest_j).
    let skinning: Vec<(Matrix3<f64>, Vector3<f64>)> = fk
        .global
        .iter()
        .zip(&fk.rest_joints)
        .map(|(g, rest)| {
            let r: Matrix3<f64> = g.fixed_view::<3, 3>(0, 0).into();
            let t: Vector3<f64> = g.fixed_view::<3, 1>(0, 3).into();
            (r, t - r * rest.coords)
        })
        .collect();

    let weights = &model.skinning_weights;
    let vertices = template
        .iter()
        .enumerate()
        .map(|(v, p)| {
            let mut acc = Vector3::zeros();
            for (j, (r, t)) in skinning.iter().enumerate() {
                let w = weights.get(v, j);
                if w != 0.0 {
                    acc += w * (r * p.coords + t);
                }
            }
            Point3::from(acc)
        })
        .collect();
    Ok(Mesh {
        vertices,
        faces: model.faces.clone(),
    })
}

/// `regressor · vertices`.
pub fn regress_joints(
    vertices: &[Point3<f64>],
    regressor: &DenseMatrix,
) -> Result<Vec<Point3<f64>>, ModelError> {
    if regressor.cols != vertices.len() {
        return Err(ModelError::Dimension(format!(
            "regressor has {} columns for {} vertices",
            regressor.cols,
            vertices.len()
        )));
    }
    Ok((0..regressor.rows)
        .map(|k| {
            let mut acc = Vector3::zeros();
            for (w, p) in regressor.row(k).iter().zip(vertices) {
                if *w != 0.0 {
                    acc += *w * p.coords;
                }
            }
            Point3::from(acc)
        })
        .collect())
}

/// Per-vertex color from the template position normalized by its bounding
/// box. Independent of any pose.
pub fn canonical_semantic_colors(model: &BodyModelData) -> Result<Vec<[f64; 3]>, ModelError> {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in &model.template_vertices {
        lo = lo.inf(&p.coords);
        hi = hi.sup(&p.coords);
    }
    let extent = hi - lo;
    if let Some(axis) = (0..3).find(|&a| !(extent[a] > 0.0)) {
        return Err(ModelError::invariant(
            "template_vertices",
            format!("bounding box has zero extent on axis {axis}"),
        ));
    }
    Ok(model
        .template_vertices
        .iter()
        .map(|p| {
            let mut c = [0.0; 3];
            for a in 0..3 {
                c[a] = ((p[a] - lo[a]) / extent[a]).clamp(0.0, 1.0);
            }
            c
        })
        .collect())
}

/// Rotation about `axis` (unit) by `angle` radians.
pub fn axis_angle(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
    nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).into_inner()
}
