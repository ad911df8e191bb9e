//! Conversion from the public SMPL parameter layout.
//!
//! The input is a JSON export of the SMPL model dictionary using the
//! upstream key names (`v_template`, `f`, `weights`, `kintree_table`,
//! `J_regressor`, optional `shapedirs`) plus an `openpose_regressor`
//! (K x V) for the 2D keypoint skeleton. Regressors may be dense nested
//! arrays or sparse `{"shape": [R, C], "row": [..], "col": [..], "data": [..]}`
//! triplets, which is how `scipy.sparse` matrices export.
//!
//! SMPL is y-up with the body facing +z. The harness frame is y-down with the
//! body facing -z, so every position (and blendshape direction) is rotated by
//! 180 degrees about the x axis.

use super::{BodyModelData, DenseMatrix, ModelError, ShapeBlendshapes};
use nalgebra::Point3;
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum MatrixLayout {
    Dense(Vec<Vec<f64>>),
    Sparse {
        shape: [usize; 2],
        row: Vec<usize>,
        col: Vec<usize>,
        data: Vec<f64>,
    },
}

impl MatrixLayout {
    fn into_dense(self, field: &'static str) -> Result<DenseMatrix, ModelError> {
        match self {
            MatrixLayout::Dense(rows) => {
                let cols = rows.first().map_or(0, Vec::len);
                if rows.iter().any(|r| r.len() != cols) {
                    return Err(ModelError::invariant(field, "ragged rows"));
                }
                let n = rows.len();
                DenseMatrix::from_rows(n, cols, rows.into_iter().flatten().collect())
            }
            MatrixLayout::Sparse {
                shape,
                row,
                col,
                data,
            } => {
                if row.len() != data.len() || col.len() != data.len() {
                    return Err(ModelError::invariant(field, "sparse triplet lengths differ"));
                }
                let mut m = DenseMatrix::zeros(shape[0], shape[1]);
                for ((r, c), v) in row.into_iter().zip(col).zip(data) {
                    if r >= shape[0] || c >= shape[1] {
                        return Err(ModelError::invariant(field, "sparse index out of range"));
                    }
                    m.set(r, c, m.get(r, c) + v);
                }
                Ok(m)
            }
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct SmplJsonLayout {
    v_template: Vec<[f64; 3]>,
    f: Vec<[u32; 3]>,
    weights: Vec<Vec<f64>>,
    kintree_table: [Vec<i64>; 2],
    #[serde(rename = "J_regressor")]
    j_regressor: MatrixLayout,
    openpose_regressor: MatrixLayout,
    #[serde(default)]
    shapedirs: Option<Vec<Vec<Vec<f64>>>>,
}

fn flip(p: [f64; 3]) -> Point3<f64> {
    Point3::new(p[0], -p[1], -p[2])
}

impl SmplJsonLayout {
    pub fn into_model(self) -> Result<BodyModelData, ModelError> {
        let v = self.v_template.len();
        let j = self.kintree_table[1].len();
        if self.kintree_table[0].len() != j {
            return Err(ModelError::invariant("kinematic_tree", "kintree_table rows differ"));
        }
        // kintree_table[1] lists joint ids, kintree_table[0] their parents.
        // The root parent is stored as -1 or as u32::MAX.
        let mut parents = vec![None; j];
        for (&parent, &id) in self.kintree_table[0].iter().zip(&self.kintree_table[1]) {
            let id = usize::try_from(id)
                .ok()
                .filter(|i| *i < j)
                .ok_or_else(|| ModelError::invariant("kinematic_tree", "bad joint id"))?;
            parents[id] = if parent < 0 || parent >= j as i64 {
                None
            } else {
                Some(parent as usize)
            };
        }

        let weights_cols = self.weights.first().map_or(0, Vec::len);
        if self.weights.len() != v || self.weights.iter().any(|r| r.len() != weights_cols) {
            return Err(ModelError::invariant("skinning_weights", "expected V rows of J weights"));
        }
        let skinning_weights =
            DenseMatrix::from_rows(v, weights_cols, self.weights.into_iter().flatten().collect())?;

        let shape_blendshapes = match self.shapedirs {
            None => None,
            Some(dirs) => {
                let b = dirs.first().and_then(|d| d.first()).map_or(0, Vec::len);
                let mut data = Vec::with_capacity(v * 3 * b);
                if dirs.len() != v {
                    return Err(ModelError::invariant("shape_blendshapes", "expected V entries"));
                }
                for per_vertex in dirs {
                    if per_vertex.len() != 3 || per_vertex.iter().any(|c| c.len() != b) {
                        return Err(ModelError::invariant("shape_blendshapes", "expected [V,3,B]"));
                    }
                    for (axis, coeffs) in per_vertex.into_iter().enumerate() {
                        let sign = if axis == 0 { 1.0 } else { -1.0 };
                        data.extend(coeffs.into_iter().map(|c| sign * c));
                    }
                }
                Some(ShapeBlendshapes {
                    num_coeffs: b,
                    data,
                })
            }
        };

        let model = BodyModelData {
            template_vertices: self.v_template.into_iter().map(flip).collect(),
            faces: self.f,
            skinning_weights,
            parents,
            joint_regressor_native: self.j_regressor.into_dense("joint_regressor_native")?,
            joint_regressor_openpose: self.openpose_regressor.into_dense("joint_regressor_openpose")?,
            shape_blendshapes,
        };
        model.validate()?;
        Ok(model)
    }
}

/// Parses a JSON export of the SMPL layout and converts it to the harness frame.
pub fn convert_smpl_json(json: &str) -> Result<BodyModelData, ModelError> {
    let layout: SmplJsonLayout = serde_json::from_str(json)
        .map_err(|e| ModelError::Malformed(format!("SMPL json: {e}")))?;
    layout.into_model()
}
