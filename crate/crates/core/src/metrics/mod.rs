//! Pose error metrics and the degraded-pose statistics built on them.
//!
//! Joint positions are meters on input; every reported error is millimeters.

mod evaluate;

pub use evaluate::{
    evaluate_manifest, AttributeSummary, CategorySummary, EvalOutput, EvalRecord, JointMapping,
    PredictionKey, PredictionRecord, PredictionStore,
};

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("need at least {needed} joints, got {got}")]
    TooFewJoints { needed: usize, got: usize },
    #[error("joint count mismatch: {0} vs {1}")]
    Mismatch(usize, usize),
    #[error("degenerate configuration: {0}")]
    Degenerate(&'static str),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid evaluation config: {0}")]
    Config(String),
    #[error("missing prediction for {pose_id} / {attribute_id} / {role}")]
    MissingPrediction {
        pose_id: String,
        attribute_id: String,
        role: String,
    },
    #[error("no mapping from joint format {got:?} to {expected:?}")]
    JointFormat { expected: String, got: String },
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    /// Rotation, translation and uniform scale.
    Similarity,
    /// Rotation and translation only.
    Rigid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub tau_mm: f64,
    pub alignment: Alignment,
    /// Ground-truth joint format name.
    pub gt_format: String,
    /// Index of the pelvis in the ground-truth format.
    pub root_joint: usize,
    pub joint_mappings: Vec<JointMapping>,
    /// Step of the cumulative PDP series.
    pub stability_step: usize,
    /// Evaluate each category on the poses valid for all its attributes.
    pub intersect: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tau_mm: 50.0,
            alignment: Alignment::Similarity,
            gt_format: "smpl24".into(),
            root_joint: 0,
            joint_mappings: Vec::new(),
            stability_step: 50,
            intersect: true,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if !(self.tau_mm >= 0.0) {
            return Err(MetricsError::Config(format!(
                "tau_mm must be >= 0, got {}",
                self.tau_mm
            )));
        }
        if self.stability_step == 0 {
            return Err(MetricsError::Config("stability_step must be >= 1".into()));
        }
        Ok(())
    }
}

/// `x -> s * R * x + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.scale * (self.rotation * p.coords) + self.translation)
    }
}

fn centroid(points: &[Point3<f64>]) -> Vector3<f64> {
    points.iter().map(|p| p.coords).sum::<Vector3<f64>>() / points.len() as f64
}

/// Least-squares transform taking `source` onto `target`, with the
/// determinant correction that keeps the rotation proper.
pub fn procrustes_transform(
    source: &[Point3<f64>],
    target: &[Point3<f64>],
    mode: Alignment,
) -> Result<SimilarityTransform, MetricsError> {
    if source.len() != target.len() {
        return Err(MetricsError::Mismatch(source.len(), target.len()));
    }
    if source.len() < 3 {
        return Err(MetricsError::TooFewJoints {
            needed: 3,
            got: source.len(),
        });
    }
    let n = source.len() as f64;
    let (mu_s, mu_t) = (centroid(source), centroid(target));
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    let mut var_t = 0.0;
    for (s, t) in source.iter().zip(target) {
        let (ds, dt) = (s.coords - mu_s, t.coords - mu_t);
        cov += dt * ds.transpose();
        var_s += ds.norm_squared();
        var_t += dt.norm_squared();
    }
    cov /= n;
    var_s /= n;
    var_t /= n;
    if var_s < 1e-18 {
        return Err(MetricsError::Degenerate("prediction joints coincide"));
    }
    if var_t < 1e-18 {
        return Err(MetricsError::Degenerate("reference joints coincide"));
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut d = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * v_t;
    let scale = match mode {
        Alignment::Similarity => {
            let sv = svd.singular_values;
            (sv[0] * d[(0, 0)] + sv[1] * d[(1, 1)] + sv[2] * d[(2, 2)]) / var_s
        }
        Alignment::Rigid => 1.0,
    };
    let translation = mu_t - scale * (rotation * mu_s);
    Ok(SimilarityTransform {
        scale,
        rotation,
        translation,
    })
}

pub fn procrustes_align(
    p_hat: &[Point3<f64>],
    p: &[Point3<f64>],
    mode: Alignment,
) -> Result<Vec<Point3<f64>>, MetricsError> {
    let t = procrustes_transform(p_hat, p, mode)?;
    Ok(p_hat.iter().map(|x| t.apply(x)).collect())
}

/// Per-joint Euclidean distances in millimeters.
pub fn joint_errors_mm(a: &[Point3<f64>], b: &[Point3<f64>]) -> Result<Vec<f64>, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::Mismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricsError::Empty("joint list"));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).norm() * 1000.0).collect())
}

fn mean_of(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean joint error after subtracting the root joint from both poses.
pub fn mpjpe(p_hat: &[Point3<f64>], p: &[Point3<f64>], root: usize) -> Result<f64, MetricsError> {
    if root >= p.len() || root >= p_hat.len() {
        return Err(MetricsError::TooFewJoints {
            needed: root + 1,
            got: p.len().min(p_hat.len()),
        });
    }
    let shift = p[root] - p_hat[root];
    let moved: Vec<Point3<f64>> = p_hat.iter().map(|x| x + shift).collect();
    Ok(mean_of(&joint_errors_mm(&moved, p)?))
}

pub fn pa_mpjpe(p_hat: &[Point3<f64>], p: &[Point3<f64>], mode: Alignment) -> Result<f64, MetricsError> {
    let aligned = procrustes_align(p_hat, p, mode)?;
    Ok(mean_of(&joint_errors_mm(&aligned, p)?))
}

pub fn max_je(aligned: &[Point3<f64>], p: &[Point3<f64>]) -> Result<f64, MetricsError> {
    Ok(joint_errors_mm(aligned, p)?
        .into_iter()
        .fold(0.0, f64::max))
}

/// A pose is degraded when the attribute error exceeds the base error by
/// more than `tau` (strictly).
pub fn degraded(maxje_att: f64, maxje_base: f64, tau: f64) -> bool {
    maxje_att - maxje_base > tau
}

pub fn pdp(flags: &[bool]) -> Result<f64, MetricsError> {
    if flags.is_empty() {
        return Err(MetricsError::Empty("degradation flags"));
    }
    Ok(100.0 * flags.iter().filter(|f| **f).count() as f64 / flags.len() as f64)
}

pub fn category_pdp(attribute_pdps: &[f64]) -> Result<f64, MetricsError> {
    if attribute_pdps.is_empty() {
        return Err(MetricsError::Empty("attribute PDPs"));
    }
    Ok(mean_of(attribute_pdps))
}

pub fn overall_pdp(category_pdps: &[f64]) -> Result<f64, MetricsError> {
    if category_pdps.is_empty() {
        return Err(MetricsError::Empty("category PDPs"));
    }
    Ok(mean_of(category_pdps))
}

/// Mean synthetic error minus mean real error.
pub fn pose_gap(real_errors: &[f64], synth_errors: &[f64]) -> Result<f64, MetricsError> {
    if real_errors.is_empty() || synth_errors.is_empty() {
        return Err(MetricsError::Empty("pose gap error lists"));
    }
    Ok(mean_of(synth_errors) - mean_of(real_errors))
}

/// PDP over the first `N` flags for `N = step, 2 step, ...`, ending with
/// the full count even when it is not a multiple of `step`.
pub fn stability_curve(flags: &[bool], step: usize) -> Result<Vec<(usize, f64)>, MetricsError> {
    if step == 0 {
        return Err(MetricsError::Config("step must be >= 1".into()));
    }
    let mut out = Vec::new();
    let mut count = 0usize;
    for (i, f) in flags.iter().enumerate() {
        count += *f as usize;
        let n = i + 1;
        if n % step == 0 || n == flags.len() {
            out.push((n, 100.0 * count as f64 / n as f64));
        }
    }
    Ok(out)
}

/// Rounds half away from zero at `decimals` places, as printed tables do.
pub fn round_to(x: f64, decimals: i32) -> f64 {
    let f = 10f64.powi(decimals);
    (x * f).round() / f
}
