use super::{
    category_pdp, degraded, max_je, mpjpe, overall_pdp, pa_mpjpe, pdp, procrustes_align,
    stability_curve, EvalConfig, MetricsError,
};
use crate::orchestrator::{intersect_valid, BenchmarkManifest};
use crate::services::Role;
use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;

/// Pairs of (predicted index, ground-truth index) for one predicted format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointMapping {
    pub format: String,
    pub pairs: Vec<[usize; 2]>,
}

/// Estimator output for one image of a pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub pose_id: String,
    pub attribute_id: String,
    pub role: Role,
    /// Workspace-relative path of the image the prediction was made on.
    pub image: String,
    /// Meters, camera frame.
    pub joints3d: Vec<[f64; 3]>,
    pub joint_format: String,
}

pub type PredictionKey = (String, String, Role);

fn role_rank(r: Role) -> u8 {
    match r {
        Role::Base => 0,
        Role::Attribute => 1,
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionStore {
    records: BTreeMap<(String, String, u8), PredictionRecord>,
}

impl PredictionStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, record: PredictionRecord) {
        let key = (
            record.pose_id.clone(),
            record.attribute_id.clone(),
            role_rank(record.role),
        );
        self.records.insert(key, record);
    }

    pub fn get(&self, pose_id: &str, attribute_id: &str, role: Role) -> Option<&PredictionRecord> {
        self.records
            .get(&(pose_id.to_string(), attribute_id.to_string(), role_rank(role)))
    }

    pub fn contains(&self, pose_id: &str, attribute_id: &str, role: Role) -> bool {
        self.get(pose_id, attribute_id, role).is_some()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &PredictionRecord> {
        self.records.values()
    }

    /// Reads JSONL; a truncated final line is dropped.
    pub fn load(path: &Path) -> Result<Self, MetricsError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MetricsError::Other(format!("{}: {e}", path.display())))?;
        let mut store = Self::new();
        let lines: Vec<&str> = text.lines().collect();
        for (i, l) in lines.iter().enumerate() {
            if l.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<PredictionRecord>(l) {
                Ok(r) => store.insert(r),
                Err(_) if i + 1 == lines.len() && !text.ends_with('\n') => {
                    log::warn!("{}: dropping truncated final line", path.display());
                }
                Err(e) => {
                    return Err(MetricsError::Other(format!(
                        "{} line {}: {e}",
                        path.display(),
                        i + 1
                    )))
                }
            }
        }
        Ok(store)
    }

    /// Sorted by (pose_id, attribute_id, role).
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in self.records.values() {
            out.push_str(&serde_json::to_string(r).expect("predictions serialize"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), MetricsError> {
        let err = |e: std::io::Error| MetricsError::Other(format!("{}: {e}", path.display()));
        let tmp = path.with_extension("jsonl.tmp");
        std::fs::write(&tmp, self.to_jsonl()).map_err(err)?;
        std::fs::rename(&tmp, path).map_err(err)
    }

    /// Appends one record to a JSONL file.
    pub fn append(path: &Path, record: &PredictionRecord) -> Result<(), MetricsError> {
        let err = |e: std::io::Error| MetricsError::Other(format!("{}: {e}", path.display()));
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(err)?;
        let mut line = serde_json::to_string(record).expect("predictions serialize");
        line.push('\n');
        f.write_all(line.as_bytes()).map_err(err)
    }
}

/// Per (pose, attribute) result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub pose_id: String,
    pub attribute_id: String,
    pub category: String,
    pub maxje_base_mm: f64,
    pub maxje_att_mm: f64,
    pub mpjpe_base_mm: f64,
    pub mpjpe_att_mm: f64,
    pub pa_mpjpe_base_mm: f64,
    pub pa_mpjpe_att_mm: f64,
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSummary {
    pub category: String,
    pub attribute_id: String,
    pub poses: usize,
    /// Percent; absent when no pose was evaluated.
    pub pdp: Option<f64>,
    /// Cumulative PDP over poses in pose-id order.
    pub stability: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySummary {
    pub category: String,
    pub attributes: Vec<String>,
    /// Poses evaluated for every attribute of the category.
    pub poses: usize,
    pub pdp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub estimator: String,
    pub tau_mm: f64,
    pub records: Vec<EvalRecord>,
    pub attributes: Vec<AttributeSummary>,
    pub categories: Vec<CategorySummary>,
    pub overall_pdp: Option<f64>,
    /// Over the distinct base images evaluated.
    pub base_mpjpe_mm: Option<f64>,
    pub base_pa_mpjpe_mm: Option<f64>,
}

fn to_points(joints: &[[f64; 3]]) -> Vec<Point3<f64>> {
    joints.iter().map(|j| Point3::new(j[0], j[1], j[2])).collect()
}

/// Predicted and ground-truth joints restricted to the shared set, plus the
/// position of the ground-truth root within it.
fn correspond(
    pred: &PredictionRecord,
    gt: &[Point3<f64>],
    config: &EvalConfig,
) -> Result<(Vec<Point3<f64>>, Vec<Point3<f64>>, usize), MetricsError> {
    let p = to_points(&pred.joints3d);
    if pred.joint_format == config.gt_format {
        if p.len() != gt.len() {
            return Err(MetricsError::Mismatch(p.len(), gt.len()));
        }
        return Ok((p, gt.to_vec(), config.root_joint));
    }
    let mapping = config
        .joint_mappings
        .iter()
        .find(|m| m.format == pred.joint_format)
        .ok_or_else(|| MetricsError::JointFormat {
            expected: config.gt_format.clone(),
            got: pred.joint_format.clone(),
        })?;
    let mut a = Vec::with_capacity(mapping.pairs.len());
    let mut b = Vec::with_capacity(mapping.pairs.len());
    let mut root = None;
    for &[i, j] in &mapping.pairs {
        if i >= p.len() || j >= gt.len() {
            return Err(MetricsError::Config(format!(
                "mapping for {} references joint pair ({i}, {j}) out of range",
                mapping.format
            )));
        }
        if j == config.root_joint {
            root = Some(a.len());
        }
        a.push(p[i]);
        b.push(gt[j]);
    }
    let root = root.ok_or_else(|| {
        MetricsError::Config(format!(
            "mapping for {} does not include the root joint {}",
            mapping.format, config.root_joint
        ))
    })?;
    Ok((a, b, root))
}

struct Score {
    maxje: f64,
    mpjpe: f64,
    pa_mpjpe: f64,
}

fn score(pred: &PredictionRecord, gt: &[Point3<f64>], config: &EvalConfig) -> Result<Score, MetricsError> {
    let (p_hat, p, root) = correspond(pred, gt, config)?;
    let aligned = procrustes_align(&p_hat, &p, config.alignment)?;
    Ok(Score {
        maxje: max_je(&aligned, &p)?,
        mpjpe: mpjpe(&p_hat, &p, root)?,
        pa_mpjpe: pa_mpjpe(&p_hat, &p, config.alignment)?,
    })
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Categories in manifest order with their attributes: finalized valid sets
/// first, then any remaining attributes by id.
fn category_plan(manifest: &BenchmarkManifest) -> Vec<(String, Vec<String>)> {
    let mut order: Vec<(String, String)> = manifest
        .valid_sets
        .iter()
        .map(|v| (v.category.clone(), v.attribute_id.clone()))
        .collect();
    let mut rest: BTreeMap<&str, &str> = BTreeMap::new();
    for c in &manifest.cells {
        if !order.iter().any(|(_, a)| *a == c.attribute_id) {
            rest.insert(&c.attribute_id, &c.category);
        }
    }
    order.extend(rest.into_iter().map(|(a, c)| (c.to_string(), a.to_string())));
    let mut plan: Vec<(String, Vec<String>)> = Vec::new();
    for (cat, attr) in order {
        match plan.iter_mut().find(|(c, _)| *c == cat) {
            Some((_, attrs)) => attrs.push(attr),
            None => plan.push((cat, vec![attr])),
        }
    }
    plan
}

/// Scores every evaluated pair of the manifest. Each category is restricted
/// to the poses valid for all of its attributes unless the config turns
/// that off; `restrict_to` narrows the pose set further.
pub fn evaluate_manifest(
    manifest: &BenchmarkManifest,
    predictions: &PredictionStore,
    ground_truth: &HashMap<String, Vec<[f64; 3]>>,
    config: &EvalConfig,
    estimator: &str,
    restrict_to: Option<&BTreeSet<String>>,
) -> Result<EvalOutput, MetricsError> {
    config.validate()?;
    let plan = category_plan(manifest);

    // (category, attribute, pose) triples in canonical order.
    let mut jobs: Vec<(String, String, String)> = Vec::new();
    let mut category_sizes: Vec<usize> = Vec::new();
    for (category, attrs) in &plan {
        let ids: Vec<&str> = attrs.iter().map(String::as_str).collect();
        let shared = if config.intersect {
            Some(intersect_valid(manifest, &ids).map_err(|e| MetricsError::Other(e.to_string()))?)
        } else {
            None
        };
        let mut union = BTreeSet::new();
        for a in attrs {
            for pose_id in manifest.valid_pose_ids(a) {
                if shared.as_ref().is_some_and(|s| !s.contains(&pose_id))
                    || restrict_to.is_some_and(|r| !r.contains(&pose_id))
                {
                    continue;
                }
                union.insert(pose_id.clone());
                jobs.push((category.clone(), a.clone(), pose_id));
            }
        }
        category_sizes.push(union.len());
    }

    let evaluated: Vec<(EvalRecord, String)> = jobs
        .par_iter()
        .map(|(category, attribute_id, pose_id)| {
            let missing = |role: Role| MetricsError::MissingPrediction {
                pose_id: pose_id.clone(),
                attribute_id: attribute_id.clone(),
                role: role.as_str().to_string(),
            };
            let pair = manifest.valid_pair(pose_id, attribute_id).ok_or_else(|| {
                MetricsError::Other(format!(
                    "cell {pose_id}/{attribute_id} is valid but its attempt record is missing"
                ))
            })?;
            let gt = ground_truth
                .get(pose_id)
                .map(|j| to_points(j))
                .ok_or_else(|| MetricsError::Other(format!("no ground truth for pose {pose_id}")))?;
            let base = predictions
                .get(pose_id, attribute_id, Role::Base)
                .ok_or_else(|| missing(Role::Base))?;
            let att = predictions
                .get(pose_id, attribute_id, Role::Attribute)
                .ok_or_else(|| missing(Role::Attribute))?;
            let b = score(base, &gt, config)?;
            let a = score(att, &gt, config)?;
            Ok((
                EvalRecord {
                    pose_id: pose_id.clone(),
                    attribute_id: attribute_id.clone(),
                    category: category.clone(),
                    maxje_base_mm: b.maxje,
                    maxje_att_mm: a.maxje,
                    mpjpe_base_mm: b.mpjpe,
                    mpjpe_att_mm: a.mpjpe,
                    pa_mpjpe_base_mm: b.pa_mpjpe,
                    pa_mpjpe_att_mm: a.pa_mpjpe,
                    degraded: degraded(a.maxje, b.maxje, config.tau_mm),
                },
                pair.base_image.clone(),
            ))
        })
        .collect::<Result<_, MetricsError>>()?;

    let mut base_errors: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for (r, image) in &evaluated {
        base_errors.insert(image, (r.mpjpe_base_mm, r.pa_mpjpe_base_mm));
    }
    let base_mpjpe: Vec<f64> = base_errors.values().map(|e| e.0).collect();
    let base_pa: Vec<f64> = base_errors.values().map(|e| e.1).collect();
    let records: Vec<EvalRecord> = evaluated.iter().map(|(r, _)| r.clone()).collect();

    let mut attributes = Vec::new();
    let mut categories = Vec::new();
    for ((category, attrs), poses) in plan.iter().zip(category_sizes) {
        let mut values = Vec::new();
        for a in attrs {
            let flags: Vec<bool> = records
                .iter()
                .filter(|r| r.attribute_id == *a)
                .map(|r| r.degraded)
                .collect();
            if flags.is_empty() {
                log::warn!("attribute {a} has no evaluated poses");
            }
            let value = if flags.is_empty() { None } else { Some(pdp(&flags)?) };
            values.extend(value);
            attributes.push(AttributeSummary {
                category: category.clone(),
                attribute_id: a.clone(),
                poses: flags.len(),
                pdp: value,
                stability: stability_curve(&flags, config.stability_step)?,
            });
        }
        categories.push(CategorySummary {
            category: category.clone(),
            attributes: attrs.clone(),
            poses,
            pdp: if values.is_empty() { None } else { Some(category_pdp(&values)?) },
        });
    }
    let cat_values: Vec<f64> = categories.iter().filter_map(|c| c.pdp).collect();
    Ok(EvalOutput {
        estimator: estimator.to_string(),
        tau_mm: config.tau_mm,
        records,
        attributes,
        categories,
        overall_pdp: if cat_values.is_empty() { None } else { Some(overall_pdp(&cat_values)?) },
        base_mpjpe_mm: mean(&base_mpjpe),
        base_pa_mpjpe_mm: mean(&base_pa),
    })
}
