//! Diverse, label-balanced pose subsets via farthest point sampling in
//! root-aligned joint space.
//!
//! # Corpus file
//!
//! Text, one pose per line, whitespace separated; `#` starts a comment line.
//!
//! ```text
//! pose_id gender num_joints r00 r01 r02 r10 .. r22 (x num_joints) tx ty tz num_shape s0 .. s(num_shape-1)
//! ```
//!
//! Rotations are local joint rotations in row-major order, translation is in
//! meters. Gender is one of `male`, `female`, `neutral`, `unknown`.

use crate::body_model::{regress_joints, skin_mesh, BodyModelData, Gender, ModelError, Pose};
use nalgebra::{Matrix3, Point3, Vector3};
use rayon::prelude::*;
use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("cannot select {k} poses from a corpus of {n}")]
    OutOfRange { k: usize, n: usize },
    #[error("label {label} has {available} poses, {requested} requested")]
    InsufficientLabel {
        label: Gender,
        available: usize,
        requested: usize,
    },
    #[error("corpus line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("duplicate pose_id {0}")]
    DuplicateId(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseCorpus {
    pub poses: Vec<Pose>,
    pub source_tag: String,
}

impl PoseCorpus {
    pub fn validate(&self) -> Result<(), SamplingError> {
        let mut seen = HashSet::new();
        for p in &self.poses {
            if !seen.insert(p.pose_id.as_str()) {
                return Err(SamplingError::DuplicateId(p.pose_id.clone()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn get(&self, pose_id: &str) -> Option<&Pose> {
        self.poses.iter().find(|p| p.pose_id == pose_id)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# stage pose corpus v1: {}", self.source_tag);
        for p in &self.poses {
            let _ = write!(out, "{} {} {}", p.pose_id, p.gender, p.joint_rotations.len());
            for r in &p.joint_rotations {
                for i in 0..3 {
                    for j in 0..3 {
                        let _ = write!(out, " {}", r[(i, j)]);
                    }
                }
            }
            let t = &p.root_translation;
            let _ = write!(out, " {} {} {}", t.x, t.y, t.z);
            let shape = p.shape_coeffs.as_deref().unwrap_or(&[]);
            let _ = write!(out, " {}", shape.len());
            for s in shape {
                let _ = write!(out, " {s}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, SamplingError> {
        let mut source_tag = String::new();
        let mut poses = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let trimmed = line.trim();
            if let Some(comment) = trimmed.strip_prefix('#') {
                if let Some(tag) = comment.trim().strip_prefix("stage pose corpus v1:") {
                    source_tag = tag.trim().to_string();
                }
                continue;
            }
            if trimmed.is_empty() {
                continue;
            }
            poses.push(parse_pose_line(trimmed).map_err(|reason| SamplingError::Parse {
                line: line_no,
                reason,
            })?);
        }
        let corpus = PoseCorpus { poses, source_tag };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SamplingError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SamplingError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_text(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SamplingError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|source| SamplingError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

fn parse_pose_line(line: &str) -> Result<Pose, String> {
    let mut tokens = line.split_whitespace();
    let mut next = |what: &str| tokens.next().ok_or_else(|| format!("missing {what}"));
    let pose_id = next("pose_id")?.to_string();
    let gender: Gender = next("gender")?.parse()?;
    let num_joints: usize = next("num_joints")?
        .parse()
        .map_err(|e| format!("num_joints: {e}"))?;
    let mut float = |what: &str| -> Result<f64, String> {
        next(what)?.parse::<f64>().map_err(|e| format!("{what}: {e}"))
    };
    let mut joint_rotations = Vec::with_capacity(num_joints);
    for _ in 0..num_joints {
        let mut m = Matrix3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                m[(i, j)] = float("rotation entry")?;
            }
        }
        joint_rotations.push(m);
    }
    let root_translation = Vector3::new(
        float("translation")?,
        float("translation")?,
        float("translation")?,
    );
    let num_shape = float("num_shape")? as usize;
    let shape: Vec<f64> = (0..num_shape)
        .map(|_| float("shape coefficient"))
        .collect::<Result<_, _>>()?;
    if tokens.next().is_some() {
        return Err("trailing fields".into());
    }
    let pose = Pose {
        pose_id,
        joint_rotations,
        root_translation,
        shape_coeffs: (!shape.is_empty()).then_some(shape),
        gender,
    };
    pose.validate().map_err(|e| e.to_string())?;
    Ok(pose)
}

/// Root-aligned joints of a pose with root rotation and translation zeroed.
pub type JointFeature = Vec<Point3<f64>>;

pub fn joint_feature(pose: &Pose, model: &BodyModelData) -> Result<JointFeature, SamplingError> {
    let mut canonical = pose.clone();
    if let Some(root) = canonical.joint_rotations.get_mut(model.root()) {
        *root = Matrix3::identity();
    }
    canonical.root_translation = Vector3::zeros();
    let mesh = skin_mesh(model, &canonical)?;
    let joints = regress_joints(&mesh.vertices, &model.joint_regressor_native)?;
    let origin = joints[model.root()].coords;
    Ok(joints.into_iter().map(|j| Point3::from(j.coords - origin)).collect())
}

/// Mean per-joint Euclidean distance between two features.
pub fn feature_distance(a: &[Point3<f64>], b: &[Point3<f64>]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(p, q)| (p - q).norm()).sum::<f64>() / a.len() as f64
}

/// Root-aligned mean joint distance in meters.
pub fn pose_distance(a: &Pose, b: &Pose, model: &BodyModelData) -> Result<f64, SamplingError> {
    if a.joint_rotations.len() != b.joint_rotations.len() {
        return Err(ModelError::Dimension(format!(
            "poses {} and {} have {} and {} joints",
            a.pose_id,
            b.pose_id,
            a.joint_rotations.len(),
            b.joint_rotations.len()
        ))
        .into());
    }
    Ok(feature_distance(
        &joint_feature(a, model)?,
        &joint_feature(b, model)?,
    ))
}

/// Greedy max-min selection over precomputed features, lazily yielding
/// indices into `features`.
pub struct FarthestPointSampler<'a> {
    ids: &'a [&'a str],
    features: &'a [JointFeature],
    min_dist: Vec<f64>,
    selected: Vec<bool>,
    picked: usize,
}

impl<'a> FarthestPointSampler<'a> {
    pub fn new(ids: &'a [&'a str], features: &'a [JointFeature]) -> Self {
        assert_eq!(ids.len(), features.len());
        let n = features.len();
        // Centroid accumulated in pose_id order so it does not depend on input order.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| ids[a].cmp(ids[b]));
        let joints = features.first().map_or(0, Vec::len);
        let mut centroid = vec![Point3::origin(); joints];
        for &i in &order {
            for (c, p) in centroid.iter_mut().zip(&features[i]) {
                c.coords += p.coords;
            }
        }
        for c in &mut centroid {
            c.coords /= n.max(1) as f64;
        }
        let min_dist = features
            .par_iter()
            .map(|f| feature_distance(f, &centroid))
            .collect();
        Self {
            ids,
            features,
            min_dist,
            selected: vec![false; n],
            picked: 0,
        }
    }

    fn best(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for i in 0..self.features.len() {
            if self.selected[i] {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(b) => {
                    let (di, db) = (self.min_dist[i], self.min_dist[b]);
                    if di > db || (di == db && self.ids[i] < self.ids[b]) {
                        Some(i)
                    } else {
                        Some(b)
                    }
                }
            };
        }
        best
    }
}

impl Iterator for FarthestPointSampler<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        let pick = self.best()?;
        self.selected[pick] = true;
        if self.picked == 0 {
            // Distances so far were to the centroid; restart from the first pick.
            self.min_dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        }
        self.picked += 1;
        let chosen = &self.features[pick];
        let features = self.features;
        self.min_dist
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, d)| *d = d.min(feature_distance(&features[i], chosen)));
        Some(pick)
    }
}

pub fn corpus_features(
    corpus: &PoseCorpus,
    model: &BodyModelData,
) -> Result<Vec<JointFeature>, SamplingError> {
    corpus
        .poses
        .par_iter()
        .map(|p| joint_feature(p, model))
        .collect()
}

/// First `k` indices of the farthest point ordering of the corpus.
pub fn farthest_point_sample(
    corpus: &PoseCorpus,
    k: usize,
    model: &BodyModelData,
) -> Result<Vec<usize>, SamplingError> {
    let n = corpus.len();
    if k == 0 || k > n {
        return Err(SamplingError::OutOfRange { k, n });
    }
    let features = corpus_features(corpus, model)?;
    let ids: Vec<&str> = corpus.poses.iter().map(|p| p.pose_id.as_str()).collect();
    Ok(FarthestPointSampler::new(&ids, &features).take(k).collect())
}

/// Takes the first `per_label` poses of each label in farthest point order.
/// The result keeps the overall sampling order.
pub fn balance_by_label(
    corpus: &PoseCorpus,
    labels: &[Gender],
    per_label: usize,
    model: &BodyModelData,
) -> Result<PoseCorpus, SamplingError> {
    let mut counts: BTreeMap<Gender, usize> = labels.iter().map(|l| (*l, 0)).collect();
    for p in &corpus.poses {
        if let Some(c) = counts.get_mut(&p.gender) {
            *c += 1;
        }
    }
    for label in labels {
        let available = counts[label];
        if available < per_label {
            return Err(SamplingError::InsufficientLabel {
                label: *label,
                available,
                requested: per_label,
            });
        }
    }
    let tag = format!("{} balanced {per_label}/label", corpus.source_tag);
    if per_label == 0 || labels.is_empty() {
        return Ok(PoseCorpus {
            poses: vec![],
            source_tag: tag,
        });
    }

    let features = corpus_features(corpus, model)?;
    let ids: Vec<&str> = corpus.poses.iter().map(|p| p.pose_id.as_str()).collect();
    let mut taken: BTreeMap<Gender, usize> = labels.iter().map(|l| (*l, 0)).collect();
    let mut poses = Vec::with_capacity(labels.len() * per_label);
    for idx in FarthestPointSampler::new(&ids, &features) {
        let pose = &corpus.poses[idx];
        if let Some(t) = taken.get_mut(&pose.gender) {
            if *t < per_label {
                *t += 1;
                poses.push(pose.clone());
                if poses.len() == labels.len() * per_label {
                    break;
                }
            }
        }
    }
    Ok(PoseCorpus {
        poses,
        source_tag: tag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body_model::{axis_angle, fixtures};
    use proptest::prelude::*;

    fn line_features(xs: &[f64]) -> Vec<JointFeature> {
        xs.iter().map(|x| vec![Point3::new(*x, 0.0, 0.0)]).collect()
    }

    #[test]
    fn one_dimensional_greedy() {
        let ids = ["a", "b", "c"];
        let f = line_features(&[0.0, 1.0, 10.0]);
        let order: Vec<usize> = FarthestPointSampler::new(&ids, &f).take(2).collect();
        assert_eq!(order, vec![2, 0]);
    }

    #[test]
    fn ties_break_toward_smallest_id() {
        let ids = ["b", "a", "c"];
        // Both ends equally far from the centroid at 0.
        let f = line_features(&[-1.0, 1.0, 0.0]);
        let first = FarthestPointSampler::new(&ids, &f).next().unwrap();
        assert_eq!(ids[first], "a");
    }

    #[test]
    fn greedy_certificate_on_random_points() {
        let corpus = fixtures::toy_corpus(60, 3);
        let model = fixtures::humanoid();
        let features = corpus_features(&corpus, &model).unwrap();
        let ids: Vec<&str> = corpus.poses.iter().map(|p| p.pose_id.as_str()).collect();
        let order: Vec<usize> = FarthestPointSampler::new(&ids, &features).collect();
        assert_eq!(order.len(), 60);
        for i in 1..order.len() {
            let min_to = |cand: usize| {
                order[..i]
                    .iter()
                    .map(|&s| feature_distance(&features[cand], &features[s]))
                    .fold(f64::INFINITY, f64::min)
            };
            let chosen = min_to(order[i]);
            for &other in &order[i + 1..] {
                assert!(chosen >= min_to(other));
            }
        }
    }

    #[test]
    fn k_bounds() {
        let corpus = fixtures::toy_corpus(5, 1);
        let model = fixtures::humanoid();
        assert!(farthest_point_sample(&corpus, 0, &model).is_err());
        assert!(farthest_point_sample(&corpus, 6, &model).is_err());
        let mut all = farthest_point_sample(&corpus, 5, &model).unwrap();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn permutation_invariant_selection() {
        let corpus = fixtures::toy_corpus(30, 11);
        let model = fixtures::humanoid();
        let picks = |c: &PoseCorpus| -> Vec<String> {
            farthest_point_sample(c, 10, &model)
                .unwrap()
                .into_iter()
                .map(|i| c.poses[i].pose_id.clone())
                .collect()
        };
        let mut reversed = corpus.clone();
        reversed.poses.reverse();
        assert_eq!(picks(&corpus), picks(&reversed));
    }

    #[test]
    fn distance_ignores_root_transform() {
        let model = fixtures::humanoid();
        let a = fixtures::toy_corpus(1, 5).poses.remove(0);
        let mut b = a.clone();
        b.root_translation += Vector3::new(1.0, -2.0, 0.5);
        b.joint_rotations[0] = axis_angle(Vector3::y(), 1.0);
        assert!(pose_distance(&a, &b, &model).unwrap() < 1e-12);
        assert_eq!(pose_distance(&a, &a, &model).unwrap(), 0.0);
    }

    #[test]
    fn toy_chain_distance_by_hand() {
        // Toy bar: child joint regresses to the centroid of all 8 vertices.
        // Rotating the child by 90 degrees about z moves the x=2 cap to
        // (1, 1, .) so the child joint moves from (1,0,0) to (0.5, 0.5, 0).
        let model = fixtures::toy_two_bone();
        let a = Pose::identity("a", 2);
        let mut b = Pose::identity("b", 2);
        b.joint_rotations[1] = axis_angle(Vector3::z(), std::f64::consts::FRAC_PI_2);
        let d = pose_distance(&a, &b, &model).unwrap();
        let expected = (0.5f64.powi(2) + 0.5f64.powi(2)).sqrt() / 2.0;
        assert!((d - expected).abs() < 1e-12, "{d} vs {expected}");
    }

    #[test]
    fn balance_counts_and_errors() {
        let model = fixtures::humanoid();
        let corpus = fixtures::toy_corpus(40, 2);
        let males = corpus.poses.iter().filter(|p| p.gender == Gender::Male).count();
        let per = males.min(40 - males).min(8);
        let out = balance_by_label(&corpus, &[Gender::Male, Gender::Female], per, &model).unwrap();
        assert_eq!(out.len(), 2 * per);
        assert_eq!(
            out.poses.iter().filter(|p| p.gender == Gender::Male).count(),
            per
        );
        let empty = balance_by_label(&corpus, &[Gender::Male, Gender::Female], 0, &model).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn insufficient_label_is_named() {
        let model = fixtures::humanoid();
        let mut corpus = fixtures::toy_corpus(7, 4);
        for (i, p) in corpus.poses.iter_mut().enumerate() {
            p.gender = if i < 5 { Gender::Male } else { Gender::Female };
        }
        let err = balance_by_label(&corpus, &[Gender::Male, Gender::Female], 3, &model).unwrap_err();
        assert!(matches!(
            err,
            SamplingError::InsufficientLabel {
                label: Gender::Female,
                available: 2,
                ..
            }
        ));
    }

    #[test]
    fn corpus_text_round_trip() {
        let corpus = fixtures::toy_corpus(5, 9);
        let back = PoseCorpus::from_text(&corpus.to_text()).unwrap();
        assert_eq!(back, corpus);
    }

    #[test]
    fn corpus_parse_errors_carry_line() {
        let err = PoseCorpus::from_text("# header\np1 male 1 1 0 0 0 1 0 0 0\n").unwrap_err();
        assert!(matches!(err, SamplingError::Parse { line: 2, .. }));
        let dup = "p male 1 1 0 0 0 1 0 0 0 1 0 0 0 0\np male 1 1 0 0 0 1 0 0 0 1 0 0 0 0\n";
        assert!(matches!(
            PoseCorpus::from_text(dup),
            Err(SamplingError::DuplicateId(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn distance_is_pseudometric(seed in 0u64..1000) {
            let model = fixtures::humanoid();
            let c = fixtures::toy_corpus(3, seed);
            let d = |i: usize, j: usize| pose_distance(&c.poses[i], &c.poses[j], &model).unwrap();
            prop_assert!((d(0, 1) - d(1, 0)).abs() < 1e-12);
            prop_assert!(d(0, 2) <= d(0, 1) + d(1, 2) + 1e-9);
            prop_assert_eq!(d(1, 1), 0.0);
        }
    }
}
