//! Deterministic in-process stand-ins for the four services.
//!
//! Each mock is a pure function of its request, its configuration and the
//! bytes of any file the request points at.

use super::wire::*;
use super::{Estimator, Generator, KeypointDetector, ServiceError, ServiceSet, VqaModel};
use crate::cond_render::image_io::{decode_rgb_png, encode_rgb_png, write_file};
use crate::cond_render::RgbImage;
use crate::hashing::{digest_parts, hash_u64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::sync::Arc;

fn mock_err(msg: impl Into<String>) -> ServiceError {
    ServiceError::Mock(msg.into())
}

fn read_bytes(path: &str) -> Result<Vec<u8>, ServiceError> {
    std::fs::read(path).map_err(|e| mock_err(format!("{path}: {e}")))
}

fn pose_id(hints: &Hints) -> Result<&str, ServiceError> {
    hints
        .pose_id
        .as_deref()
        .ok_or_else(|| mock_err("request carries no pose_id hint"))
}

// ---- generator ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorMockConfig {
    /// Maximum per-channel jitter added to background pixels.
    pub jitter: u8,
}

impl Default for GeneratorMockConfig {
    fn default() -> Self {
        Self { jitter: 6 }
    }
}

/// Paints the semantic conditioning image over a flat background whose
/// color is hashed from the seed and prompt.
#[derive(Debug, Clone, Default)]
pub struct MockGenerator {
    pub config: GeneratorMockConfig,
}

impl MockGenerator {
    pub fn render(&self, req: &GenerateRequest) -> Result<RgbImage, ServiceError> {
        let [w, h] = req.image_size;
        let body = match &req.conditioning.semantic {
            ConditionRef::File { path } => {
                let img = decode_rgb_png(&read_bytes(path)?).map_err(|e| mock_err(e.to_string()))?;
                if (img.width, img.height) != (w, h) {
                    return Err(mock_err(format!(
                        "semantic image is {}x{}, request says {w}x{h}",
                        img.width, img.height
                    )));
                }
                Some(img)
            }
            ConditionRef::Zero => None,
        };
        let seed = req.noise_seed.to_le_bytes();
        let key = digest_parts(&[&seed, req.prompt.as_bytes()]);
        let background = [key[0], key[1], key[2]];
        let mut rng = ChaCha8Rng::from_seed(key);
        let j = self.config.jitter as i16;
        let mut out = RgbImage::black(w, h);
        for i in 0..(w * h) as usize {
            let px = &mut out.data[i * 3..i * 3 + 3];
            let noise: [i16; 3] = std::array::from_fn(|_| rng.gen_range(-j..=j));
            if let Some(b) = &body {
                let s = &b.data[i * 3..i * 3 + 3];
                if s != [0, 0, 0] {
                    px.copy_from_slice(s);
                    continue;
                }
            }
            for c in 0..3 {
                px[c] = (background[c] as i16 + noise[c]).clamp(0, 255) as u8;
            }
        }
        Ok(out)
    }
}

impl Generator for MockGenerator {
    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, ServiceError> {
        let img = self.render(req)?;
        let png = encode_rgb_png(&img).map_err(|e| mock_err(e.to_string()))?;
        write_file(Path::new(&req.output_path), &png).map_err(|e| mock_err(e.to_string()))?;
        Ok(GenerateResponse {
            protocol_version: PROTOCOL_VERSION,
            image_path: req.output_path.clone(),
        })
    }
}

// ---- estimator ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorModel {
    pub displacement_mm: f64,
    /// Index of the displaced joint in the oracle joint array.
    pub joint: usize,
    /// Unit direction of the displacement, camera frame.
    pub direction: [f64; 3],
    /// Fraction of pose ids that are degraded.
    pub fraction: f64,
    pub seed: u64,
    /// Which image of a pair receives the displacement.
    pub role: Role,
    /// Restrict to these attribute ids; empty means all.
    pub attributes: Vec<String>,
}

impl Default for ErrorModel {
    fn default() -> Self {
        Self {
            displacement_mm: 80.0,
            joint: 20,
            direction: [1.0, 0.0, 0.0],
            fraction: 0.3,
            seed: 0,
            role: Role::Attribute,
            attributes: Vec::new(),
        }
    }
}

/// The first `floor(fraction * n)` ids after ranking by a seeded hash.
pub fn degraded_ids<'a>(
    ids: impl IntoIterator<Item = &'a str>,
    fraction: f64,
    seed: u64,
) -> BTreeSet<String> {
    let mut ranked: Vec<(u64, &str)> = ids
        .into_iter()
        .map(|id| (hash_u64(&[b"degrade", &seed.to_le_bytes(), id.as_bytes()]), id))
        .collect();
    ranked.sort();
    ranked.dedup_by(|a, b| a.1 == b.1);
    let take = ((fraction.clamp(0.0, 1.0) * ranked.len() as f64) + 1e-9).floor() as usize;
    ranked
        .into_iter()
        .take(take)
        .map(|(_, id)| id.to_string())
        .collect()
}

/// Returns the oracle joints of the hinted pose, displaced per the error
/// model on the selected pose ids and role.
pub struct MockEstimator {
    oracle: HashMap<String, Vec<[f64; 3]>>,
    joint_format: String,
    error_model: Option<ErrorModel>,
    degraded: BTreeSet<String>,
}

impl MockEstimator {
    pub fn new(
        oracle: HashMap<String, Vec<[f64; 3]>>,
        joint_format: impl Into<String>,
        error_model: Option<ErrorModel>,
    ) -> Self {
        let degraded = match &error_model {
            Some(m) => degraded_ids(oracle.keys().map(String::as_str), m.fraction, m.seed),
            None => BTreeSet::new(),
        };
        Self {
            oracle,
            joint_format: joint_format.into(),
            error_model,
            degraded,
        }
    }

    pub fn degraded(&self) -> &BTreeSet<String> {
        &self.degraded
    }
}

impl Estimator for MockEstimator {
    fn estimate(&self, req: &EstimateRequest) -> Result<EstimateResponse, ServiceError> {
        let id = pose_id(&req.hints)?;
        let mut joints = self
            .oracle
            .get(id)
            .cloned()
            .ok_or_else(|| mock_err(format!("no oracle joints for {id}")))?;
        if let Some(m) = &self.error_model {
            let attribute_ok = m.attributes.is_empty()
                || req
                    .hints
                    .attribute_id
                    .as_ref()
                    .is_some_and(|a| m.attributes.contains(a));
            if req.hints.role == Some(m.role) && attribute_ok && self.degraded.contains(id) {
                let j = joints
                    .get_mut(m.joint)
                    .ok_or_else(|| mock_err(format!("joint {} out of range", m.joint)))?;
                let n = m.direction.iter().map(|d| d * d).sum::<f64>().sqrt();
                for c in 0..3 {
                    j[c] += m.direction[c] / n * m.displacement_mm / 1000.0;
                }
            }
        }
        Ok(EstimateResponse {
            protocol_version: PROTOCOL_VERSION,
            joints3d: joints,
            joint_format: self.joint_format.clone(),
            confidence: Some(1.0),
        })
    }
}

// ---- keypoint detector ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointOffset {
    pub joint: usize,
    pub dx: f64,
    pub dy: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeypointMockConfig {
    /// Bound of the uniform per-coordinate jitter, pixels.
    pub noise_px: f64,
    pub joint_offsets: Vec<JointOffset>,
    /// Also report a phantom second person.
    pub extra_person: bool,
    /// Apply offsets and the phantom only to images of this role.
    pub only_role: Option<Role>,
    pub seed: u64,
}

pub struct MockKeypointer {
    /// Per pose id: projected keypoints and their in-frame flags.
    oracle: HashMap<String, (Vec<[f64; 2]>, Vec<bool>)>,
    skeleton: String,
    config: KeypointMockConfig,
}

impl MockKeypointer {
    pub fn new(
        oracle: HashMap<String, (Vec<[f64; 2]>, Vec<bool>)>,
        skeleton: impl Into<String>,
        config: KeypointMockConfig,
    ) -> Self {
        Self {
            oracle,
            skeleton: skeleton.into(),
            config,
        }
    }
}

impl KeypointDetector for MockKeypointer {
    fn detect(&self, req: &KeypointRequest) -> Result<Keypoint2DResponse, ServiceError> {
        if req.skeleton != self.skeleton {
            return Err(mock_err(format!(
                "skeleton {} requested, mock serves {}",
                req.skeleton, self.skeleton
            )));
        }
        let id = pose_id(&req.hints)?;
        let (points, visible) = self
            .oracle
            .get(id)
            .ok_or_else(|| mock_err(format!("no oracle keypoints for {id}")))?;
        let image = read_bytes(&req.image_path)?;
        let key = digest_parts(&[b"keypoints", &self.config.seed.to_le_bytes(), &image]);
        let mut rng = ChaCha8Rng::from_seed(key);
        let applies = self.config.only_role.is_none() || self.config.only_role == req.hints.role;
        let noise = self.config.noise_px.abs();
        let mut kp: Vec<[f64; 2]> = points
            .iter()
            .map(|p| {
                let (dx, dy) = if noise > 0.0 {
                    (rng.gen_range(-noise..=noise), rng.gen_range(-noise..=noise))
                } else {
                    (0.0, 0.0)
                };
                [p[0] + dx, p[1] + dy]
            })
            .collect();
        if applies {
            for off in &self.config.joint_offsets {
                if let Some(p) = kp.get_mut(off.joint) {
                    p[0] += off.dx;
                    p[1] += off.dy;
                }
            }
        }
        let confidence: Vec<f64> = visible.iter().map(|v| if *v { 1.0 } else { 0.0 }).collect();
        let mut persons = vec![PersonKeypoints {
            keypoints: kp.clone(),
            confidence: confidence.clone(),
        }];
        if applies && self.config.extra_person {
            persons.push(PersonKeypoints {
                keypoints: kp.iter().map(|p| [p[0] + 100.0, p[1]]).collect(),
                confidence,
            });
        }
        Ok(Keypoint2DResponse {
            protocol_version: PROTOCOL_VERSION,
            skeleton: self.skeleton.clone(),
            persons,
        })
    }
}

// ---- VQA ----

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VqaMockConfig {
    /// Answer "no" to questions containing this substring.
    pub fail_on: Option<String>,
    /// From this attempt on, answer "yes" to everything.
    pub pass_from_attempt: Option<u32>,
}

#[derive(Debug, Clone, Default)]
pub struct MockVqa {
    pub config: VqaMockConfig,
}

impl VqaModel for MockVqa {
    fn answer(&self, req: &VqaRequest) -> Result<VqaResponse, ServiceError> {
        let recovered = matches!(
            (self.config.pass_from_attempt, req.hints.attempt),
            (Some(from), Some(a)) if a >= from
        );
        let answers = req
            .questions
            .iter()
            .map(|q| match &self.config.fail_on {
                Some(s) if !recovered && q.contains(s.as_str()) => "no".to_string(),
                _ => "yes".to_string(),
            })
            .collect();
        Ok(VqaResponse {
            protocol_version: PROTOCOL_VERSION,
            answers,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockConfig {
    pub generator: GeneratorMockConfig,
    pub estimator: Option<ErrorModel>,
    pub keypoints: KeypointMockConfig,
    pub vqa: VqaMockConfig,
}

/// Oracle data the estimator and keypoint mocks answer from.
#[derive(Debug, Clone, Default)]
pub struct Oracle {
    pub joints3d: HashMap<String, Vec<[f64; 3]>>,
    pub keypoints2d: HashMap<String, (Vec<[f64; 2]>, Vec<bool>)>,
}

impl ServiceSet {
    pub fn mock(
        config: &MockConfig,
        oracle: Oracle,
        joint_format: &str,
        skeleton: &str,
    ) -> Self {
        ServiceSet {
            generator: Arc::new(MockGenerator {
                config: config.generator.clone(),
            }),
            estimator: Arc::new(MockEstimator::new(
                oracle.joints3d,
                joint_format,
                config.estimator.clone(),
            )),
            keypoints: Arc::new(MockKeypointer::new(
                oracle.keypoints2d,
                skeleton,
                config.keypoints.clone(),
            )),
            vqa: Arc::new(MockVqa {
                config: config.vqa.clone(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cond_render::image_io::{encode_rgb_png, read_rgb_png};
    use crate::hashing::sha256_hex;

    fn semantic_fixture(dir: &Path) -> String {
        let mut img = RgbImage::black(16, 16);
        for y in 4..12 {
            for x in 6..10 {
                img.put(x, y, [10, 200, 30]);
            }
        }
        let path = dir.join("semantic.png");
        std::fs::write(&path, encode_rgb_png(&img).unwrap()).unwrap();
        path.to_string_lossy().into_owned()
    }

    fn gen_request(dir: &Path, seed: u64, prompt: &str, out: &str) -> GenerateRequest {
        GenerateRequest {
            protocol_version: PROTOCOL_VERSION,
            prompt: prompt.into(),
            negative_prompt: String::new(),
            noise_seed: seed,
            conditioning: Conditioning {
                depth: ConditionRef::Zero,
                semantic: ConditionRef::File {
                    path: semantic_fixture(dir),
                },
                skeleton: ConditionRef::Zero,
            },
            image_size: [16, 16],
            output_path: dir.join(out).to_string_lossy().into_owned(),
            hints: Hints::default(),
        }
    }

    fn file_hash(path: &str) -> String {
        sha256_hex(&std::fs::read(path).unwrap())
    }

    #[test]
    fn generator_determinism_and_sensitivity() {
        let dir = tempfile::tempdir().unwrap();
        let g = MockGenerator::default();
        let a = g.generate(&gen_request(dir.path(), 1, "p", "a.png")).unwrap();
        let b = g.generate(&gen_request(dir.path(), 1, "p", "b.png")).unwrap();
        let c = g.generate(&gen_request(dir.path(), 2, "p", "c.png")).unwrap();
        let d = g.generate(&gen_request(dir.path(), 1, "q", "d.png")).unwrap();
        assert_eq!(file_hash(&a.image_path), file_hash(&b.image_path));
        assert_ne!(file_hash(&a.image_path), file_hash(&c.image_path));
        let ia = read_rgb_png(Path::new(&a.image_path)).unwrap();
        let id = read_rgb_png(Path::new(&d.image_path)).unwrap();
        assert_ne!(ia.pixel(0, 0), id.pixel(0, 0));
        // Body support is the semantic support in both.
        for y in 0..16 {
            for x in 0..16 {
                let body = (6..10).contains(&x) && (4..12).contains(&y);
                assert_eq!(ia.pixel(x, y) == [10, 200, 30], body);
                assert_eq!(id.pixel(x, y) == [10, 200, 30], body);
            }
        }
    }

    fn oracle(n: usize) -> HashMap<String, Vec<[f64; 3]>> {
        (0..n)
            .map(|i| (format!("p{i:04}"), vec![[0.0, 0.0, 3.0], [0.1, 0.2, 3.0], [0.0, 0.5, 3.1]]))
            .collect()
    }

    fn est_req(id: &str, role: Role) -> EstimateRequest {
        EstimateRequest {
            protocol_version: PROTOCOL_VERSION,
            image_path: "unused".into(),
            hints: Hints {
                pose_id: Some(id.into()),
                attribute_id: Some("parka".into()),
                role: Some(role),
                attempt: Some(0),
            },
        }
    }

    #[test]
    fn estimator_without_error_model_is_exact() {
        let o = oracle(3);
        let m = MockEstimator::new(o.clone(), "toy3", None);
        let r = m.estimate(&est_req("p0001", Role::Attribute)).unwrap();
        assert_eq!(r.joints3d, o["p0001"]);
    }

    #[test]
    fn estimator_full_fraction_displaces_every_attribute_image() {
        let o = oracle(20);
        let model = ErrorModel {
            joint: 1,
            fraction: 1.0,
            ..ErrorModel::default()
        };
        let m = MockEstimator::new(o.clone(), "toy3", Some(model));
        for id in o.keys() {
            let att = m.estimate(&est_req(id, Role::Attribute)).unwrap();
            let d = (att.joints3d[1][0] - o[id][1][0]) * 1000.0;
            assert!((d - 80.0).abs() < 1e-9);
            assert_eq!(att.joints3d[0], o[id][0]);
            let base = m.estimate(&est_req(id, Role::Base)).unwrap();
            assert_eq!(base.joints3d, o[id]);
        }
    }

    #[test]
    fn degraded_subset_has_floor_size() {
        let ids: Vec<String> = (0..500).map(|i| format!("p{i:04}")).collect();
        let chosen = degraded_ids(ids.iter().map(String::as_str), 0.3, 7);
        assert_eq!(chosen.len(), 150);
        // Recount by hashing directly.
        let mut ranked: Vec<(u64, &String)> = ids
            .iter()
            .map(|id| (hash_u64(&[b"degrade", &7u64.to_le_bytes(), id.as_bytes()]), id))
            .collect();
        ranked.sort();
        let expected: BTreeSet<String> = ranked[..150].iter().map(|(_, id)| (*id).clone()).collect();
        assert_eq!(chosen, expected);
        assert_eq!(degraded_ids(ids.iter().map(String::as_str), 0.0, 7).len(), 0);
    }

    fn kp_setup(config: KeypointMockConfig) -> (tempfile::TempDir, MockKeypointer, KeypointRequest) {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img.png");
        std::fs::write(&img, encode_rgb_png(&RgbImage::black(4, 4)).unwrap()).unwrap();
        let points: Vec<[f64; 2]> = (0..18).map(|k| [10.0 * k as f64, 5.0]).collect();
        let mut oracle = HashMap::new();
        oracle.insert("p".to_string(), (points, vec![true; 18]));
        let m = MockKeypointer::new(oracle, "openpose18", config);
        let req = KeypointRequest {
            protocol_version: PROTOCOL_VERSION,
            image_path: img.to_string_lossy().into_owned(),
            skeleton: "openpose18".into(),
            hints: Hints {
                pose_id: Some("p".into()),
                ..Hints::default()
            },
        };
        (dir, m, req)
    }

    #[test]
    fn keypointer_modes() {
        let (_d, m, req) = kp_setup(KeypointMockConfig::default());
        let r = m.detect(&req).unwrap();
        assert_eq!(r.persons.len(), 1);
        assert_eq!(r.persons[0].keypoints[3], [30.0, 5.0]);

        let (_d, m, req) = kp_setup(KeypointMockConfig {
            extra_person: true,
            ..Default::default()
        });
        assert_eq!(m.detect(&req).unwrap().persons.len(), 2);

        let (_d, m, req) = kp_setup(KeypointMockConfig {
            joint_offsets: vec![JointOffset {
                joint: 10,
                dx: 60.0,
                dy: 0.0,
            }],
            ..Default::default()
        });
        let r = m.detect(&req).unwrap();
        assert_eq!(r.persons[0].keypoints[10], [160.0, 5.0]);
        assert_eq!(r.persons[0].keypoints[9], [90.0, 5.0]);

        let (_d, m, req) = kp_setup(KeypointMockConfig {
            noise_px: 3.0,
            ..Default::default()
        });
        let a = m.detect(&req).unwrap();
        assert_eq!(a, m.detect(&req).unwrap());
        for (k, p) in a.persons[0].keypoints.iter().enumerate() {
            assert!((p[0] - 10.0 * k as f64).abs() <= 3.0);
            assert!((p[1] - 5.0).abs() <= 3.0);
        }
    }

    #[test]
    fn vqa_mock() {
        let req = |q: Vec<&str>| VqaRequest {
            protocol_version: PROTOCOL_VERSION,
            image_path: "x".into(),
            questions: q.into_iter().map(String::from).collect(),
            hints: Hints::default(),
        };
        let all_yes = MockVqa::default();
        assert_eq!(all_yes.answer(&req(vec!["a?", "b?"])).unwrap().answers, vec!["yes", "yes"]);
        let parka = MockVqa {
            config: VqaMockConfig {
                fail_on: Some("parka".into()),
                pass_from_attempt: None,
            },
        };
        let r = parka
            .answer(&req(vec!["Is the person wearing a parka?", "Is the person young?"]))
            .unwrap();
        assert_eq!(r.answers, vec!["no", "yes"]);
        assert!(parka.answer(&req(vec![])).unwrap().answers.is_empty());
    }
}
