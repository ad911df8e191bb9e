//! Quality control of generated images: 2D keypoint alignment against the
//! projected ground truth, then attribute presence via VQA.

use crate::cond_render::SkeletonFormat;
use crate::prompt_catalog::{vqa_questions_for, PromptSlots, Slot};
use crate::services::{
    Hints, Keypoint2DResponse, KeypointRequest, ServiceError, ServiceSet, VqaRequest, VqaResponse,
    PROTOCOL_VERSION,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum FilterError {
    #[error("detector answered in {got}, expected {expected}")]
    SkeletonMismatch { expected: String, got: String },
    #[error("person {person} has {got} keypoints, skeleton has {expected}")]
    KeypointCount {
        person: usize,
        expected: usize,
        got: usize,
    },
    #[error("{answers} answers for {questions} questions")]
    AnswerCount { questions: usize, answers: usize },
    #[error("unknown joint {0:?} in filter config")]
    UnknownJoint(String),
    #[error(transparent)]
    Service(#[from] ServiceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VqaScope {
    /// One question per prompt slot.
    AllSlots,
    /// Only the slot the attribute changes.
    AttributeSlot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub threshold_px: f64,
    pub selected_joints: Vec<String>,
    pub keypoints: bool,
    pub vqa: bool,
    pub vqa_scope: VqaScope,
}

pub const DEFAULT_SELECTED_JOINTS: [&str; 10] = [
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_knee",
    "right_ankle",
    "left_knee",
    "left_ankle",
];

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            threshold_px: 50.0,
            selected_joints: DEFAULT_SELECTED_JOINTS.iter().map(|s| s.to_string()).collect(),
            keypoints: true,
            vqa: true,
            vqa_scope: VqaScope::AllSlots,
        }
    }
}

impl FilterConfig {
    pub fn selected_indices(&self, format: SkeletonFormat) -> Result<Vec<usize>, FilterError> {
        self.selected_joints
            .iter()
            .map(|n| format.joint_index(n).ok_or_else(|| FilterError::UnknownJoint(n.clone())))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointError {
    pub joint: String,
    /// `None` when the detector missed the joint.
    pub error_px: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub pass: bool,
    pub keypoint_errors: Vec<JointError>,
    pub persons_detected: usize,
    pub vqa_checked: bool,
    pub vqa_failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeypointCheck {
    pub pass: bool,
    pub persons_detected: usize,
    pub errors: Vec<JointError>,
}

/// Fails on anything but exactly one person, on a missed selected joint
/// that the ground truth shows, or on any selected error above the
/// threshold (strictly).
pub fn keypoint_alignment_filter(
    detected: &Keypoint2DResponse,
    projected: &[[f64; 2]],
    visible: &[bool],
    format: SkeletonFormat,
    config: &FilterConfig,
) -> Result<KeypointCheck, FilterError> {
    if detected.skeleton != format.name() {
        return Err(FilterError::SkeletonMismatch {
            expected: format.name().into(),
            got: detected.skeleton.clone(),
        });
    }
    let k = format.num_joints();
    for (i, p) in detected.persons.iter().enumerate() {
        if p.keypoints.len() != k || p.confidence.len() != k {
            return Err(FilterError::KeypointCount {
                person: i,
                expected: k,
                got: p.keypoints.len().min(p.confidence.len()),
            });
        }
    }
    let persons_detected = detected.persons.len();
    if persons_detected != 1 {
        return Ok(KeypointCheck {
            pass: false,
            persons_detected,
            errors: Vec::new(),
        });
    }
    let person = &detected.persons[0];
    let mut pass = true;
    let mut errors = Vec::new();
    for j in config.selected_indices(format)? {
        if !visible[j] {
            continue;
        }
        let error_px = (person.confidence[j] > 0.0).then(|| {
            let d = [
                person.keypoints[j][0] - projected[j][0],
                person.keypoints[j][1] - projected[j][1],
            ];
            d[0].hypot(d[1])
        });
        match error_px {
            Some(e) if e <= config.threshold_px => {}
            _ => pass = false,
        }
        errors.push(JointError {
            joint: format.joint_names()[j].to_string(),
            error_px,
        });
    }
    Ok(KeypointCheck {
        pass,
        persons_detected,
        errors,
    })
}

/// First whitespace token, lowercased, trailing punctuation dropped.
pub fn normalize_answer(answer: &str) -> String {
    answer
        .split_whitespace()
        .next()
        .unwrap_or("")
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

/// Returns the questions whose answer disagrees with the expectation.
pub fn vqa_filter(
    response: &VqaResponse,
    expected: &[(String, String)],
) -> Result<Vec<String>, FilterError> {
    if response.answers.len() != expected.len() {
        return Err(FilterError::AnswerCount {
            questions: expected.len(),
            answers: response.answers.len(),
        });
    }
    Ok(response
        .answers
        .iter()
        .zip(expected)
        .filter(|(a, (_, want))| normalize_answer(a) != normalize_answer(want))
        .map(|(_, (q, _))| q.clone())
        .collect())
}

/// Ground truth needed to judge one generated image.
pub struct FilterInput<'a> {
    pub image_path: &'a str,
    pub projected: &'a [[f64; 2]],
    pub visible: &'a [bool],
    pub format: SkeletonFormat,
    pub slots: &'a PromptSlots,
    /// Slot changed by the attribute, used by [`VqaScope::AttributeSlot`].
    pub attribute_slot: Option<Slot>,
    pub hints: Hints,
}

pub fn questions_for(input: &FilterInput<'_>, scope: VqaScope) -> Vec<(String, String)> {
    match (scope, input.attribute_slot) {
        (VqaScope::AttributeSlot, Some(slot)) => {
            vec![(slot.question(input.slots.get(slot)), "yes".into())]
        }
        _ => vqa_questions_for(input.slots),
    }
}

/// Keypoint check first; VQA only runs when it passes.
pub fn apply_filters(
    input: &FilterInput<'_>,
    services: &ServiceSet,
    config: &FilterConfig,
) -> Result<FilterVerdict, FilterError> {
    let mut verdict = FilterVerdict {
        pass: true,
        persons_detected: 1,
        ..FilterVerdict::default()
    };
    if config.keypoints {
        let detected = services.keypoints.detect(&KeypointRequest {
            protocol_version: PROTOCOL_VERSION,
            image_path: input.image_path.to_string(),
            skeleton: input.format.name().to_string(),
            hints: input.hints.clone(),
        })?;
        let check =
            keypoint_alignment_filter(&detected, input.projected, input.visible, input.format, config)?;
        verdict.keypoint_errors = check.errors;
        verdict.persons_detected = check.persons_detected;
        if !check.pass {
            verdict.pass = false;
            return Ok(verdict);
        }
    }
    if config.vqa {
        let expected = questions_for(input, config.vqa_scope);
        let response = services.vqa.answer(&VqaRequest {
            protocol_version: PROTOCOL_VERSION,
            image_path: input.image_path.to_string(),
            questions: expected.iter().map(|(q, _)| q.clone()).collect(),
            hints: input.hints.clone(),
        })?;
        verdict.vqa_checked = true;
        verdict.vqa_failures = vqa_filter(&response, &expected)?;
        verdict.pass = verdict.vqa_failures.is_empty();
    }
    Ok(verdict)
}
