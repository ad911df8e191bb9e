//! Contents of the files under `crates/core/fixtures`. The
//! `make_fixtures` example writes them; a test checks the shipped copies
//! still match.

use crate::body_model::{fixtures, write_body_model, Pose};
use crate::cond_render::{build_conditioning_bundle, image_io::encode_rgb_png, RenderConfig};
use crate::services::*;

pub const TOY_CORPUS_SIZE: usize = 1500;
pub const TOY_CORPUS_SEED: u64 = 0;

fn pretty<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("fixtures serialize");
    s.push('\n');
    s.into_bytes()
}

fn hints(role: Role) -> Hints {
    Hints {
        pose_id: Some("toy00042".into()),
        attribute_id: (role == Role::Attribute).then(|| "snow".into()),
        role: Some(role),
        attempt: Some(0),
    }
}

/// Request and response documents for every service, one file each.
pub fn wire_documents() -> Vec<(String, Vec<u8>)> {
    let image = "/data/work/images/toy00042/snow/a00.png".to_string();
    let prompt = "Photo, caucasian young male wearing a t-shirt in the city center at daytime snow";
    let generate = GenerateRequest {
        protocol_version: PROTOCOL_VERSION,
        prompt: prompt.into(),
        negative_prompt: String::new(),
        noise_seed: 1234567890123,
        conditioning: Conditioning {
            depth: ConditionRef::File {
                path: "/data/work/conditioning/toy00042/depth.png".into(),
            },
            semantic: ConditionRef::Zero,
            skeleton: ConditionRef::File {
                path: "/data/work/conditioning/toy00042/skeleton.png".into(),
            },
        },
        image_size: [512, 512],
        output_path: image.clone(),
        hints: hints(Role::Attribute),
    };
    let generate_resp = GenerateResponse {
        protocol_version: PROTOCOL_VERSION,
        image_path: image.clone(),
    };
    let estimate = EstimateRequest {
        protocol_version: PROTOCOL_VERSION,
        image_path: image.clone(),
        hints: hints(Role::Attribute),
    };
    let estimate_resp = EstimateResponse {
        protocol_version: PROTOCOL_VERSION,
        joints3d: vec![[0.0, 0.0, 3.2], [0.061, 0.09, 3.18], [-0.061, 0.09, 3.22]],
        joint_format: "smpl24".into(),
        confidence: Some(0.93),
    };
    let keypoints = KeypointRequest {
        protocol_version: PROTOCOL_VERSION,
        image_path: image.clone(),
        skeleton: "openpose18".into(),
        hints: hints(Role::Base),
    };
    let keypoints_resp = Keypoint2DResponse {
        protocol_version: PROTOCOL_VERSION,
        skeleton: "openpose18".into(),
        persons: vec![PersonKeypoints {
            keypoints: (0..18).map(|k| [200.0 + 4.0 * k as f64, 100.0 + 15.5 * k as f64]).collect(),
            confidence: (0..18).map(|k| if k == 14 { 0.0 } else { 0.8 }).collect(),
        }],
    };
    let vqa = VqaRequest {
        protocol_version: PROTOCOL_VERSION,
        image_path: image,
        questions: vec![
            "Is the person wearing a t-shirt?".into(),
            "Is it snow weather in the image?".into(),
        ],
        hints: hints(Role::Attribute),
    };
    let vqa_resp = VqaResponse {
        protocol_version: PROTOCOL_VERSION,
        answers: vec!["yes".into(), "Yes.".into()],
    };
    let error = ErrorResponse {
        protocol_version: PROTOCOL_VERSION,
        error: ErrorBody {
            code: ERROR_PROTOCOL_MISMATCH.into(),
            message: "expected protocol_version 1, got Some(2)".into(),
        },
    };
    let envelope = StdioEnvelope {
        service: ServiceKind::Vqa,
        request: serde_json::to_value(&vqa).expect("fixtures serialize"),
    };
    vec![
        ("wire/generate_request.json".into(), pretty(&generate)),
        ("wire/generate_response.json".into(), pretty(&generate_resp)),
        ("wire/estimate_request.json".into(), pretty(&estimate)),
        ("wire/estimate_response.json".into(), pretty(&estimate_resp)),
        ("wire/keypoints_request.json".into(), pretty(&keypoints)),
        ("wire/keypoints_response.json".into(), pretty(&keypoints_resp)),
        ("wire/vqa_request.json".into(), pretty(&vqa)),
        ("wire/vqa_response.json".into(), pretty(&vqa_resp)),
        ("wire/error_response.json".into(), pretty(&error)),
        ("wire/stdio_envelope.json".into(), pretty(&envelope)),
    ]
}

/// Skeleton map of the first toy corpus pose at 128x128.
pub fn golden_skeleton_png() -> Vec<u8> {
    let model = fixtures::humanoid();
    let corpus = fixtures::toy_corpus(1, TOY_CORPUS_SEED);
    let pose: &Pose = &corpus.poses[0];
    let config = RenderConfig {
        image_size: (128, 128),
        ..RenderConfig::default()
    };
    let bundle = build_conditioning_bundle(&model, pose, &config).expect("fixture pose renders");
    encode_rgb_png(&bundle.skeleton_map).expect("png encodes")
}

fn model_bytes(model: &crate::body_model::BodyModelData) -> Vec<u8> {
    let mut out = Vec::new();
    write_body_model(&mut out, model).expect("in-memory write");
    out
}

/// Every shipped fixture as (path relative to the fixtures directory, bytes).
pub fn all() -> Vec<(String, Vec<u8>)> {
    let mut files = vec![
        ("toy_2bone.stgm".to_string(), model_bytes(&fixtures::toy_two_bone())),
        ("humanoid.stgm".to_string(), model_bytes(&fixtures::humanoid())),
        (
            "toy_corpus.txt".to_string(),
            fixtures::toy_corpus(TOY_CORPUS_SIZE, TOY_CORPUS_SEED)
                .to_text()
                .into_bytes(),
        ),
        ("skeleton_golden.png".to_string(), golden_skeleton_png()),
    ];
    files.extend(wire_documents());
    files
}
