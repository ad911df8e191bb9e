//! JSON documents exchanged with the external model services.
//!
//! Every request and response carries `protocol_version`; a mismatch is a
//! hard error on both sides. Images travel as filesystem paths inside the
//! shared workspace, never inline.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::ServiceError;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "base")]
    Base,
    #[serde(rename = "att")]
    Attribute,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Base => "base",
            Role::Attribute => "att",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceKind {
    Generate,
    Estimate,
    Keypoints,
    Vqa,
}

impl ServiceKind {
    pub const ALL: [ServiceKind; 4] = [
        ServiceKind::Generate,
        ServiceKind::Estimate,
        ServiceKind::Keypoints,
        ServiceKind::Vqa,
    ];

    /// Path segment appended to an HTTP base URL.
    pub fn route(self) -> &'static str {
        match self {
            ServiceKind::Generate => "generate",
            ServiceKind::Estimate => "estimate",
            ServiceKind::Keypoints => "keypoints",
            ServiceKind::Vqa => "vqa",
        }
    }
}

/// Context the harness attaches to each call. Real backends may ignore it;
/// the mocks use it to look up oracle data.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hints {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempt: Option<u32>,
}

/// One conditioning image: a PNG path, or the all-background marker used
/// when the condition is switched off.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConditionRef {
    File { path: String },
    Zero,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Conditioning {
    pub depth: ConditionRef,
    pub semantic: ConditionRef,
    pub skeleton: ConditionRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub protocol_version: u32,
    pub prompt: String,
    pub negative_prompt: String,
    pub noise_seed: u64,
    pub conditioning: Conditioning,
    pub image_size: [u32; 2],
    /// Where the service must write the generated PNG.
    pub output_path: String,
    #[serde(default)]
    pub hints: Hints,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateResponse {
    pub protocol_version: u32,
    pub image_path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateRequest {
    pub protocol_version: u32,
    pub image_path: String,
    #[serde(default)]
    pub hints: Hints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateResponse {
    pub protocol_version: u32,
    /// Meters, camera frame.
    pub joints3d: Vec<[f64; 3]>,
    pub joint_format: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeypointRequest {
    pub protocol_version: u32,
    pub image_path: String,
    pub skeleton: String,
    #[serde(default)]
    pub hints: Hints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonKeypoints {
    /// Pixel coordinates, one entry per skeleton joint.
    pub keypoints: Vec<[f64; 2]>,
    /// Zero marks an undetected joint.
    pub confidence: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keypoint2DResponse {
    pub protocol_version: u32,
    pub skeleton: String,
    pub persons: Vec<PersonKeypoints>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VqaRequest {
    pub protocol_version: u32,
    pub image_path: String,
    pub questions: Vec<String>,
    #[serde(default)]
    pub hints: Hints,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VqaResponse {
    pub protocol_version: u32,
    pub answers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

/// Returned by a service instead of a response document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorResponse {
    pub protocol_version: u32,
    pub error: ErrorBody,
}

pub const ERROR_PROTOCOL_MISMATCH: &str = "protocol_version_mismatch";
pub const ERROR_BAD_REQUEST: &str = "bad_request";
pub const ERROR_INTERNAL: &str = "internal";

/// Line framing for subprocess backends: one envelope per line on stdin,
/// one response document per line on stdout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StdioEnvelope {
    pub service: ServiceKind,
    pub request: serde_json::Value,
}

/// Implemented by every document so transports can check versions generically.
pub trait WireMessage: Serialize + DeserializeOwned {
    fn protocol_version(&self) -> u32;
}

macro_rules! wire_message {
    ($($t:ty),*) => {$(
        impl WireMessage for $t {
            fn protocol_version(&self) -> u32 {
                self.protocol_version
            }
        }
    )*};
}
wire_message!(
    GenerateRequest,
    GenerateResponse,
    EstimateRequest,
    EstimateResponse,
    KeypointRequest,
    Keypoint2DResponse,
    VqaRequest,
    VqaResponse,
    ErrorResponse
);

/// Canonical serialization: compact JSON with fields in declaration order.
pub fn to_canonical<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("wire types serialize")
}

/// Parses a response body, surfacing service-side error documents and
/// version mismatches as typed errors.
pub fn parse_response<T: WireMessage>(endpoint: &str, body: &str) -> Result<T, ServiceError> {
    let value: serde_json::Value = serde_json::from_str(body).map_err(|e| ServiceError::Malformed {
        endpoint: endpoint.to_string(),
        reason: e.to_string(),
    })?;
    let version = value.get("protocol_version").and_then(|v| v.as_u64());
    match version {
        Some(v) if v == PROTOCOL_VERSION as u64 => {}
        Some(v) => {
            return Err(ServiceError::ProtocolMismatch {
                endpoint: endpoint.to_string(),
                got: v,
            })
        }
        None => {
            return Err(ServiceError::Malformed {
                endpoint: endpoint.to_string(),
                reason: "missing protocol_version".into(),
            })
        }
    }
    if value.get("error").is_some() {
        let err: ErrorResponse = serde_json::from_value(value).map_err(|e| ServiceError::Malformed {
            endpoint: endpoint.to_string(),
            reason: e.to_string(),
        })?;
        return Err(ServiceError::Remote {
            endpoint: endpoint.to_string(),
            code: err.error.code,
            message: err.error.message,
        });
    }
    serde_json::from_value(value).map_err(|e| ServiceError::Malformed {
        endpoint: endpoint.to_string(),
        reason: e.to_string(),
    })
}

/// Server-side counterpart of [`parse_response`].
pub fn parse_request<T: WireMessage>(body: &str) -> Result<T, ErrorResponse> {
    let err = |code: &str, message: String| ErrorResponse {
        protocol_version: PROTOCOL_VERSION,
        error: ErrorBody {
            code: code.to_string(),
            message,
        },
    };
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| err(ERROR_BAD_REQUEST, e.to_string()))?;
    match value.get("protocol_version").and_then(|v| v.as_u64()) {
        Some(v) if v == PROTOCOL_VERSION as u64 => {}
        other => {
            return Err(err(
                ERROR_PROTOCOL_MISMATCH,
                format!("expected protocol_version {PROTOCOL_VERSION}, got {other:?}"),
            ))
        }
    }
    serde_json::from_value(value).map_err(|e| err(ERROR_BAD_REQUEST, e.to_string()))
}
