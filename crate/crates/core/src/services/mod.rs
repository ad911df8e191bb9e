//! Clients for the four external models and deterministic stand-ins.

pub mod mocks;
mod transport;
pub mod wire;

pub use transport::{Endpoint, RemoteService, RetryPolicy};
pub use wire::*;

use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("transport failure talking to {endpoint} after {attempts} attempt(s): {reason}")]
    Transport {
        endpoint: String,
        attempts: u32,
        reason: String,
    },
    #[error("malformed response from {endpoint}: {reason}")]
    Malformed { endpoint: String, reason: String },
    #[error("{endpoint} speaks protocol version {got}, expected {}", wire::PROTOCOL_VERSION)]
    ProtocolMismatch { endpoint: String, got: u64 },
    #[error("{endpoint} returned error {code}: {message}")]
    Remote {
        endpoint: String,
        code: String,
        message: String,
    },
    #[error("mock service: {0}")]
    Mock(String),
    #[error("invalid endpoint {0:?}")]
    BadEndpoint(String),
}

pub trait Generator: Send + Sync {
    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, ServiceError>;
}

pub trait Estimator: Send + Sync {
    fn estimate(&self, req: &EstimateRequest) -> Result<EstimateResponse, ServiceError>;
}

pub trait KeypointDetector: Send + Sync {
    fn detect(&self, req: &KeypointRequest) -> Result<Keypoint2DResponse, ServiceError>;
}

pub trait VqaModel: Send + Sync {
    fn answer(&self, req: &VqaRequest) -> Result<VqaResponse, ServiceError>;
}

impl Generator for RemoteService {
    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, ServiceError> {
        self.call(ServiceKind::Generate, req)
    }
}

impl Estimator for RemoteService {
    fn estimate(&self, req: &EstimateRequest) -> Result<EstimateResponse, ServiceError> {
        self.call(ServiceKind::Estimate, req)
    }
}

impl KeypointDetector for RemoteService {
    fn detect(&self, req: &KeypointRequest) -> Result<Keypoint2DResponse, ServiceError> {
        self.call(ServiceKind::Keypoints, req)
    }
}

impl VqaModel for RemoteService {
    fn answer(&self, req: &VqaRequest) -> Result<VqaResponse, ServiceError> {
        self.call(ServiceKind::Vqa, req)
    }
}

#[derive(Clone)]
pub struct ServiceSet {
    pub generator: Arc<dyn Generator>,
    pub estimator: Arc<dyn Estimator>,
    pub keypoints: Arc<dyn KeypointDetector>,
    pub vqa: Arc<dyn VqaModel>,
}
